from __future__ import annotations

from lunar_pnt.domain.models import ScenarioConfig
from lunar_pnt.domain.policy import IterationPolicy, UpdateGate

from lunar_pnt.filters.baseline import BaselineEkf
from lunar_pnt.filters.ekf import AugmentedEkf
from lunar_pnt.filters.ekf2 import AugmentedEkf2
from lunar_pnt.filters.iekf import AugmentedIekf


class FilterRegistry:
    def __init__(self, cfg: ScenarioConfig, gate: UpdateGate = UpdateGate(),
                 iteration: IterationPolicy = IterationPolicy()):
        self.cfg = cfg
        self.gate = gate
        self.iteration = iteration

    def get(self, name: str):
        n = (name or "").strip().lower()

        if n in ("baseline", "baseline_ekf", "standard", "wgn_ekf"):
            return BaselineEkf(self.cfg, self.gate, self.iteration)

        if n in ("ekf", "augmented_ekf", "aekf"):
            return AugmentedEkf(self.cfg, self.gate, self.iteration)

        if n in ("iekf", "augmented_iekf", "aiekf"):
            return AugmentedIekf(self.cfg, self.gate, self.iteration)

        if n in ("ekf2", "ekf-2", "augmented_ekf2", "second_order"):
            return AugmentedEkf2(self.cfg, self.gate, self.iteration)

        raise KeyError(f"Unknown filter: {name}. Available: baseline, ekf, iekf, ekf2")
