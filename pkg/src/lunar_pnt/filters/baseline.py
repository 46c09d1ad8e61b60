from __future__ import annotations

from typing import Optional

import numpy as np

from lunar_pnt.domain.models import FilterEstimate, ObservationSet, ScenarioConfig, StateIndexMap
from lunar_pnt.domain.statespace import ObservationModel, effective_variances
from lunar_pnt.filters.base import NavigationFilter
from lunar_pnt.filters.ekf import ekf_update


def baseline_ekf_update(est: FilterEstimate, obs: ObservationSet, cfg: ScenarioConfig, imap: StateIndexMap,
                        model: Optional[ObservationModel] = None, R: Optional[np.ndarray] = None) -> FilterEstimate:
    """EKF on user states only; every bias enters R as white noise with its stationary variance."""
    if R is None:
        R = np.diag(effective_variances(obs, cfg, imap))
    return ekf_update(est, obs, ObservationModel(imap) if model is None else model, R)


class BaselineEkf(NavigationFilter):
    name = "baseline"
    augmented = False

    def _update(self, est, obs, R):
        return baseline_ekf_update(est, obs, self.cfg, self.imap, self.model, R)
