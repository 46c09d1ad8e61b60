from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from lunar_pnt.domain.errors import DomainError, FilterError
from lunar_pnt.domain.models import FilterEstimate, ObservationSet, ProcessModel, ScenarioConfig, StateIndexMap
from lunar_pnt.domain.policy import IterationPolicy, UpdateGate
from lunar_pnt.domain.scenario import Scenario
from lunar_pnt.domain.statespace import (
    ObservationModel,
    ProcessAssembler,
    build_index_map,
    effective_variances,
    prior_covariance,
)

logger = logging.getLogger(__name__)

JITTER = 1e-12


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def factor_innovation(S: np.ndarray, epoch: int = -1):
    """Cholesky of the innovation covariance, retried once with jitter."""
    try:
        return cho_factor(S, lower=True, check_finite=True)
    except (LinAlgError, ValueError):
        pass
    try:
        return cho_factor(S + JITTER * np.eye(S.shape[0]), lower=True, check_finite=True)
    except (LinAlgError, ValueError) as e:
        eig = float(np.min(np.linalg.eigvalsh(symmetrize(S)))) if np.all(np.isfinite(S)) else float("nan")
        raise FilterError("innovation covariance is not positive definite",
                          {"epoch": epoch, "min_eigenvalue": eig}) from e


def joseph_update(mean: np.ndarray, P: np.ndarray, H: np.ndarray, R: np.ndarray,
                  innovation: np.ndarray, S: np.ndarray, epoch: int = -1) -> FilterEstimate:
    """x + K nu with (I-KH) P (I-KH)^T + K R K^T; R may be a full matrix."""
    c = factor_innovation(S, epoch)
    K = cho_solve(c, H @ P).T
    IKH = np.eye(P.shape[0]) - K @ H
    cov = symmetrize(IKH @ P @ IKH.T + K @ R @ K.T)
    return FilterEstimate(mean + K @ innovation, cov, epoch)


def kf_predict(est: FilterEstimate, pm: ProcessModel) -> FilterEstimate:
    F = pm.transition
    if F.shape != est.cov.shape:
        raise DomainError("process model and estimate dimensions disagree")
    mean = F @ est.mean + pm.control
    cov = symmetrize(F @ est.cov @ F.T + pm.noise_cov)
    return FilterEstimate(mean, cov, est.epoch + 1)


def init_estimate(cfg: ScenarioConfig, imap: StateIndexMap, truth: Optional[np.ndarray] = None,
                  truth_map: Optional[StateIndexMap] = None,
                  rng: Optional[np.random.Generator] = None) -> FilterEstimate:
    """
    Prior mean: truth user states perturbed with the user prior (when a
    generator is given), zero biases. Covariance from prior_covariance.
    """
    P = prior_covariance(cfg, imap)
    mean = np.zeros(imap.dim)
    if truth is not None:
        src = truth_map or imap
        for dst, s in zip(imap.users, src.users):
            for a, b in ((dst.position, s.position), (dst.velocity, s.velocity), (dst.clock, s.clock)):
                if a is not None and b is not None:
                    mean[a] = truth[b]
        if rng is not None:
            user_idx = np.concatenate([np.r_[sl] for u in imap.users for sl in (u.position, u.velocity, u.clock)
                                       if sl is not None])
            std = np.sqrt(np.diag(P)[user_idx])
            mean[user_idx] += std * rng.standard_normal(user_idx.size)
    return FilterEstimate(mean, P, 0)


def nees(error: np.ndarray, cov: np.ndarray) -> float:
    """Normalised estimation error squared e^T P^-1 e."""
    c = cho_factor(symmetrize(cov), lower=True)
    return float(error @ cho_solve(c, error))


class NavigationFilter(ABC):
    name: str = "base"
    augmented: bool = True

    def __init__(self, cfg: ScenarioConfig, gate: UpdateGate = UpdateGate(),
                 iteration: IterationPolicy = IterationPolicy()):
        self.cfg = cfg
        self.gate = gate
        self.iteration = iteration
        self.imap = build_index_map(cfg, augmented=self.augmented)
        self.model = ObservationModel(self.imap)
        self.process: Optional[ProcessAssembler] = None
        self.skipped = 0

    def bind(self, scenario: Scenario) -> "NavigationFilter":
        self.process = ProcessAssembler(self.cfg, self.imap, scenario)
        return self

    def initialize(self, truth: Optional[np.ndarray] = None, truth_map: Optional[StateIndexMap] = None,
                   rng: Optional[np.random.Generator] = None) -> FilterEstimate:
        self.skipped = 0
        return init_estimate(self.cfg, self.imap, truth, truth_map, rng)

    def predict(self, est: FilterEstimate) -> FilterEstimate:
        if self.process is None:
            raise RuntimeError(f"{self.name}: bind() a scenario before predicting")
        return kf_predict(est, self.process.at(est.epoch + 1))

    def update(self, est: FilterEstimate, obs: ObservationSet) -> FilterEstimate:
        geom = obs.geometry
        if len(obs) == 0 or not self.gate.allows(geom.visible_sats, geom.visible_anchors):
            self.skipped += 1
            logger.debug("%s: update skipped at epoch %d (%d sats, %d anchors)",
                         self.name, obs.epoch, geom.visible_sats, geom.visible_anchors)
            return est
        R = np.diag(effective_variances(obs, self.cfg, self.imap))
        out = self._update(est, obs, R)
        out.epoch = obs.epoch
        return out

    def step(self, est: FilterEstimate, obs: ObservationSet) -> FilterEstimate:
        return self.update(self.predict(est), obs)

    @abstractmethod
    def _update(self, est: FilterEstimate, obs: ObservationSet, R: np.ndarray) -> FilterEstimate:
        raise NotImplementedError
