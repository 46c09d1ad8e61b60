"""
Recursive Bayesian Cramer-Rao bound on the augmented state and the mean
position error bound derived from it.
"""
from __future__ import annotations

import logging
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from lunar_pnt.domain.errors import NumericalError
from lunar_pnt.domain.models import BimSequence, ObservationSet, ProcessModel, ScenarioConfig, StateIndexMap
from lunar_pnt.domain.policy import UpdateGate
from lunar_pnt.domain.scenario import Scenario, build_scenario
from lunar_pnt.domain.statespace import (
    ObservationModel,
    ProcessAssembler,
    TruthRecord,
    effective_variances,
    nominal_states,
    prior_covariance,
    simulate_truth,
)

logger = logging.getLogger(__name__)


def _spd_inverse(M: np.ndarray, what: str, epoch: int = -1) -> np.ndarray:
    M = 0.5 * (M + M.T)
    try:
        c = cho_factor(M, lower=True)
    except (LinAlgError, ValueError) as e:
        eig = float(np.min(np.linalg.eigvalsh(M))) if np.all(np.isfinite(M)) else float("nan")
        raise NumericalError(f"{what} is not positive definite", {"epoch": epoch, "min_eigenvalue": eig}) from e
    inv = cho_solve(c, np.eye(M.shape[0]))
    return 0.5 * (inv + inv.T)


def bcrb_init(cfg: ScenarioConfig, imap: StateIndexMap) -> np.ndarray:
    return _spd_inverse(prior_covariance(cfg, imap), "prior covariance", 0)


def bcrb_step(J_prev: np.ndarray, pm: ProcessModel, H: Optional[np.ndarray] = None,
              R: Optional[np.ndarray] = None, epoch: int = -1) -> np.ndarray:
    """J = (Q + F J_prev^-1 F^T)^-1 + H^T R^-1 H. H=None means no observation at this epoch."""
    F = pm.transition
    pred = F @ _spd_inverse(J_prev, "previous information", epoch) @ F.T + pm.noise_cov
    J = _spd_inverse(pred, "prediction covariance", epoch)
    if H is not None and H.size:
        R = np.atleast_1d(R)
        Rinv_H = H / R[:, None] if R.ndim == 1 else np.linalg.solve(R, H)
        J = J + H.T @ Rinv_H
    return 0.5 * (J + J.T)


def position_error_bound(J: Union[np.ndarray, BimSequence], imap: StateIndexMap):
    """
    sqrt of the mean over users with position states of tr(J^-1 position block).
    Given a BimSequence, returns its per-epoch series.
    """
    if isinstance(J, BimSequence):
        if J.information is None:
            return J.peb
        return np.array([position_error_bound(Jk, imap) for Jk in J.information])
    users = imap.position_users()
    if not users:
        return float("nan")
    C = _spd_inverse(J, "information")
    total = sum(float(np.trace(C[imap.users[i].position, imap.users[i].position])) for i in users)
    return float(np.sqrt(total / len(users)))


class BcrbRecursion:
    """
    Runs the bound along the noiseless truth (samples=0) or with the
    observation information averaged over `samples` simulated truths.
    """

    def __init__(self, cfg: ScenarioConfig, imap: StateIndexMap, scenario: Optional[Scenario] = None,
                 gate: UpdateGate = UpdateGate(), samples: int = 0, seed: int = 0):
        self.cfg = cfg
        self.imap = imap
        self.scenario = build_scenario(cfg) if scenario is None else scenario
        self.gate = gate
        self.samples = int(samples)
        self.seed = seed
        self.model = ObservationModel(imap)
        self.process = ProcessAssembler(cfg, imap, self.scenario)

    def _information(self, record: TruthRecord, obs: ObservationSet) -> Optional[np.ndarray]:
        geom = obs.geometry
        if len(obs) == 0 or not self.gate.allows(geom.visible_sats, geom.visible_anchors):
            return None
        H = self.model.jacobian(record.states[obs.epoch], geom)
        R = effective_variances(obs, self.cfg, self.imap)
        return H.T @ (H / R[:, None])

    def run(self, keep_matrices: bool = False, records: Optional[Sequence[TruthRecord]] = None) -> BimSequence:
        if records is None:
            if self.samples > 0:
                records = [simulate_truth(self.cfg, self.imap, self.scenario, seed=self.seed, trial=t)
                           for t in range(self.samples)]
            else:
                records = [nominal_states(self.cfg, self.imap, self.scenario)]
        K = self.cfg.n_epochs
        peb = np.empty(K + 1)
        mats = np.empty((K + 1, self.imap.dim, self.imap.dim)) if keep_matrices else None
        J = bcrb_init(self.cfg, self.imap)
        for k in range(K + 1):
            if k > 0:
                J = bcrb_step(J, self.process.at(k), epoch=k)
            terms = [self._information(r, r.observations[k]) for r in records]
            terms = [t for t in terms if t is not None]
            if terms:
                J = J + sum(terms) / len(terms)
                J = 0.5 * (J + J.T)
            peb[k] = position_error_bound(J, self.imap)
            if mats is not None:
                mats[k] = J
        visible = self.scenario.visible_count
        logger.info("bcrb: %d epochs, final peb %.3f m", K + 1, peb[-1])
        return BimSequence(epochs=np.arange(K + 1), peb=peb, visible_sats=np.asarray(visible),
                           final=J, information=mats)


def run_bcrb(cfg: ScenarioConfig, imap: StateIndexMap, scenario: Optional[Scenario] = None,
             gate: UpdateGate = UpdateGate(), samples: int = 0, seed: int = 0,
             keep_matrices: bool = False) -> BimSequence:
    return BcrbRecursion(cfg, imap, scenario, gate, samples, seed).run(keep_matrices)
