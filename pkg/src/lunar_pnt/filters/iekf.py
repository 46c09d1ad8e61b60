from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve

from lunar_pnt.domain.models import FilterEstimate, ObservationSet
from lunar_pnt.domain.statespace import ObservationModel
from lunar_pnt.filters.base import NavigationFilter, factor_innovation, joseph_update
from lunar_pnt.filters.ekf import ekf_update

logger = logging.getLogger(__name__)


def iekf_update(
    est: FilterEstimate,
    obs: ObservationSet,
    model: ObservationModel,
    R: np.ndarray,
    max_iter: int = 10,
    tol: float = 1e-4,
    position_index: Optional[np.ndarray] = None,
) -> FilterEstimate:
    """
    Relinearise about the latest iterate until the position part of the step
    drops below `tol`:

        x_n = x_pred + K_n (z - h(x_{n-1}) - H_n (x_pred - x_{n-1}))

    The first iterate is the EKF update; max_iter=1 returns exactly that.
    """
    if max_iter <= 1:
        return ekf_update(est, obs, model, R)

    x_pred, P = est.mean, est.cov
    z = np.asarray(obs.values)
    geom = obs.geometry
    idx = np.arange(x_pred.size) if position_index is None or position_index.size == 0 else position_index

    x_prev = x_pred
    H = S = nu = None
    for _ in range(max_iter):
        H = model.jacobian(x_prev, geom)
        S = H @ P @ H.T + R
        c = factor_innovation(S, obs.epoch)
        K = cho_solve(c, H @ P).T
        nu = z - model.predict(x_prev, geom) - H @ (x_pred - x_prev)
        x_new = x_pred + K @ nu
        done = float(np.linalg.norm(x_new[idx] - x_prev[idx])) < tol
        x_prev = x_new
        if done:
            break
    else:
        logger.debug("iekf: no convergence after %d iterations at epoch %d", max_iter, obs.epoch)

    return joseph_update(x_pred, P, H, R, nu, S, obs.epoch)


class AugmentedIekf(NavigationFilter):
    name = "iekf"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        pos = [np.r_[u.position] for u in self.imap.users if u.position is not None]
        self.position_index = np.concatenate(pos) if pos else np.zeros(0, dtype=int)

    def _update(self, est, obs, R):
        return iekf_update(est, obs, self.model, R, self.iteration.max_iter, self.iteration.tol,
                           self.position_index)
