from __future__ import annotations

from typing import List, Tuple

import numpy as np

from lunar_pnt.domain.models import FilterEstimate, ObservationSet
from lunar_pnt.domain.statespace import ObservationModel, SparseHessian
from lunar_pnt.filters.base import NavigationFilter, joseph_update


def second_order_terms(hessians: List[SparseHessian], P: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean correction 1/2 tr(N_o P) per observation and the covariance term
    S_lm = 1/2 tr(N_l P N_m P), evaluated on the union of touched states.
    """
    n = len(hessians)
    touched = sorted({int(i) for h in hessians for i in h.index})
    corr = np.zeros(n)
    S2 = np.zeros((n, n))
    if not touched:
        return corr, S2

    pos = {s: k for k, s in enumerate(touched)}
    u = np.asarray(touched)
    Pu = P[np.ix_(u, u)]
    m = u.size
    Y = np.zeros((n, m, m))  # compact N_l P
    for o, h in enumerate(hessians):
        if h.index.size == 0:
            continue
        loc = np.array([pos[int(i)] for i in h.index])
        corr[o] = 0.5 * float(np.sum(h.block * P[np.ix_(h.index, h.index)]))
        Y[o, loc, :] = h.block @ Pu[loc, :]
    flat = Y.reshape(n, m * m)
    flat_t = np.swapaxes(Y, 1, 2).reshape(n, m * m)
    S2 = 0.5 * flat @ flat_t.T
    return corr, 0.5 * (S2 + S2.T)


def ekf2_update(est: FilterEstimate, obs: ObservationSet, model: ObservationModel, R: np.ndarray) -> FilterEstimate:
    x, P = est.mean, est.cov
    geom = obs.geometry
    H = model.jacobian(x, geom)
    corr, S2 = second_order_terms(model.hessians(x, geom), P)
    nu = np.asarray(obs.values) - (model.predict(x, geom) + corr)
    R2 = R + S2
    S = H @ P @ H.T + R2
    return joseph_update(x, P, H, R2, nu, S, obs.epoch)


class AugmentedEkf2(NavigationFilter):
    name = "ekf2"

    def _update(self, est, obs, R):
        return ekf2_update(est, obs, self.model, R)
