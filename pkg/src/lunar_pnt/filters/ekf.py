from __future__ import annotations

import numpy as np

from lunar_pnt.domain.models import FilterEstimate, ObservationSet
from lunar_pnt.domain.statespace import ObservationModel
from lunar_pnt.filters.base import NavigationFilter, joseph_update


def ekf_update(est: FilterEstimate, obs: ObservationSet, model: ObservationModel, R: np.ndarray) -> FilterEstimate:
    """Jacobian at the predicted mean, Joseph-form covariance."""
    x = est.mean
    H = model.jacobian(x, obs.geometry)
    nu = np.asarray(obs.values) - model.predict(x, obs.geometry)
    S = H @ est.cov @ H.T + R
    return joseph_update(x, est.cov, H, R, nu, S, obs.epoch)


class AugmentedEkf(NavigationFilter):
    name = "ekf"

    def _update(self, est, obs, R):
        return ekf_update(est, obs, self.model, R)
