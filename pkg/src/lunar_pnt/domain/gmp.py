"""
Gauss-Markov bias processes.

GMP-1 models the cooperative pseudorange bias and (as a pair) the satellite
range/rate bias; IGMP-1 integrates the rate bias; GMP-2 is the damped
second-order process. Also home to the sample-ACF fitting pipeline that turns
simulated bias curves into GMP-1 parameters.
"""
from __future__ import annotations

import logging
import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import expm, solve_discrete_lyapunov
from scipy.optimize import least_squares

from lunar_pnt.domain.errors import ApproximationError, DomainError, FitError
from lunar_pnt.domain.models import AcfEstimate, BiasKind, Domain, Gmp1Params, SatBiasModel

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# GMP-1
# ---------------------------------------------------------------------------

def gmp1_discretize(p: Gmp1Params, T: float) -> Tuple[float, float]:
    if not T > 0:
        raise DomainError(f"step must be > 0, got {T}")
    if p.domain != Domain.TIME:
        raise DomainError("gmp1_discretize needs time-domain parameters")
    alpha = math.exp(-T / p.tau)
    q = -p.sigma2 * math.expm1(-2.0 * T / p.tau)
    return alpha, q


def gmp1_acf(p: Gmp1Params, lag):
    return p.sigma2 * np.exp(-np.abs(lag) / p.tau)


def gmp1_psd(p: Gmp1Params, T: float, f):
    """Discrete-time PSD of the sampled GMP-1; f in [-1/(2T), 1/(2T)]."""
    f = np.asarray(f, dtype=float)
    if np.any(np.abs(f) > 1.0 / (2.0 * T) * (1 + 1e-12)):
        raise DomainError("frequency outside the Nyquist band")
    a = math.exp(-T / p.tau)
    num = p.sigma2 * T * (1.0 - a * a)
    out = num / (1.0 + a * a - 2.0 * a * np.cos(2.0 * math.pi * f * T))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# ACF estimation and fitting
# ---------------------------------------------------------------------------

def sample_acf(
    data: Sequence[float],
    spacing: Union[float, Sequence[float]],
    max_lag: Optional[int] = None,
    domain: Domain = Domain.TIME,
) -> AcfEstimate:
    """
    Biased sample autocovariance (1/N normalisation, mean removed) at lags 0..L.
    `spacing` is either the grid step or the sample positions themselves.
    """
    x = np.asarray(data, dtype=float)
    n = x.size
    if n < 16:
        raise DomainError(f"sample ACF needs at least 16 samples, got {n}")

    if np.ndim(spacing) > 0:
        grid = np.asarray(spacing, dtype=float)
        if grid.size != n:
            raise DomainError("sample grid and data lengths differ")
        steps = np.diff(grid)
        if steps[0] <= 0 or not np.allclose(steps, steps[0], rtol=1e-6, atol=0.0):
            raise DomainError("sample ACF requires a uniform grid")
        step = float(steps[0])
    else:
        step = float(spacing)
        if not step > 0:
            raise DomainError("grid spacing must be > 0")

    L = n - 1 if max_lag is None else min(int(max_lag), n - 1)
    xc = x - x.mean()
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    spec = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(spec * np.conj(spec), nfft)[: L + 1] / n
    return AcfEstimate(lags=np.arange(L + 1) * step, acf=acov, windowed=False, domain=Domain(domain))


def taper_acf(est: AcfEstimate, support: Optional[int] = None) -> AcfEstimate:
    """Raised-cosine half window: 1 at lag 0, 0 from `support` on (default: half the lags)."""
    n = est.acf.size
    support = n // 2 if support is None else int(support)
    if support < 1 or support > n:
        raise DomainError(f"taper support must lie in [1, {n}], got {support}")
    k = np.arange(n)
    w = np.where(k < support, 0.5 * (1.0 + np.cos(math.pi * k / support)), 0.0)
    return AcfEstimate(lags=est.lags.copy(), acf=est.acf * w, windowed=True, support=support, domain=est.domain)


def fit_gmp1_acf(est: AcfEstimate, max_iter: int = 200, rtol: float = 1e-9) -> Gmp1Params:
    """
    Least-squares fit of sigma2 * exp(-lag / tau) to a windowed ACF over the
    lags inside the window support.
    """
    if not est.windowed:
        raise DomainError("fit_gmp1_acf expects a windowed ACF (see taper_acf)")
    n = est.acf.size if est.support is None else est.support
    lags = est.lags[: max(n, 2)]
    r = est.acf[: max(n, 2)]
    r0 = float(r[0])
    if not r0 > 0:
        raise FitError("ACF at lag 0 is not positive, nothing to fit", residual=float(np.sum(r ** 2)))

    below = np.nonzero(r < r0 / math.e)[0]
    tau0 = float(lags[below[0]]) if below.size else float(lags[-1])

    def residual(theta: np.ndarray) -> np.ndarray:
        return (theta[1] * np.exp(-lags / (theta[0] * tau0)) - r / r0)

    sol = least_squares(
        residual,
        x0=np.array([1.0, 1.0]),
        bounds=([1e-9, 0.0], [np.inf, np.inf]),
        method="trf",
        xtol=rtol,
        ftol=rtol,
        gtol=rtol,
        max_nfev=max_iter,
    )
    if sol.status <= 0:
        raise FitError(f"GMP-1 ACF fit did not converge: {sol.message}", residual=2.0 * sol.cost * r0 ** 2)
    tau, sigma2 = float(sol.x[0] * tau0), float(sol.x[1] * r0)
    logger.debug("GMP-1 fit: tau=%.4g sigma2=%.4g (%d evals)", tau, sigma2, sol.nfev)
    return Gmp1Params(tau=tau, sigma2=sigma2, domain=est.domain)


def combine_distance_to_time(
    fits: Sequence[Gmp1Params], v_min: float, v_max: float
) -> Tuple[Gmp1Params, Gmp1Params]:
    """Average-case and worst-case time-domain GMP-1 from distance-domain fits, returned as (avg, worst)."""
    if not fits:
        raise DomainError("no fits to combine")
    if any(f.domain != Domain.DISTANCE for f in fits):
        raise DomainError("combine_distance_to_time expects distance-domain fits")
    if not 0 < v_min <= v_max:
        raise DomainError(f"need 0 < v_min <= v_max, got {v_min}, {v_max}")

    td_min = min(f.tau for f in fits)
    td_max = max(f.tau for f in fits)
    s2_min = min(f.sigma2 for f in fits)
    s2_max = max(f.sigma2 for f in fits)

    tau_short = td_min / v_max
    tau_long = td_max / v_min
    worst = Gmp1Params(tau=math.sqrt(tau_short * tau_long),
                       sigma2=math.sqrt(tau_long / tau_short) * s2_max)
    avg = Gmp1Params(tau=(td_min + td_max) / (v_min + v_max), sigma2=(s2_min + s2_max) / 2.0)
    return avg, worst


def expand_velocity_sets(fits: Sequence[Gmp1Params], v_min: float, v_max: float) -> List[Gmp1Params]:
    """The individual time-domain sets (each fit at v_min and at v_max) that the worst case overbounds."""
    return [Gmp1Params(tau=f.tau / v, sigma2=f.sigma2) for f in fits for v in (v_min, v_max)]


# ---------------------------------------------------------------------------
# Satellite bias processes
# ---------------------------------------------------------------------------

def van_loan_discretize(A: np.ndarray, noise_intensity: np.ndarray, T: float) -> Tuple[np.ndarray, np.ndarray]:
    """Exact discretization of dx = A x dt + dw with E[dw dw^T] = noise_intensity dt."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    G = np.atleast_2d(np.asarray(noise_intensity, dtype=float))
    n = A.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = G
    M[n:, n:] = A.T
    E = expm(M * T)
    phi = E[n:, n:].T
    q = phi @ E[:n, n:]
    return phi, 0.5 * (q + q.T)


def igmp1_discretize(m: SatBiasModel, T: float) -> Tuple[np.ndarray, np.ndarray]:
    if m.kind != BiasKind.IGMP1:
        raise DomainError(f"igmp1_discretize called with {m.kind.value} model")
    if not T > 0:
        raise DomainError(f"step must be > 0, got {T}")
    if T >= m.tau / 10.0:
        raise ApproximationError(f"IGMP-1 noise approximation needs T < tau/10 (T={T}, tau={m.tau})")
    a = math.exp(-T / m.tau)
    F = np.array([[1.0, m.tau * (1.0 - a)], [0.0, a]])
    Q = (2.0 * m.sigma2_rate / m.tau) * np.array([[T ** 3 / 3.0, T ** 2 / 2.0], [T ** 2 / 2.0, T]])
    return F, Q


def gmp2_transition(tau: float, damping: float, T: float) -> np.ndarray:
    w = 1.0 / tau
    zw = damping * w
    beta = w * math.sqrt(1.0 - damping ** 2)
    c, s = math.cos(beta * T), math.sin(beta * T)
    return math.exp(-zw * T) * np.array([
        [c + zw / beta * s, s / beta],
        [-(w * w / beta) * s, c - zw / beta * s],
    ])


def gmp2_discretize(m: SatBiasModel, T: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Damped second-order process with natural frequency 1/tau. The white-noise
    intensity is chosen so the stationary range variance is sigma2_range, and
    the discrete noise is rescaled so the discrete stationary variance matches it.
    """
    if m.kind != BiasKind.GMP2:
        raise DomainError(f"gmp2_discretize called with {m.kind.value} model")
    if not T > 0:
        raise DomainError(f"step must be > 0, got {T}")
    w = 1.0 / m.tau
    A = np.array([[0.0, 1.0], [-w * w, -2.0 * m.damping * w]])
    intensity = np.array([[0.0, 0.0], [0.0, 4.0 * m.damping * w ** 3 * m.sigma2_range]])
    F = gmp2_transition(m.tau, m.damping, T)
    _, Q = van_loan_discretize(A, intensity, T)
    if m.sigma2_range > 0:
        P = solve_discrete_lyapunov(F, Q)
        scale = m.sigma2_range / P[0, 0] if P[0, 0] > 0 else float("nan")
        if math.isfinite(scale) and scale > 0:
            Q = Q * scale
        else:
            logger.warning("GMP-2 stationary rescale skipped (T=%g, tau=%g)", T, m.tau)
    return F, Q


def bias_transition(m: SatBiasModel, T: float) -> Tuple[np.ndarray, np.ndarray]:
    """(2x2 transition, 2x2 noise) of one satellite's (range bias, rate bias) pair."""
    if m.kind == BiasKind.GMP1:
        a_r, q_r = gmp1_discretize(Gmp1Params(m.tau, m.sigma2_range), T)
        _, q_v = gmp1_discretize(Gmp1Params(m.tau, m.sigma2_rate), T)
        return np.diag([a_r, a_r]), np.diag([q_r, q_v])
    if m.kind == BiasKind.IGMP1:
        return igmp1_discretize(m, T)
    if m.kind == BiasKind.GMP2:
        return gmp2_discretize(m, T)
    raise DomainError("white-noise bias model has no state transition")


def bias_stationary_covariance(m: SatBiasModel, T: float) -> np.ndarray:
    """
    Stationary covariance of the bias pair. The integrated process has none;
    its range/rate variances are used as the initial spread instead.
    """
    if m.kind == BiasKind.GMP2:
        F, Q = gmp2_discretize(m, T)
        return stationary_covariance(F, Q)
    return np.diag([m.sigma2_range, m.sigma2_rate])


def stationary_covariance(transition: np.ndarray, noise_cov: np.ndarray) -> np.ndarray:
    F = np.atleast_2d(np.asarray(transition, dtype=float))
    if np.max(np.abs(np.linalg.eigvals(F))) >= 1.0:
        raise DomainError("process is not stationary (transition spectral radius >= 1)")
    P = solve_discrete_lyapunov(F, np.atleast_2d(noise_cov))
    return 0.5 * (P + P.T)


def stationary_acf(transition: np.ndarray, noise_cov: np.ndarray, n_lags: int, component: int = 0) -> np.ndarray:
    """Model autocovariance of one state component at lags 0..n_lags-1 (in steps)."""
    F = np.atleast_2d(np.asarray(transition, dtype=float))
    P = stationary_covariance(F, noise_cov)
    out = np.empty(n_lags)
    M = P.copy()
    for k in range(n_lags):
        out[k] = M[component, component]
        M = F @ M
    return out


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------

def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric square-root factor L with L L^T = cov for a PSD (possibly singular) matrix."""
    C = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.allclose(C, C.T, rtol=1e-10, atol=1e-300):
        raise DomainError("noise covariance must be symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (C + C.T))
    if vals.size and vals.min() < -1e-9 * max(1.0, abs(vals.max())):
        raise DomainError(f"noise covariance is not positive semidefinite (min eig {vals.min():.3e})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def process_step(transition, noise_cov, state, rng: np.random.Generator):
    """
    x' = A x + u, u ~ N(0, noise_cov). The last axis of `state` is the state
    dimension; leading axes are independent ensemble members.
    """
    A = np.atleast_2d(np.asarray(transition, dtype=float))
    L = psd_sqrt(noise_cov)
    x = np.asarray(state, dtype=float)
    scalar = x.ndim == 0
    xv = x.reshape(1) if scalar else x
    if xv.shape[-1] != A.shape[1] or L.shape[0] != A.shape[0]:
        raise DomainError("transition, noise and state dimensions disagree")
    z = rng.standard_normal(xv.shape[:-1] + (L.shape[1],))
    out = xv @ A.T + z @ L.T
    return float(out[0]) if scalar else out
