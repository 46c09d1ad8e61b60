"""
Two-ray ground-reflection channel and one-way time-of-flight ranging errors.

The reflected ray is weighted by the circular co-polar reflection coefficient of
the regolith. For every geometry the module can give the received power, the
ranging CRB, and the bias of the frequency-domain ML delay estimator that
the reflection causes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from lunar_pnt.domain.errors import DomainError
from lunar_pnt.domain.models import (
    BOLTZMANN,
    SPEED_OF_LIGHT,
    BiasCurve,
    GroundPermittivity,
    OfdmConfig,
    TwoRayGeometry,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def linear_reflection_coeffs(theta: ArrayLike, eps: GroundPermittivity) -> Tuple[ArrayLike, ArrayLike]:
    """Vertical and horizontal Fresnel coefficients (Gamma_v, Gamma_h) at incident angle theta."""
    th = np.asarray(theta, dtype=float)
    if np.any(th <= 0.0) or np.any(th > math.pi / 2 + 1e-12):
        raise DomainError(f"incident angle must lie in (0, pi/2], got {theta}")
    e = eps.value
    s = np.sin(th)
    root = np.sqrt(e - np.cos(th) ** 2 + 0j)
    gv = (e * s - root) / (e * s + root)
    gh = (s - root) / (s + root)
    if gv.ndim == 0:
        return complex(gv), complex(gh)
    return gv, gh


def reflection_coeff(theta: ArrayLike, eps: GroundPermittivity) -> ArrayLike:
    gv, gh = linear_reflection_coeffs(theta, eps)
    return (gv + gh) / 2.0


def two_ray_rx_power(
    geom: TwoRayGeometry,
    cfg: OfdmConfig,
    eps: GroundPermittivity,
    gamma_override: Optional[complex] = None,
) -> float:
    """Narrowband received power [W]; amplitude factor lambda/(2 pi d) on both rays."""
    d = geom.d
    if d == 0.0:
        raise DomainError("transmitter and receiver coincide (d = 0)")
    lam = cfg.wavelength
    gamma = reflection_coeff(geom.theta, eps) if gamma_override is None else complex(gamma_override)
    dphi = 2.0 * math.pi / lam * (geom.d_refl - d)
    amp = 1.0 / d + gamma * np.exp(-1j * dphi) / geom.d_refl
    return float(cfg.tx_power * (lam / (2.0 * math.pi)) ** 2 * abs(amp) ** 2)


def es_n0_from_power(p_rx: float, cfg: OfdmConfig) -> float:
    """Thermal-noise budget: Es/N0 = P_rx / (k_B T B NF)."""
    return p_rx / (BOLTZMANN * cfg.rx_temperature * cfg.bandwidth * cfg.noise_figure_linear)


def mean_square_bandwidth(cfg: OfdmConfig, indices: Optional[np.ndarray] = None) -> float:
    n = cfg.allocated_indices() if indices is None else np.asarray(indices, dtype=float)
    if n.size == 0:
        raise DomainError("no allocated subcarriers")
    return float(cfg.subcarrier_spacing ** 2 * np.mean(n ** 2))


def tof_crb(es_n0: float, msb: float) -> float:
    if not es_n0 > 0 or not msb > 0:
        raise DomainError(f"Es/N0 and mean square bandwidth must be > 0 (got {es_n0}, {msb})")
    return SPEED_OF_LIGHT ** 2 / (8.0 * math.pi ** 2 * es_n0 * msb)


def ranging_crb(
    geom: TwoRayGeometry,
    cfg: OfdmConfig,
    eps: GroundPermittivity,
    msb: Optional[float] = None,
    gamma_override: Optional[complex] = None,
) -> float:
    """Cooperative pseudorange variance [m^2] for one two-ray link."""
    p_rx = two_ray_rx_power(geom, cfg, eps, gamma_override)
    return tof_crb(es_n0_from_power(p_rx, cfg), mean_square_bandwidth(cfg) if msb is None else msb)


# ---------------------------------------------------------------------------
# ML delay estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DelaySearch:
    center: float  # m
    half_width: float  # m
    step: float  # m
    tol: float = 1e-9  # m
    refinement: str = "slope"  # slope | parabolic

    @classmethod
    def around(cls, center: float, cfg: OfdmConfig, half_width_s: float = 1.5e-6, **kw) -> "DelaySearch":
        """Coarse grid of c/(4B) over +-half_width_s around `center`."""
        return cls(center=center, half_width=SPEED_OF_LIGHT * half_width_s,
                   step=SPEED_OF_LIGHT / (4.0 * cfg.bandwidth), **kw)


def _path_response(freqs: np.ndarray, delay_m: float, amplitude: complex) -> np.ndarray:
    return amplitude * np.exp(-2j * math.pi * freqs * delay_m / SPEED_OF_LIGHT)


def delayed_spectrum(pilots: np.ndarray, delay_m: float, cfg: OfdmConfig) -> np.ndarray:
    """Noiseless LoS-only copy of `pilots` delayed by delay_m / c."""
    freqs = cfg.allocated_indices() * cfg.subcarrier_spacing
    return np.asarray(pilots) * _path_response(freqs, delay_m, 1.0)


def synthesize_two_ray_spectrum(
    geom: TwoRayGeometry,
    cfg: OfdmConfig,
    eps: GroundPermittivity,
    pilots: Optional[np.ndarray] = None,
    gamma_override: Optional[complex] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Noiseless frequency response of the LoS plus ground-reflected ray, applied to the pilots."""
    idx = cfg.allocated_indices()
    if pilots is None:
        pilots = np.ones(idx.size, dtype=complex)
    freqs = idx * cfg.subcarrier_spacing
    lam = cfg.wavelength
    d, d_refl = geom.d, geom.d_refl
    gamma = reflection_coeff(geom.theta, eps) if gamma_override is None else complex(gamma_override)

    los = (lam / (2.0 * math.pi * d)) * np.exp(-2j * math.pi * d / lam)
    refl = gamma * (lam / (2.0 * math.pi * d_refl)) * np.exp(-2j * math.pi * d_refl / lam)
    h = _path_response(freqs, d, los) + _path_response(freqs, d_refl, refl)
    return pilots * h, pilots


def ml_delay_estimate(
    rx_spectrum: np.ndarray,
    pilots: np.ndarray,
    cfg: OfdmConfig,
    search: DelaySearch,
) -> float:
    """
    Pseudorange [m] maximising |sum_n R(n) S*(n) exp(j 2 pi n f_sc rho / c)|.

    The coarse grid locates the main lobe. The peak is then refined either by
    a parabola through the three best grid points or by the root of the
    correlation slope d|C|^2/drho bracketed by the two neighbours.
    """
    rx = np.asarray(rx_spectrum, dtype=complex)
    s = np.asarray(pilots, dtype=complex)
    idx = cfg.allocated_indices()
    if rx.shape != s.shape or rx.size != idx.size:
        raise DomainError("rx_spectrum and pilots must cover the allocated subcarriers")
    if not search.half_width > 0 or not search.step > 0:
        raise DomainError("empty search window")

    k = 2.0 * math.pi * idx * cfg.subcarrier_spacing / SPEED_OF_LIGHT
    w = rx * np.conj(s)

    n_grid = int(round(2.0 * search.half_width / search.step)) + 1
    rho = search.center + np.linspace(-search.half_width, search.half_width, n_grid)
    mags = np.abs(np.exp(1j * np.outer(rho, k)) @ w)
    i = int(np.argmax(mags))
    if i == 0 or i == n_grid - 1:
        raise DomainError(
            f"correlation peak on the search-window edge at {rho[i]:.3f} m; "
            f"widen the window around {search.center:.3f} m"
        )

    def parabolic() -> float:
        y0, y1, y2 = mags[i - 1], mags[i], mags[i + 1]
        denom = y0 - 2.0 * y1 + y2
        shift = 0.0 if denom == 0 else 0.5 * (y0 - y2) / denom
        return float(rho[i] + shift * (rho[1] - rho[0]))

    if search.refinement == "parabolic":
        return parabolic()

    def slope(x: float) -> float:
        e = np.exp(1j * k * x)
        c = np.sum(w * e)
        dc = np.sum(w * 1j * k * e)
        return float(np.real(np.conj(c) * dc))

    a, b = rho[i - 1], rho[i + 1]
    ga, gb = slope(a), slope(b)
    if ga == 0.0:
        return float(a)
    if gb == 0.0:
        return float(b)
    if ga * gb > 0:
        return parabolic()
    return float(brentq(slope, a, b, xtol=search.tol))


# ---------------------------------------------------------------------------
# Bias curves
# ---------------------------------------------------------------------------

def default_bias_grid(start: float = 1.0, stop: float = 1000.0, num: int = 2000) -> np.ndarray:
    return np.geomspace(start, stop, num)


def simulate_bias_curve(
    h_tx: float,
    h_rx: float,
    d_h_grid: np.ndarray,
    cfg: OfdmConfig,
    eps: GroundPermittivity,
    gamma_override: Optional[complex] = None,
) -> BiasCurve:
    grid = np.asarray(d_h_grid, dtype=float)
    if grid.size < 3:
        raise DomainError("bias curve needs at least 3 grid points for finite differences")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise DomainError("d_h grid must be strictly ascending and > 0")

    msb = mean_square_bandwidth(cfg)
    bias = np.empty_like(grid)
    crb = np.empty_like(grid)
    dist = np.empty_like(grid)
    for n, d_h in enumerate(grid):
        geom = TwoRayGeometry(h_tx, h_rx, float(d_h))
        rx, pilots = synthesize_two_ray_spectrum(geom, cfg, eps, gamma_override=gamma_override)
        est = ml_delay_estimate(rx, pilots, cfg, DelaySearch.around(geom.d, cfg))
        dist[n] = geom.d
        bias[n] = est - geom.d
        crb[n] = ranging_crb(geom, cfg, eps, msb=msb, gamma_override=gamma_override)

    deriv = np.gradient(bias, dist)
    logger.debug("bias curve h_tx=%.1f h_rx=%.1f: %d points, max |bias| %.3f m",
                 h_tx, h_rx, grid.size, float(np.max(np.abs(bias))))
    return BiasCurve(d_h_grid=grid, bias=bias, bias_derivative=deriv, crb=crb)


def mse_bound(curve: BiasCurve) -> np.ndarray:
    b = np.asarray(curve.bias)
    g = np.asarray(curve.bias_derivative)
    crb = np.asarray(curve.crb)
    return crb + b ** 2 + crb * (2.0 * g + g ** 2)


def bias_curve_frame(curve: BiasCurve) -> pd.DataFrame:
    return pd.DataFrame({
        "d_h_m": curve.d_h_grid,
        "bias_m": curve.bias,
        "bias_deriv": curve.bias_derivative,
        "crb_m2": curve.crb,
        "mse_bound_m2": mse_bound(curve),
    })
