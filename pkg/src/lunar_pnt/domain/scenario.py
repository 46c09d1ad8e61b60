"""
Scenario generation: lunar satellite orbits, south-pole site geometry, link
budget and tracking-loop noise, user trajectories and clocks.

User states live in a site-local East-North-Up frame that rotates with the
Moon; satellite states are rotated into it per epoch.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from lunar_pnt.domain.errors import DomainError, NumericalError
from lunar_pnt.domain.gmp import process_step
from lunar_pnt.domain.models import (
    BOLTZMANN,
    LUNAR_SIDEREAL_DAY,
    SPEED_OF_LIGHT,
    ClockModel,
    KeplerianElements,
    LinkBudget,
    SatelliteSpec,
    ScenarioConfig,
    Site,
    UserSpec,
)

logger = logging.getLogger(__name__)

MOON_ROTATION_RATE = 2.0 * math.pi / LUNAR_SIDEREAL_DAY
_OMEGA = np.array([0.0, 0.0, MOON_ROTATION_RATE])


# ---------------------------------------------------------------------------
# Orbits
# ---------------------------------------------------------------------------

def _rotation_z(angle: Union[float, np.ndarray]) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    z, o = np.zeros_like(c), np.ones_like(c)
    return np.moveaxis(np.array([[c, -s, z], [s, c, z], [z, z, o]]), [0, 1], [-2, -1])


def _perifocal_to_inertial(el: KeplerianElements) -> np.ndarray:
    co, so = math.cos(el.raan), math.sin(el.raan)
    cw, sw = math.cos(el.arg_periapsis), math.sin(el.arg_periapsis)
    ci, si = math.cos(el.inclination), math.sin(el.inclination)
    return np.array([
        [co * cw - so * sw * ci, -co * sw - so * cw * ci, so * si],
        [so * cw + co * sw * ci, -so * sw + co * cw * ci, -co * si],
        [sw * si, cw * si, ci],
    ])


def solve_kepler(mean_anomaly, e: float, tol: float = 1e-12, max_iter: int = 50):
    M = np.asarray(mean_anomaly, dtype=float)
    E = np.where(e < 0.8, M, math.pi * np.ones_like(M))
    for _ in range(max_iter):
        dE = (E - e * np.sin(E) - M) / (1.0 - e * np.cos(E))
        E = E - dE
        if np.max(np.abs(dE)) < tol:
            return E
    raise NumericalError("Kepler's equation did not converge", {"e": e, "max_dE": float(np.max(np.abs(dE)))})


def propagate_orbit(elements: KeplerianElements, t) -> Tuple[np.ndarray, np.ndarray]:
    """Two-body position [m] and velocity [m/s] in the Moon-centred inertial frame at time(s) t [s]."""
    el = elements
    if not 0.0 <= el.eccentricity < 1.0:
        raise DomainError(f"hyperbolic or parabolic orbit (e={el.eccentricity})")
    t = np.asarray(t, dtype=float)
    n = el.mean_motion
    e = el.eccentricity
    E = solve_kepler(el.mean_anomaly_epoch + n * t, e)
    cE, sE = np.cos(E), np.sin(E)
    b = math.sqrt(1.0 - e * e)
    r_pf = el.semi_major_axis * np.stack([cE - e, b * sE, np.zeros_like(E)], axis=-1)
    vfac = n * el.semi_major_axis / (1.0 - e * cE)
    v_pf = np.stack([-vfac * sE, vfac * b * cE, np.zeros_like(E)], axis=-1)
    R = _perifocal_to_inertial(el)
    return r_pf @ R.T, v_pf @ R.T


# ---------------------------------------------------------------------------
# Site geometry
# ---------------------------------------------------------------------------

def site_position(site: Site) -> np.ndarray:
    """Site position in the Moon-fixed frame."""
    cl = math.cos(site.latitude)
    return site.radius * np.array([cl * math.cos(site.longitude), cl * math.sin(site.longitude), math.sin(site.latitude)])


def enu_basis(site: Site) -> np.ndarray:
    """Rows are the East, North, Up unit vectors expressed in the Moon-fixed frame."""
    sp, cp = math.sin(site.latitude), math.cos(site.latitude)
    sl, cl = math.sin(site.longitude), math.cos(site.longitude)
    return np.array([
        [-sl, cl, 0.0],
        [-sp * cl, -sp * sl, cp],
        [cp * cl, cp * sl, sp],
    ])


def inertial_to_fixed(pos, vel, t) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform lunar rotation about the inertial z axis; velocity relative to the rotating frame."""
    Rt = np.swapaxes(_rotation_z(MOON_ROTATION_RATE * np.asarray(t, dtype=float)), -1, -2)
    p = np.einsum("...ij,...j->...i", Rt, pos)
    v = np.einsum("...ij,...j->...i", Rt, vel) - np.cross(_OMEGA, p)
    return p, v


@dataclass(frozen=True)
class SiteGeometry:
    elevation: np.ndarray
    range: np.ndarray
    range_rate: np.ndarray
    visible: np.ndarray


def site_geometry(site: Site, sat_state: Tuple[np.ndarray, np.ndarray], t, elevation_mask: float = math.radians(5.0)) -> SiteGeometry:
    pos, vel = sat_state
    p, v = inertial_to_fixed(pos, vel, t)
    rel = p - site_position(site)
    rng = np.linalg.norm(rel, axis=-1)
    los = rel / rng[..., None]
    up = enu_basis(site)[2]
    elev = np.arcsin(np.clip(los @ up, -1.0, 1.0))
    rate = np.sum(v * los, axis=-1)
    return SiteGeometry(elevation=elev, range=rng, range_rate=rate, visible=elev > elevation_mask)


def satellite_enu_state(site: Site, sat_state: Tuple[np.ndarray, np.ndarray], t) -> Tuple[np.ndarray, np.ndarray]:
    """Satellite position/velocity in the rotating site ENU frame (origin on the ground at the site)."""
    p, v = inertial_to_fixed(sat_state[0], sat_state[1], t)
    E = enu_basis(site)
    return (p - site_position(site)) @ E.T, v @ E.T


# ---------------------------------------------------------------------------
# Link budget and tracking noise
# ---------------------------------------------------------------------------

def cn0(elevation, range_m, lb: LinkBudget):
    """C/N0 [dB-Hz]: EIRP - FSPL + G(el) - 10 log10(k T), clamped to [cn0_floor, cn0_ceiling]."""
    el = np.asarray(elevation, dtype=float)
    r = np.asarray(range_m, dtype=float)
    fspl = 20.0 * np.log10(4.0 * math.pi * r * lb.carrier_freq / SPEED_OF_LIGHT)
    gain = lb.rx_gain_zenith - lb.gain_rolloff * np.cos(el) ** 2
    value = lb.eirp - fspl + gain - 10.0 * math.log10(BOLTZMANN * lb.system_noise_temp)
    out = np.clip(value, lb.cn0_floor, lb.cn0_ceiling)
    return float(out) if out.ndim == 0 else out


def dll_fll_variances(cn0_dbhz, lb: LinkBudget):
    """Thermal-noise variances of the code (m^2) and frequency (m^2/s^2) loops."""
    c = 10.0 ** (np.asarray(cn0_dbhz, dtype=float) / 10.0)
    ti, d = lb.coherent_integration, lb.early_late_spacing
    with np.errstate(divide="ignore"):
        dll = (SPEED_OF_LIGHT / lb.chip_rate) ** 2 * (lb.dll_bandwidth * d / (2.0 * c)) \
            * (1.0 + 2.0 / (ti * c * (2.0 - d)))
        f = lb.carrier_freq if lb.fll_frequency == "carrier" else lb.chip_rate
        fll = SPEED_OF_LIGHT ** 2 / (4.0 * math.pi ** 2 * ti ** 2 * f ** 2) \
            * (4.0 * lb.fll_bandwidth / c) * (1.0 + 1.0 / (ti * c))
    if np.ndim(dll) == 0:
        return float(dll), float(fll)
    return dll, fll


# ---------------------------------------------------------------------------
# Users and clocks
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    positions: np.ndarray  # (K+1, 3) ENU
    velocities: np.ndarray  # (K+1, 3), or (K+1, 0) without velocity states
    controls: np.ndarray  # velocity increment applied at each epoch, same width as velocities


def generate_trajectory(spec: UserSpec, T: float, duration: float) -> Trajectory:
    """
    Waypoint following at constant speed. A step that would overshoot a
    waypoint ends on it instead, so corners and the path end are hit exactly.
    """
    if not T > 0:
        raise DomainError("step must be > 0")
    K = int(round(duration / T))
    start = spec.start
    if not spec.moving:
        pos = np.repeat(start[None, :], K + 1, axis=0)
        empty = np.zeros((K + 1, 0))
        return Trajectory(pos, empty, empty.copy())

    targets = [np.array([w[0], w[1]], dtype=float) for w in spec.waypoints]
    if spec.loop and targets:
        targets.append(start[:2].copy())
    pos = np.empty((K + 1, 3))
    vel = np.zeros((K + 1, 3))
    p = start[:2].copy()
    step_len = spec.speed * T
    ti = 0
    for k in range(K + 1):
        pos[k, :2] = p
        pos[k, 2] = start[2]
        v = np.zeros(2)
        skipped = 0
        while targets and (spec.loop or ti < len(targets)) and skipped <= len(targets):
            delta = targets[ti % len(targets)] - p
            r = float(np.hypot(delta[0], delta[1]))
            if r <= 1e-12:
                ti += 1
                skipped += 1
                continue
            if r > step_len:
                v = spec.speed * delta / r
            else:
                v = delta / T
                ti += 1
            break
        vel[k, :2] = v
        p = p + T * v

    ctrl = np.zeros_like(vel)
    ctrl[1:] = vel[1:] - vel[:-1]
    return Trajectory(pos, vel, ctrl)


def clock_noise_cov(model: ClockModel, T: float) -> np.ndarray:
    """Clock-state noise in range units, (c delta, c delta_dot)."""
    s1, s2 = model.phase_psd, model.freq_psd
    return SPEED_OF_LIGHT ** 2 * np.array([
        [s1 * T + s2 * T ** 3 / 3.0, s2 * T ** 2 / 2.0],
        [s2 * T ** 2 / 2.0, s2 * T],
    ])


def clock_step(model: ClockModel, state, T: float, rng: np.random.Generator):
    if not T > 0:
        raise DomainError("step must be > 0")
    F = np.array([[1.0, T], [0.0, 1.0]])
    return process_step(F, clock_noise_cov(model, T), state, rng)


# ---------------------------------------------------------------------------
# Default constellation and the precomputed scenario
# ---------------------------------------------------------------------------

def default_constellation(
    semi_major_axis: float = 6540e3,
    eccentricity: float = 0.6,
    inclination_deg: float = 56.2,
    arg_periapsis_deg: float = 90.0,
    raan_deg: Sequence[float] = (0.0, 90.0, 180.0, 270.0),
    mean_anomaly_deg: Sequence[float] = (180.0, 195.0, 210.0, 225.0),
) -> Tuple[SatelliteSpec, ...]:
    """Frozen elliptical orbits with apolune over the south pole; anomalies bunched so coverage swings 0..4."""
    sats = []
    for n, (raan, m0) in enumerate(zip(raan_deg, mean_anomaly_deg)):
        el = KeplerianElements(
            semi_major_axis=semi_major_axis,
            eccentricity=eccentricity,
            inclination=math.radians(inclination_deg),
            raan=math.radians(raan),
            arg_periapsis=math.radians(arg_periapsis_deg),
            mean_anomaly_epoch=math.radians(m0),
        )
        sats.append(SatelliteSpec(name=f"SAT{n + 1}", elements=el))
    return tuple(sats)


@dataclass
class Scenario:
    """Deterministic per-epoch geometry shared by every trial of a campaign."""
    times: np.ndarray
    sat_position: np.ndarray  # (S, K+1, 3) ENU
    sat_velocity: np.ndarray  # (S, K+1, 3) ENU
    elevation: np.ndarray  # (S, K+1)
    range: np.ndarray  # (S, K+1)
    cn0: np.ndarray  # (S, K+1) dB-Hz
    visible: np.ndarray  # (S, K+1) bool
    trajectories: List[Trajectory]

    @property
    def visible_count(self) -> np.ndarray:
        return self.visible.sum(axis=0) if self.visible.size else np.zeros(self.times.size, dtype=int)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    times = cfg.times
    S, N = len(cfg.satellites), times.size
    sat_p = np.zeros((S, N, 3))
    sat_v = np.zeros((S, N, 3))
    elev = np.zeros((S, N))
    rng = np.zeros((S, N))
    for j, sat in enumerate(cfg.satellites):
        state = propagate_orbit(sat.elements, times)
        geo = site_geometry(cfg.site, state, times, cfg.link_budget.elevation_mask)
        sat_p[j], sat_v[j] = satellite_enu_state(cfg.site, state, times)
        elev[j], rng[j] = geo.elevation, geo.range
    visible = elev > cfg.link_budget.elevation_mask
    c = cn0(elev, rng, cfg.link_budget) if S else np.zeros((0, N))
    trajectories = [generate_trajectory(u, cfg.step, cfg.duration) for u in cfg.users]
    counts = visible.sum(axis=0) if S else np.zeros(N, dtype=int)
    logger.info("scenario: %d epochs, %d satellites, visible %d..%d", N, S,
                int(counts.min()) if N else 0, int(counts.max()) if N else 0)
    return Scenario(times, sat_p, sat_v, elev, rng, c, visible, trajectories)
