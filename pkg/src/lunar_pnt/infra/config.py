from __future__ import annotations

import copy
import json
import logging
import math
import os
from typing import Any, Dict, List, Optional, Tuple

import yaml

from lunar_pnt.domain.errors import ConfigError, DomainError
from lunar_pnt.domain.models import (
    BiasKind,
    CampaignConfig,
    ClockModel,
    Cooperation,
    Gmp1Params,
    GroundPermittivity,
    KeplerianElements,
    LinkBudget,
    MismatchConfig,
    ModelSet,
    OfdmConfig,
    Priors,
    SatBiasModel,
    SatelliteSpec,
    ScenarioConfig,
    Site,
    UserKind,
    UserSpec,
)
from lunar_pnt.domain.policy import IterationPolicy, UpdateGate
from lunar_pnt.infra.cache import JsonResultCache, config_digest
from lunar_pnt.infra.waypoints import load_waypoints_csv

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# reference_defaults profile
DEFAULT_CONFIG: Dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "paths": {
        "out_dir": "runs",
        "cache_dir": "cache",
    },
    "runtime": {
        "log_level": "WARNING",
    },
    "tworay": {
        "carrier_freq_hz": 2.0e9,
        "bandwidth_hz": 10.0e6,
        "fft_len": 1024,
        "allocated_subcarriers": 922,
        "tx_power_w": 0.1,
        "noise_figure_db": 5.0,
        "temperature_k": 290.0,
        "permittivity": [3.95, -0.25],
    },
    "coop_fit": {
        "heights_tx_m": [6.0, 10.0],
        "heights_rx_m": [1.0, 2.0],
        "fit_min_m": 10.0,
        "fit_max_m": 200.0,
        "fit_step_m": 0.1,
        "v_min_mps": 0.1,
        "v_max_mps": 1.0,
        "curve_grid": {"start_m": 1.0, "stop_m": 1000.0, "num": 2000},
        "force_gamma_zero": False,
    },
    "scenario": {
        "site": {"latitude_deg": -89.45, "longitude_deg": 222.69},
        "timing": {"step_s": 1.0, "start_h": 3.0, "duration_h": 2.0, "full_horizon_h": 12.0},
        "constellation": {
            "semi_major_axis_km": 6540.0,
            "eccentricity": 0.6,
            "inclination_deg": 56.2,
            "arg_periapsis_deg": 90.0,
            "raan_deg": [0.0, 90.0, 180.0, 270.0],
            "mean_anomaly_deg": [180.0, 195.0, 210.0, 225.0],
        },
        "link_budget": {
            "eirp_dbw": 10.9,
            "rx_gain_zenith_dbi": 0.0,
            "gain_rolloff_db": 3.5,
            "system_noise_temp_k": 290.0,
            "elevation_mask_deg": 5.0,
            "chip_rate_hz": 2.046e6,
            "dll_bandwidth_hz": 0.5,
            "fll_bandwidth_hz": 2.0,
            "coherent_integration_s": 0.02,
            "early_late_spacing_chips": 0.25,
            "carrier_freq_hz": 2492.028e6,
            "cn0_floor_dbhz": 31.0,
            "cn0_ceiling_dbhz": 45.0,
            "fll_frequency": "carrier",
        },
        "sat_bias": {
            "kind": "gmp1",
            "tau_s": 18000.0,
            "sigma_range_m": {"average": 5.0, "worst": 10.0},
            "damping": 0.7,
        },
        "coop_bias": {
            "kind": "gmp1",
            "source": "table",  # table | fit
            "average": {"tau_s": 5.5, "sigma_m": 0.22},
            "worst": {"tau_s": 8.8, "sigma_m": 0.62},
        },
        "model_case": "average",
        "priors": {
            "position_std_m": 1000.0,
            "velocity_std_mps": 10.0,
            "clock_offset_std_s": 5e-6,
            "clock_drift_std": 100e-9,
            "bias_prior": "stationary",
        },
        "cooperation": "full",
        "coop_range_gate_m": 1000.0,
        "clock_coefficients": "psd",
        "users": [
            {"id": "R1", "kind": "moving_rover", "start": [50.0, 50.0], "antenna_height_m": 1.0, "speed_mps": 1.0,
             "waypoints": [[300.0, 50.0], [300.0, 300.0], [50.0, 300.0]], "loop": True, "sigma_v": 0.001,
             "clock": "ocxo"},
            {"id": "R2", "kind": "moving_rover", "start": [-50.0, 50.0], "antenna_height_m": 1.0, "speed_mps": 1.0,
             "waypoints": [[-50.0, 300.0], [-300.0, 300.0], [-300.0, 50.0]], "loop": True, "sigma_v": 0.001,
             "clock": "ocxo"},
            {"id": "R3", "kind": "moving_rover", "start": [-50.0, -50.0], "antenna_height_m": 1.0, "speed_mps": 1.0,
             "waypoints": [[-300.0, -50.0], [-300.0, -300.0], [-50.0, -300.0]], "loop": True, "sigma_v": 0.001,
             "clock": "ocxo"},
            {"id": "R4", "kind": "moving_rover", "start": [50.0, -50.0], "antenna_height_m": 1.0, "speed_mps": 1.0,
             "waypoints": [[50.0, -300.0], [300.0, -300.0], [300.0, -50.0]], "loop": True, "sigma_v": 0.001,
             "clock": "ocxo"},
            {"id": "R5", "kind": "moving_rover", "start": [0.0, 150.0], "antenna_height_m": 1.0, "speed_mps": 1.0,
             "waypoints": [[0.0, -150.0]], "loop": True, "sigma_v": 0.001, "clock": "ocxo"},
        ],
        "static_user": None,  # index into users that stays put
        "reference_station": {
            "enabled": False,
            "id": "REF",
            "start": [0.0, 0.0],
            "antenna_height_m": 6.0,
            "clock": "rubidium",
        },
    },
    "filters": {
        "names": ["baseline", "ekf", "iekf", "ekf2"],
        "iekf_max_iter": 10,
        "iekf_tol_m": 1e-4,
        "min_sources": 3,
    },
    "campaign": {
        "case": "hybrid",
        "trials": 100,
        "seed": 0,
        "workers": 1,
        "log_decimation": 10,
        "divergence_policy": "include",
        "divergence_threshold_m": 1.0e4,
        "bcrb_samples": 0,
        "mismatch": {"truth": "average", "filter": "worst"},
    },
    "checks": {
        "coop_fit_rel_tol": 0.2,
        "coop_fit_average": {"tau_s": 5.5, "sigma_m": 0.22},
        "coop_fit_worst": {"tau_s": 8.8, "sigma_m": 0.62},
        "cn0_range_dbhz": [31.0, 45.0],
        "bcrb_rel_tol": 0.2,
        "iekf_ekf2_rel_tol": 0.1,
        "baseline_divergence_rate": 0.5,
        "iekf_beats_ekf_fraction": 0.8,
        "sub_meter_m": 1.0,
    },
}

BOUNDS_CASES = ("sise_models", "sat_vs_hybrid", "reference_station")
SIMULATE_CASES = ("hybrid", "hybrid_static", "reference_station", "mismatch", "mismatch_reference")


def _deep_merge(a: Dict[str, Any], b: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(a)
    for k, v in b.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)  # type: ignore[arg-type]
        else:
            out[k] = v
    return out


def load_config(path: Optional[str], default_cfg: Dict[str, Any] = DEFAULT_CONFIG) -> Dict[str, Any]:
    """
    Read .yaml/.yml or .json and deep-merge it over the defaults. A missing
    path yields the defaults; a file that does not hold a mapping is an error.
    """
    if not path or not os.path.exists(path):
        if path:
            logger.warning("config %s not found, using built-in defaults", path)
        return copy.deepcopy(default_cfg)

    with open(path, "r", encoding="utf-8") as f:
        try:
            if path.endswith((".yaml", ".yml")):
                user_cfg = yaml.safe_load(f)
            else:
                user_cfg = json.load(f)
        except (yaml.YAMLError, json.JSONDecodeError) as e:
            raise ConfigError("<file>", f"cannot parse {path}: {e}") from e

    if user_cfg is None:
        return copy.deepcopy(default_cfg)
    if not isinstance(user_cfg, dict):
        raise ConfigError("<root>", f"{path} must contain a mapping")
    return _deep_merge(copy.deepcopy(default_cfg), user_cfg)


def write_config_template(path: str, default_cfg: Dict[str, Any] = DEFAULT_CONFIG, overwrite: bool = False) -> bool:
    """Writes the defaults as YAML (or JSON for .json). Returns False if the file exists and is kept."""
    if os.path.exists(path) and not overwrite:
        return False

    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        if path.endswith((".yaml", ".yml")):
            yaml.safe_dump(default_cfg, f, default_flow_style=False, sort_keys=False)
        else:
            json.dump(default_cfg, f, indent=2)
    return True


def resolve_paths(cfg: Dict[str, Any], root: str) -> Dict[str, Any]:
    out = dict(cfg)
    paths = dict(out.get("paths", {}) or {})
    for key, fallback in (("out_dir", "runs"), ("cache_dir", "cache")):
        p = paths.get(key, fallback)
        if not os.path.isabs(p):
            p = os.path.join(root, p)
        paths[key] = os.path.normpath(p)
    out["paths"] = paths
    return out


# ---------------------------------------------------------------------------
# field helpers
# ---------------------------------------------------------------------------

def _get(section: Dict[str, Any], key: str, path: str):
    if not isinstance(section, dict) or key not in section:
        raise ConfigError(f"{path}.{key}", "missing")
    return section[key]


def _num(section: Dict[str, Any], key: str, path: str, positive: bool = False, nonneg: bool = False) -> float:
    v = _get(section, key, path)
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key}", f"must be a number, got {v!r}") from None
    if not math.isfinite(x):
        raise ConfigError(f"{path}.{key}", "must be finite")
    if positive and x <= 0:
        raise ConfigError(f"{path}.{key}", "must be > 0")
    if nonneg and x < 0:
        raise ConfigError(f"{path}.{key}", "must be >= 0")
    return x


def _int(section: Dict[str, Any], key: str, path: str, minimum: Optional[int] = None) -> int:
    v = _get(section, key, path)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(f"{path}.{key}", f"must be an integer, got {v!r}")
    if minimum is not None and int(v) < minimum:
        raise ConfigError(f"{path}.{key}", f"must be >= {minimum}")
    return int(v)


def _choice(section: Dict[str, Any], key: str, path: str, allowed) -> str:
    v = str(_get(section, key, path)).strip().lower()
    if v not in allowed:
        raise ConfigError(f"{path}.{key}", f"must be one of {', '.join(allowed)}, got {v!r}")
    return v


def _pair(v, path: str) -> Tuple[float, float]:
    try:
        a, b = v
        return float(a), float(b)
    except (TypeError, ValueError):
        raise ConfigError(path, f"must be a pair of numbers, got {v!r}") from None


def check_schema(cfg: Dict[str, Any]) -> None:
    v = cfg.get("schema_version")
    if v != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"must be {SCHEMA_VERSION}, got {v!r}")


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def ofdm_from_cfg(cfg: Dict[str, Any]) -> OfdmConfig:
    s, p = cfg.get("tworay", {}), "tworay"
    try:
        return OfdmConfig(
            carrier_freq=_num(s, "carrier_freq_hz", p, positive=True),
            bandwidth=_num(s, "bandwidth_hz", p, positive=True),
            fft_len=_int(s, "fft_len", p, minimum=1),
            allocated_subcarriers=_int(s, "allocated_subcarriers", p, minimum=1),
            tx_power=_num(s, "tx_power_w", p, positive=True),
            rx_noise_figure=_num(s, "noise_figure_db", p),
            rx_temperature=_num(s, "temperature_k", p, positive=True),
        )
    except DomainError as e:
        raise ConfigError(p, str(e)) from e


def permittivity_from_cfg(cfg: Dict[str, Any]) -> GroundPermittivity:
    re_, im = _pair(_get(cfg.get("tworay", {}), "permittivity", "tworay"), "tworay.permittivity")
    try:
        return GroundPermittivity(complex(re_, im))
    except DomainError as e:
        raise ConfigError("tworay.permittivity", str(e)) from e


def link_budget_from_cfg(cfg: Dict[str, Any]) -> LinkBudget:
    p = "scenario.link_budget"
    s = cfg.get("scenario", {}).get("link_budget", {})
    try:
        return LinkBudget(
            eirp=_num(s, "eirp_dbw", p),
            rx_gain_zenith=_num(s, "rx_gain_zenith_dbi", p),
            gain_rolloff=_num(s, "gain_rolloff_db", p, nonneg=True),
            system_noise_temp=_num(s, "system_noise_temp_k", p, positive=True),
            elevation_mask=math.radians(_num(s, "elevation_mask_deg", p, nonneg=True)),
            chip_rate=_num(s, "chip_rate_hz", p, positive=True),
            dll_bandwidth=_num(s, "dll_bandwidth_hz", p, positive=True),
            fll_bandwidth=_num(s, "fll_bandwidth_hz", p, positive=True),
            coherent_integration=_num(s, "coherent_integration_s", p, positive=True),
            early_late_spacing=_num(s, "early_late_spacing_chips", p, positive=True),
            carrier_freq=_num(s, "carrier_freq_hz", p, positive=True),
            cn0_floor=_num(s, "cn0_floor_dbhz", p),
            cn0_ceiling=_num(s, "cn0_ceiling_dbhz", p),
            fll_frequency=_choice(s, "fll_frequency", p, ("carrier", "chip")),
        )
    except DomainError as e:
        raise ConfigError(p, str(e)) from e


def sat_bias_from_cfg(cfg: Dict[str, Any], case: str = "average") -> SatBiasModel:
    p = "scenario.sat_bias"
    s = cfg.get("scenario", {}).get("sat_bias", {})
    kind = _choice(s, "kind", p, tuple(k.value for k in BiasKind))
    sig = _get(s, "sigma_range_m", p)
    sigma = _num(sig, case, f"{p}.sigma_range_m", nonneg=True) if isinstance(sig, dict) else _num(s, "sigma_range_m", p, nonneg=True)
    try:
        return SatBiasModel.from_range_std(BiasKind(kind), _num(s, "tau_s", p, positive=True), sigma,
                                           damping=_num(s, "damping", p))
    except DomainError as e:
        raise ConfigError(p, str(e)) from e


def _fitted_coop_params(cfg: Dict[str, Any], case: str) -> Optional[Gmp1Params]:
    cache_dir = cfg.get("paths", {}).get("cache_dir", "cache")
    cache = JsonResultCache(os.path.join(cache_dir, "coop_fit.json"))
    rec = cache.get(coop_fit_key(cfg))
    if not rec or case not in rec:
        return None
    return Gmp1Params.from_record(rec[case])


def coop_fit_key(cfg: Dict[str, Any]) -> str:
    return config_digest({"tworay": cfg.get("tworay"), "coop_fit": cfg.get("coop_fit")})


def coop_bias_from_cfg(cfg: Dict[str, Any], case: str = "average") -> Tuple[BiasKind, Gmp1Params]:
    p = "scenario.coop_bias"
    s = cfg.get("scenario", {}).get("coop_bias", {})
    kind = _choice(s, "kind", p, ("gmp1", "wgn"))
    source = _choice(s, "source", p, ("table", "fit"))
    if source == "fit":
        fitted = _fitted_coop_params(cfg, case)
        if fitted is not None:
            return BiasKind(kind), fitted
        logger.warning("no cached coop fit for this config; using the %s table values (run fit-coop first)", case)
    row = _get(s, case, p)
    sigma = _num(row, "sigma_m", f"{p}.{case}", nonneg=True)
    try:
        return BiasKind(kind), Gmp1Params(tau=_num(row, "tau_s", f"{p}.{case}", positive=True), sigma2=sigma ** 2)
    except DomainError as e:
        raise ConfigError(f"{p}.{case}", str(e)) from e


def _clock_from(v, path: str, coefficients: str) -> ClockModel:
    try:
        if isinstance(v, str):
            name = v.strip().lower()
            if name == "ocxo":
                return ClockModel.ocxo(coefficients=coefficients)
            if name == "rubidium":
                return ClockModel.rubidium(coefficients=coefficients)
            raise ConfigError(path, f"unknown clock {v!r} (ocxo, rubidium or a mapping)")
        if isinstance(v, dict):
            return ClockModel(
                sigma_c1=_num(v, "sigma_c1", path, nonneg=True),
                sigma_c2=_num(v, "sigma_c2", path, nonneg=True),
                initial_offset=float(v.get("initial_offset_s", 0.0)),
                initial_drift=float(v.get("initial_drift", 0.0)),
                coefficients=coefficients,
            )
    except DomainError as e:
        raise ConfigError(path, str(e)) from e
    raise ConfigError(path, f"unsupported clock entry {v!r}")


def _user_from(u: Dict[str, Any], path: str, coefficients: str, root: str) -> UserSpec:
    if not isinstance(u, dict):
        raise ConfigError(path, "must be a mapping")
    kind = _choice(u, "kind", path, tuple(k.value for k in UserKind))
    waypoints: List[Tuple[float, float]] = []
    if u.get("waypoints_csv"):
        wp = u["waypoints_csv"]
        wp = wp if os.path.isabs(wp) else os.path.join(root, wp)
        try:
            waypoints = load_waypoints_csv(wp)
        except (OSError, ValueError) as e:
            raise ConfigError(f"{path}.waypoints_csv", str(e)) from e
    else:
        for n, w in enumerate(u.get("waypoints", []) or []):
            waypoints.append(_pair(w, f"{path}.waypoints[{n}]"))
    speed = float(u.get("speed_mps", 0.0))
    if kind == UserKind.MOVING_ROVER.value and waypoints and speed <= 0:
        raise ConfigError(f"{path}.speed_mps", "must be > 0 for a moving rover with waypoints")
    try:
        return UserSpec(
            id=str(_get(u, "id", path)),
            kind=UserKind(kind),
            initial_position=_pair(_get(u, "start", path), f"{path}.start"),
            clock=_clock_from(u.get("clock", "ocxo"), f"{path}.clock", coefficients),
            antenna_height=float(u.get("antenna_height_m", 1.0)),
            waypoints=tuple(waypoints) if kind == UserKind.MOVING_ROVER.value else (),
            speed=speed if kind == UserKind.MOVING_ROVER.value else 0.0,
            loop=bool(u.get("loop", False)),
            sigma_v=float(u.get("sigma_v", 0.001)) if kind == UserKind.MOVING_ROVER.value else 0.0,
        )
    except DomainError as e:
        raise ConfigError(path, str(e)) from e


def users_from_cfg(cfg: Dict[str, Any], root: str = ".") -> Tuple[UserSpec, ...]:
    sc = cfg.get("scenario", {})
    coefficients = _choice(sc, "clock_coefficients", "scenario", ("psd", "std"))
    raw = _get(sc, "users", "scenario")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("scenario.users", "must be a non-empty list")
    raw = [dict(u) for u in raw]

    static = sc.get("static_user")
    if static is not None:
        if not isinstance(static, int) or not 0 <= static < len(raw):
            raise ConfigError("scenario.static_user", f"must index scenario.users, got {static!r}")
        raw[static]["kind"] = UserKind.STATIC_USER.value

    users = [_user_from(u, f"scenario.users[{n}]", coefficients, root) for n, u in enumerate(raw)]
    ref = sc.get("reference_station", {}) or {}
    if ref.get("enabled"):
        spec = dict(ref)
        spec["kind"] = UserKind.REFERENCE_STATION.value
        users.append(_user_from(spec, "scenario.reference_station", coefficients, root))
    ids = [u.id for u in users]
    if len(set(ids)) != len(ids):
        raise ConfigError("scenario.users", "user ids must be unique")
    return tuple(users)


def satellites_from_cfg(cfg: Dict[str, Any]) -> Tuple[SatelliteSpec, ...]:
    p = "scenario.constellation"
    s = cfg.get("scenario", {}).get("constellation", {})
    raan = _get(s, "raan_deg", p)
    m0 = _get(s, "mean_anomaly_deg", p)
    if len(raan) != len(m0):
        raise ConfigError(f"{p}.mean_anomaly_deg", "must have one entry per raan_deg entry")
    out = []
    for n, (o, m) in enumerate(zip(raan, m0)):
        try:
            el = KeplerianElements(
                semi_major_axis=_num(s, "semi_major_axis_km", p, positive=True) * 1e3,
                eccentricity=_num(s, "eccentricity", p, nonneg=True),
                inclination=math.radians(_num(s, "inclination_deg", p)),
                raan=math.radians(float(o)),
                arg_periapsis=math.radians(_num(s, "arg_periapsis_deg", p)),
                mean_anomaly_epoch=math.radians(float(m)),
            )
        except DomainError as e:
            raise ConfigError(f"{p}[{n}]", str(e)) from e
        out.append(SatelliteSpec(name=f"SAT{n + 1}", elements=el))
    return tuple(out)


def priors_from_cfg(cfg: Dict[str, Any]) -> Priors:
    p = "scenario.priors"
    s = cfg.get("scenario", {}).get("priors", {})
    return Priors(
        position_std=_num(s, "position_std_m", p, positive=True),
        velocity_std=_num(s, "velocity_std_mps", p, positive=True),
        clock_offset_std=_num(s, "clock_offset_std_s", p, positive=True),
        clock_drift_std=_num(s, "clock_drift_std", p, positive=True),
        bias_prior=_choice(s, "bias_prior", p, ("stationary", "one_step_noise")),
    )


def scenario_from_cfg(cfg: Dict[str, Any], root: str = ".", case: Optional[str] = None) -> ScenarioConfig:
    check_schema(cfg)
    sc = cfg.get("scenario", {})
    case = case or _choice(sc, "model_case", "scenario", ("average", "worst"))
    t = sc.get("timing", {})
    step = _num(t, "step_s", "scenario.timing", positive=True)
    duration = _num(t, "duration_h", "scenario.timing", nonneg=True) * 3600.0
    if abs(round(duration / step) * step - duration) > 1e-9 * max(1.0, duration):
        raise ConfigError("scenario.timing.duration_h", "must be a multiple of step_s")
    site = sc.get("site", {})
    coop_kind, coop_params = coop_bias_from_cfg(cfg, case)
    try:
        return ScenarioConfig(
            site=Site(latitude=math.radians(_num(site, "latitude_deg", "scenario.site")),
                      longitude=math.radians(_num(site, "longitude_deg", "scenario.site"))),
            satellites=satellites_from_cfg(cfg),
            users=users_from_cfg(cfg, root),
            link_budget=link_budget_from_cfg(cfg),
            sat_bias_model=sat_bias_from_cfg(cfg, case),
            coop_bias_params=coop_params,
            step=step,
            duration=duration,
            start_time=_num(t, "start_h", "scenario.timing", nonneg=True) * 3600.0,
            priors=priors_from_cfg(cfg),
            cooperation=Cooperation(_choice(sc, "cooperation", "scenario", tuple(c.value for c in Cooperation))),
            coop_bias_kind=coop_kind,
            coop_range_gate=_num(sc, "coop_range_gate_m", "scenario", positive=True),
            ofdm=ofdm_from_cfg(cfg),
            permittivity=permittivity_from_cfg(cfg),
        )
    except DomainError as e:
        raise ConfigError("scenario", str(e)) from e


def policies_from_cfg(cfg: Dict[str, Any]) -> Tuple[UpdateGate, IterationPolicy]:
    p = "filters"
    s = cfg.get("filters", {})
    gate = UpdateGate(min_sources=_int(s, "min_sources", p, minimum=0))
    it = IterationPolicy(max_iter=_int(s, "iekf_max_iter", p, minimum=1), tol=_num(s, "iekf_tol_m", p, positive=True))
    return gate, it


def campaign_from_cfg(cfg: Dict[str, Any], root: str = ".", mismatch: bool = False) -> CampaignConfig:
    p = "campaign"
    s = cfg.get("campaign", {})
    f = cfg.get("filters", {})
    names = _get(f, "names", "filters")
    if not isinstance(names, list) or not names:
        raise ConfigError("filters.names", "must be a non-empty list")
    known = ("baseline", "ekf", "iekf", "ekf2")
    for n, name in enumerate(names):
        if str(name).lower() not in known:
            raise ConfigError(f"filters.names[{n}]", f"unknown filter {name!r} (available: {', '.join(known)})")
    gate, iteration = policies_from_cfg(cfg)

    mm = None
    if mismatch:
        m = s.get("mismatch", {}) or {}
        truth_case = _choice(m, "truth", f"{p}.mismatch", ("average", "worst"))
        filter_case = _choice(m, "filter", f"{p}.mismatch", ("average", "worst"))
        mm = MismatchConfig(
            truth=ModelSet(sat_bias_from_cfg(cfg, truth_case), coop_bias_from_cfg(cfg, truth_case)[1]),
            filter=ModelSet(sat_bias_from_cfg(cfg, filter_case), coop_bias_from_cfg(cfg, filter_case)[1]),
        )
    try:
        return CampaignConfig(
            scenario=scenario_from_cfg(cfg, root),
            filters=tuple(str(n).lower() for n in names),
            trials=_int(s, "trials", p, minimum=1),
            seed=_int(s, "seed", p, minimum=0),
            log_decimation=_int(s, "log_decimation", p, minimum=1),
            mismatch=mm,
            divergence_policy=_choice(s, "divergence_policy", p, ("include", "exclude")),
            divergence_threshold=_num(s, "divergence_threshold_m", p, positive=True),
            workers=_int(s, "workers", p, minimum=1),
            iekf_max_iter=iteration.max_iter,
            iekf_tol=iteration.tol,
            bcrb_samples=_int(s, "bcrb_samples", p, minimum=0),
            min_sources=gate.min_sources,
        )
    except DomainError as e:
        raise ConfigError(p, str(e)) from e


# ---------------------------------------------------------------------------
# CLI overrides and case presets
# ---------------------------------------------------------------------------

def apply_cli_overrides(cfg: Dict[str, Any], args) -> Dict[str, Any]:
    """Fold --seed/--trials/--full-horizon/--workers into a copy of the config."""
    out = copy.deepcopy(cfg)
    camp = out.setdefault("campaign", {})
    if getattr(args, "seed", None) is not None:
        if int(args.seed) < 0:
            raise ConfigError("--seed", "must be >= 0")
        camp["seed"] = int(args.seed)
    if getattr(args, "trials", None) is not None:
        if int(args.trials) < 1:
            raise ConfigError("--trials", "must be >= 1")
        camp["trials"] = int(args.trials)
    if getattr(args, "workers", None) is not None:
        camp["workers"] = int(args.workers)
    if getattr(args, "full_horizon", False):
        timing = out.setdefault("scenario", {}).setdefault("timing", {})
        timing["start_h"] = 0.0
        timing["duration_h"] = float(timing.get("full_horizon_h", 12.0))
    return out


def _with(cfg: Dict[str, Any], **scenario_changes) -> Dict[str, Any]:
    out = copy.deepcopy(cfg)
    sc = out.setdefault("scenario", {})
    for k, v in scenario_changes.items():
        if isinstance(v, dict) and isinstance(sc.get(k), dict):
            sc[k] = _deep_merge(sc[k], v)
        else:
            sc[k] = copy.deepcopy(v)
    return out


def case_variants(cfg: Dict[str, Any], case: str) -> Dict[str, Dict[str, Any]]:
    """
    Named scenario variants behind each case study, all derived from one base
    config so that every curve is reproducible from the manifest.
    """
    sc = cfg.get("scenario", {})
    users = list(sc.get("users", []))
    ref_on = {"enabled": True}
    ref_off = {"enabled": False}

    if case == "sise_models":
        base = _with(cfg, users=users[:1], static_user=None, reference_station=ref_off, cooperation="none")
        return {k: _with(base, sat_bias={"kind": k}) for k in ("wgn", "gmp1", "igmp1", "gmp2")}

    if case == "sat_vs_hybrid":
        base = _with(cfg, reference_station=ref_off, static_user=None)
        return {
            "satellite": _with(base, cooperation="none"),
            "hybrid": _with(base, cooperation="full"),
            "hybrid_static": _with(base, cooperation="full", static_user=0),
        }

    if case == "reference_station":
        base = _with(cfg, users=users[:4], static_user=None)
        return {
            "satellite": _with(base, reference_station=ref_off, cooperation="none"),
            "differential": _with(base, reference_station=ref_on, cooperation="none"),
            "differential_ranging": _with(base, reference_station=ref_on, cooperation="anchor_broadcast"),
            "hybrid": _with(base, reference_station=ref_on, cooperation="full"),
        }

    if case in ("hybrid", "mismatch"):
        return {case: _with(cfg, reference_station=ref_off, static_user=None, cooperation="full")}
    if case == "hybrid_static":
        return {case: _with(cfg, reference_station=ref_off, static_user=0, cooperation="full")}
    if case in ("reference_station_sim", "mismatch_reference"):
        return {case: _with(cfg, users=users[:4], static_user=None, reference_station=ref_on, cooperation="full")}

    raise ConfigError("--case", f"unknown case {case!r}")


def simulate_variant(cfg: Dict[str, Any], case: str) -> Tuple[Dict[str, Any], bool]:
    """(scenario config for a simulate case, whether it is a mismatch run)."""
    if case not in SIMULATE_CASES:
        raise ConfigError("--case", f"unknown simulate case {case!r} (available: {', '.join(SIMULATE_CASES)})")
    key = "reference_station_sim" if case == "reference_station" else case
    variant = next(iter(case_variants(cfg, key).values()))
    return variant, case.startswith("mismatch")


def validate_config(cfg: Dict[str, Any], root: str = ".") -> None:
    """Builds every domain object once so that problems surface before any output is written."""
    check_schema(cfg)
    ofdm_from_cfg(cfg)
    permittivity_from_cfg(cfg)
    policies_from_cfg(cfg)
    campaign_from_cfg(cfg, root, mismatch=True)
