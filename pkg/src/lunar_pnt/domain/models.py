from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import constants

from lunar_pnt.domain.errors import DomainError

SPEED_OF_LIGHT = constants.c
BOLTZMANN = constants.k

MOON_MU = 4.9048695e12  # m^3/s^2
MOON_RADIUS = 1737.4e3  # m
LUNAR_SIDEREAL_DAY = 27.321661 * 86400.0  # s


class Domain(str, Enum):
    TIME = "time"
    DISTANCE = "distance"


class BiasKind(str, Enum):
    WGN = "wgn"
    GMP1 = "gmp1"
    IGMP1 = "igmp1"
    GMP2 = "gmp2"


class UserKind(str, Enum):
    MOVING_ROVER = "moving_rover"
    STATIC_USER = "static_user"
    REFERENCE_STATION = "reference_station"


class ObsType(str, Enum):
    SAT_PR = "sat_pr"
    SAT_PRR = "sat_prr"
    COOP_PR = "coop_pr"


class Cooperation(str, Enum):
    NONE = "none"
    ANCHOR_BROADCAST = "anchor_broadcast"  # reference stations transmit, users receive
    FULL = "full"


# ---------------------------------------------------------------------------
# Radio channel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundPermittivity:
    """Complex relative permittivity of the reflecting ground (lunar regolith by default)."""
    value: complex = 3.95 - 0.25j

    def __post_init__(self):
        v = complex(self.value)
        if not math.isfinite(v.real) or not math.isfinite(v.imag):
            raise DomainError(f"permittivity must be finite, got {v}")
        if v.real <= 1.0:
            raise DomainError(f"permittivity real part must be > 1, got {v.real}")
        object.__setattr__(self, "value", v)


@dataclass(frozen=True)
class TwoRayGeometry:
    h_tx: float
    h_rx: float
    d_h: float

    def __post_init__(self):
        if self.h_tx <= 0 or self.h_rx <= 0:
            raise DomainError(f"antenna heights must be > 0 (h_tx={self.h_tx}, h_rx={self.h_rx})")
        if self.d_h < 0:
            raise DomainError(f"horizontal distance must be >= 0, got {self.d_h}")

    @property
    def d(self) -> float:
        return math.hypot(self.h_tx - self.h_rx, self.d_h)

    @property
    def d_refl(self) -> float:
        return math.hypot(self.h_tx + self.h_rx, self.d_h)

    @property
    def theta(self) -> float:
        """Incident angle of the ground reflection, measured from the ground plane."""
        return math.atan2(self.h_tx + self.h_rx, self.d_h)


@dataclass(frozen=True)
class OfdmConfig:
    carrier_freq: float = 2.0e9
    bandwidth: float = 10.0e6
    fft_len: int = 1024
    allocated_subcarriers: int = 922
    tx_power: float = 0.1
    rx_noise_figure: float = 5.0  # dB
    rx_temperature: float = 290.0

    def __post_init__(self):
        if self.allocated_subcarriers > self.fft_len:
            raise DomainError("allocated_subcarriers must not exceed fft_len")
        if self.carrier_freq <= self.bandwidth:
            raise DomainError("carrier_freq must exceed bandwidth")
        if self.bandwidth <= 0 or self.fft_len <= 0 or self.tx_power <= 0 or self.rx_temperature <= 0:
            raise DomainError("bandwidth, fft_len, tx_power and rx_temperature must be > 0")
        if self.allocated_subcarriers < 0:
            raise DomainError("allocated_subcarriers must be >= 0")

    @property
    def subcarrier_spacing(self) -> float:
        return self.bandwidth / self.fft_len

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def noise_figure_linear(self) -> float:
        return 10.0 ** (self.rx_noise_figure / 10.0)

    def allocated_indices(self) -> np.ndarray:
        """
        Symmetric comb around DC. An even count skips DC (±1 … ±count/2),
        an odd count includes it.
        """
        n = int(self.allocated_subcarriers)
        half = n // 2
        pos = np.arange(1, half + 1)
        if n % 2:
            return np.concatenate([-pos[::-1], [0], pos]).astype(float)
        return np.concatenate([-pos[::-1], pos]).astype(float)


@dataclass
class BiasCurve:
    d_h_grid: np.ndarray
    bias: np.ndarray
    bias_derivative: np.ndarray
    crb: np.ndarray

    def __post_init__(self):
        n = len(self.d_h_grid)
        if not (len(self.bias) == len(self.bias_derivative) == len(self.crb) == n):
            raise DomainError("bias curve arrays must share the grid length")
        if np.any(np.asarray(self.crb) <= 0):
            raise DomainError("crb must be > 0 on the whole grid")


# ---------------------------------------------------------------------------
# Gauss-Markov processes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Gmp1Params:
    tau: float
    sigma2: float
    domain: Domain = Domain.TIME

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError(f"tau must be > 0, got {self.tau}")
        if self.sigma2 < 0:
            raise DomainError(f"sigma2 must be >= 0, got {self.sigma2}")
        object.__setattr__(self, "domain", Domain(self.domain))

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def to_record(self) -> Dict[str, Any]:
        return {"domain": self.domain.value, "tau": float(self.tau), "sigma2": float(self.sigma2)}

    @classmethod
    def from_record(cls, rec: Dict[str, Any]) -> "Gmp1Params":
        return cls(tau=float(rec["tau"]), sigma2=float(rec["sigma2"]), domain=Domain(rec.get("domain", "time")))


@dataclass(frozen=True)
class SatBiasModel:
    """Signal-in-space error process for one satellite (range bias + rate bias)."""
    kind: BiasKind
    tau: float
    sigma2_range: float
    sigma2_rate: float
    damping: float = 0.7

    def __post_init__(self):
        object.__setattr__(self, "kind", BiasKind(self.kind))
        if not self.tau > 0:
            raise DomainError(f"tau must be > 0, got {self.tau}")
        if self.sigma2_range < 0 or self.sigma2_rate < 0:
            raise DomainError("bias variances must be >= 0")
        if self.kind == BiasKind.GMP2 and not 0.0 < self.damping < 1.0:
            raise DomainError(f"GMP2 damping must lie in (0, 1), got {self.damping}")

    @classmethod
    def from_range_std(cls, kind: BiasKind, tau: float, sigma_range: float, damping: float = 0.7) -> "SatBiasModel":
        """Rate std follows the continuous-time relation sigma_rate = sigma_range / tau."""
        sigma_rate = sigma_range / tau
        return cls(kind=kind, tau=tau, sigma2_range=sigma_range ** 2, sigma2_rate=sigma_rate ** 2, damping=damping)

    @property
    def augmented(self) -> bool:
        return self.kind != BiasKind.WGN


@dataclass
class AcfEstimate:
    lags: np.ndarray
    acf: np.ndarray
    windowed: bool = False
    support: Optional[int] = None
    domain: Domain = Domain.DISTANCE

    def __post_init__(self):
        self.lags = np.asarray(self.lags, dtype=float)
        self.acf = np.asarray(self.acf, dtype=float)
        if self.lags.shape != self.acf.shape:
            raise DomainError("lags and acf must have the same length")
        if len(self.lags) == 0 or self.lags[0] != 0.0:
            raise DomainError("lags must start at 0")


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KeplerianElements:
    semi_major_axis: float
    eccentricity: float
    inclination: float
    raan: float
    arg_periapsis: float
    mean_anomaly_epoch: float
    gravitational_parameter: float = MOON_MU

    def __post_init__(self):
        if not 0.0 <= self.eccentricity < 1.0:
            raise DomainError(f"only elliptical orbits are supported (e={self.eccentricity})")
        if self.semi_major_axis * (1.0 - self.eccentricity) <= MOON_RADIUS:
            raise DomainError("periapsis radius must exceed the lunar radius")

    @property
    def mean_motion(self) -> float:
        return math.sqrt(self.gravitational_parameter / self.semi_major_axis ** 3)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.mean_motion


@dataclass(frozen=True)
class ClockModel:
    """
    Two-state clock (offset, drift). sigma_c1 [s] and sigma_c2 [1/s] carry the
    units of the white-frequency and random-walk-frequency spectral densities;
    with coefficients="psd" they enter the noise covariance directly, with
    coefficients="std" they are squared first.
    """
    sigma_c1: float
    sigma_c2: float
    initial_offset: float = 0.0
    initial_drift: float = 0.0
    coefficients: str = "psd"

    def __post_init__(self):
        if self.sigma_c1 < 0 or self.sigma_c2 < 0:
            raise DomainError("clock coefficients must be >= 0")
        if self.coefficients not in ("psd", "std"):
            raise DomainError(f"unknown clock coefficient reading: {self.coefficients}")

    @property
    def phase_psd(self) -> float:
        return self.sigma_c1 if self.coefficients == "psd" else self.sigma_c1 ** 2

    @property
    def freq_psd(self) -> float:
        return self.sigma_c2 if self.coefficients == "psd" else self.sigma_c2 ** 2

    @classmethod
    def ocxo(cls, **kw) -> "ClockModel":
        return cls(sigma_c1=2.52e-23, sigma_c2=3.03e-24, **kw)

    @classmethod
    def rubidium(cls, **kw) -> "ClockModel":
        return cls(sigma_c1=1.22e-23, sigma_c2=6.21e-28, **kw)


@dataclass(frozen=True)
class Site:
    latitude: float  # rad
    longitude: float  # rad
    radius: float = MOON_RADIUS


@dataclass(frozen=True)
class SatelliteSpec:
    """Satellite clock errors are carried by the signal-in-space bias states."""
    name: str
    elements: KeplerianElements


@dataclass(frozen=True)
class UserSpec:
    id: str
    kind: UserKind
    initial_position: Tuple[float, float]  # east, north (m)
    clock: ClockModel
    antenna_height: float = 1.0
    waypoints: Tuple[Tuple[float, float], ...] = ()
    speed: float = 0.0
    loop: bool = False
    sigma_v: float = 0.001  # m/s^1.5

    def __post_init__(self):
        object.__setattr__(self, "kind", UserKind(self.kind))
        if self.antenna_height <= 0:
            raise DomainError(f"user {self.id}: antenna height must be > 0")
        if self.speed < 0 or self.sigma_v < 0:
            raise DomainError(f"user {self.id}: speed and sigma_v must be >= 0")
        if self.kind == UserKind.MOVING_ROVER and self.waypoints and self.speed <= 0:
            raise DomainError(f"user {self.id}: a moving rover with waypoints needs speed > 0")

    @property
    def moving(self) -> bool:
        return self.kind == UserKind.MOVING_ROVER

    @property
    def pinned(self) -> bool:
        return self.kind == UserKind.REFERENCE_STATION

    @property
    def start(self) -> np.ndarray:
        return np.array([self.initial_position[0], self.initial_position[1], self.antenna_height], dtype=float)


@dataclass(frozen=True)
class LinkBudget:
    eirp: float = 10.9  # dBW
    rx_gain_zenith: float = 0.0  # dBi
    gain_rolloff: float = 3.5  # dB lost between zenith and horizon
    system_noise_temp: float = 290.0  # K
    elevation_mask: float = math.radians(5.0)
    chip_rate: float = 2.046e6
    dll_bandwidth: float = 0.5
    fll_bandwidth: float = 2.0
    coherent_integration: float = 0.02
    early_late_spacing: float = 0.25
    carrier_freq: float = 2492.028e6
    cn0_floor: float = 31.0
    cn0_ceiling: float = 45.0
    fll_frequency: str = "carrier"

    def __post_init__(self):
        positive = (self.system_noise_temp, self.chip_rate, self.dll_bandwidth, self.fll_bandwidth,
                    self.coherent_integration, self.early_late_spacing, self.carrier_freq)
        if any(v <= 0 for v in positive):
            raise DomainError("link budget loop and receiver parameters must be > 0")
        if self.elevation_mask < 0 or self.gain_rolloff < 0:
            raise DomainError("elevation mask and gain roll-off must be >= 0")
        if self.early_late_spacing >= 2.0:
            raise DomainError("early_late_spacing must be < 2 chips")
        if self.cn0_floor > self.cn0_ceiling:
            raise DomainError("cn0_floor must not exceed cn0_ceiling")
        if self.fll_frequency not in ("carrier", "chip"):
            raise DomainError(f"fll_frequency must be 'carrier' or 'chip', got {self.fll_frequency}")


@dataclass(frozen=True)
class Priors:
    position_std: float = 1000.0  # m
    velocity_std: float = 10.0  # m/s
    clock_offset_std: float = 5e-6  # s
    clock_drift_std: float = 100e-9  # s/s
    bias_prior: str = "stationary"  # stationary | one_step_noise

    def __post_init__(self):
        if min(self.position_std, self.velocity_std, self.clock_offset_std, self.clock_drift_std) <= 0:
            raise DomainError("prior standard deviations must be > 0")
        if self.bias_prior not in ("stationary", "one_step_noise"):
            raise DomainError(f"bias_prior must be 'stationary' or 'one_step_noise', got {self.bias_prior}")


@dataclass(frozen=True)
class ScenarioConfig:
    site: Site
    satellites: Tuple[SatelliteSpec, ...]
    users: Tuple[UserSpec, ...]
    link_budget: LinkBudget
    sat_bias_model: SatBiasModel
    coop_bias_params: Gmp1Params
    step: float = 1.0
    duration: float = 7200.0
    start_time: float = 0.0
    priors: Priors = field(default_factory=Priors)
    cooperation: Cooperation = Cooperation.FULL
    coop_bias_kind: BiasKind = BiasKind.GMP1
    coop_range_gate: float = 1000.0
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    permittivity: GroundPermittivity = field(default_factory=GroundPermittivity)

    def __post_init__(self):
        object.__setattr__(self, "cooperation", Cooperation(self.cooperation))
        object.__setattr__(self, "coop_bias_kind", BiasKind(self.coop_bias_kind))
        if self.coop_bias_kind not in (BiasKind.GMP1, BiasKind.WGN):
            raise DomainError("cooperative bias must be gmp1 or wgn")
        if not self.step > 0:
            raise DomainError(f"step must be > 0, got {self.step}")
        if self.duration < 0:
            raise DomainError("duration must be >= 0")
        n = round(self.duration / self.step)
        if abs(n * self.step - self.duration) > 1e-9 * max(1.0, self.duration):
            raise DomainError("duration must be a multiple of the step")
        if not self.users:
            raise DomainError("at least one user is required")
        ids = [u.id for u in self.users]
        if len(set(ids)) != len(ids):
            raise DomainError("user ids must be unique")

    @property
    def n_epochs(self) -> int:
        """Number of propagation steps; epochs run 0..n_epochs."""
        return int(round(self.duration / self.step))

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.step * np.arange(self.n_epochs + 1)


# ---------------------------------------------------------------------------
# State space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UserSlots:
    user_id: str
    kind: UserKind
    position: Optional[slice]
    velocity: Optional[slice]
    clock: slice


@dataclass(frozen=True)
class StateIndexMap:
    users: Tuple[UserSlots, ...]
    sat_bias: Tuple[Optional[slice], ...]
    coop_links: Tuple[Tuple[int, int], ...]
    coop_bias: Tuple[Optional[int], ...]
    dim: int

    def link_index(self, i: int, j: int) -> int:
        pair = (min(i, j), max(i, j))
        return self.coop_links.index(pair)

    def coop_bias_index(self, i: int, j: int) -> Optional[int]:
        return self.coop_bias[self.link_index(i, j)]

    def position_users(self) -> List[int]:
        return [k for k, u in enumerate(self.users) if u.position is not None]

    @property
    def augmented(self) -> bool:
        return any(s is not None for s in self.sat_bias) or any(b is not None for b in self.coop_bias)

    def to_dict(self) -> Dict[str, Any]:
        def sl(s: Optional[slice]):
            return None if s is None else [s.start, s.stop]

        return {
            "dim": self.dim,
            "users": [
                {"id": u.user_id, "kind": u.kind.value, "position": sl(u.position),
                 "velocity": sl(u.velocity), "clock": sl(u.clock)}
                for u in self.users
            ],
            "sat_bias": [sl(s) for s in self.sat_bias],
            "coop_links": [list(p) for p in self.coop_links],
            "coop_bias": list(self.coop_bias),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "StateIndexMap":
        def sl(v):
            return None if v is None else slice(int(v[0]), int(v[1]))

        users = tuple(
            UserSlots(u["id"], UserKind(u["kind"]), sl(u["position"]), sl(u["velocity"]), sl(u["clock"]))
            for u in d["users"]
        )
        return cls(
            users=users,
            sat_bias=tuple(sl(s) for s in d["sat_bias"]),
            coop_links=tuple((int(p[0]), int(p[1])) for p in d["coop_links"]),
            coop_bias=tuple(None if b is None else int(b) for b in d["coop_bias"]),
            dim=int(d["dim"]),
        )


@dataclass
class AugmentedState:
    vector: np.ndarray
    epoch: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.vector)):
            raise DomainError(f"state at epoch {self.epoch} has non-finite entries")


@dataclass
class ProcessModel:
    transition: np.ndarray
    noise_cov: np.ndarray
    control: np.ndarray  # D @ o for this epoch


@dataclass(frozen=True)
class ObsSpec:
    kind: ObsType
    rx: int  # receiving user index
    tx: int  # satellite index for satellite observations, transmitting user index for coop


@dataclass
class EpochGeometry:
    """Everything besides the state that the observation model needs at one epoch."""
    epoch: int
    specs: Tuple[ObsSpec, ...]
    sat_position: Dict[int, np.ndarray] = field(default_factory=dict)
    sat_velocity: Dict[int, np.ndarray] = field(default_factory=dict)
    known_positions: Dict[int, np.ndarray] = field(default_factory=dict)
    visible_sats: int = 0
    visible_anchors: int = 0


@dataclass
class ObservationSet:
    geometry: EpochGeometry
    values: np.ndarray
    variances: np.ndarray

    @property
    def epoch(self) -> int:
        return self.geometry.epoch

    @property
    def specs(self) -> Tuple[ObsSpec, ...]:
        return self.geometry.specs

    def __len__(self) -> int:
        return len(self.geometry.specs)


@dataclass
class FilterEstimate:
    mean: np.ndarray
    cov: np.ndarray
    epoch: int = 0


@dataclass
class BimSequence:
    epochs: np.ndarray
    peb: np.ndarray
    visible_sats: np.ndarray
    final: np.ndarray
    information: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# Campaign
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSet:
    sat_bias_model: SatBiasModel
    coop_bias_params: Gmp1Params


@dataclass(frozen=True)
class MismatchConfig:
    truth: ModelSet
    filter: ModelSet


@dataclass(frozen=True)
class CampaignConfig:
    scenario: ScenarioConfig
    filters: Tuple[str, ...] = ("baseline", "ekf", "iekf", "ekf2")
    trials: int = 100
    seed: int = 0
    log_decimation: int = 10
    mismatch: Optional[MismatchConfig] = None
    divergence_policy: str = "include"
    divergence_threshold: float = 1e4
    workers: int = 1
    iekf_max_iter: int = 10
    iekf_tol: float = 1e-4
    bcrb_samples: int = 0  # 0: truth-point expectation
    min_sources: int = 3  # update gate: visible satellites + ranging reference stations

    def __post_init__(self):
        if self.trials < 1:
            raise DomainError("trials must be >= 1")
        if self.min_sources < 0:
            raise DomainError("min_sources must be >= 0")
        if self.divergence_policy not in ("include", "exclude"):
            raise DomainError(f"divergence_policy must be include or exclude, got {self.divergence_policy}")
        if self.log_decimation < 1 or self.workers < 1:
            raise DomainError("log_decimation and workers must be >= 1")


@dataclass
class TrialResult:
    trial: int
    errors: Dict[str, np.ndarray]  # filter -> (epochs, position users)
    diverged: Dict[str, bool]
    divergence_epoch: Dict[str, Optional[int]]
    nees: Dict[str, np.ndarray]
    obs_digest: str  # log as simulated, before any filter ran
    visible_sats: np.ndarray
    gated: np.ndarray
    filter_digests: Dict[str, str] = field(default_factory=dict)  # log after each filter consumed it


@dataclass
class RunManifest:
    command: str
    config_path: Optional[str]
    config_snapshot: Dict[str, Any]
    seed: int
    version: str
    out_dir: str
    started: str
    finished: Optional[str] = None
    files: List[str] = field(default_factory=list)
    status: str = "running"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
