"""
Augmented hybrid state space.

Layout: every user contributes position (3, absent for pinned reference
stations), velocity (3, moving rovers only) and clock (c*delta, c*delta_dot);
then one (range, rate) bias pair per satellite when the satellite bias is
augmented; then one bias per cooperative link, shared by both directions.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from lunar_pnt.domain.errors import DomainError
from lunar_pnt.domain.gmp import (
    bias_stationary_covariance,
    bias_transition,
    gmp1_discretize,
    psd_sqrt,
)
from lunar_pnt.domain.models import (
    SPEED_OF_LIGHT,
    AugmentedState,
    BiasKind,
    Cooperation,
    EpochGeometry,
    ObservationSet,
    ObsSpec,
    ObsType,
    ProcessModel,
    ScenarioConfig,
    StateIndexMap,
    TwoRayGeometry,
    UserSlots,
)
from lunar_pnt.domain.scenario import Scenario, build_scenario, clock_noise_cov, dll_fll_variances
from lunar_pnt.domain.tworay import mean_square_bandwidth, ranging_crb

logger = logging.getLogger(__name__)

# seeded stream purposes
STREAM_PROCESS = 0
STREAM_OBSERVATION = 1
STREAM_TRUTH_INIT = 2
STREAM_FILTER_INIT = 3


def trial_rng(seed: int, trial: int, purpose: int) -> np.random.Generator:
    """Independent stream per (campaign seed, trial, purpose); order of execution does not matter."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(trial), int(purpose))))


# ---------------------------------------------------------------------------
# Index map
# ---------------------------------------------------------------------------

def cooperative_links(cfg: ScenarioConfig) -> Tuple[Tuple[int, int], ...]:
    users = cfg.users
    n = len(users)
    if cfg.cooperation == Cooperation.NONE:
        return ()
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            if cfg.cooperation == Cooperation.ANCHOR_BROADCAST and users[i].pinned == users[j].pinned:
                continue
            pairs.append((i, j))
    return tuple(pairs)


def build_index_map(cfg: ScenarioConfig, augmented: bool = True) -> StateIndexMap:
    """
    augmented=False gives the reduced layout of the white-noise baseline
    filter (user states only).
    """
    if not cfg.users:
        raise DomainError("at least one user is required")
    pos = 0
    slots: List[UserSlots] = []
    for u in cfg.users:
        p = v = None
        if not u.pinned:
            p = slice(pos, pos + 3)
            pos += 3
        if u.moving:
            v = slice(pos, pos + 3)
            pos += 3
        c = slice(pos, pos + 2)
        pos += 2
        slots.append(UserSlots(u.id, u.kind, p, v, c))

    sat_bias: List[Optional[slice]] = []
    for _ in cfg.satellites:
        if augmented and cfg.sat_bias_model.augmented:
            sat_bias.append(slice(pos, pos + 2))
            pos += 2
        else:
            sat_bias.append(None)

    links = cooperative_links(cfg)
    coop_bias: List[Optional[int]] = []
    for _ in links:
        if augmented and cfg.coop_bias_kind == BiasKind.GMP1:
            coop_bias.append(pos)
            pos += 1
        else:
            coop_bias.append(None)

    return StateIndexMap(users=tuple(slots), sat_bias=tuple(sat_bias), coop_links=links,
                         coop_bias=tuple(coop_bias), dim=pos)


# ---------------------------------------------------------------------------
# Process model
# ---------------------------------------------------------------------------

def _cwna(T: float, sigma_v: float) -> Tuple[np.ndarray, np.ndarray]:
    """Continuous white-noise acceleration block over (position, velocity)."""
    I = np.eye(3)
    F = np.block([[I, T * I], [np.zeros((3, 3)), I]])
    q = sigma_v ** 2
    Q = q * np.block([[T ** 3 / 3.0 * I, T ** 2 / 2.0 * I], [T ** 2 / 2.0 * I, T * I]])
    return F, Q


class ProcessAssembler:
    """
    Builds F and Q once per (config, map, step); only the control term
    varies with the epoch.
    """

    def __init__(self, cfg: ScenarioConfig, imap: StateIndexMap, scenario: Optional[Scenario] = None,
                 step: Optional[float] = None):
        self.cfg = cfg
        self.imap = imap
        self.scenario = scenario
        self.step = cfg.step if step is None else float(step)
        if self.step < 0:
            raise DomainError("step must be >= 0")
        self.transition, self.noise_cov = self._assemble(self.step)

    def _assemble(self, T: float) -> Tuple[np.ndarray, np.ndarray]:
        cfg, imap = self.cfg, self.imap
        F = np.eye(imap.dim)
        Q = np.zeros((imap.dim, imap.dim))
        if T == 0.0:
            return F, Q

        for spec, slot in zip(cfg.users, imap.users):
            if slot.velocity is not None:
                Fu, Qu = _cwna(T, spec.sigma_v)
                idx = np.r_[slot.position, slot.velocity]
                F[np.ix_(idx, idx)] = Fu
                Q[np.ix_(idx, idx)] = Qu
            c = slot.clock
            F[c, c] = np.array([[1.0, T], [0.0, 1.0]])
            Q[c, c] = clock_noise_cov(spec.clock, T)

        if any(s is not None for s in imap.sat_bias):
            Fb, Qb = bias_transition(cfg.sat_bias_model, T)
            for s in imap.sat_bias:
                if s is not None:
                    F[s, s] = Fb
                    Q[s, s] = Qb

        if any(b is not None for b in imap.coop_bias):
            alpha, q = gmp1_discretize(cfg.coop_bias_params, T)
            for b in imap.coop_bias:
                if b is not None:
                    F[b, b] = alpha
                    Q[b, b] = q
        return F, 0.5 * (Q + Q.T)

    def control(self, epoch: int) -> np.ndarray:
        """Velocity increment applied on the transition into `epoch`."""
        d = np.zeros(self.imap.dim)
        if self.scenario is None or epoch <= 0:
            return d
        for traj, slot in zip(self.scenario.trajectories, self.imap.users):
            if slot.velocity is not None:
                d[slot.velocity] = traj.controls[epoch]
        return d

    def at(self, epoch: int) -> ProcessModel:
        return ProcessModel(self.transition, self.noise_cov, self.control(epoch))


def assemble_process(cfg: ScenarioConfig, imap: StateIndexMap, epoch: int,
                     scenario: Optional[Scenario] = None, step: Optional[float] = None) -> ProcessModel:
    return ProcessAssembler(cfg, imap, scenario, step).at(epoch)


def bias_prior_blocks(cfg: ScenarioConfig) -> Tuple[np.ndarray, float]:
    """(2x2 satellite bias prior, coop bias prior variance) for the configured prior reading."""
    T = cfg.step
    if cfg.priors.bias_prior == "stationary":
        sat = bias_stationary_covariance(cfg.sat_bias_model, T) if cfg.sat_bias_model.augmented else np.zeros((2, 2))
        return sat, cfg.coop_bias_params.sigma2
    sat = bias_transition(cfg.sat_bias_model, T)[1] if cfg.sat_bias_model.augmented else np.zeros((2, 2))
    return sat, gmp1_discretize(cfg.coop_bias_params, T)[1]


def prior_covariance(cfg: ScenarioConfig, imap: StateIndexMap) -> np.ndarray:
    pr = cfg.priors
    P = np.zeros((imap.dim, imap.dim))
    clock = np.diag([(SPEED_OF_LIGHT * pr.clock_offset_std) ** 2, (SPEED_OF_LIGHT * pr.clock_drift_std) ** 2])
    for slot in imap.users:
        if slot.position is not None:
            P[slot.position, slot.position] = pr.position_std ** 2 * np.eye(3)
        if slot.velocity is not None:
            P[slot.velocity, slot.velocity] = pr.velocity_std ** 2 * np.eye(3)
        P[slot.clock, slot.clock] = clock
    sat, coop = bias_prior_blocks(cfg)
    for s in imap.sat_bias:
        if s is not None:
            P[s, s] = sat
    for b in imap.coop_bias:
        if b is not None:
            P[b, b] = coop
    return P


# ---------------------------------------------------------------------------
# Observation model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SparseHessian:
    """N = E_index @ block @ E_index.T for the few state entries an observation touches."""
    index: np.ndarray
    block: np.ndarray

    def to_dense(self, dim: int) -> np.ndarray:
        N = np.zeros((dim, dim))
        if self.index.size:
            N[np.ix_(self.index, self.index)] = self.block
        return N


def _positions_of(x: np.ndarray, imap: StateIndexMap, geom: EpochGeometry, i: int) -> np.ndarray:
    slot = imap.users[i]
    if slot.position is not None:
        return x[slot.position]
    return geom.known_positions[i]


def _velocity_of(x: np.ndarray, imap: StateIndexMap, i: int) -> np.ndarray:
    slot = imap.users[i]
    return x[slot.velocity] if slot.velocity is not None else np.zeros(3)


def _line_of_sight(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, float]:
    """Unit vector from a to b and the distance."""
    r = b - a
    d = float(np.linalg.norm(r))
    if d == 0.0:
        return np.zeros(3), 0.0
    return r / d, d


class ObservationModel:
    """h(x), its Jacobian and per-row Hessians for one index map."""

    def __init__(self, imap: StateIndexMap):
        self.imap = imap

    def predict(self, x, geom: EpochGeometry) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        imap = self.imap
        out = np.empty(len(geom.specs))
        for o, spec in enumerate(geom.specs):
            rx = imap.users[spec.rx]
            p = _positions_of(x, imap, geom, spec.rx)
            if spec.kind == ObsType.COOP_PR:
                tx = imap.users[spec.tx]
                _, d = _line_of_sight(p, _positions_of(x, imap, geom, spec.tx))
                val = d + x[rx.clock.start] - x[tx.clock.start]
                b = imap.coop_bias_index(spec.rx, spec.tx)
            else:
                u, d = _line_of_sight(p, geom.sat_position[spec.tx])
                bias = imap.sat_bias[spec.tx]
                if spec.kind == ObsType.SAT_PR:
                    val = d + x[rx.clock.start]
                    b = None if bias is None else bias.start
                else:
                    w = geom.sat_velocity[spec.tx] - _velocity_of(x, imap, spec.rx)
                    val = float(w @ u) + x[rx.clock.start + 1]
                    b = None if bias is None else bias.start + 1
            out[o] = val + (x[b] if b is not None else 0.0)
        return out

    def jacobian(self, x, geom: EpochGeometry) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        imap = self.imap
        H = np.zeros((len(geom.specs), imap.dim))
        for o, spec in enumerate(geom.specs):
            rx = imap.users[spec.rx]
            p = _positions_of(x, imap, geom, spec.rx)
            if spec.kind == ObsType.COOP_PR:
                tx = imap.users[spec.tx]
                u, _ = _line_of_sight(p, _positions_of(x, imap, geom, spec.tx))
                if rx.position is not None:
                    H[o, rx.position] = -u
                if tx.position is not None:
                    H[o, tx.position] = u
                H[o, rx.clock.start] = 1.0
                H[o, tx.clock.start] = -1.0
                b = imap.coop_bias_index(spec.rx, spec.tx)
                if b is not None:
                    H[o, b] = 1.0
                continue

            u, d = _line_of_sight(p, geom.sat_position[spec.tx])
            bias = imap.sat_bias[spec.tx]
            if spec.kind == ObsType.SAT_PR:
                if rx.position is not None:
                    H[o, rx.position] = -u
                H[o, rx.clock.start] = 1.0
                if bias is not None:
                    H[o, bias.start] = 1.0
            else:
                w = geom.sat_velocity[spec.tx] - _velocity_of(x, imap, spec.rx)
                if rx.position is not None:
                    H[o, rx.position] = -(w - u * (u @ w)) / d
                if rx.velocity is not None:
                    H[o, rx.velocity] = -u
                H[o, rx.clock.start + 1] = 1.0
                if bias is not None:
                    H[o, bias.start + 1] = 1.0
        return H

    def hessians(self, x, geom: EpochGeometry) -> List[SparseHessian]:
        x = np.asarray(x, dtype=float)
        imap = self.imap
        out: List[SparseHessian] = []
        empty = SparseHessian(np.zeros(0, dtype=int), np.zeros((0, 0)))
        for spec in geom.specs:
            rx = imap.users[spec.rx]
            p = _positions_of(x, imap, geom, spec.rx)
            if spec.kind == ObsType.COOP_PR:
                tx = imap.users[spec.tx]
                u, d = _line_of_sight(p, _positions_of(x, imap, geom, spec.tx))
                if d == 0.0:
                    out.append(empty)
                    continue
                P = (np.eye(3) - np.outer(u, u)) / d
                parts = [s for s in (rx.position, tx.position) if s is not None]
                if not parts:
                    out.append(empty)
                elif len(parts) == 1:
                    out.append(SparseHessian(np.arange(parts[0].start, parts[0].stop), P))
                else:
                    idx = np.r_[rx.position, tx.position]
                    out.append(SparseHessian(idx, np.block([[P, -P], [-P, P]])))
                continue

            if rx.position is None:
                out.append(empty)
                continue
            u, d = _line_of_sight(p, geom.sat_position[spec.tx])
            P = np.eye(3) - np.outer(u, u)
            pidx = np.arange(rx.position.start, rx.position.stop)
            if spec.kind == ObsType.SAT_PR:
                out.append(SparseHessian(pidx, P / d))
                continue
            w = geom.sat_velocity[spec.tx] - _velocity_of(x, imap, spec.rx)
            wu = float(w @ u)
            pp = (-(np.outer(w, u) + np.outer(u, w)) - wu * np.eye(3) + 3.0 * wu * np.outer(u, u)) / d ** 2
            if rx.velocity is None:
                out.append(SparseHessian(pidx, pp))
                continue
            pv = P / d
            idx = np.r_[pidx, np.arange(rx.velocity.start, rx.velocity.stop)]
            out.append(SparseHessian(idx, np.block([[pp, pv], [pv.T, np.zeros((3, 3))]])))
        return out


def predict_observations(x, geometry: EpochGeometry, imap: StateIndexMap) -> np.ndarray:
    return ObservationModel(imap).predict(x, geometry)


def observation_jacobian(x, geometry: EpochGeometry, imap: StateIndexMap) -> np.ndarray:
    return ObservationModel(imap).jacobian(x, geometry)


def observation_hessians(x, geometry: EpochGeometry, imap: StateIndexMap) -> List[SparseHessian]:
    return ObservationModel(imap).hessians(x, geometry)


# ---------------------------------------------------------------------------
# Geometry and noise per epoch
# ---------------------------------------------------------------------------

def epoch_geometry(cfg: ScenarioConfig, scenario: Scenario, epoch: int,
                   user_positions: Sequence[np.ndarray]) -> EpochGeometry:
    """
    Observation list in canonical order: per user, per visible satellite PR
    then PRR; then cooperative PRs sorted by (rx, tx). Links are dropped
    beyond the horizontal range gate or for co-located users.
    """
    users = cfg.users
    visible = [j for j in range(len(cfg.satellites)) if scenario.visible[j, epoch]]
    specs: List[ObsSpec] = []
    for i in range(len(users)):
        for j in visible:
            specs.append(ObsSpec(ObsType.SAT_PR, i, j))
            specs.append(ObsSpec(ObsType.SAT_PRR, i, j))

    coop: List[ObsSpec] = []
    anchors = set()
    for a, b in cooperative_links(cfg):
        pa, pb = user_positions[a], user_positions[b]
        d_h = float(np.hypot(*(pa[:2] - pb[:2])))
        if d_h > cfg.coop_range_gate or float(np.linalg.norm(pa - pb)) < 1e-3:
            continue
        directions = [(a, b), (b, a)]
        if cfg.cooperation == Cooperation.ANCHOR_BROADCAST:
            directions = [(b, a)] if users[a].pinned else [(a, b)]
        for rx, tx in directions:
            coop.append(ObsSpec(ObsType.COOP_PR, rx, tx))
            if users[tx].pinned:
                anchors.add(tx)
    specs.extend(sorted(coop, key=lambda s: (s.rx, s.tx)))

    return EpochGeometry(
        epoch=epoch,
        specs=tuple(specs),
        sat_position={j: scenario.sat_position[j, epoch] for j in visible},
        sat_velocity={j: scenario.sat_velocity[j, epoch] for j in visible},
        known_positions={i: np.asarray(user_positions[i]) for i, u in enumerate(users) if u.pinned},
        visible_sats=len(visible),
        visible_anchors=len(anchors),
    )


def thermal_variances(cfg: ScenarioConfig, scenario: Scenario, geom: EpochGeometry,
                      user_positions: Sequence[np.ndarray], msb: Optional[float] = None) -> np.ndarray:
    """DLL/FLL variances from the epoch C/N0 and the two-ray ranging CRB for cooperative links."""
    out = np.empty(len(geom.specs))
    sat_cache: Dict[int, Tuple[float, float]] = {}
    for o, spec in enumerate(geom.specs):
        if spec.kind == ObsType.COOP_PR:
            if msb is None:
                msb = mean_square_bandwidth(cfg.ofdm)
            prx, ptx = user_positions[spec.rx], user_positions[spec.tx]
            tr = TwoRayGeometry(h_tx=cfg.users[spec.tx].antenna_height, h_rx=cfg.users[spec.rx].antenna_height,
                                d_h=float(np.hypot(*(prx[:2] - ptx[:2]))))
            out[o] = ranging_crb(tr, cfg.ofdm, cfg.permittivity, msb=msb)
            continue
        if spec.tx not in sat_cache:
            sat_cache[spec.tx] = dll_fll_variances(scenario.cn0[spec.tx, geom.epoch], cfg.link_budget)
        dll, fll = sat_cache[spec.tx]
        out[o] = dll if spec.kind == ObsType.SAT_PR else fll
    return out


def white_bias_variances(cfg: ScenarioConfig, imap: StateIndexMap, specs: Sequence[ObsSpec]) -> np.ndarray:
    """Variance of every bias the map does not carry as a state, per observation."""
    sat = np.diag(bias_stationary_covariance(cfg.sat_bias_model, cfg.step))
    out = np.zeros(len(specs))
    for o, spec in enumerate(specs):
        if spec.kind == ObsType.COOP_PR:
            if imap.coop_bias_index(spec.rx, spec.tx) is None:
                out[o] = cfg.coop_bias_params.sigma2
        elif imap.sat_bias[spec.tx] is None:
            out[o] = sat[0] if spec.kind == ObsType.SAT_PR else sat[1]
    return out


def effective_variances(obs: ObservationSet, cfg: ScenarioConfig, imap: StateIndexMap) -> np.ndarray:
    """R diagonal seen by an estimator on `imap`: thermal noise plus any non-augmented bias."""
    return np.asarray(obs.variances) + white_bias_variances(cfg, imap, obs.specs)


# ---------------------------------------------------------------------------
# Truth simulation
# ---------------------------------------------------------------------------

@dataclass
class TruthRecord:
    imap: StateIndexMap
    times: np.ndarray
    states: np.ndarray  # (K+1, dim)
    observations: List[ObservationSet]

    def state(self, epoch: int) -> AugmentedState:
        return AugmentedState(self.states[epoch].copy(), epoch)


def initial_truth(cfg: ScenarioConfig, imap: StateIndexMap, scenario: Scenario,
                  rng: Optional[np.random.Generator]) -> np.ndarray:
    x = np.zeros(imap.dim)
    for spec, slot, traj in zip(cfg.users, imap.users, scenario.trajectories):
        if slot.position is not None:
            x[slot.position] = traj.positions[0]
        if slot.velocity is not None:
            x[slot.velocity] = traj.velocities[0]
        x[slot.clock] = SPEED_OF_LIGHT * np.array([spec.clock.initial_offset, spec.clock.initial_drift])
    if rng is None:
        return x
    sat = bias_stationary_covariance(cfg.sat_bias_model, cfg.step) if cfg.sat_bias_model.augmented else None
    for s in imap.sat_bias:
        if s is not None:
            x[s] = psd_sqrt(sat) @ rng.standard_normal(2)
    for b in imap.coop_bias:
        if b is not None:
            x[b] = cfg.coop_bias_params.sigma * rng.standard_normal()
    return x


def _user_positions(cfg: ScenarioConfig, imap: StateIndexMap, scenario: Scenario, x: np.ndarray, k: int):
    out = []
    for slot, traj in zip(imap.users, scenario.trajectories):
        out.append(x[slot.position] if slot.position is not None else traj.positions[k])
    return out


def simulate_truth(
    cfg: ScenarioConfig,
    imap: StateIndexMap,
    scenario: Optional[Scenario] = None,
    seed: int = 0,
    trial: int = 0,
    noise: bool = True,
) -> TruthRecord:
    """
    One realisation of states and observations for epochs 0..K. Biases the
    map does not augment are drawn white and added to the observation values;
    the recorded variances stay thermal.
    """
    scenario = build_scenario(cfg) if scenario is None else scenario
    assembler = ProcessAssembler(cfg, imap, scenario)
    F = assembler.transition
    L = psd_sqrt(assembler.noise_cov)
    rng_proc = trial_rng(seed, trial, STREAM_PROCESS)
    rng_obs = trial_rng(seed, trial, STREAM_OBSERVATION)
    rng_init = trial_rng(seed, trial, STREAM_TRUTH_INIT) if noise else None

    K = cfg.n_epochs
    states = np.empty((K + 1, imap.dim))
    x = initial_truth(cfg, imap, scenario, rng_init)
    msb = mean_square_bandwidth(cfg.ofdm)
    model = ObservationModel(imap)
    observations: List[ObservationSet] = []
    for k in range(K + 1):
        if k > 0:
            x = F @ x + assembler.control(k)
            if noise:
                x = x + L @ rng_proc.standard_normal(L.shape[1])
        states[k] = x
        positions = _user_positions(cfg, imap, scenario, x, k)
        geom = epoch_geometry(cfg, scenario, k, positions)
        variances = thermal_variances(cfg, scenario, geom, positions, msb)
        values = model.predict(x, geom)
        if noise and len(geom.specs):
            extra = white_bias_variances(cfg, imap, geom.specs)
            values = values + np.sqrt(variances + extra) * rng_obs.standard_normal(len(geom.specs))
        observations.append(ObservationSet(geom, values, variances))
    logger.debug("truth trial %d: %d epochs, dim %d, %d observations", trial, K + 1, imap.dim,
                 sum(len(o) for o in observations))
    return TruthRecord(imap, cfg.times, states, observations)


def nominal_states(cfg: ScenarioConfig, imap: StateIndexMap, scenario: Optional[Scenario] = None) -> TruthRecord:
    """Noise-free truth: the trajectory, initial clocks and zero biases."""
    return simulate_truth(cfg, imap, scenario, noise=False)


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

def truth_frame(record: TruthRecord, cfg: ScenarioConfig) -> pd.DataFrame:
    rows = []
    for i, (spec, slot) in enumerate(zip(cfg.users, record.imap.users)):
        pos = record.states[:, slot.position] if slot.position is not None else np.repeat(
            spec.start[None, :], record.times.size, axis=0)
        vel = record.states[:, slot.velocity] if slot.velocity is not None else np.zeros((record.times.size, 3))
        clk = record.states[:, slot.clock]
        rows.append(pd.DataFrame({
            "t": record.times, "user": spec.id,
            "x": pos[:, 0], "y": pos[:, 1], "z": pos[:, 2],
            "vx": vel[:, 0], "vy": vel[:, 1], "vz": vel[:, 2],
            "cdt": clk[:, 0], "cdt_rate": clk[:, 1],
        }))
    return pd.concat(rows, ignore_index=True)


def observations_frame(observations: Sequence[ObservationSet]) -> pd.DataFrame:
    cols = {"epoch": [], "type": [], "rx": [], "tx": [], "value": [], "sigma2": []}
    for obs in observations:
        for spec, v, s2 in zip(obs.specs, obs.values, obs.variances):
            cols["epoch"].append(obs.epoch)
            cols["type"].append(spec.kind.value)
            cols["rx"].append(spec.rx)
            cols["tx"].append(spec.tx)
            cols["value"].append(float(v))
            cols["sigma2"].append(float(s2))
    return pd.DataFrame(cols)


def observation_digest(observations: Sequence[ObservationSet]) -> str:
    h = hashlib.sha256()
    for obs in observations:
        h.update(np.int64(obs.epoch).tobytes())
        h.update(np.ascontiguousarray(obs.values, dtype=float).tobytes())
    return h.hexdigest()
