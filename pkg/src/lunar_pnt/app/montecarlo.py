from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import chi2

from lunar_pnt.domain.bounds import run_bcrb
from lunar_pnt.domain.errors import FilterError, NumericalError
from lunar_pnt.domain.models import BimSequence, CampaignConfig, ModelSet, ScenarioConfig, StateIndexMap, TrialResult
from lunar_pnt.domain.policy import IterationPolicy, UpdateGate
from lunar_pnt.domain.registry import FilterRegistry
from lunar_pnt.domain.scenario import Scenario, build_scenario
from lunar_pnt.domain.statespace import (
    STREAM_FILTER_INIT,
    build_index_map,
    observation_digest,
    simulate_truth,
    trial_rng,
)
from lunar_pnt.filters.base import nees

logger = logging.getLogger(__name__)


def _with_models(cfg: ScenarioConfig, models: ModelSet) -> ScenarioConfig:
    return replace(cfg, sat_bias_model=models.sat_bias_model, coop_bias_params=models.coop_bias_params)


def truth_and_filter_configs(campaign: CampaignConfig) -> Tuple[ScenarioConfig, ScenarioConfig]:
    cfg = campaign.scenario
    if campaign.mismatch is None:
        return cfg, cfg
    return _with_models(cfg, campaign.mismatch.truth), _with_models(cfg, campaign.mismatch.filter)


def logged_epochs(campaign: CampaignConfig) -> np.ndarray:
    K = campaign.scenario.n_epochs
    ep = np.arange(0, K + 1, campaign.log_decimation)
    if ep[-1] != K:
        ep = np.append(ep, K)
    return ep


def _position_index(imap: StateIndexMap) -> List[slice]:
    return [imap.users[i].position for i in imap.position_users()]


class TrialRunner:
    """
    One truth realisation per trial, replayed through every requested filter
    so that all filters consume the same noise (common random numbers).
    """

    def __init__(self, campaign: CampaignConfig, scenario: Optional[Scenario] = None):
        self.campaign = campaign
        self.truth_cfg, self.filter_cfg = truth_and_filter_configs(campaign)
        self.scenario = build_scenario(self.truth_cfg) if scenario is None else scenario
        self.truth_map = build_index_map(self.truth_cfg)
        self.gate = UpdateGate(min_sources=campaign.min_sources)
        self.registry = FilterRegistry(
            self.filter_cfg, self.gate,
            IterationPolicy(max_iter=campaign.iekf_max_iter, tol=campaign.iekf_tol),
        )
        self.epochs = logged_epochs(campaign)

    def run(self, trial: int) -> TrialResult:
        c = self.campaign
        record = simulate_truth(self.truth_cfg, self.truth_map, self.scenario, seed=c.seed, trial=trial)
        truth_pos = _position_index(self.truth_map)
        logged = set(int(e) for e in self.epochs)
        row_of = {int(e): n for n, e in enumerate(self.epochs)}

        gated = np.array([
            self.registry.gate.allows(record.observations[e].geometry.visible_sats,
                                      record.observations[e].geometry.visible_anchors)
            for e in self.epochs
        ])
        visible = np.array([record.observations[e].geometry.visible_sats for e in self.epochs])
        digest = observation_digest(record.observations)

        errors: Dict[str, np.ndarray] = {}
        nees_log: Dict[str, np.ndarray] = {}
        diverged: Dict[str, bool] = {}
        consumed: Dict[str, str] = {}
        div_epoch: Dict[str, Optional[int]] = {}
        for name in c.filters:
            flt = self.registry.get(name).bind(self.scenario)
            fpos = _position_index(flt.imap)
            err = np.full((self.epochs.size, len(truth_pos)), np.nan)
            ne = np.full(self.epochs.size, np.nan)
            est = flt.initialize(record.states[0], self.truth_map, trial_rng(c.seed, trial, STREAM_FILTER_INIT))
            diverged[name], div_epoch[name] = False, None
            for k, obs in enumerate(record.observations):
                try:
                    if k > 0:
                        est = flt.predict(est)
                    est = flt.update(est, obs)
                    e = np.array([est.mean[f] - record.states[k, t] for f, t in zip(fpos, truth_pos)])
                    norms = np.linalg.norm(e, axis=1) if e.size else np.zeros(0)
                    if not np.all(np.isfinite(norms)) or (norms.size and norms.max() > c.divergence_threshold):
                        raise FilterError("position error above divergence threshold", {"epoch": k})
                except (FilterError, NumericalError, np.linalg.LinAlgError) as ex:
                    diverged[name], div_epoch[name] = True, k
                    logger.warning("trial %d: %s diverged at epoch %d (%s)", trial, name, k, ex)
                    first = np.searchsorted(self.epochs, k)
                    err[first:] = c.divergence_threshold
                    break
                if k in logged:
                    n = row_of[k]
                    err[n] = norms
                    if e.size:
                        idx = np.concatenate([np.r_[f] for f in fpos])
                        try:
                            ne[n] = nees(e.reshape(-1), est.cov[np.ix_(idx, idx)])
                        except np.linalg.LinAlgError:
                            ne[n] = np.nan
            errors[name] = err
            nees_log[name] = ne
            consumed[name] = observation_digest(record.observations)
            if flt.skipped:
                logger.debug("trial %d: %s skipped %d gated updates", trial, name, flt.skipped)

        return TrialResult(trial=trial, errors=errors, diverged=diverged, divergence_epoch=div_epoch,
                           nees=nees_log, obs_digest=digest, visible_sats=visible, gated=gated,
                           filter_digests=consumed)


def run_trial(campaign: CampaignConfig, trial: int, scenario: Optional[Scenario] = None) -> TrialResult:
    return TrialRunner(campaign, scenario).run(trial)


def _trial_worker(args) -> TrialResult:
    campaign, trial = args
    return run_trial(campaign, trial)


def aggregate_rmse(results: Sequence[TrialResult], filters: Optional[Sequence[str]] = None,
                   policy: str = "include") -> Dict[str, np.ndarray]:
    """
    Per filter, sqrt(mean over trials and users of squared position error)
    per logged epoch. policy="exclude" drops the trials a filter diverged in.
    """
    if not results:
        raise ValueError("need at least one trial")
    if policy not in ("include", "exclude"):
        raise ValueError(f"unknown divergence policy: {policy}")
    names = list(filters) if filters is not None else list(results[0].errors)
    out: Dict[str, np.ndarray] = {}
    for name in names:
        rows = [r.errors[name] for r in results if not (policy == "exclude" and r.diverged.get(name))]
        if not rows:
            out[name] = np.full(results[0].errors[name].shape[0], np.nan)
            continue
        sq = np.stack(rows) ** 2  # (trials, epochs, users)
        out[name] = np.sqrt(np.nanmean(sq, axis=(0, 2)))
    return out


def nees_band(n_trials: int, dof: int, prob: float = 0.95) -> Tuple[float, float]:
    """Two-sided band for the trial-averaged NEES of a consistent filter."""
    a = (1.0 - prob) / 2.0
    return chi2.ppf(a, n_trials * dof) / n_trials, chi2.ppf(1.0 - a, n_trials * dof) / n_trials


@dataclass
class CampaignResult:
    epochs: np.ndarray
    times: np.ndarray
    results: List[TrialResult]
    rmse: Dict[str, np.ndarray]
    bounds: Dict[str, BimSequence]
    policy: str
    runtime_s: float
    nees_dof: int = 0
    extras: Dict[str, object] = field(default_factory=dict)

    @property
    def visible_sats(self) -> np.ndarray:
        return self.results[0].visible_sats

    @property
    def gated(self) -> np.ndarray:
        return self.results[0].gated

    def divergence_counts(self) -> Dict[str, int]:
        return {name: int(sum(r.diverged[name] for r in self.results)) for name in self.rmse}

    def mean_nees(self, name: str) -> np.ndarray:
        return np.nanmean(np.stack([r.nees[name] for r in self.results]), axis=0)

    def crn_consistent(self) -> bool:
        """Within every trial, each filter left the observation log exactly as it was simulated."""
        return all(
            set(r.filter_digests) == set(r.errors) and all(d == r.obs_digest for d in r.filter_digests.values())
            for r in self.results
        )

    def trials_distinct(self) -> bool:
        digests = [r.obs_digest for r in self.results]
        return len(set(digests)) == len(digests)

    def trial_win_rate(self, name: str, other: str) -> float:
        """Fraction of trials in which `name` has an RMS position error over the gated epochs no larger than `other`."""
        mask = self.gated
        if not mask.any():
            return float("nan")
        wins = []
        for r in self.results:
            a = np.sqrt(np.nanmean(r.errors[name][mask] ** 2))
            b = np.sqrt(np.nanmean(r.errors[other][mask] ** 2))
            wins.append(bool(a <= b))
        return float(np.mean(wins))

    def bound_series(self, key: str) -> np.ndarray:
        return self.bounds[key].peb[self.epochs]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for name, rmse in self.rmse.items():
            df = pd.DataFrame({
                "epoch": self.epochs,
                "t_s": self.times,
                "filter": name,
                "rmse_m": rmse,
                "bcrb_m": self.bound_series("bcrb"),
                "visible_sats": self.visible_sats,
                "gated": self.gated,
            })
            if "bcrb_worst" in self.bounds:
                df["bcrb_worst_m"] = self.bound_series("bcrb_worst")
            rows.append(df)
        return pd.concat(rows, ignore_index=True)

    def summary(self) -> Dict[str, object]:
        div = self.divergence_counts()
        n = len(self.results)
        out: Dict[str, object] = {
            "trials": n,
            "divergence_policy": self.policy,
            "divergence_counts": div,
            "divergence_rates": {k: v / n for k, v in div.items()},
            "runtime_s": round(self.runtime_s, 3),
            "obs_digests": [r.obs_digest for r in self.results],
            "crn_consistent": self.crn_consistent(),
        }
        if self.nees_dof:
            lo, hi = nees_band(n, self.nees_dof)
            frac = {}
            for name in self.rmse:
                m = self.mean_nees(name)[self.gated]
                m = m[np.isfinite(m)]
                frac[name] = float(np.mean((m >= lo) & (m <= hi))) if m.size else float("nan")
            out["nees_band"] = [lo, hi]
            out["nees_in_band_fraction"] = frac
        out.update(self.extras)
        return out


def run_campaign(campaign: CampaignConfig, progress: Optional[Callable[[int, int], None]] = None) -> CampaignResult:
    t0 = time.time()
    truth_cfg, filter_cfg = truth_and_filter_configs(campaign)
    scenario = build_scenario(truth_cfg)
    runner = TrialRunner(campaign, scenario)
    trials = range(campaign.trials)

    results: List[TrialResult] = []
    if campaign.workers > 1:
        with ProcessPoolExecutor(max_workers=campaign.workers) as pool:
            for n, r in enumerate(pool.map(_trial_worker, [(campaign, t) for t in trials])):
                results.append(r)
                if progress:
                    progress(n + 1, campaign.trials)
    else:
        for t in trials:
            results.append(runner.run(t))
            if progress:
                progress(t + 1, campaign.trials)
    results.sort(key=lambda r: r.trial)

    bounds = {"bcrb": run_bcrb(truth_cfg, build_index_map(truth_cfg), scenario, gate=runner.gate,
                               samples=campaign.bcrb_samples, seed=campaign.seed)}
    if campaign.mismatch is not None:
        bounds["bcrb_worst"] = run_bcrb(filter_cfg, build_index_map(filter_cfg), scenario, gate=runner.gate,
                                        samples=campaign.bcrb_samples, seed=campaign.seed)

    rmse = aggregate_rmse(results, campaign.filters, campaign.divergence_policy)
    epochs = runner.epochs
    dof = 3 * len(runner.truth_map.position_users())
    res = CampaignResult(epochs=epochs, times=truth_cfg.times[epochs], results=results, rmse=rmse,
                         bounds=bounds, policy=campaign.divergence_policy, runtime_s=time.time() - t0,
                         nees_dof=dof)
    logger.info("campaign: %d trials, %d filters, %.1f s (divergence %s)", campaign.trials,
                len(campaign.filters), res.runtime_s, res.divergence_counts())
    return res


def run_mismatch(campaign: CampaignConfig, progress: Optional[Callable[[int, int], None]] = None) -> CampaignResult:
    """
    Truth with the mismatch truth models, filters with the filter models;
    the result carries the bound for both model sets.
    """
    if campaign.mismatch is None:
        raise ValueError("campaign has no mismatch pair configured")
    return run_campaign(campaign, progress)
