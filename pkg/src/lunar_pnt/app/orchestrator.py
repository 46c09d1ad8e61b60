from __future__ import annotations

import logging
import os
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from lunar_pnt.app import renderer
from lunar_pnt.app.montecarlo import CampaignResult, run_campaign, run_mismatch
from lunar_pnt.app.persistence import RunRecorder
from lunar_pnt.domain.bounds import run_bcrb
from lunar_pnt.domain.models import AcfEstimate, BiasCurve, Domain, Gmp1Params, GroundPermittivity, OfdmConfig
from lunar_pnt.domain.gmp import (
    combine_distance_to_time,
    expand_velocity_sets,
    fit_gmp1_acf,
    gmp1_acf,
    gmp1_psd,
    sample_acf,
    taper_acf,
)
from lunar_pnt.domain.scenario import build_scenario, dll_fll_variances
from lunar_pnt.domain.statespace import build_index_map
from lunar_pnt.domain.tworay import bias_curve_frame, default_bias_grid, simulate_bias_curve
from lunar_pnt.infra.cache import JsonResultCache
from lunar_pnt.infra.config import (
    campaign_from_cfg,
    case_variants,
    coop_fit_key,
    ofdm_from_cfg,
    permittivity_from_cfg,
    policies_from_cfg,
    scenario_from_cfg,
    simulate_variant,
)

logger = logging.getLogger(__name__)

Check = Tuple[str, bool, str]

# below this the bias curve is treated as identically zero
ZERO_BIAS_M = 1e-9


def _within(value: float, target: float, rel_tol: float) -> bool:
    return abs(value - target) <= rel_tol * abs(target)


def fit_grid_from(section: Dict[str, Any]) -> Tuple[np.ndarray, float]:
    step = float(section["fit_step_m"])
    return np.arange(float(section["fit_min_m"]), float(section["fit_max_m"]) + 0.5 * step, step), step


def fit_bias_segment(seg: BiasCurve, step: float) -> Tuple[Gmp1Params, Optional[AcfEstimate], bool]:
    """Distance-domain GMP-1 fit of one bias segment; (fit, tapered ACF, bias identically zero)."""
    if float(np.max(np.abs(seg.bias))) < ZERO_BIAS_M:
        return Gmp1Params(tau=step, sigma2=0.0, domain=Domain.DISTANCE), None, True
    est = taper_acf(sample_acf(seg.bias, step, domain=Domain.DISTANCE))
    return fit_gmp1_acf(est), est, False


def fit_height_pair(h_tx: float, h_rx: float, fit_grid: np.ndarray, step: float, ofdm: OfdmConfig,
                    eps: GroundPermittivity, gamma: Optional[complex] = None):
    seg = simulate_bias_curve(h_tx, h_rx, fit_grid, ofdm, eps, gamma_override=gamma)
    fit, est, zero = fit_bias_segment(seg, step)
    return seg, fit, est, zero


class StudyOrchestrator:
    """
    Runs one study (fit, bounds, link budget or Monte Carlo campaign) from a
    loaded config, writes its CSV/JSON/SVG outputs through a RunRecorder and
    returns the acceptance checks that apply to it.
    """

    def __init__(self, cfg: Dict[str, Any], root: str, recorder: RunRecorder):
        self.cfg = cfg
        self.root = root
        self.rec = recorder
        self.checks_cfg = cfg.get("checks", {})
        self.campaign_cfg = cfg.get("campaign", {})

    def _plot(self, fn, source, name: str, **kwargs) -> str:
        fn(source, self.rec.path(name), **kwargs)
        return self.rec.add_file(name)

    # -------------------------
    # Cooperative bias fit
    # -------------------------
    def fit_coop(self) -> Tuple[Dict[str, Any], List[Check]]:
        s = self.cfg["coop_fit"]
        ofdm, eps = ofdm_from_cfg(self.cfg), permittivity_from_cfg(self.cfg)
        gamma = 0.0 if s.get("force_gamma_zero") else None
        g = s["curve_grid"]
        grid = default_bias_grid(float(g["start_m"]), float(g["stop_m"]), int(g["num"]))
        fit_grid, step = fit_grid_from(s)
        v_min, v_max = float(s["v_min_mps"]), float(s["v_max_mps"])

        pairs, fits, labels = [], [], []
        curve_paths: Dict[str, str] = {}
        acf_cols: Dict[str, np.ndarray] = {}
        lags = None
        degenerate = True
        for h_tx in s["heights_tx_m"]:
            for h_rx in s["heights_rx_m"]:
                label = f"htx{float(h_tx):g}_hrx{float(h_rx):g}"
                renderer.status(f"bias curve {label}")
                curve = simulate_bias_curve(float(h_tx), float(h_rx), grid, ofdm, eps, gamma_override=gamma)
                curve_paths[label] = self.rec.write_csv(f"bias_curve_{label}.csv", bias_curve_frame(curve))

                seg, fit, est, zero = fit_height_pair(float(h_tx), float(h_rx), fit_grid, step, ofdm, eps, gamma)
                degenerate &= zero
                if est is not None:
                    n = est.support
                    lags = est.lags[:n] if lags is None else lags
                    acf_cols[f"sample_{label}"] = est.acf[: lags.size]
                    acf_cols[f"model_{label}"] = gmp1_acf(fit, lags)
                fits.append(fit)
                labels.append(label)
                pairs.append({
                    "h_tx_m": float(h_tx), "h_rx_m": float(h_rx), "tau_m": fit.tau, "sigma_m": fit.sigma,
                    "max_abs_bias_m": float(np.max(np.abs(seg.bias))), "fit": fit.to_record(),
                })

        if degenerate:
            logger.warning("bias is zero on the whole fit window (no reflection); reporting zero-variance fits")
        avg, worst = combine_distance_to_time(fits, v_min, v_max)

        T = float(self.cfg["scenario"]["timing"]["step_s"])
        f = np.linspace(0.0, 1.0 / (2.0 * T), 512)
        psd = {"f_hz": f}
        names = [f"{label}_v{v:g}" for label in labels for v in (v_min, v_max)]
        for name, p in zip(names, expand_velocity_sets(fits, v_min, v_max)):
            psd[name] = gmp1_psd(p, T, f)
        psd["average"] = gmp1_psd(avg, T, f)
        psd["worst"] = gmp1_psd(worst, T, f)
        psd_path = self.rec.write_csv("coop_psd.csv", pd.DataFrame(psd))

        self._plot(renderer.plot_bias_curves, curve_paths, "bias_curves.svg")
        self._plot(renderer.plot_mse_bound, next(iter(curve_paths.values())), "mse_bound.svg")
        self._plot(renderer.plot_psd, psd_path, "coop_psd.svg")
        if acf_cols:
            acf_path = self.rec.write_csv("coop_acf.csv", pd.DataFrame({"lag_m": lags, **acf_cols}))
            self._plot(renderer.plot_acf, acf_path, "coop_acf.svg")

        key = coop_fit_key(self.cfg)
        cache = JsonResultCache(os.path.join(self.cfg["paths"]["cache_dir"], "coop_fit.json"))
        cache.set(key, {"average": avg.to_record(), "worst": worst.to_record()})

        report = {
            "cache_key": key,
            "v_min_mps": v_min, "v_max_mps": v_max,
            "fit_min_m": float(s["fit_min_m"]), "fit_max_m": float(s["fit_max_m"]),
            "pairs": pairs,
            "average": {"tau": avg.tau, "sigma": avg.sigma, **avg.to_record()},
            "worst": {"tau": worst.tau, "sigma": worst.sigma, **worst.to_record()},
            "degenerate": degenerate,
        }
        self.rec.write_json("coop_fit.json", report)

        tol = float(self.checks_cfg.get("coop_fit_rel_tol", 0.2))
        checks: List[Check] = []
        for case in ("average", "worst"):
            want = self.checks_cfg.get(f"coop_fit_{case}", {})
            got = report[case]
            good = _within(got["tau"], float(want["tau_s"]), tol) and _within(got["sigma"], float(want["sigma_m"]), tol)
            checks.append((f"coop fit {case}", good,
                           f"tau {got['tau']:.3g} s (want {want['tau_s']}), sigma {got['sigma']:.3g} m (want {want['sigma_m']})"))
        return report, checks

    # -------------------------
    # Bounds
    # -------------------------
    def bounds(self, case: str) -> Tuple[pd.DataFrame, List[Check]]:
        samples = int(self.campaign_cfg.get("bcrb_samples", 0))
        seed = int(self.campaign_cfg.get("seed", 0))
        frames = []
        for name, vcfg in case_variants(self.cfg, case).items():
            renderer.status(f"bcrb {case}/{name}")
            sc = scenario_from_cfg(vcfg, self.root)
            gate, _ = policies_from_cfg(vcfg)
            seq = run_bcrb(sc, build_index_map(sc), gate=gate, samples=samples, seed=seed)
            frames.append(pd.DataFrame({
                "epoch": seq.epochs, "t_s": sc.times, "variant": name,
                "peb_m": seq.peb, "visible_sats": seq.visible_sats,
            }))
        frame = pd.concat(frames, ignore_index=True)
        path = self.rec.write_csv(f"peb_{case}.csv", frame)
        self._plot(renderer.plot_peb, path, f"peb_{case}.svg", title=f"PEB :: {case}")
        return frame, self._bounds_checks(frame, case)

    def _bounds_checks(self, frame: pd.DataFrame, case: str) -> List[Check]:
        peb = {n: g["peb_m"].to_numpy() for n, g in frame.groupby("variant", sort=False)}
        vis = frame[frame["variant"] == frame["variant"].iloc[0]]["visible_sats"].to_numpy()
        slack = 1.0 + 1e-6
        checks: List[Check] = []
        if case == "sise_models":
            checks.append(("wgn <= gmp1 (steady state)", bool(peb["wgn"][-1] <= peb["gmp1"][-1] * slack),
                           f"{peb['wgn'][-1]:.3g} m vs {peb['gmp1'][-1]:.3g} m"))
            checks.append(("igmp1 drifts above gmp1", bool(peb["igmp1"][-1] >= peb["gmp1"][-1]),
                           f"{peb['igmp1'][-1]:.3g} m vs {peb['gmp1'][-1]:.3g} m"))
        elif case == "sat_vs_hybrid":
            checks.append(("hybrid <= satellite", bool(np.all(peb["hybrid"] <= peb["satellite"] * slack)),
                           f"end {peb['hybrid'][-1]:.3g} m vs {peb['satellite'][-1]:.3g} m"))
            # epoch 0 is the shared prior
            frac = float(np.mean(peb["hybrid_static"][1:] < peb["hybrid"][1:]))
            checks.append(("static user helps", frac >= 0.99, f"lower at {frac:.0%} of epochs"))
        elif case == "reference_station":
            both = vis >= 4
            good = bool(np.all(peb["hybrid"][both] <= peb["differential"][both] * slack)) if both.any() else True
            checks.append(("hybrid <= differential", good, f"{int(both.sum())} epochs with >= 4 satellites"))
            two = vis == 2
            limit = float(self.checks_cfg.get("sub_meter_m", 1.0))
            if two.any():
                m = float(np.mean(peb["hybrid"][two]))
                checks.append(("sub-meter PEB with 2 satellites", m < limit, f"mean PEB {m:.3g} m"))
            else:
                checks.append(("sub-meter PEB with 2 satellites", True, "no 2-satellite epochs in window"))
        return checks

    # -------------------------
    # Link budget
    # -------------------------
    def link_budget(self) -> Tuple[pd.DataFrame, List[Check]]:
        sc = scenario_from_cfg(self.cfg, self.root)
        scen = build_scenario(sc)
        rows = []
        for j, sat in enumerate(sc.satellites):
            m = scen.visible[j]
            dll, fll = dll_fll_variances(scen.cn0[j][m], sc.link_budget)
            rows.append(pd.DataFrame({
                "t_s": scen.times[m], "sat": sat.name,
                "elevation_deg": np.degrees(scen.elevation[j][m]), "range_m": scen.range[j][m],
                "cn0_dbhz": scen.cn0[j][m], "sigma_dll_m": np.sqrt(dll), "sigma_fll_mps": np.sqrt(fll),
            }))
        frame = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(
            columns=["t_s", "sat", "elevation_deg", "range_m", "cn0_dbhz", "sigma_dll_m", "sigma_fll_mps"])
        visibility = pd.DataFrame({"t_s": scen.times, "visible_sats": scen.visible_count})
        self.rec.write_csv("link_budget.csv", frame)
        vpath = self.rec.write_csv("visibility.csv", visibility)
        self._plot(renderer.plot_visibility, vpath, "visibility.svg")
        renderer.render_link_budget(frame, visibility)

        lo, hi = self.checks_cfg.get("cn0_range_dbhz", [31.0, 45.0])
        c = frame["cn0_dbhz"].to_numpy()
        counts = visibility["visible_sats"].to_numpy()
        checks: List[Check] = [
            ("C/N0 range", bool(c.size == 0 or (c.min() >= lo and c.max() <= hi)),
             f"[{c.min():.1f}, {c.max():.1f}] dB-Hz" if c.size else "no visible epochs"),
            ("visibility count", bool(counts.min() >= 0 and counts.max() <= len(sc.satellites)),
             f"{int(counts.min())}..{int(counts.max())} of {len(sc.satellites)}"),
        ]
        return frame, checks

    # -------------------------
    # Monte Carlo campaign
    # -------------------------
    def simulate(self, case: str) -> Tuple[CampaignResult, List[Check]]:
        vcfg, mismatch = simulate_variant(self.cfg, case)
        campaign = campaign_from_cfg(vcfg, self.root, mismatch=mismatch)

        def progress(done: int, total: int):
            if done == total or done % max(1, total // 10) == 0:
                renderer.status(f"trial {done}/{total}")

        result = run_mismatch(campaign, progress) if mismatch else run_campaign(campaign, progress)
        frame = result.to_frame()
        path = self.rec.write_csv("campaign.csv", frame)
        summary = result.summary()
        summary["case"] = case
        self.rec.write_json("summary.json", summary)
        self._plot(renderer.plot_campaign, path, "campaign.svg", title=f"Position RMSE :: {case}")
        renderer.render_campaign(frame, summary)
        return result, self._campaign_checks(result, frame, summary, case, mismatch)

    def _campaign_checks(self, result: CampaignResult, frame: pd.DataFrame, summary: Dict[str, Any],
                         case: str, mismatch: bool) -> List[Check]:
        c = self.checks_cfg
        checks: List[Check] = []
        gated = result.gated
        rmse = result.rmse

        if "baseline" in rmse and not mismatch:
            rate = summary["divergence_rates"]["baseline"]
            want = float(c.get("baseline_divergence_rate", 0.5))
            checks.append(("baseline unstable", rate > want, f"divergence rate {rate:.0%}"))

        checks.append(("common random numbers", result.crn_consistent() and result.trials_distinct(),
                       f"{len(result.results)} trials, one observation log each"))

        if "iekf" in rmse and "ekf" in rmse and gated.any():
            frac = result.trial_win_rate("iekf", "ekf")
            want = float(c.get("iekf_beats_ekf_fraction", 0.8))
            checks.append(("iekf <= ekf per trial", frac >= want, f"{frac:.0%} of trials"))

        if "iekf" in rmse and "ekf2" in rmse and gated.any():
            rel = np.abs(rmse["iekf"][gated] / rmse["ekf2"][gated] - 1.0)
            m = float(np.nanmedian(rel))
            checks.append(("iekf ~ ekf2", m <= float(c.get("iekf_ekf2_rel_tol", 0.1)), f"median rel diff {m:.1%}"))

        if "iekf" in rmse and gated.any():
            r = rmse["iekf"][gated]
            bound = result.bound_series("bcrb")[gated]
            if mismatch:
                worst = result.bound_series("bcrb_worst")[gated]
                frac = float(np.mean((r >= bound * (1 - 1e-9)) & (r <= worst)))
                checks.append(("iekf between bounds", frac >= 0.9, f"{frac:.0%} of gated epochs"))
            else:
                m = float(np.nanmedian(np.abs(r / bound - 1.0)))
                checks.append(("iekf tracks bcrb", m <= float(c.get("bcrb_rel_tol", 0.2)), f"median rel gap {m:.1%}"))
                frac = summary.get("nees_in_band_fraction", {}).get("iekf", float("nan"))
                checks.append(("iekf nees consistent", bool(frac >= 0.9), f"{frac:.0%} of gated epochs in band"))

        if case in ("reference_station", "mismatch_reference") and "iekf" in rmse:
            two = result.visible_sats == 2
            limit = float(c.get("sub_meter_m", 1.0))
            if two.any():
                m = float(np.nanmean(rmse["iekf"][two]))
                checks.append(("sub-meter with 2 satellites", m < limit, f"mean RMSE {m:.3g} m"))
            else:
                checks.append(("sub-meter with 2 satellites", True, "no 2-satellite epochs in window"))

        return checks
