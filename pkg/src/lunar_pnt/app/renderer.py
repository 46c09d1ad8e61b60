from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from colorama import Fore, Style, init as colorama_init  # noqa: E402
from tabulate import tabulate  # noqa: E402

colorama_init()

WIDTH = 95


class Colors:
    HEADER = Fore.MAGENTA
    CYAN = Fore.CYAN
    GREEN = Fore.GREEN
    WARNING = Fore.YELLOW
    FAIL = Fore.RED
    BOLD = Style.BRIGHT
    ENDC = Style.RESET_ALL


def banner(title: str, subtitle: str = ""):
    print("")
    print("=" * WIDTH)
    print(f"🌙 {Colors.HEADER}LUNAR PNT :: {title}{Colors.ENDC}")
    if subtitle:
        print(subtitle)
    print("=" * WIDTH)


def status(msg: str):
    print(f"   ... {msg}")


def ok(msg: str):
    print(f"✅ {Colors.GREEN}{msg}{Colors.ENDC}")


def warn(msg: str):
    print(f"⚠️  {Colors.WARNING}{msg}{Colors.ENDC}")


def fail(msg: str):
    print(f"❌ {Colors.FAIL}{msg}{Colors.ENDC}")


def _table(rows: Sequence[Sequence], headers: Sequence[str], floatfmt: str = ".4g") -> str:
    return tabulate(rows, headers=headers, tablefmt="simple", floatfmt=floatfmt)


# ---------------------------------------------------------------------------
# console reports
# ---------------------------------------------------------------------------

def render_fit_report(report: Dict) -> None:
    banner("COOPERATIVE BIAS FIT", f"v in [{report['v_min_mps']}, {report['v_max_mps']}] m/s | "
                                   f"fit window {report['fit_min_m']}..{report['fit_max_m']} m")
    rows = [[p["h_tx_m"], p["h_rx_m"], p["tau_m"], p["sigma_m"], p["max_abs_bias_m"]] for p in report["pairs"]]
    print(_table(rows, ["h_tx [m]", "h_rx [m]", "tau_d [m]", "sigma [m]", "max|B| [m]"]))
    print("-" * WIDTH)
    rows = [[case, report[case]["tau"], report[case]["sigma"]] for case in ("average", "worst")]
    print(_table(rows, ["case", "tau [s]", "sigma [m]"]))
    if report.get("degenerate"):
        warn("all bias curves are zero on the fit window; nothing to fit")


def render_bounds(frame: pd.DataFrame, case: str) -> None:
    banner(f"BCRB :: {case}")
    rows = []
    for name, g in frame.groupby("variant", sort=False):
        peb = g["peb_m"].to_numpy()
        rows.append([name, peb[0], float(np.median(peb)), peb[-1], int(g["visible_sats"].min()),
                     int(g["visible_sats"].max())])
    print(_table(rows, ["variant", "PEB start [m]", "PEB median [m]", "PEB end [m]", "min vis", "max vis"]))


def render_link_budget(frame: pd.DataFrame, visibility: pd.DataFrame) -> None:
    banner("LINK BUDGET")
    rows = []
    for sat, g in frame.groupby("sat", sort=False):
        rows.append([sat, len(g), g["elevation_deg"].max(), g["cn0_dbhz"].min(), g["cn0_dbhz"].max(),
                     g["sigma_dll_m"].median(), g["sigma_fll_mps"].median()])
    print(_table(rows, ["sat", "visible epochs", "max el [deg]", "C/N0 min", "C/N0 max",
                        "sigma DLL [m]", "sigma FLL [m/s]"]))
    counts = visibility["visible_sats"].value_counts().sort_index()
    print("-" * WIDTH)
    print(_table([[int(k), int(v)] for k, v in counts.items()], ["visible sats", "epochs"]))


def render_campaign(frame: pd.DataFrame, summary: Dict) -> None:
    banner("MONTE CARLO", f"trials: {summary['trials']} | divergence policy: {summary['divergence_policy']} | "
                          f"runtime: {summary['runtime_s']:.1f}s")
    rows = []
    for name, g in frame.groupby("filter", sort=False):
        gated = g[g["gated"]]
        ratio = (gated["rmse_m"] / gated["bcrb_m"]).median() if len(gated) else float("nan")
        div = summary["divergence_counts"].get(name, 0)
        color = Colors.FAIL if div else Colors.GREEN
        rows.append([name, g["rmse_m"].iloc[-1], gated["rmse_m"].median() if len(gated) else float("nan"), ratio,
                     f"{color}{div}{Colors.ENDC}"])
    print(_table(rows, ["filter", "RMSE end [m]", "RMSE median gated [m]", "RMSE/BCRB", "diverged"]))
    if "nees_in_band_fraction" in summary:
        lo, hi = summary["nees_band"]
        print(f"NEES 95% band [{lo:.2f}, {hi:.2f}]: " + ", ".join(
            f"{k}={v:.0%}" for k, v in summary["nees_in_band_fraction"].items()))


def render_checks(results: List[Tuple[str, bool, str]]) -> bool:
    print("-" * WIDTH)
    passed = True
    for name, good, detail in results:
        if good:
            ok(f"{name}: {detail}")
        else:
            fail(f"{name}: {detail}")
            passed = False
    return passed


# ---------------------------------------------------------------------------
# SVG plots, always drawn from the CSV that was just written
# ---------------------------------------------------------------------------

def _finish(path: str, xlabel: str, ylabel: str, title: str, logy: bool = False, logx: bool = False):
    plt.xlabel(xlabel)
    plt.ylabel(ylabel)
    plt.title(title)
    if logy:
        plt.yscale("log")
    if logx:
        plt.xscale("log")
    plt.grid(True, alpha=0.3)
    plt.legend()
    plt.tight_layout()
    plt.savefig(path, format="svg")
    plt.close()


def plot_bias_curves(csv_paths: Dict[str, str], svg_path: str) -> str:
    plt.figure(figsize=(10, 4.8))
    for label, p in csv_paths.items():
        df = pd.read_csv(p)
        plt.plot(df["d_h_m"], df["bias_m"], linewidth=0.8, label=label)
    _finish(svg_path, "horizontal distance [m]", "ranging bias [m]", "ML ranging bias over two-ray channel",
            logx=True)
    return svg_path


def plot_mse_bound(csv_path: str, svg_path: str) -> str:
    df = pd.read_csv(csv_path)
    plt.figure(figsize=(10, 4.8))
    plt.plot(df["d_h_m"], np.sqrt(df["crb_m2"]), label="sqrt CRB")
    plt.plot(df["d_h_m"], np.sqrt(df["mse_bound_m2"]), label="sqrt MSE bound")
    _finish(svg_path, "horizontal distance [m]", "[m]", "Ranging error bounds", logy=True, logx=True)
    return svg_path


def plot_psd(csv_path: str, svg_path: str) -> str:
    df = pd.read_csv(csv_path)
    plt.figure(figsize=(10, 4.8))
    for col in df.columns:
        if col == "f_hz":
            continue
        style = {"linewidth": 2.0} if col in ("average", "worst") else {"linewidth": 0.7, "alpha": 0.6}
        plt.plot(df["f_hz"], df[col], label=col, **style)
    _finish(svg_path, "frequency [Hz]", "PSD [m^2/Hz]", "GMP-1 cooperative bias PSD", logy=True)
    return svg_path


def plot_peb(csv_path: str, svg_path: str, title: str = "Position error bound") -> str:
    df = pd.read_csv(csv_path)
    plt.figure(figsize=(10, 4.8))
    for name, g in df.groupby("variant", sort=False):
        plt.plot(g["t_s"] / 3600.0, g["peb_m"], label=name)
    _finish(svg_path, "time [h]", "PEB [m]", title, logy=True)
    return svg_path


def plot_visibility(csv_path: str, svg_path: str) -> str:
    df = pd.read_csv(csv_path)
    plt.figure(figsize=(10, 3.5))
    plt.step(df["t_s"] / 3600.0, df["visible_sats"], where="post", label="visible satellites")
    _finish(svg_path, "time [h]", "count", "Satellite visibility")
    return svg_path


def plot_campaign(csv_path: str, svg_path: str, title: str = "Position RMSE") -> str:
    df = pd.read_csv(csv_path)
    plt.figure(figsize=(10, 4.8))
    first = None
    for name, g in df.groupby("filter", sort=False):
        plt.plot(g["t_s"] / 3600.0, g["rmse_m"], label=name)
        first = g if first is None else first
    if first is not None:
        plt.plot(first["t_s"] / 3600.0, first["bcrb_m"], "k--", label="BCRB")
        if "bcrb_worst_m" in first:
            plt.plot(first["t_s"] / 3600.0, first["bcrb_worst_m"], "k:", label="BCRB (worst case)")
    _finish(svg_path, "time [h]", "[m]", title, logy=True)
    return svg_path


def plot_acf(csv_path: str, svg_path: str) -> str:
    df = pd.read_csv(csv_path)
    plt.figure(figsize=(10, 4.8))
    for col in df.columns:
        if col == "lag_m":
            continue
        style = "--" if col.startswith("model") else "-"
        plt.plot(df["lag_m"], df[col], style, linewidth=0.9, label=col)
    _finish(svg_path, "lag [m]", "ACF [m^2]", "Windowed sample ACF and GMP-1 fits")
    return svg_path
