import argparse
import copy
import logging
import os
import sys
from typing import List, Optional

from lunar_pnt.app import renderer
from lunar_pnt.app.orchestrator import StudyOrchestrator
from lunar_pnt.app.persistence import RunRecorder
from lunar_pnt.domain.errors import ConfigError, FitError, NumericalError
from lunar_pnt.infra.config import (
    BOUNDS_CASES,
    DEFAULT_CONFIG,
    SIMULATE_CASES,
    apply_cli_overrides,
    load_config,
    resolve_paths,
    validate_config,
    write_config_template,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CHECK = 4

PROFILES = ("reference_defaults",)

logger = logging.getLogger("lunar_pnt")


def _common(p: argparse.ArgumentParser, with_campaign: bool = False):
    p.add_argument("--config", type=str, default=None, help="Config path (default: ./config/config.yaml)")
    p.add_argument("--profile", type=str, default=None, choices=PROFILES,
                   help="Ignore the config file and use a built-in profile")
    p.add_argument("--out", type=str, default=None, help="Output directory (default: <paths.out_dir>/<command>)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--check", action="store_true", help="Run acceptance checks; exit 4 if any fails")
    p.add_argument("--log-level", type=str, default=None, help="DEBUG, INFO, WARNING (default from config)")
    p.add_argument("--full-horizon", action="store_true", help="Use the full 12 h horizon instead of the 2 h window")
    if with_campaign:
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--workers", type=int, default=None, help="Parallel trial processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser("lunar-pnt", description="Hybrid lunar PNT simulation and bounds")
    sub = parser.add_subparsers(dest="cmd", required=True)

    # ---------- initconfig ----------
    p_init = sub.add_parser("initconfig", help="Write the default config (reference_defaults) as a template")
    p_init.add_argument("--path", type=str, default=None, help="Output path (default: ./config/config.yaml)")
    p_init.add_argument("--force", action="store_true", help="Overwrite if exists")

    # ---------- fit-coop ----------
    p_fit = sub.add_parser("fit-coop", help="Bias curves, ACF fits and average/worst-case GMP-1 parameters")
    _common(p_fit)

    # ---------- bounds ----------
    p_bounds = sub.add_parser("bounds", help="Position error bound curves for a case study")
    _common(p_bounds)
    p_bounds.add_argument("--case", type=str, default=None, choices=BOUNDS_CASES,
                          help="Case study (default: all of them)")

    # ---------- simulate ----------
    p_sim = sub.add_parser("simulate", help="Monte Carlo filter campaign with BCRB overlay")
    _common(p_sim, with_campaign=True)
    p_sim.add_argument("--case", type=str, default=None, choices=SIMULATE_CASES,
                       help="Campaign case (default: campaign.case)")

    # ---------- link-budget ----------
    p_lb = sub.add_parser("link-budget", help="Elevation, C/N0, DLL/FLL noise and visibility series")
    _common(p_lb)

    # ---------- pipeline ----------
    p_all = sub.add_parser("pipeline", help="Every study with the config defaults")
    _common(p_all, with_campaign=True)
    return parser


def _setup_logging(level: Optional[str], cfg_level: str):
    name = (level or cfg_level or "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _load(args, root: str):
    if getattr(args, "profile", None) == "reference_defaults":
        cfg_path = None
        cfg = copy.deepcopy(DEFAULT_CONFIG)
    else:
        cfg_path = args.config or os.path.join(root, "config", "config.yaml")
        cfg = load_config(cfg_path, DEFAULT_CONFIG)
    cfg = apply_cli_overrides(cfg, args)
    cfg = resolve_paths(cfg, root)
    return cfg, cfg_path


def _out_dir(args, cfg, name: str) -> str:
    return args.out or os.path.join(cfg["paths"]["out_dir"], name)


def _run_study(args, cfg, cfg_path, root: str, name: str, out: str, fn) -> bool:
    seed = int(cfg.get("campaign", {}).get("seed", 0))
    with RunRecorder(name, out, cfg, config_path=cfg_path, seed=seed) as rec:
        checks = fn(StudyOrchestrator(cfg, root, rec))
        passed = renderer.render_checks(checks) if args.check else True
        rec.close("ok" if passed else "check_failed")
    renderer.ok(f"Wrote {name} outputs: {out}")
    return passed


def _fit_coop(o: StudyOrchestrator):
    report, checks = o.fit_coop()
    renderer.render_fit_report(report)
    return checks


def _bounds(cases):
    def run(o: StudyOrchestrator):
        checks = []
        for case in cases:
            frame, c = o.bounds(case)
            renderer.render_bounds(frame, case)
            checks += c
        return checks
    return run


def _link_budget(o: StudyOrchestrator):
    return o.link_budget()[1]


def _simulate(case: str):
    def run(o: StudyOrchestrator):
        return o.simulate(case)[1]
    return run


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    # cli.py -> app -> lunar_pnt -> src -> project_root
    root = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", ".."))

    # ==========================================
    # 1. initconfig
    # ==========================================
    if args.cmd == "initconfig":
        out = args.path or os.path.join(root, "config", "config.yaml")
        if write_config_template(out, DEFAULT_CONFIG, overwrite=args.force):
            renderer.ok(f"Wrote config template: {out}")
        else:
            renderer.warn(f"Config exists, kept (use --force): {out}")
        return EXIT_OK

    try:
        cfg, cfg_path = _load(args, root)
        _setup_logging(args.log_level, cfg.get("runtime", {}).get("log_level", "WARNING"))
        # fail before any output is written
        validate_config(cfg, root)

        # ==========================================
        # 2. studies
        # ==========================================
        if args.cmd == "fit-coop":
            passed = _run_study(args, cfg, cfg_path, root, "fit-coop", _out_dir(args, cfg, "fit-coop"), _fit_coop)

        elif args.cmd == "bounds":
            cases = [args.case] if args.case else list(BOUNDS_CASES)
            name = f"bounds-{args.case}" if args.case else "bounds"
            passed = _run_study(args, cfg, cfg_path, root, "bounds", _out_dir(args, cfg, name), _bounds(cases))

        elif args.cmd == "link-budget":
            passed = _run_study(args, cfg, cfg_path, root, "link-budget", _out_dir(args, cfg, "link-budget"),
                                _link_budget)

        elif args.cmd == "simulate":
            case = args.case or str(cfg.get("campaign", {}).get("case", "hybrid"))
            passed = _run_study(args, cfg, cfg_path, root, "simulate", _out_dir(args, cfg, f"simulate-{case}"),
                                _simulate(case))

        elif args.cmd == "pipeline":
            base = args.out or cfg["paths"]["out_dir"]
            steps = [
                ("fit-coop", _fit_coop),
                ("link-budget", _link_budget),
                ("bounds", _bounds(BOUNDS_CASES)),
                ("simulate", _simulate(str(cfg.get("campaign", {}).get("case", "hybrid")))),
            ]
            passed = True
            for name, fn in steps:
                passed &= _run_study(args, cfg, cfg_path, root, name, os.path.join(base, name), fn)

        else:
            parser.error(f"unknown command {args.cmd}")
            return EXIT_CONFIG

    except ConfigError as e:
        renderer.fail(f"Config error: {e}")
        return EXIT_CONFIG
    except (NumericalError, FitError) as e:
        renderer.fail(f"Numerical failure: {e}")
        logger.debug("numerical failure", exc_info=True)
        return EXIT_NUMERICAL

    if not passed:
        renderer.fail("Acceptance checks failed")
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
