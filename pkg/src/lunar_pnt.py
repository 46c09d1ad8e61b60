import os
import sys

# make src importable when run as a plain script
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
src_dir = os.path.join(project_root, "src")
if src_dir not in sys.path:
    sys.path.insert(0, src_dir)

from lunar_pnt.app.cli import main  # noqa: E402


def run_full_pipeline() -> int:
    """Every study with the shipped config, outputs under runs/."""
    print("=" * 80)
    print("🌙  LUNAR PNT - FULL PIPELINE")
    print(f"📂 Project Root: {project_root}")
    print("=" * 80)
    return main(["pipeline", "--out", os.path.join(project_root, "runs")])


if __name__ == "__main__":
    # with arguments: one command, as the console script
    # without: the whole pipeline
    if len(sys.argv) > 1:
        sys.exit(main())
    sys.exit(run_full_pipeline())
