# src/lunar_pnt/infra/waypoints.py
from __future__ import annotations

from typing import List, Tuple
import csv
import os


def load_waypoints_csv(path: str) -> List[Tuple[float, float]]:
    """
    Load a rover path from a csv with east,north columns in metres (site ENU).
    Skips:
      - blank lines
      - comment lines starting with # or //
      - a header row (EAST/NORTH, E/N, X/Y)
    Raises ValueError on rows that are not two numbers.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"waypoints csv not found: {path}")

    out: List[Tuple[float, float]] = []
    with open(path, "r", newline="", encoding="utf-8-sig") as f:
        reader = csv.reader(f)
        for lineno, row in enumerate(reader, start=1):
            cells = [c.strip() for c in row if c.strip()]
            if not cells:
                continue
            if cells[0].startswith("#") or cells[0].startswith("//"):
                continue
            if cells[0].upper() in {"EAST", "E", "X"}:
                continue
            if len(cells) < 2:
                raise ValueError(f"{path}:{lineno}: expected east,north")
            try:
                out.append((float(cells[0]), float(cells[1])))
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: not a number ({row})") from e
    return out
