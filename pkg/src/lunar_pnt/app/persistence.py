from __future__ import annotations

import json
import logging
import os
from datetime import datetime
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from lunar_pnt import __version__
from lunar_pnt.domain.models import RunManifest

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def _now() -> str:
    return datetime.now().strftime("%Y-%m-%d %H:%M:%S")


def _jsonable(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return str(obj)


class RunRecorder:
    """
    Owns one output directory. The manifest is written when the run starts
    and rewritten with the end timestamp and produced files when it closes.
    """

    def __init__(self, command: str, out_dir: str, cfg: Dict[str, Any], config_path: Optional[str] = None,
                 seed: int = 0):
        self.out_dir = os.path.abspath(out_dir)
        os.makedirs(self.out_dir, exist_ok=True)
        self.manifest = RunManifest(
            command=command,
            config_path=config_path,
            config_snapshot=cfg,
            seed=int(seed),
            version=__version__,
            out_dir=self.out_dir,
            started=_now(),
        )
        self._write_manifest()

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def _track(self, name: str) -> str:
        if name not in self.manifest.files:
            self.manifest.files.append(name)
        return self.path(name)

    def _write_manifest(self):
        with open(self.path(MANIFEST), "w", encoding="utf-8") as f:
            json.dump(self.manifest.to_dict(), f, indent=2, default=_jsonable)

    def write_csv(self, name: str, df: pd.DataFrame) -> str:
        out = self._track(name)
        df.to_csv(out, index=False)
        logger.info("wrote %s (%d rows)", out, len(df))
        return out

    def write_json(self, name: str, payload: Dict[str, Any]) -> str:
        out = self._track(name)
        with open(out, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, default=_jsonable)
        logger.info("wrote %s", out)
        return out

    def add_file(self, name: str) -> str:
        """Registers a file produced by someone else (plots)."""
        return self._track(name)

    def close(self, status: str = "ok") -> RunManifest:
        self.manifest.finished = _now()
        self.manifest.status = status
        self._write_manifest()
        return self.manifest

    def __enter__(self) -> "RunRecorder":
        return self

    def __exit__(self, exc_type, exc, tb):
        if self.manifest.finished is None:
            self.close("failed" if exc_type else "ok")
        return False


def read_manifest(out_dir: str) -> Dict[str, Any]:
    with open(os.path.join(out_dir, MANIFEST), "r", encoding="utf-8") as f:
        return json.load(f)
