from __future__ import annotations

import hashlib
import json
import logging
import os
from datetime import datetime
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)

# bump when the stored fit records change shape; older files are discarded
CACHE_SCHEMA = 1


def config_digest(section: Any) -> str:
    """Stable hash of a config section; key for cached results computed from it."""
    blob = json.dumps(section, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


class JsonResultCache:
    """
    JSON store for deterministic results that are slow to recompute (fitted
    cooperative bias parameters). Entries are keyed by the digest of their
    inputs, so a changed config misses instead of returning stale values.
    """

    def __init__(self, path: str):
        self.path = path
        self._entries: Dict[str, Dict[str, Any]] = {}
        self._read()

    def _read(self):
        if not os.path.exists(self.path):
            return
        try:
            with open(self.path, "r", encoding="utf-8") as f:
                blob = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.warning("ignoring unreadable cache %s (%s)", self.path, e)
            return
        if not isinstance(blob, dict) or blob.get("schema") != CACHE_SCHEMA:
            logger.info("cache %s has another schema, starting empty", self.path)
            return
        entries = blob.get("entries")
        if isinstance(entries, dict):
            self._entries = {k: v for k, v in entries.items() if isinstance(v, dict) and "value" in v}

    def _flush(self):
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as f:
            json.dump({"schema": CACHE_SCHEMA, "entries": self._entries}, f, indent=2)

    def keys(self) -> List[str]:
        return sorted(self._entries)

    def get(self, key: str) -> Optional[dict]:
        entry = self._entries.get(key)
        return None if entry is None else entry["value"]

    def set(self, key: str, value: dict) -> None:
        self._entries[key] = {"value": value, "saved": datetime.now().strftime("%Y-%m-%d %H:%M:%S")}
        self._flush()
        logger.debug("cached %s in %s", key, self.path)
