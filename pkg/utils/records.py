"""Key-value text records for fits, validation reports and run manifests."""

from __future__ import annotations

import json
import platform
from collections.abc import MutableMapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict

import numpy as np

TOOL_NAME = "rotorsuite"
TOOL_VERSION = "0.3.0"


def flatten_record(data: Any, parent_key: str = "", sep: str = ".") -> Dict[str, Any]:
    """Return a flat dict with dotted keys from a nested mapping."""
    items = {}
    if isinstance(data, MutableMapping):
        for k, v in data.items():
            new_key = f"{parent_key}{sep}{k}" if parent_key else str(k)
            if isinstance(v, MutableMapping):
                items.update(flatten_record(v, new_key, sep=sep))
            else:
                items[new_key] = v
    else:
        items[parent_key] = data
    return items


def format_value(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return json.dumps([float(v) if isinstance(v, (float, np.floating)) else v for v in np.asarray(value).tolist()])
    if value is None:
        return ""
    return str(value)


def dump_record(data: Dict[str, Any]) -> str:
    """Serialize ``data`` as ``key = value`` lines in insertion order."""
    flat = flatten_record(data)
    return "".join(f"{key} = {format_value(value)}\n" for key, value in flat.items())


def write_record(path, data: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_record(data))
    return path


def read_record(path) -> Dict[str, str]:
    """Return the raw ``key -> value`` strings of a record file."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.lstrip().startswith("#") or "=" not in line:
            continue
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunManifest:
    """Everything needed to repeat a run: config echo, version, seed and diagnostics."""

    command: str
    config: list
    seed: int
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    started_at: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat()
    )
    wall_time_s: float = 0.0

    def as_record(self) -> Dict[str, Any]:
        return {
            "tool": {
                "name": TOOL_NAME,
                "version": TOOL_VERSION,
                "python": platform.python_version(),
                "numpy": np.__version__,
            },
            "run": {
                "command": self.command,
                "seed": self.seed,
                "started_at": self.started_at,
                "wall_time_s": round(self.wall_time_s, 3),
            },
            "config": dict(self.config),
            "diagnostics": self.diagnostics,
        }

    def write(self, path) -> Path:
        return write_record(path, self.as_record())
