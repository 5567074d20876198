# Helper functions shared by the CLI commands
from io import BytesIO
from pathlib import Path

import numpy as np
import pandas as pd

from database import add_log
from utils.observables import AlignmentTrace

CSV_FLOAT_FORMAT = "%.10g"


def _try_read_csv(data: bytes, encodings=None) -> pd.DataFrame:
    """Try reading CSV bytes with a series of encodings."""
    encodings = encodings or ["utf-8", "utf-8-sig", "utf-16", "latin-1"]
    for enc in encodings:
        try:
            return pd.read_csv(BytesIO(data), encoding=enc)
        except Exception:
            continue
    raise ValueError("Unsupported CSV encoding")


def read_trace_csv(path) -> AlignmentTrace:
    """Load a ``delay_ps,value[,stderr]`` trace file."""
    data = Path(path).read_bytes()
    df = _try_read_csv(data)
    df.columns = [str(c).strip() for c in df.columns]
    df = df.apply(pd.to_numeric, errors="coerce").dropna(subset=["delay_ps", "value"])
    return AlignmentTrace.from_frame(df, {"source": str(path)})


def read_scan_csv(path):
    """Load a ``fcfg_ghz,value[,stderr]`` scan file as three arrays."""
    df = _try_read_csv(Path(path).read_bytes())
    df.columns = [str(c).strip() for c in df.columns]
    if not {"fcfg_ghz", "value"}.issubset(df.columns):
        raise ValueError("Scan file needs fcfg_ghz and value columns")
    df = df.apply(pd.to_numeric, errors="coerce").dropna(subset=["fcfg_ghz", "value"])
    stderr = df["stderr"] if "stderr" in df.columns else np.zeros(len(df))
    return (
        df["fcfg_ghz"].to_numpy(float),
        df["value"].to_numpy(float),
        np.asarray(stderr, dtype=float),
    )


def write_csv(df: pd.DataFrame, path) -> Path:
    """Write ``df`` with '.' decimals, no index and '\\n' line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def write_trace(trace: AlignmentTrace, path) -> Path:
    return write_csv(trace.to_frame(), path)


def scan_frame(frequencies, values, stderr) -> pd.DataFrame:
    return pd.DataFrame(
        {"fcfg_ghz": np.asarray(frequencies), "value": values, "stderr": stderr}
    )


def plot_frame(series: dict) -> pd.DataFrame:
    """Return long-format plot data from ``name -> (x, value, stderr)``."""
    frames = []
    for name, (x, value, stderr) in series.items():
        frames.append(
            pd.DataFrame({"series": name, "x": x, "value": value, "stderr": stderr})
        )
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def format_duration(seconds: float) -> str:
    """Return a short human readable duration."""
    if seconds < 60:
        return f"{seconds:.1f} s"
    minutes, secs = divmod(int(round(seconds)), 60)
    return f"{minutes}m {secs:02d}s"


def log_error(message: str) -> None:
    """Record a message in the run log."""
    try:
        add_log(message, level="ERROR")
    except Exception:
        pass
