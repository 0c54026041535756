"""
Output writer met atomic persistence.

Provides:
- Trace CSV, summary JSON en config JSON schrijven
- Atomic writes (temp file + fsync + rename): een half geschreven bestand
  vervangt nooit een bestaand resultaat
- Optioneel een matplotlib script naast de CSV
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from typing import Any, Callable, Dict, TextIO

logger = logging.getLogger(__name__)

OUT_DIR = os.getenv("CONSENSUS_OUT_DIR", "./runs")


def output_dir(override: str | None = None) -> str:
    """Output directory: expliciete override, anders ``CONSENSUS_OUT_DIR``."""
    path = os.path.abspath(override or os.getenv("CONSENSUS_OUT_DIR", OUT_DIR))
    os.makedirs(path, exist_ok=True)
    return path


def _safe_name(name: str) -> str:
    # Sanitize to avoid directory traversal
    return name.replace("/", "_").replace("\\", "_").replace("..", "_")


def run_paths(out_dir: str, name: str) -> Dict[str, str]:
    base = os.path.join(out_dir, _safe_name(name))
    return {
        "csv": f"{base}_trace.csv",
        "summary": f"{base}_summary.json",
        "plot": f"{base}_plot.py",
    }


def atomic_write(path: str, writer: Callable[[TextIO], None], suffix: str = ".tmp") -> str:
    """
    Schrijf via ``writer`` naar een temp file in dezelfde directory, fsync, rename.

    Args:
        path: doelbestand
        writer: callable die de inhoud naar de open file schrijft
        suffix: suffix van het temp bestand

    Returns:
        Absoluut pad van het geschreven bestand
    """
    path = os.path.abspath(path)
    directory = os.path.dirname(path)
    os.makedirs(directory, exist_ok=True)

    temp_fd, temp_path = tempfile.mkstemp(suffix=suffix, dir=directory)
    try:
        with os.fdopen(temp_fd, "w", encoding="utf-8", newline="") as f:
            writer(f)
            f.flush()
            os.fsync(f.fileno())
        os.replace(temp_path, path)
    except Exception as e:
        logger.error(f"[OutputWriter] Failed to write {path}: {e}")
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise
    logger.debug(f"[OutputWriter] Saved atomically: {path}")
    return path


def write_json(data: Dict[str, Any], path: str) -> str:
    def _dump(f: TextIO) -> None:
        json.dump(data, f, indent=2, sort_keys=False)
        f.write("\n")
    return atomic_write(path, _dump, suffix=".json.tmp")


def write_trace_csv(trace, path: str) -> str:
    """``trace`` is een ``sim.SimulationTrace``."""
    frame = trace.to_dataframe()
    written = atomic_write(path, lambda f: frame.to_csv(f, index=False, float_format="%.10g"), suffix=".csv.tmp")
    logger.info(f"[OutputWriter] Trace with {len(frame)} rows written to {written}")
    return written


def write_summary(summary, path: str) -> str:
    """``summary`` is een ``sim.ConsensusSummary``."""
    return write_json(summary.to_dict(), path)


_PLOT_TEMPLATE = '''"""Plot script for {csv_name} (generated)."""
import matplotlib.pyplot as plt
import pandas as pd

df = pd.read_csv({csv_path!r})
n = {n}
fig, axes = plt.subplots(3, 2, figsize=(11, 9), sharex=True)
for i in range(1, n + 1):
    for joint in (1, 2):
        axes[0][joint - 1].plot(df["t"], df[f"q{{i}}_{{joint}}"], label=f"agent {{i}}")
        axes[1][joint - 1].plot(df["t"], df[f"qd{{i}}_{{joint}}"])
    axes[2][0].plot(df["t"], df[f"dhat{{i}}"])
    axes[2][1].plot(df["t"], df[f"khat{{i}}"])
axes[0][0].set_ylabel("q_1 (rad)")
axes[0][1].set_ylabel("q_2 (rad)")
axes[1][0].set_ylabel("qdot_1 (rad/s)")
axes[1][1].set_ylabel("qdot_2 (rad/s)")
axes[2][0].set_ylabel("d_hat")
axes[2][1].set_ylabel("k_hat")
for ax in axes[-1]:
    ax.set_xlabel("t (s)")
axes[0][0].legend(fontsize="small")
fig.tight_layout()
plt.show()
'''


def write_plot_script(csv_path: str, n_agents: int, path: str) -> str:
    text = _PLOT_TEMPLATE.format(
        csv_name=os.path.basename(csv_path),
        csv_path=os.path.abspath(csv_path),
        n=n_agents,
    )
    return atomic_write(path, lambda f: f.write(text), suffix=".py.tmp")
