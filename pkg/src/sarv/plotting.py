"""Report figures. Each plot also writes its data as CSV next to the image."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .engine import SaturationResult  # noqa: E402

# fixed metadata keeps image bytes stable between runs
_META = {"Software": None}


def _save(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META if path.suffix == ".png" else None)
    plt.close(fig)


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    out = path.with_suffix(".csv")
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return out


def facts_per_round(result: SaturationResult) -> list[tuple[int, int, int]]:
    """(round, new facts, cumulative facts) for rounds 0..rounds_used."""
    new = [0] * (result.rounds_used + 1)
    for fact in result.memory:
        if fact.first_round < len(new):
            new[fact.first_round] += 1
    rows, total = [], 0
    for r, k in enumerate(new):
        total += k
        rows.append((r, k, total))
    return rows


def plot_lattice_growth(result: SaturationResult, path: str | Path) -> Path:
    path = Path(path)
    rows = facts_per_round(result)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    rounds = [r for r, _, _ in rows]
    ax.bar(rounds, [k for _, k, _ in rows], color="#8fb3d9", label="new facts")
    ax.plot(rounds, [t for _, _, t in rows], color="#1f4e79", marker="o", label="working memory")
    ax.set_xlabel("round")
    ax.set_ylabel("facts")
    ax.set_title(f"Saturation growth ({result.status})")
    ax.legend(loc="upper left")
    fig.tight_layout()
    _save(fig, path)
    _write_rows(path, ["round", "new_facts", "total_facts"], rows)
    return path


def plot_fit_trace(traces: Sequence[Sequence[float]], path: str | Path) -> Path:
    """Best-so-far fitness per iteration, one line per restart."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for k, trace in enumerate(traces):
        ax.plot(range(len(trace)), trace, label=f"restart {k + 1}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("fitness")
    ax.set_title("Hill-climbing trace")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
    rows = [(k + 1, i, f) for k, trace in enumerate(traces) for i, f in enumerate(trace)]
    _write_rows(path, ["restart", "iteration", "fitness"], rows)
    return path


def plot_metrics(metrics: dict, path: str | Path) -> Path:
    path = Path(path)
    names = ["accuracy", "precision", "recall", "f1", "baseline_accuracy"]
    values = [metrics[n] for n in names]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    colors = ["#1f4e79"] * 4 + ["#b0b0b0"]
    ax.bar(names, values, color=colors)
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    ax.set_title(f"Qualifier vs. majority baseline (n={metrics['n']})")
    for i, v in enumerate(values):
        ax.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    _write_rows(path, ["metric", "value"], list(zip(names, values)))
    return path
