"""Success-rate-versus-drift line charts (SVG) plus the table behind them."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evalharness import MetricsSummary, format_value  # noqa: E402

FAMILIES = (("dm", "movement drift d_m (m)"), ("dr", "rotation drift d_r (deg)"))


def drift_families(summary: MetricsSummary) -> dict[str, list[dict]]:
    """Split cells into the movement sweep (d_r = 0) and the rotation sweep (d_m = 0)."""
    fam = {"dm": [], "dr": []}
    for c in summary.cells:
        if c["drift_dr"] == 0 and c["drift_dm"] != 0:
            fam["dm"].append(c)
        elif c["drift_dm"] == 0:
            fam["dr"].append(c)
    return {k: sorted(v, key=lambda c: c[f"drift_{k}"]) for k, v in fam.items() if v}


def _grid(summary: MetricsSummary) -> list[tuple[float, float]]:
    return sorted((c["drift_dm"], c["drift_dr"]) for c in summary.cells)


def plot_summaries(summaries: list[MetricsSummary], labels: list[str], out_path: str | Path,
                   metric: str = "sr") -> tuple[Path, Path]:
    """Write ``out_path`` (SVG) and a sibling ``.csv`` table; returns both paths."""
    if not summaries:
        raise ValueError("nothing to plot")
    if len(labels) != len(summaries):
        raise ValueError("one label per summary required")
    grid = _grid(summaries[0])
    for s, lab in zip(summaries[1:], labels[1:]):
        if _grid(s) != grid:
            raise ValueError(f"summary {lab!r} uses a different drift grid")
    families = drift_families(summaries[0])
    if not families:
        raise ValueError("no movement or rotation sweep in the summary grid")

    plt.rcParams["svg.hashsalt"] = "aap"
    fig, axes = plt.subplots(1, len(families), figsize=(5.5 * len(families), 4), squeeze=False)
    rows = []
    for ax, (key, title) in zip(axes[0], [f for f in FAMILIES if f[0] in families]):
        for s, lab in zip(summaries, labels):
            cells = drift_families(s)[key]
            xs = [c[f"drift_{key}"] for c in cells]
            mu = [c[f"{metric}_mean"] for c in cells]
            sd = [c[f"{metric}_std"] for c in cells]
            line, = ax.plot(xs, mu, marker="o", label=lab)
            ax.fill_between(xs, [m - d for m, d in zip(mu, sd)], [m + d for m, d in zip(mu, sd)],
                            color=line.get_color(), alpha=0.2, linewidth=0)
            rows.extend((lab, key, c[f"drift_{key}"], c[f"{metric}_mean"], c[f"{metric}_std"])
                        for c in cells)
        ax.set_xticks(xs)
        ax.set_xticklabels([f"{x:g}" for x in xs], rotation=45)
        ax.set_xlabel(title)
        ax.set_ylabel(metric.upper())
        if metric in ("sr", "spl", "soft_spl", "adr"):
            ax.set_ylim(-0.02, 1.02)
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "family", "drift", f"{metric}_mean", f"{metric}_std"])
    for lab, key, x, m, s in rows:
        w.writerow([lab, key, format_value(x), format_value(m), format_value(s)])
    table = out_path.with_suffix(".csv")
    table.write_text(buf.getvalue())
    return out_path, table
