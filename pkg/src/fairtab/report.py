"""Figure rendering for experiment output.

Renders the threshold-sweep curves and marginal-divergence summaries to
PNG files next to the CSV output.  Figures are written with fixed
metadata and no timestamps, so a rerun of the same experiment produces
byte-identical images.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import ARMS, ExperimentResult, MarginalComparison

_PNG_META = {"Software": "fairtab"}
_ARM_STYLE = {"before": "--", "after": "-"}
_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd")


def _save(fig, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return str(path)


def render_curve_figures(result: ExperimentResult, out_dir) -> list[str]:
    """One BA-vs-threshold and one AOD-vs-threshold figure per increment,
    with a line per classifier and arm (dashed = unweighted, solid =
    reweighted)."""
    out_dir = Path(out_dir)
    written: list[str] = []
    for n in result.increments:
        for series_index, series_name in ((1, "BA"), (2, "AOD")):
            fig, ax = plt.subplots(figsize=(7.0, 4.5))
            any_line = False
            for v, variant in enumerate(result.roster):
                color = _COLORS[v % len(_COLORS)]
                for arm in ARMS:
                    try:
                        cell = result.cell(n, variant, arm)
                    except KeyError:
                        continue
                    if not cell.curve:
                        continue
                    xs = [row[0] for row in cell.curve]
                    ys = [row[series_index] for row in cell.curve]
                    ax.plot(xs, ys, _ARM_STYLE[arm], color=color,
                            linewidth=1.4, label=f"{variant} {arm}")
                    any_line = True
            if series_name == "AOD":
                ax.axhline(0.0, color="0.6", linewidth=0.8)
                ax.axhspan(-0.10, 0.10, color="0.9", zorder=0)
            ax.set_xlabel("decision threshold")
            ax.set_ylabel(series_name)
            ax.set_title(f"{series_name} across thresholds, +{n} synthetic rows")
            if any_line:
                ax.legend(fontsize=7, ncol=2, frameon=False)
            written.append(_save(fig, out_dir / f"{series_name.lower()}_increment_{n}.png"))
    return written


def render_marginal_figure(comparison: MarginalComparison, path) -> str:
    """Bar chart of per-column divergences: total variation for
    categorical columns, histogram distance for numerical ones."""
    names, values, kinds = [], [], []
    for col in comparison.columns:
        names.append(col.name)
        kinds.append(col.kind)
        if col.total_variation is not None:
            values.append(col.total_variation)
        else:
            values.append(col.histogram_distance or 0.0)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(names) + 1.5), 4.0))
    colors = ["#1f77b4" if k == "numerical" else "#ff7f0e" for k in kinds]
    ax.bar(range(len(names)), values, color=colors)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("divergence from original")
    ax.set_ylim(0.0, max(1.0, max(values) if values else 1.0))
    ax.set_title("synthetic vs original marginals")
    return _save(fig, path)
