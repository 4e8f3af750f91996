"""Deterministic SVG figures for experiment reports."""
from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "hwtune", "svg.fonttype": "none", "font.size": 8,
       "path.simplify": False}
_METADATA = {"Date": None, "Creator": "hwtune"}
_COLORS = {"baseline": "#888888", "enhanced": "#1f77b4"}


@contextmanager
def _figure(width: float, height: float):
    with plt.rc_context(_RC):
        fig = plt.figure(figsize=(width, height))
        try:
            yield fig
        finally:
            plt.close(fig)


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_METADATA)
    return path


def boxplot_svg(report, path: str | Path) -> Path:
    """Trials-to-best box plot, one box per (workload, mode)."""
    from .harness import box_gid

    cells = [c for c in report.cells if c.runs]
    modes = report.modes
    wids = report.workload_ids
    width = len(modes) + 1
    with _figure(max(4.0, 0.55 * len(cells) + 1.5), 3.2) as fig:
        ax = fig.add_subplot()
        for c in cells:
            a = c.aggregate
            pos = wids.index(c.workload_id) * width + modes.index(c.mode)
            art = ax.bxp([{"med": a.median, "q1": a.q1, "q3": a.q3, "whislo": a.whisker_low,
                           "whishi": a.whisker_high, "fliers": list(a.outliers),
                           "label": ""}], positions=[pos], widths=0.8, patch_artist=True,
                         manage_ticks=False)
            box = art["boxes"][0]
            box.set_facecolor(_COLORS.get(c.mode, "#dddddd"))
            box.set_gid(box_gid(c))
        ax.set_xticks([i * width + (len(modes) - 1) / 2 for i in range(len(wids))], wids)
        ax.set_xlabel("workload")
        ax.set_ylabel("trials to best")
        handles = [plt.Rectangle((0, 0), 1, 1, color=_COLORS.get(m, "#dddddd")) for m in modes]
        ax.legend(handles, modes, loc="upper right")
        fig.tight_layout()
        return _save(fig, Path(path))


def convergence_svg(report, workload_id: str, path: str | Path) -> Path:
    """Best-so-far throughput over trials: median bold, interquartile band shaded."""
    with _figure(4.5, 3.0) as fig:
        ax = fig.add_subplot()
        for mode in report.modes:
            c = report.cell(workload_id, mode)
            if not c.runs:
                continue
            length = max(len(r.convergence_curve) for r in c.runs)
            curves = np.array([[b for _, b in r.convergence_curve]
                               + [r.convergence_curve[-1][1]] * (length - len(r.convergence_curve))
                               for r in c.runs])
            curves = 100.0 * curves / c.best_gflops if c.best_gflops > 0 else curves
            q1, med, q3 = np.percentile(curves, [25, 50, 75], axis=0)
            x = np.arange(1, length + 1)
            color = _COLORS.get(mode, "#444444")
            ax.fill_between(x, q1, q3, color=color, alpha=0.25, linewidth=0)
            ax.plot(x, med, color=color, linewidth=2.0, label=f"{mode} (median)")
        ax.set_xlabel("trial")
        ax.set_ylabel("best so far [% of optimum]")
        ax.set_title(f"workload {workload_id}")
        ax.legend(loc="lower right")
        fig.tight_layout()
        return _save(fig, Path(path))


def study_svg(report, path: str | Path) -> Path:
    """Model-quality metrics against the valid share of the training data."""
    metrics = ("ndcg", "precision", "accuracy_valid_invalid", "accuracy_valid_valid")
    with _figure(8.0, 2.4) as fig:
        axes = fig.subplots(1, len(metrics), sharex=True)
        for ax, name in zip(axes, metrics):
            for s in report.studies:
                for size in sorted({c.sample_size for c in s.cells}):
                    cells = sorted((c for c in s.cells if c.sample_size == size),
                                   key=lambda c: c.ratio)
                    ax.plot([c.ratio for c in cells], [getattr(c, name) for c in cells],
                            marker="o", markersize=2.5, linewidth=1.0,
                            label=f"{s.workload_id} n={size}")
            ax.set_title(name.replace("_", " "))
            ax.set_xlabel("valid ratio of training set")
            ax.set_ylim(0, 1.02)
        axes[0].legend(fontsize=6)
        fig.tight_layout()
        return _save(fig, Path(path))
