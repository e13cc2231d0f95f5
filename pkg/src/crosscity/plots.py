"""Figure rendering for the report path: PNGs next to the CSVs."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from pathlib import Path  # noqa: E402


def render_method_comparison(table_rows, path):
    """Grouped bars of mean RMSE per method, one group per
    (scenario, history)."""
    groups = sorted({(r.scenario, r.history) for r in table_rows})
    methods = sorted({r.method for r in table_rows})
    fig, ax = plt.subplots(figsize=(1.8 * len(groups) + 3, 4))
    width = 0.8 / max(len(methods), 1)
    x = np.arange(len(groups))
    for m, method in enumerate(methods):
        heights = []
        for scenario, history in groups:
            vals = [r.rmse_avg for r in table_rows
                    if (r.scenario, r.history, r.method) ==
                    (scenario, history, method)]
            heights.append(np.mean(vals) if vals else np.nan)
        ax.bar(x + m * width, heights, width, label=method)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels([f"{s}\n({h} frames)" for s, h in groups], fontsize=8)
    ax.set_ylabel("mean test RMSE (raw units)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render_w_sweep(sweep_rows, path):
    """Mean RMSE vs trade-off weight, one line per history length."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for history in sorted({r.history for r in sweep_rows}):
        ws = sorted({r.w for r in sweep_rows if r.history == history})
        means = [np.mean([r.rmse_avg for r in sweep_rows
                          if r.history == history and r.w == w])
                 for w in ws]
        ax.plot(ws, means, marker="o", label=f"{history} frames")
    ax.set_xlabel("trade-off weight w")
    ax.set_ylabel("mean test RMSE (raw units)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render_training_curve(report, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(report.pred_losses, label="prediction")
    if any(v > 0 for v in report.rep_losses):
        ax.plot(report.rep_losses, label="representation")
        ax.plot(report.combined_losses, label="combined")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
