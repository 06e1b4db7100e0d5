"""Figure rendering for the report files.

Each delimited output has a figure twin: rounds.csv -> rounds.png,
curve.csv -> curve.png, table.csv -> table.png.  The CSV stays the
canonical interface; figures are a convenience view of the same data.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_rounds(records, configs, path) -> None:
    """Reward per arm across tuning rounds; pruned arms get an x marker."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    by_arm: dict[int, list[tuple[int, float]]] = {}
    pruned_at: dict[int, int] = {}
    for rec in records:
        for arm_id, _, reward in rec.entries:
            by_arm.setdefault(arm_id, []).append((rec.round_index, reward))
        for arm_id in rec.pruned:
            pruned_at[arm_id] = rec.round_index
    for arm_id, points in sorted(by_arm.items()):
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        config = configs[arm_id]
        label = (f"arm {arm_id}: log10(h)={math.log10(config.step_size):g}, "
                 f"tau={config.batch_fraction:g}")
        line, = ax.plot(xs, ys, marker="o", lw=1.2, ms=4,
                        label=label if len(by_arm) <= 12 else None)
        if arm_id in pruned_at:
            ax.plot([xs[-1]], [ys[-1]], marker="x", ms=9, mew=2,
                    color=line.get_color())
    ax.set_xlabel("round")
    ax.set_ylabel("reward (negative discrepancy)")
    ax.set_title("successive-halving rounds")
    if len(by_arm) <= 12:
        ax.legend(fontsize=7, loc="best")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_curve(band, path) -> None:
    """Mean metric trajectory with its 2-sigma band, log-log axes."""
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    ax.plot(band.checkpoints, band.mean, marker="o", lw=1.5,
            label=f"mean over {band.repeats} runs")
    ax.fill_between(band.checkpoints, band.lower, band.upper, alpha=0.25,
                    label="+/- 2 std")
    ax.set_xscale("log")
    if (band.mean > 0).all():
        ax.set_yscale("log")
    ax.set_xlabel("budget")
    ax.set_ylabel(band.label.upper())
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_table(cells, path) -> None:
    """Bar chart of final discrepancy per tuner."""
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    names = [cell.tuner for cell in cells]
    values = [cell.ksd if cell.ksd is not None else float("nan")
              for cell in cells]
    ax.bar(names, values, color="tab:blue", alpha=0.8)
    ax.set_ylabel("final KSD")
    ax.set_title(f"tuning methods ({cells[0].sampler})" if cells else "tuning methods")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
