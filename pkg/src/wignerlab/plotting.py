"""Figure rendering for experiment series (PNG files next to the CSVs)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["figure.figsize"] = (6.0, 3.8)
plt.rcParams["font.size"] = 9
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3


def _loglog(name):
    return name in ("residuals",) or name.startswith("p99_")


def render_series(name, series, path, experiment=""):
    """Render one series dict {columns, rows} to a PNG file."""
    cols = series["columns"]
    rows = np.asarray(series["rows"], dtype=float)
    fig, ax = plt.subplots()
    if rows.size == 0:
        ax.set_title(f"{experiment}: {name} (empty)")
        fig.savefig(path, dpi=110)
        plt.close(fig)
        return
    x = rows[:, 0]
    if name == "exceedance":
        # grouped by N: probability vs c with error bars
        for n in sorted(set(rows[:, 0])):
            sel = rows[rows[:, 0] == n]
            ax.errorbar(sel[:, 1], sel[:, 2], yerr=sel[:, 3], marker="o",
                        capsize=2, label=f"N={int(n)}")
        ax.set_xlabel("c")
        ax.set_ylabel("exceedance probability")
        ax.legend()
    elif name == "moments":
        for order in sorted(set(rows[:, 1])):
            sel = rows[rows[:, 1] == order]
            ax.plot(sel[:, 0], sel[:, 2], marker="o", label=f"moment {int(order)}")
            ax.hlines(sel[0, 3], sel[:, 0].min(), sel[:, 0].max(),
                      linestyles="dashed", color="gray")
        ax.set_xlabel("bulk index k")
        ax.set_ylabel("normalized moment")
        ax.set_yscale("log")
        ax.legend()
    else:
        for j in range(1, rows.shape[1]):
            ax.plot(x, rows[:, j], marker="." if rows.shape[0] < 200 else None,
                    lw=1.0, label=cols[j])
        if _loglog(name):
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.set_xlabel(cols[0])
        if rows.shape[1] > 2:
            ax.legend()
        else:
            ax.set_ylabel(cols[1])
    ax.set_title(f"{experiment}: {name}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_report(report, outdir):
    """Render every series of a report; returns the list of files written."""
    written = []
    for name in sorted(report.series):
        path = f"{outdir}/{name}.png"
        render_series(name, report.series[name], path, report.experiment)
        written.append(path)
    return written
