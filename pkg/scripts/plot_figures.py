"""
Render the figures of a finished run from its CSV tables.

    python scripts/plot_figures.py runs/synthetic_sanity-<hash> [--format pdf]

Only tables present in the run directory are plotted.
"""
import argparse
import sys
from pathlib import Path

import matplotlib as mpl

mpl.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
COLUMN_WIDTH_IN = 3.4

rc_params = {
    "axes.labelsize": 9,
    "font.size": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "font.family": "serif",
    "figure.figsize": [COLUMN_WIDTH_IN, COLUMN_WIDTH_IN * GOLDEN],
    "savefig.bbox": "tight",
}
mpl.rcParams.update(rc_params)

METHOD_COLORS = {"standard": "0.35", "isotropic": "tab:orange", "dtr": "tab:blue"}


def bound_scatter(frame: pd.DataFrame, out: Path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(2 * COLUMN_WIDTH_IN, COLUMN_WIDTH_IN * GOLDEN), sharey=True)
    for ax, column, label in zip(axes, ("poincare_rhs", "jv_rhs"), ("Poincaré bound", "Jacobian-velocity bound")):
        for method, group in frame.groupby("method"):
            ax.scatter(group[column], group["volatility"], s=10, alpha=0.7, color=METHOD_COLORS.get(method), label=method)
        upper = float(np.nanmax(frame[[column, "volatility"]].to_numpy()))
        ax.plot([0.0, upper], [0.0, upper], color="k", linewidth=0.7, linestyle="--")
        ax.set_xlabel(label)
    axes[0].set_ylabel("volatility")
    axes[0].legend(frameon=False)
    fig.savefig(out)
    plt.close(fig)
    return out


def ratio_bars(frame: pd.DataFrame, out: Path) -> Path:
    panels = list(frame["panel"].unique())
    fig, axes = plt.subplots(1, len(panels), figsize=(len(panels) * COLUMN_WIDTH_IN, COLUMN_WIDTH_IN * GOLDEN), squeeze=False)
    for ax, panel in zip(axes[0], panels):
        table = frame[frame["panel"] == panel].pivot(index="label", columns="metric", values="ratio")
        table.plot.bar(ax=ax, rot=0, width=0.8)
        ax.axhline(1.0, color="k", linewidth=0.7)
        ax.set_ylabel("ratio")
        ax.set_xlabel("")
        ax.set_title(panel.replace("_", " "))
        ax.legend(frameon=False)
    fig.savefig(out)
    plt.close(fig)
    return out


def risk_curves(frame: pd.DataFrame, out: Path) -> Path:
    fig, ax = plt.subplots()
    strongest = frame["lambda"].max()
    for (method, lam), group in frame.groupby(["method", "lambda"]):
        curve = group.groupby("time")["risk"].mean()
        emphasised = lam == 0.0 or lam == strongest
        ax.plot(curve.index, curve.to_numpy(), color=METHOD_COLORS.get(method), alpha=1.0 if emphasised else 0.35, linewidth=1.0, label=f"{method} λ={lam:g}")
    ax.set_xlabel("deployment time")
    ax.set_ylabel("risk")
    ax.legend(frameon=False, ncol=2)
    fig.savefig(out)
    plt.close(fig)
    return out


PLOTS = {
    "fig2_scatter.csv": ("bound_scatter", bound_scatter),
    "fig3_ratios.csv": ("ratios", ratio_bars),
    "fig4_risk_curves.csv": ("risk_curves", risk_curves),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("run_dir")
    parser.add_argument("--format", default="pdf", choices=["pdf", "png", "svg"])
    args = parser.parse_args(argv)

    run_dir = Path(args.run_dir)
    figures = run_dir / "figures"
    figures.mkdir(parents=True, exist_ok=True)
    written = 0
    for table, (stem, plot) in PLOTS.items():
        path = run_dir / table
        if not path.is_file():
            continue
        print(plot(pd.read_csv(path), figures / f"{stem}.{args.format}"))
        written += 1
    if not written:
        print(f"no figure tables in {run_dir}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
