"""PNG figures for experiment results (matplotlib, headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from odaf.mdp import GridMaze  # noqa: E402

COLORS = {
    "odaf": "tab:red",
    "action_support": "tab:blue",
    "state_recovery": "tab:green",
    "behavior_clone": "tab:purple",
    "none": "tab:gray",
    "odaf_no_penalty": "tab:orange",
}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def draw_maze(ax, maze: GridMaze) -> None:
    grid = np.zeros((maze.height, maze.width))
    for cell in maze.walls:
        grid[cell] = 1.0
    ax.imshow(grid, cmap="Greys", vmin=0, vmax=1.4)
    for label, cell in (("S", maze.start), ("G", maze.goal)):
        ax.text(cell[1], cell[0], label, ha="center", va="center", fontsize=12, weight="bold")
    ax.set_xticks([])
    ax.set_yticks([])


def plot_trajectories(maze: GridMaze, runs: list[dict], path: Path, title: str = "") -> Path:
    """One greedy trajectory per method (first seed), offset slightly so overlaps stay visible."""
    fig, ax = plt.subplots(figsize=(5, 5))
    draw_maze(ax, maze)
    seen: dict[str, dict] = {}
    for r in runs:
        seen.setdefault(r["method"], r)
    for i, (method, r) in enumerate(seen.items()):
        cells = np.array([maze.cell_of(s) for s in r["trajectory"]], dtype=float)
        off = (i - len(seen) / 2) * 0.06
        ax.plot(cells[:, 1] + off, cells[:, 0] + off, "-o", ms=3, lw=2, color=COLORS.get(method), label=f"{method} ({r['return_mean']:.0f})")
    ax.legend(loc="upper center", bbox_to_anchor=(0.5, -0.02), ncol=2, fontsize=8)
    ax.set_title(title or "greedy trajectories")
    return _save(fig, path)


def plot_learning_curves(runs: list[dict], path: Path, title: str = "") -> Path:
    """Median evaluated return over seeds against training iteration, per method."""
    fig, ax = plt.subplots(figsize=(6, 4))
    by_method: dict[str, list] = {}
    for r in runs:
        by_method.setdefault(r["method"], []).append(r["_diag"])
    for method, diags in by_method.items():
        x = diags[0].column("iteration")
        y = np.median([d.column("eval_return_mean") for d in diags], axis=0)
        ax.plot(x, y, label=method, color=COLORS.get(method))
    ax.set_xlabel("iteration")
    ax.set_ylabel("evaluated return (median over seeds)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_mix_curve(curve: list[dict], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ratios = [row["ratio"] for row in curve]
    methods = [k for k in curve[0] if k != "ratio"]
    for method in methods:
        med = [row[method]["median"] for row in curve]
        lo = [np.min(row[method]["scores"]) for row in curve]
        hi = [np.max(row[method]["scores"]) for row in curve]
        ax.plot(ratios, med, "-o", label=method, color=COLORS.get(method))
        ax.fill_between(ratios, lo, hi, alpha=0.15, color=COLORS.get(method))
    ax.set_xlabel("proportion of random data")
    ax.set_ylabel("normalized score")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_ablation(tables: dict, path: Path) -> Path:
    fig, axes = plt.subplots(1, len(tables), figsize=(4 * len(tables), 3.5), squeeze=False)
    for ax, (env, t) in zip(axes[0], tables.items()):
        seeds = np.arange(len(t["odaf_returns"]))
        ax.bar(seeds - 0.2, t["odaf_returns"], 0.4, label="with penalty", color=COLORS["odaf"])
        ax.bar(seeds + 0.2, t["ablated_returns"], 0.4, label="without penalty", color=COLORS["odaf_no_penalty"])
        ax.set_xticks(seeds)
        ax.set_xlabel("seed")
        ax.set_ylabel("return")
        ax.set_title(f"{env}: median diff {t['median_difference']:.1f}")
        ax.legend(fontsize=8)
    return _save(fig, path)


def plot_validation(scores: list[dict], path: Path) -> Path:
    inside = [r["score"] for r in scores if r["outcome_in_support"]]
    outside = [r["score"] for r in scores if not r["outcome_in_support"]]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.boxplot([inside, outside], showfliers=True)
    ax.set_xticks([1, 2], ["outcome in support", "outcome out of support"])
    ax.set_yscale("symlog", linthresh=1e-2)
    ax.set_ylabel("validation score")
    return _save(fig, path)


def render_experiment(name: str, results: dict, out: Path) -> list[Path]:
    """Write the figures belonging to one experiment's results into ``out/figures``."""
    from odaf.mdp import open_maze, stitching_maze

    figs = out / "figures"
    runs = results.get("_runs", [])
    paths = []
    if name == "stitching":
        first = [r for r in runs if r["seed"] == runs[0]["seed"]]
        paths.append(plot_trajectories(stitching_maze(), first, figs / "stitching_trajectories.png"))
        paths.append(plot_learning_curves(runs, figs / "stitching_learning_curves.png", "stitching maze"))
    elif name == "mixratio":
        paths.append(plot_mix_curve(results["curve"], figs / "mixratio_curve.png"))
    elif name == "ablation":
        paths.append(plot_ablation(results["tables"], figs / "ablation_returns.png"))
        partial = [r for r in runs if r["env"] == "partial"]
        paths.append(plot_trajectories(open_maze(), [r for r in partial if r["seed"] == partial[0]["seed"]],
                                       figs / "ablation_partial_trajectories.png", "partial-coverage maze"))
    elif name == "validation":
        paths.append(plot_validation(results["scores"], figs / "validation_scores.png"))
    return paths
