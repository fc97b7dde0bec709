"""Render PNG figures next to the CSV/JSON artifacts of a run, sweep or comparison.

Everything here reads the files back from disk, so figures can be
regenerated for any output directory without rerunning training.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiments import read_csv  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _num(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return math.nan


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_run(run_dir: str | Path) -> list[Path]:
    """learning_curves.png from metrics.csv, quantiles.png from final_distributions.json."""
    run = Path(run_dir)
    written = []
    with plt.rc_context(STYLE):
        _, rows = read_csv(run / "metrics.csv")
        if rows:
            it = [int(r["iteration"]) for r in rows]
            fig, (ax_ret, ax_loss) = plt.subplots(1, 2, figsize=(9.6, 3.6))
            ax_ret.plot(it, [_num(r["mean_true_return"]) for r in rows], label="true (greedy)")
            ax_ret.plot(it, [_num(r["mean_corrupted_return"]) for r in rows], label="corrupted (rollout)", alpha=0.7)
            ax_ret.set_xlabel("iteration")
            ax_ret.set_ylabel("mean return")
            ax_ret.legend()
            ax_loss.plot(it, [_num(r["critic_loss"]) for r in rows], color="C2")
            ax_loss.set_xlabel("iteration")
            ax_loss.set_ylabel("critic loss")
            ax_loss.set_yscale("symlog", linthresh=1e-3)
            written.append(_save(fig, run / "learning_curves.png"))

        dist_path = run / "final_distributions.json"
        if dist_path.exists():
            data = json.loads(dist_path.read_text(encoding="utf-8"))
            states = [s for s in data["probe_states"] if s["ensemble"] is not None]
            if states:
                levels = data["quantile_levels"]
                fig, ax = plt.subplots()
                for s in states[:8]:
                    line, = ax.plot(levels, s["ensemble"], lw=1.5)
                    for h in s["heads"]:
                        ax.plot(levels, h["quantiles"], lw=0.5, alpha=0.4, color=line.get_color())
                ax.set_xlabel("quantile level")
                ax.set_ylabel("value")
                ax.set_title(f"{data['algorithm']}: probe-state quantiles (ensemble bold)")
                written.append(_save(fig, run / "quantiles.png"))
    return written


def plot_sweep(sweep_dir: str | Path) -> list[Path]:
    sweep = Path(sweep_dir)
    _, rows = read_csv(sweep / "summary.csv")
    if not rows:
        return []
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = range(len(rows))
        ax.bar(x, [_num(r["mean_final_true_return"]) for r in rows],
               yerr=[_num(r["std_final_true_return"]) for r in rows], capsize=3, color="C0")
        ax.set_xticks(list(x), [r["value"] for r in rows])
        ax.set_xlabel(rows[0]["param"])
        ax.set_ylabel("final true return (mean ± std)")
        return [_save(fig, sweep / "sweep_summary.png")]


def plot_compare(compare_dir: str | Path) -> list[Path]:
    comp = Path(compare_dir)
    _, rows = read_csv(comp / "compare.csv")
    paired = [r for r in rows if r["seed"] != "mean"]
    if not paired:
        return []
    algos = list(dict.fromkeys(r["algorithm"] for r in paired))
    seeds = list(dict.fromkeys(r["seed"] for r in paired))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        width = 0.8 / len(algos)
        for i, a in enumerate(algos):
            vals = {r["seed"]: _num(r["final_true_return"]) for r in paired if r["algorithm"] == a}
            ax.bar([k + i * width for k in range(len(seeds))], [vals.get(s, math.nan) for s in seeds],
                   width=width, label=a)
        ax.set_xticks([k + 0.4 - width / 2 for k in range(len(seeds))], [f"seed {s}" for s in seeds])
        ax.set_ylabel("final true return")
        ax.legend()
        return [_save(fig, comp / "compare.png")]


def plot_any(out_dir: str | Path) -> list[Path]:
    """Pick the renderer by which artifact files are present."""
    out = Path(out_dir)
    if (out / "summary.csv").exists():
        return plot_sweep(out)
    if (out / "compare.csv").exists():
        return plot_compare(out)
    if (out / "metrics.csv").exists():
        return plot_run(out)
    written = []
    for sub in sorted(out.glob("seed-*")):
        written += plot_run(sub)
    if not written:
        raise FileNotFoundError(f"no artifacts to plot in {out}")
    return written
