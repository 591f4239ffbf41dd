"""Render experiment CSVs into the repository's standard figure set.

Every renderer aggregates across seeds (mean line, +-1 sample-std band or
error bar), writes one PNG and one SVG per recipe, and returns a small
summary dict used by callers and tests.  Rendering is read-only over the
inputs and deterministic given them.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "polar-figs"  # deterministic SVG ids

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .schema import filter_suite, load_table

# Okabe-Ito palette: colorblind-safe, stable ordering by policy name.
_PALETTE = [
    "#0072B2", "#E69F00", "#009E73", "#D55E00",
    "#CC79A7", "#56B4E9", "#F0E442", "#000000",
]

_SAVE_KW = dict(bbox_inches="tight", metadata={"Date": None})


@dataclass(frozen=True)
class FigureRecipe:
    """One figure: which suite's CSVs go in, what kind of plot comes out."""

    suite: str
    name: str
    kind: str  # line | loglog | bars | dual
    inputs: tuple[str, ...]
    output: str


RECIPES: dict[str, FigureRecipe] = {
    "main": FigureRecipe("main", "cumulative regret", "line", ("regret.csv",), "main_regret"),
    "scaling": FigureRecipe(
        "scaling", "regret vs horizon", "loglog", ("regret.csv",), "scaling_regret"
    ),
    "alpha": FigureRecipe(
        "alpha", "latency-weight sensitivity", "dual", ("regret.csv",), "alpha_sensitivity"
    ),
    "epoch": FigureRecipe("epoch", "regret vs epoch length", "line", ("regret.csv",), "epoch_sweep"),
    "ablation": FigureRecipe(
        "ablation", "leave-one-out final regret", "bars", ("regret.csv",), "ablation_final"
    ),
    "cachesize": FigureRecipe(
        "cachesize", "regret vs cache size", "line", ("regret.csv",), "cachesize_sweep"
    ),
    "cachelearn": FigureRecipe(
        "cachelearn", "cache learning diagnostic", "dual", ("diagnostics.csv",), "cache_learning"
    ),
    "router": FigureRecipe(
        "router", "router comparison", "bars", ("regret.csv",), "router_final"
    ),
}


def _color(index: int) -> str:
    return _PALETTE[index % len(_PALETTE)]


def _save(fig, out_dir: Path, stem: str) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for ext in ("png", "svg"):
        path = out_dir / f"{stem}.{ext}"
        fig.savefig(path, **_SAVE_KW)
        paths.append(str(path))
    plt.close(fig)
    return paths


def _per_seed_final(frame: pd.DataFrame) -> pd.DataFrame:
    """Final-checkpoint row per (variant, policy, seed)."""
    idx = frame.groupby(["variant", "policy", "seed"])["checkpoint"].idxmax()
    return frame.loc[idx]


def _variant_value(label: str) -> float:
    return float(str(label).split("=", 1)[1])


def _curves(ax, frame, x_col, y_col):
    series = 0
    for i, (policy, group) in enumerate(sorted(frame.groupby("policy"))):
        stats = group.groupby(x_col)[y_col].agg(["mean", "std"]).reset_index()
        ax.plot(stats[x_col], stats["mean"], label=policy, color=_color(i))
        band = stats["std"].fillna(0.0)
        ax.fill_between(
            stats[x_col], stats["mean"] - band, stats["mean"] + band,
            color=_color(i), alpha=0.2, linewidth=0,
        )
        series += 1
    return series


def render(recipe: FigureRecipe, in_dir: str | Path, out_dir: str | Path) -> dict:
    """Render one recipe; returns {'outputs', 'series', 'has_reference_slope'}."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    if recipe.kind == "dual" and recipe.suite == "cachelearn":
        return _render_cachelearn(recipe, in_dir, out_dir)
    if recipe.kind == "dual":
        return _render_alpha(recipe, in_dir, out_dir)
    frame = filter_suite(load_table(in_dir, "regret.csv"), recipe.suite)
    if recipe.kind == "line" and recipe.suite in ("epoch", "cachesize"):
        return _render_sweep(recipe, frame, out_dir)
    if recipe.kind == "line":
        return _render_regret_curves(recipe, frame, out_dir)
    if recipe.kind == "loglog":
        return _render_scaling(recipe, frame, out_dir)
    if recipe.kind == "bars":
        return _render_final_bars(recipe, frame, out_dir)
    raise ValueError(f"unknown figure kind {recipe.kind!r}")


def _render_regret_curves(recipe, frame, out_dir) -> dict:
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    series = _curves(ax, frame, "checkpoint", "pseudo_regret")
    ax.set_xlabel("round")
    ax.set_ylabel("pseudo-regret")
    ax.set_title(recipe.name)
    ax.legend(fontsize=8)
    return {
        "outputs": _save(fig, out_dir, recipe.output),
        "series": series,
        "has_reference_slope": False,
    }


def _render_scaling(recipe, frame, out_dir) -> dict:
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    series = _curves(ax, frame, "checkpoint", "pseudo_regret")
    # sqrt-horizon reference anchored at the lowest first-checkpoint mean
    stats = frame.groupby(["policy", "checkpoint"])["pseudo_regret"].mean().reset_index()
    t0 = stats["checkpoint"].min()
    y0 = stats.loc[stats["checkpoint"] == t0, "pseudo_regret"].min()
    ts = np.array(sorted(stats["checkpoint"].unique()), dtype=float)
    ax.plot(ts, y0 * np.sqrt(ts / t0), "--", color="gray", label="slope 1/2 reference")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("horizon")
    ax.set_ylabel("pseudo-regret")
    ax.set_title(recipe.name)
    ax.legend(fontsize=8)
    return {
        "outputs": _save(fig, out_dir, recipe.output),
        "series": series,
        "has_reference_slope": True,
    }


def _render_sweep(recipe, frame, out_dir) -> dict:
    final = _per_seed_final(frame)
    swept = final[final["variant"] != ""]
    flat = final[final["variant"] == ""]
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    series = 0
    xs = sorted({_variant_value(v) for v in swept["variant"]})
    for i, (policy, group) in enumerate(sorted(swept.groupby("policy"))):
        stats = (
            group.assign(x=group["variant"].map(_variant_value))
            .groupby("x")["pseudo_regret"]
            .agg(["mean", "std"])
            .reset_index()
        )
        ax.errorbar(
            stats["x"], stats["mean"], yerr=stats["std"].fillna(0.0),
            label=policy, color=_color(i), marker="o", capsize=3,
        )
        series += 1
    for j, (policy, group) in enumerate(sorted(flat.groupby("policy"))):
        level = group["pseudo_regret"].mean()
        ax.axhline(level, linestyle=":", color=_color(series + j), label=f"{policy} (reference)")
        series += 1
    label = swept["variant"].iloc[0].split("=", 1)[0] if len(swept) else "value"
    ax.set_xlabel(label)
    ax.set_ylabel("final pseudo-regret")
    ax.set_title(recipe.name)
    ax.legend(fontsize=8)
    return {
        "outputs": _save(fig, out_dir, recipe.output),
        "series": series,
        "has_reference_slope": False,
    }


def _render_final_bars(recipe, frame, out_dir) -> dict:
    final = _per_seed_final(frame)
    stats = final.groupby("policy")["pseudo_regret"].agg(["mean", "std"]).reset_index()
    stats = stats.sort_values("mean").reset_index(drop=True)
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    xs = np.arange(len(stats))
    ax.bar(
        xs, stats["mean"], yerr=stats["std"].fillna(0.0),
        color=[_color(i) for i in range(len(stats))], capsize=4,
    )
    ax.set_xticks(xs)
    ax.set_xticklabels(stats["policy"], rotation=25, ha="right", fontsize=8)
    ax.set_ylabel("final pseudo-regret")
    ax.set_title(recipe.name)
    return {
        "outputs": _save(fig, out_dir, recipe.output),
        "series": len(stats),
        "has_reference_slope": False,
    }


def _render_alpha(recipe, in_dir, out_dir) -> dict:
    frame = filter_suite(load_table(in_dir, "regret.csv"), recipe.suite)
    final = _per_seed_final(frame)
    swept = final[final["variant"] != ""].assign(
        alpha=lambda f: f["variant"].map(_variant_value)
    )
    fig, (left, right) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    series = 0
    for i, (policy, group) in enumerate(sorted(swept.groupby("policy"))):
        stats = group.groupby("alpha")["pseudo_regret"].agg(["mean", "std"]).reset_index()
        left.errorbar(
            stats["alpha"], stats["mean"], yerr=stats["std"].fillna(0.0),
            label=policy, color=_color(i), marker="o", capsize=3,
        )
        series += 1
    left.set_xlabel("latency weight")
    left.set_ylabel("final pseudo-regret")
    left.legend(fontsize=8)

    plus = swept[swept["policy"] == "polar_plus"]
    if plus.empty:
        plus = swept
    stats = plus.groupby("alpha")[["quality_loss", "latency_cost"]].mean().reset_index()
    xs = np.arange(len(stats))
    width = 0.38
    right.bar(xs - width / 2, stats["quality_loss"], width, label="quality loss", color=_color(0))
    right.bar(xs + width / 2, stats["latency_cost"], width, label="latency cost", color=_color(1))
    right.set_xticks(xs)
    right.set_xticklabels([f"{a:g}" for a in stats["alpha"]])
    right.set_xlabel("latency weight")
    right.set_ylabel("decomposition")
    right.legend(fontsize=8)
    fig.suptitle(recipe.name)
    return {
        "outputs": _save(fig, out_dir, recipe.output),
        "series": series,
        "has_reference_slope": False,
        "panels": 2,
    }


def _render_cachelearn(recipe, in_dir, out_dir) -> dict:
    frame = filter_suite(load_table(in_dir, "diagnostics.csv"), recipe.suite)
    fig, (left, right) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    series = _curves(left, frame, "checkpoint", "jaccard")
    _curves(right, frame, "checkpoint", "cache_quality_loss")
    for ax, label in ((left, "overlap with hindsight cache"), (right, "probe quality loss")):
        ax.set_xscale("log")
        ax.set_xlabel("round")
        ax.set_ylabel(label)
    left.set_ylim(-0.05, 1.05)
    left.legend(fontsize=8)
    fig.suptitle(recipe.name)
    return {
        "outputs": _save(fig, out_dir, recipe.output),
        "series": series,
        "has_reference_slope": False,
        "panels": 2,
    }
