"""Ablation report rendering, verification, and plots.

The summary table mirrors the benchmark convention: positive percent change
means the multimodal model lowered MAE and gets an up arrow; negative gets
a down arrow. A verifier recomputes every summary number from the raw rows
before anything is rendered or trusted.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .training import ReportSchemaError, TargetSummary, percent_change

UP_MARKER = "↑"
DOWN_MARKER = "↓"
MINUS_SIGN = "−"

TARGET_DISPLAY = {
    "mu": "Dipole Moment",
    "alpha": "Isotropic Polarizability",
    "homo": "HOMO",
    "lumo": "LUMO",
    "gap": "HOMO-LUMO Gap",
    "r2": "Electronic Spatial Extent",
    "zpve": "ZPVE",
    "u0": "Internal Energy (0 K)",
    "u298": "Internal Energy (298.15 K)",
    "h298": "Enthalpy (298.15 K)",
    "g298": "Free Energy (298.15 K)",
    "cv": "Heat Capacity (298.15 K)",
}


def format_percent_change(pct: float) -> str:
    """Render like "+20.36% ↑" / "−14.60% ↓" (typographic
    minus, arrow by sign)."""
    text = f"{pct:+.2f}%".replace("-", MINUS_SIGN)
    marker = UP_MARKER if pct > 0 else DOWN_MARKER if pct < 0 else "·"
    return f"{text} {marker}"


def aggregate_rows(rows):
    """Mean MAE per (target, modality) from raw result rows."""
    acc = defaultdict(list)
    for row in rows:
        acc[(row.target, row.modality)].append(row.mae)
    return {key: float(np.mean(vals)) for key, vals in acc.items()}


def summaries_from_rows(rows):
    """Rebuild per-target summaries from raw rows (the verifier's path)."""
    means = aggregate_rows(rows)
    targets = sorted({row.target for row in rows}, key=_target_order)
    summaries = {}
    for target in targets:
        base = means.get((target, "geometry_only"))
        multi = means.get((target, "multimodal"))
        if base is None or multi is None:
            raise ReportSchemaError(f"target {target!r} lacks rows for both modalities")
        seeds = sorted({row.seed for row in rows if row.target == target})
        summaries[target] = TargetSummary(
            target=target,
            mae_geometry=base,
            mae_multimodal=multi,
            percent_change=percent_change(base, multi),
            n_runs=len(seeds),
            seeds=seeds,
            fold_hash="",
        )
    return summaries


def verify_summaries(rows, summaries, tol: float = 1e-9):
    """Recompute every summary number independently; returns a list of
    discrepancy strings (empty means verified)."""
    problems = []
    means = aggregate_rows(rows)
    for row in rows:
        if row.mae < 0:
            problems.append(f"{row.target}/{row.modality}: negative MAE {row.mae}")
    for target, s in summaries.items():
        base = means.get((target, "geometry_only"))
        multi = means.get((target, "multimodal"))
        if base is None or multi is None:
            problems.append(f"{target}: missing modality rows")
            continue
        if abs(base - s.mae_geometry) > tol:
            problems.append(f"{target}: geometry MAE {s.mae_geometry} != recomputed {base}")
        if abs(multi - s.mae_multimodal) > tol:
            problems.append(f"{target}: multimodal MAE {s.mae_multimodal} != recomputed {multi}")
        if base <= 0:
            continue  # already reported as an invalid MAE above
        if abs(percent_change(base, multi) - s.percent_change) > tol:
            problems.append(
                f"{target}: percent change {s.percent_change} != recomputed {percent_change(base, multi)}"
            )
    return problems


def _target_order(name: str) -> int:
    order = list(TARGET_DISPLAY)
    return order.index(name) if name in order else len(order)


def render_summary_table(summaries, parameter_counts=None, runs_note: str = "",
                         fold_hash: str = "") -> str:
    """Human-readable per-target table with percent changes and markers."""
    lines = []
    if runs_note:
        lines.append(f"# {runs_note}")
    if fold_hash:
        lines.append(f"# fold assignment: {fold_hash}")
    if parameter_counts:
        diff = parameter_counts.get("multimodal", 0) - parameter_counts.get("geometry_only", 0)
        lines.append(
            "# parameters: geometry_only={geometry_only} multimodal={multimodal} (+{diff} text pathway)".format(
                diff=diff, **parameter_counts
            )
        )
    name_width = max(len(TARGET_DISPLAY.get(t, t)) for t in summaries) if summaries else 8
    header = f"{'Property (Target)':<{name_width + 2}} {'Geometry MAE':>14} {'Multimodal MAE':>15}  Change"
    lines.append(header)
    lines.append("-" * len(header))
    for target in sorted(summaries, key=_target_order):
        s = summaries[target]
        lines.append(
            f"{TARGET_DISPLAY.get(target, target):<{name_width + 2}} "
            f"{s.mae_geometry:>14.6g} {s.mae_multimodal:>15.6g}  {format_percent_change(s.percent_change)}"
        )
    return "\n".join(lines) + "\n"


def plot_mae_bars(summaries, path) -> None:
    """Grouped MAE bars per target (normalized per target so mixed units
    share one axis)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    targets = sorted(summaries, key=_target_order)
    base = np.array([summaries[t].mae_geometry for t in targets])
    multi = np.array([summaries[t].mae_multimodal for t in targets])
    scale = np.where(base > 0, base, 1.0)
    x = np.arange(len(targets))
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(targets)), 4))
    ax.bar(x - 0.2, base / scale, width=0.4, label="geometry-only")
    ax.bar(x + 0.2, multi / scale, width=0.4, label="multimodal")
    ax.set_xticks(x)
    ax.set_xticklabels([TARGET_DISPLAY.get(t, t) for t in targets], rotation=30, ha="right")
    ax.set_ylabel("MAE relative to geometry-only")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_gate_histogram(gates, path, target: str = "") -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(np.asarray(gates).ravel(), bins=40, range=(0.0, 1.0))
    ax.set_xlabel("gate value (1 = geometry branch)")
    ax.set_ylabel("count")
    if target:
        ax.set_title(f"gate distribution: {target}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
