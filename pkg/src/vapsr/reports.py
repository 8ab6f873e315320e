"""Rendering of analysis results: CSV, aligned text, and figures.

Every report is emitted three ways into an output directory: a
header-rowed CSV, a human-readable aligned table, and a PNG figure.
Rendering is deterministic so re-runs produce byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analysis import CalibrationRow, LayerCost, RoadmapRow

_MAC_HEADER = (
    "MAC convention: one MAC per multiply at each layer's true output size; "
    "attention products count C per pixel; bias/normalization/activations excluded."
)

_PNG_METADATA = {"Software": None}  # drop the version banner for stable bytes


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def render_table(header: list[str], rows: list[list], title: str = "") -> str:
    """Fixed-width table; numbers right-aligned, text left-aligned."""
    cells = [[("" if v is None else str(v)) for v in row] for row in rows]
    widths = [len(h) for h in header]
    for row in cells:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    numeric = [
        all(not row[i] or _is_number(row[i]) for row in cells) for i in range(len(header))
    ]

    def fmt(row):
        out = []
        for i, cell in enumerate(row):
            out.append(cell.rjust(widths[i]) if numeric[i] else cell.ljust(widths[i]))
        return "  ".join(out).rstrip()

    lines = []
    if title:
        lines.append(title)
    lines.append(fmt(header))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend(fmt(row) for row in cells)
    return "\n".join(lines) + "\n"


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def _save_figure(fig, path: str | Path) -> None:
    fig.savefig(path, dpi=110, metadata=_PNG_METADATA)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Roadmap catalog report


def roadmap_rows(rows: list[RoadmapRow]) -> tuple[list[str], list[list]]:
    header = ["variant", "params", "params_k", "multi_adds", "multi_adds_g",
              "attention_rf", "delta_params"]
    data = []
    for r in rows:
        data.append([
            r.tag, r.params, f"{r.params / 1e3:.1f}", r.multi_adds,
            f"{r.multi_adds / 1e9:.2f}", r.attention_rf,
            "" if r.delta_params is None else r.delta_params,
        ])
    return header, data


def write_roadmap_report(rows: list[RoadmapRow], out_dir: str | Path) -> str:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header, data = roadmap_rows(rows)
    write_csv(out_dir / "report.csv", header, data)
    text = render_table(header, data, title="Variant catalog\n" + _MAC_HEADER + "\n")
    (out_dir / "report.txt").write_text(text)

    fig, ax1 = plt.subplots(figsize=(10, 4.5))
    tags = [r.tag for r in rows]
    x = range(len(rows))
    ax1.bar(x, [r.params / 1e3 for r in rows], color="#4878d0", label="params [K]")
    ax1.set_xticks(list(x))
    ax1.set_xticklabels(tags, rotation=45, ha="right", fontsize=8)
    ax1.set_ylabel("parameters [K]")
    ax2 = ax1.twinx()
    ax2.plot(list(x), [r.multi_adds / 1e9 for r in rows], "o-", color="#d65f5f",
             label="Multi-Adds [G]")
    ax2.set_ylabel("Multi-Adds [G]")
    ax1.set_title("Variant complexity")
    fig.tight_layout()
    _save_figure(fig, out_dir / "report.png")
    return text


# ---------------------------------------------------------------------------
# Single-preset layer report


def _layer_group(name: str) -> str:
    if name.startswith("block"):
        return "blocks"
    if name.startswith("up"):
        return "upsampler"
    return name  # extract, tail


def layer_rows(costs: list[LayerCost]) -> tuple[list[str], list[list]]:
    header = ["layer", "params", "macs", "rf_kernel", "rf_dilation"]
    data = [[c.name, c.params, c.macs, c.rf_kernel, c.rf_dilation] for c in costs]
    data.append(["TOTAL", sum(c.params for c in costs), sum(c.macs for c in costs), "", ""])
    return header, data


def write_layer_report(costs: list[LayerCost], summary: dict, out_dir: str | Path) -> str:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header, data = layer_rows(costs)
    write_csv(out_dir / "report.csv", header, data)

    summary_lines = [f"{k}: {v}" for k, v in summary.items()]
    text = "\n".join(summary_lines) + "\n" + _MAC_HEADER + "\n\n" \
        + render_table(header, data)
    (out_dir / "report.txt").write_text(text)

    groups: dict[str, list[int]] = {}
    for c in costs:
        g = groups.setdefault(_layer_group(c.name), [0, 0])
        g[0] += c.params
        g[1] += c.macs
    names = list(groups)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.barh(names, [groups[n][0] / 1e3 for n in names], color="#4878d0")
    ax1.set_xlabel("parameters [K]")
    ax2.barh(names, [groups[n][1] / 1e9 for n in names], color="#d65f5f")
    ax2.set_xlabel("Multi-Adds [G]")
    fig.suptitle(str(summary.get("variant", "")))
    fig.tight_layout()
    _save_figure(fig, out_dir / "report.png")
    return text


# ---------------------------------------------------------------------------
# Calibration report


def calibration_rows(rows: list[CalibrationRow]) -> tuple[list[str], list[list]]:
    header = ["preset", "candidate", "params", "params_dev_pct",
              "multi_adds", "multi_adds_dev_pct", "total_dev_pct", "selected", "shipped"]
    data = []
    for r in rows:
        data.append([
            r.preset, r.candidate, r.params, f"{100 * r.params_dev:+.2f}",
            "" if r.multi_adds is None else r.multi_adds,
            "" if r.multi_adds_dev is None else f"{100 * r.multi_adds_dev:+.2f}",
            f"{100 * r.total_dev:.2f}",
            int(r.selected), int(r.shipped),
        ])
    return header, data


def write_calibration_report(rows: list[CalibrationRow], out_dir: str | Path) -> str:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header, data = calibration_rows(rows)
    write_csv(out_dir / "calibration.csv", header, data)

    selected = [r for r in rows if r.selected]
    summary_header = ["preset", "chosen", "params", "params_dev_pct", "shipped_matches"]
    summary_data = [
        [r.preset, r.candidate, r.params, f"{100 * r.params_dev:+.2f}",
         "yes" if r.shipped else "NO"]
        for r in selected
    ]
    text = render_table(summary_header, summary_data,
                        title="Calibration winners (lowest total deviation)\n") \
        + "\n" + render_table(header, data, title="All candidates\n")
    (out_dir / "calibration.txt").write_text(text)

    fig, ax = plt.subplots(figsize=(7, 3.6))
    ax.bar([r.preset for r in selected], [100 * abs(r.params_dev) for r in selected],
           color="#4878d0")
    ax.set_ylabel("|param deviation| [%]")
    ax.set_title("Selected candidates vs. published totals")
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    _save_figure(fig, out_dir / "calibration.png")
    return text


# ---------------------------------------------------------------------------
# Training report


def write_training_report(history: list[tuple[int, float]], out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(out_dir / "loss_history.csv", ["step", "l1_loss"],
              [[step, f"{loss:.8f}"] for step, loss in history])

    fig, ax = plt.subplots(figsize=(6, 3.6))
    if history:
        ax.semilogy([s for s, _ in history], [l for _, l in history], color="#4878d0")
    ax.set_xlabel("step")
    ax.set_ylabel("L1 loss")
    ax.set_title("Single-patch overfit")
    fig.tight_layout()
    _save_figure(fig, out_dir / "loss_curve.png")
