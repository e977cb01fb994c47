"""Delimited output and figure rendering.

CSV is the exchange format between commands: every writer formats floats
with ``%.10g`` so identical results are byte-identical files. The plot
helpers consume plain row dicts (as loaded back from CSV), never live
objects, so reports can always be re-rendered from stored outputs alone.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_csv_rows(rows: list[dict], path: str, columns: list[str] | None = None) -> list[str]:
    """Write dict rows; column order is first-seen unless given. Returns columns."""
    if columns is None:
        columns = []
        for row in rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_value(row.get(col, "")) for col in columns])
    return columns


def read_csv_rows(path: str) -> list[dict]:
    """Load CSV rows with best-effort numeric conversion."""

    def convert(text: str):
        for cast in (int, float):
            try:
                return cast(text)
            except ValueError:
                continue
        return text

    with open(path, newline="") as fh:
        return [{k: convert(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def plot_tradeoff(rows: list[dict], path: str, label_key: str | None = None) -> None:
    """Scatter of clean accuracy against attack success, one dot per row."""
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    accs = [row["acc"] for row in rows]
    asrs = [row["asr"] for row in rows]
    ax.scatter(accs, asrs, s=45, color="#1f77b4", alpha=0.85, zorder=3)
    if label_key:
        for row in rows:
            ax.annotate(
                str(row.get(label_key, "")),
                (row["acc"], row["asr"]),
                textcoords="offset points",
                xytext=(5, 4),
                fontsize=8,
            )
    ax.set_xlabel("clean accuracy")
    ax.set_ylabel("attack success rate")
    ax.set_title("stealth / attack tradeoff")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_size_sweep(rows: list[dict], param: str, path: str) -> None:
    """ACC and ASR as one swept size parameter grows."""
    usable = [r for r in rows if r.get("status", "ok") == "ok" and r.get(param, "") != ""]
    usable.sort(key=lambda r: r[param])
    xs = [r[param] for r in usable]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(xs, [r["acc"] for r in usable], marker="o", label="accuracy")
    ax.plot(xs, [r["asr"] for r in usable], marker="s", label="attack success")
    ax.set_xlabel(param.replace("param_", ""))
    ax.set_ylabel("rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_history(rows: list[dict], path: str, seconds: list[float] | None = None) -> None:
    """Training trace: losses on a log axis, success estimates on [0, 1].

    ``seconds`` (e.g. recovered from a run manifest) switches the x axis from
    iterations to wall-clock time.
    """
    use_seconds = seconds is not None and len(seconds) == len(rows)
    xs = seconds if use_seconds else [row["iteration"] for row in rows]
    xlabel = "seconds" if use_seconds else "iteration"

    fig, (top, bottom) = plt.subplots(2, 1, figsize=(6.5, 6), sharex=True)
    top.plot(xs, [row["clean_loss"] for row in rows], label="clean loss", color="#1f77b4")
    top.plot(xs, [row["attack_loss"] for row in rows], label="attack loss", color="#d62728")
    top.set_yscale("log")
    top.set_ylabel("loss")
    top.legend(loc="upper right")
    top.grid(alpha=0.3)

    bottom.plot(xs, [row["acc_estimate"] for row in rows], label="agreement est.", color="#2ca02c")
    bottom.plot(xs, [row["asr_estimate"] for row in rows], label="attack est.", color="#9467bd")
    bottom.plot(xs, [row["alpha"] for row in rows], label="alpha", color="#7f7f7f", ls="--")
    bottom.set_ylim(-0.02, 1.02)
    bottom.set_xlabel(xlabel)
    bottom.set_ylabel("rate / weight")
    bottom.legend(loc="lower right")
    bottom.grid(alpha=0.3)

    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_matrix(rows: list[dict], path: str, value: str = "asr") -> None:
    """Heatmap of the robustness matrix (train rows x test ratios)."""
    train_labels = []
    for row in rows:
        if row["train_on"] not in train_labels:
            train_labels.append(row["train_on"])
    ratios = sorted({row["test_ratio"] for row in rows})
    grid = [[float("nan")] * len(ratios) for _ in train_labels]
    for row in rows:
        grid[train_labels.index(row["train_on"])][ratios.index(row["test_ratio"])] = row[value]

    fig, ax = plt.subplots(figsize=(1.4 * len(ratios) + 2, 0.8 * len(train_labels) + 2))
    im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(ratios)), [f"{r:g}" for r in ratios])
    ax.set_yticks(range(len(train_labels)), train_labels)
    ax.set_xlabel("test prune ratio")
    ax.set_ylabel("patch trained on")
    for i, label_row in enumerate(grid):
        for j, cell in enumerate(label_row):
            ax.text(j, i, f"{cell:.2f}", ha="center", va="center", color="white", fontsize=9)
    ax.set_title(value.upper())
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
