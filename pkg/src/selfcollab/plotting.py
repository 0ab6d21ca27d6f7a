"""Report figures: the per-iteration SC curve and image grids.

Every figure has a CSV sidecar holding exactly the numbers that were drawn,
so reports can be checked without comparing pixels.
"""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

CURVE_COLUMNS = ("k", "stage", "best_step", "psnr_val", "ssim_val", "delta_psnr", "status")


def sidecar_path(png_path) -> Path:
    return Path(png_path).with_suffix(".csv")


def write_curve_csv(history: list[dict], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CURVE_COLUMNS)
        w.writeheader()
        for h in history:
            w.writerow({c: "" if h.get(c) is None else h.get(c) for c in CURVE_COLUMNS})
    return path


def read_curve_csv(path) -> list[dict]:
    """Inverse of :func:`write_curve_csv` (numbers parsed back, blanks to None)."""
    rows = []
    with Path(path).open(newline="") as f:
        for row in csv.DictReader(f):
            out = {}
            for c in CURVE_COLUMNS:
                v = row[c]
                if v == "":
                    out[c] = None
                elif c in ("k", "stage", "best_step"):
                    out[c] = int(v)
                elif c == "status":
                    out[c] = v
                else:
                    out[c] = float(v)
            rows.append(out)
    return rows


def plot_sc_curve(history: list[dict], out_png, title: str = "self-collaboration") -> tuple[Path, Path]:
    """Best validation PSNR per iteration (top) and its gain over the
    previous iteration (bottom bars). Writes ``out_png`` and its CSV sidecar."""
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    ks = [h["k"] for h in history]
    psnrs = [np.nan if h["psnr_val"] is None else h["psnr_val"] for h in history]
    deltas = [0.0 if h.get("delta_psnr") is None else h["delta_psnr"] for h in history]

    fig, (top, bottom) = plt.subplots(2, 1, figsize=(6, 5), sharex=True,
                                      gridspec_kw={"height_ratios": [2, 1]})
    top.plot(ks, psnrs, "o-", color="tab:blue")
    for k, p in zip(ks, psnrs):
        if np.isfinite(p):
            top.annotate(f"{p:.2f}", (k, p), textcoords="offset points", xytext=(0, 6), ha="center", fontsize=8)
    top.set_ylabel("PSNR (dB)")
    top.set_title(title)
    top.grid(alpha=0.3)
    colors = ["tab:green" if d >= 0 else "tab:red" for d in deltas]
    bottom.bar(ks, deltas, color=colors)
    bottom.axhline(0, color="black", lw=0.8)
    bottom.set_ylabel("gain (dB)")
    bottom.set_xlabel("iteration k")
    bottom.set_xticks(ks)
    fig.tight_layout()
    fig.savefig(out_png, dpi=100)
    plt.close(fig)
    return out_png, write_curve_csv(history, sidecar_path(out_png))


def save_grid(rows: list[list[np.ndarray]], out_png, labels: list[str] | None = None) -> Path:
    """Tile (c, h, w) images in [0, 1] into one figure, one list per row."""
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    n_rows, n_cols = len(rows), max(len(r) for r in rows)
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(2 * n_cols, 2 * n_rows), squeeze=False)
    for i, row in enumerate(rows):
        for j in range(n_cols):
            ax = axes[i][j]
            ax.axis("off")
            if j >= len(row):
                continue
            im = np.clip(np.asarray(row[j]), 0, 1)
            if im.shape[0] == 1:
                ax.imshow(im[0], cmap="gray", vmin=0, vmax=1)
            else:
                ax.imshow(im.transpose(1, 2, 0))
            if labels and i == 0 and j < len(labels):
                ax.set_title(labels[j], fontsize=9)
    fig.tight_layout()
    fig.savefig(out_png, dpi=100)
    plt.close(fig)
    return out_png
