"""CSV reports with matplotlib figures rendered alongside them."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_eval_report(rows: list[dict], csv_path, fig_path=None) -> Path:
    """Eval rows (scene, view, light, psnr, ssim, scales) to CSV + bar figure."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["scene", "view", "light", "psnr", "ssim", "scale_r", "scale_g", "scale_b"]
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fields})

    if fig_path is None:
        fig_path = csv_path.with_suffix(".png")
    labels = [f"{r['view']}/{r['light']}" for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(max(6, len(rows) * 0.5), 3.5))
    ax1.bar(range(len(rows)), [r["psnr"] for r in rows], color="#4878cf")
    ax1.set_xticks(range(len(rows)))
    ax1.set_xticklabels(labels, rotation=90, fontsize=7)
    ax1.set_ylabel("PSNR (dB)")
    ax2.bar(range(len(rows)), [r["ssim"] for r in rows], color="#6acc65")
    ax2.set_xticks(range(len(rows)))
    ax2.set_xticklabels(labels, rotation=90, fontsize=7)
    ax2.set_ylabel("SSIM")
    ax2.set_ylim(0, 1.02)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return csv_path


def write_fit_telemetry(telemetry: list[tuple], csv_path, fig_path=None) -> Path:
    """Per-iteration loss terms to CSV plus the loss-curve figure."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "l_olat", "l_comp", "l_smooth", "total"])
        writer.writerows(telemetry)

    if fig_path is None:
        fig_path = csv_path.with_suffix(".png")
    its = [t[0] for t in telemetry]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(its, [t[1] for t in telemetry], label="olat", lw=0.8)
    ax.plot(its, [t[2] for t in telemetry], label="composition", lw=0.8)
    ax.plot(its, [t[4] for t in telemetry], label="total", lw=0.8, color="black")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return csv_path


def write_decompose_report(rows: list[dict], csv_path, fig_path=None) -> Path:
    """Superposition residuals per scene to CSV + figure."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["scene", "lights", "max_residual"])
        writer.writeheader()
        writer.writerows(rows)
    if fig_path is None:
        fig_path = csv_path.with_suffix(".png")
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar([str(r["scene"]) for r in rows], [r["max_residual"] for r in rows],
           color="#d65f5f")
    ax.axhline(1e-5, ls="--", lw=0.8, color="black", label="1e-5 bound")
    ax.set_ylabel("max |full - (ambient + sum olat)|")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return csv_path


def write_plan_report(plan_obj: dict, csv_path, fig_path=None) -> Path:
    """Pass composition to CSV + stacked bar figure."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["pass", "targets", "references", "chain_refs"])
        for k, p in enumerate(plan_obj["passes"]):
            writer.writerow([k, len(p["targets"]), len(p["references"]),
                             len(p["chain_refs"])])
    if fig_path is None:
        fig_path = csv_path.with_suffix(".png")
    ks = range(len(plan_obj["passes"]))
    tgt = [len(p["targets"]) for p in plan_obj["passes"]]
    ref = [len(p["references"]) for p in plan_obj["passes"]]
    chn = [len(p["chain_refs"]) for p in plan_obj["passes"]]
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(ks, ref, label="references", color="#4878cf")
    ax.bar(ks, chn, bottom=ref, label="chained", color="#ee854a")
    ax.bar(ks, tgt, bottom=[r + c for r, c in zip(ref, chn)], label="targets",
           color="#6acc65")
    ax.axhline(plan_obj["capacity"], ls="--", lw=0.8, color="black", label="capacity")
    ax.set_xlabel("pass")
    ax.set_ylabel("views")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
    return csv_path
