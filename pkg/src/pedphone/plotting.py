"""Figures for evaluation reports, rendered off-screen to PNG/SVG files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .knn import ACTIVITIES  # noqa: E402
from .pose import JOINT_NAMES  # noqa: E402


def _save(fig, path):
    # fixed metadata keeps repeated renders byte-stable
    meta = {"Date": None} if str(path).endswith(".svg") else {"Software": None}
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata=meta)
    plt.close(fig)
    return path


def confusion_figure(cm, path, title=""):
    cm = np.asarray(cm)
    rows = cm.sum(axis=1, keepdims=True)
    frac = np.divide(cm, rows, out=np.zeros(cm.shape), where=rows > 0)
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, f"{frac[i, j]:.2f}\n({cm[i, j]})", ha="center", va="center",
                    color="white" if frac[i, j] > 0.6 else "black", fontsize=8)
    ax.set_xticks(range(len(ACTIVITIES)), ACTIVITIES, rotation=20)
    ax.set_yticks(range(len(ACTIVITIES)), ACTIVITIES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def timeline_figure(timeline, path, title=""):
    fig, ax = plt.subplots(figsize=(7, 2.4))
    ax.step(timeline.frames, timeline.truth, where="post", label="ground truth", lw=2.2, alpha=0.6)
    ax.step(timeline.frames, timeline.pred, where="post", label="predicted", lw=1.0)
    ax.set_yticks(range(len(ACTIVITIES)), ACTIVITIES)
    ax.set_xlabel("frame")
    ax.set_ylim(-0.4, len(ACTIVITIES) - 0.6)
    ax.legend(loc="upper right", fontsize=7)
    ax.set_title(title or f"agreement {timeline.agreement:.3f}")
    return _save(fig, path)


def pck_by_rate_figure(table, path):
    """``table`` maps a row label ("untracked", "30 Hz", ...) to 8 per-joint PCK values."""
    fig, ax = plt.subplots(figsize=(7, 3))
    labels = list(table)
    width = 0.8 / max(len(labels), 1)
    x = np.arange(len(JOINT_NAMES))
    for i, lab in enumerate(labels):
        ax.bar(x + i * width - 0.4 + width / 2, table[lab], width, label=lab)
    ax.set_xticks(x, [n.replace("_", " ") for n in JOINT_NAMES], rotation=25, fontsize=7)
    ax.set_ylabel("PCK")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7, ncol=len(labels))
    return _save(fig, path)


def containment_figure(alphas, sweep, path):
    fig, ax = plt.subplots(figsize=(4.5, 3))
    for name, vals in sweep.items():
        ax.plot(alphas, vals, marker="o", label=f"{name} centred")
    ax.set_xlabel("window scale alpha")
    ax.set_ylabel("hands inside window")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    return _save(fig, path)


def latent_figure(bank, path, tracks=()):
    """Training latent trajectories of every model, with optional tracked paths."""
    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    for m in bank:
        ax.plot(m.latents[:, 0], m.latents[:, 1], "-", lw=0.8, label=m.tag)
    for lat in tracks:
        lat = np.asarray(lat)
        ax.plot(lat[:, 0], lat[:, 1], "k.", ms=2)
    ax.set_xlabel("latent 1")
    ax.set_ylabel("latent 2")
    ax.legend(fontsize=6)
    return _save(fig, path)
