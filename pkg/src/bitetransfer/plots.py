"""PNG figures derived from the CSV/JSON results (rendered off-screen, metadata stripped)."""
from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .labels import LABELS


def _figure(w=5.0, h=3.5) -> Figure:
    fig = Figure(figsize=(w, h), dpi=100)
    FigureCanvasAgg(fig)
    return fig


def save(fig: Figure, path) -> None:
    # no Software/date chunks, so identical inputs give identical bytes
    fig.savefig(path, format="png", metadata={"Software": None})


def confusion(cm, path, title: str = "") -> None:
    cm = np.asarray(cm, float)
    frac = cm / np.maximum(cm.sum(axis=1, keepdims=True), 1)
    fig = _figure(4.6, 4.0)
    ax = fig.add_subplot()
    ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
    names = [lab.name for lab in LABELS]
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_yticks(range(len(names)), names)
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, f"{int(cm[i, j])}", ha="center", va="center",
                    color="white" if frac[i, j] > 0.5 else "black")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    fig.tight_layout()
    save(fig, path)


def finetune_curve(sizes, mean_f1, path) -> None:
    fig = _figure()
    ax = fig.add_subplot()
    ax.plot(sizes, mean_f1, marker="o")
    ax.set_xlabel("finetuning samples from the new participant")
    ax.set_ylabel("macro F1")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    save(fig, path)


def _bars(ax, labels, values, ylabel):
    vals = [np.nan if v is None else v for v in values]
    ax.bar(range(len(labels)), vals, color="tab:blue")
    ax.set_xticks(range(len(labels)), labels)
    ax.set_ylabel(ylabel)


def methods_study(summary: dict, path) -> None:
    conds = summary["conditions"]
    fig = _figure(8.0, 3.2)
    panels = (("impulse_max_force", "Feeding2_Impulse", "max force during impulse (N)"),
              ("manipulation_mean_force", "Feeding1_Manipulate", "mean force during manipulation (N)"),
              ("placement_error_mm", "Feeding2_Impulse", "placement error, feeding 2 (mm)"))
    for k, (metric, feeding, label) in enumerate(panels):
        ax = fig.add_subplot(1, 3, k + 1)
        sel = [c for c in conds if c["feeding"] == feeding]
        _bars(ax, [c["method"] for c in sel], [c["means"].get(metric) for c in sel], label)
    fig.tight_layout()
    save(fig, path)


def perception_study(summary: dict, path) -> None:
    conds = summary["conditions"]
    fig = _figure(8.0, 3.2)
    panels = (("S1_Turn", "terminal_error_mm", "S1 terminal error (mm)"),
              ("S2_Speak", "paused_fraction_closed", "S2 paused while closed"),
              ("S3_Spasm", "retract_latency", "S3 retract latency (s)"))
    for k, (scenario, metric, label) in enumerate(panels):
        ax = fig.add_subplot(1, 3, k + 1)
        sel = [c for c in conds if c["scenario"] == scenario]
        _bars(ax, [c["mode"] for c in sel], [c["means"].get(metric) for c in sel], label)
    fig.tight_layout()
    save(fig, path)
