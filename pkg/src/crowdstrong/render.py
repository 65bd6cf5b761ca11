"""Timeline figures: ground truth vs estimate plus the opinion-count strip.

Purely presentational; nothing downstream depends on these files. SVG output
is kept byte-stable by pinning the hash salt and dropping the date metadata.
"""

from __future__ import annotations

from collections.abc import Iterable
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .aggregate import FrameOpinionCounts
from .timeline import EventInstance

TRUTH_COLOR = "#2a9d4e"
ESTIMATE_COLOR = "#30649e"


def render_timeline(
    truth: Iterable[EventInstance],
    estimated: Iterable[EventInstance],
    counts: FrameOpinionCounts,
    path: str | Path,
    title: str | None = None,
    hashsalt: str = "crowdstrong",
) -> None:
    """One lane per class: truth bar, estimated bar, opinion-ratio strip."""
    truth = list(truth)
    estimated = list(estimated)
    classes = counts.classes
    n = max(len(classes), 1)
    duration = counts.n_frames * counts.frame_len
    with plt.rc_context({"svg.hashsalt": hashsalt}):
        fig, ax = plt.subplots(figsize=(10, 0.9 * n + 1.2))
        with np.errstate(invalid="ignore"):
            ratio = np.where(
                counts.available[None, :] > 0,
                counts.active / np.maximum(counts.available[None, :], 1),
                0.0,
            )
        for ci, class_id in enumerate(classes):
            base = (n - 1 - ci) * 1.0
            ax.imshow(
                ratio[ci : ci + 1],
                extent=(0, duration, base + 0.02, base + 0.26),
                aspect="auto",
                cmap="Greys",
                vmin=0.0,
                vmax=1.0,
                interpolation="nearest",
            )
            for ev in estimated:
                if ev.class_id == class_id:
                    ax.broken_barh(
                        [(ev.onset, ev.duration)], (base + 0.32, 0.26),
                        facecolors=ESTIMATE_COLOR, alpha=0.9,
                    )
            for ev in truth:
                if ev.class_id == class_id:
                    ax.broken_barh(
                        [(ev.onset, ev.duration)], (base + 0.64, 0.26),
                        facecolors=TRUTH_COLOR, alpha=0.9,
                    )
        ax.set_xlim(0, max(duration, 1.0))
        ax.set_ylim(0, n)
        ax.set_yticks([n - 1 - ci + 0.45 for ci in range(len(classes))])
        ax.set_yticklabels(classes)
        ax.set_xlabel("time (s)")
        if title:
            ax.set_title(title)
        handles = [
            plt.Rectangle((0, 0), 1, 1, facecolor=TRUTH_COLOR),
            plt.Rectangle((0, 0), 1, 1, facecolor=ESTIMATE_COLOR),
            plt.Rectangle((0, 0), 1, 1, facecolor="#888888"),
        ]
        ax.legend(
            handles,
            ["ground truth", "estimated", "opinion ratio"],
            loc="upper right",
            fontsize="small",
        )
        fig.tight_layout()
        metadata = {"Date": None} if str(path).endswith(".svg") else None
        fig.savefig(path, metadata=metadata)
        plt.close(fig)
