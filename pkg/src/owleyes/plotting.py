"""Figures written next to CLI outputs (Agg backend, no display needed)."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# No timestamp or software tag in the PNG, so equal inputs give equal bytes.
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_training_history(history, path) -> Path:
    """Loss and training accuracy per epoch on twin axes."""
    epochs = list(range(1, len(history.loss) + 1))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs, history.loss, color="tab:red", marker="o", ms=3, label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss", color="tab:red")
    ax2 = ax.twinx()
    ax2.plot(epochs, history.accuracy, color="tab:blue", marker="s", ms=3, label="accuracy")
    ax2.set_ylabel("train accuracy", color="tab:blue")
    ax2.set_ylim(0, 1.02)
    ax.set_title("training history")
    fig.tight_layout()
    return _save(fig, path)


def plot_detection_summary(report, path) -> Path:
    """Sorted bug probabilities, one bar per screenshot, with the 0.5 decision line."""
    rows = sorted(report.rows, key=lambda r: (r.bug_probability, r.path))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if rows:
        colors = ["tab:red" if r.verdict == "bug" else "tab:green" for r in rows]
        ax.bar(range(len(rows)), [r.bug_probability for r in rows], color=colors, width=0.9)
    ax.axhline(0.5, color="k", ls="--", lw=1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("screenshot (sorted by probability)")
    ax.set_ylabel("bug probability")
    ax.set_title(f"{report.num_issues} issues in {report.num_screens} screens")
    fig.tight_layout()
    return _save(fig, path)
