"""Report figures: alpha sweeps, AUROC heatmaps, calibration scatter."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def new(width=4.5, aspect=0.68):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, width * aspect))
    return fig, ax


def save(fig, path):
    # no Software/Date chunks, so reruns are byte-identical
    with plt.rc_context(STYLE):
        fig.savefig(path, format="png", metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)


def plot_alpha_sweep(rows, path, title=None):
    """Mean m1 and m2 against alpha with the 1 - alpha reference line."""
    alphas, m1, m2 = (np.asarray(c, dtype=float) for c in zip(*rows))
    fig, ax = new()
    with plt.rc_context(STYLE):
        ax.plot(alphas, 1.0 - alphas, color="0.5", ls="--", lw=1, label=r"$1-\alpha$")
        ax.plot(alphas, m1, marker="o", ms=2.5, lw=1.2, label=r"mean $m_1$")
        ax.plot(alphas, m2, marker="s", ms=2.5, lw=1.2, label=r"mean $m_2$")
        ax.set_xlabel(r"error rate $\alpha$")
        ax.set_ylabel("rate")
        ax.set_ylim(0.0, 1.02)
        if title:
            ax.set_title(title)
        ax.legend(loc="lower left")
    save(fig, path)


def plot_auroc_matrix(names, matrix, path, title=None):
    """Source (rows) by target (columns) AUROC heatmap with cell annotations."""
    matrix = np.asarray(matrix, dtype=float)
    fig, ax = new(width=1.2 + 0.9 * len(names), aspect=0.85)
    with plt.rc_context(STYLE):
        im = ax.imshow(matrix, vmin=0.5, vmax=1.0, cmap="viridis")
        ax.grid(False)
        ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
        ax.set_yticks(range(len(names)), names)
        ax.set_xlabel("target")
        ax.set_ylabel("source")
        for i in range(len(names)):
            for j in range(len(names)):
                ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center",
                        color="w" if matrix[i, j] < 0.75 else "k", fontsize=8)
        fig.colorbar(im, ax=ax, label="AUROC")
        if title:
            ax.set_title(title)
    save(fig, path)


def plot_calibration(scores, labels, model, path):
    """Normalized retrieval score against similarity, coloured by ground truth."""
    labels = np.asarray(labels, dtype=bool)
    fig, ax = new()
    with plt.rc_context(STYLE):
        wrong = ~scores.correct
        right_only = scores.correct & ~labels
        ax.scatter(scores.norm[wrong], scores.h[wrong], s=4, c="tab:red", label="wrong source")
        ax.scatter(scores.norm[right_only], scores.h[right_only], s=4, c="tab:orange",
                   label="right source, below s_thres")
        ax.scatter(scores.norm[labels], scores.h[labels], s=4, c="tab:green", label="correct")
        ax.axhline(model.s_thres, color="0.3", lw=0.8, ls=":")
        ax.axvline(model.threshold, color="0.3", lw=0.8, ls="--")
        ax.set_xlabel("normalized retrieval score")
        ax.set_ylabel("ROUGE-L")
        ax.legend(loc="upper left", markerscale=2)
    save(fig, path)
