"""Hard-negative toolkit: gradient decomposition and the g(x) closed forms.

For an anchor with normalized view representations, a negative at cosine
similarity x contributes a gradient whose norm is proportional to

    g(x) = sqrt(1 - x^2) * exp(x / tau).

g peaks at x* = (sqrt(tau^2 + 4) - tau) / 2, so shrinking the temperature
concentrates the gradient mass on negatives most similar to the anchor.
This module evaluates these closed forms, decomposes the contrastive
gradient into positive/negative contributions, and emits curve CSVs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateRepresentationError


def g_of_x(x, tau: float):
    """sqrt(1-x^2) exp(x/tau) for x in [-1, 1]."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("x must lie in [-1, 1]")
    out = np.sqrt(1.0 - x * x) * np.exp(x / tau)
    return float(out) if out.ndim == 0 else out


def x_star(tau: float) -> float:
    """Similarity at which the negative contribution peaks."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return (math.sqrt(tau * tau + 4.0) - tau) / 2.0


def ln_g_star(tau: float) -> float:
    """log of the peak contribution, 0.5 * ln(1 - x*^2) + x*/tau."""
    xs = x_star(tau)
    return 0.5 * math.log1p(-xs * xs) + xs / tau


@dataclass
class HardNegativeCurve:
    tau: float
    xs: np.ndarray
    gs: np.ndarray
    x_star: float
    g_star: float
    ln_g_star: float


def compute_curve(tau: float, resolution: int = 2001) -> HardNegativeCurve:
    """Sample g on a uniform grid over [-1, 1] plus the peak closed forms."""
    xs = np.linspace(-1.0, 1.0, resolution)
    gs = g_of_x(xs, tau)
    return HardNegativeCurve(tau, xs, gs, x_star(tau),
                             g_of_x(x_star(tau), tau), ln_g_star(tau))


@dataclass
class GradientDecomposition:
    """Contrastive gradient for one anchor split into its contributions.

    positive_contribution and negative_contributions[v] are each orthogonal
    to the anchor's normalized view-1 representation; the assembled gradient
    is their sum divided by (tau * ||z1_anchor||).
    """

    anchor: int
    candidates: np.ndarray
    likelihoods: np.ndarray
    positive_contribution: np.ndarray
    negative_contributions: np.ndarray
    gradient: np.ndarray


def gradient_decomposition(z1, z2, anchor: int, tau: float, negatives) -> GradientDecomposition:
    """Decompose d InfoNCE(anchor) / d z1[anchor] into c(u) and c(v) terms.

    Candidates are ``negatives`` plus the anchor itself; likelihoods P are
    the softmax of cosine similarities / tau over the candidates.
    """
    candidates = np.unique(np.concatenate([np.asarray(negatives, dtype=np.int64), [anchor]]))
    zu = np.asarray(z1[anchor], dtype=np.float64)
    norm_u = np.linalg.norm(zu)
    zv = np.asarray(z2[candidates], dtype=np.float64)
    norms_v = np.linalg.norm(zv, axis=1)
    if norm_u == 0.0 or np.any(norms_v == 0.0):
        raise DegenerateRepresentationError("zero-norm representation in decomposition")
    su = zu / norm_u
    sv = zv / norms_v[:, None]

    sims = sv @ su
    logits = sims / tau
    shift = logits.max()
    p = np.exp(logits - shift)
    p /= p.sum()

    # each contribution is the candidate's normalized vector projected off su
    proj = sv - sims[:, None] * su
    pos_row = int(np.searchsorted(candidates, anchor))
    contributions = proj * p[:, None]
    contributions[pos_row] = proj[pos_row] * (p[pos_row] - 1.0)
    grad = contributions.sum(axis=0) / (tau * norm_u)
    neg_rows = np.ones(candidates.size, dtype=bool)
    neg_rows[pos_row] = False
    return GradientDecomposition(
        anchor=anchor,
        candidates=candidates,
        likelihoods=p,
        positive_contribution=contributions[pos_row],
        negative_contributions=contributions[neg_rows],
        gradient=grad,
    )


def emit_curves(taus, outdir, resolution: int = 2001):
    """Write per-tau (x, g) CSVs and a summary table of the closed forms.

    Returns the list of written paths; the summary CSV has columns
    (tau, x_star, g_star, ln_g_star).
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for tau in taus:
        curve = compute_curve(tau, resolution)
        path = outdir / f"g_curve_tau{tau:g}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "g"])
            for x, gv in zip(curve.xs, curve.gs):
                writer.writerow([f"{x:.12g}", f"{gv:.12g}"])
        paths.append(path)
    summary = outdir / "hard_negative_summary.csv"
    with open(summary, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "x_star", "g_star", "ln_g_star"])
        for tau in taus:
            writer.writerow([f"{tau:g}", f"{x_star(tau):.12g}",
                             f"{g_of_x(x_star(tau), tau):.12g}", f"{ln_g_star(tau):.12g}"])
    paths.append(summary)
    return paths
