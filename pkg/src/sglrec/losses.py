"""BPR, InfoNCE over two views, L2 regularization, and the joint objective.

All losses are averaged over the batch (anchors for InfoNCE, triples for
BPR) and return dense gradients w.r.t. the final representations; only rows
touched by the batch are nonzero.  The contrastive similarity is cosine, and
the softmax over candidates is computed with max-subtraction so small
temperatures (logits up to 1/tau) stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DegenerateRepresentationError
from .model import FinalRepresentations

NEGATIVE_SCOPES = ("full", "batch", "merge")


@dataclass
class BprBatch:
    """Training triples (u, positive item i, negative item j)."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.pos_items = np.asarray(self.pos_items, dtype=np.int64)
        self.neg_items = np.asarray(self.neg_items, dtype=np.int64)

    @property
    def size(self) -> int:
        return self.users.size


@dataclass
class SslBatchConfig:
    """Contrastive-task hyper-parameters."""

    tau: float
    lambda1: float
    negative_scope: str = "batch"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be non-negative")
        if self.negative_scope not in NEGATIVE_SCOPES:
            raise ValueError(f"negative_scope must be one of {NEGATIVE_SCOPES}")


@dataclass
class LossReport:
    """Per-batch loss components and their weighted total."""

    l_main: float
    l_ssl_user: float
    l_ssl_item: float
    l_reg: float
    lambda1: float
    lambda2: float

    @property
    def l_ssl(self) -> float:
        return self.l_ssl_user + self.l_ssl_item

    @property
    def l_total(self) -> float:
        return self.l_main + self.lambda1 * self.l_ssl + self.lambda2 * self.l_reg


def joint_loss(l_main, l_ssl_user, l_ssl_item, l_reg, lambda1, lambda2) -> LossReport:
    return LossReport(float(l_main), float(l_ssl_user), float(l_ssl_item),
                      float(l_reg), float(lambda1), float(lambda2))


def bpr_loss_and_grad(batch: BprBatch, reps: FinalRepresentations):
    """Mean of -log sigmoid(y_ui - y_uj) and its gradient w.r.t. reps.

    Returns (loss, grad) with grad shaped like reps.z.
    """
    m = reps.num_users
    zu = reps.users[batch.users]
    zi = reps.items[batch.pos_items]
    zj = reps.items[batch.neg_items]
    delta = np.einsum("bd,bd->b", zu, zi) - np.einsum("bd,bd->b", zu, zj)
    # -log sigmoid(delta) = softplus(-delta), overflow safe
    loss = float(np.logaddexp(0.0, -delta).mean())
    coeff = (-expit(-delta) / batch.size)[:, None]
    grad = np.zeros_like(reps.z)
    np.add.at(grad, batch.users, coeff * (zi - zj))
    np.add.at(grad, m + batch.pos_items, coeff * zu)
    np.add.at(grad, m + batch.neg_items, -coeff * zu)
    return loss, grad


def negative_pool(scope, kind, num_users, num_items, batch_users=None, batch_items=None):
    """Global node indices serving as contrastive candidates.

    kind is 'user' or 'item' (the anchor type).  'full' uses every node of
    that type, 'batch' the batch nodes of that type, 'merge' all batch nodes
    regardless of type.  Item nodes are offset by num_users.
    """
    if scope not in NEGATIVE_SCOPES:
        raise ValueError(f"unknown negative scope {scope!r}")
    if scope == "full":
        if kind == "user":
            return np.arange(num_users, dtype=np.int64)
        return num_users + np.arange(num_items, dtype=np.int64)
    if batch_users is None or batch_items is None:
        raise ValueError("batch scopes need the batch's users and items")
    batch_users = np.unique(np.asarray(batch_users, dtype=np.int64))
    batch_items = num_users + np.unique(np.asarray(batch_items, dtype=np.int64))
    if scope == "merge":
        return np.concatenate([batch_users, batch_items])
    return batch_users if kind == "user" else batch_items


def _normalize_rows(z, rows, what):
    vecs = z[rows]
    norms = np.linalg.norm(vecs, axis=1)
    if np.any(norms == 0.0):
        bad = rows[np.flatnonzero(norms == 0.0)[0]]
        raise DegenerateRepresentationError(
            f"{what} row {bad} has zero norm; cosine similarity undefined"
        )
    return vecs / norms[:, None], norms


def infonce_loss_and_grad(z1, z2, anchors, negatives, tau):
    """Contrastive loss between two view representations, with gradients.

    For each anchor a the positive pair is (z1[a], z2[a]); candidates are
    ``negatives`` plus the anchor itself.  Returns
    (loss, grad_z1, grad_z2) where the loss is the mean over anchors and the
    gradients are dense arrays shaped like z1/z2.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    if anchors.size == 0:
        return 0.0, np.zeros_like(z1), np.zeros_like(z2)
    pool = np.unique(np.concatenate([np.asarray(negatives, dtype=np.int64), anchors]))
    s1, n1 = _normalize_rows(z1, anchors, "view-1")
    s2, n2 = _normalize_rows(z2, pool, "view-2")
    pos_col = np.searchsorted(pool, anchors)

    logits = (s1 @ s2.T) / tau
    shift = logits.max(axis=1, keepdims=True)
    expl = np.exp(logits - shift)
    denom = expl.sum(axis=1)
    log_probs = (logits - shift) - np.log(denom)[:, None]
    rows = np.arange(anchors.size)
    loss = float(-log_probs[rows, pos_col].mean())

    # d loss / d logits = (softmax - onehot) / n_anchors
    dlogits = expl / denom[:, None]
    dlogits[rows, pos_col] -= 1.0
    dlogits /= anchors.size

    ds1 = (dlogits @ s2) / tau
    ds2 = (dlogits.T @ s1) / tau
    # back through row normalization: (I - s s^T)/||z||
    g1_rows = (ds1 - np.einsum("bd,bd->b", ds1, s1)[:, None] * s1) / n1[:, None]
    g2_rows = (ds2 - np.einsum("bd,bd->b", ds2, s2)[:, None] * s2) / n2[:, None]

    grad1 = np.zeros_like(z1)
    grad2 = np.zeros_like(z2)
    np.add.at(grad1, anchors, g1_rows)
    grad2[pool] = g2_rows
    return loss, grad1, grad2


def l2_regularization(z0, touched, scale=1.0):
    """Squared L2 norm of the touched embedding rows, divided by ``scale``.

    Returns (loss, grad) with grad shaped like z0 and equal to 2 z / scale on
    the touched rows.  ``touched`` is de-duplicated.
    """
    touched = np.unique(np.asarray(touched, dtype=np.int64))
    rows = z0[touched]
    loss = float(np.sum(rows * rows) / scale)
    grad = np.zeros_like(z0)
    grad[touched] = 2.0 * rows / scale
    return loss, grad
