"""Bipartite interaction graph, symmetric normalization, and stochastic views.

The interaction graph holds users 0..M-1 and items 0..N-1.  In every
adjacency matrix the two node sets are stacked into a single index space of
size M+N: user u keeps index u, item i gets index M+i.

Three augmentation operators produce stochastic subgraph views:

* node dropout (``nd``): drop each node with probability rho, keep edges
  whose endpoints both survive;
* edge dropout (``ed``): drop each interaction with probability rho;
* random walk (``rw``): an independent edge-dropout mask per propagation
  layer, so the structure changes across layers.

Every view adjacency is renormalized with the degrees of the surviving
subgraph, not the original degrees.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import EmptyDatasetError
from .seeding import derive_rng

OPERATORS = ("nd", "ed", "rw")


class InteractionGraph:
    """Immutable set of (user, item) interactions with dense indices.

    Attributes:
        num_users: M, number of user indices.
        num_items: N, number of item indices.
        users, items: parallel int64 arrays, one entry per edge.
        noise_mask: bool array marking synthetically injected edges.
    """

    def __init__(self, num_users, num_items, users, items, noise_mask=None):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.shape != items.shape or users.ndim != 1:
            raise ValueError("users and items must be parallel 1-d arrays")
        if users.size:
            if users.min() < 0 or users.max() >= num_users:
                raise ValueError("user index out of range")
            if items.min() < 0 or items.max() >= num_items:
                raise ValueError("item index out of range")
        self.num_users = int(num_users)
        self.num_items = int(num_items)
        self.users = users
        self.items = items
        keys = users * np.int64(num_items) + items
        if np.unique(keys).size != keys.size:
            raise ValueError("duplicate edges are not allowed")
        self._sorted_keys = np.sort(keys)
        if noise_mask is None:
            noise_mask = np.zeros(users.size, dtype=bool)
        else:
            noise_mask = np.asarray(noise_mask, dtype=bool)
            if noise_mask.shape != users.shape:
                raise ValueError("noise_mask must align with the edge arrays")
        self.noise_mask = noise_mask
        self.user_degrees = np.bincount(users, minlength=num_users)
        self.item_degrees = np.bincount(items, minlength=num_items)
        # per-user item lists for ranking exclusion and negative sampling
        order = np.lexsort((items, users))
        self._items_by_user = items[order]
        self._user_offsets = np.searchsorted(users[order], np.arange(num_users + 1))

    @property
    def num_edges(self) -> int:
        return self.users.size

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    def items_of(self, u: int) -> np.ndarray:
        """Sorted items interacted by user u in this graph."""
        return self._items_by_user[self._user_offsets[u]:self._user_offsets[u + 1]]

    def has_edges(self, users, items) -> np.ndarray:
        """Vectorized membership test for (user, item) pairs."""
        keys = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(self._sorted_keys, keys)
        pos = np.minimum(pos, self._sorted_keys.size - 1) if self._sorted_keys.size else pos
        if self._sorted_keys.size == 0:
            return np.zeros(np.shape(keys), dtype=bool)
        return self._sorted_keys[pos] == keys

    def with_edges(self, users, items, noise_mask=None) -> "InteractionGraph":
        """New graph over the same index space with a different edge set."""
        return InteractionGraph(self.num_users, self.num_items, users, items, noise_mask)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetric degree-normalized adjacency over M+N nodes (CSR)."""

    matrix: sp.csr_matrix
    num_users: int
    num_items: int

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @property
    def nnz(self) -> int:
        return self.matrix.nnz


def _normalize_edges(num_users, num_items, users, items) -> NormalizedAdjacency:
    """Build 1/sqrt(deg(a) deg(b)) weights from an explicit edge list."""
    n = num_users + num_items
    rows = np.concatenate([users, items + num_users])
    cols = np.concatenate([items + num_users, users])
    deg = np.bincount(rows, minlength=n).astype(np.float64)
    with np.errstate(divide="ignore"):
        inv_sqrt = 1.0 / np.sqrt(deg)
    inv_sqrt[~np.isfinite(inv_sqrt)] = 0.0
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=np.float64)
    return NormalizedAdjacency(mat, num_users, num_items)


def build_normalized_adjacency(g: InteractionGraph) -> NormalizedAdjacency:
    """A_hat = D^{-1/2} A D^{-1/2} of the full bipartite graph."""
    if g.num_edges == 0:
        raise EmptyDatasetError("cannot normalize an empty graph")
    return _normalize_edges(g.num_users, g.num_items, g.users, g.items)


@dataclass
class AugmentedView:
    """One stochastic subgraph view of the interaction graph.

    ``adjacencies`` has length 1 for nd/ed and one entry per layer for rw.
    ``node_mask`` is the kept-node indicator for nd; ``edge_masks`` holds the
    kept-edge indicator(s) for ed/rw.
    """

    operator: str
    ratio: float
    adjacencies: list = field(default_factory=list)
    node_mask: np.ndarray | None = None
    edge_masks: list | None = None

    def chain(self, num_layers: int) -> list:
        """Per-layer adjacency sequence of length ``num_layers``."""
        if len(self.adjacencies) == 1:
            return list(self.adjacencies) * num_layers
        if len(self.adjacencies) != num_layers:
            raise ValueError(
                f"view holds {len(self.adjacencies)} per-layer adjacencies, "
                f"but {num_layers} layers were requested"
            )
        return list(self.adjacencies)


def _warn_if_degenerate(kept_edges: int, operator: str) -> None:
    if kept_edges == 0:
        warnings.warn(
            f"{operator} view retained no edges; propagation will carry zero vectors",
            RuntimeWarning,
            stacklevel=3,
        )


def node_dropout(g: InteractionGraph, rho: float, rng) -> AugmentedView:
    """Drop each of the M+N nodes with probability rho, with incident edges."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must be in [0, 1)")
    rng = _as_rng(rng)
    keep_node = rng.random(g.num_nodes) >= rho
    keep_edge = keep_node[g.users] & keep_node[g.num_users + g.items]
    _warn_if_degenerate(int(keep_edge.sum()), "nd")
    adj = _normalize_edges(g.num_users, g.num_items, g.users[keep_edge], g.items[keep_edge])
    return AugmentedView("nd", rho, [adj], node_mask=keep_node, edge_masks=[keep_edge])


def edge_dropout(g: InteractionGraph, rho: float, rng) -> AugmentedView:
    """Drop each interaction with probability rho; the mask is symmetric."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must be in [0, 1)")
    rng = _as_rng(rng)
    keep = rng.random(g.num_edges) >= rho
    _warn_if_degenerate(int(keep.sum()), "ed")
    adj = _normalize_edges(g.num_users, g.num_items, g.users[keep], g.items[keep])
    return AugmentedView("ed", rho, [adj], edge_masks=[keep])


def random_walk_views(g: InteractionGraph, rho: float, num_layers: int, rng) -> AugmentedView:
    """Independent edge-dropout mask per layer; layer l propagates adjacency l.

    With ``num_layers=1`` this draws exactly the same mask as
    :func:`edge_dropout` for the same generator state.
    """
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must be in [0, 1)")
    rng = _as_rng(rng)
    masks = [rng.random(g.num_edges) >= rho for _ in range(num_layers)]
    adjacencies = []
    for keep in masks:
        _warn_if_degenerate(int(keep.sum()), "rw")
        adjacencies.append(_normalize_edges(g.num_users, g.num_items, g.users[keep], g.items[keep]))
    return AugmentedView("rw", rho, adjacencies, edge_masks=masks)


def view_from_edge_masks(g: InteractionGraph, masks) -> AugmentedView:
    """Deterministic view from explicit kept-edge masks (one per layer)."""
    masks = [np.asarray(m, dtype=bool) for m in masks]
    adjacencies = [
        _normalize_edges(g.num_users, g.num_items, g.users[m], g.items[m]) for m in masks
    ]
    op = "ed" if len(masks) == 1 else "rw"
    return AugmentedView(op, float("nan"), adjacencies, edge_masks=masks)


def make_epoch_views(g, operator, rho, num_layers, seed, epoch):
    """Two independent views for one training epoch.

    Sub-seeds derive deterministically from (seed, epoch, branch), so the same
    (seed, epoch) always reproduces the same pair while different epochs and
    branches get independent masks.
    """
    operator = operator.lower()
    if operator not in OPERATORS:
        raise ValueError(f"unknown operator {operator!r}; expected one of {OPERATORS}")
    views = []
    for branch in (1, 2):
        rng = derive_rng(seed, "views", epoch, branch)
        if operator == "nd":
            views.append(node_dropout(g, rho, rng))
        elif operator == "ed":
            views.append(edge_dropout(g, rho, rng))
        else:
            views.append(random_walk_views(g, rho, num_layers, rng))
    return views[0], views[1]


def dump_view(view: AugmentedView, path) -> None:
    """Debug dump: one line per surviving nonzero, 'layer row col weight'."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# layer row col weight\n")
        for layer, adj in enumerate(view.adjacencies):
            coo = adj.matrix.tocoo()
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{layer} {r} {c} {v:.17g}\n")


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
