"""Linear graph propagation, layer-mean readout, scoring, and exact backprop.

The model's only parameters are the layer-0 embeddings Z0 of shape
(M+N) x d.  The forward pass is linear:

    Z(l) = A_l @ Z(l-1),   Z = mean(Z(0) ... Z(L))

so reverse mode is the adjoint chain applied to the readout gradient.  All
math runs in float64; checkpoints round-trip losslessly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ChainMismatchError
from .graph import NormalizedAdjacency


@dataclass
class EmbeddingTable:
    """Trainable node embeddings; rows 0..M-1 users, M..M+N-1 items."""

    z0: np.ndarray
    num_users: int

    def __post_init__(self):
        self.z0 = np.ascontiguousarray(self.z0, dtype=np.float64)
        if self.z0.ndim != 2:
            raise ValueError("z0 must be 2-d")

    @property
    def num_nodes(self) -> int:
        return self.z0.shape[0]

    @property
    def num_items(self) -> int:
        return self.z0.shape[0] - self.num_users

    @property
    def dim(self) -> int:
        return self.z0.shape[1]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.z0.copy(), self.num_users)


@dataclass
class LayerStack:
    """Z(0)..Z(L) together with the adjacency chain that produced them."""

    layers: list
    chain: list
    num_users: int

    @property
    def num_layers(self) -> int:
        return len(self.layers) - 1


@dataclass
class FinalRepresentations:
    """Layer-mean readout; z[:M] are user rows, z[M:] item rows."""

    z: np.ndarray
    num_users: int

    @property
    def users(self) -> np.ndarray:
        return self.z[: self.num_users]

    @property
    def items(self) -> np.ndarray:
        return self.z[self.num_users:]


def _resolve_chain(adjacencies, num_layers: int) -> list:
    if isinstance(adjacencies, NormalizedAdjacency):
        return [adjacencies] * num_layers
    chain = list(adjacencies)
    if len(chain) == 1:
        return chain * num_layers
    if len(chain) != num_layers:
        raise ChainMismatchError(
            f"got {len(chain)} adjacencies for {num_layers} layers"
        )
    return chain


def propagate(adjacencies, table: EmbeddingTable, num_layers: int) -> LayerStack:
    """Run ``num_layers`` propagation steps starting from the embedding table.

    ``adjacencies`` is a single NormalizedAdjacency (shared by all layers) or
    a per-layer sequence, e.g. from an rw view's ``chain()``.
    """
    chain = _resolve_chain(adjacencies, num_layers) if num_layers > 0 else []
    layers = [table.z0]
    cur = table.z0
    for adj in chain:
        if adj.matrix.shape[0] != cur.shape[0]:
            raise ValueError(
                f"adjacency is {adj.matrix.shape[0]}x{adj.matrix.shape[0]} but "
                f"embeddings have {cur.shape[0]} rows"
            )
        cur = adj.matrix @ cur
        layers.append(cur)
    return LayerStack(layers, chain, table.num_users)


def readout(stack: LayerStack) -> FinalRepresentations:
    """Uniform layer mean Z = (1/(L+1)) sum_l Z(l)."""
    z = np.mean(stack.layers, axis=0)
    return FinalRepresentations(z, stack.num_users)


def score(reps: FinalRepresentations, u: int, i: int) -> float:
    """Predicted preference: inner product of final representations."""
    return float(reps.users[u] @ reps.items[i])


def backprop_to_embeddings(grad_final: np.ndarray, adjacencies, num_layers: int) -> np.ndarray:
    """Gradient w.r.t. Z0 of <grad_final, readout(propagate(Z0))>.

    Exact adjoint of the linear forward pass; must be called with the same
    adjacency chain that produced the forward stack.
    """
    chain = _resolve_chain(adjacencies, num_layers) if num_layers > 0 else []
    r = grad_final
    for adj in reversed(chain):
        r = grad_final + adj.matrix.T @ r
    return r / (num_layers + 1)


CHECKPOINT_MAGIC = "SGLREC-CKPT-v1"


def save_checkpoint(path, table: EmbeddingTable, epoch: int) -> None:
    """Write the embedding table with an ASCII header line.

    Layout: one text line ``SGLREC-CKPT-v1 M N d epoch\\n`` followed by the
    (M+N) x d float64 matrix in C order, little endian.
    """
    header = f"{CHECKPOINT_MAGIC} {table.num_users} {table.num_items} {table.dim} {epoch}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(table.z0.astype("<f8", copy=False).tobytes(order="C"))


def load_checkpoint(path):
    """Read a checkpoint; returns (EmbeddingTable, epoch)."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if not header or header[0] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a recognized checkpoint file")
        m, n, d, epoch = (int(x) for x in header[1:5])
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(m + n, d)
    return EmbeddingTable(data.copy(), m), epoch
