"""Dataset loading, k-core filtering, splitting, and noise injection.

Interaction files come in two plain-text flavors:

* ``pairs``: one ``user item`` pair per line;
* ``adjacency``: one ``user item1 item2 ...`` line per user.

External ids are arbitrary strings.  They are mapped to dense 0-based
indices once, at split time; everything downstream works on dense indices.
The split is per-user: each user's interactions are partitioned by the given
ratios, so every evaluated user keeps training history.  Validation/test
interactions whose item never occurs in train are dropped (cold start).
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDatasetError, ParseError, SamplingExhaustedError
from .graph import InteractionGraph
from .seeding import derive_rng

FORMATS = ("pairs", "adjacency")


@dataclass
class RawInteractions:
    """Deduplicated (user, item) pairs with external string ids."""

    records: list
    source_path: str = "<memory>"

    @property
    def num_interactions(self) -> int:
        return len(self.records)

    @property
    def user_ids(self) -> list:
        return sorted({u for u, _ in self.records}, key=_id_sort_key)

    @property
    def item_ids(self) -> list:
        return sorted({i for _, i in self.records}, key=_id_sort_key)

    @property
    def num_users(self) -> int:
        return len({u for u, _ in self.records})

    @property
    def num_items(self) -> int:
        return len({i for _, i in self.records})

    def density(self) -> float:
        if not self.records:
            return 0.0
        return self.num_interactions / (self.num_users * self.num_items)


def _id_sort_key(s: str):
    # numeric ids sort numerically, everything else lexicographically
    return (0, int(s), "") if s.isdigit() else (1, 0, s)


def load_interactions(path, fmt: str = "pairs") -> RawInteractions:
    """Parse an interaction file, deduplicating repeated pairs."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    seen = dict()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if fmt == "pairs":
                if len(tokens) != 2:
                    raise ParseError(path, lineno, f"expected 'user item', got {line.strip()!r}")
                seen.setdefault((tokens[0], tokens[1]), None)
            else:
                user, items = tokens[0], tokens[1:]
                for it in items:
                    seen.setdefault((user, it), None)
    if not seen:
        raise EmptyDatasetError(f"{path} contains no interactions")
    return RawInteractions(list(seen.keys()), str(path))


def apply_k_core(raw: RawInteractions, k: int) -> RawInteractions:
    """Iteratively drop users/items with degree < k until a fixpoint."""
    if k < 1:
        raise ValueError("k must be >= 1")
    records = raw.records
    while True:
        user_deg = Counter(u for u, _ in records)
        item_deg = Counter(i for _, i in records)
        kept = [
            (u, i) for u, i in records if user_deg[u] >= k and item_deg[i] >= k
        ]
        if len(kept) == len(records):
            break
        records = kept
    if not records:
        raise EmptyDatasetError(f"{k}-core of {raw.source_path} is empty")
    return RawInteractions(records, raw.source_path)


@dataclass
class DatasetSplit:
    """Train/validation/test graphs over a shared dense index space."""

    train: InteractionGraph
    validation: InteractionGraph
    test: InteractionGraph
    user_ids: list  # dense user index -> external id
    item_ids: list  # dense item index -> external id
    dropped: list = field(default_factory=list)  # cold-start eval pairs (external ids)

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    def user_index(self) -> dict:
        return {ext: idx for idx, ext in enumerate(self.user_ids)}

    def item_index(self) -> dict:
        return {ext: idx for idx, ext in enumerate(self.item_ids)}

    def all_edge_keys(self) -> np.ndarray:
        """Sorted u*N+i keys over train, validation, and test."""
        n = self.num_items
        keys = [g.users * np.int64(n) + g.items for g in (self.train, self.validation, self.test)]
        return np.sort(np.concatenate(keys))


def _per_user_counts(n: int, ratios) -> tuple:
    """(train, valid, test) counts for a user with n interactions."""
    n_valid = round(n * ratios[1])
    n_test = round(n * ratios[2])
    while n - n_valid - n_test < 1 and n_test > 0:
        n_test -= 1
    while n - n_valid - n_test < 1 and n_valid > 0:
        n_valid -= 1
    return n - n_valid - n_test, n_valid, n_test


def split_dataset(raw: RawInteractions, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetSplit:
    """Per-user random partition of interactions into train/valid/test."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError("ratios must be three non-negative fractions summing to 1")
    by_user: dict = {}
    for u, i in raw.records:
        by_user.setdefault(u, []).append(i)

    rng = derive_rng(seed, "split")
    train_pairs, valid_pairs, test_pairs = [], [], []
    for u in sorted(by_user, key=_id_sort_key):
        items = sorted(by_user[u], key=_id_sort_key)
        perm = rng.permutation(len(items))
        n_train, n_valid, _ = _per_user_counts(len(items), ratios)
        for pos, j in enumerate(perm):
            pair = (u, items[j])
            if pos < n_train:
                train_pairs.append(pair)
            elif pos < n_train + n_valid:
                valid_pairs.append(pair)
            else:
                test_pairs.append(pair)

    train_users = sorted({u for u, _ in train_pairs}, key=_id_sort_key)
    train_items = sorted({i for _, i in train_pairs}, key=_id_sort_key)
    uidx = {u: k for k, u in enumerate(train_users)}
    iidx = {i: k for k, i in enumerate(train_items)}

    dropped = []

    def to_graph(pairs, drop_cold):
        us, its = [], []
        for u, i in pairs:
            if drop_cold and (u not in uidx or i not in iidx):
                dropped.append((u, i))
                continue
            us.append(uidx[u])
            its.append(iidx[i])
        return InteractionGraph(len(train_users), len(train_items), us, its)

    split = DatasetSplit(
        train=to_graph(train_pairs, drop_cold=False),
        validation=to_graph(valid_pairs, drop_cold=True),
        test=to_graph(test_pairs, drop_cold=True),
        user_ids=train_users,
        item_ids=train_items,
        dropped=dropped,
    )
    return split


def inject_noise(train: InteractionGraph, ratio: float, seed: int,
                 forbidden_keys=None, max_rounds: int = 200) -> InteractionGraph:
    """Add ceil(ratio * |train|) uniformly sampled non-interacted edges.

    ``forbidden_keys`` (sorted u*N+i keys) excludes pairs beyond the training
    edges themselves, e.g. validation/test edges.  Injected edges are flagged
    in the returned graph's noise_mask.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must be in [0, 1]")
    count = math.ceil(ratio * train.num_edges)
    if count == 0:
        return train
    n = np.int64(train.num_items)
    if forbidden_keys is None:
        forbidden_keys = np.sort(train.users * n + train.items)
    forbidden_keys = np.asarray(forbidden_keys, dtype=np.int64)

    rng = derive_rng(seed, "noise")
    chosen: dict = {}
    for _ in range(max_rounds):
        need = count - len(chosen)
        if need == 0:
            break
        us = rng.integers(0, train.num_users, size=2 * need)
        its = rng.integers(0, train.num_items, size=2 * need)
        keys = us * n + its
        if forbidden_keys.size:
            pos = np.minimum(np.searchsorted(forbidden_keys, keys), forbidden_keys.size - 1)
            ok = forbidden_keys[pos] != keys
        else:
            ok = np.ones(keys.size, dtype=bool)
        for u, i, k in zip(us[ok], its[ok], keys[ok]):
            if len(chosen) == count:
                break
            chosen.setdefault(int(k), (int(u), int(i)))
    if len(chosen) < count:
        raise SamplingExhaustedError(
            f"could only sample {len(chosen)}/{count} noise edges in {max_rounds} rounds"
        )
    noise = list(chosen.values())
    users = np.concatenate([train.users, np.array([u for u, _ in noise], dtype=np.int64)])
    items = np.concatenate([train.items, np.array([i for _, i in noise], dtype=np.int64)])
    mask = np.concatenate([train.noise_mask, np.ones(len(noise), dtype=bool)])
    return InteractionGraph(train.num_users, train.num_items, users, items, mask)


# --- split manifest persistence -------------------------------------------

SPLIT_FILE = "split.csv"
USER_IDS_FILE = "user_ids.txt"
ITEM_IDS_FILE = "item_ids.txt"


def save_split(split: DatasetSplit, outdir) -> None:
    """Write the split manifest: one row per edge plus the id maps."""
    outdir = _ensure_dir(outdir)
    with open(outdir / SPLIT_FILE, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "item", "split", "noise"])
        for tag, g in (("train", split.train), ("valid", split.validation), ("test", split.test)):
            for u, i, nz in zip(g.users, g.items, g.noise_mask):
                writer.writerow([u, i, tag, int(nz)])
    (outdir / USER_IDS_FILE).write_text("\n".join(split.user_ids) + "\n", encoding="utf-8")
    (outdir / ITEM_IDS_FILE).write_text("\n".join(split.item_ids) + "\n", encoding="utf-8")


def load_split(indir) -> DatasetSplit:
    """Read a manifest written by :func:`save_split`."""
    from pathlib import Path

    indir = Path(indir)
    user_ids = (indir / USER_IDS_FILE).read_text(encoding="utf-8").splitlines()
    item_ids = (indir / ITEM_IDS_FILE).read_text(encoding="utf-8").splitlines()
    parts = {"train": ([], [], []), "valid": ([], [], []), "test": ([], [], [])}
    with open(indir / SPLIT_FILE, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["user", "item", "split", "noise"]:
            raise ParseError(indir / SPLIT_FILE, 1, f"unexpected header {header}")
        for row in reader:
            us, its, mask = parts[row[2]]
            us.append(int(row[0]))
            its.append(int(row[1]))
            mask.append(bool(int(row[3])))
    m, n = len(user_ids), len(item_ids)
    graphs = {
        tag: InteractionGraph(m, n, np.array(us, dtype=np.int64),
                              np.array(its, dtype=np.int64),
                              np.array(mask, dtype=bool))
        for tag, (us, its, mask) in parts.items()
    }
    return DatasetSplit(graphs["train"], graphs["valid"], graphs["test"], user_ids, item_ids)


def _ensure_dir(path):
    from pathlib import Path

    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
