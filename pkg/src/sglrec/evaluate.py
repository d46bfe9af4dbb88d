"""All-ranking top-K evaluation, long-tail decomposition, noise experiments.

Every item the user did not interact with in training is a ranking
candidate.  Ties are broken by ascending item index so results are
deterministic.  Users without test interactions are excluded from averages.

The long-tail decomposition partitions items into groups of (approximately)
equal training-interaction mass, ordered by ascending popularity, and writes
total recall as the exact sum of per-group recalls.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .graph import InteractionGraph
from .model import FinalRepresentations

DEFAULT_NUM_GROUPS = 10


@dataclass
class MetricsReport:
    recall_at_k: float
    ndcg_at_k: float
    k: int
    num_users_evaluated: int
    per_group_recall: np.ndarray | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerow(["k", self.k])
            writer.writerow(["users_evaluated", self.num_users_evaluated])
            writer.writerow([f"recall@{self.k}", f"{self.recall_at_k:.12g}"])
            writer.writerow([f"ndcg@{self.k}", f"{self.ndcg_at_k:.12g}"])


@dataclass
class PopularityGroups:
    """Item -> group assignment (1-based), groups ordered by ascending degree."""

    group_of: np.ndarray
    mass: np.ndarray
    degree_ranges: list
    num_groups: int

    @property
    def group_indices(self):
        return range(1, self.num_groups + 1)


def rank_all_items(reps: FinalRepresentations, u: int, train: InteractionGraph, k: int) -> np.ndarray:
    """Top-k items for user u, excluding the user's training items."""
    scores = reps.items @ reps.users[u]
    scores[train.items_of(u)] = -np.inf
    order = np.argsort(-scores, kind="stable")  # stable: equal scores keep ascending index
    n_candidates = scores.size - train.items_of(u).size
    return order[: min(k, n_candidates)]


def _user_hits(recs: np.ndarray, test_items: np.ndarray):
    return np.isin(recs, test_items)


def recall_ndcg_at_k(recs: np.ndarray, test_items: np.ndarray, k: int):
    """(recall, ndcg) for one user with binary gains.

    DCG counts 1/log2(rank+1) per hit; IDCG places min(k, |test|) ideal hits
    at the top ranks.
    """
    hits = _user_hits(recs[:k], test_items)
    recall = hits.sum() / test_items.size
    ranks = np.flatnonzero(hits) + 1
    dcg = float(np.sum(1.0 / np.log2(ranks + 1.0)))
    ideal = np.arange(1, min(k, test_items.size) + 1)
    idcg = float(np.sum(1.0 / np.log2(ideal + 1.0)))
    return float(recall), dcg / idcg


def evaluate_ranking(reps: FinalRepresentations, train: InteractionGraph,
                     holdout: InteractionGraph, k: int):
    """Mean (recall@k, ndcg@k) over users with a nonempty holdout set."""
    recalls, ndcgs = [], []
    for u in range(train.num_users):
        test_items = holdout.items_of(u)
        if test_items.size == 0:
            continue
        recs = rank_all_items(reps, u, train, k)
        r, n = recall_ndcg_at_k(recs, test_items, k)
        recalls.append(r)
        ndcgs.append(n)
    if not recalls:
        return 0.0, 0.0
    return float(np.mean(recalls)), float(np.mean(ndcgs))


def build_popularity_groups(train: InteractionGraph,
                            num_groups: int = DEFAULT_NUM_GROUPS) -> PopularityGroups:
    """Partition items into groups of equal training-interaction mass.

    Items are swept in ascending degree order (ties by index); the sweep
    advances to the next group once cumulative mass reaches g/num_groups of
    the total, so each group's mass is within one max-degree of the ideal.
    """
    if train.num_edges == 0:
        raise ValueError("cannot group items of an empty training graph")
    deg = train.item_degrees
    order = np.lexsort((np.arange(train.num_items), deg))
    total = float(deg.sum())
    group_of = np.zeros(train.num_items, dtype=np.int64)
    g = 1
    cum = 0.0
    for item in order:
        group_of[item] = g
        cum += deg[item]
        while g < num_groups and cum >= g * total / num_groups:
            g += 1
    used = int(group_of.max())
    if used < num_groups and np.unique(deg[order]).size < num_groups:
        warnings.warn(
            f"only {used} popularity groups could be formed", RuntimeWarning, stacklevel=2
        )
    mass = np.bincount(group_of, weights=deg, minlength=num_groups + 1)[1:]
    ranges = []
    for gi in range(1, num_groups + 1):
        members = deg[group_of == gi]
        ranges.append((int(members.min()), int(members.max())) if members.size else (0, 0))
    return PopularityGroups(group_of, mass, ranges, num_groups)


def decomposed_recall(reps: FinalRepresentations, train: InteractionGraph,
                      holdout: InteractionGraph, groups: PopularityGroups, k: int) -> np.ndarray:
    """Per-group recall@k whose sum equals total recall@k.

    Returns an array of length num_groups; entry g-1 is the mean over users
    of |top-k hits in group g| / |test_u|.
    """
    per_group = np.zeros(groups.num_groups)
    users = 0
    for u in range(train.num_users):
        test_items = holdout.items_of(u)
        if test_items.size == 0:
            continue
        users += 1
        recs = rank_all_items(reps, u, train, k)[:k]
        hit_items = recs[_user_hits(recs, test_items)]
        if hit_items.size:
            gids = groups.group_of[hit_items]
            per_group += np.bincount(gids, minlength=groups.num_groups + 1)[1:] / test_items.size
    if users:
        per_group /= users
    return per_group


@dataclass
class NoiseRow:
    ratio: float
    recall_sgl: float
    degradation_sgl: float
    recall_baseline: float
    degradation_baseline: float


@dataclass
class NoiseTable:
    rows: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["ratio", "recall_sgl", "degradation_sgl",
                             "recall_baseline", "degradation_baseline"])
            for r in self.rows:
                writer.writerow([f"{r.ratio:g}", f"{r.recall_sgl:.12g}",
                                 f"{r.degradation_sgl:.12g}", f"{r.recall_baseline:.12g}",
                                 f"{r.degradation_baseline:.12g}"])


def noise_experiment(config, split, ratios) -> NoiseTable:
    """Retrain per noise ratio and report recall plus relative degradation.

    Noise edges are added to the training graph only; validation and test
    are untouched.  The comparison baseline is the same config with the
    contrastive task disabled.
    """
    # local import: train.py imports evaluate_ranking from this module
    from dataclasses import replace

    from .dataio import DatasetSplit, inject_noise
    from .model import propagate, readout
    from .train import fit
    from .graph import build_normalized_adjacency

    if 0.0 not in [float(r) for r in ratios]:
        raise ValueError("ratios must include 0 (the clean reference point)")
    forbidden = split.all_edge_keys()
    results = {}
    for ratio in ratios:
        noisy_train = inject_noise(split.train, float(ratio), config.seed, forbidden)
        noisy_split = DatasetSplit(noisy_train, split.validation, split.test,
                                   split.user_ids, split.item_ids)
        per_config = {}
        for tag, cfg in (("sgl", config),
                         ("baseline", replace(config, mode="baseline"))):
            result = fit(cfg, noisy_split)
            adj = build_normalized_adjacency(noisy_train)
            reps = readout(propagate(adj, result.best_table, cfg.num_layers))
            recall, _ = evaluate_ranking(reps, noisy_train, split.test, cfg.eval_k)
            per_config[tag] = recall
        results[float(ratio)] = per_config

    r0 = results[0.0]
    table = NoiseTable()
    for ratio in sorted(results):
        row = results[ratio]
        table.rows.append(NoiseRow(
            ratio,
            row["sgl"], _degradation(r0["sgl"], row["sgl"]),
            row["baseline"], _degradation(r0["baseline"], row["baseline"]),
        ))
    return table


def _degradation(clean: float, noisy: float) -> float:
    if clean == 0.0:
        return 0.0
    return (clean - noisy) / clean
