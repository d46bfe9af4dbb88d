"""Mini-batch multi-task training: BPR + weighted InfoNCE with Adam.

One epoch regenerates the two stochastic views (shared by all batches of the
epoch), then iterates ceil(|train|/B) batches.  Each batch runs three forward
passes (full graph, view 1, view 2), accumulates gradients on the final
representations, backpropagates each branch through its own adjacency chain,
and takes a single Adam step on the embedding table.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import DatasetSplit
from .errors import SamplingExhaustedError
from .evaluate import evaluate_ranking
from .graph import build_normalized_adjacency, make_epoch_views
from .losses import (BprBatch, bpr_loss_and_grad, infonce_loss_and_grad,
                     joint_loss, l2_regularization, negative_pool)
from .model import EmbeddingTable, backprop_to_embeddings, propagate, readout
from .seeding import derive_rng

MODES = ("joint", "pretrain", "baseline")
AUG_CHOICES = ("nd", "ed", "rw", "none")


@dataclass
class TrainConfig:
    """Everything a training run needs; maps 1:1 to the JSON config file."""

    num_layers: int = 3
    embed_dim: int = 64
    learning_rate: float = 0.001
    batch_size: int = 2048
    max_epochs: int = 100
    lambda1: float = 0.1
    lambda2: float = 1e-4
    tau: float = 0.2
    rho: float = 0.1
    operator: str = "ed"
    negative_scope: str = "batch"
    seed: int = 0
    early_stop_patience: int = 50
    eval_every: int = 1
    eval_k: int = 20
    mode: str = "joint"
    pretrain_epochs: int = 0
    record_timing: bool = True

    def __post_init__(self):
        if self.operator not in AUG_CHOICES:
            raise ValueError(f"operator must be one of {AUG_CHOICES}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "baseline":
            self.lambda1 = 0.0
            self.operator = "none"

    @property
    def ssl_enabled(self) -> bool:
        return self.operator != "none" and self.mode != "baseline"

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


class Adam:
    """Standard Adam over one dense parameter matrix."""

    def __init__(self, shape, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(shape, dtype=np.float64)
        self.v = np.zeros(shape, dtype=np.float64)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def init_embeddings(num_nodes: int, dim: int, seed: int, num_users: int) -> EmbeddingTable:
    """Xavier-uniform init with fan_in = fan_out = dim."""
    bound = math.sqrt(6.0 / (dim + dim))
    rng = derive_rng(seed, "init")
    z0 = rng.uniform(-bound, bound, size=(num_nodes, dim))
    return EmbeddingTable(z0, num_users)


def sample_bpr_batch(train, batch_size: int, rng, max_rounds: int = 200) -> BprBatch:
    """Uniform positive edges plus one rejected-sampled negative item each."""
    if train.num_edges == 0:
        raise ValueError("training graph is empty")
    idx = rng.integers(0, train.num_edges, size=batch_size)
    users = train.users[idx]
    pos = train.items[idx]
    neg = rng.integers(0, train.num_items, size=batch_size)
    bad = train.has_edges(users, neg)
    rounds = 0
    while bad.any():
        rounds += 1
        if rounds > max_rounds:
            raise SamplingExhaustedError(
                f"{int(bad.sum())} negatives still collide after {max_rounds} rounds"
            )
        neg[bad] = rng.integers(0, train.num_items, size=int(bad.sum()))
        bad[bad] = train.has_edges(users[bad], neg[bad])
    return BprBatch(users, pos, neg)


@dataclass
class EpochRecord:
    epoch: int
    l_main: float
    l_ssl: float
    l_total: float
    seconds: float
    val_recall: float | None = None
    val_ndcg: float | None = None


@dataclass
class TrainingCurve:
    records: list = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        self.records.append(rec)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "l_main", "l_ssl", "l_total", "seconds",
                             "val_recall", "val_ndcg"])
            for r in self.records:
                writer.writerow([
                    r.epoch, _fmt(r.l_main), _fmt(r.l_ssl), _fmt(r.l_total),
                    _fmt(r.seconds),
                    "" if r.val_recall is None else _fmt(r.val_recall),
                    "" if r.val_ndcg is None else _fmt(r.val_ndcg),
                ])

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _loss_weights(phase: str):
    """(use_main, use_ssl) per training phase."""
    return {"joint": (True, True), "ssl-only": (False, True), "main-only": (True, False)}[phase]


class Trainer:
    """Holds the per-run state shared by the epoch loop."""

    def __init__(self, config: TrainConfig, split: DatasetSplit):
        self.config = config
        self.split = split
        self.train_graph = split.train
        self.full_adj = build_normalized_adjacency(split.train)
        self.table = init_embeddings(split.train.num_nodes, config.embed_dim,
                                     config.seed, split.train.num_users)
        self.adam = Adam(self.table.z0.shape, config.learning_rate)
        self.num_batches = max(1, math.ceil(split.train.num_edges / config.batch_size))

    def run_epoch(self, epoch: int, phase: str = "joint") -> EpochRecord:
        cfg = self.config
        use_main, use_ssl = _loss_weights(phase)
        use_ssl = use_ssl and cfg.ssl_enabled
        t0 = time.perf_counter()
        views = None
        if use_ssl:
            views = make_epoch_views(self.train_graph, cfg.operator, cfg.rho,
                                     cfg.num_layers, cfg.seed, epoch)
        rng = derive_rng(cfg.seed, "batches", epoch)
        sums = np.zeros(3)  # l_main, l_ssl, l_total
        for _ in range(self.num_batches):
            batch = sample_bpr_batch(self.train_graph, cfg.batch_size, rng)
            report = self._train_step(batch, views, use_main, use_ssl)
            sums += (report.l_main, report.l_ssl, report.l_total)
        seconds = time.perf_counter() - t0 if cfg.record_timing else 0.0
        l_main, l_ssl, l_total = sums / self.num_batches
        return EpochRecord(epoch, l_main, l_ssl, l_total, seconds)

    def _train_step(self, batch, views, use_main, use_ssl):
        cfg = self.config
        m = self.train_graph.num_users
        n = self.train_graph.num_items
        grad_z0 = np.zeros_like(self.table.z0)

        l_main = 0.0
        if use_main:
            stack = propagate(self.full_adj, self.table, cfg.num_layers)
            reps = readout(stack)
            l_main, grad_main = bpr_loss_and_grad(batch, reps)
            grad_z0 += backprop_to_embeddings(grad_main, stack.chain or self.full_adj,
                                              cfg.num_layers)

        l_ssl_user = l_ssl_item = 0.0
        if use_ssl:
            view1, view2 = views
            stack1 = propagate(view1.chain(cfg.num_layers), self.table, cfg.num_layers)
            stack2 = propagate(view2.chain(cfg.num_layers), self.table, cfg.num_layers)
            z1 = readout(stack1).z
            z2 = readout(stack2).z
            anchors_u = np.unique(batch.users)
            anchors_i = m + np.unique(batch.pos_items)
            pool_u = negative_pool(cfg.negative_scope, "user", m, n,
                                   batch.users, batch.pos_items)
            pool_i = negative_pool(cfg.negative_scope, "item", m, n,
                                   batch.users, batch.pos_items)
            l_ssl_user, g1u, g2u = infonce_loss_and_grad(z1, z2, anchors_u, pool_u, cfg.tau)
            l_ssl_item, g1i, g2i = infonce_loss_and_grad(z1, z2, anchors_i, pool_i, cfg.tau)
            scale = cfg.lambda1 if use_main else 1.0
            grad_z0 += scale * backprop_to_embeddings(g1u + g1i, stack1.chain, cfg.num_layers)
            grad_z0 += scale * backprop_to_embeddings(g2u + g2i, stack2.chain, cfg.num_layers)

        l_reg = 0.0
        if use_main and cfg.lambda2 > 0:
            touched = np.concatenate([batch.users, m + batch.pos_items, m + batch.neg_items])
            l_reg, grad_reg = l2_regularization(self.table.z0, touched, scale=batch.size)
            grad_z0 += cfg.lambda2 * grad_reg

        report = joint_loss(l_main, l_ssl_user, l_ssl_item, l_reg,
                            cfg.lambda1 if use_main else 1.0, cfg.lambda2)
        if not np.isfinite(report.l_total):
            raise FloatingPointError(
                f"non-finite loss at adam step {self.adam.t}: main={l_main} "
                f"ssl={l_ssl_user + l_ssl_item} reg={l_reg}"
            )
        self.adam.step(self.table.z0, grad_z0)
        return report


@dataclass
class FitResult:
    table: EmbeddingTable
    curve: TrainingCurve
    best_table: EmbeddingTable
    best_epoch: int
    best_recall: float


def fit(config: TrainConfig, split: DatasetSplit) -> FitResult:
    """Train until max_epochs or until validation recall stops improving."""
    if config.mode == "pretrain":
        return pretrain_finetune(config, split)
    return _fit_phase(Trainer(config, split), config, split, phase="joint",
                      max_epochs=config.max_epochs, start_epoch=1)


def pretrain_finetune(config: TrainConfig, split: DatasetSplit) -> FitResult:
    """Optimize the contrastive task alone, then fine-tune on ranking."""
    trainer = Trainer(config, split)
    for epoch in range(1, config.pretrain_epochs + 1):
        trainer.run_epoch(epoch, phase="ssl-only")
    trainer.adam = Adam(trainer.table.z0.shape, config.learning_rate)
    return _fit_phase(trainer, config, split, phase="main-only",
                      max_epochs=config.max_epochs,
                      start_epoch=config.pretrain_epochs + 1)


def _fit_phase(trainer, config, split, phase, max_epochs, start_epoch):
    curve = TrainingCurve()
    best_table = trainer.table.copy()
    best_recall = -1.0
    best_epoch = 0
    stale_evals = 0
    has_validation = split.validation.num_edges > 0
    for k, epoch in enumerate(range(start_epoch, start_epoch + max_epochs)):
        rec = trainer.run_epoch(epoch, phase=phase)
        if has_validation and (k + 1) % config.eval_every == 0:
            reps = readout(propagate(trainer.full_adj, trainer.table, config.num_layers))
            rec.val_recall, rec.val_ndcg = evaluate_ranking(
                reps, split.train, split.validation, config.eval_k)
            if rec.val_recall > best_recall:
                best_recall = rec.val_recall
                best_epoch = epoch
                best_table = trainer.table.copy()
                stale_evals = 0
            else:
                stale_evals += 1
        curve.append(rec)
        if has_validation and stale_evals >= config.early_stop_patience:
            break
    if best_epoch == 0:  # never evaluated: final table is the best we know
        best_table = trainer.table.copy()
        best_epoch = start_epoch + len(curve.records) - 1 if curve.records else 0
        best_recall = float("nan")
    return FitResult(trainer.table, curve, best_table, best_epoch, best_recall)
