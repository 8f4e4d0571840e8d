"""End-to-end model: encoders -> SCMoE block -> pooled fusion head."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .data import CLASSIFICATION, REGRESSION, Dataset, EncodedBatch, encode_records
from .encoders import GraphEncoder, SequenceEncoder
from .errors import DegenerateMaskError, DivergenceError, ValidationError
from .nn import MLP, Module
from .optim import Adam
from .rng import RngState
from .scmoe import AuxLosses, SCMoEBlock, coefficient_of_variation
from .tensor import Tensor


def pool_mean(features, mask) -> Tensor:
    """Mean over rows whose mask entry is True; works on (T, d) or (B, T, d)."""
    features = T.as_tensor(features)
    mask = np.asarray(mask, bool)
    counts = mask.sum(axis=-1, keepdims=True).astype(float)
    if np.any(counts == 0):
        raise DegenerateMaskError("mean pooling over a fully masked input")
    summed = T.sum(features * mask[..., None].astype(float), axis=-2)
    return summed / counts


class FusionHead(Module):
    """Learnable convex blend of a sequence-branch and a graph-branch MLP."""

    def __init__(self, rng: RngState, d: int, slope: float, std: float):
        self.raw_alpha = Tensor(np.zeros(1), requires_grad=True)
        self.mlp_seq = MLP(rng, d, d, 1, slope, std)
        self.mlp_gra = MLP(rng, d, d, 1, slope, std)

    @property
    def alpha(self) -> float:
        return float(T.sigmoid(self.raw_alpha.values).values[0])


def fuse_predict(z_seq, z_gra, fusion: FusionHead, task: str) -> Tensor:
    alpha = T.sigmoid(fusion.raw_alpha)
    branch_seq = T.reshape(fusion.mlp_seq(z_seq), z_seq.shape[:-1])
    branch_gra = T.reshape(fusion.mlp_gra(z_gra), z_gra.shape[:-1])
    mixed = alpha * branch_seq + (1.0 - alpha) * branch_gra
    return T.sigmoid(mixed) if task == CLASSIFICATION else mixed


def total_loss(y, y_hat, aux: dict[str, AuxLosses], task: str,
               load_weight: float = 1.0) -> tuple[Tensor, dict[str, float]]:
    """Task loss plus both modalities' load and importance terms."""
    task_term = T.bce(y, y_hat) if task == CLASSIFICATION else T.mse(y, y_hat)
    loss = task_term
    parts = {"task": task_term.item(), "load": 0.0, "importance": 0.0}
    for side in aux.values():
        loss = loss + side.load * load_weight + side.importance
        parts["load"] += side.load.item()
        parts["importance"] += side.importance.item()
    return loss, parts


class M2oE(Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = RngState(config.seed)
        std = config.init_std
        self.seq_encoder = SequenceEncoder(rng, config.max_len, config.d, config.layers,
                                           config.heads, config.slope, std)
        self.graph_encoder = GraphEncoder(rng, config.d, config.graph_layers, config.slope,
                                          config.graph_encoder, std)
        self.scmoe = SCMoEBlock(rng, config.d, config.experts, config.top_k, config.slope,
                                config.use_cra, config.use_moe, config.scale_dk,
                                config.attn_scale == "sqrt", std)
        self.fusion = FusionHead(rng, config.d, config.slope, std)

    def forward(self, batch: EncodedBatch, training: bool = False,
                rng: RngState | None = None) -> tuple[Tensor, dict[str, AuxLosses]]:
        cfg = self.config
        f_seq = self.seq_encoder(batch.ids, batch.mask)
        f_gra = self.graph_encoder(batch.ids, batch.norm_adj, batch.mean_adj, batch.mask)
        f_seq, f_gra, aux = self.scmoe(f_seq, f_gra, batch.mask, batch.mask, training, rng,
                                       cfg.omega_imp)
        z_seq = pool_mean(f_seq, batch.mask)
        z_gra = pool_mean(f_gra, batch.mask)
        return fuse_predict(z_seq, z_gra, self.fusion, cfg.task), aux

    def loss(self, batch: EncodedBatch, training: bool = False, rng: RngState | None = None):
        y_hat, aux = self.forward(batch, training, rng)
        loss, parts = total_loss(batch.labels, y_hat, aux, self.config.task, self.config.load_weight)
        return loss, parts, aux

    def encode(self, dataset_or_records) -> EncodedBatch:
        records = dataset_or_records.records if isinstance(dataset_or_records, Dataset) else dataset_or_records
        return encode_records(records, self.config.max_len)

    def predict(self, data, batch_size: int = 256) -> np.ndarray:
        batch = data if isinstance(data, EncodedBatch) else self.encode(data)
        out = [self.forward(batch.take(slice(i, i + batch_size)))[0].values
               for i in range(0, len(batch), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)


# ---------------------------------------------------------------- metrics

@dataclass
class Metrics:
    task: str
    acc: float | None = None
    mae: float | None = None
    mse: float | None = None
    r2: float | None = None

    def as_dict(self) -> dict[str, float]:
        if self.task == CLASSIFICATION:
            return {"acc": self.acc}
        return {"mae": self.mae, "mse": self.mse, "r2": self.r2}

    def to_json(self) -> str:
        return json.dumps(self.as_dict())

    @property
    def score(self) -> float:
        """Higher is better: ACC or R²."""
        return self.acc if self.task == CLASSIFICATION else self.r2


def compute_metrics(y, y_hat, task: str) -> Metrics:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.size == 0:
        raise ValidationError("cannot compute metrics on an empty dataset")
    if task == CLASSIFICATION:
        return Metrics(task, acc=float(np.mean((y_hat >= 0.5) == (y >= 0.5))))
    resid = y - y_hat
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else 0.0
    return Metrics(task, mae=float(np.mean(np.abs(resid))), mse=ss_res / y.size, r2=r2)


def evaluate(model: M2oE, ds: Dataset | EncodedBatch) -> Metrics:
    if len(ds) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    batch = ds if isinstance(ds, EncodedBatch) else model.encode(ds)
    return compute_metrics(batch.labels, model.predict(batch), model.config.task)


def routing_counts(model: M2oE, batch: EncodedBatch, chunk: int = 256) -> dict[str, np.ndarray]:
    """Eval-mode hard expert counts per modality over a whole encoded set."""
    total = {"seq": np.zeros(model.config.experts), "gra": np.zeros(model.config.experts)}
    for i in range(0, len(batch), chunk):
        _, aux = model.forward(batch.take(slice(i, i + chunk)))
        for side in total:
            total[side] += aux[side].hard_counts
    return total


def count_cv(counts: np.ndarray) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    if counts.mean() == 0:
        return 0.0
    return float(counts.std() / counts.mean())


# ---------------------------------------------------------------- training

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    task_loss: float
    train_metrics: dict
    val_metrics: dict
    hard_counts: dict
    count_cv: float
    importance_cv: float
    alpha: float

    def as_dict(self) -> dict:
        return {
            "epoch": self.epoch, "train_loss": self.train_loss, "task_loss": self.task_loss,
            "train": self.train_metrics, "val": self.val_metrics,
            "hard_counts": {k: [int(c) for c in v] for k, v in self.hard_counts.items()},
            "count_cv": self.count_cv, "importance_cv": self.importance_cv, "alpha": self.alpha,
        }


@dataclass
class FitResult:
    model: M2oE
    history: list[EpochRecord]
    best_epoch: int
    best_state: dict = field(repr=False)

    def best_model(self) -> M2oE:
        best = M2oE(self.model.config)
        best.load_state_dict(self.best_state)
        return best


def fit(train: Dataset, val: Dataset, config: ModelConfig, log=None) -> FitResult:
    """Mini-batch Adam on the total objective; keeps the parameters of the best val epoch.

    ``log``, if given, is called with each finished EpochRecord.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValidationError("training and validation sets must be non-empty")
    for name, ds in (("train", train), ("val", val)):
        if ds.task != config.task:
            raise ValidationError(f"{name} set is {ds.task} but the config says {config.task}")
    model = M2oE(config)
    opt = Adam(model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2),
               eps=config.adam_eps)
    train_batch = model.encode(train)
    val_batch = model.encode(val)
    order_rng = RngState(config.seed).spawn(1)
    noise_rng = RngState(config.seed).spawn(2)

    history: list[EpochRecord] = []
    best_score, best_epoch, best_state = -math.inf, -1, model.state_dict()
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(train_batch))
        losses, task_losses, weights = [], [], []
        importance = np.zeros(config.experts)
        for start in range(0, len(order), config.batch_size):
            batch = train_batch.take(order[start:start + config.batch_size])
            opt.zero_grad()
            loss, parts, aux = model.loss(batch, training=True, rng=noise_rng)
            if not math.isfinite(loss.item()):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            opt.step()
            losses.append(loss.item())
            task_losses.append(parts["task"])
            weights.append(len(batch))
            importance += aux["seq"].soft_mass + aux["gra"].soft_mass
        alpha = model.fusion.alpha
        if not 0.0 < alpha < 1.0:
            raise DivergenceError(f"fusion weight left (0, 1) at epoch {epoch}: {alpha}")
        train_metrics = evaluate(model, train_batch)
        val_metrics = evaluate(model, val_batch)
        counts = routing_counts(model, train_batch)
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.average(losses, weights=weights)),
            task_loss=float(np.average(task_losses, weights=weights)),
            train_metrics=train_metrics.as_dict(),
            val_metrics=val_metrics.as_dict(),
            hard_counts=counts,
            count_cv=float(np.mean([count_cv(c) for c in counts.values()])) if config.use_moe else 0.0,
            importance_cv=coefficient_of_variation(importance).item() if importance.sum() > 0 else 0.0,
            alpha=alpha,
        )
        history.append(record)
        if log is not None:
            log(record)
        if val_metrics.score > best_score:
            best_score, best_epoch, best_state = val_metrics.score, epoch, model.state_dict()
    return FitResult(model, history, best_epoch, best_state)


__all__ = [
    "M2oE", "FusionHead", "Metrics", "FitResult", "EpochRecord", "pool_mean", "fuse_predict",
    "total_loss", "compute_metrics", "evaluate", "fit", "routing_counts", "count_cv",
    "CLASSIFICATION", "REGRESSION",
]
