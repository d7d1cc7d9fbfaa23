"""Objective assembly, Adam with per-group learning rates and coupled
weight decay, the training loop with validation-based model selection,
and the binary checkpoint format."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor, Tape
from . import ordinal as ordn
from .data import Dataset, batches
from .model import MODALITIES, BatchOutputs, ModelConfig, TMSONModel


class TrainingError(Exception):
    pass


@dataclass
class LossWeights:
    beta_t: float = 0.8
    beta_v: float = 0.1
    beta_a: float = 0.1
    lambda1: float = 0.1      # reconstruction
    lambda2: float = 0.01     # KL
    lambda3: float = 0.5      # ordinal
    delta: float = 1.0        # triplet margin
    xi: float = 0.5           # hard-triplet window

    def __post_init__(self):
        vals = (self.beta_t, self.beta_v, self.beta_a,
                self.lambda1, self.lambda2, self.lambda3, self.delta, self.xi)
        if any(v < 0 for v in vals):
            raise TrainingError("loss weights must be non-negative")

    def beta(self, m: str) -> float:
        return {"t": self.beta_t, "v": self.beta_v, "a": self.beta_a}[m]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**d)


@dataclass
class GroupPolicy:
    lr: float
    weight_decay: float


@dataclass
class OptimizerGroups:
    visual: GroupPolicy = field(default_factory=lambda: GroupPolicy(5e-3, 1e-3))
    audio: GroupPolicy = field(default_factory=lambda: GroupPolicy(5e-3, 1e-3))
    other: GroupPolicy = field(default_factory=lambda: GroupPolicy(1e-3, 1e-3))

    def policy(self, group: str) -> GroupPolicy:
        try:
            return getattr(self, group)
        except AttributeError:
            raise TrainingError(f"unknown optimizer group {group!r}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerGroups":
        return cls(**{k: GroupPolicy(**v) for k, v in d.items()})


def mae_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    return dc.tmean(dc.tabs(dc.sub(pred, Tensor(target))))


def total_loss(outputs: BatchOutputs, labels: np.ndarray, weights: LossWeights,
               rng: np.random.Generator | None = None,
               triplets: list[ordn.Triplet] | None = None):
    """Weighted sum of all active objective components.

    Components with zero weight are left out of the computation graph.
    Returns (loss tensor, per-component float breakdown).
    """
    loss = mae_loss(outputs.y_f, labels)
    breakdown = {"L_f": loss.item()}

    for m in MODALITIES:
        beta = weights.beta(m)
        if beta > 0.0:
            l_m = mae_loss(outputs.y_m[m], labels)
            breakdown[f"L_{m}"] = l_m.item()
            loss = dc.add(loss, dc.scalar_mul(l_m, beta))

    if weights.lambda1 > 0.0:
        if outputs.rec_loss is None:
            raise TrainingError("lambda1 > 0 but forward skipped reconstruction")
        breakdown["L_rec"] = outputs.rec_loss.item()
        loss = dc.add(loss, dc.scalar_mul(outputs.rec_loss, weights.lambda1))

    if weights.lambda2 > 0.0:
        if outputs.kl is None:
            raise TrainingError("lambda2 > 0 but forward skipped KL")
        breakdown["L_kl"] = outputs.kl.item()
        loss = dc.add(loss, dc.scalar_mul(outputs.kl, weights.lambda2))

    if weights.lambda3 > 0.0:
        if triplets is None:
            if rng is None:
                raise TrainingError("ordinal loss needs an rng or mined triplets")
            if labels.shape[0] >= 3:
                triplets = ordn.mine_triplets(labels, weights.xi, rng)
            else:
                triplets = []
        l_ord = ordn.ordinal_loss(triplets, outputs.fused, weights.delta)
        breakdown["L_ord"] = l_ord.item()
        if triplets:
            loss = dc.add(loss, dc.scalar_mul(l_ord, weights.lambda3))

    breakdown["total"] = loss.item()
    for name, value in breakdown.items():
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss component {name}: {value}")
    return loss, breakdown


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class AdamState:
    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so the global L2 norm is <= max_norm."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, group_of: dict[str, str],
              groups: OptimizerGroups) -> None:
    """Classic Adam with bias correction; weight decay is coupled (added
    to the gradient as decay * theta before the moment updates)."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        policy = groups.policy(group_of[name])
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise TrainingError(f"gradient shape mismatch for {name}")
        if policy.weight_decay > 0.0:
            g = g + policy.weight_decay * p.data
        state.m[name] = ADAM_BETA1 * state.m[name] + (1 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1 - ADAM_BETA2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.data = p.data - policy.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 16
    max_epochs: int = 50
    patience: int = 8
    clip_norm: float = 5.0
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    groups: OptimizerGroups = field(default_factory=OptimizerGroups)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        d["groups"] = self.groups.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights.from_dict(d["weights"])
        if "groups" in d:
            d["groups"] = OptimizerGroups.from_dict(d["groups"])
        return cls(**d)


def eval_predictions(model: TMSONModel, ds: Dataset,
                     batch_size: int = 64) -> np.ndarray:
    """Deterministic eval-mode predictions, in dataset order."""
    from .data import batches_by_missing

    preds = np.empty(len(ds))
    pos = {s.id: i for i, s in enumerate(ds.samples)}
    for batch in batches_by_missing(ds, batch_size):
        out = model.forward(batch, train=False, need_rec=False, need_kl=False)
        for sid, val in zip(batch.ids, out.y_f.data):
            preds[pos[sid]] = val
    return preds


def train(train_ds: Dataset, val_ds: Dataset, model_cfg: ModelConfig,
          cfg: TrainConfig):
    """Adam training with early stopping on validation MAE.

    Returns (model with best-validation parameters, history list).
    """
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise TrainingError("empty dataset")

    model = TMSONModel(model_cfg, seed=cfg.seed)
    params = model.parameters()
    group_of = model.groups()
    state = AdamState(params)
    rng = np.random.default_rng(cfg.seed + 1)

    best_mae = np.inf
    best_state = model.state_arrays()
    best_state = {k: v.copy() for k, v in best_state.items()}
    bad_epochs = 0
    history = []

    for epoch in range(cfg.max_epochs):
        epoch_batches = batches(train_ds, cfg.batch_size,
                                shuffle_seed=cfg.seed * 100003 + epoch)
        sums: dict[str, float] = {}
        clipped = 0
        for batch in epoch_batches:
            model.zero_grads()
            with Tape() as tape:
                out = model.forward(
                    batch, train=True, rng=rng,
                    need_rec=cfg.weights.lambda1 > 0,
                    need_kl=cfg.weights.lambda2 > 0)
                loss, breakdown = total_loss(out, batch.y, cfg.weights, rng=rng)
            dc.backward(tape, loss)
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            norm = clip_global_norm(grads, cfg.clip_norm)
            if cfg.clip_norm > 0 and norm > cfg.clip_norm:
                clipped += 1
            adam_step(params, grads, state, group_of, cfg.groups)
            for k, v in breakdown.items():
                sums[k] = sums.get(k, 0.0) + v

        val_pred = eval_predictions(model, val_ds, batch_size=64)
        val_labels = val_ds.labels()
        val_mae = float(np.mean(np.abs(val_pred - val_labels)))
        record = {
            "epoch": epoch,
            "val_mae": val_mae,
            "clipped_batches": clipped,
        }
        n_b = len(epoch_batches)
        record.update({f"train_{k}": v / n_b for k, v in sums.items()})
        history.append(record)

        if val_mae < best_mae:
            best_mae = val_mae
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break

    model.load_state(best_state)
    return model, history


# ---------------------------------------------------------------------------
# Checkpoint format: b"TMSN" | u32 version | u32 header length |
# canonical-JSON header | parameters as float64 little-endian, header order.
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"TMSN"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, model: TMSONModel, seed: int,
                    config_echo: dict | None = None) -> None:
    arrays = model.state_arrays()
    header = {
        "model_config": model.cfg.to_dict(),
        "parameters": [
            {"name": k, "shape": list(v.shape), "group": model.groups()[k]}
            for k, v in arrays.items()
        ],
        "seed": seed,
        "config": config_echo or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k, v in arrays.items():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (model, header)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    version = struct.unpack("<I", data[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    hlen = struct.unpack("<I", data[8:12])[0]
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    model = TMSONModel(ModelConfig.from_dict(header["model_config"]), seed=0)
    offset = 12 + hlen
    arrays = {}
    for meta in header["parameters"]:
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = data[offset : offset + 8 * count]
        if len(raw) != 8 * count:
            raise CheckpointError(f"{path}: truncated parameter {meta['name']}")
        arrays[meta["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        offset += 8 * count
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    model.load_state(arrays)
    return model, header
