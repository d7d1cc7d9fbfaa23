"""Metrics, uncertainty summarization, and the robustness / ablation
harnesses."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, batches_by_missing, drop_modality, perturb_noise
from .model import MODALITIES, ModelConfig, TMSONModel
from .training import TrainConfig, train


class MetricError(Exception):
    pass


# ---------------------------------------------------------------------------
# Binning schemes
# ---------------------------------------------------------------------------

MOSI_RANGE = (-3.0, 3.0)
SIMS_RANGE = (-1.0, 1.0)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def _bin_acc7(x):
    return np.clip(_round_half_up(x), -3, 3).astype(int)


def _bin_nonneg(x):
    return (np.asarray(x) >= 0).astype(int)


def _bin_pos(x):
    return (np.asarray(x) > 0).astype(int)


def _bin_edges(edges):
    def fn(x):
        return np.digitize(np.asarray(x), edges)
    return fn


@dataclass(frozen=True)
class MetricScheme:
    name: str
    label_range: tuple[float, float]
    binner: callable
    binary: bool = False
    exclude_zero_labels: bool = False


SCHEMES = {
    s.name: s
    for s in [
        MetricScheme("mosi-acc7", MOSI_RANGE, _bin_acc7),
        MetricScheme("mosi-acc2-nonneg", MOSI_RANGE, _bin_nonneg, binary=True),
        MetricScheme("mosi-acc2-pos", MOSI_RANGE, _bin_pos, binary=True,
                     exclude_zero_labels=True),
        MetricScheme("sims-acc2", SIMS_RANGE, _bin_nonneg, binary=True),
        MetricScheme("sims-acc3", SIMS_RANGE, _bin_edges([-0.1, 0.1])),
        MetricScheme("sims-acc5", SIMS_RANGE,
                     _bin_edges([-0.7, -0.1, 0.1, 0.7])),
    ]
}


def regression_metrics(preds, labels):
    """(MAE, Pearson correlation, degenerate-variance flag)."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise MetricError(f"length mismatch: {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise MetricError("empty inputs")
    mae = float(np.mean(np.abs(preds - labels)))
    degenerate = bool(np.std(preds) == 0.0 or np.std(labels) == 0.0)
    if degenerate:
        corr = 0.0
    else:
        corr = float(np.corrcoef(preds, labels)[0, 1])
    return mae, corr, degenerate


def _binary_f1(pred_bins, label_bins, positive=1):
    tp = int(np.sum((pred_bins == positive) & (label_bins == positive)))
    fp = int(np.sum((pred_bins == positive) & (label_bins != positive)))
    fn = int(np.sum((pred_bins != positive) & (label_bins == positive)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def classification_metrics(preds, labels, scheme: str | MetricScheme) -> dict:
    """Accuracy over the scheme's bins, plus F1 for binary schemes."""
    if isinstance(scheme, str):
        try:
            scheme = SCHEMES[scheme]
        except KeyError:
            raise MetricError(f"unknown scheme {scheme!r}") from None
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    lo, hi = scheme.label_range
    if np.any(labels < lo) or np.any(labels > hi):
        raise MetricError(f"label outside {scheme.name} range [{lo}, {hi}]")
    if scheme.exclude_zero_labels:
        keep = labels != 0.0
        preds, labels = preds[keep], labels[keep]
        if preds.size == 0:
            raise MetricError("no samples left after excluding zero labels")
    pred_bins = scheme.binner(preds)
    label_bins = scheme.binner(labels)
    out = {"accuracy": float(np.mean(pred_bins == label_bins))}
    if scheme.binary:
        out["f1"] = float(_binary_f1(pred_bins, label_bins))
    return out


# ---------------------------------------------------------------------------
# Uncertainty scalars
# ---------------------------------------------------------------------------


def harmonic_mean(sigma: np.ndarray) -> float:
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise MetricError("harmonic mean needs strictly positive sigmas")
    return float(sigma.size / np.sum(1.0 / sigma))


@dataclass
class Calibration:
    """Per-run min/max of raw harmonic means, mapping them onto [0, 1]."""

    lo: float
    hi: float

    @classmethod
    def from_values(cls, values) -> "Calibration":
        values = np.asarray(values, dtype=np.float64)
        return cls(lo=float(values.min()), hi=float(values.max()))

    def normalize(self, h: float) -> float:
        if self.hi == self.lo:
            return 0.0
        return (h - self.lo) / (self.hi - self.lo)


def uncertainty_scalar(sigma: np.ndarray, calibration: Calibration) -> float:
    return calibration.normalize(harmonic_mean(sigma))


# ---------------------------------------------------------------------------
# Evaluation passes
# ---------------------------------------------------------------------------


def evaluate_with_uncertainty(model: TMSONModel, ds: Dataset,
                              batch_size: int = 64):
    """Eval-mode pass returning per-sample predictions (fused and
    unimodal) and raw harmonic-mean uncertainties, in dataset order."""
    n = len(ds)
    preds = np.empty(n)
    preds_m = {m: np.empty(n) for m in MODALITIES}
    raw_u = {k: np.empty(n) for k in ("t", "v", "a", "f")}
    pos = {s.id: i for i, s in enumerate(ds.samples)}
    for batch in batches_by_missing(ds, batch_size):
        out = model.forward(batch, train=False, need_rec=False, need_kl=False)
        for j, sid in enumerate(batch.ids):
            i = pos[sid]
            preds[i] = out.y_f.data[j]
            for m in MODALITIES:
                preds_m[m][i] = out.y_m[m].data[j]
                raw_u[m][i] = harmonic_mean(out.embeddings[m].sigma.data[j])
            raw_u["f"][i] = harmonic_mean(out.fused.sigma.data[j])
    return preds, preds_m, raw_u


@dataclass
class Report:
    mae: float
    corr: float
    degenerate: bool
    scheme: str
    classification: dict
    uncertainty: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "corr": self.corr,
            "degenerate_predictions": self.degenerate,
            "scheme": self.scheme,
            "classification": self.classification,
            "uncertainty": self.uncertainty,
            "tables": self.tables,
        }


def evaluate(model: TMSONModel, ds: Dataset, scheme: str = "mosi-acc2-nonneg",
             batch_size: int = 64) -> Report:
    preds, _, raw_u = evaluate_with_uncertainty(model, ds, batch_size)
    labels = ds.labels()
    mae, corr, degenerate = regression_metrics(preds, labels)
    cls = classification_metrics(preds, labels, scheme)
    cals = {k: Calibration.from_values(v) for k, v in raw_u.items()}
    uncertainty = {
        f"u_{k}": float(np.mean([cals[k].normalize(h) for h in raw_u[k]]))
        for k in raw_u
    }
    uncertainty.update({f"raw_h_{k}": float(np.mean(raw_u[k])) for k in raw_u})
    return Report(mae=mae, corr=corr, degenerate=degenerate, scheme=scheme,
                  classification=cls, uncertainty=uncertainty)


# ---------------------------------------------------------------------------
# Robustness sweeps
# ---------------------------------------------------------------------------


def robustness_sweep(model: TMSONModel, ds: Dataset, eta_grid, missing_grid,
                     seeds, scheme: str = "mosi-acc2-nonneg",
                     modalities=("t", "v", "a"), missing_mode: str = "zero",
                     batch_size: int = 64) -> dict:
    """Noise-intensity and text-missing-rate sweeps, averaged over seeds.

    Uncertainty scalars are min-max calibrated across the whole sweep of
    one seed, so rows within a sweep are directly comparable.
    """
    if not list(eta_grid) and not list(missing_grid):
        raise MetricError("both sweep grids are empty")
    labels = ds.labels()
    noise_rows = {float(eta): [] for eta in eta_grid}
    missing_rows = {float(rate): [] for rate in missing_grid}

    for seed in seeds:
        per_eta = {}
        for eta in eta_grid:
            noisy = perturb_noise(ds, float(eta), modalities, seed=int(seed))
            preds, _, raw_u = evaluate_with_uncertainty(model, noisy, batch_size)
            per_eta[float(eta)] = (preds, raw_u)
        if per_eta:
            cals = {
                k: Calibration.from_values(
                    np.concatenate([u[k] for _, u in per_eta.values()]))
                for k in ("t", "v", "a", "f")
            }
            for eta, (preds, raw_u) in per_eta.items():
                mae, corr, _ = regression_metrics(preds, labels)
                cls = classification_metrics(preds, labels, scheme)
                row = {"eta": eta, "mae": mae, "corr": corr, **cls}
                for k in ("t", "v", "a", "f"):
                    row[f"u_{k}"] = float(np.mean(
                        [cals[k].normalize(h) for h in raw_u[k]]))
                noise_rows[eta].append(row)

        for rate in missing_grid:
            dropped = drop_modality(ds, "t", float(rate), missing_mode,
                                    seed=int(seed) + 7)
            saved_mode = model.cfg.missing_mode
            model.cfg.missing_mode = missing_mode
            try:
                preds, _, _ = evaluate_with_uncertainty(model, dropped, batch_size)
            finally:
                model.cfg.missing_mode = saved_mode
            mae, corr, _ = regression_metrics(preds, labels)
            cls = classification_metrics(preds, labels, scheme)
            missing_rows[float(rate)].append(
                {"rate": float(rate), "mae": mae, "corr": corr, **cls})

    def average(rows_by_key):
        table = []
        for key in sorted(rows_by_key):
            rows = rows_by_key[key]
            if not rows:
                continue
            avg = {
                k: float(np.mean([r[k] for r in rows])) for k in rows[0]
            }
            table.append(avg)
        return table

    return {"noise": average(noise_rows), "missing": average(missing_rows)}


def sweep_to_csv(sweep: dict, path) -> None:
    """Flatten both sweep tables into one CSV with a leading kind column."""
    rows = []
    for kind, key in (("noise", "eta"), ("missing", "rate")):
        for row in sweep.get(kind, []):
            rows.append({"kind": kind, "value": row[key],
                         **{k: v for k, v in row.items() if k != key}})
    if not rows:
        return
    columns = ["kind", "value"]
    for row in rows:
        for k in row:
            if k not in columns:
                columns.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Ablation harness
# ---------------------------------------------------------------------------

ABLATION_CONFIGS = [
    ("L_f", {"beta_t": 0.0, "beta_v": 0.0, "beta_a": 0.0,
             "lambda1": 0.0, "lambda2": 0.0, "lambda3": 0.0}),
    ("L_reg", {"lambda1": 0.0, "lambda2": 0.0, "lambda3": 0.0}),
    ("L_reg+L_rec", {"lambda2": 0.0, "lambda3": 0.0}),
    ("L_reg+L_ord", {"lambda1": 0.0, "lambda2": 0.0}),
    ("L_reg+L_rec+L_kl", {"lambda3": 0.0}),
    ("L_reg+L_rec+L_ord", {"lambda2": 0.0}),
    ("L_reg+L_rec+L_ord+L_kl", {}),
]


def run_ablation(train_ds: Dataset, val_ds: Dataset, model_cfg: ModelConfig,
                 base_cfg: TrainConfig, seeds) -> list[dict]:
    """Train every loss-subset configuration for each seed; returns one
    row per configuration with per-seed and mean validation MAE."""
    rows = []
    for name, overrides in ABLATION_CONFIGS:
        maes = []
        for seed in seeds:
            weights = replace(base_cfg.weights, **overrides)
            cfg = replace(base_cfg, weights=weights, seed=int(seed))
            _, history = train(train_ds, val_ds, model_cfg, cfg)
            maes.append(min(h["val_mae"] for h in history))
        rows.append({
            "config": name,
            "val_mae_per_seed": maes,
            "val_mae_mean": float(np.mean(maes)),
        })
    return rows


def ablation_to_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "val_mae_mean", "val_mae_per_seed"])
        for row in rows:
            writer.writerow([row["config"], row["val_mae_mean"],
                             " ".join(f"{m:.6f}" for m in row["val_mae_per_seed"])])
