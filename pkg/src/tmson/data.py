"""Dataset format, synthetic data generation, perturbations, and batching.

Datasets are JSON-lines files: the first line is a header object with the
feature dimensions and label range, every following line is one sample
with its arrays inline.  Serialization is canonical (sorted keys, compact
separators) so that write -> read -> write is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np


class DataError(Exception):
    """Malformed dataset file or invalid configuration."""


@dataclass
class Sample:
    id: str
    y: float
    text: np.ndarray          # (d_t,)
    visual: np.ndarray        # (T_v, d_v)
    audio: np.ndarray         # (T_a, d_a)
    y_t: float | None = None
    y_v: float | None = None
    y_a: float | None = None
    missing: tuple[str, ...] = ()


@dataclass
class Dataset:
    header: dict
    samples: list[Sample]
    missing_mode: str = "zero"

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.header["d_t"], self.header["d_v"], self.header["d_a"]

    @property
    def label_range(self) -> tuple[float, float]:
        lo, hi = self.header["label_range"]
        return float(lo), float(hi)

    def labels(self) -> np.ndarray:
        return np.array([s.y for s in self.samples])

    def __len__(self) -> int:
        return len(self.samples)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_jsonl(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dumps(ds.header) + "\n")
        for s in ds.samples:
            rec = {
                "id": s.id,
                "y": s.y,
                "text": s.text.tolist(),
                "visual": s.visual.tolist(),
                "audio": s.audio.tolist(),
            }
            if s.y_t is not None:
                rec["y_t"] = s.y_t
            if s.y_v is not None:
                rec["y_v"] = s.y_v
            if s.y_a is not None:
                rec["y_a"] = s.y_a
            if s.missing:
                rec["missing"] = sorted(s.missing)
            fh.write(_dumps(rec) + "\n")


def load_jsonl(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file, expected a header line")

    def parse(line_no: int, text: str):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(
                f"{path}:{line_no}: parse error at column {exc.colno}: {exc.msg}"
            ) from exc

    header = parse(1, lines[0])
    for key in ("d_t", "d_v", "d_a", "label_range"):
        if key not in header:
            raise DataError(f"{path}:1: header missing key {key!r}")
    d_t, d_v, d_a = header["d_t"], header["d_v"], header["d_a"]
    lo, hi = header["label_range"]

    samples = []
    for line_no, text in enumerate(lines[1:], start=2):
        if not text:
            continue
        rec = parse(line_no, text)
        try:
            tvec = np.array(rec["text"], dtype=np.float64)
            vmat = np.array(rec["visual"], dtype=np.float64)
            amat = np.array(rec["audio"], dtype=np.float64)
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}:{line_no}: bad sample arrays: {exc}") from exc
        if tvec.shape != (d_t,):
            raise DataError(
                f"{path}:{line_no}: field 'text' has shape {tvec.shape}, "
                f"expected ({d_t},)"
            )
        if vmat.ndim != 2 or vmat.shape[1] != d_v:
            raise DataError(
                f"{path}:{line_no}: field 'visual' has shape {vmat.shape}, "
                f"expected (T, {d_v})"
            )
        if amat.ndim != 2 or amat.shape[1] != d_a:
            raise DataError(
                f"{path}:{line_no}: field 'audio' has shape {amat.shape}, "
                f"expected (T, {d_a})"
            )
        y = float(rec["y"])
        if not (lo <= y <= hi):
            raise DataError(
                f"{path}:{line_no}: label {y} outside range [{lo}, {hi}]"
            )
        samples.append(
            Sample(
                id=str(rec["id"]),
                y=y,
                text=tvec,
                visual=vmat,
                audio=amat,
                y_t=rec.get("y_t"),
                y_v=rec.get("y_v"),
                y_a=rec.get("y_a"),
                missing=tuple(rec.get("missing", ())),
            )
        )
    return Dataset(header=header, samples=samples)


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

SEVEN_LEVELS = np.arange(-3.0, 3.5, 1.0)


@dataclass
class SynthConfig:
    n_train: int = 2000
    n_val: int = 400
    n_test: int = 400
    d_t: int = 24
    d_v: int = 12
    d_a: int = 8
    T_v: int = 10
    T_a: int = 12
    noise_t: float = 2.0
    noise_v: float = 3.0
    noise_a: float = 2.5
    noise_jitter: float = 0.5   # per-sample noise-scale spread, uniform 1 +/- jitter
    irrelevant_frac: float = 0.25
    label_grid: str = "continuous"   # "continuous" | "seven"
    label_range: tuple[float, float] = (-3.0, 3.0)
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) <= 0:
            raise DataError("sample counts must be positive")
        if min(self.noise_t, self.noise_v, self.noise_a) < 0:
            raise DataError("noise levels must be non-negative")
        if not (0.0 <= self.noise_jitter < 1.0):
            raise DataError("noise_jitter must be in [0, 1)")
        if not (0.0 <= self.irrelevant_frac < 1.0):
            raise DataError("irrelevant_frac must be in [0, 1)")
        if self.label_grid not in ("continuous", "seven"):
            raise DataError(f"unknown label_grid {self.label_grid!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "label_range" in d:
            d["label_range"] = tuple(d["label_range"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label_range"] = list(self.label_range)
        return d


def _basis(s: np.ndarray) -> np.ndarray:
    """Smooth 5-dim feature map of the latent sentiment, columns O(1)."""
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    return np.stack(
        [np.ones_like(s), s / 3.0, s * s / 9.0, np.sin(s), np.cos(s)], axis=-1
    )


class SynthModel:
    """Fixed generative maps for one SynthConfig (derived from its seed).

    Each modality observes a linear map of basis(s) plus Gaussian noise;
    a trailing fraction of dimensions is label-irrelevant pure noise.
    """

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.n_info = {
            "t": max(1, round(cfg.d_t * (1.0 - cfg.irrelevant_frac))),
            "v": max(1, round(cfg.d_v * (1.0 - cfg.irrelevant_frac))),
            "a": max(1, round(cfg.d_a * (1.0 - cfg.irrelevant_frac))),
        }
        k = _basis(0.0).shape[-1]
        self.maps = {
            m: rng.normal(size=(self.n_info[m], k)) / np.sqrt(k)
            for m in ("t", "v", "a")
        }
        self.noise = {"t": cfg.noise_t, "v": cfg.noise_v, "a": cfg.noise_a}

    def draw_labels(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.cfg.label_range
        if self.cfg.label_grid == "seven":
            return rng.choice(SEVEN_LEVELS, size=n)
        return rng.uniform(lo, hi, size=n)

    def _noise_scale(self, rng) -> float:
        """Per-sample noise multiplier, uniform in 1 +/- noise_jitter.

        Sample quality varies across the corpus, so the noise level is
        itself informative and estimable from the features.
        """
        j = self.cfg.noise_jitter
        return 1.0 + j * float(rng.uniform(-1.0, 1.0)) if j > 0.0 else 1.0

    def _features(self, m: str, s: float, steps: int, rng) -> np.ndarray:
        cfg = self.cfg
        d = {"t": cfg.d_t, "v": cfg.d_v, "a": cfg.d_a}[m]
        mean = self.maps[m] @ _basis(s)[0]
        sigma = self.noise[m] * self._noise_scale(rng)
        out = np.empty((steps, d))
        out[:, : self.n_info[m]] = mean + sigma * rng.normal(
            size=(steps, self.n_info[m])
        )
        out[:, self.n_info[m]:] = rng.normal(size=(steps, d - self.n_info[m]))
        return out

    def draw_sample(self, sid: str, s: float, rng) -> Sample:
        cfg = self.cfg
        t_v = int(rng.integers(max(1, cfg.T_v // 2), cfg.T_v + 1))
        t_a = int(rng.integers(max(1, cfg.T_a // 2), cfg.T_a + 1))
        return Sample(
            id=sid,
            y=float(s),
            text=self._features("t", s, 1, rng)[0],
            visual=self._features("v", s, t_v, rng),
            audio=self._features("a", s, t_a, rng),
        )

    def posterior_grid(self, n_grid: int = 601) -> np.ndarray:
        lo, hi = self.cfg.label_range
        if self.cfg.label_grid == "seven":
            return SEVEN_LEVELS.copy()
        return np.linspace(lo, hi, n_grid)

    def bayes_floor_mae(self, n_draws: int, rng: np.random.Generator) -> float:
        """Monte Carlo estimate of E|s - E[s | features]| for this model.

        Exact posterior over a label grid; irrelevant dimensions carry no
        information and are skipped.  The posterior conditions on each
        draw's noise scale, so with jitter this is a slightly optimistic
        lower bound.
        """
        grid = self.posterior_grid()
        basis_grid = _basis(grid)                      # (G, k)
        means = {m: basis_grid @ self.maps[m].T for m in ("t", "v", "a")}
        steps = {"t": 1, "v": None, "a": None}
        total = 0.0
        for _ in range(n_draws):
            s = self.draw_labels(1, rng)[0]
            loglik = np.zeros(grid.shape[0])
            for m in ("t", "v", "a"):
                if self.noise[m] == 0.0:
                    continue
                n_steps = (
                    1 if m == "t"
                    else int(rng.integers(
                        max(1, (self.cfg.T_v if m == "v" else self.cfg.T_a) // 2),
                        (self.cfg.T_v if m == "v" else self.cfg.T_a) + 1,
                    ))
                )
                mean = self.maps[m] @ _basis(s)[0]
                sigma = self.noise[m] * self._noise_scale(rng)
                x = mean + sigma * rng.normal(size=(n_steps, self.n_info[m]))
                xs = x.sum(axis=0)
                x2 = float((x * x).sum())
                mm = means[m]
                quad = x2 - 2.0 * mm @ xs + n_steps * (mm * mm).sum(axis=1)
                loglik -= quad / (2.0 * sigma**2)
            loglik -= loglik.max()
            w = np.exp(loglik)
            w /= w.sum()
            total += abs(float(w @ grid) - s)
        return total / n_draws


def generate_synthetic(cfg: SynthConfig) -> dict[str, Dataset]:
    """Seeded train/val/test splits plus the stored Bayes-floor MAE."""
    model = SynthModel(cfg)
    floor = model.bayes_floor_mae(
        n_draws=4000, rng=np.random.default_rng(cfg.seed + 1000)
    )
    header = {
        "d_t": cfg.d_t,
        "d_v": cfg.d_v,
        "d_a": cfg.d_a,
        "label_range": list(cfg.label_range),
        "bayes_floor_mae": floor,
        "synth_config": cfg.to_dict(),
    }
    splits = {}
    counts = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    for idx, (name, n) in enumerate(counts.items()):
        rng = np.random.default_rng(cfg.seed * 7919 + idx + 1)
        labels = model.draw_labels(n, rng)
        samples = [
            model.draw_sample(f"{name}-{i:05d}", labels[i], rng) for i in range(n)
        ]
        splits[name] = Dataset(header=dict(header), samples=samples)
    return splits


# ---------------------------------------------------------------------------
# Perturbation operators
# ---------------------------------------------------------------------------


def _copy_sample(s: Sample) -> Sample:
    return Sample(
        id=s.id,
        y=s.y,
        text=s.text.copy(),
        visual=s.visual.copy(),
        audio=s.audio.copy(),
        y_t=s.y_t,
        y_v=s.y_v,
        y_a=s.y_a,
        missing=s.missing,
    )


def perturb_noise(ds: Dataset, eta: float, modalities, seed: int) -> Dataset:
    """Add eta-scaled standard-normal noise to the selected modalities."""
    if eta < 0:
        raise DataError("noise intensity must be non-negative")
    modalities = set(modalities)
    out = Dataset(
        header=dict(ds.header),
        samples=[_copy_sample(s) for s in ds.samples],
        missing_mode=ds.missing_mode,
    )
    if eta == 0.0:
        return out
    rng = np.random.default_rng(seed)
    for s in out.samples:
        if "t" in modalities:
            s.text = s.text + eta * rng.normal(size=s.text.shape)
        if "v" in modalities:
            s.visual = s.visual + eta * rng.normal(size=s.visual.shape)
        if "a" in modalities:
            s.audio = s.audio + eta * rng.normal(size=s.audio.shape)
    return out


def drop_modality(
    ds: Dataset, modality: str, rate: float, mode: str, seed: int
) -> Dataset:
    """Mark one modality missing per sample with the given probability."""
    if modality not in ("t", "v", "a"):
        raise DataError(f"unknown modality {modality!r}")
    if not (0.0 <= rate <= 1.0):
        raise DataError(f"missing rate {rate} outside [0, 1]")
    if mode not in ("zero", "exclude"):
        raise DataError(f"unknown missing mode {mode!r}")
    rng = np.random.default_rng(seed)
    out_samples = []
    for s in ds.samples:
        c = _copy_sample(s)
        if rate > 0.0 and rng.random() < rate:
            c.missing = tuple(sorted(set(c.missing) | {modality}))
        out_samples.append(c)
    return Dataset(header=dict(ds.header), samples=out_samples, missing_mode=mode)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    ids: list[str]
    y: np.ndarray             # (B,)
    text: np.ndarray          # (B, d_t)
    visual: np.ndarray        # (B, T_max, d_v), zero-padded
    v_len: np.ndarray         # (B,)
    audio: np.ndarray
    a_len: np.ndarray
    missing: frozenset = frozenset()

    def __len__(self) -> int:
        return len(self.ids)


def _pad(mats: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([m.shape[0] for m in mats])
    t_max = int(lengths.max())
    out = np.zeros((len(mats), t_max, mats[0].shape[1]))
    for i, m in enumerate(mats):
        out[i, : m.shape[0]] = m
    return out, lengths


def make_batch(samples: list[Sample], missing: frozenset = frozenset()) -> Batch:
    visual, v_len = _pad([s.visual for s in samples])
    audio, a_len = _pad([s.audio for s in samples])
    return Batch(
        ids=[s.id for s in samples],
        y=np.array([s.y for s in samples]),
        text=np.stack([s.text for s in samples]),
        visual=visual,
        v_len=v_len,
        audio=audio,
        a_len=a_len,
        missing=missing,
    )


def batches(ds: Dataset, batch_size: int, shuffle_seed: int | None = None) -> list[Batch]:
    """Seeded shuffle, pad to per-batch max length, keep the final partial batch.

    All samples must share one missing pattern; callers with mixed patterns
    should group with batches_by_missing().
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    order = np.arange(len(ds.samples))
    if shuffle_seed is not None:
        np.random.default_rng(shuffle_seed).shuffle(order)
    patterns = {frozenset(s.missing) for s in ds.samples}
    if len(patterns) > 1:
        raise DataError("mixed missing patterns; use batches_by_missing()")
    missing = patterns.pop() if patterns else frozenset()
    out = []
    for start in range(0, len(order), batch_size):
        chunk = [ds.samples[i] for i in order[start : start + batch_size]]
        out.append(make_batch(chunk, missing=missing))
    return out


def batches_by_missing(ds: Dataset, batch_size: int) -> list[Batch]:
    """Deterministic batches grouped by per-sample missing pattern."""
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    groups: dict[frozenset, list[Sample]] = {}
    for s in ds.samples:
        groups.setdefault(frozenset(s.missing), []).append(s)
    out = []
    for pattern in sorted(groups, key=lambda p: sorted(p)):
        members = groups[pattern]
        for start in range(0, len(members), batch_size):
            out.append(make_batch(members[start : start + batch_size], missing=pattern))
    return out
