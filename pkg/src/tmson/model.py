"""Full network assembly: parameter construction and the batched forward
pass producing predictions, embeddings, and loss components."""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .encoders import (
    LSTMEncoder,
    LSTMSpec,
    MLP,
    MLPSpec,
    ParamStore,
    project,
    unimodal_predict,
    uniform_init,
)
from . import fusion as fus
from . import uncertainty as unc
from .uncertainty import GaussianEmbedding
from .data import Batch

MODALITIES = ("t", "v", "a")


@dataclass
class ModelConfig:
    """Architecture dimensions; defaults follow the MOSI-scale setup."""

    d_t: int
    d_v: int
    d_a: int
    text_hidden: int = 128
    d_tp: int = 32            # text feature dim
    d_vp: int = 32            # visual LSTM hidden dim
    d_ap: int = 16            # audio LSTM hidden dim
    d_star: int = 128         # shared projection space
    dist_dim: int = 64        # latent Gaussian dim D
    unc_hidden: int = 128
    fc_f_hidden: int = 128
    dropout_t: float = 0.1
    dropout_v: float = 0.1
    dropout_a: float = 0.1
    dropout_f: float = 0.0
    head_dropout: bool = True
    missing_mode: str = "zero"    # "zero" | "exclude"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class BatchOutputs:
    y_f: Tensor                       # (B,)
    y_m: dict[str, Tensor]            # modality -> (B,)
    f: dict[str, Tensor]              # raw extractor features
    f_star: dict[str, Tensor]         # projected features
    embeddings: dict[str, GaussianEmbedding]
    fused: GaussianEmbedding
    z_f: Tensor
    rec_loss: Tensor | None = None
    kl: Tensor | None = None


class TMSONModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0,
                 store: ParamStore | None = None):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.store = store if store is not None else ParamStore()
        s = self.store

        self.text_mlp = MLP(
            s, "text", MLPSpec([cfg.d_t, cfg.text_hidden, cfg.d_tp], cfg.dropout_t),
            "other", rng)
        self.vlstm = LSTMEncoder(s, "vlstm", LSTMSpec(cfg.d_v, cfg.d_vp),
                                 "visual", rng)
        self.alstm = LSTMEncoder(s, "alstm", LSTMSpec(cfg.d_a, cfg.d_ap),
                                 "audio", rng)

        dims = {"t": cfg.d_tp, "v": cfg.d_vp, "a": cfg.d_ap}
        self.proj = {}
        self.head = {}
        self.unc_mu = {}
        self.unc_sigma = {}
        self.decoder = {}
        for m in MODALITIES:
            d = dims[m]
            self.proj[m] = s.add(f"proj.{m}", uniform_init(
                rng, (d, cfg.d_star), 1.0 / np.sqrt(d)), "other")
            self.head[m] = (
                s.add(f"head.{m}.w", uniform_init(rng, (d, 1), 1.0 / np.sqrt(d)),
                      "other"),
                s.add(f"head.{m}.b", uniform_init(rng, (1, 1), 1.0 / np.sqrt(d)),
                      "other"),
            )
            self.unc_mu[m] = MLP(
                s, f"unc.{m}.mu",
                MLPSpec([cfg.d_star, cfg.unc_hidden, cfg.dist_dim]), "other", rng)
            self.unc_sigma[m] = MLP(
                s, f"unc.{m}.sigma",
                MLPSpec([cfg.d_star, cfg.unc_hidden, cfg.dist_dim]), "other", rng)
            self.decoder[m] = MLP(
                s, f"unc.{m}.dec",
                MLPSpec([cfg.dist_dim, cfg.unc_hidden, cfg.d_star]), "other", rng)

        joint = cfg.d_tp + cfg.d_vp + cfg.d_ap + cfg.dist_dim
        self.fc_f = MLP(s, "fcf", MLPSpec([joint, cfg.fc_f_hidden, 1],
                                          cfg.dropout_f), "other", rng)

    # -- forward ----------------------------------------------------------

    def _head_dropout(self, m: str) -> float:
        if not self.cfg.head_dropout:
            return 0.0
        return {"t": self.cfg.dropout_t, "v": self.cfg.dropout_v,
                "a": self.cfg.dropout_a}[m]

    def forward(self, batch: Batch, train: bool = False,
                rng: np.random.Generator | None = None,
                need_rec: bool = True, need_kl: bool = True) -> BatchOutputs:
        cfg = self.cfg
        bsz = len(batch)
        zero_out = cfg.missing_mode == "zero"
        dims = {"t": cfg.d_tp, "v": cfg.d_vp, "a": cfg.d_ap}

        f = {}
        for m in MODALITIES:
            if m in batch.missing and zero_out:
                f[m] = Tensor(np.zeros((bsz, dims[m])))
            elif m == "t":
                f[m] = self.text_mlp(Tensor(batch.text), train, rng)
            elif m == "v":
                f[m] = self.vlstm.encode_batch(batch.visual, batch.v_len)
            else:
                f[m] = self.alstm.encode_batch(batch.audio, batch.a_len)

        y_m = {}
        f_star = {}
        embeddings = {}
        z = {}
        for m in MODALITIES:
            pred = unimodal_predict(f[m], *self.head[m],
                                    dropout_rate=self._head_dropout(m),
                                    train=train, rng=rng)
            y_m[m] = dc.reshape(pred, (bsz,))
            f_star[m] = project(f[m], self.proj[m])
            embeddings[m] = unc.estimate_distribution(
                f_star[m], self.unc_mu[m], self.unc_sigma[m], train, rng)
            if train:
                eps = rng.standard_normal((bsz, cfg.dist_dim))
                z[m] = unc.sample(embeddings[m], eps)
            else:
                z[m] = embeddings[m].mu

        present = [m for m in MODALITIES if m not in batch.missing]
        if not present:
            raise fus.FusionError("all modalities missing; nothing to fuse")
        fused = fus.fuse_all([embeddings[m] for m in present])
        if train:
            z_f = unc.sample(fused, rng.standard_normal((bsz, cfg.dist_dim)))
        else:
            z_f = fused.mu

        pred_f = fus.predict_multimodal(f["t"], f["v"], f["a"], z_f,
                                        self.fc_f, train, rng)
        y_f = dc.reshape(pred_f, (bsz,))

        rec = None
        if need_rec:
            rec = unc.reconstruction_loss(z, f_star, self.decoder, train, rng)
        kl = unc.kl_loss(embeddings) if need_kl else None

        return BatchOutputs(y_f=y_f, y_m=y_m, f=f, f_star=f_star,
                            embeddings=embeddings, fused=fused, z_f=z_f,
                            rec_loss=rec, kl=kl)

    # -- parameter access -------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return self.store.tensors()

    def groups(self) -> dict[str, str]:
        return self.store.groups()

    def zero_grads(self) -> None:
        for t in self.store.tensors().values():
            t.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.store.tensors().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.store.tensors()
        if set(arrays) != set(params):
            raise ValueError("checkpoint parameter names do not match model")
        for k, t in params.items():
            if arrays[k].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {k}")
            t.data = np.array(arrays[k], dtype=np.float64)
