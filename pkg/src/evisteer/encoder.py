"""Toy CLIP-style dual encoder with steering adapters in its first d layers."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Iterator

import numpy as np

from . import archive
from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .steering import AdapterLayerParams, SteeringConfig, adapter_forward
from .tensor import Tensor

if TYPE_CHECKING:
    from .pretrain import PretextConfig
    from .data import SyntheticTaskSpec

DEFAULT_LOG_TEMPERATURE = float(np.log(20.0))


@dataclass(frozen=True)
class EncoderConfig:
    N: int = 6
    D_v: int = 64
    D_t: int = 64
    P_v: int = 17
    P_t: int = 8
    heads: int = 4
    hidden_mult: int = 2
    E: int = 32
    summary_token: int = -1  # -1 means the last text position

    def __post_init__(self):
        for name in ("N", "D_v", "D_t", "P_v", "P_t", "heads", "hidden_mult", "E"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.D_v % self.heads or self.D_t % self.heads:
            raise ConfigError(f"channel widths {self.D_v}, {self.D_t} must be divisible by heads={self.heads}")
        if not -self.P_t <= self.summary_token < self.P_t:
            raise ConfigError(f"summary_token {self.summary_token} outside {self.P_t} text tokens")

    @property
    def summary_index(self) -> int:
        return self.summary_token % self.P_t


@dataclass
class ModelParams:
    config: EncoderConfig
    frozen: dict[str, Tensor]
    adapters: list[AdapterLayerParams] = field(default_factory=list)
    log_temperature: Tensor = field(default_factory=lambda: Tensor(DEFAULT_LOG_TEMPERATURE))
    train_temperature: bool = False

    def trainable(self) -> list[tuple[str, Tensor]]:
        out = [
            (f"adapters.{i}.{name}", t)
            for i, layer in enumerate(self.adapters)
            for name, t in layer.named()
        ]
        if self.train_temperature:
            out.append(("log_temperature", self.log_temperature))
        return out

    def set_trainable(self, flag: bool = True) -> None:
        for t in self.frozen.values():
            t.requires_grad = False
        for _, t in self.trainable():
            t.requires_grad = flag
        if not self.train_temperature:
            self.log_temperature.requires_grad = False

    def frozen_digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.frozen):
            h.update(name.encode())
            h.update(self.frozen[name].data.tobytes())
        return h.hexdigest()

    def attach_adapters(self, r: int, d: int, seed: int) -> ModelParams:
        """Fresh adapters for the first d layers (zero up-projection)."""
        if d > self.config.N:
            raise ConfigError(f"cannot adapt d={d} layers of an N={self.config.N} encoder")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xADA]))
        self.adapters = [AdapterLayerParams.init(self.config.D_v, self.config.D_t, r, rng) for _ in range(d)]
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        c = self.config
        out = {
            "config.encoder": np.array(
                [c.N, c.D_v, c.D_t, c.P_v, c.P_t, c.heads, c.hidden_mult, c.E, c.summary_token], dtype=np.float64
            ),
            "config.train_temperature": np.array(float(self.train_temperature)),
            "log_temperature": self.log_temperature.data,
        }
        for name in sorted(self.frozen):
            out[f"frozen.{name}"] = self.frozen[name].data
        for name, t in self.trainable():
            if name.startswith("adapters."):
                out[name] = t.data
        return out

    @classmethod
    def from_state_dict(cls, state: dict[str, np.ndarray]) -> ModelParams:
        vals = [int(v) for v in state["config.encoder"]]
        config = EncoderConfig(*vals)
        frozen = {k[len("frozen."):]: Tensor(v) for k, v in state.items() if k.startswith("frozen.")}
        model = cls(
            config=config,
            frozen=frozen,
            log_temperature=Tensor(state["log_temperature"]),
            train_temperature=bool(state["config.train_temperature"]),
        )
        n_layers = len({k.split(".")[1] for k in state if k.startswith("adapters.")})
        if n_layers:
            r = state["adapters.0.vision.W_up"].shape[0]
            model.attach_adapters(r, n_layers, seed=0)
            for name, t in model.trainable():
                if name in state:
                    t.data = state[name].copy()
        return model


def save_checkpoint(path, model: ModelParams) -> None:
    archive.save(path, model.state_dict())


def load_checkpoint(path) -> ModelParams:
    return ModelParams.from_state_dict(archive.load(path))


# ---------------------------------------------------------------------------
# parameter initialisation


def _block_shapes(D: int, hidden: int) -> dict[str, tuple[int, ...]]:
    return {
        "ln1.w": (D,),
        "ln1.b": (D,),
        "qkv.W": (D, 3 * D),
        "qkv.b": (3 * D,),
        "out.W": (D, D),
        "out.b": (D,),
        "ln2.w": (D,),
        "ln2.b": (D,),
        "fc1.W": (D, hidden),
        "fc1.b": (hidden,),
        "fc2.W": (hidden, D),
        "fc2.b": (D,),
    }


def _random_frozen(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    params: dict[str, np.ndarray] = {}
    resid_scale = 1.0 / np.sqrt(2.0 * cfg.N)
    for tag, D, P in (("v", cfg.D_v, cfg.P_v), ("t", cfg.D_t, cfg.P_t)):
        hidden = cfg.hidden_mult * D
        params[f"{tag}.embed"] = rng.normal(0.0, 0.1, size=(P, D))
        for n in range(cfg.N):
            for key, shape in _block_shapes(D, hidden).items():
                name = f"{tag}.blocks.{n}.{key}"
                if key.endswith(".w"):
                    params[name] = np.ones(shape)
                elif key.endswith(".b"):
                    params[name] = np.zeros(shape)
                else:
                    std = 1.0 / np.sqrt(shape[0])
                    if key in ("out.W", "fc2.W"):
                        std *= resid_scale
                    params[name] = rng.normal(0.0, std, size=shape)
        params[f"{tag}.ln_final.w"] = np.ones(D)
        params[f"{tag}.ln_final.b"] = np.zeros(D)
        params[f"{tag}.proj"] = rng.normal(0.0, 1.0 / np.sqrt(D), size=(D, cfg.E))
    return {k: Tensor(v, name=k) for k, v in params.items()}


def init_backbone(
    cfg: EncoderConfig,
    seed: int,
    prealign: PretextConfig | None = None,
    task: SyntheticTaskSpec | None = None,
) -> ModelParams:
    """Deterministic frozen backbone; optionally warmed up on a pretext task.

    The warm-up trains every backbone weight contrastively on classes drawn
    from the same synthetic world as ``task`` but with fresh prototypes, then
    freezes them, so zero-shot transfer is better than chance.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBB]))
    model = ModelParams(config=cfg, frozen=_random_frozen(cfg, rng))
    if prealign is not None:
        from .pretrain import pretrain_backbone

        if task is None:
            raise ConfigError("pre-alignment needs a task template describing the synthetic world")
        pretrain_backbone(model, task, prealign, seed)
    model.set_trainable(False)
    return model


# ---------------------------------------------------------------------------
# forward pass


def _attention(x: Tensor, p: dict[str, Tensor], prefix: str, heads: int, causal: bool) -> Tensor:
    B, P, D = x.shape
    dh = D // heads
    qkv = T.matmul(x, p[prefix + "qkv.W"]) + p[prefix + "qkv.b"]
    qkv = qkv.reshape(B, P, 3, heads, dh)
    q = qkv[:, :, 0].swapaxes(1, 2)  # (B, H, P, dh)
    k = qkv[:, :, 1].swapaxes(1, 2)
    v = qkv[:, :, 2].swapaxes(1, 2)
    scores = T.mul_scalar(T.matmul(q, k.swapaxes(-1, -2)), 1.0 / np.sqrt(dh))
    if causal:
        scores = scores + Tensor(np.triu(np.full((P, P), -1e9), k=1))
    att = T.softmax(scores, axis=-1)
    out = T.matmul(att, v).swapaxes(1, 2).reshape(B, P, D)
    return T.matmul(out, p[prefix + "out.W"]) + p[prefix + "out.b"]


def _block(x: Tensor, p: dict[str, Tensor], prefix: str, heads: int, causal: bool) -> Tensor:
    h = T.layer_norm(x, p[prefix + "ln1.w"], p[prefix + "ln1.b"])
    x = x + _attention(h, p, prefix, heads, causal)
    h = T.layer_norm(x, p[prefix + "ln2.w"], p[prefix + "ln2.b"])
    h = T.gelu(T.matmul(h, p[prefix + "fc1.W"]) + p[prefix + "fc1.b"])
    return x + T.matmul(h, p[prefix + "fc2.W"]) + p[prefix + "fc2.b"]


def _head(x: Tensor, p: dict[str, Tensor], tag: str, index: int) -> Tensor:
    tok = x[:, index]
    h = T.layer_norm(tok, p[f"{tag}.ln_final.w"], p[f"{tag}.ln_final.b"])
    z = T.matmul(h, p[f"{tag}.proj"])
    norm = T.sqrt((z * z).sum(axis=-1, keepdims=True))
    return z / norm


def encode(
    image_tokens: Tensor,
    prompt_tokens: Tensor,
    params: ModelParams,
    cfg: SteeringConfig,
) -> tuple[Tensor, Tensor, Tensor]:
    """Unit-norm image and text features plus the mean per-layer KL term."""
    c = params.config
    image_tokens, prompt_tokens = T.as_tensor(image_tokens), T.as_tensor(prompt_tokens)
    if image_tokens.ndim != 3 or image_tokens.shape[1:] != (c.P_v, c.D_v):
        raise DimensionError(f"image tokens {image_tokens.shape} do not match (B, {c.P_v}, {c.D_v})")
    if prompt_tokens.ndim != 3 or prompt_tokens.shape[1:] != (c.P_t, c.D_t):
        raise DimensionError(f"prompt tokens {prompt_tokens.shape} do not match (C, {c.P_t}, {c.D_t})")
    if cfg.d > c.N:
        raise ConfigError(f"cannot adapt d={cfg.d} layers of an N={c.N} encoder")
    if cfg.d > len(params.adapters):
        raise ConfigError(f"d={cfg.d} but the model only carries {len(params.adapters)} adapter layers")
    p = params.frozen
    comp = cfg.components
    V = image_tokens + p["v.embed"]
    Tx = prompt_tokens + p["t.embed"]
    kls = []
    for n in range(c.N):
        V = _block(V, p, f"v.blocks.{n}.", c.heads, causal=False)
        Tx = _block(Tx, p, f"t.blocks.{n}.", c.heads, causal=True)
        if n < cfg.d:
            layer = params.adapters[n]
            dv, dt, kl = adapter_forward(V, Tx, layer, cfg, c.summary_index)
            if comp.vision_adapt:
                V = V + layer.vision.alpha * dv
            if comp.text_adapt:
                Tx = Tx + layer.text.alpha * dt
            kls.append(kl)
    img = _head(V, p, "v", 0)
    txt = _head(Tx, p, "t", c.summary_index)
    if kls:
        kl_total = kls[0]
        for k in kls[1:]:
            kl_total = kl_total + k
        kl_total = T.mul_scalar(kl_total, 1.0 / len(kls))
    else:
        kl_total = Tensor(0.0)
    return img, txt, kl_total


def classify(img_feat: Tensor, txt_feat: Tensor, log_temperature) -> Tensor:
    """Temperature-scaled cosine similarities, shape (B, C)."""
    for name, f in (("image", img_feat), ("text", txt_feat)):
        norms = np.linalg.norm(f.data, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ContractError(f"{name} features must be L2-normalised (norms {norms.min():.6g}..{norms.max():.6g})")
    scale = T.exp(T.as_tensor(log_temperature))
    return scale * T.matmul(img_feat, txt_feat.swapaxes(0, 1))


def iter_frozen(model: ModelParams) -> Iterator[tuple[str, Tensor]]:
    return iter(sorted(model.frozen.items()))


def config_dict(cfg: EncoderConfig) -> dict:
    return asdict(cfg)
