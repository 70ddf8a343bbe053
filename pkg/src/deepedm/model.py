"""The DeepEDM forecaster.

A base MLP produces an initial forecast; each block delay-embeds the
lookback plus the current forecast, projects delay vectors to a latent
space, runs softmax kernel regression from the forecast-region queries
onto the lookback keys, decodes the result and blends it with its input
forecast through a sigmoid gate.  All components are shared across
channels.  Inputs are ``(B, D, T)`` arrays; outputs ``(B, D, H)``.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .embedding import delay_embed_tensor
from .nn import Linear, Mlp, Module, attention, mlp_forward
from .tensor import Tensor, ShapeError

REVIN_EPS = 1e-5
DEGENERATE_STD = 1e-8


@dataclass
class ModelConfig:
    lookback: int | None = None  # None -> 2 * horizon
    horizon: int = 48
    delta_t: int = 5
    tau_delay: int = 1
    latent_dim: int = 32
    n_blocks: int = 1
    base_mlp_layers: int = 2
    base_hidden: int | None = None  # None -> 2 * lookback
    dec_hidden: int | None = None  # None -> 2 * horizon
    dec_layers: int = 2
    dropout_p: float = 0.1
    temperature: float = 1.0
    loss_mode: str = "mae"
    adaptive_lambda: bool = True
    kernel_values: str = "latent"  # "latent": z_{t+1}; "delay": raw delay vector y_{t+1}
    gate_bias_init: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.lookback is None:
            self.lookback = 2 * self.horizon
        if self.base_hidden is None:
            self.base_hidden = 2 * self.lookback
        if self.dec_hidden is None:
            self.dec_hidden = 2 * self.horizon
        if self.horizon < 1 or self.lookback < 1:
            raise ValueError("lookback and horizon must be >= 1")
        if self.latent_dim < self.delta_t:
            raise ValueError(f"latent_dim ({self.latent_dim}) must be >= delta_t ({self.delta_t})")
        if not 1 <= self.n_blocks <= 3:
            raise ValueError(f"n_blocks must be in [1, 3], got {self.n_blocks}")
        if not 1 <= self.base_mlp_layers <= 3:
            raise ValueError(f"base_mlp_layers must be in [1, 3], got {self.base_mlp_layers}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.loss_mode not in ("mae", "mse"):
            raise ValueError(f"loss_mode must be 'mae' or 'mse', got {self.loss_mode!r}")
        if self.kernel_values not in ("latent", "delay"):
            raise ValueError(f"kernel_values must be 'latent' or 'delay', got {self.kernel_values!r}")
        if self.delta_t < 1 or self.tau_delay < 1:
            raise ValueError("delta_t and tau_delay must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# -- reversible instance normalisation ------------------------------------

@dataclass
class RevinState:
    mean: np.ndarray
    std: np.ndarray
    eps: float = REVIN_EPS

    @property
    def degenerate(self) -> np.ndarray:
        return self.std < DEGENERATE_STD

    @property
    def scale(self) -> np.ndarray:
        return np.where(self.degenerate, 0.0, self.std + self.eps)


def revin(series) -> tuple[np.ndarray, RevinState]:
    """Per-channel ``(x - mean) / (std + eps)`` over the last axis.

    Channels with std below ``1e-8`` are treated as constant and map to zeros.
    """
    x = np.asarray(series, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    state = RevinState(mean, std)
    safe = np.where(state.degenerate, 1.0, std + state.eps)
    normed = np.where(state.degenerate, 0.0, (x - mean) / safe)
    return normed, state


def revin_inverse(x, state: RevinState):
    """Undo :func:`revin`; degenerate channels come back as their mean."""
    if isinstance(x, Tensor):
        scale = np.broadcast_to(state.scale, x.shape)
        mean = np.broadcast_to(state.mean, x.shape)
        return x * Tensor(scale) + Tensor(mean)
    return np.asarray(x) * state.scale + state.mean


# -- components ------------------------------------------------------------

def base_predict(f: Mlp, lookback, mode: str = "eval", rng=None) -> Tensor:
    """Apply the shared base MLP to every channel: ``(..., T) -> (..., H)``."""
    x = T.as_tensor(lookback)
    if x.shape[-1] != f.in_features:
        raise ShapeError(f"base predictor expects lookback {f.in_features}, got shape {x.shape}")
    return mlp_forward(f, x, mode, rng)


def encode(enc: Linear, embedding) -> Tensor:
    """Project each delay vector: ``(..., delta_t, L) -> (..., M, L)``."""
    e = T.as_tensor(embedding)
    if e.shape[-2] != enc.in_features:
        raise ShapeError(f"encoder expects delay dim {enc.in_features}, got embedding shape {e.shape}")
    return enc(e.swapaxes(-1, -2)).swapaxes(-1, -2)


def kernel_regress(z, lookback: int, horizon: int, temperature: float = 1.0, values=None) -> Tensor:
    """Softmax kernel regression in latent space, one step ahead.

    ``z`` is ``(..., M, T+H)``.  For forecast step ``i`` (0-based) the query
    is ``z[..., T-1+i]``; keys are ``z[..., 0:T]`` and the value paired with
    key ``t`` is ``values[..., t+1]`` (``values`` defaults to ``z``).
    Returns ``(..., V, H)`` where ``V`` is the value feature size.
    """
    z = T.as_tensor(z)
    if z.shape[-1] != lookback + horizon:
        raise ShapeError(f"latent length {z.shape[-1]} != lookback + horizon = {lookback + horizon}")
    v = z if values is None else T.as_tensor(values)
    if v.shape[-1] != lookback + horizon:
        raise ShapeError(f"value length {v.shape[-1]} != lookback + horizon = {lookback + horizon}")
    zt = z.swapaxes(-1, -2)  # (..., L, M)
    vt = v.swapaxes(-1, -2)
    keys = zt[..., 0:lookback, :]
    vals = vt[..., 1:lookback + 1, :]
    queries = zt[..., lookback - 1:lookback + horizon - 1, :]
    return attention(queries, keys, vals, temperature).swapaxes(-1, -2)


def decode(dec: Mlp, ybar, mode: str = "eval", rng=None) -> Tensor:
    """Flatten each channel's ``(M, H)`` block row-major and map it to ``H`` values."""
    y = T.as_tensor(ybar)
    flat = y.reshape(y.shape[:-2] + (y.shape[-2] * y.shape[-1],))
    if flat.shape[-1] != dec.in_features:
        raise ShapeError(f"decoder expects {dec.in_features} inputs, got {flat.shape[-1]}")
    return mlp_forward(dec, flat, mode, rng)


class DeepEdmBlock(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        value_dim = cfg.latent_dim if cfg.kernel_values == "latent" else cfg.delta_t
        self.encoder = Linear(cfg.delta_t, cfg.latent_dim, rng)
        dec_sizes = [value_dim * cfg.horizon] + [cfg.dec_hidden] * (cfg.dec_layers - 1) + [cfg.horizon]
        self.decoder = Mlp(dec_sizes, dropout_p=cfg.dropout_p, rng=rng)
        self.gate = Linear(cfg.horizon, cfg.horizon, rng)
        self.gate.bias.data = np.full(cfg.horizon, cfg.gate_bias_init)
        self.cfg = cfg


def block_forward(block: DeepEdmBlock, lookback, forecast_in, mode: str = "eval", rng=None) -> Tensor:
    """``g * forecast_in + (1 - g) * refinement`` with ``g = sigmoid(gate(forecast_in))``."""
    cfg = block.cfg
    lb, fc = T.as_tensor(lookback), T.as_tensor(forecast_in)
    ext = T.concat([lb, fc], axis=-1)
    emb = delay_embed_tensor(ext, cfg.delta_t, cfg.tau_delay)
    z = encode(block.encoder, emb)
    values = None if cfg.kernel_values == "latent" else emb
    ybar = kernel_regress(z, lb.shape[-1], fc.shape[-1], cfg.temperature, values)
    refined = decode(block.decoder, ybar, mode, rng)
    g = T.sigmoid(block.gate(fc))
    return refined + g * (fc - refined)


class DeepEDM(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        sizes = [cfg.lookback] + [cfg.base_hidden] * (cfg.base_mlp_layers - 1) + [cfg.horizon]
        self.base = Mlp(sizes, dropout_p=cfg.dropout_p, rng=rng)
        self.blocks = [DeepEdmBlock(cfg, rng) for _ in range(cfg.n_blocks)]

    def __call__(self, lookback, mode: str | None = None, rng=None) -> Tensor:
        mode = mode or ("train" if self.training else "eval")
        return model_forward(self, lookback, mode, rng)

    def predict(self, lookback) -> np.ndarray:
        return model_forward(self, lookback, "eval").data

    def latents(self, series, block: int = 0) -> np.ndarray:
        """Encoder latents ``(L, M)`` of a 1-D series, normalised as one instance."""
        normed, _ = revin(np.asarray(series, dtype=np.float64))
        cfg = self.cfg
        emb = delay_embed_tensor(Tensor(normed), cfg.delta_t, cfg.tau_delay)
        return encode(self.blocks[block].encoder, emb).data.T


def model_forward(model: DeepEDM, lookback, mode: str = "eval", rng=None) -> Tensor:
    """RevIN -> base predictor -> stacked blocks -> inverse RevIN."""
    x = np.asarray(lookback.data if isinstance(lookback, Tensor) else lookback, dtype=np.float64)
    if x.shape[-1] != model.cfg.lookback:
        raise ShapeError(f"expected lookback length {model.cfg.lookback}, got shape {x.shape}")
    normed, state = revin(x)
    lb = Tensor(normed)
    y = base_predict(model.base, lb, mode, rng)
    for block in model.blocks:
        y = block_forward(block, lb, y, mode, rng)
    return revin_inverse(y, state)
