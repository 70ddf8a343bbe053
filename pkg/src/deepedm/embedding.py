"""Time-delay embedding with zero padding before the sequence.

Lags are ordered most-recent-first: ``data[..., j, t] = x[..., t - j*tau]``
(zero where ``t - j*tau < 0``), so the temporal length is preserved.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class DelayEmbedding:
    delta_t: int
    tau: int
    data: np.ndarray  # (..., delta_t, L)
    pad_policy: str = "zero_front"

    @property
    def length(self) -> int:
        return self.data.shape[-1]


def _check(delta_t: int, tau: int) -> None:
    if delta_t < 1 or tau < 1:
        raise ValueError(f"delta_t and tau must be >= 1, got delta_t={delta_t}, tau={tau}")


def delay_embed_array(series, delta_t: int, tau: int = 1) -> np.ndarray:
    """Plain-array delay embedding: ``(..., L) -> (..., delta_t, L)``."""
    _check(delta_t, tau)
    x = np.asarray(series, dtype=np.float64)
    if x.shape[-1] < 1:
        raise ValueError("series must have at least one step")
    L = x.shape[-1]
    out = np.zeros(x.shape[:-1] + (delta_t, L))
    for j in range(delta_t):
        shift = j * tau
        if shift < L:
            out[..., j, shift:] = x[..., : L - shift]
    return out


def delay_embed(series, delta_t: int, tau: int = 1) -> DelayEmbedding:
    """Embed a ``D x L`` (or any ``... x L``) series."""
    return DelayEmbedding(delta_t, tau, delay_embed_array(series, delta_t, tau))


def delay_embed_tensor(x: Tensor, delta_t: int, tau: int = 1) -> Tensor:
    """Differentiable version: ``(..., L) -> (..., delta_t, L)``."""
    _check(delta_t, tau)
    L = x.shape[-1]
    lags = [x]
    for j in range(1, delta_t):
        shift = min(j * tau, L)
        zeros = Tensor(np.zeros(x.shape[:-1] + (shift,)))
        lags.append(T.concat([zeros, x[..., : L - shift]], axis=-1))
    return T.stack(lags, axis=-2)


def embed_extended(lookback, initial_forecast, delta_t: int, tau: int = 1):
    """Concatenate lookback ``(..., T)`` with forecast ``(..., H)`` and embed.

    Tensors in, tensor out (``(..., delta_t, T+H)``); arrays in, a
    :class:`DelayEmbedding` out.
    """
    if isinstance(lookback, Tensor) or isinstance(initial_forecast, Tensor):
        lb, fc = T.as_tensor(lookback), T.as_tensor(initial_forecast)
        if lb.shape[:-1] != fc.shape[:-1]:
            raise ValueError(f"lookback {lb.shape} and forecast {fc.shape} disagree on leading dims")
        ext = lb if fc.shape[-1] == 0 else T.concat([lb, fc], axis=-1)
        return delay_embed_tensor(ext, delta_t, tau)
    lb = np.asarray(lookback, dtype=np.float64)
    fc = np.asarray(initial_forecast, dtype=np.float64)
    if lb.shape[:-1] != fc.shape[:-1]:
        raise ValueError(f"lookback {lb.shape} and forecast {fc.shape} disagree on leading dims")
    return delay_embed(np.concatenate([lb, fc], axis=-1), delta_t, tau)
