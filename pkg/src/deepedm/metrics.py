"""Point-forecast error metrics and the naive reference forecasters.

All metrics take ``y`` (truth) and ``yhat`` (forecast) arrays of identical
shape whose last axis is time, and pool every element.  Sums are
pairwise (``numpy.sum`` on contiguous float64).
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: y {y.shape} vs yhat {yhat.shape}")
    return y, yhat


def mse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    e = (y - yhat).ravel()
    return float(np.sum(e * e) / e.size)


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    e = np.abs(y - yhat).ravel()
    return float(np.sum(e) / e.size)


def smape(y, yhat) -> float:
    """``200 * mean(|y - yhat| / (|y| + |yhat|))``; 0/0 terms count as 0."""
    y, yhat = _pair(y, yhat)
    num = np.abs(y - yhat)
    den = np.abs(y) + np.abs(yhat)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(200.0 * np.sum(terms.ravel()) / terms.size)


def mape(y, yhat) -> float:
    """``100 * mean(|y - yhat| / |y|)`` over elements with ``y != 0``."""
    y, yhat = _pair(y, yhat)
    mask = y != 0
    if not mask.any():
        return float("nan")
    terms = np.abs(y - yhat)[mask] / np.abs(y[mask])
    return float(100.0 * np.sum(terms) / terms.size)


def mase_scale(insample, outsample=None, m: int = 1) -> float:
    """Mean absolute seasonal difference ``|y_j - y_{j-m}|``.

    With ``outsample`` given the differences run over the concatenated
    in-sample and out-of-sample series; otherwise over the in-sample part.
    """
    x = np.asarray(insample, dtype=np.float64)
    if outsample is not None:
        x = np.concatenate([x, np.asarray(outsample, dtype=np.float64)], axis=-1)
    if x.shape[-1] < m + 1:
        raise ValueError(f"need at least m+1={m + 1} points for the MASE scale, got {x.shape[-1]}")
    d = np.abs(x[..., m:] - x[..., :-m])
    return float(np.sum(d.ravel()) / d.size)


def mase(y, yhat, insample, m: int = 1, include_outsample: bool = True) -> float:
    """Mean absolute error scaled by the seasonal-naive in-sample error.

    ``include_outsample=True`` follows the formula whose denominator spans
    ``j = m+1 .. T+H`` of the joined series.  For batched inputs
    ``(..., H)`` each window is scaled by its own denominator and the
    ratios are averaged.
    """
    y, yhat = _pair(y, yhat)
    insample = np.asarray(insample, dtype=np.float64)
    if y.ndim <= 1:
        scale = mase_scale(insample, y if include_outsample else None, m)
        if scale == 0:
            raise ZeroDivisionError("MASE scale is zero (series is constant at lag m)")
        return mae(y, yhat) / scale
    yy = y.reshape(-1, y.shape[-1])
    pp = yhat.reshape(-1, y.shape[-1])
    ii = insample.reshape(-1, insample.shape[-1])
    vals = [mase(a, b, c, m, include_outsample) for a, b, c in zip(yy, pp, ii)]
    return float(np.mean(vals))


def owa(smape_model: float, mase_model: float, smape_naive2: float, mase_naive2: float) -> float:
    if smape_naive2 <= 0 or mase_naive2 <= 0:
        raise ZeroDivisionError("OWA reference values must be positive")
    return 0.5 * (smape_model / smape_naive2 + mase_model / mase_naive2)


def naive_forecast(lookback, H: int) -> np.ndarray:
    """Repeat the last lookback value of each channel ``H`` times."""
    x = np.asarray(lookback, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("lookback is empty")
    return np.repeat(x[..., -1:], H, axis=-1)


def acf(x: np.ndarray, k: int) -> float:
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean()
    den = np.sum((x - mean) ** 2)
    if den == 0:
        return 0.0
    return float(np.sum((x[:-k] - mean) * (x[k:] - mean)) / den)


def seasonality_test(x: np.ndarray, m: int) -> bool:
    """90% two-sided autocorrelation test at lag ``m`` (M4 convention)."""
    if m <= 1 or len(x) < 3 * m:
        return False
    r = [acf(x, k) for k in range(1, m + 1)]
    limit = 1.645 * np.sqrt((1 + 2 * np.sum(np.square(r[:-1]))) / len(x))
    return abs(r[-1]) > limit


def seasonal_indices(x: np.ndarray, m: int) -> np.ndarray:
    """Classical multiplicative decomposition indices, one per phase, mean 1.

    Phase ``i`` corresponds to positions ``j`` with ``j % m == i``.
    """
    if m % 2:
        kernel = np.full(m, 1.0 / m)
    else:
        kernel = np.r_[0.5, np.ones(m - 1), 0.5] / m
    trend = np.convolve(x, kernel, mode="valid")
    offset = (len(kernel) - 1) // 2
    ratios = x[offset:offset + len(trend)] / trend
    phases = (np.arange(len(trend)) + offset) % m
    idx = np.array([ratios[phases == i].mean() for i in range(m)])
    return idx / idx.mean()


def naive2_forecast(lookback, H: int, m: int = 1) -> np.ndarray:
    """Seasonally adjusted naive forecast.

    When the lag-``m`` autocorrelation test passes, divide out classical
    multiplicative seasonal indices, repeat the last adjusted value and
    re-apply the indices; otherwise (or with ``m == 1``) this is
    :func:`naive_forecast`.  Works channel-wise on ``(..., L)`` input.
    """
    x = np.asarray(lookback, dtype=np.float64)
    if x.shape[-1] < m:
        raise ValueError(f"lookback of length {x.shape[-1]} shorter than season {m}")
    if x.ndim > 1:
        flat = x.reshape(-1, x.shape[-1])
        return np.stack([naive2_forecast(row, H, m) for row in flat]).reshape(x.shape[:-1] + (H,))
    if m == 1 or not seasonality_test(x, m) or np.any(x <= 0):
        return naive_forecast(x, H)
    si = seasonal_indices(x, m)
    n = len(x)
    adjusted_last = x[-1] / si[(n - 1) % m]
    future_phase = (n + np.arange(H)) % m
    return adjusted_last * si[future_phase]


@dataclass
class MetricReport:
    mse: float
    mae: float
    smape: float
    mape: float
    mase: float
    owa: float | None
    n_windows: int

    def to_dict(self) -> dict:
        return asdict(self)


def metric_report(y, yhat, insample, m: int = 1, naive2=None) -> MetricReport:
    """All metrics for forecasts ``(N, D, H)`` against truth, with lookbacks ``(N, D, T)``.

    ``naive2`` is the Naive2 forecast of the same windows; it is computed
    when omitted.  Metrics whose denominators vanish are reported as NaN.
    """
    y, yhat = _pair(y, yhat)
    insample = np.asarray(insample, dtype=np.float64)
    n_windows = y.shape[0] if y.ndim >= 3 else 1
    if naive2 is None:
        naive2 = naive2_forecast(insample, y.shape[-1], m)
    s = smape(y, yhat)
    try:
        ms = mase(y, yhat, insample, m)
    except ZeroDivisionError:
        ms = float("nan")
    try:
        ms2 = mase(y, naive2, insample, m)
        o = owa(s, ms, smape(y, naive2), ms2)
    except ZeroDivisionError:
        o = float("nan")
    return MetricReport(mse=mse(y, yhat), mae=mae(y, yhat), smape=s, mape=mape(y, yhat),
                        mase=ms, owa=o, n_windows=n_windows)
