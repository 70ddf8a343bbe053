"""Composite error / temporal-difference loss and the training loop."""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .nn import AdamW
from .tensor import Tensor, ShapeError

log = logging.getLogger(__name__)


@dataclass
class LossConfig:
    err_norm: str = "mae"
    adaptive_lambda: bool = True
    fixed_lambda: float = 0.5

    def __post_init__(self):
        if self.err_norm not in ("mae", "mse"):
            raise ValueError(f"err_norm must be 'mae' or 'mse', got {self.err_norm!r}")
        if not 0.0 <= self.fixed_lambda <= 1.0:
            raise ValueError(f"fixed_lambda must lie in [0, 1], got {self.fixed_lambda}")


@dataclass
class TrainConfig:
    epochs: int = 250
    batch_size: int = 32
    lr: float = 5e-4
    weight_decay: float = 1e-4
    patience: int = 10
    stride: int = 1
    seed: int = 0
    max_train_windows: int | None = None  # cap on training windows per epoch (subsampled once)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.stride < 1:
            raise ValueError("epochs, batch_size, lr and stride must be positive")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


def _pair(y, yhat):
    yhat = T.as_tensor(yhat)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ShapeError(f"target shape {y.shape} != prediction shape {yhat.shape}")
    return y, yhat


def loss_err(y, yhat, norm: str = "mae") -> Tensor:
    """Mean absolute or squared error over every element."""
    y, yhat = _pair(y, yhat)
    e = yhat - Tensor(y)
    if norm == "mae":
        return T.tabs(e).mean()
    if norm == "mse":
        return T.square(e).mean()
    raise ValueError(f"unknown norm {norm!r}")


def _diffs(x, anchor):
    """First differences along the last axis, optionally anchored on ``anchor``."""
    if isinstance(x, Tensor):
        if anchor is None:
            return x[..., 1:] - x[..., :-1]
        a = Tensor(np.asarray(anchor, dtype=np.float64)[..., None])
        return x - T.concat([a, x[..., :-1]], axis=-1)
    if anchor is None:
        return np.diff(x, axis=-1)
    return np.diff(np.concatenate([np.asarray(anchor)[..., None], x], axis=-1), axis=-1)


def _check_td(y: np.ndarray, anchor) -> None:
    if anchor is None and y.shape[-1] < 2:
        raise ValueError("temporal-difference loss needs H >= 2 without a lookback anchor")
    if anchor is not None and np.shape(anchor) != y.shape[:-1]:
        raise ShapeError(f"anchor shape {np.shape(anchor)} != {y.shape[:-1]}")


def loss_td(y, yhat, lookback_last=None) -> Tensor:
    """Mean absolute error between first differences of target and prediction.

    With ``lookback_last`` the first difference of both is taken against the
    last observed lookback value, keeping ``H`` terms.
    """
    y, yhat = _pair(y, yhat)
    _check_td(y, lookback_last)
    dy = _diffs(y, lookback_last)
    dp = _diffs(yhat, lookback_last)
    return T.tabs(dp - Tensor(dy)).mean()


def adaptive_lambda(y, yhat, lookback_last=None) -> float:
    """Fraction of steps where the signs of true and predicted differences disagree.

    Computed per window and averaged; for equal-sized windows this equals
    the pooled fraction.  Returned as a plain float so no gradient flows
    through it.
    """
    yhat_d = yhat.data if isinstance(yhat, Tensor) else np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if y.shape != yhat_d.shape:
        raise ShapeError(f"target shape {y.shape} != prediction shape {yhat_d.shape}")
    _check_td(y, lookback_last)
    mismatch = np.sign(_diffs(y, lookback_last)) != np.sign(_diffs(yhat_d, lookback_last))
    if mismatch.ndim <= 2:
        return float(mismatch.mean())
    per_window = mismatch.reshape(mismatch.shape[0], -1).mean(axis=1)
    return float(per_window.mean())


def composite_loss(y, yhat, lookback_last=None, cfg: LossConfig | None = None,
                   lam: float | None = None) -> tuple[Tensor, float]:
    """``lam * L_err + (1 - lam) * L_td``; returns the loss and the ``lam`` used.

    ``lam`` overrides both the adaptive and the fixed setting.
    """
    cfg = cfg or LossConfig()
    if lam is None:
        lam = adaptive_lambda(y, yhat, lookback_last) if cfg.adaptive_lambda else cfg.fixed_lambda
    err = loss_err(y, yhat, cfg.err_norm)
    if lam == 1.0:
        return err, 1.0
    td = loss_td(y, yhat, lookback_last)
    if lam == 0.0:
        return td, 0.0
    return err * lam + td * (1.0 - lam), float(lam)


# -- training loop ---------------------------------------------------------

@dataclass
class TrainResult:
    state: dict
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = float("inf")


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def evaluate_loss(model, X: np.ndarray, Y: np.ndarray, loss_cfg: LossConfig, batch_size: int = 256) -> float:
    """Window-weighted mean composite loss in eval mode."""
    total, count = 0.0, 0
    for idx in _batches(len(X), batch_size, None):
        pred = model(X[idx], mode="eval")
        loss, _ = composite_loss(Y[idx], pred, X[idx][..., -1], loss_cfg)
        total += loss.item() * len(idx)
        count += len(idx)
    return total / count


def train(model, train_xy: tuple[np.ndarray, np.ndarray], val_xy: tuple[np.ndarray, np.ndarray],
          cfg: TrainConfig, loss_cfg: LossConfig) -> TrainResult:
    """AdamW training with early stopping on validation composite loss.

    ``train_xy``/``val_xy`` hold lookback windows ``(N, D, T)`` and targets
    ``(N, D, H)``.  Every window is used each epoch, including the final
    partial batch.  The model is left holding the best-validation weights.
    """
    X, Y = train_xy
    Xv, Yv = val_xy
    if len(X) == 0 or len(Xv) == 0:
        raise ValueError("training and validation sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    if cfg.max_train_windows is not None and len(X) > cfg.max_train_windows:
        keep = np.sort(rng.choice(len(X), cfg.max_train_windows, replace=False))
        X, Y = X[keep], Y[keep]
    names, params = zip(*model.named_parameters())
    opt = AdamW(list(params), lr=cfg.lr, weight_decay=cfg.weight_decay, names=list(names))
    result = TrainResult(state=copy.deepcopy(model.state_dict()))
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        losses, lams, sizes = [], [], []
        for b, idx in enumerate(_batches(len(X), cfg.batch_size, rng)):
            xb, yb = X[idx], Y[idx]
            pred = model(xb, mode="train", rng=rng)
            loss, lam = composite_loss(yb, pred, xb[..., -1], loss_cfg)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = T.backward(loss, opt.params)
            opt.step([grads[id(p)] for p in opt.params])
            losses.append(loss.item())
            lams.append(lam)
            sizes.append(len(idx))
        model.eval()
        val = evaluate_loss(model, Xv, Yv, loss_cfg)
        rec = {
            "epoch": epoch,
            "train_loss": float(np.average(losses, weights=sizes)),
            "val_loss": val,
            "lambda_mean": float(np.average(lams, weights=sizes)),
        }
        result.history.append(rec)
        log.info("epoch %d train %.6f val %.6f", epoch, rec["train_loss"], val)
        if val < result.best_val:
            result.best_val = val
            result.best_epoch = epoch
            result.state = copy.deepcopy(model.state_dict())
            since_best = 0
        else:
            since_best += 1
            if since_best > cfg.patience:
                break
    model.load_state_dict(result.state)
    model.eval()
    return result


HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "lambda_mean")


def write_history(path, history: list[dict]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for rec in history:
            w.writerow([rec["epoch"]] + [repr(float(rec[k])) for k in HISTORY_FIELDS[1:]])
    tmp.replace(path)
