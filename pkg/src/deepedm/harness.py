"""Experiment plumbing: CSV I/O, windowing, splits, runs and sweeps.

A run trains one DeepEDM per (horizon, seed), evaluates it next to the
Simplex and Naive baselines on the test windows at each prefix length, and
writes flat CSV results plus checkpoints into an output directory.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .dynamics import SPLIT_FRACTIONS, simulate, split_indices, write_series_csv
from .edm import RecallConfig, SimplexConfig, knn_recall, simplex_multivariate
from .model import DeepEDM, ModelConfig
from .nn import load_checkpoint, save_checkpoint
from .train import LossConfig, TrainConfig, train, write_history

log = logging.getLogger(__name__)

OUT_ENV = "DEEPEDM_OUT"
METRIC_FIELDS = ("dataset", "model", "H", "p", "seed", "mse", "mae", "smape", "mape", "mase", "owa")
SCORE_FIELDS = METRIC_FIELDS[5:]
RECALL_FIELDS = ("K", "delta_t", "sigma_noise", "source", "recall")
MODELS = ("deepedm", "simplex", "naive")
INDEX_COLUMNS = ("t", "time", "date", "index")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class CsvFormatError(ValueError):
    """Malformed or non-numeric dataset file."""


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


def default_output_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


# -- series I/O -------------------------------------------------------------

@dataclass
class TimeSeries:
    values: np.ndarray  # (D, L)
    channels: list[str]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if len(self.channels) != self.values.shape[0]:
            raise ValueError(f"{len(self.channels)} channel names for {self.values.shape[0]} channels")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def slice_time(self, start: int, stop: int) -> "TimeSeries":
        meta = dict(self.meta, offset=self.meta.get("offset", 0) + start)
        return TimeSeries(self.values[:, start:stop], list(self.channels), meta)

    def select(self, idx) -> "TimeSeries":
        idx = list(idx)
        return TimeSeries(self.values[idx], [self.channels[i] for i in idx], dict(self.meta))


def load_csv(path) -> TimeSeries:
    """Read a header-plus-numbers CSV into a ``D x L`` series.

    A leading ``t``/``time``/``date``/``index`` column is treated as the
    time index and dropped.  Empty or NaN cells are rejected.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    skip = 1 if header and header[0].lower() in INDEX_COLUMNS and len(header) > 1 else 0
    channels = header[skip:]
    body = []
    for r, row in enumerate(rows[1:]):
        line = r + 2
        if not row:
            continue
        if len(row) != len(header):
            raise CsvFormatError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
        vals = []
        for c, cell in enumerate(row[skip:]):
            try:
                v = float(cell)
            except ValueError:
                raise CsvFormatError(f"{path}: line {line}: non-numeric value {cell!r} "
                                     f"in column '{channels[c]}'") from None
            if math.isnan(v):
                raise CsvFormatError(f"{path}: NaN at row {r}, column {c} ('{channels[c]}'), line {line}")
            vals.append(v)
        body.append(vals)
    if not body:
        raise CsvFormatError(f"{path}: no data rows")
    return TimeSeries(np.array(body).T, channels, {"source": str(path)})


def save_csv(path, ts: TimeSeries) -> None:
    write_series_csv(path, ts.values.T, ts.channels)


# -- windows and splits ------------------------------------------------------

@dataclass
class WindowSet:
    lookbacks: np.ndarray  # (N, D, T)
    targets: np.ndarray  # (N, D, H)
    starts: np.ndarray  # index of each window's first lookback step in the source series

    def __len__(self) -> int:
        return len(self.starts)


def make_windows(series, lookback: int, horizon: int, stride: int = 1) -> WindowSet:
    """Every ``(lookback, target)`` pair of a ``D x L`` series, stepping by ``stride``."""
    ts = series if isinstance(series, TimeSeries) else None
    x = ts.values if ts else np.atleast_2d(np.asarray(series, dtype=np.float64))
    offset = ts.meta.get("offset", 0) if ts else 0
    L = x.shape[1]
    if lookback < 1 or horizon < 1 or stride < 1:
        raise ValueError("lookback, horizon and stride must be >= 1")
    if L < lookback + horizon:
        raise ValueError(f"series of length {L} is shorter than lookback + horizon = {lookback + horizon}")
    starts = np.arange(0, L - lookback - horizon + 1, stride)
    idx = starts[:, None] + np.arange(lookback + horizon)
    w = np.transpose(x[:, idx], (1, 0, 2))
    return WindowSet(np.ascontiguousarray(w[..., :lookback]), np.ascontiguousarray(w[..., lookback:]),
                     starts + offset)


def temporal_split(ts: TimeSeries, fractions=SPLIT_FRACTIONS) -> dict[str, TimeSeries]:
    ranges = split_indices(ts.length, fractions)
    return {k: ts.slice_time(a, b) for k, (a, b) in ranges.items()}


def channel_split(ts: TimeSeries, train_idx, test_idx) -> tuple[TimeSeries, TimeSeries]:
    """Disjoint channel subsets over the full time axis."""
    train_idx, test_idx = list(train_idx), list(test_idx)
    overlap = set(train_idx) & set(test_idx)
    if overlap:
        raise ValueError(f"train and test channels overlap: {sorted(overlap)}")
    for i in train_idx + test_idx:
        if not 0 <= i < ts.n_channels:
            raise ValueError(f"channel index {i} out of range for {ts.n_channels} channels")
    return ts.select(train_idx), ts.select(test_idx)


# -- configuration -----------------------------------------------------------

@dataclass
class ExperimentConfig:
    dataset: str | None = None  # CSV path
    synthetic: dict | None = None  # {"system", "sigma_noise", "seed", "dt", "n_steps"}
    name: str | None = None
    split: dict = field(default_factory=lambda: {"fractions": list(SPLIT_FRACTIONS)})
    model: dict = field(default_factory=dict)  # ModelConfig overrides; horizon/seed set per run
    train: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    simplex: dict = field(default_factory=dict)
    eval_horizons: list = field(default_factory=lambda: [48])
    prefix_lengths: list = field(default_factory=lambda: [1, 5, 15, 48])
    models: list = field(default_factory=lambda: list(MODELS))
    eval_stride: int = 1
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str | None = None
    threads: int = 1

    def __post_init__(self):
        try:
            self.validate()
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None

    def validate(self) -> None:
        if (self.dataset is None) == (self.synthetic is None):
            raise ValueError("exactly one of 'dataset' and 'synthetic' must be given")
        fr = self.split.get("fractions", list(SPLIT_FRACTIONS))
        if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {fr}")
        unknown = set(self.split) - {"fractions", "train_channels", "test_channels"}
        if unknown:
            raise ValueError(f"unknown split keys: {sorted(unknown)}")
        if ("train_channels" in self.split) != ("test_channels" in self.split):
            raise ValueError("channel split needs both train_channels and test_channels")
        if "train_channels" in self.split:
            both = set(self.split["train_channels"]) & set(self.split["test_channels"])
            if both:
                raise ValueError(f"train and test channels overlap: {sorted(both)}")
        if not self.eval_horizons or any(h < 1 for h in self.eval_horizons):
            raise ValueError("eval_horizons must be positive")
        if any(p < 1 for p in self.prefix_lengths):
            raise ValueError("prefix_lengths must be positive")
        bad = set(self.models) - set(MODELS)
        if bad or not self.models:
            raise ValueError(f"models must be drawn from {MODELS}, got {self.models}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be a non-empty list of distinct integers")
        if self.threads < 1 or self.eval_stride < 1:
            raise ValueError("threads and eval_stride must be >= 1")
        for h in self.eval_horizons:
            self.model_config(h, self.seeds[0])
        self.train_config(self.seeds[0])
        LossConfig(**self.loss)
        SimplexConfig(**self.simplex)

    def model_config(self, horizon: int, seed: int) -> ModelConfig:
        return ModelConfig.from_dict({**self.model, "horizon": horizon, "seed": seed})

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": seed})

    def loss_config(self, horizon: int) -> LossConfig:
        mc = self.model_config(horizon, 0)
        base = {"err_norm": mc.loss_mode, "adaptive_lambda": mc.adaptive_lambda}
        return LossConfig(**{**base, **self.loss})

    def prefixes(self, horizon: int) -> list[int]:
        return sorted({p for p in self.prefix_lengths if p <= horizon} | {horizon})

    @property
    def dataset_name(self) -> str:
        if self.name:
            return self.name
        if self.dataset:
            return Path(self.dataset).stem
        s = self.synthetic
        return f"{s.get('system', 'lorenz_chaotic')}_sigma{float(s.get('sigma_noise', 0.0)):.1f}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolved"] = {
            str(h): {
                "model": self.model_config(h, self.seeds[0]).to_dict(),
                "loss": asdict(self.loss_config(h)),
                "prefix_lengths": self.prefixes(h),
            } for h in self.eval_horizons
        }
        d["resolved"]["train"] = asdict(self.train_config(self.seeds[0]))
        d["resolved"]["simplex"] = asdict(SimplexConfig(**self.simplex))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = {k: v for k, v in d.items() if k != "resolved"}
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)


# -- atomic writers ----------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, fields, rows: list[dict]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[f]) for f in fields])
    tmp.replace(path)


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


# -- evaluation --------------------------------------------------------------

def score_rows(dataset: str, model: str, H: int, seed: int, prefixes, y, yhat, lookbacks) -> list[dict]:
    """One metric row per prefix length ``p`` using the first ``p`` forecast steps."""
    rows = []
    for p in prefixes:
        rep = metrics.metric_report(y[..., :p], yhat[..., :p], lookbacks)
        rows.append({"dataset": dataset, "model": model, "H": H, "p": p, "seed": seed,
                     **{k: getattr(rep, k) for k in SCORE_FIELDS}})
    return rows


def evaluate_forecast(truth, forecast, insample=None) -> dict:
    """Metrics of a ``D x H`` forecast against truth.

    Without ``insample`` the MASE scale comes from the truth alone and OWA
    is undefined.
    """
    y = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    f = np.atleast_2d(np.asarray(forecast, dtype=np.float64))
    if y.shape != f.shape:
        raise ValueError(f"truth shape {y.shape} != forecast shape {f.shape}")
    out = {"mse": metrics.mse(y, f), "mae": metrics.mae(y, f),
           "smape": metrics.smape(y, f), "mape": metrics.mape(y, f)}
    ins = [np.zeros(0)] * len(y) if insample is None else np.atleast_2d(np.asarray(insample, dtype=np.float64))
    try:
        out["mase"] = float(np.mean([metrics.mase(a, b, c) for a, b, c in zip(y, f, ins)]))
    except (ZeroDivisionError, ValueError):
        out["mase"] = float("nan")
    if insample is None:
        out["owa"] = float("nan")
    else:
        out["owa"] = metrics.metric_report(y[:, None, :], f[:, None, :], ins[:, None, :]).owa
    return out


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and sample std over seeds for each (dataset, model, H, p)."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["dataset"], r["model"], r["H"], r["p"]), []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], int(k[2]), int(k[3]))):
        g = groups[key]
        rec = dict(zip(("dataset", "model", "H", "p"), key), n_seeds=len(g))
        for f in SCORE_FIELDS:
            vals = np.array([float(r[f]) for r in g])
            rec[f"{f}_mean"] = float(np.mean(vals))
            rec[f"{f}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else float("nan")
        out.append(rec)
    return out


SUMMARY_FIELDS = ("dataset", "model", "H", "p", "n_seeds") + tuple(
    f"{f}_{s}" for f in SCORE_FIELDS for s in ("mean", "std"))


# -- experiment --------------------------------------------------------------

@dataclass
class ExperimentResult:
    output_dir: Path
    metrics_csv: Path
    summary_csv: Path
    rows: list[dict]
    checkpoints: list[Path]
    histories: list[Path]


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, ExperimentError):
            raise ExperimentError(self.name, exc) from exc
        return False


def load_dataset(cfg: ExperimentConfig) -> TimeSeries:
    if cfg.dataset is not None:
        return load_csv(cfg.dataset)
    s = dict(cfg.synthetic)
    traj = simulate(s.pop("system", "lorenz_chaotic"), **s)
    return TimeSeries(traj.observations.T, [f"ch{i}" for i in range(traj.observations.shape[1])], dict(traj.meta))


def split_windows(ts: TimeSeries, cfg: ExperimentConfig, lookback: int, horizon: int,
                  train_stride: int) -> dict[str, WindowSet]:
    fr = cfg.split.get("fractions", list(SPLIT_FRACTIONS))
    if "train_channels" in cfg.split:
        train_ts, test_ts = channel_split(ts, cfg.split["train_channels"], cfg.split["test_channels"])
    else:
        train_ts = test_ts = ts
    tr, te = temporal_split(train_ts, fr), temporal_split(test_ts, fr)
    return {
        "train": make_windows(tr["train"], lookback, horizon, train_stride),
        "val": make_windows(tr["val"], lookback, horizon, 1),
        "test": make_windows(te["test"], lookback, horizon, cfg.eval_stride),
    }


def _fit_one(args):
    cfg, horizon, seed, windows = args
    model = DeepEDM(cfg.model_config(horizon, seed))
    tr, va = windows["train"], windows["val"]
    res = train(model, (tr.lookbacks, tr.targets), (va.lookbacks, va.targets),
                cfg.train_config(seed), cfg.loss_config(horizon))
    pred = model.predict(windows["test"].lookbacks)
    return seed, model.state_dict(), model.cfg.to_dict(), res.history, res.best_epoch, pred


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Train, evaluate and write results for every horizon and seed in ``cfg``."""
    out = Path(cfg.output_dir) if cfg.output_dir else default_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    name = cfg.dataset_name
    write_json(out / "config.json", cfg.to_dict())
    with _Stage("load"):
        ts = load_dataset(cfg)
    rows, ckpts, hists = [], [], []
    for H in cfg.eval_horizons:
        mc = cfg.model_config(H, cfg.seeds[0])
        prefixes = cfg.prefixes(H)
        with _Stage("split"):
            windows = split_windows(ts, cfg, mc.lookback, H, cfg.train_config(0).stride)
        test = windows["test"]
        if "naive" in cfg.models:
            with _Stage("naive"):
                naive = metrics.naive_forecast(test.lookbacks, H)
                for seed in cfg.seeds:
                    rows += score_rows(name, "naive", H, seed, prefixes, test.targets, naive, test.lookbacks)
        if "simplex" in cfg.models:
            with _Stage("simplex"):
                sc = SimplexConfig(**cfg.simplex)
                simp = np.stack([simplex_multivariate(x, sc, H) for x in test.lookbacks])
                for seed in cfg.seeds:
                    rows += score_rows(name, "simplex", H, seed, prefixes, test.targets, simp, test.lookbacks)
        if "deepedm" in cfg.models:
            with _Stage("train"):
                jobs = [(cfg, H, seed, windows) for seed in cfg.seeds]
                if cfg.threads > 1 and len(jobs) > 1:
                    with ProcessPoolExecutor(max_workers=min(cfg.threads, len(jobs))) as pool:
                        fitted = list(pool.map(_fit_one, jobs))
                else:
                    fitted = [_fit_one(j) for j in jobs]
            with _Stage("save"):
                for seed, state, model_dict, history, best_epoch, pred in fitted:
                    ck = out / f"checkpoint_{name}_H{H}_seed{seed}.ckpt"
                    save_checkpoint(ck, state, {"model": model_dict, "dataset": name,
                                                "seed": seed, "best_epoch": best_epoch})
                    hp = out / f"history_{name}_H{H}_seed{seed}.csv"
                    write_history(hp, history)
                    ckpts.append(ck)
                    hists.append(hp)
                    rows += score_rows(name, "deepedm", H, seed, prefixes, test.targets, pred, test.lookbacks)
    rows.sort(key=lambda r: (r["dataset"], r["model"], r["H"], r["p"], r["seed"]))
    with _Stage("write"):
        mpath, spath = out / "metrics.csv", out / "summary.csv"
        write_rows(mpath, METRIC_FIELDS, rows)
        write_rows(spath, SUMMARY_FIELDS, summarize(rows))
    return ExperimentResult(out, mpath, spath, rows, ckpts, hists)


# -- ablation ----------------------------------------------------------------

ABLATION_PARAMS = ("delta_t", "tau_delay", "lookback")
ABLATION_FIELDS = ("param", "value") + METRIC_FIELDS


def run_ablation(cfg: ExperimentConfig, param: str, values) -> list[dict]:
    """Rerun DeepEDM with one model setting varied; one row per value and seed at ``p = H``."""
    if param not in ABLATION_PARAMS:
        raise ConfigError(f"ablation parameter must be one of {ABLATION_PARAMS}, got {param!r}")
    out = Path(cfg.output_dir) if cfg.output_dir else default_output_dir()
    rows = []
    for v in values:
        sub = copy.deepcopy(cfg)
        sub.model = {**sub.model, param: int(v)}
        if param == "delta_t":
            sub.model["latent_dim"] = max(int(sub.model.get("latent_dim", 32)), int(v))
        sub.models = ["deepedm"]
        sub.output_dir = str(out / f"{param}_{v}")
        try:
            sub.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        res = run_experiment(sub)
        for r in res.rows:
            if r["p"] == r["H"]:
                rows.append({"param": param, "value": v, **r})
    write_rows(out / f"ablation_{param}.csv", ABLATION_FIELDS, rows)
    return rows


# -- neighbour recall --------------------------------------------------------

@dataclass
class RecallExperiment:
    system: str = "lorenz_chaotic"
    dt: float = 0.001
    n_steps: int = 1000
    seed: int = 0
    sigmas: list = field(default_factory=lambda: [0.0, 2.5])
    ks: list = field(default_factory=lambda: [1])
    delta_ts: list = field(default_factory=lambda: [1, 5, 10])
    library: str = "past"


def run_recall(exp: RecallExperiment, encoders: dict | None = None, out_path=None) -> list[dict]:
    """Time-delay recall rows for every (K, delta_t, sigma); latent rows for each named encoder.

    ``encoders`` maps a source label to ``(callable, first_valid_index)``
    where the callable turns a 1-D observation series into ``(L, M)`` latents.
    """
    rows = []
    for sigma in exp.sigmas:
        traj = simulate(exp.system, sigma, exp.seed, exp.dt, exp.n_steps)
        for k in exp.ks:
            for d in exp.delta_ts:
                rc = RecallConfig(k=k, delta_t=d, sigma_noise=sigma, library=exp.library)
                rows.append({"K": k, "delta_t": d, "sigma_noise": sigma, "source": "time_delay",
                             "recall": knn_recall(traj, rc)})
            for label, (enc, start) in (encoders or {}).items():
                rc = RecallConfig(k=k, delta_t=1, sigma_noise=sigma, library=exp.library)
                rows.append({"K": k, "delta_t": 1, "sigma_noise": sigma, "source": label,
                             "recall": knn_recall(traj, rc, "latent_kernel", enc, start=start)})
    if out_path is not None:
        write_rows(out_path, RECALL_FIELDS, rows)
    return rows


# -- checkpoints -------------------------------------------------------------

def load_model(path) -> DeepEDM:
    state, meta = load_checkpoint(path)
    if "model" not in meta:
        raise ValueError(f"{path}: checkpoint carries no model config")
    model = DeepEDM(ModelConfig.from_dict(meta["model"]))
    model.load_state_dict(state)
    return model.eval()


def forecast_csv(checkpoint, input_csv, output_csv) -> np.ndarray:
    """Forecast ``H`` steps past the end of every channel of ``input_csv``."""
    model = load_model(checkpoint)
    ts = load_csv(input_csv)
    T, H = model.cfg.lookback, model.cfg.horizon
    if ts.length < T:
        raise ValueError(f"input has {ts.length} steps, model needs a lookback of {T}")
    pred = model.predict(ts.values[None, :, -T:])[0]
    lines = ["t," + ",".join(ts.channels)]
    for h in range(H):
        lines.append(f"{ts.length + h}," + ",".join(repr(float(v)) for v in pred[:, h]))
    out = Path(output_csv)
    tmp = out.with_name(out.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(out)
    return pred
