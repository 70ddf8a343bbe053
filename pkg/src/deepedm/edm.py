"""Classical empirical dynamic modelling: Simplex projection and neighbour recall."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import Trajectory
from .embedding import delay_embed_array


@dataclass
class SimplexConfig:
    """``embed_dim + 1`` neighbours are used; ``rbf_sigma=None`` means nearest-neighbour distance."""

    embed_dim: int = 3
    tau: int = 1
    rbf_sigma: float | None = None
    horizon: int = 1

    def __post_init__(self):
        if self.embed_dim < 1 or self.tau < 1:
            raise ValueError("embed_dim and tau must be >= 1")
        if self.rbf_sigma is not None and self.rbf_sigma <= 0:
            raise ValueError(f"rbf_sigma must be positive, got {self.rbf_sigma}")

    @property
    def n_neighbors(self) -> int:
        return self.embed_dim + 1


def simplex_min_length(cfg: SimplexConfig, steps: int) -> int:
    span = (cfg.embed_dim - 1) * cfg.tau
    return max(cfg.n_neighbors + steps + span, cfg.n_neighbors + 1 + 2 * span)


def simplex_weights(dist: np.ndarray, sigma: float | None) -> np.ndarray:
    """RBF weights ``exp(-d^2 / 2 sigma^2)``; ``sigma`` defaults to ``dist.min()``.

    A zero bandwidth (exact match) keeps only the exact matches.
    """
    s = float(dist.min()) if sigma is None else sigma
    if s == 0.0:
        return (dist == 0.0).astype(np.float64)
    return np.exp(-(dist * dist) / (2.0 * s * s))


def simplex_neighbors(emb: np.ndarray, query: int, step: int, cfg: SimplexConfig) -> tuple[np.ndarray, np.ndarray]:
    """Indices and distances of the neighbours of ``emb[query]`` usable at ``step``.

    Candidates are fully populated delay vectors whose window does not overlap
    the query window and whose ``step``-ahead value is inside the history.
    Ties go to the earlier time index.
    """
    span = (cfg.embed_dim - 1) * cfg.tau
    stop = min(query - step, query - span - 1)
    cand = np.arange(span, stop + 1)
    if len(cand) < cfg.n_neighbors:
        raise ValueError(f"only {len(cand)} candidate neighbours, need {cfg.n_neighbors}")
    diff = emb[cand] - emb[query]
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    order = np.argsort(d, kind="stable")[: cfg.n_neighbors]
    return cand[order], d[order]


def simplex_forecast(history, cfg: SimplexConfig, steps: int) -> np.ndarray:
    """Forecast ``steps`` values past the end of a 1-D ``history``."""
    y = np.asarray(history, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError(f"history must be 1-D, got shape {y.shape}")
    need = simplex_min_length(cfg, steps)
    if len(y) < need:
        raise ValueError(f"history of length {len(y)} is too short; need at least {need} "
                         f"(embed_dim={cfg.embed_dim}, tau={cfg.tau}, steps={steps})")
    emb = delay_embed_array(y, cfg.embed_dim, cfg.tau).T
    query = len(y) - 1
    out = np.empty(steps)
    for h in range(1, steps + 1):
        nb, dist = simplex_neighbors(emb, query, h, cfg)
        w = simplex_weights(dist, cfg.rbf_sigma)
        out[h - 1] = np.dot(w, y[nb + h]) / w.sum()
    return out


def simplex_multivariate(series, cfg: SimplexConfig, steps: int) -> np.ndarray:
    """Run :func:`simplex_forecast` on each row of a ``D x T`` array."""
    x = np.atleast_2d(np.asarray(series, dtype=np.float64))
    return np.stack([simplex_forecast(row, cfg, steps) for row in x])


# -- neighbour recall ------------------------------------------------------

@dataclass
class RecallConfig:
    k: int = 1
    delta_t: int = 1
    sigma_noise: float = 0.0
    coordinate: int | None = None  # None averages over every observed coordinate
    tau: int = 1
    library: str = "past"  # "past": neighbours drawn from earlier steps only; "all": any other step

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.library not in ("past", "all"):
            raise ValueError(f"library must be 'past' or 'all', got {self.library!r}")


def _sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    return d


def _topk(d: np.ndarray, start: int, k: int, library: str) -> list[np.ndarray]:
    n = len(d)
    out = []
    for t in range(start, n):
        if library == "past":
            cand = np.arange(start, t)
        else:
            cand = np.concatenate([np.arange(start, t), np.arange(t + 1, n)])
        order = np.argsort(d[t, cand], kind="stable")[:k]
        out.append(cand[order])
    return out


def recall_between(reference: np.ndarray, surrogate: np.ndarray, k: int, start: int = 0,
                   library: str = "past") -> float:
    """Mean overlap of top-``k`` neighbour sets under two feature maps.

    Rows are time steps.  Queries begin once ``k`` library points exist.
    """
    n = len(reference)
    first = start + k if library == "past" else start
    pool = n - start - 1
    if k > pool:
        raise ValueError(f"k={k} exceeds the candidate pool of {pool} points")
    ref = _topk(_sq_dists(reference), start, k, library)
    sur = _topk(_sq_dists(surrogate), start, k, library)
    hits = [len(np.intersect1d(a, b)) / k for a, b in zip(ref[first - start:], sur[first - start:])]
    return float(np.mean(hits))


def knn_recall(traj: Trajectory, rc: RecallConfig, distance_source: str = "delay_embedding",
               encoder: Callable[[np.ndarray], np.ndarray] | None = None, start: int | None = None) -> float:
    """Recall of ground-truth state-space neighbours from a single observed coordinate.

    ``distance_source`` is ``"delay_embedding"``, ``"state"`` or
    ``"latent_kernel"``; the latter needs ``encoder`` mapping a 1-D
    observation series to ``(L, M)`` latents, ranked by the distance the
    latent inner product induces.
    """
    states = np.asarray(traj.states)
    obs = np.asarray(traj.observations)
    coords = range(states.shape[1]) if rc.coordinate is None else [rc.coordinate]
    s0 = (rc.delta_t - 1) * rc.tau if start is None else start
    scores = []
    for c in coords:
        if distance_source == "delay_embedding":
            feats = delay_embed_array(obs[:, c], rc.delta_t, rc.tau).T
        elif distance_source == "state":
            feats = states
        elif distance_source == "latent_kernel":
            if encoder is None:
                raise ValueError("latent_kernel recall needs an encoder")
            feats = np.asarray(encoder(obs[:, c]))
        else:
            raise ValueError(f"unknown distance source {distance_source!r}")
        scores.append(recall_between(states, feats, rc.k, s0, rc.library))
    return float(np.mean(scores))
