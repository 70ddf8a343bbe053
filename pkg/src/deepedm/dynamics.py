"""Lorenz and Rossler simulation, measurement noise, and the synthetic suite."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Parameter sets and initial conditions of the three synthetic systems.
LORENZ_CHAOTIC = {"sigma": 10.0, "rho": 28.0, "beta": 2.667}
LORENZ_NONCHAOTIC = {"sigma": 10.0, "rho": 9.0, "beta": 2.667}
ROSSLER_CHAOTIC = {"a": 0.2, "b": 0.2, "c": 5.7}

NOISE_LEVELS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5)
DEFAULT_DT = 0.01
DEFAULT_STEPS = 10_000
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


def lorenz_rhs(state, sigma: float, rho: float, beta: float) -> np.ndarray:
    x, y, z = state
    return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])


def rossler_rhs(state, a: float, b: float, c: float) -> np.ndarray:
    x, y, z = state
    return np.array([-y - z, x + a * y, b + z * (x - c)])


_RHS = {"lorenz": lorenz_rhs, "rossler": rossler_rhs}


@dataclass
class OdeSystem:
    name: str
    params: dict
    initial_state: tuple
    dt: float = DEFAULT_DT
    n_steps: int = DEFAULT_STEPS

    def __post_init__(self):
        if self.name not in _RHS:
            raise ValueError(f"unknown system {self.name!r}; expected one of {sorted(_RHS)}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    def rhs(self, state) -> np.ndarray:
        return _RHS[self.name](state, **self.params)


@dataclass
class Trajectory:
    states: np.ndarray
    observations: np.ndarray
    sigma_noise: float = 0.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.states)


def integrate_rk4(sys: OdeSystem) -> Trajectory:
    """Classical fourth-order Runge-Kutta; ``states[0]`` is the initial state."""
    dt = sys.dt
    out = np.empty((sys.n_steps, len(sys.initial_state)))
    s = np.asarray(sys.initial_state, dtype=np.float64)
    out[0] = s
    f = sys.rhs
    for i in range(1, sys.n_steps):
        k1 = f(s)
        k2 = f(s + 0.5 * dt * k1)
        k3 = f(s + 0.5 * dt * k2)
        k4 = f(s + dt * k3)
        s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(s)):
            raise FloatingPointError(f"{sys.name}: non-finite state at step {i}")
        out[i] = s
    return Trajectory(states=out, observations=out.copy(), meta={"system": sys.name, "dt": dt})


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox generator, reproducible across platforms."""
    return np.random.Generator(np.random.Philox(seed))


def add_noise(traj: Trajectory, sigma_noise: float, seed: int = 0) -> Trajectory:
    """Return a copy with ``observations = states + N(0, sigma_noise^2)``."""
    if sigma_noise < 0:
        raise ValueError(f"sigma_noise must be >= 0, got {sigma_noise}")
    if sigma_noise == 0:
        obs = traj.states.copy()
    else:
        obs = traj.states + make_rng(seed).normal(0.0, sigma_noise, size=traj.states.shape)
    return Trajectory(states=traj.states, observations=obs, sigma_noise=float(sigma_noise),
                      seed=seed, meta=dict(traj.meta))


SUITE_SYSTEMS = {
    "lorenz_nonchaotic": ("lorenz", LORENZ_NONCHAOTIC, (10.0, 10.0, 10.0)),
    "lorenz_chaotic": ("lorenz", LORENZ_CHAOTIC, (0.0, 1.0, 1.05)),
    "rossler_chaotic": ("rossler", ROSSLER_CHAOTIC, (1.0, 1.0, 1.0)),
}


def dataset_name(system: str, sigma_noise: float) -> str:
    return f"{system}_sigma{sigma_noise:.1f}"


def split_indices(n: int, fractions=SPLIT_FRACTIONS) -> dict[str, list[int]]:
    """Sequential, non-overlapping ``[start, stop)`` ranges for train/val/test."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {"train": [0, n_train], "val": [n_train, n_train + n_val], "test": [n_train + n_val, n]}


def simulate(system: str, sigma_noise: float = 0.0, seed: int = 0, dt: float = DEFAULT_DT,
             n_steps: int = DEFAULT_STEPS) -> Trajectory:
    """Simulate one of the named suite systems and add measurement noise."""
    kind, params, init = SUITE_SYSTEMS[system]
    traj = integrate_rk4(OdeSystem(kind, dict(params), init, dt=dt, n_steps=n_steps))
    traj = add_noise(traj, sigma_noise, seed)
    traj.meta.update(name=system, params=dict(params), initial_state=list(init))
    return traj


def write_series_csv(path, values: np.ndarray, channels: list[str] | None = None) -> None:
    """Write an ``L x D`` array as ``t,ch0,...`` CSV with round-trip float text."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    channels = channels or [f"ch{i}" for i in range(values.shape[1])]
    lines = ["t," + ",".join(channels)]
    for t, row in enumerate(values):
        lines.append(f"{t}," + ",".join(repr(float(v)) for v in row))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def build_synthetic_suite(out_dir, dt: float = DEFAULT_DT, n_steps: int = DEFAULT_STEPS,
                          base_seed: int = 0, noise_levels=NOISE_LEVELS) -> list[Path]:
    """Write the 3 systems x 6 noise levels suite.

    Each dataset gets ``<name>.csv`` (observations), ``<name>.json``
    (generation metadata and split ranges) and ``<name>.states.npy``
    (noise-free ground-truth states).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for si, system in enumerate(SUITE_SYSTEMS):
        kind, params, init = SUITE_SYSTEMS[system]
        clean = integrate_rk4(OdeSystem(kind, dict(params), init, dt=dt, n_steps=n_steps))
        for ni, sigma in enumerate(noise_levels):
            seed = base_seed + 100 * si + ni
            traj = add_noise(clean, sigma, seed)
            name = dataset_name(system, sigma)
            csv_path = out_dir / f"{name}.csv"
            write_series_csv(csv_path, traj.observations)
            np.save(out_dir / f"{name}.states.npy", traj.states)
            meta = {
                "name": name,
                "system": kind,
                "regime": system,
                "params": dict(params),
                "initial_state": list(init),
                "dt": dt,
                "n_steps": n_steps,
                "integrator": "rk4",
                "rng": "numpy Philox",
                "seed": seed,
                "sigma_noise": sigma,
                "split_fractions": list(SPLIT_FRACTIONS),
                "splits": split_indices(n_steps),
            }
            (out_dir / f"{name}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
            written.append(csv_path)
    return written
