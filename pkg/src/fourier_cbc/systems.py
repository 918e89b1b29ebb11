"""Benchmark stochastic systems, MLP controllers, datasets and rollouts.

Randomness. Every consumer draws from its own stream
``Generator(PCG64(SeedSequence([seed, crc32(label)])))`` so adding a stage
never shifts another stage's numbers. Gaussian noise is produced from the
stream's uniforms by the Box-Muller transform, which keeps datasets identical
across numpy versions that change their native normal sampler.

Dubins heading is stored unwrapped; regions are tested on the raw coordinates.
"""

from __future__ import annotations

import io
import json
import math
import shlex
import subprocess
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .geometry import Domain, Region
from .kernels import SampleSet

ACTIVATIONS = {
    "relu": lambda z: np.maximum(z, 0.0),
    "tanh": np.tanh,
    "identity": lambda z: z,
}


class SystemSpecError(ValueError):
    pass


# --------------------------------------------------------------------------- randomness


def make_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for ``label`` under master ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())])))


def gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal draws via Box-Muller on the generator's uniforms."""
    shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # in (0, 1]
    u2 = rng.random(pairs)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * math.pi * u2), r * np.sin(2.0 * math.pi * u2)])
    return z[:count].reshape(shape)


# --------------------------------------------------------------------------- MLP


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"


@dataclass(frozen=True)
class MLP:
    """Feedforward network ``x -> clamp(f_L(... f_1(x)))``.

    JSON schema::

        {"layers": [{"weights": [[...], ...], "bias": [...], "activation": "tanh"}, ...],
         "clamp": [lo, hi]}

    Matrices are row-major with one row per output unit.
    """

    layers: tuple
    clamp: tuple | None = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise SystemSpecError("MLP needs at least one layer")
        checked = []
        prev = None
        for k, layer in enumerate(layers):
            w = np.atleast_2d(np.asarray(layer.weights, dtype=float))
            b = np.atleast_1d(np.asarray(layer.bias, dtype=float))
            if layer.activation not in ACTIVATIONS:
                raise SystemSpecError(f"layer {k}: unknown activation {layer.activation!r}")
            if b.shape != (w.shape[0],):
                raise SystemSpecError(f"layer {k}: bias length {b.size} differs from {w.shape[0]} units")
            if prev is not None and w.shape[1] != prev:
                raise SystemSpecError(f"layer {k}: expects {w.shape[1]} inputs, previous layer gives {prev}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise SystemSpecError(f"layer {k}: non-finite weights")
            prev = w.shape[0]
            checked.append(Layer(w, b, layer.activation))
        object.__setattr__(self, "layers", tuple(checked))
        if self.clamp is not None:
            lo, hi = map(float, self.clamp)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise SystemSpecError("clamp range must be finite with lo <= hi")
            object.__setattr__(self, "clamp", (lo, hi))

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    def to_dict(self) -> dict:
        d = {"layers": [{"weights": l.weights.tolist(), "bias": l.bias.tolist(),
                         "activation": l.activation} for l in self.layers]}
        if self.clamp is not None:
            d["clamp"] = list(self.clamp)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        try:
            layers = tuple(Layer(l["weights"], l["bias"], l.get("activation", "identity")) for l in d["layers"])
        except (KeyError, TypeError) as exc:
            raise SystemSpecError(f"malformed MLP document: {exc}") from None
        return cls(layers, tuple(d["clamp"]) if d.get("clamp") is not None else None)

    @classmethod
    def load(cls, path) -> "MLP":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")


def nn_forward(mlp: MLP, x) -> np.ndarray:
    """Network output for one input (shape (out,)) or a batch (shape (m, out))."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != mlp.input_dim:
        raise SystemSpecError(f"input has {h.shape[1]} entries, network expects {mlp.input_dim}")
    for layer in mlp.layers:
        h = ACTIVATIONS[layer.activation](h @ layer.weights.T + layer.bias)
    if mlp.clamp is not None:
        h = np.clip(h, *mlp.clamp)
    return h[0] if single else h


# --------------------------------------------------------------------------- systems


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Discrete-time system ``x+ = drift(x) + noise``.

    Attributes
    ----------
    kind : {"barr3", "dubins", "user-map"}
    step_size : float
        Time discretization ``tau``.
    noise : ndarray
        Per-axis Gaussian standard deviation.
    domain : Domain
        Sampling domain for datasets.
    controller : MLP or callable, optional
        Dubins steering policy; a callable maps (m, 3) states to (m,) inputs.
    velocity : float
        Dubins forward speed.
    command : str, optional
        For ``user-map``: a command reading a states CSV (``x1..xn``) on stdin
        and writing successors (same header) on stdout.
    """

    kind: str
    step_size: float
    noise: np.ndarray
    domain: Domain
    controller: MLP | Callable | None = None
    velocity: float = 1.0
    command: str | None = None

    def __post_init__(self):
        if self.kind not in ("barr3", "dubins", "user-map"):
            raise SystemSpecError(f"unknown system kind {self.kind!r}")
        if not (self.step_size > 0 and math.isfinite(self.step_size)):
            raise SystemSpecError("step size must be positive")
        noise = np.atleast_1d(np.asarray(self.noise, dtype=float))
        if noise.size == 1:
            noise = np.full(self.domain.n, float(noise[0]))
        if noise.shape != (self.domain.n,) or np.any(noise < 0) or np.any(~np.isfinite(noise)):
            raise SystemSpecError("noise must be one nonnegative std per axis")
        object.__setattr__(self, "noise", noise)
        expected = {"barr3": 2, "dubins": 3}.get(self.kind)
        if expected is not None and self.domain.n != expected:
            raise SystemSpecError(f"{self.kind} is {expected}-dimensional, domain has {self.domain.n} axes")
        if self.kind == "user-map" and not self.command:
            raise SystemSpecError("user-map systems need a command")
        if isinstance(self.controller, MLP) and self.kind == "dubins":
            if self.controller.input_dim != 3 or self.controller.output_dim != 1:
                raise SystemSpecError("dubins controller must map 3 inputs to 1 output")

    @property
    def n(self) -> int:
        return self.domain.n


def barr3_spec(domain: Domain, step_size: float = 0.1, noise_std=0.1) -> SystemSpec:
    return SystemSpec("barr3", step_size, np.full(2, noise_std), domain)


def dubins_spec(domain: Domain, controller=None, step_size: float = 0.5, velocity: float = 1.0,
                noise_std=(0.01, 0.01, 0.001)) -> SystemSpec:
    return SystemSpec("dubins", step_size, np.asarray(noise_std), domain, controller, velocity)


def control(spec: SystemSpec, states: np.ndarray) -> np.ndarray:
    if spec.controller is None:
        return np.zeros(states.shape[0])
    if isinstance(spec.controller, MLP):
        return nn_forward(spec.controller, states)[:, 0]
    return np.asarray(spec.controller(states), dtype=float).reshape(states.shape[0])


def drift(spec: SystemSpec, states) -> np.ndarray:
    """Noise-free successor of each state; accepts (n,) or (m, n)."""
    x = np.asarray(states, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    tau = spec.step_size
    if spec.kind == "barr3":
        x1, x2 = x[:, 0], x[:, 1]
        out = np.column_stack([x1 + tau * x2, x2 + tau * (x1**3 / 3.0 - x1 - x2)])
    elif spec.kind == "dubins":
        u = control(spec, x)
        out = np.column_stack([x[:, 0] + tau * spec.velocity * np.cos(x[:, 2]),
                               x[:, 1] + tau * spec.velocity * np.sin(x[:, 2]),
                               x[:, 2] + tau * u])
    else:
        out = _user_map(spec, x)
    return out[0] if single else out


def _user_map(spec: SystemSpec, x: np.ndarray) -> np.ndarray:
    buf = io.StringIO()
    buf.write(",".join(f"x{i + 1}" for i in range(x.shape[1])) + "\n")
    for row in x:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    proc = subprocess.run(shlex.split(spec.command), input=buf.getvalue(), capture_output=True, text=True)
    if proc.returncode != 0:
        raise SystemSpecError(f"user map failed with code {proc.returncode}: {proc.stderr.strip()[-300:]}")
    lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    try:
        out = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    except ValueError:
        raise SystemSpecError("user map produced non-numeric output") from None
    if out.shape != x.shape:
        raise SystemSpecError(f"user map returned shape {out.shape}, expected {x.shape}")
    return out


def step(spec: SystemSpec, x, rng: np.random.Generator) -> np.ndarray:
    """One noisy transition for one state (n,) or a batch (m, n)."""
    x = np.asarray(x, dtype=float)
    nxt = drift(spec, x)
    noise = gaussian(rng, nxt.shape) * spec.noise
    return nxt + noise


def generate_dataset(spec: SystemSpec, N: int, seed: int) -> SampleSet:
    """``N`` uniform states over the domain with one noisy successor each."""
    if int(N) != N or N < 1:
        raise SystemSpecError("sample count must be a positive integer")
    u = make_rng(seed, "dataset/states").random((int(N), spec.n))
    states = spec.domain.lower + u * spec.domain.width
    successors = step(spec, states, make_rng(seed, "dataset/noise"))
    return SampleSet(states, successors)


def rollout(spec: SystemSpec, x0, T: int, unsafe: Region | None, rng: np.random.Generator):
    """Simulate ``T`` steps from ``x0``; returns (trajectory (T+1, n), safe)."""
    if int(T) != T or T < 1:
        raise SystemSpecError("horizon must be a positive integer")
    traj = np.empty((int(T) + 1, spec.n))
    traj[0] = np.asarray(x0, dtype=float)
    for t in range(int(T)):
        traj[t + 1] = step(spec, traj[t], rng)
    safe = True if unsafe is None else not bool(np.any(unsafe.contains(traj)))
    return traj, safe


def batch_rollout(spec: SystemSpec, x0, T: int, unsafe: Region | None, rng: np.random.Generator) -> np.ndarray:
    """Safe flags for many independent rollouts started at the rows of ``x0``."""
    x = np.array(np.atleast_2d(x0), dtype=float)
    safe = np.ones(x.shape[0], dtype=bool)
    if unsafe is not None:
        safe &= ~unsafe.contains(x)
    for _ in range(int(T)):
        x = step(spec, x, rng)
        if unsafe is not None:
            safe &= ~unsafe.contains(x)
    return safe


def trajectory_csv(traj: np.ndarray, unsafe: Region | None) -> str:
    """``t,x1..xn,safe`` rows; ``safe`` is 0 from the first unsafe state on."""
    n = traj.shape[1]
    hit = np.zeros(traj.shape[0], dtype=bool) if unsafe is None else unsafe.contains(traj)
    ok = ~np.cumsum(hit).astype(bool)
    lines = ["t," + ",".join(f"x{i + 1}" for i in range(n)) + ",safe"]
    for t, (row, s) in enumerate(zip(traj, ok)):
        lines.append(f"{t}," + ",".join(repr(float(v)) for v in row) + f",{int(s)}")
    return "\n".join(lines) + "\n"
