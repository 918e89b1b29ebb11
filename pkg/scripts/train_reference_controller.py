"""Fit the bundled Dubins reference controller.

A 3-16-16-1 tanh network is regressed onto a hand-written lane-change law:
steer towards the heading ``clip(k_y (y* - y), +-phi_max)`` with a
proportional heading loop, output clamped to [-pi, pi]. The fit is a
full-batch L-BFGS least-squares problem on uniformly drawn states, so the
result is deterministic for a given seed.

Usage::

    python scripts/train_reference_controller.py configs/dubins_controller.json
"""

from __future__ import annotations

import argparse
import json
import math

import numpy as np
from scipy.optimize import minimize

from fourier_cbc.systems import MLP, Layer, nn_forward

TARGET_LANE = 0.3
GAIN_LATERAL = 1.0
GAIN_HEADING = 1.5
MAX_HEADING = 0.6
SIZES = (3, 16, 16, 1)


def steering_law(states: np.ndarray) -> np.ndarray:
    """Reference steering input for states ``(x, y, phi)``."""
    y, phi = states[:, 1], states[:, 2]
    heading = np.clip(GAIN_LATERAL * (TARGET_LANE - y), -MAX_HEADING, MAX_HEADING)
    return np.clip(GAIN_HEADING * (heading - phi), -math.pi, math.pi)


def _unpack(theta: np.ndarray):
    params, k = [], 0
    for fan_in, fan_out in zip(SIZES[:-1], SIZES[1:]):
        w = theta[k:k + fan_in * fan_out].reshape(fan_out, fan_in)
        k += fan_in * fan_out
        b = theta[k:k + fan_out]
        k += fan_out
        params.append((w, b))
    return params


def _loss_and_grad(theta, x, target):
    params = _unpack(theta)
    acts = [x]
    h = x
    for i, (w, b) in enumerate(params):
        z = h @ w.T + b
        h = np.tanh(z) if i < len(params) - 1 else z
        acts.append(h)
    err = acts[-1][:, 0] - target
    loss = 0.5 * np.mean(err**2)
    delta = (err / x.shape[0])[:, None]
    grads = []
    for i in range(len(params) - 1, -1, -1):
        w, _ = params[i]
        grads.append((delta.T @ acts[i], delta.sum(axis=0)))
        if i:
            delta = (delta @ w) * (1.0 - acts[i] ** 2)
    flat = []
    for gw, gb in reversed(grads):
        flat += [gw.ravel(), gb]
    return loss, np.concatenate(flat)


def train(lower, upper, samples: int = 4000, seed: int = 0, iterations: int = 3000) -> MLP:
    rng = np.random.default_rng(seed)
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    x = lower + (upper - lower) * rng.random((samples, 3))
    target = steering_law(x)
    # inputs are standardized inside the first layer
    mid, half = 0.5 * (lower + upper), 0.5 * (upper - lower)
    xs = (x - mid) / half
    theta0 = []
    for fan_in, fan_out in zip(SIZES[:-1], SIZES[1:]):
        theta0 += [rng.normal(0.0, 1.0 / math.sqrt(fan_in), fan_in * fan_out), np.zeros(fan_out)]
    res = minimize(_loss_and_grad, np.concatenate(theta0), args=(xs, target), jac=True,
                   method="L-BFGS-B", options={"maxiter": iterations})
    params = _unpack(res.x)
    w0, b0 = params[0]
    params[0] = (w0 / half, b0 - (w0 / half) @ mid)
    layers = [Layer(w, b, "tanh" if i < len(params) - 1 else "identity") for i, (w, b) in enumerate(params)]
    return MLP(tuple(layers), clamp=(-math.pi, math.pi))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--lower", type=float, nargs=3, default=(-0.5, -1.2, -1.0),
                    help="lower corner of the training box (the bundled controller used the default)")
    ap.add_argument("--upper", type=float, nargs=3, default=(4.0, 1.2, 1.0),
                    help="upper corner of the training box; it may be smaller than the verification domain")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    mlp = train(args.lower, args.upper, seed=args.seed)
    rng = np.random.default_rng(args.seed + 1)
    lo, hi = np.asarray(args.lower), np.asarray(args.upper)
    test = lo + (hi - lo) * rng.random((2000, 3))
    rmse = float(np.sqrt(np.mean((nn_forward(mlp, test)[:, 0] - steering_law(test)) ** 2)))
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(mlp.to_dict(), fh, indent=1)
    print(f"wrote {args.out}; held-out RMSE against the steering law {rmse:.4f} rad")


if __name__ == "__main__":
    main()
