"""Minimal dense networks with manual gradients, Adam, and action noise.

Parameters live in one flat float64 vector per network; layer weight
matrices and bias vectors are views into it, so optimizer steps, soft target
updates and checkpointing are single array operations.  Actors squash their
output through a logistic and map it affinely onto the action box; critics
end linearly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


class DimensionMismatch(DomainError):
    """Input width does not match the first layer."""


class ShapeMismatch(DomainError):
    """Parameter vectors of different sizes were combined."""


class NoCache(DomainError):
    """backward was called without a forward cache."""


class EmptyBatch(DomainError):
    """A loss was requested over zero residuals."""


class Mlp:
    """Fully connected network: rectifier hidden layers, linear or boxed output.

    out="linear" leaves the last layer raw (critics); out="box" squashes it
    through a logistic scaled to [out_lo, out_hi] per output (actors).
    """

    def __init__(self, sizes, rng: np.random.Generator, out: str = "linear",
                 out_lo=None, out_hi=None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if out not in ("linear", "box"):
            raise ValueError("out must be 'linear' or 'box'")
        self.sizes = tuple(int(s) for s in sizes)
        self.out = out
        if out == "box":
            self.out_lo = np.broadcast_to(np.asarray(out_lo, dtype=float), (self.sizes[-1],)).copy()
            self.out_hi = np.broadcast_to(np.asarray(out_hi, dtype=float), (self.sizes[-1],)).copy()
        else:
            self.out_lo = self.out_hi = None

        total = sum((i + 1) * o for i, o in zip(self.sizes, self.sizes[1:]))
        self.theta = np.empty(total)
        self.weights, self.biases = [], []
        pos = 0
        for n_in, n_out in zip(self.sizes, self.sizes[1:]):
            w = self.theta[pos:pos + n_in * n_out].reshape(n_in, n_out)
            pos += n_in * n_out
            b = self.theta[pos:pos + n_out]
            pos += n_out
            # uniform fan-in scaling, weights and biases alike
            bound = 1.0 / np.sqrt(n_in)
            w[:] = rng.uniform(-bound, bound, (n_in, n_out))
            b[:] = rng.uniform(-bound, bound, n_out)
            self.weights.append(w)
            self.biases.append(b)

    @property
    def n_params(self) -> int:
        return self.theta.size

    def clone(self) -> "Mlp":
        twin = object.__new__(Mlp)
        twin.sizes, twin.out = self.sizes, self.out
        twin.out_lo = None if self.out_lo is None else self.out_lo.copy()
        twin.out_hi = None if self.out_hi is None else self.out_hi.copy()
        twin.theta = self.theta.copy()
        twin.weights, twin.biases = [], []
        pos = 0
        for n_in, n_out in zip(twin.sizes, twin.sizes[1:]):
            twin.weights.append(twin.theta[pos:pos + n_in * n_out].reshape(n_in, n_out))
            pos += n_in * n_out
            twin.biases.append(twin.theta[pos:pos + n_out])
            pos += n_out
        return twin

    def set_theta(self, theta: np.ndarray) -> None:
        if theta.shape != self.theta.shape:
            raise ShapeMismatch("parameter vector size differs")
        self.theta[:] = theta


def forward(net: Mlp, x: np.ndarray, want_cache: bool = False):
    """Batch forward pass; returns output or (output, cache)."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != net.sizes[0]:
        raise DimensionMismatch(f"expected input width {net.sizes[0]}, got {h.shape[1]}")
    inputs, masks = [], []
    last = len(net.weights) - 1
    sig = None
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        if k < last:
            mask = z > 0.0
            h = np.where(mask, z, 0.0)
            masks.append(mask)
        elif net.out == "box":
            sig = 1.0 / (1.0 + np.exp(-z))
            h = net.out_lo + (net.out_hi - net.out_lo) * sig
        else:
            h = z
    y = h[0] if squeeze else h
    if not want_cache:
        return y
    return y, {"inputs": inputs, "masks": masks, "sig": sig, "squeeze": squeeze}


def backward(net: Mlp, cache, grad_out: np.ndarray):
    """Gradients of sum(grad_out * output) w.r.t. parameters and input.

    Returns (flat parameter gradient aligned with net.theta, input gradient).
    """
    if cache is None:
        raise NoCache("run forward with want_cache=True first")
    g = np.asarray(grad_out, dtype=float)
    if cache["squeeze"]:
        g = g[None, :]
    if net.out == "box":
        sig = cache["sig"]
        g = g * (net.out_hi - net.out_lo) * sig * (1.0 - sig)
    grad_theta = np.empty_like(net.theta)
    pos = net.theta.size
    for k in range(len(net.weights) - 1, -1, -1):
        h_in = cache["inputs"][k]
        w = net.weights[k]
        n_in, n_out = w.shape
        pos -= n_out
        grad_theta[pos:pos + n_out] = g.sum(axis=0)
        pos -= n_in * n_out
        grad_theta[pos:pos + n_in * n_out] = (h_in.T @ g).ravel()
        g = g @ w.T
        if k > 0:
            g = np.where(cache["masks"][k - 1], g, 0.0)
    grad_in = g[0] if cache["squeeze"] else g
    return grad_theta, grad_in


def smooth_l1(residuals: np.ndarray):
    """Mean smooth-L1 over a batch of residuals and its gradient.

    Quadratic inside the unit band, linear outside; the two branches meet
    with matching value and slope at |residual| = 1.
    """
    z = np.asarray(residuals, dtype=float)
    if z.size == 0:
        raise EmptyBatch("no residuals")
    a = np.abs(z)
    loss = float(np.where(a <= 1.0, 0.5 * z * z, a - 0.5).mean())
    grad = np.where(a <= 1.0, z, np.sign(z)) / z.size
    return loss, grad


@dataclass
class AdamState:
    """First/second moment accumulators for one flat parameter vector."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    step: int = 0


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update, in place on params."""
    if params.shape != grads.shape:
        raise ShapeMismatch("params and grads differ in shape")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    if state.m.shape != params.shape:
        raise ShapeMismatch("optimizer state does not match params")
    state.step += 1
    state.m += (1.0 - state.beta1) * (grads - state.m)
    state.v += (1.0 - state.beta2) * (grads * grads - state.v)
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def soft_update(target: np.ndarray, source: np.ndarray, tau: float) -> np.ndarray:
    """Exponential tracking: target <- tau * source + (1 - tau) * target."""
    if target.shape != source.shape:
        raise ShapeMismatch("target and source differ in shape")
    target *= (1.0 - tau)
    target += tau * source
    return target


@dataclass
class NoiseProcess:
    """Seeded Gaussian exploration noise with per-episode decay."""

    sigma: float
    decay: float
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    def __post_init__(self):
        if self.sigma < 0.0 or not (0.0 <= self.decay <= 1.0):
            raise ValueError("need sigma >= 0 and decay in [0, 1]")

    def sample(self, shape) -> np.ndarray:
        return self.rng.normal(0.0, self.sigma, shape)

    def end_episode(self) -> None:
        self.sigma *= self.decay


def noisy_action(mu: np.ndarray, noise: NoiseProcess | None, lo, hi) -> np.ndarray:
    """Exploration action: clip(mu + noise, lo, hi); noise=None disables."""
    mu = np.asarray(mu, dtype=float)
    if noise is not None:
        mu = mu + noise.sample(mu.shape)
    return np.clip(mu, lo, hi)


CHECKPOINT_VERSION = 1


def save_params(path, named_params: dict) -> None:
    """Versioned checkpoint of flat parameter vectors; float64, lossless."""
    payload = {f"param::{k}": np.asarray(v, dtype=float) for k, v in named_params.items()}
    payload["checkpoint_version"] = np.array(CHECKPOINT_VERSION)
    np.savez(path, **payload)


def load_params(path) -> dict:
    with np.load(path) as data:
        version = int(data["checkpoint_version"])
        if version != CHECKPOINT_VERSION:
            raise DomainError(f"unsupported checkpoint version {version}")
        return {k.split("::", 1)[1]: data[k] for k in data.files if k.startswith("param::")}
