"""Sphere/ball sampling and the two-point zeroth-order gradient estimator of
the ball-smoothed function ``h_eta(x) = E_u[h(x + eta u)]``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError

# Purposes for per-(agent, iteration) random streams.
DIRECTION, UPPER_SAMPLE, LOWER_MINUS, LOWER_PLUS, LOWER_START = range(5)


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Counter-style generator keyed by e.g. ``(agent, iteration, purpose)``.

    Distinct keys give statistically independent streams, and the stream for
    a key does not depend on which other keys were drawn before it.
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)


def sample_unit_sphere(rng: np.random.Generator, n: int, size=None) -> np.ndarray:
    """Uniform draw(s) on the unit sphere in R^n via normalized Gaussians."""
    if n < 1:
        raise ContractError(f"dimension must be >= 1, got {n}")
    shape = (n,) if size is None else tuple(np.atleast_1d(size)) + (n,)
    v = rng.standard_normal(shape)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    bad = norms[..., 0] < 1e-300
    while bad.any():
        v[bad] = rng.standard_normal((int(bad.sum()), n))
        norms = np.linalg.norm(v, axis=-1, keepdims=True)
        bad = norms[..., 0] < 1e-300
    return v / norms


def sample_unit_ball(rng: np.random.Generator, n: int, size=None) -> np.ndarray:
    v = sample_unit_sphere(rng, n, size)
    r = rng.random(v.shape[:-1]) ** (1.0 / n)
    return v * r[..., None]


@dataclass(frozen=True)
class ZoGradient:
    g: np.ndarray
    eta: float
    n: int
    delta_h: float


def zo_gradient(h_plus, h_minus, v, eta: float, n: int | None = None) -> ZoGradient:
    """``(n / (2 eta)) (h(x + eta v) - h(x - eta v)) v``."""
    if eta <= 0:
        raise ContractError(f"eta must be positive, got {eta}")
    v = np.asarray(v, dtype=float)
    n = v.shape[-1] if n is None else n
    dh = float(h_plus) - float(h_minus)
    return ZoGradient(g=(n / (2.0 * eta)) * dh * v, eta=eta, n=n, delta_h=dh)


def zo_gradients(h_plus, h_minus, v, eta: float) -> np.ndarray:
    """Vectorized estimator over leading axes of ``v`` (shape ``(..., n)``)."""
    if eta <= 0:
        raise ContractError(f"eta must be positive, got {eta}")
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    dh = np.asarray(h_plus, dtype=float) - np.asarray(h_minus, dtype=float)
    return (n / (2.0 * eta)) * dh[..., None] * v


def _as_point(x):
    return np.atleast_1d(np.asarray(x, dtype=float))


def smoothed_value_mc(h, x, eta: float, samples: int, rng, *, return_se: bool = False):
    """Monte Carlo value of ``h_eta(x)`` with ``u`` uniform in the unit ball.

    ``h`` is evaluated one point at a time.
    """
    if eta <= 0:
        raise ContractError(f"eta must be positive, got {eta}")
    if samples < 1:
        raise ContractError("samples must be >= 1")
    x = _as_point(x)
    u = sample_unit_ball(rng, x.size, samples)
    vals = np.array([h(x + eta * ui) for ui in u], dtype=float)
    mean = float(vals.mean())
    if return_se:
        se = float(vals.std(ddof=1) / np.sqrt(samples)) if samples > 1 else float("inf")
        return mean, se
    return mean


def smoothed_grad_mc(fbar, x, eta: float, samples: int, rng) -> np.ndarray:
    x = _as_point(x)
    v = sample_unit_sphere(rng, x.size, samples)
    hp = np.array([fbar(x + eta * vi) for vi in v], dtype=float)
    hm = np.array([fbar(x - eta * vi) for vi in v], dtype=float)
    return zo_gradients(hp, hm, v, eta).mean(axis=0)


def smoothed_grad_norm_mc(fbar, x, eta: float, samples: int, rng) -> float:
    """Norm of the averaged central-difference estimate of ``grad f_eta(x)``;
    used as the stationarity surrogate (it upper-bounds the distance from 0
    to the eta-Clarke subdifferential)."""
    if eta <= 0:
        raise ContractError(f"eta must be positive, got {eta}")
    return float(np.linalg.norm(smoothed_grad_mc(fbar, x, eta, samples, rng)))
