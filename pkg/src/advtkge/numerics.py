"""Dense numeric primitives shared by the models, the generator and the trainer.

Everything runs in float64. Gradients are hand-derived elsewhere; this module
only provides the optimizer, the Gumbel machinery, gradient checking and PCA.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import gammaln

ADAGRAD_EPS = 1e-8


class NumericError(ArithmeticError):
    """Raised when a non-finite value reaches an update or a loss."""


def rng_stream(seed: int, name: str = "") -> np.random.Generator:
    """Counter-based generator for one named consumer.

    Streams with different names are statistically independent; the same
    (seed, name) pair always yields the same draws.
    """
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, key])
    return np.random.Generator(np.random.Philox(ss))


def uniform_open(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    bad = (u <= 0.0) | (u >= 1.0)
    while bad.any():
        u[bad] = rng.random(int(bad.sum()))
        bad = (u <= 0.0) | (u >= 1.0)
    return u


def gumbel_from_uniform(u):
    return -np.log(-np.log(u))


def gumbel_noise(n, rng: np.random.Generator) -> np.ndarray:
    """Standard Gumbel draws. ``n`` may be an int or a shape tuple."""
    if isinstance(n, (int, np.integer)) and n < 1:
        raise ValueError("gumbel_noise needs n >= 1")
    return gumbel_from_uniform(uniform_open(rng, n))


def softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def gumbel_max_sample(log_probs, rng: np.random.Generator, noise=None):
    """Index drawn from softmax(log_probs) via the Gumbel-Max trick."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if noise is None:
        noise = gumbel_noise(log_probs.shape, rng)
    return np.argmax(log_probs + noise, axis=-1)


@dataclass
class GumbelSoftmaxSample:
    soft: np.ndarray
    hard: np.ndarray | int
    temperature: float
    noise: np.ndarray = field(repr=False)


def gumbel_softmax(log_probs, temperature: float, rng: np.random.Generator, noise=None):
    """Relaxed one-hot sample; works row-wise on 2-D input.

    The drawn noise is kept on the result so gradients can be taken with it
    held fixed.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if noise is None:
        noise = gumbel_noise(log_probs.shape, rng)
    soft = softmax((log_probs + noise) / temperature)
    hard = np.argmax(soft, axis=-1)
    return GumbelSoftmaxSample(soft=soft, hard=hard, temperature=float(temperature), noise=noise)


def gumbel_softmax_backward(soft: np.ndarray, upstream: np.ndarray, temperature: float) -> np.ndarray:
    """Map d(loss)/d(soft) to d(loss)/d(logits), noise held fixed."""
    inner = (soft * upstream).sum(axis=-1, keepdims=True)
    return soft * (upstream - inner) / temperature


def gumbel_softmax_pdf(y, kappa, temperature: float) -> float:
    """Density of the Gumbel-Softmax distribution at the simplex point ``y``.

    Evaluated in log space; ``kappa`` is the vector of class probabilities.
    """
    y = np.asarray(y, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("density undefined on the simplex boundary")
    if np.any(kappa <= 0):
        raise ValueError("class probabilities must be strictly positive")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    n = y.size
    tau = float(temperature)
    log_terms = np.log(kappa) - tau * np.log(y)
    log_sum = np.logaddexp.reduce(log_terms)
    log_p = (
        gammaln(n)
        + (n - 1) * math.log(tau)
        - n * log_sum
        + np.sum(np.log(kappa) - (tau + 1) * np.log(y))
    )
    return float(np.exp(log_p))


class EmbeddingTable:
    """Parameter matrix paired with its Adagrad accumulator."""

    def __init__(self, values: np.ndarray):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.adagrad_acc = np.zeros_like(self.values)

    @classmethod
    def uniform(cls, rows: int, dim: int, rng: np.random.Generator, bound: float | None = None):
        if bound is None:
            bound = 6.0 / math.sqrt(max(dim, 1))
        return cls(rng.uniform(-bound, bound, size=(rows, dim)))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "EmbeddingTable":
        out = EmbeddingTable(self.values.copy())
        out.adagrad_acc = self.adagrad_acc.copy()
        return out

    def __repr__(self):
        return f"EmbeddingTable(rows={self.rows}, dim={self.dim})"


def coalesce_rows(rows, grads):
    """Sum gradient rows that share an index. Returns (unique_rows, summed)."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    grads = np.asarray(grads, dtype=np.float64).reshape(rows.size, -1)
    if rows.size == 0:
        return rows, grads
    order = np.argsort(rows, kind="stable")
    sorted_rows = rows[order]
    uniq, starts = np.unique(sorted_rows, return_index=True)
    return uniq, np.add.reduceat(grads[order], starts, axis=0)


def adagrad_step(table: EmbeddingTable, rows, grads, lr: float, eps: float = ADAGRAD_EPS) -> EmbeddingTable:
    """Sparse Adagrad update, in place. Duplicate rows are summed first."""
    rows, grads = coalesce_rows(rows, grads)
    if rows.size == 0:
        return table
    if grads.shape[1] != table.dim:
        raise ValueError(f"gradient width {grads.shape[1]} != table dim {table.dim}")
    finite = np.isfinite(grads).all(axis=1)
    if not finite.all():
        bad = rows[~finite][0]
        raise NumericError(f"non-finite gradient for row {bad}")
    acc = table.adagrad_acc[rows] + grads * grads
    table.adagrad_acc[rows] = acc
    table.values[rows] -= lr * grads / (np.sqrt(acc) + eps)
    return table


def finite_difference_check(
    score_fn: Callable[[], float],
    params: Mapping[str, np.ndarray] | np.ndarray,
    analytic: Mapping[str, np.ndarray] | np.ndarray,
    h: float = 1e-4,
    coords: Mapping[str, np.ndarray] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``score_fn`` takes no arguments and reads ``params`` by reference; each
    coordinate is perturbed in place and restored. ``coords`` optionally
    restricts the check to some flat indices per array (e.g. touched rows).
    The error of one coordinate is |a - n| / max(1, |n|).
    """
    if not h > 0:
        raise ValueError("step must be positive")
    if isinstance(params, np.ndarray):
        params = {"_": params}
        analytic = {"_": analytic}
        if coords is not None and not isinstance(coords, Mapping):
            coords = {"_": coords}
    worst = 0.0
    for name, arr in params.items():
        grad = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"parameter {name!r} must be contiguous")
        idx = range(flat.size) if coords is None or name not in coords else coords[name]
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = score_fn()
            flat[i] = orig - h
            f_minus = score_fn()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            err = abs(grad[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


def pca_basis(vectors, k: int):
    """Mean and top-k principal directions (d x k) of the rows of ``vectors``.

    Directions come from the covariance eigendecomposition; each is signed so
    its largest-magnitude loading is positive, which makes output stable.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-D array of vectors")
    n, d = x.shape
    if k > d:
        raise ValueError(f"cannot keep {k} components of {d}-dimensional vectors")
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} vectors for {k} components")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    comps = evecs[:, order]
    flip = np.sign(comps[np.argmax(np.abs(comps), axis=0), np.arange(k)])
    flip[flip == 0] = 1.0
    return mean, comps * flip


def pca_project(vectors, k: int) -> np.ndarray:
    """Project rows onto their top-k principal directions (order preserved)."""
    mean, comps = pca_basis(vectors, k)
    return (np.asarray(vectors, dtype=np.float64) - mean) @ comps
