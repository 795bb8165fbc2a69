"""Tanimoto-kernel Gaussian processes, expected improvement and GP ensembles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.special import ndtr

from .fingerprint import Fingerprint, FingerprintKind

LOG_2PI = math.log(2.0 * math.pi)


class KindMismatch(ValueError):
    """Fingerprints of different kinds were combined."""


class SingularKernel(np.linalg.LinAlgError):
    """Cholesky factorisation failed even at the maximum jitter."""


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

def tanimoto_kernel(a: Fingerprint, b: Fingerprint) -> float:
    """Tanimoto similarity of two count vectors.

    Two empty fingerprints are treated as identical (similarity 1); an empty
    and a non-empty one have similarity 0.
    """
    if a.kind != b.kind:
        raise KindMismatch(f"{a.kind} vs {b.kind}")
    ca, cb = a.counts, b.counts
    if len(ca) > len(cb):
        ca, cb = cb, ca
    dot = sum(v * cb.get(k, 0) for k, v in ca.items())
    na = sum(v * v for v in a.counts.values())
    nb = sum(v * v for v in b.counts.values())
    denom = na + nb - dot
    if denom == 0:
        return 1.0
    return dot / denom


class _Encoder:
    """Maps sparse fingerprints onto the columns seen in a training set."""

    def __init__(self, fps: Sequence[Fingerprint]):
        keys = [fp.arrays[0] for fp in fps]
        self.vocab = np.unique(np.concatenate(keys)) if keys else np.zeros(0, dtype=np.int64)

    def encode(self, fps: Sequence[Fingerprint]) -> tuple[sp.csr_matrix, np.ndarray]:
        """Sparse matrix over known columns plus full squared norms."""
        parts = [fp.arrays for fp in fps]
        lens = np.asarray([len(k) for k, _ in parts], dtype=np.int64)
        width = max(len(self.vocab), 1)
        if lens.sum() == 0:
            return sp.csr_matrix((len(fps), width)), np.zeros(len(fps))
        keys = np.concatenate([k for k, _ in parts])
        vals = np.concatenate([v for _, v in parts])
        rows = np.repeat(np.arange(len(fps)), lens)
        norms = np.bincount(rows, weights=vals * vals, minlength=len(fps))
        cols = np.searchsorted(self.vocab, keys)
        found = cols < len(self.vocab)
        found[found] = self.vocab[cols[found]] == keys[found]
        mat = sp.csr_matrix((vals[found], (rows[found], cols[found])), shape=(len(fps), width))
        return mat, norms


def _tanimoto_from_parts(dot: np.ndarray, na: np.ndarray, nb: np.ndarray) -> np.ndarray:
    denom = na[:, None] + nb[None, :] - dot
    both_empty = denom == 0
    out = np.divide(dot, denom, out=np.zeros_like(dot), where=~both_empty)
    out[both_empty] = 1.0
    return out


def tanimoto_gram(xs: Sequence[Fingerprint], ys: Sequence[Fingerprint] | None = None) -> np.ndarray:
    """Dense Tanimoto kernel matrix between two fingerprint lists."""
    ys = xs if ys is None else ys
    kinds = {fp.kind for fp in xs} | {fp.kind for fp in ys}
    if len(kinds) > 1:
        raise KindMismatch(f"mixed fingerprint kinds {sorted(k.value for k in kinds)}")
    enc = _Encoder(list(xs) + list(ys))
    a, na = enc.encode(xs)
    b, nb = enc.encode(ys)
    dot = np.asarray((a @ b.T).todense(), dtype=float)
    return _tanimoto_from_parts(dot, na, nb)


# ---------------------------------------------------------------------------
# GP regression
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GpConfig:
    noise_grid: tuple[float, ...] = tuple(np.logspace(-4, -1, 7))
    outputscale_grid: tuple[float, ...] = tuple(np.logspace(np.log10(0.25), np.log10(4.0), 7))
    jitter: float = 1e-8
    max_jitter: float = 1e-4


@dataclass(frozen=True, eq=False)
class GpModel:
    kind: FingerprintKind
    train_x: tuple[Fingerprint, ...]
    train_y: np.ndarray
    noise: float
    outputscale: float
    mean_const: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    log_marginal_likelihood: float = float("nan")
    _encoder: _Encoder = field(default=None, repr=False)
    _train_mat: sp.csr_matrix = field(default=None, repr=False)
    _train_norms: np.ndarray = field(default=None, repr=False)

    @property
    def y_best(self) -> float:
        return float(np.max(self.train_y))

    def kernel_rows(self, xs: Sequence[Fingerprint]) -> np.ndarray:
        """Unscaled Tanimoto similarities between ``xs`` and the training set."""
        for fp in xs:
            if fp.kind != self.kind:
                raise KindMismatch(f"model is {self.kind}, query is {fp.kind}")
        mat, norms = self._encoder.encode(xs)
        dot = np.asarray((mat @ self._train_mat.T).todense(), dtype=float)
        return _tanimoto_from_parts(dot, norms, self._train_norms)

    def predict(self, xs: Sequence[Fingerprint]) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent variance at each query."""
        if len(xs) == 0:
            return np.zeros(0), np.zeros(0)
        kstar = self.outputscale * self.kernel_rows(xs)
        mu = self.mean_const + kstar @ self.alpha
        v = scipy.linalg.solve_triangular(self.chol, kstar.T, lower=True, check_finite=False)
        var = self.outputscale - np.einsum("ij,ij->j", v, v)
        return mu, np.maximum(var, 0.0)

    def covariance(self, xs: Sequence[Fingerprint]) -> np.ndarray:
        """Full posterior covariance between queries."""
        kstar = self.outputscale * self.kernel_rows(xs)
        v = scipy.linalg.solve_triangular(self.chol, kstar.T, lower=True, check_finite=False)
        prior = self.outputscale * tanimoto_gram(xs)
        return prior - v.T @ v


def _grid_mll(gram: np.ndarray, yc: np.ndarray, noises: Sequence[float],
              scales: Sequence[float]) -> np.ndarray:
    """Exact log marginal likelihood over the grid via one eigendecomposition."""
    lam, q = np.linalg.eigh(gram)
    lam = np.clip(lam, 0.0, None)
    proj2 = (q.T @ yc) ** 2
    n = len(yc)
    out = np.empty((len(noises), len(scales)))
    for i, noise in enumerate(noises):
        for j, scale in enumerate(scales):
            c = scale * lam + noise
            out[i, j] = -0.5 * (np.sum(proj2 / c) + np.sum(np.log(c)) + n * LOG_2PI)
    return out


def log_marginal_likelihood(gram: np.ndarray, y: np.ndarray, noise: float, outputscale: float,
                            mean_const: float | None = None) -> float:
    """Cholesky-based exact log marginal likelihood for one hyperparameter pair."""
    y = np.asarray(y, dtype=float)
    mean_const = float(np.mean(y)) if mean_const is None else mean_const
    yc = y - mean_const
    cov = outputscale * gram + noise * np.eye(len(y))
    chol = np.linalg.cholesky(cov)
    a = scipy.linalg.solve_triangular(chol, yc, lower=True)
    return float(-0.5 * a @ a - np.sum(np.log(np.diag(chol))) - 0.5 * len(y) * LOG_2PI)


def fit_gp(data: Sequence[tuple[Fingerprint, float]], config: GpConfig | None = None,
           *, noise: float | None = None, outputscale: float | None = None) -> GpModel:
    """Fit a constant-mean Tanimoto GP; hyperparameters by grid-search MLL.

    Passing ``noise`` and/or ``outputscale`` pins that hyperparameter.
    """
    config = config or GpConfig()
    if not data:
        raise ValueError("fit_gp needs at least one training point")
    xs = tuple(fp for fp, _ in data)
    kinds = {fp.kind for fp in xs}
    if len(kinds) != 1:
        raise KindMismatch(f"mixed fingerprint kinds {kinds}")
    y = np.asarray([float(v) for _, v in data])
    mean_const = float(np.mean(y))
    yc = y - mean_const

    encoder = _Encoder(xs)
    mat, norms = encoder.encode(xs)
    dot = np.asarray((mat @ mat.T).todense(), dtype=float)
    gram = _tanimoto_from_parts(dot, norms, norms)

    noises = (noise,) if noise is not None else tuple(config.noise_grid)
    scales = (outputscale,) if outputscale is not None else tuple(config.outputscale_grid)
    mll = _grid_mll(gram, yc, noises, scales)
    i, j = np.unravel_index(int(np.argmax(mll)), mll.shape)
    best_noise, best_scale = float(noises[i]), float(scales[j])

    cov = best_scale * gram + best_noise * np.eye(len(y))
    chol, jitter = None, 0.0
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        jitter = config.jitter
        while jitter <= config.max_jitter * (1 + 1e-9):
            try:
                chol = np.linalg.cholesky(cov + jitter * np.eye(len(y)))
                break
            except np.linalg.LinAlgError:
                jitter *= 10.0
        if chol is None:
            raise SingularKernel(f"Cholesky failed at jitter {config.max_jitter:g}")
    alpha = scipy.linalg.cho_solve((chol, True), yc, check_finite=False)
    return GpModel(
        kind=next(iter(kinds)), train_x=xs, train_y=y, noise=best_noise,
        outputscale=best_scale, mean_const=mean_const, chol=chol, alpha=alpha,
        jitter=jitter, log_marginal_likelihood=float(mll[i, j]),
        _encoder=encoder, _train_mat=mat, _train_norms=norms)


def posterior(gp: GpModel, x: Fingerprint) -> tuple[float, float]:
    """Posterior mean and variance of the latent function at one query."""
    mu, var = gp.predict([x])
    return float(mu[0]), float(var[0])


# ---------------------------------------------------------------------------
# acquisition
# ---------------------------------------------------------------------------

def expected_improvement(mu, var, y_best):
    """Closed-form EI, ``E[max(0, y - y_best)]`` with ``y ~ N(mu, var)``.

    Accepts scalars or arrays; returns the same shape.
    """
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    sigma = np.sqrt(np.maximum(var, 0.0))
    diff = mu - y_best
    safe = np.where(sigma > 0, sigma, 1.0)
    z = diff / safe
    ei = np.where(sigma > 0, safe * (z * ndtr(z) + np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)),
                  np.maximum(diff, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleState:
    weights: tuple[float, ...]
    floor: float

    @classmethod
    def uniform(cls, m: int, floor: float | None = None) -> "EnsembleState":
        if m < 1:
            raise ValueError("ensemble needs at least one model")
        floor = 1e-3 / m if floor is None else floor
        return cls(tuple([1.0 / m] * m), floor)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


def _apply_floor(w: np.ndarray, floor: float) -> np.ndarray:
    w = w / w.sum()
    fixed = np.zeros(len(w), dtype=bool)
    while True:
        below = (w < floor) & ~fixed
        if not below.any():
            break
        fixed |= below
        w[fixed] = floor
        free = ~fixed
        if not free.any():
            break
        w[free] = w[free] / w[free].sum() * (1.0 - floor * fixed.sum())
    return w


def update_weights_from_log_densities(state: EnsembleState, log_densities: Sequence[float]
                                      ) -> EnsembleState:
    """Multiply weights by predictive likelihoods, floor, renormalise."""
    logd = np.asarray(log_densities, dtype=float)
    if len(logd) != len(state.weights):
        raise ValueError("one density per model is required")
    logw = np.log(state.as_array()) + logd
    logw -= np.max(logw)
    w = _apply_floor(np.exp(logw), state.floor)
    return EnsembleState(tuple(float(v) for v in w), state.floor)


def update_weights_from_densities(state: EnsembleState, densities: Sequence[float]) -> EnsembleState:
    with np.errstate(divide="ignore"):
        return update_weights_from_log_densities(state, np.log(np.asarray(densities, dtype=float)))


def predictive_log_density(gp: GpModel, x: Fingerprint, y: float) -> float:
    """``log N(y; mu(x), var(x) + noise)``: the observation noise floors the variance."""
    mu, var = posterior(gp, x)
    total = var + gp.noise
    return -0.5 * ((y - mu) ** 2 / total + math.log(total) + LOG_2PI)


def update_weights(state: EnsembleState, models: Sequence[GpModel | None],
                   obs: tuple[Mapping[FingerprintKind, Fingerprint], float]) -> EnsembleState:
    """Likelihood-weighted update with one new observation ``(fingerprints, y)``.

    ``models`` must be fitted on data that excludes the observation. A
    ``None`` entry (failed fit) receives a neutral density equal to the mean
    log density of the others.
    """
    fps, y = obs
    logd = [None if gp is None else predictive_log_density(gp, fps[gp.kind], y) for gp in models]
    known = [v for v in logd if v is not None]
    if not known:
        return state
    neutral = float(np.mean(known))
    return update_weights_from_log_densities(state, [neutral if v is None else v for v in logd])


def ensemble_poe(models: Sequence[GpModel], xs: Mapping[FingerprintKind, Sequence[Fingerprint]]
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Product-of-experts fusion of per-kind posteriors (precision-weighted)."""
    precision_sum = 0.0
    weighted = 0.0
    for gp in models:
        mu, var = gp.predict(xs[gp.kind])
        prec = 1.0 / np.maximum(var, 1e-12)
        precision_sum = precision_sum + prec
        weighted = weighted + prec * mu
    var = 1.0 / precision_sum
    return var * weighted, var


def poe_combine(mus: Sequence[float], variances: Sequence[float]) -> tuple[float, float]:
    """Scalar product-of-experts combination of Gaussian components."""
    prec = 1.0 / np.maximum(np.asarray(variances, dtype=float), 1e-12)
    var = 1.0 / prec.sum()
    return float(var * (prec * np.asarray(mus, dtype=float)).sum()), float(var)
