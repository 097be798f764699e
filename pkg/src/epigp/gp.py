"""Gaussian-process regression over 2-D zone centroids.

Zero-mean prior, Gaussian noise. Hyperparameters (kernel log-params plus
log noise variance) are fitted by maximizing the log marginal likelihood
with gradient ascent (backtracking line search) from multiple random
restarts. Cholesky failures are repaired by escalating diagonal jitter
from 1e-10 up to 1e-4 before giving up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import yaml
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

from .errors import ConfigurationError, NumericalError
from .kernels import Kernel, gram_matrix, parse_kernel

JITTER_START = 1e-10
JITTER_MAX = 1e-4
LOG_PARAM_CLIP = 25.0  # keep exp() finite during line search


def _cholesky_with_jitter(a: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of `a`, adding escalating jitter if needed."""
    try:
        return cholesky(a, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(a.shape[0])
    while jitter <= JITTER_MAX:
        try:
            return cholesky(a + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        "kernel matrix is not positive definite even with jitter up to "
        f"{JITTER_MAX:g}; the kernel is ill-conditioned"
    )


def log_marginal_likelihood(
    kernel: Kernel,
    log_noise: float,
    X: np.ndarray,
    y: np.ndarray,
    distances: Optional[np.ndarray] = None,
) -> tuple[float, np.ndarray]:
    """LML and its gradient w.r.t. [kernel log-params..., log noise variance].

    value = -1/2 y^T alpha - sum_i log L_ii - n/2 log(2 pi)
    gradient_theta = 1/2 tr((alpha alpha^T - A^-1) dK/dtheta), A = K + s_n^2 I
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    d = cdist(X, X) if distances is None else distances
    noise = math.exp(log_noise)
    a = kernel.value(d) + noise * np.eye(n)
    L, _ = _cholesky_with_jitter(a)
    alpha = cho_solve((L, True), y)
    value = (
        -0.5 * float(y @ alpha)
        - float(np.log(np.diag(L)).sum())
        - 0.5 * n * math.log(2.0 * math.pi)
    )
    a_inv = cho_solve((L, True), np.eye(n))
    m = np.outer(alpha, alpha) - a_inv
    grads = [0.5 * float(np.sum(m * dk)) for dk in kernel.grad_log_params(d)]
    grads.append(0.5 * noise * float(np.trace(m)))
    return value, np.array(grads)


@dataclass
class GPModel:
    """Immutable fitted GP: kernel, noise, training data, cached factors."""

    kernel: Kernel
    noise_variance: float
    X: np.ndarray
    y: np.ndarray
    L: np.ndarray
    alpha: np.ndarray
    lml: float
    jitter: float = 0.0

    @classmethod
    def build(
        cls, kernel: Kernel, noise_variance: float, X: np.ndarray, y: np.ndarray
    ) -> "GPModel":
        """Assemble the cached factors for fixed hyperparameters."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        n = y.size
        a = gram_matrix(kernel, X) + noise_variance * np.eye(n)
        L, jitter = _cholesky_with_jitter(a)
        alpha = cho_solve((L, True), y)
        lml = (
            -0.5 * float(y @ alpha)
            - float(np.log(np.diag(L)).sum())
            - 0.5 * n * math.log(2.0 * math.pi)
        )
        return cls(kernel, noise_variance, X, y, L, alpha, lml, jitter)

    def posterior(self, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and covariance at query points Xs (m x 2)."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        ks = gram_matrix(self.kernel, Xs, self.X)
        mean = ks @ self.alpha
        v = solve_triangular(self.L, ks.T, lower=True)
        cov = gram_matrix(self.kernel, Xs) - v.T @ v
        cov = 0.5 * (cov + cov.T)
        return mean, cov

    def predict_mean(self, Xs: np.ndarray) -> np.ndarray:
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        return gram_matrix(self.kernel, Xs, self.X) @ self.alpha

    def save(self, path: str) -> None:
        doc = {
            "kernel": self.kernel.spec(),
            "noise_variance": float(self.noise_variance),
            "lml": float(self.lml),
            "X": self.X.tolist(),
            "y": self.y.tolist(),
        }
        with open(path, "w") as fh:
            yaml.safe_dump(doc, fh, sort_keys=False)

    @classmethod
    def load(cls, path: str) -> "GPModel":
        try:
            with open(path) as fh:
                doc = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"model file not found: {path}")
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse model file {path}: {exc}")
        try:
            return cls.build(
                parse_kernel(doc["kernel"]),
                float(doc["noise_variance"]),
                np.asarray(doc["X"], dtype=float),
                np.asarray(doc["y"], dtype=float),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed model file {path}: {exc}")


@dataclass
class FitOptions:
    n_restarts: int = 5
    max_iter: int = 500
    grad_tol: float = 1e-6
    init_low: float = 1e-2
    init_high: float = 1e2
    fixed_noise: Optional[float] = None
    noise_init: float = 1.0


def _ascend(
    kernel: Kernel,
    theta0: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    distances: np.ndarray,
    fixed_noise: Optional[float],
    max_iter: int,
    grad_tol: float,
) -> tuple[float, np.ndarray]:
    """Gradient ascent with Armijo backtracking from one start point.

    theta = kernel log-params (+ log noise when noise is free). Returns the
    best (lml, theta) reached; raises NumericalError if the start point is
    unusable.
    """
    nk = kernel.n_params

    def evaluate(theta: np.ndarray) -> tuple[float, np.ndarray]:
        theta = np.clip(theta, -LOG_PARAM_CLIP, LOG_PARAM_CLIP)
        kernel.set_log_params(list(theta[:nk]))
        log_noise = (
            math.log(fixed_noise) if fixed_noise is not None else float(theta[nk])
        )
        value, grad = log_marginal_likelihood(kernel, log_noise, X, y, distances)
        if fixed_noise is not None:
            grad = grad[:nk]
        return value, grad

    theta = np.clip(theta0.astype(float), -LOG_PARAM_CLIP, LOG_PARAM_CLIP)
    f, g = evaluate(theta)
    step = 1.0
    for _ in range(max_iter):
        gnorm = float(np.max(np.abs(g)))
        if gnorm < grad_tol:
            break
        accepted = False
        t = step
        for _ in range(40):
            cand = np.clip(theta + t * g, -LOG_PARAM_CLIP, LOG_PARAM_CLIP)
            try:
                fc, gc = evaluate(cand)
            except NumericalError:
                t *= 0.5
                continue
            if fc >= f + 1e-4 * t * float(g @ g):
                theta, f, g = cand, fc, gc
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        step = min(1.0, t * 2.0)
    return f, theta


def fit(
    kernel: Kernel | str,
    X: np.ndarray,
    y: np.ndarray,
    options: Optional[FitOptions] = None,
    seed: int = 0,
) -> GPModel:
    """Fit hyperparameters by LML gradient ascent with random restarts.

    Restart 0 starts from the kernel's own (spec-provided) hyperparameters;
    the rest draw log-uniform initials in [init_low, init_high]. The best
    restart by LML wins. Deterministic given seed.
    """
    opts = options or FitOptions()
    if isinstance(kernel, str):
        kernel = parse_kernel(kernel)
    else:
        kernel = kernel.clone()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 2:
        raise ConfigurationError(f"fitting needs n >= 2 points, got {y.size}")
    if not np.isfinite(y).all():
        raise ConfigurationError("targets must be finite")
    distances = cdist(X, X)
    rng = np.random.default_rng(seed)
    nk = kernel.n_params
    dim = nk if opts.fixed_noise is not None else nk + 1

    starts = [np.array(kernel.get_log_params() + (
        [] if opts.fixed_noise is not None else [math.log(opts.noise_init)]
    ))]
    lo, hi = math.log(opts.init_low), math.log(opts.init_high)
    for _ in range(max(opts.n_restarts - 1, 0)):
        starts.append(rng.uniform(lo, hi, size=dim))

    best: Optional[tuple[float, np.ndarray]] = None
    failures = []
    for theta0 in starts:
        try:
            f, theta = _ascend(
                kernel, theta0, X, y, distances,
                opts.fixed_noise, opts.max_iter, opts.grad_tol,
            )
        except NumericalError as exc:
            failures.append(str(exc))
            continue
        if best is None or f > best[0]:
            best = (f, theta)
    if best is None:
        raise NumericalError(
            "every restart failed factorization: " + "; ".join(failures[:3])
        )
    _, theta = best
    kernel.set_log_params(list(theta[:nk]))
    noise = (
        opts.fixed_noise if opts.fixed_noise is not None else math.exp(float(theta[nk]))
    )
    return GPModel.build(kernel, noise, X, y)


@dataclass
class PosteriorDraws:
    Xs: np.ndarray
    draws: np.ndarray  # (s, m)
    seed: int


def sample_posterior(model: GPModel, Xs: np.ndarray, s: int, seed: int) -> PosteriorDraws:
    """Draw s posterior surfaces at Xs; deterministic in seed."""
    if s < 0:
        raise ConfigurationError(f"draw count must be >= 0, got {s}")
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    m = Xs.shape[0]
    if s == 0:
        return PosteriorDraws(Xs, np.zeros((0, m)), seed)
    mean, cov = model.posterior(Xs)
    factor, _ = _cholesky_with_jitter(cov + JITTER_START * np.eye(m))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((s, m))
    return PosteriorDraws(Xs, mean[None, :] + z @ factor.T, seed)
