"""Bayesian linear regression over surrogate basis vectors.

Zero-mean weight prior with variance sigma_w^2, observation noise
variance sigma_b^2. With design matrix Phi (N x D) and targets y:

    A = Phi' Phi / sigma_b^2 + I / sigma_w^2
    m = A^{-1} Phi' y / sigma_b^2
    mu(x)      = m . phi(x)
    sigma^2(x) = phi(x)' A^{-1} phi(x) + sigma_b^2

A is factorized once (Cholesky, with a single jitter retry) and the
factorization is reused for every prediction. ``gp_linear_oracle`` solves
the same problem in function space, as a Gaussian process with kernel
phi(x)' phi(x') sigma_w^2; the two must agree, which the tests exercise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .netdata import ValidationError

GP_ORACLE_LIMIT = 500


class NotPositiveDefiniteError(RuntimeError):
    """A failed to factorize even after the jitter retry."""


@dataclass(frozen=True)
class BlrPosterior:
    """Fitted posterior; immutable, predictions are pure functions of it."""

    mean_weights: np.ndarray            # m, (D,)
    chol: tuple                         # cho_factor output for A
    sigma_w2: float
    sigma_b2: float
    dim: int

    def predict(self, phi: np.ndarray) -> tuple[float, float]:
        """Predictive mean and variance at one basis vector."""
        mu, var = self.predict_batch(np.asarray(phi, dtype=np.float64)[None, :])
        return float(mu[0]), float(var[0])

    def predict_batch(self, phis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized predictive means and variances, (N, D) input."""
        phis = np.asarray(phis, dtype=np.float64)
        if phis.ndim != 2 or phis.shape[1] != self.dim:
            raise ValidationError(
                f"basis vectors must be (batch, {self.dim}), got {phis.shape}")
        mu = phis @ self.mean_weights
        solved = cho_solve(self.chol, phis.T)
        var = np.einsum("nd,dn->n", phis, solved) + self.sigma_b2
        return mu, var


def fit_blr(bases: np.ndarray, targets: np.ndarray, sigma_w2: float = 1.0,
            sigma_b2: float = 1.0) -> BlrPosterior:
    """Fit the posterior from N basis vectors and N targets.

    Solves through a symmetric positive-definite factorization; A is never
    inverted explicitly. On a failed factorization a diagonal jitter of
    1e-8 * trace(A) / D is added once, after which failure is an error
    carrying condition diagnostics.
    """
    phi = np.asarray(bases, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if phi.ndim != 2 or len(phi) != len(y) or len(y) < 1:
        raise ValidationError("need N >= 1 basis vectors with matching targets")
    if sigma_w2 <= 0 or sigma_b2 <= 0:
        raise ValidationError("prior and noise variances must be positive")
    dim = phi.shape[1]
    a = phi.T @ phi / sigma_b2 + np.eye(dim) / sigma_w2
    try:
        chol = cho_factor(a, lower=True)
    except LinAlgError:
        jitter = 1e-8 * np.trace(a) / dim
        try:
            chol = cho_factor(a + jitter * np.eye(dim), lower=True)
        except LinAlgError as exc:
            raise NotPositiveDefiniteError(
                f"A not positive definite even with jitter {jitter:.3e}; "
                f"cond(A) ~ {np.linalg.cond(a):.3e}") from exc
    mean_weights = cho_solve(chol, phi.T @ y) / sigma_b2
    return BlrPosterior(mean_weights=mean_weights, chol=chol,
                        sigma_w2=float(sigma_w2), sigma_b2=float(sigma_b2), dim=dim)


def gp_linear_oracle(bases: np.ndarray, targets: np.ndarray, sigma_w2: float,
                     sigma_b2: float, query: np.ndarray) -> tuple[float, float]:
    """Gaussian-process predictive with the linear kernel k = sigma_w^2 phi . phi'.

    Function-space counterpart of fit_blr + predict, used exclusively as a
    test oracle (dense N x N solve, refuses N > 500). The latent GP
    variance gets sigma_b^2 added so it is comparable with the BLR
    predictive, which includes the noise term.
    """
    phi = np.asarray(bases, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    n = len(phi)
    if n > GP_ORACLE_LIMIT:
        raise ValidationError(f"GP oracle limited to N <= {GP_ORACLE_LIMIT}, got {n}")
    gram = sigma_w2 * (phi @ phi.T)
    chol = cho_factor(gram + sigma_b2 * np.eye(n), lower=True)
    k_cross = sigma_w2 * (phi @ q)
    k_self = sigma_w2 * float(q @ q)
    mu = float(k_cross @ cho_solve(chol, y))
    var = k_self - float(k_cross @ cho_solve(chol, k_cross)) + sigma_b2
    return mu, var
