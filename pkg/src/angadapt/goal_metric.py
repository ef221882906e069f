"""Goal-based error metric built from reduced-accuracy residuals.

The residual surrogate keeps only the diagonal of the discrete operator, so
``R_hat = diag(A) psi`` costs one pass and is not Galerkin-orthogonal to the
solution.  With the error approximated by the solution itself, the metric
per coefficient is ``max(|psi * R_hat_adj|, |psi_adj * R_hat|) * N_DOF /
tau`` and the functional error estimate is ``sum(psi * R_hat_adj)``.
"""
from __future__ import annotations

import math

import numpy as np

__all__ = [
    "reduced_residual",
    "error_metric",
    "error_estimate",
    "effectivity_index",
]


def reduced_residual(disc, x, direction: str = "forward") -> np.ndarray:
    """Diagonal part of the discrete operator applied to ``x``, sources dropped.

    The diagonal of the transpose is the same, so ``direction`` only
    documents intent.
    """
    if direction not in ("forward", "adjoint"):
        raise ValueError("direction must be 'forward' or 'adjoint'")
    x = disc._check(x)
    return disc.diagonal() * x


def error_metric(psi, psi_adj, r_hat, r_hat_adj, n_dof: int, tau: float) -> np.ndarray:
    if not tau > 0:
        raise ValueError("target error tau must be positive")
    psi, psi_adj, r_hat, r_hat_adj = (np.asarray(v, dtype=float) for v in (psi, psi_adj, r_hat, r_hat_adj))
    if not (psi.shape == psi_adj.shape == r_hat.shape == r_hat_adj.shape):
        raise ValueError("metric inputs must share one block structure")
    return np.maximum(np.abs(psi * r_hat_adj), np.abs(psi_adj * r_hat)) * (n_dof / tau)


def error_estimate(eps, r_hat) -> float:
    """``sum(eps * r_hat)``: pass (psi, R_hat_adj) or (psi_adj, R_hat)."""
    return float(np.dot(np.asarray(eps, dtype=float), np.asarray(r_hat, dtype=float)))


def effectivity_index(estimate: float, true_error: float, floor: float = 1e-300) -> float:
    """``|estimate| / |true_error|``, NaN when the true error is below ``floor``."""
    if not abs(true_error) >= floor:
        return math.nan
    return abs(estimate) / abs(true_error)
