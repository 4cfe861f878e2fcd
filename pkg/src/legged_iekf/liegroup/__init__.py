"""Matrix Lie groups used by the filters: SO(3), SE_2(3), SO(3) x R^6 and planar analogues."""

from __future__ import annotations

import numpy as np

from .se22 import Product2State, Se22State, exp_se22, log_se22, rot2
from .se23 import (
    ProductState,
    Se23State,
    adjoint,
    exp_product,
    exp_se23,
    hat_se23,
    left_jacobian_se23,
    log_product,
    log_se23,
    q_block,
    right_jacobian_se23,
    vee_se23,
)
from .so3 import (
    exp_so3,
    hat,
    inv_left_jacobian_so3,
    inv_right_jacobian_so3,
    left_jacobian_so3,
    log_so3,
    project_to_so3,
    right_jacobian_so3,
    vee,
)


def oplus_right(xi: np.ndarray, X):
    """xi (+) X = Exp(xi) X, the perturbation used by right-invariant errors."""
    return type(X).exp(xi) @ X


def oplus_left(X, xi: np.ndarray):
    """X (+) xi = X Exp(xi)."""
    return X @ type(X).exp(xi)


def in_observed_set(X, d: np.ndarray, y: np.ndarray, tol: float) -> bool:
    """True when the noise-free observation X^{-1} d matches y within ``tol``."""
    d = np.asarray(d, dtype=float)
    y = np.asarray(y, dtype=float)
    if d.shape != y.shape:
        raise ValueError(f"d and y differ in shape: {d.shape} vs {y.shape}")
    return bool(np.linalg.norm(X.inverse().act(d) - y) <= tol)


def in_stabilizer(H, d: np.ndarray, tol: float) -> bool:
    """True when H fixes d, i.e. H belongs to the stabilizer subgroup of d."""
    d = np.asarray(d, dtype=float)
    return bool(np.linalg.norm(H.act(d) - d) <= tol)


__all__ = [
    "Product2State",
    "ProductState",
    "Se22State",
    "Se23State",
    "adjoint",
    "exp_product",
    "exp_se22",
    "exp_se23",
    "exp_so3",
    "hat",
    "hat_se23",
    "in_observed_set",
    "in_stabilizer",
    "inv_left_jacobian_so3",
    "inv_right_jacobian_so3",
    "left_jacobian_se23",
    "left_jacobian_so3",
    "log_product",
    "log_se22",
    "log_se23",
    "log_so3",
    "oplus_left",
    "oplus_right",
    "project_to_so3",
    "q_block",
    "right_jacobian_se23",
    "right_jacobian_so3",
    "rot2",
    "vee",
    "vee_se23",
]
