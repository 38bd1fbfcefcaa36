"""Orthonormal modal bases on the reference triangle and segment.

Cell bases are monomials orthonormalised (Cholesky of the exact Gram
matrix) in graded order, so the degree ``r - 1`` basis is a prefix of the
degree ``r`` basis.  Facet bases are shifted, normalised Legendre
polynomials on [0, 1].
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .quadrature import gauss_rule


def dim_cell(k: int) -> int:
    return (k + 1) * (k + 2) // 2


def dim_facet(k: int) -> int:
    return k + 1


def _exponents(k: int) -> np.ndarray:
    return np.array([(d - j, j) for d in range(k + 1) for j in range(d + 1)], dtype=int)


def _monomials(k, pts):
    e = _exponents(k)
    x = pts[:, 0:1]
    y = pts[:, 1:2]
    val = x ** e[:, 0] * y ** e[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        dx = np.where(e[:, 0] > 0, e[:, 0] * x ** np.maximum(e[:, 0] - 1, 0) * y ** e[:, 1], 0.0)
        dy = np.where(e[:, 1] > 0, e[:, 1] * x ** e[:, 0] * y ** np.maximum(e[:, 1] - 1, 0), 0.0)
    return val, np.stack([dx, dy], axis=-1)


@lru_cache(maxsize=None)
def _orthonormalizer(k: int) -> np.ndarray:
    q = gauss_rule(2 * k, "triangle")
    m, _ = _monomials(k, q.points)
    gram = (m * q.weights[:, None]).T @ m
    L = np.linalg.cholesky(gram)
    # phi = L^{-1} m
    return np.linalg.inv(L).T


def eval_cell_basis(k: int, points) -> tuple[np.ndarray, np.ndarray]:
    """Values ``(nq, nb)`` and reference gradients ``(nq, nb, 2)`` of the P_k basis."""
    if k < 0:
        raise ValueError("degree must be nonnegative")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    C = _orthonormalizer(k)
    m, dm = _monomials(k, pts)
    return m @ C, np.einsum("qmd,mb->qbd", dm, C)


def eval_facet_basis(k: int, s) -> np.ndarray:
    """Values ``(nq, k + 1)`` of the orthonormal Legendre basis on [0, 1]."""
    if k < 0:
        raise ValueError("degree must be nonnegative")
    s = np.asarray(s, dtype=float).reshape(-1)
    V = np.polynomial.legendre.legvander(2.0 * s - 1.0, k)
    return V * np.sqrt(2.0 * np.arange(k + 1) + 1.0)


def _monomial_hessians(k, pts):
    e = _exponents(k)
    x = pts[:, 0:1]
    y = pts[:, 1:2]

    def term(px, py, cx, cy):
        # d^cx/dx^cx d^cy/dy^cy of x^px y^py
        coef = np.ones_like(px, dtype=float)
        for i in range(cx):
            coef = coef * (px - i)
        for i in range(cy):
            coef = coef * (py - i)
        return np.where(coef != 0, coef * x ** np.maximum(px - cx, 0) * y ** np.maximum(py - cy, 0), 0.0)

    hxx = term(e[:, 0], e[:, 1], 2, 0)
    hxy = term(e[:, 0], e[:, 1], 1, 1)
    hyy = term(e[:, 0], e[:, 1], 0, 2)
    return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -1)


def eval_cell_hessian(k: int, points) -> np.ndarray:
    """Reference Hessians ``(nq, nb, 2, 2)`` of the P_k basis."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    H = _monomial_hessians(k, pts)
    return np.einsum("qmij,mb->qbij", H, _orthonormalizer(k))
