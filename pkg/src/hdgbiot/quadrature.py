"""Gauss rules on the reference segment [0, 1] and reference triangle."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq,) on the segment, (nq, 2) on the triangle
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def _segment(degree: int) -> QuadratureRule:
    n = max(1, (degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, degree)


@lru_cache(maxsize=None)
def _triangle(degree: int) -> QuadratureRule:
    # collapsed (Duffy) product rule, Gauss-Jacobi in the collapsed direction
    n = max(1, (degree + 2) // 2)
    xa, wa = roots_jacobi(n, 1.0, 0.0)
    xb, wb = np.polynomial.legendre.leggauss(n)
    a = 0.5 * (xa + 1.0)  # weight (1 - a) absorbed
    b = 0.5 * (xb + 1.0)
    A, B = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    x = A.ravel()
    y = (B * (1.0 - A)).ravel()
    w = (WA * WB).ravel() * 0.25 * 0.5
    return QuadratureRule(np.stack([x, y], axis=1), w, degree)


def gauss_rule(exactness_degree: int, domain: str = "triangle") -> QuadratureRule:
    """Rule exact for polynomials of total degree ``exactness_degree``.

    ``domain`` is ``"triangle"`` (vertices (0,0), (1,0), (0,1)) or
    ``"segment"`` ([0, 1]).
    """
    if exactness_degree < 0:
        raise ValueError("exactness degree must be nonnegative")
    if domain == "triangle":
        return _triangle(int(exactness_degree))
    if domain == "segment":
        return _segment(int(exactness_degree))
    raise ValueError(f"unknown domain {domain!r}")
