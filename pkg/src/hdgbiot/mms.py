"""Closed-form manufactured solution for the coupled benchmark.

Primary fields::

    u_f = (pi x1 cos(pi(x1 x2 - t)) + 1, -pi x2 cos(pi(x1 x2 - t)) + 2 x1)
    u_b = sin(10 pi t) (cos(4(x1 - t)) cos(3 x2), sin(5 x1) cos(2(x2 - t)))
    p_f = sin(3 x1) cos(4(x2 - t))
    p_p = sin(3(x1 x2 - t))

All derivatives below are written out by hand.  Gradients use the
convention ``G[..., a, b] = d_b u_a`` and Hessians ``H[..., a, b, c] =
d_b d_c u_a``.  Stresses follow ``sigma = p I - 2 mu eps(u)``.

Points are arrays of shape ``(..., 2)``; ``t`` is a scalar.
"""
from __future__ import annotations

import numpy as np

from .forms import ModelParameters

PI = np.pi
INTERFACE_NORMAL = np.array([0.0, -1.0])  # outward from the fluid region
_TOL = 1e-12


def _xy(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1]


def _vec(a, b):
    return np.stack(np.broadcast_arrays(a, b), axis=-1)


def _mat(a00, a01, a10, a11):
    a00, a01, a10, a11 = np.broadcast_arrays(a00, a01, a10, a11)
    return np.stack([np.stack([a00, a01], -1), np.stack([a10, a11], -1)], -2)


def _sym(G):
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def _matvec(A, n):
    return np.einsum("...ab,...b->...a", A, np.broadcast_to(n, A.shape[:-1]))


def _dot(a, b):
    return np.einsum("...a,...a->...", a, np.broadcast_to(b, a.shape))


def _tangential(w, n):
    n = np.broadcast_to(n, w.shape)
    return w - _dot(w, n)[..., None] * n


class ManufacturedSolution:
    """Exact fields, forcing, boundary data and interface corrections."""

    FIELDS = ("u_f", "u_b", "p_f", "p_p", "p_b", "z")
    FORCINGS = ("f_f", "f_b", "g_b")
    CORRECTIONS = ("M_u", "M_s", "M_p", "M_e")

    def __init__(self, params: ModelParameters | None = None):
        self.params = params or ModelParameters()

    # ------------------------------------------------------------ fluid velocity

    def u_f(self, x, t):
        x1, x2 = _xy(x)
        c = np.cos(PI * (x1 * x2 - t))
        return _vec(PI * x1 * c + 1.0, -PI * x2 * c + 2.0 * x1)

    def grad_u_f(self, x, t):
        x1, x2 = _xy(x)
        th = PI * (x1 * x2 - t)
        c, s = np.cos(th), np.sin(th)
        p2 = PI * PI
        return _mat(
            PI * c - p2 * x1 * x2 * s,
            -p2 * x1 * x1 * s,
            p2 * x2 * x2 * s + 2.0,
            -PI * c + p2 * x1 * x2 * s,
        )

    def hess_u_f(self, x, t):
        x1, x2 = _xy(x)
        th = PI * (x1 * x2 - t)
        c, s = np.cos(th), np.sin(th)
        p2, p3 = PI**2, PI**3
        h1 = _mat(
            -2 * p2 * x2 * s - p3 * x1 * x2 * x2 * c,
            -2 * p2 * x1 * s - p3 * x1 * x1 * x2 * c,
            -2 * p2 * x1 * s - p3 * x1 * x1 * x2 * c,
            -p3 * x1**3 * c,
        )
        h2 = _mat(
            p3 * x2**3 * c,
            2 * p2 * x2 * s + p3 * x1 * x2 * x2 * c,
            2 * p2 * x2 * s + p3 * x1 * x2 * x2 * c,
            2 * p2 * x1 * s + p3 * x1 * x1 * x2 * c,
        )
        return np.stack([h1, h2], axis=-3)

    def dt_u_f(self, x, t):
        x1, x2 = _xy(x)
        s = np.sin(PI * (x1 * x2 - t))
        return _vec(PI * PI * x1 * s, -PI * PI * x2 * s)

    # ------------------------------------------------------------ displacement

    def _ub_parts(self, x, t):
        x1, x2 = _xy(x)
        a, b, e, g = 4 * (x1 - t), 3 * x2, 5 * x1, 2 * (x2 - t)
        return (np.sin(10 * PI * t), 10 * PI * np.cos(10 * PI * t), np.sin(a), np.cos(a),
                np.sin(b), np.cos(b), np.sin(e), np.cos(e), np.sin(g), np.cos(g))

    def u_b(self, x, t):
        S, _, sa, ca, sb, cb, se, ce, sg, cg = self._ub_parts(x, t)
        return _vec(S * ca * cb, S * se * cg)

    def grad_u_b(self, x, t):
        S, _, sa, ca, sb, cb, se, ce, sg, cg = self._ub_parts(x, t)
        return _mat(-4 * S * sa * cb, -3 * S * ca * sb, 5 * S * ce * cg, -2 * S * se * sg)

    def hess_u_b(self, x, t):
        S, _, sa, ca, sb, cb, se, ce, sg, cg = self._ub_parts(x, t)
        h1 = _mat(-16 * S * ca * cb, 12 * S * sa * sb, 12 * S * sa * sb, -9 * S * ca * cb)
        h2 = _mat(-25 * S * se * cg, -10 * S * ce * sg, -10 * S * ce * sg, -4 * S * se * cg)
        return np.stack([h1, h2], axis=-3)

    def dt_u_b(self, x, t):
        S, dS, sa, ca, sb, cb, se, ce, sg, cg = self._ub_parts(x, t)
        return _vec(dS * ca * cb + 4 * S * sa * cb, dS * se * cg + 2 * S * se * sg)

    def dt_grad_u_b(self, x, t):
        S, dS, sa, ca, sb, cb, se, ce, sg, cg = self._ub_parts(x, t)
        return _mat(
            -4 * dS * sa * cb + 16 * S * ca * cb,
            -3 * dS * ca * sb - 12 * S * sa * sb,
            5 * dS * ce * cg + 10 * S * ce * sg,
            -2 * dS * se * sg + 4 * S * se * cg,
        )

    # ------------------------------------------------------------ pressures

    def p_f(self, x, t):
        x1, x2 = _xy(x)
        return np.sin(3 * x1) * np.cos(4 * (x2 - t))

    def grad_p_f(self, x, t):
        x1, x2 = _xy(x)
        return _vec(3 * np.cos(3 * x1) * np.cos(4 * (x2 - t)), -4 * np.sin(3 * x1) * np.sin(4 * (x2 - t)))

    def p_p(self, x, t):
        x1, x2 = _xy(x)
        return np.sin(3 * (x1 * x2 - t))

    def grad_p_p(self, x, t):
        x1, x2 = _xy(x)
        c = np.cos(3 * (x1 * x2 - t))
        return _vec(3 * x2 * c, 3 * x1 * c)

    def hess_p_p(self, x, t):
        x1, x2 = _xy(x)
        ph = 3 * (x1 * x2 - t)
        c, s = np.cos(ph), np.sin(ph)
        off = 3 * c - 9 * x1 * x2 * s
        return _mat(-9 * x2 * x2 * s, off, off, -9 * x1 * x1 * s)

    def dt_p_p(self, x, t):
        x1, x2 = _xy(x)
        return -3 * np.cos(3 * (x1 * x2 - t))

    # ------------------------------------------------------------ derived fields

    def div_u_b(self, x, t):
        G = self.grad_u_b(x, t)
        return G[..., 0, 0] + G[..., 1, 1]

    def p_b(self, x, t):
        pr = self.params
        return pr.alpha * self.p_p(x, t) - pr.lam * self.div_u_b(x, t)

    def grad_p_b(self, x, t):
        pr = self.params
        H = self.hess_u_b(x, t)
        grad_div = H[..., 0, 0, :] + H[..., 1, 1, :]
        return pr.alpha * self.grad_p_p(x, t) - pr.lam * grad_div

    def dt_p_b(self, x, t):
        pr = self.params
        dG = self.dt_grad_u_b(x, t)
        return pr.alpha * self.dt_p_p(x, t) - pr.lam * (dG[..., 0, 0] + dG[..., 1, 1])

    def z(self, x, t):
        pr = self.params
        return -(pr.kappa / pr.mu_f) * self.grad_p_p(x, t)

    def div_z(self, x, t):
        pr = self.params
        H = self.hess_p_p(x, t)
        return -(pr.kappa / pr.mu_f) * (H[..., 0, 0] + H[..., 1, 1])

    def sigma_f(self, x, t):
        p = self.p_f(x, t)
        return p[..., None, None] * np.eye(2) - 2 * self.params.mu_f * _sym(self.grad_u_f(x, t))

    def sigma_b(self, x, t):
        p = self.p_b(x, t)
        return p[..., None, None] * np.eye(2) - 2 * self.params.mu_b * _sym(self.grad_u_b(x, t))

    @staticmethod
    def _div_sym_grad(H):
        # div(2 eps(u))_a = sum_b (d_b d_b u_a + d_a d_b u_b)
        lap = H[..., :, 0, 0] + H[..., :, 1, 1]
        grad_div = H[..., 0, 0, :] + H[..., 1, 1, :]
        return lap + grad_div

    # ------------------------------------------------------------ forcing

    def f_f(self, x, t):
        u = self.u_f(x, t)
        G = self.grad_u_f(x, t)
        div = G[..., 0, 0] + G[..., 1, 1]
        conv = _matvec(G, u) + u * div[..., None]
        visc = self.params.mu_f * self._div_sym_grad(self.hess_u_f(x, t))
        return self.dt_u_f(x, t) + conv + self.grad_p_f(x, t) - visc

    def f_b(self, x, t):
        visc = self.params.mu_b * self._div_sym_grad(self.hess_u_b(x, t))
        return self.grad_p_b(x, t) - visc

    def g_b(self, x, t):
        pr = self.params
        dpp = self.dt_p_p(x, t)
        return pr.c0 * dpp + pr.alpha / pr.lam * (pr.alpha * dpp - self.dt_p_b(x, t)) + self.div_z(x, t)

    # ------------------------------------------------------------ boundary data

    def U_f(self, x, t):
        return self.u_f(x, t)

    def U_b(self, x, t):
        return self.u_b(x, t)

    def P_p(self, x, t):
        return self.p_p(x, t)

    def S_f(self, x, t, n):
        return _matvec(self.sigma_f(x, t), n)

    def S_b(self, x, t, n):
        return _matvec(self.sigma_b(x, t), n)

    def Z_d(self, x, t, n):
        return _dot(self.z(x, t), n)

    # ------------------------------------------------------------ interface corrections

    def M_u(self, x, t):
        n = INTERFACE_NORMAL
        return _dot(self.u_f(x, t), n) - _dot(self.dt_u_b(x, t) + self.z(x, t), n)

    def M_s(self, x, t):
        n = INTERFACE_NORMAL
        return _matvec(self.sigma_f(x, t), n) - _matvec(self.sigma_b(x, t), n)

    def M_p(self, x, t):
        n = INTERFACE_NORMAL
        return _dot(_matvec(self.sigma_f(x, t), n), n) - self.p_p(x, t)

    def M_e(self, x, t):
        pr = self.params
        n = INTERFACE_NORMAL
        shear = -2 * pr.mu_f * _tangential(_matvec(_sym(self.grad_u_f(x, t)), n), n)
        slip = pr.gamma * pr.mu_f / np.sqrt(pr.kappa) * _tangential(self.u_f(x, t) - self.dt_u_b(x, t), n)
        return shear - slip

    # ------------------------------------------------------------ checked entry points

    def eval_exact(self, field: str, x, t):
        if field not in self.FIELDS:
            raise KeyError(field)
        x = np.asarray(x, dtype=float)
        x2 = x[..., 1]
        if field.endswith("_f"):
            if np.any(x2 < 0.5 - _TOL):
                raise ValueError(f"{field} is defined on the fluid region only")
        elif np.any(x2 > 0.5 + _TOL):
            raise ValueError(f"{field} is defined on the poroelastic region only")
        return getattr(self, field)(x, t)

    def eval_forcing(self, name: str, x, t):
        if name not in self.FORCINGS:
            raise KeyError(name)
        return getattr(self, name)(x, t)

    def eval_interface_corrections(self, name: str, x, t):
        if name not in self.CORRECTIONS:
            raise KeyError(name)
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x[..., 1] - 0.5) > _TOL):
            raise ValueError("interface corrections are defined on x2 = 0.5 only")
        return getattr(self, name)(x, t)
