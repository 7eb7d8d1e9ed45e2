"""Preconditioned Krylov solvers with optional zero-mean (pure Neumann) handling.

All methods report the true relative residual ``||b - A x|| / ||b||`` of the
returned iterate, so ``converged`` always means the stated tolerance holds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spilu, spsolve_triangular

from .fem import SparseOperator

log = logging.getLogger(__name__)

METHODS = ("cg", "bicgstab", "gmres")
PRECONDITIONERS = ("none", "jacobi", "ssor", "ilu")


class InvalidWeightsError(ValueError):
    pass


@dataclass(frozen=True)
class SolveSpec:
    method: str = "cg"
    rtol: float = 1e-8
    atol: float = 1e-14
    maxiter: int = 2000
    preconditioner: str = "jacobi"
    zero_mean: bool = False
    restart: int = 60
    omega: float = 1.0
    drop_tol: float = 1e-5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if self.maxiter < 1 or self.restart < 1:
            raise ValueError("maxiter and restart must be at least 1")
        if not 0 < self.omega < 2:
            raise ValueError("SSOR relaxation must lie in (0, 2)")


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    history: tuple[float, ...] = ()


def project_zero_mean(field, mass_weights) -> np.ndarray:
    """Subtract the weighted mean so that ``sum(w * field) == 0``."""
    w = np.asarray(mass_weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise InvalidWeightsError("mass weights must have positive total")
    f = np.asarray(field, dtype=float)
    return f - np.dot(w, f) / total


def _preconditioner(A: sp.csr_matrix, kind: str, omega: float, drop_tol: float = 1e-5,
                    singular: bool = False):
    if kind == "none":
        return lambda r: r
    if kind == "ilu":
        # incomplete LU from SuperLU; with a small drop tolerance it is close
        # to an exact factorization and pays off when the operator is reused.
        # A pure Neumann operator is shifted slightly to make it factorizable;
        # the constant mode this amplifies is projected out by the caller.
        B = A
        if singular:
            B = A + sp.identity(A.shape[0], format="csr") * (1e-10 * abs(A.diagonal()).max())
        return spilu(B.tocsc(), drop_tol=drop_tol, fill_factor=20).solve
    d = A.diagonal().copy()
    d[d == 0] = 1.0
    if kind == "jacobi":
        inv = 1.0 / d
        return lambda r: inv * r
    # symmetric SOR: (D/w + L) (D/w)^-1 (D/w + U) scaled by w/(2-w)
    lower = (sp.tril(A, k=-1) + sp.diags(d / omega)).tocsr()
    upper = (sp.triu(A, k=1) + sp.diags(d / omega)).tocsr()
    scale = (2.0 - omega) / omega * d

    def apply(r):
        y = spsolve_triangular(lower, r, lower=True)
        return spsolve_triangular(upper, scale * y, lower=False)
    return apply


def _cached_preconditioner(op, A, spec):
    if not isinstance(op, SparseOperator):
        return _preconditioner(A, spec.preconditioner, spec.omega, spec.drop_tol,
                               spec.zero_mean)
    key = (spec.preconditioner, spec.omega, spec.drop_tol, spec.zero_mean)
    if key not in op.factor_cache:
        op.factor_cache[key] = _preconditioner(A, *key)
    return op.factor_cache[key]


def solve(op, rhs, x0=None, spec: SolveSpec = SolveSpec(), weights=None):
    """Solve ``op x = rhs``; returns ``(x, SolveReport)``.

    With ``spec.zero_mean`` the right-hand side is made compatible with the
    constant null space (plain mean removed) and every iterate is shifted to
    zero ``weights``-weighted mean (uniform weights when not given).
    """
    A = op.matrix if isinstance(op, SparseOperator) else sp.csr_matrix(op)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"operator must be square, got {A.shape}")
    b = np.array(rhs, dtype=float, copy=True)
    n = b.size
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float, copy=True)
    if spec.zero_mean:
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        b -= b.mean()
        project = lambda v: project_zero_mean(v, w)   # noqa: E731
        x = project(x)
    else:
        project = None
    M = _cached_preconditioner(op, A, spec)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x = np.zeros(n)
        return x, SolveReport(0, 0.0, True, (0.0,))
    runner = {"cg": _cg, "bicgstab": _bicgstab, "gmres": _gmres}[spec.method]
    x, its, hist = runner(A, b, x, M, spec, bnorm, project)
    r = b - A @ x
    res = float(np.linalg.norm(r) / bnorm)
    converged = res <= spec.rtol or np.linalg.norm(r) <= spec.atol
    if not converged:
        log.debug("%s stopped after %d iterations at residual %.3e", spec.method, its, res)
    return x, SolveReport(its, res, bool(converged), tuple(hist))


def _target(spec, bnorm):
    return max(spec.rtol * bnorm, spec.atol)


def _cg(A, b, x, M, spec, bnorm, project):
    r = b - A @ x
    z = M(r)
    if project is not None:
        z = project(z)
    p = z.copy()
    rz = np.dot(r, z)
    target = _target(spec, bnorm)
    hist = [np.linalg.norm(r) / bnorm]
    its = 0
    while its < spec.maxiter and np.linalg.norm(r) > target:
        Ap = A @ p
        pAp = np.dot(p, Ap)
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        its += 1
        hist.append(np.linalg.norm(r) / bnorm)
        z = M(r)
        if project is not None:
            z = project(z)
        rz_new = np.dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if project is not None:
        x = project(x)
    return x, its, hist


def _bicgstab(A, b, x, M, spec, bnorm, project):
    r = b - A @ x
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    target = _target(spec, bnorm)
    hist = [np.linalg.norm(r) / bnorm]
    its = 0
    while its < spec.maxiter and np.linalg.norm(r) > target:
        rho_new = np.dot(r_hat, r)
        if rho_new == 0.0:
            break
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        ph = M(p)
        if project is not None:
            ph = project(ph)
        v = A @ ph
        denom = np.dot(r_hat, v)
        if denom == 0.0:
            break
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) <= target:
            x += alpha * ph
            r = s
            its += 1
            hist.append(np.linalg.norm(r) / bnorm)
            break
        sh = M(s)
        if project is not None:
            sh = project(sh)
        t = A @ sh
        tt = np.dot(t, t)
        if tt == 0.0:
            break
        omega = np.dot(t, s) / tt
        x += alpha * ph + omega * sh
        r = s - omega * t
        its += 1
        hist.append(np.linalg.norm(r) / bnorm)
        if omega == 0.0:
            break
    if project is not None:
        x = project(x)
    return x, its, hist


def _gmres(A, b, x, M, spec, bnorm, project):
    """Restarted GMRES, right preconditioned (residual is the true residual)."""
    target = _target(spec, bnorm)
    m = spec.restart
    n = b.size
    r = b - A @ x
    beta = np.linalg.norm(r)
    hist = [beta / bnorm]
    its = 0
    while beta > target and its < spec.maxiter:
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k_used = 0
        for k in range(m):
            z = M(V[k])
            if project is not None:
                z = project(z)
            Z[k] = z
            w = A @ z
            for _ in range(2):   # classical Gram-Schmidt, reorthogonalized once
                h = V[:k + 1] @ w
                w -= h @ V[:k + 1]
                H[:k + 1, k] += h
            H[k + 1, k] = np.linalg.norm(w)
            for i in range(k):
                tmp = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = tmp
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                k_used = k
                break
            cs[k] = H[k, k] / denom
            sn[k] = H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] *= cs[k]
            its += 1
            k_used = k + 1
            hist.append(abs(g[k + 1]) / bnorm)
            if abs(g[k + 1]) <= target or its >= spec.maxiter:
                break
            if H[k + 1, k] == 0.0 and denom == 0.0:
                break
            V[k + 1] = w / (np.linalg.norm(w) or 1.0)
        if k_used == 0:
            break
        y = np.linalg.solve(np.triu(H[:k_used, :k_used]), g[:k_used])
        x = x + y @ Z[:k_used]
        r = b - A @ x
        beta = np.linalg.norm(r)
        hist[-1] = beta / bnorm
    if project is not None:
        x = project(x)
    return x, its, hist
