"""ADMM for ``min_b sum check_loss(y - X b) + lam * b' Omega b``.

The problem is split as ``r + X b = y`` with the check loss on ``r`` and the
quadratic penalty on ``b``; the ``b`` step is a ridge-type solve whose
factorization is computed once per ``(X, lam, Omega, rho)`` and may be shared
between calls.

Besides single problems, the solver runs many problems at once when they share
the base design ``X``. Each problem may stack several response blocks, each
block scaled by a positive weight (``w * X``, ``w * y``); weighted check losses
fold into row scaling because ``w * check_loss(u) == check_loss(w * u)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.linalg import LinAlgError, cholesky, eigh, solve_triangular

from .exceptions import InvalidInputError, NumericalError
from .quantile import check_loss


@dataclass
class AdmmOptions:
    rho: float = 1.2
    eps_abs: float = 1e-4
    eps_rel: float = 1e-2
    max_iters: int = 5000
    paper_exact_tolerances: bool = False

    def __post_init__(self):
        if self.rho <= 0 or self.eps_abs <= 0 or self.eps_rel <= 0:
            raise InvalidInputError("rho, eps_abs and eps_rel must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InvalidInputError("max_iters must be a positive integer")
        self.max_iters = int(self.max_iters)


@dataclass
class AdmmResult:
    b: np.ndarray
    iterations: int
    converged: bool
    primal_residual: float
    dual_residual: float
    eps_pri: float
    eps_dual: float
    objective: float
    r: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class AdmmFactor:
    """Reusable solver for ``(a X'X + 2 lam Omega / rho) b = rhs`` with ``a >= 1``.

    With ``G = X'X + P = L L'`` (Cholesky, ``P = 2 lam Omega / rho``) and
    ``L^-1 P L^-T = Q diag(mu) Q'``, every ``a X'X + P`` is diagonalised by
    ``T = L^-T Q``: its inverse is ``T diag(1 / (a + (1 - a) mu)) T'``.
    ``a = 1`` is the plain (unweighted) system.
    """

    T: np.ndarray
    mu: np.ndarray
    lam: float
    rho: float
    jitter: float

    def solve(self, rhs, scale=1.0):
        rhs = np.asarray(rhs, dtype=float)
        scale = np.asarray(scale, dtype=float)
        z = self.T.T @ rhs
        denom = scale + (1.0 - scale) * (self.mu if rhs.ndim == 1 else self.mu[:, None])
        return self.T @ (z / denom)


def factorize(X, lam, omega, rho) -> AdmmFactor:
    X = np.asarray(X, dtype=float)
    K = X.shape[1]
    gram = X.T @ X
    P = (2.0 * lam / rho) * np.asarray(omega, dtype=float) if lam else np.zeros((K, K))
    jitter = 1e-10 * np.trace(gram + P) / K if lam == 0 else 0.0
    for _ in range(2):
        Pj = P + jitter * np.eye(K)
        try:
            L = cholesky(gram + Pj, lower=True)
            break
        except LinAlgError:
            jitter = max(jitter, 1e-10 * max(np.trace(gram + P), 1.0) / K)
    else:
        raise NumericalError("normal-equation matrix is singular even after ridge jitter")
    Linv_P = solve_triangular(L, Pj, lower=True)
    M = solve_triangular(L, Linv_P.T, lower=True)
    mu, Q = eigh((M + M.T) / 2.0)
    mu = np.clip(mu, 0.0, 1.0)
    T = solve_triangular(L.T, Q, lower=False)
    return AdmmFactor(T, mu, float(lam), float(rho), float(jitter))


def penalized_objective(X, y, b, tau, lam, omega, block_weights=None) -> float:
    """``sum_k w_k sum check_loss(y_k - X b) + lam b' Omega b`` recomputed directly."""
    X = np.asarray(X, dtype=float)
    b = np.asarray(b, dtype=float)
    y = np.asarray(y, dtype=float)
    if block_weights is None:
        loss = np.sum(check_loss(y.ravel() - X @ b, tau))
    else:
        y = y.reshape(len(block_weights), -1)
        loss = sum(w * np.sum(check_loss(yk - X @ b, tau)) for w, yk in zip(block_weights, y))
    return float(loss + lam * b @ np.asarray(omega) @ b)


@njit(cache=True)
def _prox_step(Y, W, Xb, U, shift, thresh, R, Zr, r2):
    L, N, m = Y.shape
    Zr[:] = 0.0
    r2[:] = 0.0
    for l in range(L):
        for n in range(N):
            for c in range(m):
                w = W[l, c]
                if w == 0.0:
                    R[l, n, c] = 0.0
                    continue
                v = Y[l, n, c] - w * Xb[n, c] - U[l, n, c] - shift
                if v > thresh:
                    r = v - thresh
                elif v < -thresh:
                    r = v + thresh
                else:
                    r = 0.0
                R[l, n, c] = r
                Zr[n, c] += w * r
                r2[c] += r * r


@njit(cache=True)
def _dual_step(Y, W, R, U, Xb, Xb_prev, pri2, fit2, dual2, u2):
    L, N, m = Y.shape
    pri2[:] = 0.0
    fit2[:] = 0.0
    dual2[:] = 0.0
    u2[:] = 0.0
    for l in range(L):
        for n in range(N):
            for c in range(m):
                w = W[l, c]
                if w == 0.0:
                    continue
                fit = w * Xb[n, c]
                res = R[l, n, c] + fit - Y[l, n, c]
                u = U[l, n, c] + res
                U[l, n, c] = u
                d = w * (Xb[n, c] - Xb_prev[n, c])
                pri2[c] += res * res
                fit2[c] += fit * fit
                dual2[c] += d * d
                u2[c] += u * u


def _run_columns(X, Yw, W, tau, lam, omega, opts, factor, trace=None):
    """Core iteration over ``m`` problems; ``Yw`` is ``(L, N, m)``, ``W`` is ``(L, m)``.

    Blocks with zero weight are padding: their rows are all zero and stay inert.
    Each column stops independently as soon as its own criterion holds.
    """
    L, N, m = Yw.shape
    K = X.shape[1]
    rho = opts.rho
    thresh = 1.0 / (2.0 * rho)
    shift = (2.0 * tau - 1.0) / (2.0 * rho)
    omega = np.asarray(omega, dtype=float)
    gram = X.T @ X
    scale_all = np.sum(W * W, axis=0)
    sqrt_n_all = np.sqrt(N * np.count_nonzero(W, axis=0))
    sqrt_k = math.sqrt(K)
    y_norm_all = np.sqrt(np.sum(Yw * Yw, axis=(0, 1)))
    CY_all = X.T @ np.einsum("lnm,lm->nm", Yw, W)

    out_b = np.zeros((K, m))
    out_r = np.zeros_like(Yw)
    out_u = np.zeros_like(Yw)
    out_it = np.zeros(m, dtype=int)
    out_conv = np.zeros(m, dtype=bool)
    out_stats = np.full((4, m), np.inf)

    idx = np.arange(m)
    Yc, Wc, CY = np.ascontiguousarray(Yw), np.ascontiguousarray(W), CY_all
    scale, sqrt_n, y_norm = scale_all, sqrt_n_all, y_norm_all
    Xb = np.zeros((N, m))
    U = np.zeros_like(Yw)
    R = Yw.copy()
    XtU = np.zeros((K, m))
    Zr = np.empty((N, m))
    r2, pri2, fit2, dual2, u2 = (np.empty(m) for _ in range(5))
    for it in range(1, opts.max_iters + 1):
        _prox_step(Yc, Wc, Xb, U, shift, thresh, R, Zr, r2)
        PR = X.T @ Zr
        B = factor.solve(CY - PR - XtU, scale)
        Xb_prev = Xb
        Xb = np.ascontiguousarray(X @ B)
        _dual_step(Yc, Wc, R, U, Xb, Xb_prev, pri2, fit2, dual2, u2)
        XtU = XtU + PR + scale * (gram @ B) - CY

        pri = np.sqrt(pri2)
        dual = rho * np.sqrt(dual2)
        eps_pri = sqrt_n * opts.eps_abs + opts.eps_rel * np.maximum(
            np.sqrt(r2), np.maximum(np.sqrt(fit2), y_norm)
        )
        if opts.paper_exact_tolerances:
            eps_dual = sqrt_n * opts.eps_abs + opts.eps_rel * np.sqrt(u2)
        else:
            eps_dual = sqrt_k * opts.eps_abs + opts.eps_rel * rho * np.sqrt(
                np.sum(XtU * XtU, axis=0)
            )
        if trace is not None:
            fit = Wc[:, None, 0] * Xb[None, :, 0]
            obj = np.sum(check_loss(Yc[:, :, 0] - fit, tau)) + lam * B[:, 0] @ omega @ B[:, 0]
            trace.append((it, float(pri[0]), float(dual[0]), float(obj)))

        ok = (pri <= eps_pri) & (dual <= eps_dual)
        done = ok | (it == opts.max_iters)
        if done.any():
            cols = idx[done]
            out_b[:, cols] = B[:, done]
            out_r[:, :, cols] = R[:, :, done]
            out_u[:, :, cols] = U[:, :, done]
            out_it[cols] = it
            out_conv[cols] = ok[done]
            out_stats[:, cols] = np.vstack([pri, dual, eps_pri, eps_dual])[:, done]
            keep = ~done
            if not keep.any():
                break
            idx = idx[keep]
            Yc, Wc = np.ascontiguousarray(Yc[:, :, keep]), np.ascontiguousarray(Wc[:, keep])
            CY, XtU = CY[:, keep], XtU[:, keep]
            scale, sqrt_n, y_norm = scale[keep], sqrt_n[keep], y_norm[keep]
            Xb = np.ascontiguousarray(Xb[:, keep])
            U, R = np.ascontiguousarray(U[:, :, keep]), np.ascontiguousarray(R[:, :, keep])
            Zr = np.empty((N, idx.size))
            r2, pri2, fit2, dual2, u2 = (np.empty(idx.size) for _ in range(5))

    results = []
    for c in range(m):
        nz = W[:, c] > 0
        b = out_b[:, c]
        fit = W[nz, c][:, None] * (X @ b)[None, :]
        obj = float(np.sum(check_loss(Yw[nz, :, c] - fit, tau)) + lam * b @ omega @ b)
        pri, dual, eps_pri, eps_dual = out_stats[:, c]
        results.append(
            AdmmResult(
                b=b,
                iterations=int(out_it[c]),
                converged=bool(out_conv[c]),
                primal_residual=float(pri),
                dual_residual=float(dual),
                eps_pri=float(eps_pri),
                eps_dual=float(eps_dual),
                objective=obj,
                r=out_r[nz, :, c].ravel(),
                u=out_u[nz, :, c].ravel(),
            )
        )
    return results


def _check_common(tau, lam, opts, factor):
    if not 0.0 < tau < 1.0:
        raise InvalidInputError(f"tau must lie in (0, 1), got {tau!r}")
    if lam < 0:
        raise InvalidInputError("lambda must be nonnegative")
    if factor is not None and (factor.rho != opts.rho or factor.lam != lam):
        raise InvalidInputError("cached factor was built for a different (lam, rho)")


def solve_pqr(
    X, y, tau, lam, omega, opts=None, *, block_weights=None, factor=None, trace=None
) -> AdmmResult:
    """Penalized quantile regression by scaled-form ADMM.

    Parameters
    ----------
    X : ndarray (N, K)
    y : ndarray (N,), or (L, N) together with ``block_weights``
    tau : float in (0, 1)
    lam : float >= 0
    omega : ndarray (K, K), positive semidefinite
    opts : AdmmOptions, optional
    block_weights : sequence of L positive floats, optional
        Solve the stacked problem ``sum_k w_k sum check_loss(y_k - X b)``.
    factor : AdmmFactor, optional
        Reused instead of factorizing again; must come from ``factorize`` with
        the same ``X``, ``lam``, ``Omega`` and ``opts.rho``.
    trace : list, optional
        When given, receives ``(iteration, primal, dual, objective)`` tuples.

    Iterates, from ``b = 0, r = y, u = 0``::

        r <- soft-threshold of y - X b - u - (2 tau - 1) / (2 rho) at 1 / (2 rho)
        b <- (2 lam Omega / rho + X'X)^{-1} X' (y - r - u)
        u <- u + r + X b - y

    until the primal residual ``y - X b - r`` and dual residual
    ``rho X (b - b_prev)`` fall under their mixed absolute/relative tolerances.
    Reaching ``max_iters`` returns ``converged=False`` rather than raising.
    """
    opts = opts or AdmmOptions()
    _check_common(tau, lam, opts, factor)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidInputError("design must be a nonempty 2-D array")
    N = X.shape[0]
    if block_weights is None:
        W = np.ones(1)
    else:
        W = np.asarray(block_weights, dtype=float).ravel()
        if np.any(W <= 0):
            raise InvalidInputError("block weights must be positive")
    y = np.asarray(y, dtype=float)
    if y.size != W.size * N:
        raise InvalidInputError(f"design {X.shape} and response {y.shape} disagree")
    Yw = (W[:, None] * y.reshape(W.size, N))[:, :, None]
    factor = factor or factorize(X, lam, omega, opts.rho)
    return _run_columns(X, Yw, W[:, None], tau, lam, omega, opts, factor, trace)[0]


def solve_pqr_many(
    X, Y, tau, lam, omega, opts=None, *, block_weights=None, factor=None
) -> list[AdmmResult]:
    """Solve ``m`` independent problems sharing the base design ``X``.

    ``Y`` is ``(N, m)`` for plain problems, or ``(L, N, m)`` with
    ``block_weights`` of shape ``(L, m)`` for stacked problems; a zero weight
    marks an unused block. Each column matches ``solve_pqr`` on that column.
    """
    opts = opts or AdmmOptions()
    _check_common(tau, lam, opts, factor)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 2:
        Y = Y[None]
    L, N, m = Y.shape
    if N != X.shape[0]:
        raise InvalidInputError(f"design {X.shape} and responses {Y.shape} disagree")
    W = np.ones((1, m)) if block_weights is None else np.asarray(block_weights, dtype=float)
    if W.shape != (L, m) or np.any(W < 0) or np.any(W.max(axis=0) <= 0):
        raise InvalidInputError("block weights must be (L, m), nonnegative, one positive per column")
    factor = factor or factorize(X, lam, omega, opts.rho)
    return _run_columns(X, W[:, None, :] * Y, W, tau, lam, omega, opts, factor)


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "primal_residual", "dual_residual", "objective"])
        writer.writerows(trace)
