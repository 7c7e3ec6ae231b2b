"""Convex minimization of the multiplier objective inside a Bellman step.

Every problem in a batch has the form::

    lam -> max_{k in mask} const[k] + slope[k] . lam + cont(lam)[k]

on the box ``0 <= lam <= lam_max``, where ``cont`` is the (already
discounted) continuation value.  Problems are solved together so that a full
grid sweep costs a few dozen vectorized evaluations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["InnerProblem", "InnerResult", "evaluate_objective", "minimize", "TIE_RTOL"]

TIE_RTOL = 1e-9
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class InnerProblem:
    const: np.ndarray  # (B, K)
    slope: np.ndarray  # (B, K, I)
    continuation: Callable[[np.ndarray], np.ndarray]  # (B, I) -> (B, K)
    lam_max: np.ndarray  # (B,)
    mask: np.ndarray | None = None  # (B, K) bool
    fd_step: float = 1e-7

    def __post_init__(self):
        self.const = np.atleast_2d(np.asarray(self.const, dtype=float))
        self.slope = np.asarray(self.slope, dtype=float)
        if self.slope.ndim == 2:
            self.slope = self.slope[..., None]
        if self.mask is None:
            self.mask = np.ones(self.const.shape, dtype=bool)
        self.lam_max = np.broadcast_to(np.asarray(self.lam_max, dtype=float),
                                       (self.const.shape[0],)).copy()

    @property
    def batch(self):
        return self.const.shape[0]

    @property
    def dim(self):
        return self.slope.shape[2]

    def brackets(self, lam):
        lam = np.asarray(lam, dtype=float).reshape(self.batch, self.dim)
        out = self.const + np.einsum("bki,bi->bk", self.slope, lam) + self.continuation(lam)
        return np.where(self.mask, out, -np.inf)


@dataclass
class InnerResult:
    lam: np.ndarray  # (B, I)
    value: np.ndarray  # (B,)
    kkt_residual: np.ndarray  # (B,)
    converged: np.ndarray  # (B,) bool
    at_box: np.ndarray  # (B,) bool, some coordinate pinned at lam_max


def _tie_mask(br, value):
    tol = TIE_RTOL * (1.0 + np.abs(value))
    return br >= (value - tol)[:, None]


def evaluate_objective(prob: InnerProblem, lam, with_subgradient=True):
    """Value, maximizing-action mask and one subgradient at ``lam``.

    The subgradient takes the first maximizer and differentiates its
    continuation by forward differences.
    """
    lam = np.asarray(lam, dtype=float).reshape(prob.batch, prob.dim)
    br = prob.brackets(lam)
    value = br.max(axis=1)
    ties = _tie_mask(br, value)
    if not with_subgradient:
        return value, ties, None
    rows = np.arange(prob.batch)
    k_star = np.argmax(br, axis=1)
    base = prob.continuation(lam)[rows, k_star]
    sub = prob.slope[rows, k_star, :].copy()
    h = prob.fd_step * (1.0 + np.abs(lam).max(axis=1))
    for i in range(prob.dim):
        step = lam.copy()
        step[:, i] += h
        sub[:, i] += (prob.continuation(step)[rows, k_star] - base) / h
    return value, ties, sub


def _objective(prob, lam):
    return prob.brackets(lam).max(axis=1)


def _golden(prob, tol, max_iter, warm_start):
    B = prob.batch
    hi = prob.lam_max.copy()
    lo = np.zeros(B)
    f = lambda x: _objective(prob, x[:, None])  # noqa: E731
    width_tol = tol * (1.0 + hi)

    # convexity: f(delta) >= f(0) pins the minimizer at the boundary
    f0 = f(lo)
    fd = f(np.minimum(width_tol, hi))
    pinned = fd >= f0

    a, b = lo.copy(), hi.copy()
    x1 = b - _INVPHI * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1, f2 = f(x1), f(x2)
    it = 0
    while it < max_iter and np.any((b - a) > width_tol):
        left = f1 <= f2  # minimum lies in [a, x2]
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        nx1 = np.where(left, b - _INVPHI * (b - a), x2)
        nx2 = np.where(left, x1, a + _INVPHI * (b - a))
        fn = f(np.where(left, nx1, nx2))
        f1, f2 = np.where(left, fn, f2), np.where(left, f1, fn)
        x1, x2 = nx1, nx2
        it += 1
    mid = 0.5 * (a + b)
    cands = [np.where(pinned, 0.0, mid), lo, hi]
    if warm_start is not None:
        cands.append(np.clip(np.asarray(warm_start, dtype=float).reshape(B), 0.0, hi))
    vals = [f0 if c is lo else f(c) for c in cands]
    pick = np.argmin(np.stack(vals), axis=0)
    lam = np.choose(pick, cands)
    value = np.choose(pick, vals)
    converged = (b - a) <= width_tol
    return lam[:, None], value, converged


def _projected_subgradient(prob, tol, max_iter, warm_start, sigma0=None, step_scale=0.5):
    B, I = prob.batch, prob.dim
    lam = np.zeros((B, I)) if warm_start is None else \
        np.clip(np.asarray(warm_start, dtype=float).reshape(B, I), 0.0, prob.lam_max[:, None])
    step0 = step_scale * prob.lam_max if sigma0 is None else np.full(B, sigma0)
    best_lam = lam.copy()
    best_val, _, _ = evaluate_objective(prob, lam, with_subgradient=False)
    for k in range(1, max_iter + 1):
        val, _, sub = evaluate_objective(prob, lam)
        better = val < best_val
        best_val = np.where(better, val, best_val)
        best_lam[better] = lam[better]
        norm = np.linalg.norm(sub, axis=1)
        norm = np.where(norm > 0, norm, 1.0)
        lam = lam - (step0 / k / norm)[:, None] * sub
        lam = np.clip(lam, 0.0, prob.lam_max[:, None])
    val = _objective(prob, lam)
    better = val < best_val
    best_val = np.where(better, val, best_val)
    best_lam[better] = lam[better]
    converged = np.ones(B, dtype=bool)
    return best_lam, best_val, converged


def kkt_residual(prob: InnerProblem, lam, value=None):
    """Largest violation of the one-sided optimality slopes, per problem.

    Interior coordinates need left slope <= 0 <= right slope; coordinates at
    zero only need a nonnegative right slope.
    """
    lam = np.asarray(lam, dtype=float).reshape(prob.batch, prob.dim)
    f0 = _objective(prob, lam) if value is None else value
    h = 1e-6 * (1.0 + np.abs(lam).max(axis=1))
    res = np.zeros(prob.batch)
    for i in range(prob.dim):
        up = lam.copy()
        up[:, i] = np.minimum(up[:, i] + h, prob.lam_max)
        dn = lam.copy()
        dn[:, i] = np.maximum(dn[:, i] - h, 0.0)
        hu = up[:, i] - lam[:, i]
        hd = lam[:, i] - dn[:, i]
        right = np.where(hu > 0, (_objective(prob, up) - f0) / np.where(hu > 0, hu, 1), 0.0)
        left = np.where(hd > 0, (f0 - _objective(prob, dn)) / np.where(hd > 0, hd, 1), 0.0)
        res = np.maximum(res, np.where(hu > 0, np.maximum(-right, 0.0), 0.0))
        res = np.maximum(res, np.where(hd > 0, np.maximum(left, 0.0), 0.0))
    return res


def minimize(prob: InnerProblem, tol=1e-11, max_iter=None, warm_start=None,
             with_kkt=False) -> InnerResult:
    """Minimize every problem of the batch over its multiplier box.

    One dimension uses golden-section search, which is exact for convex
    objectives up to ``tol`` relative bracket width.  Higher dimensions use
    projected subgradient steps ``lam_max / (2k)`` along the normalized
    subgradient, keeping the best iterate; warm-started problems take
    shorter steps ``lam_max / (20k)``.
    """
    if prob.dim == 1:
        lam, value, converged = _golden(prob, tol, max_iter or 200, warm_start)
    elif warm_start is None:
        lam, value, converged = _projected_subgradient(prob, tol, max_iter or 3000, None)
    else:
        # a warm start is usually close: short steps, fewer of them
        lam, value, converged = _projected_subgradient(prob, tol, max_iter or 500, warm_start,
                                                       step_scale=0.05)
    at_box = np.any(lam >= prob.lam_max[:, None] * (1 - 1e-12), axis=1) & (prob.lam_max > 0)
    kkt = kkt_residual(prob, lam, value) if with_kkt else np.full(prob.batch, np.nan)
    return InnerResult(lam=lam, value=value, kkt_residual=kkt, converged=converged, at_box=at_box)
