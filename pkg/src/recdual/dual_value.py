"""Dual value functions on a truncated multiplier grid and their Bellman operators.

A field stores ``D(gamma, x, s)`` at the nodes of a tensor grid on
``[0, gamma_max]^I``.  Inside the box values are multilinear interpolants;
outside, the value at the box projection is extended with slope ``L`` in the
l1 distance, which keeps the extension an upper bound for any L-Lipschitz
function agreeing with the grid values.
"""
from __future__ import annotations

import bisect
import itertools
import logging
import math
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from . import inner_solver
from .inner_solver import InnerProblem, TIE_RTOL
from .model import ModelSpec, lipschitz_bound, solver_action_mask

__all__ = [
    "DualValueField",
    "IterationReport",
    "make_gamma_grid",
    "default_gamma_max",
    "init_affine_majorant",
    "evaluate",
    "subgradient",
    "bellman_apply",
    "bellman_sweep",
    "value_iterate",
    "m_norm",
    "check_invariants",
    "fe_residual",
]

log = logging.getLogger(__name__)

VARIANTS = ("infsup", "supinf")


@dataclass(frozen=True, eq=False)
class DualValueField:
    grids: tuple
    values: np.ndarray  # (X, S, n_1, ..., n_I)
    lipschitz: float
    variant: str = "infsup"
    reset: np.ndarray | None = None

    def __post_init__(self):
        grids = tuple(np.asarray(g, dtype=float) for g in self.grids)
        for g in grids:
            if g.ndim != 1 or g.size < 2 or g[0] != 0.0 or np.any(np.diff(g) <= 0):
                raise ValueError("each multiplier grid must start at 0, be strictly "
                                 "increasing and have at least two knots")
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        reset = np.zeros(len(grids), dtype=bool) if self.reset is None else \
            np.asarray(self.reset, dtype=bool)
        object.__setattr__(self, "reset", reset)
        expect = tuple(len(g) for g in grids)
        if self.values.shape[2:] != expect:
            raise ValueError(f"values shape {self.values.shape} does not match grid {expect}")

    @property
    def dim(self):
        return len(self.grids)

    @property
    def shape(self):
        return tuple(len(g) for g in self.grids)

    @property
    def gamma_max(self):
        return np.array([g[-1] for g in self.grids])

    @property
    def flat_values(self):
        X, S = self.values.shape[:2]
        return self.values.reshape(X, S, -1)

    def nodes(self) -> np.ndarray:
        """All grid points, ``(G, I)``, in the flattened C order of ``values``."""
        mesh = np.meshgrid(*self.grids, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def _corners_one(self, point):
        """Scalar fast path of :meth:`interp_weights` for a single point."""
        lists = self.__dict__.get("_grid_lists")
        if lists is None:
            lists = [g.tolist() for g in self.grids]
            strides = np.cumprod((1,) + self.shape[::-1])[:-1][::-1].tolist()
            self.__dict__["_grid_lists"] = lists = (lists, strides)
        grids, strides = lists
        dist = 0.0
        idx, w = [0], [1.0]
        for g, stride, p in zip(grids, strides, point):
            p = float(p)
            top = g[-1]
            c = 0.0 if p < 0.0 else (top if p > top else p)
            dist += abs(p - c)
            j = min(max(bisect.bisect_right(g, c) - 1, 0), len(g) - 2)
            f = (c - g[j]) / (g[j + 1] - g[j])
            idx = [i + j * stride for i in idx] + [i + (j + 1) * stride for i in idx]
            w = [v * (1.0 - f) for v in w] + [v * f for v in w]
        return idx, w, dist

    def interp_weights(self, points):
        """Corner indices ``(n, 2^I)``, weights ``(n, 2^I)`` and l1 overshoot ``(n,)``."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        n = pts.shape[0]
        if n == 1:
            idx, w, dist = self._corners_one(pts[0])
            return np.array([idx]), np.array([w]), np.array([dist])
        dist = np.zeros(n)
        lo_idx, frac = [], []
        for i, g in enumerate(self.grids):
            p = pts[:, i]
            c = np.clip(p, 0.0, g[-1])
            dist += np.abs(p - c)
            j = np.clip(np.searchsorted(g, c, side="right") - 1, 0, len(g) - 2)
            lo_idx.append(j)
            frac.append((c - g[j]) / (g[j + 1] - g[j]))
        strides = np.cumprod((1,) + self.shape[::-1])[:-1][::-1]
        idx = np.empty((n, 2 ** self.dim), dtype=np.int64)
        w = np.empty((n, 2 ** self.dim))
        for c, bits in enumerate(itertools.product((0, 1), repeat=self.dim)):
            flat = np.zeros(n, dtype=np.int64)
            wc = np.ones(n)
            for i, b in enumerate(bits):
                flat += (lo_idx[i] + b) * strides[i]
                wc *= frac[i] if b else 1.0 - frac[i]
            idx[:, c] = flat
            w[:, c] = wc
        return idx, w, dist

    def evaluate_many(self, points, x, s):
        idx, w, dist = self.interp_weights(points)
        V = self.flat_values
        x = np.broadcast_to(x, dist.shape)
        s = np.broadcast_to(s, dist.shape)
        vals = V[x[:, None], s[:, None], idx]
        return np.einsum("nc,nc->n", vals, w) + self.lipschitz * dist

    def values_all(self, point) -> np.ndarray:
        """``(X, S)`` table of the field at one multiplier point."""
        idx, w, dist = self._corners_one(np.ravel(point))
        return self.flat_values[:, :, idx] @ np.array(w) + self.lipschitz * dist


def make_gamma_grid(gamma_max, n=128, knee=1.0):
    """Knots ``knee * expm1(k d)`` on ``[0, gamma_max]``: close to uniform
    below ``knee``, geometric above it."""
    n = int(n)
    if n < 2:
        raise ValueError("grid needs at least two knots")
    if gamma_max <= 0 or knee <= 0:
        raise ValueError("gamma_max and knee must be positive")
    d = np.log1p(gamma_max / knee) / (n - 1)
    grid = knee * np.expm1(d * np.arange(n))
    grid[-1] = gamma_max
    return grid


def default_gamma_max(spec: ModelSpec, slater_eps=None):
    """Multiplier bound 2 (D + (1 + |gamma|_1) L) / eps at gamma = 0 with D <= L."""
    L = lipschitz_bound(spec)
    if slater_eps:
        return 4.0 * L / slater_eps
    return 10.0 * L / (1.0 - spec.beta)


def init_affine_majorant(spec: ModelSpec, grids, variant="infsup", lipschitz=None):
    """Field equal to ``(1 + sum gamma) L`` everywhere."""
    L = lipschitz_bound(spec) if lipschitz is None else float(lipschitz)
    grids = tuple(np.asarray(g, dtype=float) for g in grids)
    if len(grids) != spec.n_constraints:
        raise ValueError(f"{len(grids)} grids for {spec.n_constraints} constraints")
    mesh = np.meshgrid(*grids, indexing="ij")
    base = (1.0 + sum(mesh)) * L
    vals = np.broadcast_to(base, (spec.n_states, spec.n_shocks) + base.shape).copy()
    return DualValueField(grids=grids, values=vals, lipschitz=L, variant=variant,
                          reset=spec.reset)


def evaluate(field: DualValueField, gamma, x, s) -> float:
    return float(field.evaluate_many(np.atleast_1d(gamma)[None, :], x, s)[0])


def subgradient(field: DualValueField, gamma, x, s, eps_fd=None) -> np.ndarray:
    """Forward-difference slopes ``(D(gamma + eps e_i) - D(gamma)) / eps``."""
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if eps_fd is None:
        eps_fd = 1e-4 * (1.0 + np.max(np.abs(gamma)))
    pts = np.vstack([gamma, gamma + eps_fd * np.eye(gamma.size)])
    v = field.evaluate_many(pts, x, s)
    return (v[1:] - v[0]) / eps_fd


# -- Bellman machinery -------------------------------------------------------


def _expected_continuation(field, spec, mu, next_state, shock):
    """``beta * E_s field(mu_b, next_state[b, k], s')`` for a batch, ``(B, K)``."""
    idx, w, dist = field.interp_weights(mu)
    V = field.flat_values  # (X, S, G)
    P = spec.transition[shock]  # (B, S')
    B, K = next_state.shape
    X = V.shape[0]
    if X < K:
        # values for every next state, then gather by action
        vals = V[:, :, idx]  # (X, S', B, C)
        per_x = np.einsum("xsbc,bc,bs->bx", vals, w, P)
        out = np.take_along_axis(per_x, next_state, axis=1)
    else:
        S = V.shape[1]
        vals = V[next_state[:, :, None, None], np.arange(S)[None, None, :, None],
                 idx[:, None, None, :]]  # (B, K, S', C)
        out = np.einsum("bksc,bc,bs->bk", vals, w, P)
    return spec.beta * (out + field.lipschitz * dist[:, None])


@dataclass
class _NodeBatch:
    """Static data of a set of Bellman nodes ``(x, s, gamma)``."""

    x: np.ndarray
    s: np.ndarray
    gamma: np.ndarray  # (B, I)
    flat: np.ndarray  # (B,) flattened grid index, -1 off grid
    const: np.ndarray  # (B, A)
    slope: np.ndarray  # (B, A, I)
    next_state: np.ndarray  # (B, A)
    mask: np.ndarray  # (B, A)


def _node_batch(spec, x, s, gamma, flat=None):
    x = np.asarray(x, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    gamma = np.asarray(gamma, dtype=float).reshape(x.size, -1)
    g = spec.constraints.transpose(1, 3, 2, 0)[x, s]  # (B, A, I)
    gb = spec.thresholds.transpose(1, 3, 2, 0)[x, s]
    const = spec.reward[x, :, s] + np.einsum("bai,bi->ba", g, gamma)
    slope = g - gb
    amask = solver_action_mask(spec)[x, :, s]
    return _NodeBatch(x=x, s=s, gamma=gamma,
                      flat=np.full(x.size, -1) if flat is None else flat,
                      const=const, slope=slope, next_state=spec.next_state[x, :, s],
                      mask=amask)


def _lam_max(spec, field, nodes, slater_eps, current):
    L = field.lipschitz
    if slater_eps:
        lm = 2.0 * (current + (1.0 + nodes.gamma.sum(axis=1)) * L) / slater_eps
    else:
        lm = np.full(nodes.x.size, 10.0 * L / (1.0 - spec.beta))
    return np.maximum(lm, 1e-12)


def _solve_nodes(spec, field, nodes, variant, slater_eps=None, tol=1e-11, warm=None,
                 with_kkt=False):
    """Apply the Bellman operator at a batch of nodes.

    Returns ``(value, lam, ties)``.  For the inf-sup variant ``lam`` is
    ``(B, I)``; for sup-inf it is ``(B, A, I)`` (per-action minimizers, NaN
    for infeasible actions).  ``ties`` is the ``(B, A)`` argmax mask.
    """
    B, A = nodes.const.shape
    I = spec.n_constraints
    reset = spec.reset
    current = field.evaluate_many(nodes.gamma, nodes.x, nodes.s)
    lam_max = _lam_max(spec, field, nodes, slater_eps, current)

    if variant == "infsup":
        def cont(lam):
            mu = np.where(reset, lam, nodes.gamma + lam)
            return _expected_continuation(field, spec, mu, nodes.next_state, nodes.s)

        prob = InnerProblem(nodes.const, nodes.slope, cont, lam_max, nodes.mask)
        res = inner_solver.minimize(prob, tol=tol, warm_start=warm, with_kkt=with_kkt)
        _, ties, _ = inner_solver.evaluate_objective(prob, res.lam, with_subgradient=False)
        return res.value, res.lam, ties & nodes.mask, res

    # sup-inf: one problem per feasible (node, action) pair
    b_idx, a_idx = np.nonzero(nodes.mask)
    gam = nodes.gamma[b_idx]
    nxt = nodes.next_state[b_idx, a_idx][:, None]
    shock = nodes.s[b_idx]

    def cont(lam):
        mu = np.where(reset, lam, gam + lam)
        return _expected_continuation(field, spec, mu, nxt, shock)

    prob = InnerProblem(nodes.const[b_idx, a_idx][:, None],
                        nodes.slope[b_idx, a_idx][:, None, :], cont, lam_max[b_idx])
    w = None if warm is None else warm[b_idx, a_idx]
    res = inner_solver.minimize(prob, tol=tol, warm_start=w, with_kkt=with_kkt)
    per = np.full((B, A), -np.inf)
    per[b_idx, a_idx] = res.value
    value = per.max(axis=1)
    ties = per >= (value - TIE_RTOL * (1.0 + np.abs(value)))[:, None]
    lam = np.full((B, A, I), np.nan)
    lam[b_idx, a_idx] = res.lam
    return value, lam, ties, res


def bellman_apply(spec: ModelSpec, field: DualValueField, gamma, x, s, variant=None,
                  slater_eps=None, tol=1e-11):
    """One operator application at a single node.

    Returns ``(value, lam, actions)``: the optimal value, a minimizing
    multiplier (for sup-inf, the multiplier of the first maximizing action)
    and every action within the tie tolerance of the maximum.
    """
    variant = variant or field.variant
    nodes = _node_batch(spec, [x], [s], np.atleast_1d(gamma)[None, :])
    if not nodes.mask.any():
        from .model import EmptyFeasibleSet

        raise EmptyFeasibleSet(f"no feasible action at (x={x}, s={s})")
    value, lam, ties, _ = _solve_nodes(spec, field, nodes, variant, slater_eps, tol)
    actions = np.flatnonzero(ties[0])
    lam_out = lam[0] if variant == "infsup" else lam[0, actions[0]]
    return float(value[0]), np.asarray(lam_out), actions


def _grid_nodes(spec, field):
    G = int(np.prod(field.shape))
    X, S = spec.n_states, spec.n_shocks
    xx, ss, gg = np.meshgrid(np.arange(X), np.arange(S), np.arange(G), indexing="ij")
    xx, ss, gg = xx.ravel(), ss.ravel(), gg.ravel()
    live = solver_action_mask(spec).any(axis=1)[xx, ss]
    xx, ss, gg = xx[live], ss[live], gg[live]
    return _node_batch(spec, xx, ss, field.nodes()[gg], flat=gg)


def bellman_sweep(spec, field, variant=None, slater_eps=None, tol=1e-11, nodes=None,
                  warm=None):
    """Apply the operator at every live grid node; returns ``(new_field, lam, ties)``."""
    variant = variant or field.variant
    nodes = _grid_nodes(spec, field) if nodes is None else nodes
    value, lam, ties, _ = _solve_nodes(spec, field, nodes, variant, slater_eps, tol, warm)
    flat = field.flat_values.copy()
    flat[nodes.x, nodes.s, nodes.flat] = value
    new = replace(field, values=flat.reshape(field.values.shape), variant=variant)
    return new, lam, ties


def m_norm(values, grids) -> float:
    """Weighted sup-norm ``sum_s 2^-s sum_x 2^-x sum_k 2^-k sup_{B(k)} |F|``.

    States and shocks are enumerated from 1 in file order; boxes beyond the
    grid reuse the sup over the whole grid.
    """
    vals = np.abs(np.asarray(values, dtype=float))
    X, S = vals.shape[:2]
    mesh = np.meshgrid(*grids, indexing="ij")
    linf = np.max(np.stack(mesh), axis=0) if mesh else np.zeros(())
    K = max(1, int(math.ceil(max(g[-1] for g in grids))))
    flat = vals.reshape(X, S, -1)
    linf = linf.ravel()
    per_node = np.zeros((X, S))
    for k in range(1, K + 1):
        inside = linf <= k
        per_node += 2.0 ** -k * flat[:, :, inside].max(axis=2)
    per_node += 2.0 ** -K * flat.max(axis=2)  # sum_{k > K} 2^-k * sup
    wx = 2.0 ** -np.arange(1, X + 1)
    ws = 2.0 ** -np.arange(1, S + 1)
    return float(ws @ (wx @ per_node))


@dataclass
class IterationReport:
    norms: list = dc_field(default_factory=list)
    sup_norms: list = dc_field(default_factory=list)
    monotonicity_violations: list = dc_field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    monotone: bool = True
    slack: float = 0.0
    lam: np.ndarray | None = None
    ties: np.ndarray | None = None
    skipped_nodes: int = 0

    def rows(self):
        return [(k + 1, n, v) for k, (n, v) in
                enumerate(zip(self.norms, self.monotonicity_violations))]


def value_iterate(spec: ModelSpec, variant="infsup", gamma_grid=None, tol=1e-8,
                  max_iter=500, slater_eps=None, gamma_max=None, grid_n=128,
                  inner_tol=1e-11, mono_rtol=1e-8):
    """Iterate the operator from the affine majorant until the weighted norm
    of successive differences drops below ``tol``.

    ``gamma_grid`` may be one array (reused for every constraint) or one array
    per constraint.  Returns ``(field, report)``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    I = spec.n_constraints
    if gamma_grid is None:
        gm = default_gamma_max(spec, slater_eps) if gamma_max is None else gamma_max
        grids = (make_gamma_grid(gm, grid_n),) * I
    elif np.ndim(gamma_grid[0]) == 0:
        grids = (np.asarray(gamma_grid, dtype=float),) * I
    else:
        grids = tuple(np.asarray(g, dtype=float) for g in gamma_grid)

    field = init_affine_majorant(spec, grids, variant)
    nodes = _grid_nodes(spec, field)
    report = IterationReport()
    report.skipped_nodes = spec.n_states * spec.n_shocks * int(np.prod(field.shape)) \
        - nodes.x.size
    warm = None
    for it in range(1, max_iter + 1):
        new, lam, ties = bellman_sweep(spec, field, variant, slater_eps, inner_tol,
                                       nodes=nodes, warm=warm)
        if I > 1:
            warm = lam
        diff = new.values - field.values
        slack = 2.0 * mono_rtol * (1.0 + np.abs(field.values))
        viol = float(np.max(diff - slack, initial=-np.inf))
        report.norms.append(m_norm(diff, grids))
        report.sup_norms.append(float(np.max(np.abs(diff))))
        report.monotonicity_violations.append(max(0.0, float(np.max(diff))))
        if viol > 0:
            report.monotone = False
            log.warning("iteration %d increased the field by %.3g beyond slack", it, viol)
        field = new
        report.iterations = it
        if report.norms[-1] < tol:
            report.converged = True
            break
    report.lam, report.ties = lam, ties
    report.slack = 2.0 * mono_rtol
    if not report.converged:
        log.warning("value iteration stopped after %d sweeps (norm %.3g)", max_iter,
                    report.norms[-1])
    return field, report


def fe_residual(spec, field, slater_eps=None, tol=1e-11) -> float:
    """Sup over live grid nodes of ``|B(F) - F|``."""
    new, _, _ = bellman_sweep(spec, field, field.variant, slater_eps, tol)
    return float(np.max(np.abs(new.values - field.values)))


def check_invariants(field: DualValueField, spec: ModelSpec | None = None,
                     payoffs=(), tol=1e-7) -> dict:
    """Membership checks for the candidate space, at the grid nodes.

    Returns the worst violation of each property (``<= 0`` means satisfied):
    convexity along each axis, the Lipschitz bound along axis edges, the
    affine majorant ``(1 + sum gamma) L`` and the minorants ``v0 + gamma . v``
    from ``payoffs`` (an iterable of ``(v0, v)`` with ``v0`` of shape ``(X, S)``
    and ``v`` of shape ``(I, X, S)``).
    """
    V = field.values
    L = field.lipschitz
    out = {}
    conv = -np.inf
    lip = -np.inf
    for ax, g in enumerate(field.grids):
        axis = 2 + ax
        v = np.moveaxis(V, axis, -1)
        dv = np.diff(v, axis=-1)
        h = np.diff(g)
        lip = max(lip, float(np.max(np.abs(dv) - L * h)))
        if len(g) >= 3:
            left, mid, right = v[..., :-2], v[..., 1:-1], v[..., 2:]
            hl, hr = h[:-1], h[1:]
            chord = (hr * left + hl * right) / (hl + hr)
            scale = 1.0 + np.abs(mid)
            conv = max(conv, float(np.max((mid - chord) / scale)))
    out["convexity"] = conv - tol
    out["lipschitz"] = lip - tol
    nodes = field.nodes()
    majorant = (1.0 + nodes.sum(axis=1)) * L
    flat = field.flat_values
    out["upper_bound"] = float(np.max(flat - majorant)) - tol
    lower = -np.inf
    for v0, v in payoffs:
        v0 = np.asarray(v0)
        v = np.asarray(v)
        minorant = v0[:, :, None] + np.einsum("ixs,gi->xsg", v, nodes)
        lower = max(lower, float(np.max(minorant - flat)))
    out["lower_bound"] = lower - tol if payoffs else -np.inf
    return out
