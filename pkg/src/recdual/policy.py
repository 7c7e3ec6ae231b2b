"""Optimal lottery policies recovered from a solved dual value field.

At a node ``(x, s)`` with promised constraint values ``phi`` the stage
problem minimizes, over multipliers ``lam`` (constraint) and ``mu``
(promise), the convex function::

    F(mu, lam) = max_a r + lam.(g - gbar) + mu.(g - phi) + beta E D(lam + mu, x', s')

by projected subgradient steps.  The step-weighted frequency of the chosen
actions is the stage lottery; the step-weighted average of the continuation
slopes seen with each action is that action's promise for the next period.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .dual_value import DualValueField
from .inner_solver import TIE_RTOL
from .model import ModelSpec, lipschitz_bound, solver_action_mask

__all__ = [
    "StageLottery",
    "StageCheck",
    "recover_stage",
    "check_stage",
    "initial_promise",
    "simulate",
    "SimulationResult",
    "harmonic_steps",
]


def harmonic_steps(sigma0=1.0):
    """Step sizes ``sigma0 / k`` for ``k = 1, 2, ...``."""
    return lambda k: sigma0 / k


@dataclass
class StageLottery:
    x: int
    s: int
    phi: np.ndarray  # (I,) incoming promise
    support: np.ndarray  # (n,) action indices
    probs: np.ndarray  # (n,)
    promised: np.ndarray  # (n, S, I) next-period promise per (action, next shock)
    lam: np.ndarray  # (I,), or (A, I) per action for the sup-inf variant
    mu: np.ndarray  # (I,)
    variant: str = "infsup"
    iterations: int = 0
    drift: float = 0.0  # largest distance of late iterates from the final one
    box_exceeded: bool = False
    tie_set: np.ndarray | None = None  # maximizers of F at the starting multipliers

    def lam_for(self, a):
        return self.lam[a] if self.lam.ndim == 2 else self.lam

    def promise_for(self, a, s_next):
        j = int(np.flatnonzero(self.support == a)[0])
        return self.promised[j, s_next]


@dataclass
class StageCheck:
    """Violations of the six convergence statements; all should be small."""

    multiplier_drift: float
    subgradient_distance: float
    promise_shortfall: float
    constraint_shortfall: float
    promise_slackness: float
    constraint_slackness: float
    outside_tie_set: float = 0.0  # lottery mass on non-maximizers, reported only
    detail: dict = dc_field(default_factory=dict)

    def as_dict(self):
        return {
            "multiplier_drift": self.multiplier_drift,
            "subgradient_distance": self.subgradient_distance,
            "promise_shortfall": self.promise_shortfall,
            "constraint_shortfall": self.constraint_shortfall,
            "promise_slackness": self.promise_slackness,
            "constraint_slackness": self.constraint_slackness,
        }

    def worst(self):
        return max(self.as_dict().values())


def initial_promise(spec: ModelSpec, field=None, x0=None, s0=None):
    """A promise no lottery can fail to meet: ``min g / (1 - beta) - 1``."""
    gmin = spec.constraints.reshape(spec.n_constraints, -1).min(axis=1)
    return gmin / (1.0 - spec.beta) - 1.0


def _fd_step(point):
    return 1e-4 * (1.0 + float(np.max(np.abs(point))))


class _Stage:
    """Per-node data reused by every subgradient iteration."""

    def __init__(self, spec, field, x, s):
        if any(h != math.inf for h in spec.horizons):
            raise NotImplementedError("policy recovery supports infinite-horizon "
                                      "constraints only")
        self.spec, self.field = spec, field
        self.acts = np.flatnonzero(solver_action_mask(spec)[x, :, s])
        if self.acts.size == 0:
            from .model import EmptyFeasibleSet

            raise EmptyFeasibleSet(f"no feasible action at (x={x}, s={s})")
        self.r = spec.reward[x, self.acts, s]
        self.g = spec.constraints[:, x, self.acts, s].T  # (n, I)
        self.gbar = spec.thresholds[:, x, self.acts, s].T
        self.nxt = spec.next_state[x, self.acts, s]
        self.pi = spec.transition[s]
        self.beta = spec.beta
        self.I = spec.n_constraints
        self.s = s

    def expected(self, point):
        """``E_s' D(point, x', s')`` for every next state, and the raw table."""
        tab = self.field.values_all(point)  # (X, S)
        return tab @ self.pi, tab

    def slopes(self, point, x_next):
        """Forward-difference slopes of ``D(., x_next, s')`` for every ``s'``, ``(S, I)``."""
        h = _fd_step(point)
        base = self.field.values_all(point)[x_next]
        out = np.empty((self.pi.size, self.I))
        for i in range(self.I):
            e = point.copy()
            e[i] += h
            out[:, i] = (self.field.values_all(e)[x_next] - base) / h
        return out

    def brackets(self, lam, mu, phi):
        if lam.ndim == 1:
            ed, _ = self.expected(lam + mu)
            return (self.r + (self.g - self.gbar) @ lam + (self.g - phi) @ mu
                    + self.beta * ed[self.nxt])
        # one multiplier per action
        pts = lam + mu
        idx, w, dist = self.field.interp_weights(pts)
        V = self.field.flat_values
        S = self.pi.size
        vals = V[self.nxt[:, None, None], np.arange(S)[None, :, None], idx[:, None, :]]
        ed = np.einsum("nsc,nc,s->n", vals, w, self.pi) + self.field.lipschitz * dist
        return (self.r + np.einsum("ni,ni->n", self.g - self.gbar, lam)
                + (self.g - phi) @ mu + self.beta * ed)


def _golden_min(fun, hi, tol=1e-10, max_iter=200):
    """Scalar golden-section minimization on ``[0, hi]``; keeps the endpoints as candidates."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = 0.0, hi
    x1, x2 = b - invphi * (b - a), a + invphi * (b - a)
    f1, f2 = fun(x1), fun(x2)
    for _ in range(max_iter):
        if b - a <= tol * (1.0 + hi):
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = fun(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = fun(x2)
    cands = [0.5 * (a + b), 0.0, hi]
    vals = [fun(c) for c in cands]
    j = int(np.argmin(vals))
    return cands[j], vals[j]


def _start_multipliers(spec, field, st, phi, variant, box):
    """Minimizer of ``F`` over ``(lam, mu)`` for one constraint, else the
    node's Bellman minimizer with ``mu = 0``.

    With one constraint the partial minimum over ``lam`` is convex in ``mu``,
    so a golden search over ``mu`` wrapping a batched search over ``lam``
    is exact up to tolerance.
    """
    from . import inner_solver
    from .dual_value import _expected_continuation
    from .inner_solver import InnerProblem

    n = st.acts.size
    slope = st.g - st.gbar  # (n, I)
    nxt = st.nxt
    shock = np.array([st.s])

    def inner(mu):
        base = st.r + (st.g - phi) @ mu
        if variant == "infsup":
            cont = lambda lam: _expected_continuation(  # noqa: E731
                field, spec, lam + mu, nxt[None, :], shock)
            prob = InnerProblem(base[None], slope[None], cont, np.array([box]))
        else:
            cont = lambda lam: _expected_continuation(  # noqa: E731
                field, spec, lam + mu, nxt[:, None], np.full(n, st.s))
            prob = InnerProblem(base[:, None], slope[:, None, :], cont, np.full(n, box))
        return inner_solver.minimize(prob, tol=1e-11)

    if st.I == 1:
        def outer(m):
            res = inner(np.array([m]))
            return float(res.value.max())

        m, _ = _golden_min(outer, box)
        mu = np.array([m])
    else:
        mu = np.zeros(st.I)
    res = inner(mu)
    lam = res.lam[0].copy() if variant == "infsup" else res.lam.copy()
    return lam, mu


def recover_stage(spec: ModelSpec, field: DualValueField, phi, x, s, n_iter=10_000,
                  sigma0=1.0, steps=None, lam0=None, mu0=None, variant=None,
                  box=None, tail_fraction=0.1, tie_break="min_norm") -> StageLottery:
    """Run ``n_iter`` projected subgradient steps on ``F(mu, lam)`` at ``(x, s)``.

    ``steps`` maps ``k = 1..n_iter`` to a step size (default ``sigma0 / k``).
    ``lam0``/``mu0`` default to the node's Bellman minimizer and zero.  For the
    sup-inf variant every action carries its own ``lam`` and only the chosen
    action's multiplier moves.  ``box`` caps the multipliers for the
    divergence flag (default: the field's grid bound).  ``tie_break`` picks
    among maximizers within the tie tolerance: ``"first"`` takes the lowest
    action index, ``"min_norm"`` the one whose step is shortest.
    """
    variant = variant or field.variant
    st = _Stage(spec, field, x, s)
    n, I, S = st.acts.size, st.I, st.pi.size
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (I,)).copy()
    steps = steps or harmonic_steps(sigma0)
    per_action = variant == "supinf"
    box = float(np.max(field.gamma_max)) if box is None else box
    start = None
    if lam0 is None or mu0 is None:
        start = _start_multipliers(spec, field, st, phi, variant, box)
    if lam0 is None:
        lam = start[0]
    else:
        lam = np.array(lam0, dtype=float)
        if per_action and lam.ndim == 2 and lam.shape[0] == spec.n_actions:
            lam = lam[st.acts]
        lam = np.broadcast_to(lam, (n, I) if per_action else (I,)).copy()
    mu = start[1] if mu0 is None else np.broadcast_to(np.asarray(mu0, float), (I,)).copy()
    lam_start, mu_start = lam.copy(), mu.copy()

    weight = np.zeros(n)
    phi_sum = np.zeros((n, S, I))
    tail_start = n_iter - max(1, int(tail_fraction * n_iter))
    tail_pts = []
    exceeded = False
    for k in range(1, n_iter + 1):
        br = st.brackets(lam, mu, phi)
        j = int(np.argmax(br))
        if tie_break == "min_norm":
            cands = np.flatnonzero(br >= br[j] - TIE_RTOL * (1.0 + abs(br[j])))
        else:
            cands = [j]
        best = None
        for c in cands:
            point = (lam[c] if per_action else lam) + mu
            slope = st.slopes(point, st.nxt[c])  # (S, I)
            cont = st.pi @ slope
            step_mu = st.g[c] - phi + st.beta * cont
            step_lam = st.g[c] - st.gbar[c] + st.beta * cont
            norm = float(step_mu @ step_mu + step_lam @ step_lam)
            if best is None or norm < best[0]:
                best = (norm, c, slope, step_mu, step_lam)
        _, j, slope, step_mu, step_lam = best
        sig = steps(k)
        weight[j] += sig
        phi_sum[j] += sig * slope
        mu = np.maximum(mu - sig * step_mu, 0.0)
        if per_action:
            lam[j] = np.maximum(lam[j] - sig * step_lam, 0.0)
        else:
            lam = np.maximum(lam - sig * step_lam, 0.0)
        if np.max(mu) + np.max(lam) > box:
            exceeded = True
        if k > tail_start:
            tail_pts.append(np.concatenate([np.ravel(lam), mu]))

    final = np.concatenate([np.ravel(lam), mu])
    drift = float(np.max(np.abs(np.array(tail_pts) - final))) if tail_pts else 0.0
    used = weight > 0
    probs = weight[used] / weight.sum()
    promised = phi_sum[used] / weight[used][:, None, None]
    br = st.brackets(lam_start, mu_start, phi)
    top = br.max()
    ties = st.acts[br >= top - TIE_RTOL * (1 + abs(top))]
    lam_out = lam.copy()
    if per_action:
        lam_out = np.full((spec.n_actions, I), np.nan)
        lam_out[st.acts] = lam
    return StageLottery(x=x, s=s, phi=phi, support=st.acts[used], probs=probs,
                        promised=promised, lam=lam_out, mu=mu, variant=variant,
                        iterations=n_iter, drift=drift, box_exceeded=exceeded,
                        tie_set=ties)


def _slope_box(field, point, x_next, s_next, h):
    """Interval containing every subgradient at points within ``h`` of ``point``.

    For a convex function, slopes at any ``y`` with ``|y_i - p_i| <= h`` lie
    between the secant on ``[p - 2h, p - h]`` and the one on ``[p + h, p + 2h]``.
    """
    I = point.size
    lo = np.full(I, -np.inf)
    hi = np.empty(I)
    for i in range(I):
        e = np.zeros(I)
        e[i] = h
        v = field.evaluate_many(np.array([point + e, point + 2 * e]), x_next, s_next)
        hi[i] = (v[1] - v[0]) / h
        if point[i] - 2 * h >= 0:
            v = field.evaluate_many(np.array([point - 2 * e, point - e]), x_next, s_next)
            lo[i] = (v[1] - v[0]) / h
        elif point[i] - h > 0:
            v = field.evaluate_many(np.array([np.maximum(point - 2 * e, 0), point - e]),
                                    x_next, s_next)
            lo[i] = (v[1] - v[0]) / (point[i] - h - max(point[i] - 2 * h, 0.0))
    return lo, hi


def check_stage(spec: ModelSpec, field: DualValueField, phi, x, s, lot: StageLottery,
                eps_fd=None) -> StageCheck:
    """Evaluate the six convergence statements for a recovered stage."""
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (spec.n_constraints,))
    beta = spec.beta
    pi = spec.transition[s]
    acts = lot.support
    g = spec.constraints[:, x, acts, s].T  # (n, I)
    gbar = spec.thresholds[:, x, acts, s].T
    delivered = g + beta * np.einsum("t,nti->ni", pi, lot.promised)  # (n, I)
    promise_gap = lot.probs @ delivered - phi
    if lot.variant == "supinf":
        cons_gap_a = delivered - gbar  # every realized action must comply
        cons_short = float(np.max(np.maximum(-cons_gap_a, 0.0)))
        lam_a = np.array([lot.lam_for(a) for a in acts])
        cons_slack = float(np.max(np.abs(np.einsum("ni,ni->n", lam_a, cons_gap_a))))
    else:
        cons_gap = lot.probs @ (delivered - gbar)
        cons_short = float(np.max(np.maximum(-cons_gap, 0.0)))
        cons_slack = float(abs(lot.lam @ cons_gap))
    dist = 0.0
    for j, a in enumerate(acts):
        point = lot.lam_for(a) + lot.mu
        h = max(_fd_step(point) if eps_fd is None else eps_fd, lot.drift)
        xn = int(spec.next_state[x, a, s])
        for sn in range(pi.size):
            lo, hi = _slope_box(field, point, xn, sn, h)
            v = lot.promised[j, sn]
            d = float(np.linalg.norm(np.maximum(lo - v, 0) + np.maximum(v - hi, 0)))
            dist = max(dist, lot.probs[j] * d)
    outside = float(lot.probs[~np.isin(acts, lot.tie_set)].sum()) \
        if lot.tie_set is not None else 0.0
    return StageCheck(
        multiplier_drift=lot.drift,
        subgradient_distance=dist,
        promise_shortfall=float(np.max(np.maximum(-promise_gap, 0.0))),
        constraint_shortfall=cons_short,
        promise_slackness=float(abs(lot.mu @ promise_gap)),
        constraint_slackness=cons_slack,
        outside_tie_set=outside,
        detail={"promise_gap": promise_gap, "delivered": delivered},
    )


# -- chained simulation ------------------------------------------------------


@dataclass
class SimulationResult:
    value: float
    stderr: float
    target: float
    truncation: float
    discounted: np.ndarray  # (n_paths,) objective per path
    rows: dict  # column name -> (n_paths, T) array
    constraint_checks: list
    promise_checks: list
    excluded_histories: list
    stages: int
    worst_stage: dict
    constraint_value: np.ndarray | None = None  # mean discounted g from date zero, (I,)
    constraint_stderr: np.ndarray | None = None

    @property
    def value_error(self):
        return abs(self.value - self.target)

    def within(self, solver_tol=0.0, k=3.0):
        return self.value_error <= self.truncation + k * self.stderr + solver_tol

    def csv_lines(self, spec):
        names = ["path_id", "t", "shock", "action", "reward"]
        I = spec.n_constraints
        names += [f"g_{i}" for i in range(I)] + [f"promise_{i}" for i in range(I)]
        names.append("discounted_objective")
        yield ",".join(names)
        n, T = self.rows["action"].shape
        for p in range(n):
            for t in range(T):
                vals = [str(p), str(t), str(self.rows["shock"][p, t]),
                        str(self.rows["action"][p, t]), repr(float(self.rows["reward"][p, t]))]
                vals += [repr(float(self.rows["g"][p, t, i])) for i in range(I)]
                vals += [repr(float(self.rows["promise"][p, t, i])) for i in range(I)]
                vals.append(repr(float(self.rows["objective"][p, t])))
                yield ",".join(vals)


def _quantize(phi, q):
    return tuple(np.round(np.asarray(phi) / q).astype(np.int64).tolist())


def simulate(spec: ModelSpec, field: DualValueField, x0=None, s0=0, T=40, n_paths=10_000,
             rng_seed=0, n_iter=10_000, sigma0=1.0, phi0=None, quantum=1e-9,
             min_samples=100, check_until=None, cache=None):
    """Draw paths from the chained stage lotteries and compare with the field.

    Every path starts at ``(x0, s0)`` with promise ``phi0`` (default: one no
    lottery can miss, so ``target`` is the field at zero weight).  Paths that
    reach the same node with the same (quantized) promise share one stage
    solve.  ``check_until`` limits the history-conditional checks to dates
    ``t <= check_until`` (default ``T // 2``).
    """
    x0 = spec.x0 if x0 is None else x0
    I, S = spec.n_constraints, spec.n_shocks
    beta = spec.beta
    rng = np.random.default_rng(rng_seed)
    phi0 = initial_promise(spec) if phi0 is None else np.asarray(phi0, float)
    cache = {} if cache is None else cache
    stats = {"stages": 0, "worst": {}}

    def stage(x, s, phi):
        key = (x, s, _quantize(phi, quantum))
        lot = cache.get(key)
        if lot is None:
            lot = recover_stage(spec, field, phi, x, s, n_iter=n_iter, sigma0=sigma0)
            chk = check_stage(spec, field, phi, x, s, lot)
            for k, v in chk.as_dict().items():
                stats["worst"][k] = max(stats["worst"].get(k, 0.0), v)
            cache[key] = lot
            stats["stages"] += 1
        return lot

    n = n_paths
    x = np.full(n, x0, dtype=np.int64)
    s = np.full(n, s0, dtype=np.int64)
    phi = np.tile(phi0, (n, 1))
    acts = np.empty((n, T), dtype=np.int64)
    shocks = np.empty((n, T), dtype=np.int64)
    rew = np.empty((n, T))
    gs = np.empty((n, T, I))
    gbars = np.empty((n, T, I))
    proms = np.empty((n, T, I))
    mus = np.zeros((n, T, I))
    # draws are made in path order from one generator: uniform for the action, then the shock
    u_act = rng.random((T, n))
    u_shock = rng.random((T, n))
    cum_pi = np.cumsum(spec.transition, axis=1)
    for t in range(T):
        shocks[:, t] = s
        proms[:, t] = phi
        q = np.round(phi / quantum).astype(np.int64)
        keys = np.concatenate([x[:, None], s[:, None], q], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        nxt_phi = np.empty_like(phi)
        nxt_s = np.minimum((u_shock[t][:, None] > cum_pi[s]).sum(axis=1), S - 1)
        for u, key in enumerate(uniq):
            rows = np.flatnonzero(inv == u)
            xi, si = int(key[0]), int(key[1])
            lot = stage(xi, si, phi[rows[0]])
            cdf = np.cumsum(lot.probs)
            j = np.minimum(np.searchsorted(cdf, u_act[t, rows] * cdf[-1], side="right"),
                           lot.support.size - 1)
            a = lot.support[j]
            acts[rows, t] = a
            mus[rows, t] = lot.mu
            nxt_phi[rows] = lot.promised[j, nxt_s[rows]]
        a = acts[:, t]
        rew[:, t] = spec.reward[x, a, s]
        gs[:, t] = spec.constraints[:, x, a, s].T
        gbars[:, t] = spec.thresholds[:, x, a, s].T
        x = spec.next_state[x, a, s]
        s = nxt_s
        phi = nxt_phi

    disc = beta ** np.arange(T)
    objective = np.cumsum(rew * disc, axis=1)
    total = objective[:, -1]
    value = float(total.mean())
    stderr = float(total.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    target = float(field.evaluate_many(np.zeros((1, I)), x0, s0)[0])
    L = lipschitz_bound(spec)
    truncation = beta ** T * L

    # discounted constraint values from each date onward
    future = np.zeros((n, T, I))
    acc = np.zeros((n, I))
    for t in range(T - 1, -1, -1):
        acc = gs[:, t] + beta * acc
        future[:, t] = acc
    gmax = np.abs(spec.constraints).reshape(I, -1).max(axis=1)

    check_until = T // 2 if check_until is None else check_until
    cons_checks, prom_checks, small = [], [], {}
    ex_post = field.variant == "supinf"
    hist = np.zeros(n, dtype=np.int64)  # id of (s_0, a_0, ..., s_t) prefix
    for t in range(min(check_until, T - 1) + 1):
        ids = np.stack([hist, shocks[:, t]], axis=1)
        _, hist = np.unique(ids, axis=0, return_inverse=True)
        hist = hist.ravel()
        group = hist
        if ex_post:
            _, group = np.unique(np.stack([hist, acts[:, t]], axis=1), axis=0,
                                 return_inverse=True)
            group = group.ravel()
        tail = beta ** (T - t) * gmax / (1 - beta)
        for gid in np.unique(group):
            rows = np.flatnonzero(group == gid)
            if rows.size < min_samples:
                small[t] = small.get(t, 0) + 1
                continue
            slack = future[rows, t] - gbars[rows, t]
            m = slack.mean(axis=0)
            se = slack.std(axis=0, ddof=1) / math.sqrt(rows.size)
            cons_checks.append({"t": t, "path": int(rows[0]), "n": int(rows.size),
                                "margin": m, "stderr": se, "tail": tail,
                                "ok": bool(np.all(m >= -(3 * se + tail + 1e-9)))})
            # incoming promise: met with equality where its multiplier is active
            hp = np.flatnonzero(hist == hist[rows[0]])
            if ex_post and t > 0 or not ex_post:
                fut = future[hp, t]
                m2 = fut.mean(axis=0) - proms[hp[0], t]
                se2 = fut.std(axis=0, ddof=1) / math.sqrt(hp.size)
                active = mus[hp[0], t] > 1e-6
                tol = np.maximum(3 * se2, 2e-2) + tail
                ok = np.where(active, np.abs(m2) <= tol, m2 >= -tol)
                prom_checks.append({"t": t, "n": int(hp.size), "gap": m2, "stderr": se2,
                                    "active": active, "ok": bool(np.all(ok))})
        hist = np.unique(np.stack([hist, acts[:, t]], axis=1), axis=0,
                         return_inverse=True)[1].ravel()
    excluded = sorted(small.items())  # (date, number of histories below min_samples)

    rows_out = {"action": acts, "shock": shocks, "reward": rew, "g": gs, "promise": proms,
                "objective": objective}
    return SimulationResult(value=value, stderr=stderr, target=target, truncation=truncation,
                            discounted=total, rows=rows_out, constraint_checks=cons_checks,
                            promise_checks=prom_checks, excluded_histories=excluded,
                            stages=stats["stages"], worst_stage=stats["worst"],
                            constraint_value=future[:, 0].mean(axis=0),
                            constraint_stderr=future[:, 0].std(axis=0, ddof=1) / math.sqrt(n))
