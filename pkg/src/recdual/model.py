"""Problem instances: shocks, states, actions and the reward/constraint tables.

Tables are indexed ``[x, a, s]`` (constraint tables carry a leading ``i``).
A horizon of ``1`` means the constraint spans the current and the next
period only; ``inf`` means the whole discounted future.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelSpec",
    "validate",
    "lipschitz_bound",
    "feasible_actions",
    "viable_mask",
    "reachable_nodes",
    "policy_payoff",
    "EmptyFeasibleSet",
    "solver_action_mask",
]

INF = math.inf


class EmptyFeasibleSet(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ModelSpec:
    transition: np.ndarray  # (S, S)
    beta: float
    reward: np.ndarray  # (X, A, S)
    constraints: np.ndarray  # (I, X, A, S)
    thresholds: np.ndarray  # (I, X, A, S)
    horizons: tuple = ()
    feasible: np.ndarray | None = None  # (X, A, S) bool
    next_state: np.ndarray | None = None  # (X, A, S) int
    x0: int = 0
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "transition", np.asarray(self.transition, dtype=float))
        set_(self, "reward", np.asarray(self.reward, dtype=float))
        g = np.asarray(self.constraints, dtype=float)
        if g.ndim == 3:
            g = g[None]
        set_(self, "constraints", g)
        gbar = np.broadcast_to(np.asarray(self.thresholds, dtype=float), g.shape).copy()
        set_(self, "thresholds", gbar)
        shape = self.reward.shape
        if self.feasible is None:
            set_(self, "feasible", np.ones(shape, dtype=bool))
        else:
            set_(self, "feasible", np.asarray(self.feasible, dtype=bool))
        if self.next_state is None:
            X = shape[0]
            zeta = np.broadcast_to(np.arange(X)[:, None, None], shape).copy()
            set_(self, "next_state", zeta)
        else:
            set_(self, "next_state", np.asarray(self.next_state, dtype=np.int64))
        hz = tuple(self.horizons) if len(self.horizons) else (INF,) * g.shape[0]
        set_(self, "horizons", tuple(INF if h == INF else int(h) for h in hz))
        set_(self, "beta", float(self.beta))
        for arr in (self.transition, self.reward, self.constraints, self.thresholds,
                    self.feasible, self.next_state):
            arr.setflags(write=False)

    @property
    def n_states(self):
        return self.reward.shape[0]

    @property
    def n_actions(self):
        return self.reward.shape[1]

    @property
    def n_shocks(self):
        return self.reward.shape[2]

    @property
    def n_constraints(self):
        return self.constraints.shape[0]

    @property
    def reset(self) -> np.ndarray:
        """Boolean per constraint: True when the next multiplier restarts at lambda."""
        return np.array([h == 1 for h in self.horizons], dtype=bool)

    def __eq__(self, other):
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return (
            self.beta == other.beta
            and self.horizons == other.horizons
            and self.x0 == other.x0
            and all(
                a.shape == b.shape and np.array_equal(a, b)
                for a, b in zip(self._tables(), other._tables())
            )
        )

    def _tables(self):
        return (self.transition, self.reward, self.constraints, self.thresholds,
                self.feasible, self.next_state)


def lipschitz_bound(spec: ModelSpec) -> float:
    """(max|r| + sum_i max|g_i|) / (1 - beta)."""
    r = float(np.max(np.abs(spec.reward)))
    g = sum(float(np.max(np.abs(gi))) for gi in spec.constraints)
    return (r + g) / (1.0 - spec.beta)


def viable_mask(spec: ModelSpec) -> np.ndarray:
    """Nodes ``(x, s)`` from which a feasible action sequence exists forever.

    Greatest fixed point: a node survives while it keeps an action whose
    successor state is viable under every next shock.
    """
    X, A, S = spec.reward.shape
    alive = np.ones((X, S), dtype=bool)
    while True:
        succ_ok = alive[spec.next_state].all(axis=-1)  # (X, A, S) -> all s'
        # alive[zeta] has shape (X, A, S, S'); every s' must be alive
        ok = (spec.feasible & succ_ok).any(axis=1)
        new = alive & ok
        if np.array_equal(new, alive):
            return alive
        alive = new


def reachable_nodes(spec: ModelSpec, x0: int | None = None, actions_mask=None) -> np.ndarray:
    """BFS over ``(x, s)`` from ``(x0, s)`` for every initial shock."""
    X, A, S = spec.reward.shape
    x0 = spec.x0 if x0 is None else x0
    mask = spec.feasible if actions_mask is None else actions_mask
    seen = np.zeros((X, S), dtype=bool)
    queue = deque((x0, s) for s in range(S))
    for x, s in queue:
        seen[x, s] = True
    while queue:
        x, s = queue.popleft()
        for a in np.flatnonzero(mask[x, :, s]):
            xn = int(spec.next_state[x, a, s])
            for sn in range(S):
                if not seen[xn, sn]:
                    seen[xn, sn] = True
                    queue.append((xn, sn))
    return seen


def solver_action_mask(spec: ModelSpec) -> np.ndarray:
    """Feasible actions whose successor stays viable; used by every solver."""
    alive = viable_mask(spec)
    return spec.feasible & alive[spec.next_state].all(axis=-1) & alive[:, None, :]


def feasible_actions(spec: ModelSpec, x: int, s: int) -> np.ndarray:
    acts = np.flatnonzero(spec.feasible[x, :, s])
    if acts.size == 0:
        raise EmptyFeasibleSet(f"no feasible action at (x={x}, s={s})")
    return acts


def validate(spec: ModelSpec) -> list[str]:
    out = []
    P = spec.transition
    S = P.shape[0] if P.ndim == 2 else -1
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        return [f"transition: expected square matrix, got shape {P.shape}"]
    if spec.reward.ndim != 3:
        return [f"reward: expected (X, A, S) table, got shape {spec.reward.shape}"]
    X, A, S_r = spec.reward.shape
    if S_r != S:
        out.append(f"reward: shock dimension {S_r} != transition size {S}")
    for name, arr in (("constraints", spec.constraints[0] if spec.n_constraints else None),
                      ("feasible", spec.feasible), ("next_state", spec.next_state)):
        if arr is not None and arr.shape != spec.reward.shape:
            out.append(f"{name}: shape {arr.shape} != reward shape {spec.reward.shape}")
    if spec.thresholds.shape != spec.constraints.shape:
        out.append(f"thresholds: shape {spec.thresholds.shape} != constraints shape "
                   f"{spec.constraints.shape}")
    if len(spec.horizons) != spec.n_constraints:
        out.append(f"horizons: {len(spec.horizons)} entries for {spec.n_constraints} constraints")
    for h in spec.horizons:
        if h not in (1, INF):
            out.append(f"horizons: unsupported value {h} (only 1 or inf)")
    if out:
        return out

    for s in range(S):
        tot = P[s].sum()
        if abs(tot - 1.0) > 1e-12:
            out.append(f"transition row {s}: sums to {tot!r}, not 1")
        if np.any(P[s] <= 0):
            out.append(f"transition row {s}: entries must be strictly positive")
    if not 0.0 < spec.beta < 1.0:
        out.append(f"beta: {spec.beta} not in (0, 1)")
    for name, arr in (("reward", spec.reward), ("constraints", spec.constraints),
                      ("thresholds", spec.thresholds)):
        bad = ~np.isfinite(arr)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            out.append(f"{name}: non-finite entry at {idx}")
    zeta = spec.next_state
    if np.any((zeta < 0) | (zeta >= X)):
        idx = tuple(int(i) for i in np.argwhere((zeta < 0) | (zeta >= X))[0])
        out.append(f"next_state: index out of range at {idx}")
        return out
    if not 0 <= spec.x0 < X:
        out.append(f"x0: {spec.x0} out of range")
        return out

    alive = viable_mask(spec)
    reach = reachable_nodes(spec)
    for x, s in np.argwhere(reach & ~alive):
        out.append(f"dead end: reachable node (x={x}, s={s}) has no feasible "
                   "continuation")
    return out


def policy_payoff(spec: ModelSpec, policy: np.ndarray):
    """Discounted payoffs of a stationary deterministic policy ``a[x, s]``.

    Returns ``(v0, v, feasible)`` where ``v0`` is ``(X, S)``, ``v`` is
    ``(I, X, S)`` and ``feasible`` tells whether every constraint holds at
    every node reachable from ``spec.x0`` under the policy.  For a one-period
    constraint ``v[i]`` is the first-period value of ``g_i`` only, matching the
    objective of the finite-horizon variant.
    """
    X, A, S = spec.reward.shape
    policy = np.asarray(policy, dtype=np.int64)
    xs, ss = np.meshgrid(np.arange(X), np.arange(S), indexing="ij")
    acts = policy[xs, ss]
    if not spec.feasible[xs, acts, ss].all():
        return None, None, False
    nxt = spec.next_state[xs, acts, ss]
    n = X * S
    T = np.zeros((n, n))
    rows = (xs * S + ss).ravel()
    for sp in range(S):
        cols = (nxt * S + sp).ravel()
        np.add.at(T, (rows, cols), spec.transition[ss, sp].ravel())
    M = np.eye(n) - spec.beta * T

    def solve(tab):
        return np.linalg.solve(M, tab[xs, acts, ss].ravel()).reshape(X, S)

    v0 = solve(spec.reward)
    v = np.empty((spec.n_constraints, X, S))
    ok = True
    mask = np.zeros((X, A, S), dtype=bool)
    mask[xs, acts, ss] = True
    reach = reachable_nodes(spec, actions_mask=mask)
    for i, h in enumerate(spec.horizons):
        gi = spec.constraints[i][xs, acts, ss]
        gb = spec.thresholds[i][xs, acts, ss]
        if h == INF:
            v[i] = solve(spec.constraints[i])
            lhs = v[i]
        else:
            v[i] = gi
            nxt_g = (T @ gi.ravel()).reshape(X, S)
            lhs = gi + spec.beta * nxt_g
        if np.any(lhs[reach] < gb[reach] - 1e-12):
            ok = False
    return v0, v, ok
