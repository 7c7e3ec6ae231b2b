"""Closed-form values of the two principal-agent examples and brute-force oracles.

Nothing here calls the dual-value solver: these functions are the references
the solver is tested against.

In both examples the principal earns ``l - c`` per period and the agent's
period utility is ``c**sigma - l**sigma`` with ``l in [0, 1]`` and ``c >= 0``;
the agent's discounted utility must be nonnegative at date zero.  Example 1
uses ``sigma = 1/2`` with ``beta < 1/2``; Example 2 ties ``beta`` to ``sigma``
through ``1 - beta/2 = sigma**(sigma/(1-sigma))``.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog

from .model import ModelSpec, lipschitz_bound

__all__ = [
    "example1_W",
    "example1_values",
    "example2_beta",
    "example2_W",
    "example2_solve",
    "example2_deterministic_scan",
    "build_example_model",
    "example_c_grid",
    "example_gamma_grid",
    "random_tiny_model",
    "brute_force_lottery_value",
    "InfeasibleLottery",
]


class InfeasibleLottery(ValueError):
    pass


# -- Example 1 ---------------------------------------------------------------


def example1_W(gamma, beta):
    """Value of the unconstrained continuation with utility weight ``gamma``."""
    gamma = np.asarray(gamma, dtype=float)
    low = (1.0 - gamma + gamma ** 2 / 4.0) / (1.0 - beta)
    high = gamma ** 2 / (4.0 * (1.0 - beta))
    out = np.where(gamma <= 1.0, low, high)
    return float(out) if out.ndim == 0 else out


def example1_values(beta):
    """Lottery-free value ``V0``, ex-post lottery value ``V1`` and ex-ante ``V2``."""
    if not 0.0 < beta < 0.5:
        raise ValueError(f"example 1 needs beta in (0, 1/2), got {beta}")
    return {"V0": beta, "V1": beta, "V2": 0.25 / (1.0 - beta)}


# -- Example 2 ---------------------------------------------------------------


def example2_beta(sigma):
    """The discount factor solving ``1 - beta/2 = sigma**(sigma/(1-sigma))``."""
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"sigma must lie in (0, 1), got {sigma}")
    beta = 2.0 * (1.0 - sigma ** (sigma / (1.0 - sigma)))
    if not 0.0 < beta < 0.5:
        raise ValueError(f"no beta < 1/2 matches sigma={sigma} (would need beta={beta:.6g})")
    return beta


def example2_W(gamma, sigma, beta=None):
    beta = example2_beta(sigma) if beta is None else beta
    gamma = np.asarray(gamma, dtype=float)
    k = sigma ** (sigma / (1 - sigma)) - sigma ** (1 / (1 - sigma))
    curve = k * gamma ** (1 / (1 - sigma))
    out = np.where(gamma <= 1.0, curve + 1.0 - gamma, curve) / (1.0 - beta)
    return float(out) if out.ndim == 0 else out


def example2_solve(sigma):
    beta = example2_beta(sigma)
    c_star = sigma ** (1.0 / (1.0 - sigma))
    value = (1.0 - beta / 2.0 - c_star) / (1.0 - beta)
    return {
        "sigma": sigma,
        "beta": beta,
        "V": value,
        "W": lambda g: example2_W(g, sigma, beta),
        "c_star": c_star,
        "saddle": {"c": c_star, "l": 1.0, "gamma": 1.0},
        # labor 1 at date zero, then a fair coin between 0 and 1; constant consumption
        "lottery": {"l0": 1.0, "p_l1": 0.5, "c": c_star},
    }


def _deterministic_payoff(U, sigma, beta):
    """Best principal payoff when the agent's discounted labor is ``U``.

    With binary labor, ``l**sigma == l``, so the constraint reads
    ``sum beta^t c_t**sigma >= U``; constant consumption is cheapest.
    """
    c = ((1.0 - beta) * U) ** (1.0 / sigma)
    return U - c / (1.0 - beta)


def example2_deterministic_scan(sigma, length=12):
    """Upper bound on every lottery-free payoff via all binary labor prefixes.

    Each prefix pins the discounted labor sum to an interval of width
    ``beta**length / (1 - beta)``; the payoff is concave in that sum, so its
    maximum over the interval is exact.  Returns the best bound, the value
    ``V`` and the margin ``V - bound``.
    """
    beta = example2_beta(sigma)
    V = example2_solve(sigma)["V"]
    disc = beta ** np.arange(length)
    tail = beta ** length / (1.0 - beta)
    u_star = (1.0 - beta / 2.0) / (1.0 - beta)
    best, arg = -math.inf, None
    for bits in itertools.product((0, 1), repeat=length):
        lo = float(np.dot(bits, disc))
        U = min(max(u_star, lo), lo + tail)
        val = _deterministic_payoff(U, sigma, beta)
        if val > best:
            best, arg = val, bits
    return {"bound": best, "V": V, "margin": V - best, "best_prefix": arg,
            "tail": tail, "sequences": 2 ** length}


# -- discretized example models ---------------------------------------------


def example_c_grid(sigma, gamma_max=3.2, gamma_step=0.02):
    """Consumption levels maximizing ``gamma * c**sigma - c`` for a ladder of
    weights ``gamma = 0, gamma_step, ..., gamma_max``."""
    gammas = np.round(np.arange(0.0, gamma_max + gamma_step / 2, gamma_step), 12)
    return (sigma * gammas) ** (1.0 / (1.0 - sigma))


def example_gamma_grid(gamma_max=6.0, step=0.05):
    """Uniform weight knots for the example models.  The continuation value
    has a kink at ``gamma = 1``, so the knots must contain it."""
    return np.round(np.arange(0.0, gamma_max + step / 2, step), 12)


def build_example_model(which=1, beta=0.4, sigma=None, c_grid=None, slack=None):
    """Two-state model: state 0 is the contract start where the agent's
    constraint binds; state 1 is every later period, where the threshold is
    slack.  One shock, labor in ``{0, 1}``, consumption on ``c_grid``.
    """
    if which == 1:
        sigma = 0.5 if sigma is None else sigma
        if sigma != 0.5:
            raise ValueError("example 1 fixes sigma = 1/2")
        example1_values(beta)
        required = [0.25, (1.0 - beta) ** 2]
    elif which == 2:
        sigma = 0.1 if sigma is None else sigma
        beta = example2_beta(sigma)
        required = [sigma ** (1.0 / (1.0 - sigma))]
    else:
        raise ValueError(f"unknown example {which!r}")
    c = example_c_grid(sigma) if c_grid is None else np.asarray(c_grid, dtype=float)
    for r in required:
        if not np.any(np.isclose(c, r, rtol=0, atol=1e-12)):
            raise ValueError(f"consumption grid must contain {r!r}")
    c = np.unique(c)
    labor = np.array([0.0, 1.0])
    cc, ll = np.meshgrid(c, labor, indexing="ij")
    cc, ll = cc.ravel(), ll.ravel()  # action k = (c index, l index)
    reward = ll - cc
    util = cc ** sigma - ll ** sigma
    A = reward.size
    r = np.broadcast_to(reward[None, :, None], (2, A, 1))
    g = np.broadcast_to(util[None, :, None], (2, A, 1))
    L = (np.max(np.abs(reward)) + np.max(np.abs(util))) / (1.0 - beta)
    big = 10.0 * L if slack is None else slack
    gbar = np.zeros((2, A, 1))
    gbar[1] = -big
    zeta = np.ones((2, A, 1), dtype=np.int64)
    spec = ModelSpec(transition=[[1.0]], beta=beta, reward=r, constraints=g[None],
                     thresholds=gbar[None], horizons=(math.inf,), next_state=zeta, x0=0,
                     names={"actions": [(float(a), float(b)) for a, b in zip(cc, ll)]})
    assert abs(lipschitz_bound(spec) - L) < 1e-12
    return spec


def action_labels(spec):
    return spec.names.get("actions")


# -- brute-force lottery LP --------------------------------------------------


def brute_force_lottery_value(spec: ModelSpec, T=4, s0=0, x0=None, ex_post=False,
                              max_vars=200_000):
    """Optimal value of the statewise-lottery problem on a truncated event tree.

    Decision variables are realization weights ``q(h, a)`` over histories
    ``h`` of periods ``0..T`` (chance probabilities factored out), so every
    constraint is linear.  Two-period constraints are imposed at every
    history of periods ``0..T-1``; infinite-horizon constraints are imposed
    at the same histories on the truncated sums, relaxed by the largest
    possible tail.  The objective drops rewards after ``T``.

    ``ex_post`` imposes each date's constraint separately for every action
    drawn at that date instead of on average over the date's lottery.
    Raises :class:`InfeasibleLottery` when the LP has no solution.
    """
    X, A, S = spec.reward.shape
    x0 = spec.x0 if x0 is None else x0
    beta = spec.beta
    P = spec.transition

    # enumerate histories breadth first: (t, x, s, chance_prob, parent_var)
    nodes = [(0, x0, s0, 1.0, -1)]
    node_vars = []
    t_nodes = [[0]]
    n_vars = 0
    for t in range(T + 1):
        next_level = []
        for ni in t_nodes[t]:
            tt, x, s, prob, _ = nodes[ni]
            node_vars.append(None)
            node_vars[ni] = list(range(n_vars, n_vars + A))
            n_vars += A
            if n_vars > max_vars:
                raise ValueError(f"instance too large for the brute-force oracle "
                                 f"(> {max_vars} variables)")
            if t == T:
                continue
            for a in range(A):
                xn = int(spec.next_state[x, a, s])
                for sn in range(S):
                    nodes.append((t + 1, xn, sn, prob * P[s, sn], node_vars[ni][a]))
                    next_level.append(len(nodes) - 1)
        if t < T:
            t_nodes.append(next_level)

    # children of each (node, action) for constraint bookkeeping
    children = {}
    for ni, (t, x, s, prob, pv) in enumerate(nodes):
        if pv >= 0:
            children.setdefault(pv, []).append(ni)

    cost = np.zeros(n_vars)
    lb = np.zeros(n_vars)
    ub = np.ones(n_vars)
    for ni, (t, x, s, prob, _) in enumerate(nodes):
        for a, v in enumerate(node_vars[ni]):
            cost[v] = -(beta ** t) * prob * spec.reward[x, a, s]
            if not spec.feasible[x, a, s]:
                ub[v] = 0.0

    # flow: root actions sum to 1; child actions sum to the parent weight
    eq_rows, eq_b = [], []
    row = np.zeros(n_vars)
    row[node_vars[0]] = 1.0
    eq_rows.append(row)
    eq_b.append(1.0)
    for ni, (t, x, s, prob, pv) in enumerate(nodes):
        if pv < 0:
            continue
        row = np.zeros(n_vars)
        row[node_vars[ni]] = 1.0
        row[pv] = -1.0
        eq_rows.append(row)
        eq_b.append(0.0)

    gmax = [float(np.max(np.abs(gi))) for gi in spec.constraints]

    def subtree_terms(ni, i, depth, weight, row, horizon):
        """Add ``weight * beta^depth * (pi-relative prob) * g`` over descendants."""
        t, x, s, _, _ = nodes[ni]
        for a, v in enumerate(node_vars[ni]):
            row[v] += weight * spec.constraints[i, x, a, s]
            if depth + 1 > horizon or t == T:
                continue
            for ch in children.get(v, ()):
                _, _, sn, _, _ = nodes[ch]
                subtree_terms(ch, i, depth + 1, weight * beta * P[s, sn], row, horizon)

    ub_rows, ub_b = [], []
    for ni, (t, x, s, prob, _) in enumerate(nodes):
        if t >= T:
            continue
        for i, hz in enumerate(spec.horizons):
            horizon = 1 if hz == 1 else T
            tail = 0.0 if hz == 1 else beta ** (T - t + 1) * gmax[i] / (1.0 - beta)
            groups = [[a] for a in range(A)] if ex_post else [list(range(A))]
            for acts in groups:
                row = np.zeros(n_vars)
                for a in acts:
                    v = node_vars[ni][a]
                    row[v] += spec.constraints[i, x, a, s] - spec.thresholds[i, x, a, s]
                    for ch in children.get(v, ()):
                        _, _, sn, _, _ = nodes[ch]
                        subtree_terms(ch, i, 1, beta * P[s, sn], row, horizon)
                # row . q >= -tail * (mass of the conditioning event)
                mass = np.zeros(n_vars)
                mass[[node_vars[ni][a] for a in acts]] = 1.0
                ub_rows.append(-(row + tail * mass))
                ub_b.append(0.0)

    res = linprog(cost, A_ub=np.array(ub_rows) if ub_rows else None,
                  b_ub=np.array(ub_b) if ub_b else None,
                  A_eq=np.array(eq_rows), b_eq=np.array(eq_b),
                  bounds=list(zip(lb, ub)), method="highs")
    if res.status == 2:
        raise InfeasibleLottery("constraints cannot be met even with lotteries")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return float(-res.fun)


def truncation_bound(spec: ModelSpec, T):
    """Reward mass beyond period ``T`` plus the matching slack, ``beta^T L``."""
    return spec.beta ** T * lipschitz_bound(spec)


def random_tiny_model(seed, beta=0.5, n_actions=2, n_shocks=2, horizon=1, slack=0.05):
    """One-state model with random rewards, constraint values and shock chain.

    The threshold sits ``slack`` below what always taking the constraint's
    best action guarantees over two periods, so the instance is feasible.
    """
    rng = np.random.default_rng(seed)
    A, S = n_actions, n_shocks
    r = rng.uniform(-1.0, 1.0, (1, A, S))
    g = rng.uniform(-1.0, 1.0, (1, 1, A, S))
    P = rng.dirichlet(np.ones(S), S)
    worst_best = g[0, 0].max(axis=0).min()
    span = 1.0 + beta if horizon == 1 else 1.0 / (1.0 - beta)
    gbar = np.full((1, 1, A, S), worst_best * span - slack)
    return ModelSpec(transition=P, beta=beta, reward=r, constraints=g, thresholds=gbar,
                     horizons=(horizon,), next_state=np.zeros((1, A, S), dtype=np.int64), x0=0)
