"""Two-period Ramsey taxation with log consumption utility and ``sqrt(1 - l)`` leisure.

After eliminating prices and taxes, a plan is described by labor supply
``l0`` at date zero and ``l_s`` in each date-one state.  Debt ``b`` must
equal the state surplus ``f(l_s; g_s)`` in every state, and date-zero
revenue is ``f(l0; g0) + (l0 - g0) * w`` with the bond-price kernel
``w = beta * sum_s p_s * E[h(l_s)]``.  For a given debt each state admits a
high-tax root (low labor) and a low-tax root (high labor); a lottery mixes
the two.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RamseyScenario",
    "h_eval",
    "f_eval",
    "max_debt",
    "labor_roots",
    "welfare",
    "revenue",
    "enumerate_scatter",
    "dominance_check",
    "curves",
    "SCATTER_COLUMNS",
    "CURVE_COLUMNS",
]

SCATTER_COLUMNS = ("b", "ell0", "ell1", "ell2", "pi1", "revenue", "welfare")
CURVE_COLUMNS = ("ell", "f_g0", "f_g065", "welfare_g0")
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class RamseyScenario:
    probs: tuple = (0.9, 0.1)
    g0: float = 0.0
    g: tuple = (0.0, 0.65)
    beta: float = 1.0
    b_init: float = 0.45
    ell_step: float = 1e-3
    pi_step: float = 1e-3
    n_debt: int = 60
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if len(p) != len(self.g):
            raise ValueError("one expenditure level per state")
        if abs(p.sum() - 1.0) > 1e-12 or np.any(p < 0):
            raise ValueError("state probabilities must be nonnegative and sum to 1")
        if not all(0.0 <= gs < 1.0 for gs in (self.g0, *self.g)):
            raise ValueError("expenditures must lie in [0, 1)")

    def ell0_grid(self):
        n = int(round(1.0 / self.ell_step))
        grid = np.arange(1, n) * self.ell_step
        return grid[grid > self.g0]

    def pi_grid(self):
        n = int(round(1.0 / self.pi_step))
        return np.arange(n + 1) * self.pi_step

    def debt_grid(self):
        """Positive debt levels up to the tightest state's capacity, denser near zero."""
        cap = min(max_debt(gs)[0] for gs in self.g)
        return np.geomspace(1e-3 * cap, cap * (1 - 1e-9), self.n_debt)


def h_eval(ell):
    ell = np.asarray(ell, dtype=float)
    if np.any(ell >= 1.0):
        raise ValueError("labor must be below 1")
    out = 1.0 - ell / (2.0 * np.sqrt(1.0 - ell))
    return float(out) if out.ndim == 0 else out


def f_eval(ell, g):
    """Government surplus when expenditure is ``g`` and labor supply is ``ell``."""
    out = (np.asarray(ell, dtype=float) - g) * h_eval(ell)
    return float(out) if np.ndim(out) == 0 else out


def welfare(ell, g):
    ell = np.asarray(ell, dtype=float)
    if np.any(ell <= g):
        raise ValueError("consumption ell - g must be positive")
    out = np.log(ell - g) + np.sqrt(1.0 - ell)
    return float(out) if out.ndim == 0 else out


def _golden_max(fun, a, b, tol=1e-8):
    x1, x2 = b - _INVPHI * (b - a), a + _INVPHI * (b - a)
    f1, f2 = fun(x1), fun(x2)
    while b - a > tol:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INVPHI * (b - a)
            f1 = fun(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INVPHI * (b - a)
            f2 = fun(x2)
    return 0.5 * (a + b)


def max_debt(g, grid=None):
    """Largest surplus ``max_l f(l; g)`` and its labor level.

    The grid maximizer is refined by golden section on its two neighboring cells.
    """
    if not 0.0 <= g < 1.0:
        raise ValueError(f"expenditure {g} leaves no feasible labor range")
    grid = np.linspace(g, 1.0, 10_001)[1:-1] if grid is None else np.asarray(grid, float)
    grid = grid[(grid > g) & (grid < 1.0)]
    if grid.size == 0:
        raise ValueError(f"no grid point in ({g}, 1)")
    vals = f_eval(grid, g)
    k = int(np.argmax(vals))
    if vals[k] <= 0:
        raise ValueError(f"expenditure {g} cannot be financed at any labor level")
    lo = grid[k - 1] if k > 0 else g
    hi = grid[k + 1] if k + 1 < grid.size else 0.5 * (grid[k] + 1.0)
    ell = _golden_max(lambda x: f_eval(x, g), lo, hi, 1e-8)
    return f_eval(ell, g), ell


def _bisect(fun, lo, hi, tol=1e-10):
    flo = fun(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def labor_roots(b, g):
    """The two labor levels with ``f(l; g) = b``: high tax (low labor) first."""
    cap, peak = max_debt(g)
    if b > cap + 1e-12:
        raise ValueError(f"debt {b} exceeds the capacity {cap:.6g} at expenditure {g}")
    if b < 0:
        raise ValueError("debt must be nonnegative")
    if b >= cap:
        return peak, peak
    fun = lambda x: f_eval(x, g) - b  # noqa: E731
    low = g if b == 0 else _bisect(fun, g, peak)
    top = 1.0 - 1e-15
    high = _bisect(fun, peak, top)
    return low, high


def revenue(ell0, g0, kernel):
    """Date-zero revenue ``f(l0; g0) + (l0 - g0) * kernel``."""
    return f_eval(ell0, g0) + (np.asarray(ell0) - g0) * kernel


def _branch_tables(sc: RamseyScenario, b):
    """Per state: (h, welfare) of the high-tax and the low-tax root."""
    out = []
    for gs in sc.g:
        lo, hi = labor_roots(b, gs)
        if lo <= gs:
            lo = None  # zero consumption: infeasible
        out.append((lo, hi))
    return out


def enumerate_scatter(sc: RamseyScenario, branch2="H", lottery=False, pis=None,
                      ell0=None, debts=None):
    """Revenue and welfare of plans on the grids; one row per plan.

    State 2 uses the ``branch2`` root; state 1 mixes its high-tax root with
    probability ``pi1`` and the low-tax root otherwise.  Without ``lottery``
    only ``pi1 in {0, 1}`` is used; with it the ``pis`` weights (default
    ``{0, 0.5, 1}``) are added.  Rows: ``(b, ell0, ell1, ell2, pi1, revenue,
    welfare)`` with ``ell1`` the high-tax state-1 labor.
    """
    if len(sc.g) != 2:
        raise ValueError("the scatter is defined for two date-one states")
    ell0 = np.arange(1, 100) * 0.01 if ell0 is None else np.asarray(ell0, float)
    ell0 = ell0[ell0 > sc.g0]
    debts = sc.debt_grid() if debts is None else np.asarray(debts, float)
    if pis is None:
        pis = (0.0, 0.5, 1.0) if lottery else (0.0, 1.0)
    p1, p2 = sc.probs
    u0 = welfare(ell0, sc.g0)
    rows = []
    for b in debts:
        (l1L, l1H), (l2L, l2H) = _branch_tables(sc, b)
        l2 = l2H if branch2 == "H" else l2L
        if l2 is None:
            continue
        w2 = welfare(l2, sc.g[1])
        for pi in pis:
            if pi > 0 and l1L is None:
                continue
            hL = h_eval(l1L) if l1L is not None else 0.0
            wL = welfare(l1L, sc.g[0]) if l1L is not None else 0.0
            h1 = pi * hL + (1 - pi) * h_eval(l1H)
            w1 = pi * wL + (1 - pi) * welfare(l1H, sc.g[0])
            kernel = sc.beta * (p1 * h1 + p2 * h_eval(l2))
            rev = revenue(ell0, sc.g0, kernel)
            wel = u0 + sc.beta * (p1 * w1 + p2 * w2)
            for e0, r, w in zip(ell0, rev, wel):
                rows.append((float(b), float(e0), float(l1L if l1L is not None else l1H),
                             float(l2), float(pi), float(r), float(w)))
    return rows


def row_revenue(sc: RamseyScenario, row):
    """Recompute a scatter row's revenue from its labor levels and weight."""
    b, e0, l1, l2, pi = row[:5]
    l1H = labor_roots(b, sc.g[0])[1]
    h1 = pi * h_eval(l1) + (1 - pi) * h_eval(l1H)
    kernel = sc.beta * (sc.probs[0] * h1 + sc.probs[1] * h_eval(l2))
    return float(revenue(e0, sc.g0, kernel))


def dominance_check(sc: RamseyScenario, b_init=None, rev_tol=2e-3, margin=1e-3):
    """Best welfare raising revenue ``b_init`` with and without state-1 lotteries.

    Both searches run over the same debt, date-zero labor and state-2 branch
    grids; the deterministic search restricts ``pi1`` to ``{0, 1}``.
    """
    b_init = sc.b_init if b_init is None else b_init
    ell0 = sc.ell0_grid()
    pis = sc.pi_grid()
    p1, p2 = sc.probs
    u0 = welfare(ell0, sc.g0)
    best = {"det": (-np.inf, None), "lot": (-np.inf, None)}
    for b in sc.debt_grid():
        (l1L, l1H), (l2L, l2H) = _branch_tables(sc, b)
        if l1L is None:
            continue
        for name2, l2 in (("L", l2L), ("H", l2H)):
            if l2 is None:
                continue
            h2, w2 = h_eval(l2), welfare(l2, sc.g[1])
            h1 = pis * h_eval(l1L) + (1 - pis) * h_eval(l1H)  # (P,)
            w1 = pis * welfare(l1L, sc.g[0]) + (1 - pis) * welfare(l1H, sc.g[0])
            kernel = sc.beta * (p1 * h1 + p2 * h2)
            rev = revenue(ell0[None, :], sc.g0, kernel[:, None])  # (P, E)
            wel = u0[None, :] + sc.beta * (p1 * w1 + p2 * w2)[:, None]
            ok = np.abs(rev - b_init) <= rev_tol
            if not ok.any():
                continue
            masked = np.where(ok, wel, -np.inf)
            det = masked[[0, -1]]
            for key, tab, pgrid in (("lot", masked, pis), ("det", det, pis[[0, -1]])):
                k = np.unravel_index(int(np.argmax(tab)), tab.shape)
                if tab[k] > best[key][0]:
                    best[key] = (float(tab[k]), {"b": float(b), "ell0": float(ell0[k[1]]),
                                                 "pi1": float(pgrid[k[0]]), "branch2": name2,
                                                 "revenue": float(rev[k[0] if key == "lot" else
                                                                      [0, -1][k[0]], k[1]])})
    feasible = np.isfinite(best["lot"][0])
    out = {
        "b_init": b_init,
        "feasible": bool(feasible),
        "best_det": best["det"][0],
        "best_lottery": best["lot"][0],
        "det_plan": best["det"][1],
        "lottery_plan": best["lot"][1],
    }
    out["gap"] = out["best_lottery"] - out["best_det"] if feasible else math.nan
    out["dominates"] = bool(feasible and out["gap"] > margin)
    return out


def curves(n=1000):
    """Rows ``(ell, f(ell; 0), f(ell; 0.65), welfare(ell; 0))`` for ``ell in (0, 1)``."""
    ell = np.arange(1, n) / n
    return list(zip(ell.tolist(), f_eval(ell, 0.0).tolist(), f_eval(ell, 0.65).tolist(),
                    welfare(ell, 0.0).tolist()))
