"""Property tests over randomly drawn inputs."""
import dataclasses

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from recdual import ramsey as R
from recdual.dual_value import DualValueField, bellman_sweep, check_invariants, value_iterate
from recdual.inner_solver import InnerProblem, minimize
from recdual.io import dump_model, parse_model
from recdual.model import ModelSpec, lipschitz_bound, policy_payoff
from recdual.oracles import example1_W, example2_W

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
SLOW = settings(max_examples=15, deadline=None,
                suppress_health_check=[HealthCheck.too_slow])


@st.composite
def tiny_models(draw, max_actions=3, max_shocks=2, max_states=2):
    X = draw(st.integers(1, max_states))
    A = draw(st.integers(1, max_actions))
    S = draw(st.integers(1, max_shocks))
    beta = draw(st.floats(0.1, 0.8))
    r = draw(arrays(float, (X, A, S), elements=finite))
    g = draw(arrays(float, (1, X, A, S), elements=finite))
    raw = draw(arrays(float, (S, S), elements=st.floats(0.1, 1.0)))
    P = raw / raw.sum(axis=1, keepdims=True)
    zeta = draw(arrays(np.int64, (X, A, S), elements=st.integers(0, X - 1)))
    horizon = draw(st.sampled_from([1, np.inf]))
    # keep constraints satisfiable by the constraint-best action
    best = g[0].max(axis=1).min()
    span = 1.0 + beta if horizon == 1 else 1.0 / (1.0 - beta)
    gbar = best * span - 0.1 if best < 0 else best - 0.1
    return ModelSpec(transition=P, beta=beta, reward=r, constraints=g, thresholds=gbar,
                     horizons=(horizon,), next_state=zeta)


@given(tiny_models())
@settings(max_examples=50, deadline=None)
def test_model_text_round_trip(spec):
    assert parse_model(dump_model(spec)) == spec


@given(tiny_models(), st.randoms(use_true_random=False))
@settings(max_examples=50, deadline=None)
def test_lipschitz_invariant_under_action_permutation(spec, rnd):
    perm = list(range(spec.n_actions))
    rnd.shuffle(perm)
    shuffled = ModelSpec(transition=spec.transition, beta=spec.beta,
                         reward=spec.reward[:, perm], constraints=spec.constraints[:, :, perm],
                         thresholds=spec.thresholds[:, :, perm], horizons=spec.horizons,
                         next_state=spec.next_state[:, perm])
    assert lipschitz_bound(shuffled) == lipschitz_bound(spec)


@given(arrays(float, (4, 2), elements=finite), st.floats(0.5, 20.0))
@settings(max_examples=100, deadline=None)
def test_inner_minimum_beats_grid_scan(lines, lam_max):
    const, slope = lines[:, 0], lines[:, 1]
    prob = InnerProblem(const=const[None], slope=slope[None, :, None],
                        continuation=lambda lam: np.zeros((lam.shape[0], 4)), lam_max=lam_max)
    res = minimize(prob)
    scan = np.linspace(0.0, lam_max, 2001)
    best = np.min(np.max(const[None] + scan[:, None] * slope[None], axis=1))
    assert res.value[0] <= best + 1e-9
    assert 0.0 <= res.lam[0, 0] <= lam_max


@given(arrays(float, 6, elements=st.floats(0.0, 10.0)),
       st.lists(st.floats(0.0, 1.0), min_size=1, max_size=5))
def test_interpolation_stays_within_neighbors(vals, fracs):
    grid = np.array([0.0, 0.5, 1.0, 2.0, 4.0, 8.0])
    f = DualValueField(grids=(grid,), values=vals[None, None], lipschitz=100.0)
    for j in range(5):
        for t in fracs:
            p = grid[j] + t * (grid[j + 1] - grid[j])
            v = f.evaluate_many(np.array([[p]]), 0, 0)[0]
            assert min(vals[j], vals[j + 1]) - 1e-9 <= v <= max(vals[j], vals[j + 1]) + 1e-9


@given(st.floats(0.0, 20.0), st.floats(0.0, 20.0), st.floats(0.0, 1.0))
def test_example_curves_are_convex(a, b, t):
    m = t * a + (1 - t) * b
    for W in (lambda x: example1_W(x, 0.4), lambda x: example2_W(x, 0.1)):
        assert W(m) <= t * W(a) + (1 - t) * W(b) + 1e-9 * (1 + abs(W(a)) + abs(W(b)))


@given(st.floats(0.0, 0.8), st.floats(0.01, 0.99))
def test_labor_roots_hit_the_debt(g, frac):
    cap, _ = R.max_debt(g)
    b = frac * cap
    lo, hi = R.labor_roots(b, g)
    assert lo <= hi
    assert abs(R.f_eval(lo, g) - b) < 1e-7
    assert abs(R.f_eval(hi, g) - b) < 1e-7


@given(tiny_models())
@SLOW
def test_solved_field_is_in_candidate_space(spec):
    grid = np.linspace(0.0, 6.0, 13)
    field, rep = value_iterate(spec, gamma_grid=grid, tol=1e-7, max_iter=400)
    assert rep.monotone
    X, A, S = spec.reward.shape
    payoffs = []
    for a in range(A):
        # a minorant must be feasible from every starting state, reachable or not
        starts = [policy_payoff(dataclasses.replace(spec, x0=x), np.full((X, S), a))
                  for x in range(X)]
        if all(ok for _, _, ok in starts):
            payoffs.append(starts[0][:2])
    chk = check_invariants(field, spec, payoffs, tol=1e-6)
    assert chk["convexity"] <= 0
    assert chk["lipschitz"] <= 0
    assert chk["upper_bound"] <= 0
    assert chk["lower_bound"] <= 0


@given(tiny_models(), st.floats(0.0, 1.0))
@SLOW
def test_operator_preserves_order(spec, shrink):
    grid = np.linspace(0.0, 4.0, 9)
    hi, _ = value_iterate(spec, gamma_grid=grid, max_iter=1)
    lo = DualValueField(grids=hi.grids, values=hi.values - shrink, lipschitz=hi.lipschitz,
                        reset=hi.reset)
    for variant in ("infsup", "supinf"):
        t_hi = bellman_sweep(spec, hi, variant)[0].values
        t_lo = bellman_sweep(spec, lo, variant)[0].values
        assert np.all(t_lo <= t_hi + 1e-9 * (1 + np.abs(t_hi)))
