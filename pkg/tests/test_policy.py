import dataclasses

import numpy as np
import pytest

from recdual.dual_value import value_iterate
from recdual.model import ModelSpec
from recdual.oracles import action_labels, random_tiny_model
from recdual.policy import check_stage, initial_promise, recover_stage, simulate


def test_initial_promise_examples(ex1):
    spec = ModelSpec(transition=[[1.0]], beta=0.5, reward=[[[0.0], [1.0]]],
                     constraints=[[[[0.0], [1.0]]]], thresholds=0.0)
    assert initial_promise(spec) == pytest.approx([-1.0])
    const = ModelSpec(transition=[[1.0]], beta=0.5, reward=[[[0.0]]],
                      constraints=[[[[0.3]]]], thresholds=0.0)
    assert initial_promise(const) == pytest.approx([0.3 / 0.5 - 1])
    assert initial_promise(ex1) == pytest.approx([-1 / 0.6 - 1])


def slack_spec():
    r = np.array([1.0, 0.0, 0.5]).reshape(1, 3, 1)
    g = np.array([-1.0, 1.0, 0.2]).reshape(1, 1, 3, 1)
    return ModelSpec(transition=[[1.0]], beta=0.5, reward=r, constraints=g, thresholds=-100.0)


def test_slack_model_is_degenerate():
    spec = slack_spec()
    field, _ = value_iterate(spec, gamma_grid=np.linspace(0, 5, 21))
    phi = initial_promise(spec) - 100
    lot = recover_stage(spec, field, phi, 0, 0, n_iter=500)
    assert lot.support.tolist() == [0]
    assert lot.probs == pytest.approx([1.0])
    assert lot.mu == pytest.approx([0.0]) and lot.lam == pytest.approx([0.0])
    chk = check_stage(spec, field, phi, 0, 0, lot)
    assert chk.worst() < 1e-9


def test_root_stage_example1(ex1, ex1_infsup):
    field = ex1_infsup[0]
    phi = initial_promise(ex1)
    lot = recover_stage(ex1, field, phi, 0, 0)
    assert lot.probs.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(ex1.feasible[0, lot.support, 0])
    chk = check_stage(ex1, field, phi, 0, 0, lot)
    assert chk.worst() <= 1e-2
    assert lot.lam[0] == pytest.approx(1.0, abs=1e-3)


def test_corrupted_lottery_is_flagged(ex1, ex1_infsup):
    field = ex1_infsup[0]
    labels = action_labels(ex1)
    a1 = labels.index((0.25, 1.0))
    a0 = labels.index((0.25, 0.0))
    promised = np.zeros((2, 1, 1))
    good = recover_stage(ex1, field, [0.0], 1, 0, n_iter=10)
    fair = dataclasses.replace(good, support=np.array([a0, a1]), probs=np.array([0.5, 0.5]),
                               promised=promised, mu=np.array([1.0]))
    assert check_stage(ex1, field, [0.0], 1, 0, fair).worst() <= 1e-2
    skew = dataclasses.replace(fair, probs=np.array([0.1, 0.9]))
    chk = check_stage(ex1, field, [0.0], 1, 0, skew)
    # the promise of zero is missed by 0.4 and the slackness gap opens
    assert chk.promise_shortfall == pytest.approx(0.4)
    assert chk.worst() > 1e-2


def test_supinf_root_is_ex_post_feasible(ex1, ex1_supinf):
    field = ex1_supinf[0]
    phi = initial_promise(ex1)
    lot = recover_stage(ex1, field, phi, 0, 0)
    chk = check_stage(ex1, field, phi, 0, 0, lot)
    assert chk.constraint_shortfall <= 1e-6
    assert chk.worst() <= 1e-2
    assert lot.lam.shape == (ex1.n_actions, 1)


def test_supinf_simulation(ex1, ex1_supinf):
    field = ex1_supinf[0]
    res = simulate(ex1, field, T=30, n_paths=3000, rng_seed=5, quantum=1e-6)
    assert res.value == pytest.approx(0.4, abs=1e-3)
    assert res.within(solver_tol=1e-3)
    # ex-post: the date-zero check groups by the realized first action
    first = [c for c in res.constraint_checks if c["t"] == 0]
    assert first and all(c["ok"] for c in first)


def test_deterministic_single_action_simulation():
    spec = ModelSpec(transition=[[0.3, 0.7], [0.6, 0.4]], beta=0.5,
                     reward=[[[1.0, 1.0]]], constraints=[[[[0.0, 0.0]]]], thresholds=-1.0)
    field, _ = value_iterate(spec, gamma_grid=np.linspace(0, 2, 5))
    T = 20
    res = simulate(spec, field, T=T, n_paths=50, rng_seed=0, n_iter=200)
    assert res.discounted == pytest.approx(np.full(50, (1 - 0.5 ** T) / 0.5))
    assert res.stderr == pytest.approx(0.0, abs=1e-12)


def test_simulation_is_reproducible():
    spec = random_tiny_model(4, horizon=np.inf)
    field, _ = value_iterate(spec, gamma_grid=np.linspace(0, 20, 81))
    a = simulate(spec, field, T=5, n_paths=300, rng_seed=9, n_iter=500)
    b = simulate(spec, field, T=5, n_paths=300, rng_seed=9, n_iter=500)
    assert list(a.csv_lines(spec)) == list(b.csv_lines(spec))
    c = simulate(spec, field, T=5, n_paths=300, rng_seed=10, n_iter=500)
    assert list(c.csv_lines(spec)) != list(a.csv_lines(spec))


def test_two_period_constraints_are_rejected():
    spec = random_tiny_model(0)
    field, _ = value_iterate(spec, gamma_grid=np.linspace(0, 4, 9))
    with pytest.raises(NotImplementedError):
        recover_stage(spec, field, [0.0], 0, 0)


def test_csv_header(ex1, ex1_supinf):
    res = simulate(ex1, ex1_supinf[0], T=3, n_paths=2, rng_seed=0, n_iter=100)
    lines = list(res.csv_lines(ex1))
    assert lines[0] == "path_id,t,shock,action,reward,g_0,promise_0,discounted_objective"
    assert len(lines) == 1 + 2 * 3
