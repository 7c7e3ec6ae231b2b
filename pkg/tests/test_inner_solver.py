import numpy as np
import pytest

from recdual.inner_solver import InnerProblem, evaluate_objective, kkt_residual, minimize


def no_continuation(B, K):
    return lambda lam: np.zeros((B, K))


def test_two_lines_meet():
    # max(1 - lam, lam - 1) is minimized at lam = 1 with value 0
    prob = InnerProblem(const=[[1.0, -1.0]], slope=[[[-1.0], [1.0]]],
                        continuation=no_continuation(1, 2), lam_max=10.0)
    res = minimize(prob, with_kkt=True)
    assert res.lam[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert res.value[0] == pytest.approx(0.0, abs=1e-9)
    assert res.kkt_residual[0] < 1e-6
    assert not res.at_box[0]


def test_increasing_objective_pins_zero():
    prob = InnerProblem(const=[[0.3]], slope=[[[2.0]]], continuation=no_continuation(1, 1),
                        lam_max=5.0)
    res = minimize(prob)
    assert res.lam[0, 0] == 0.0
    assert res.value[0] == pytest.approx(0.3)


def test_decreasing_objective_hits_box():
    prob = InnerProblem(const=[[0.0]], slope=[[[-1.0]]], continuation=no_continuation(1, 1),
                        lam_max=4.0)
    res = minimize(prob)
    assert res.lam[0, 0] == pytest.approx(4.0)
    assert res.at_box[0]


def test_mask_excludes_actions():
    prob = InnerProblem(const=[[0.0, 100.0]], slope=[[[1.0], [0.0]]],
                        continuation=no_continuation(1, 2), lam_max=1.0,
                        mask=[[True, False]])
    res = minimize(prob)
    assert res.value[0] == pytest.approx(0.0)


def test_continuation_is_used():
    # f(lam) = (lam - 2)^2 via the continuation term
    prob = InnerProblem(const=[[0.0]], slope=[[[0.0]]],
                        continuation=lambda lam: (lam - 2.0) ** 2, lam_max=10.0)
    res = minimize(prob)
    assert res.lam[0, 0] == pytest.approx(2.0, abs=1e-5)


def test_batch_problems_are_independent():
    const = np.array([[1.0, -1.0], [2.0, -2.0], [0.0, 0.0]])
    slope = np.array([[[-1.0], [1.0]], [[-1.0], [1.0]], [[1.0], [2.0]]])
    prob = InnerProblem(const=const, slope=slope, continuation=no_continuation(3, 2),
                        lam_max=np.array([10.0, 10.0, 10.0]))
    res = minimize(prob)
    assert res.lam[:, 0] == pytest.approx([1.0, 2.0, 0.0], abs=1e-8)


def test_subgradient_of_first_maximizer():
    prob = InnerProblem(const=[[0.0, -5.0]], slope=[[[3.0], [0.0]]],
                        continuation=lambda lam: np.repeat(0.5 * lam, 2, axis=1), lam_max=1.0)
    value, ties, sub = evaluate_objective(prob, [[1.0]])
    assert value[0] == pytest.approx(3.5)
    assert ties[0].tolist() == [True, False]
    assert sub[0, 0] == pytest.approx(3.5, rel=1e-6)


def test_two_dimensional_subgradient_path():
    # max of |lam_1 - 1| and |lam_2 - 2| written with four affine pieces
    const = np.array([[-1.0, 1.0, -2.0, 2.0]])
    slope = np.array([[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]])
    prob = InnerProblem(const=const, slope=slope, continuation=no_continuation(1, 4),
                        lam_max=5.0)
    res = minimize(prob)
    assert res.value[0] < 2e-2
    assert res.lam[0] == pytest.approx([1.0, 2.0], abs=5e-2)


def test_kkt_residual_flags_non_minimizer():
    prob = InnerProblem(const=[[1.0, -1.0]], slope=[[[-1.0], [1.0]]],
                        continuation=no_continuation(1, 2), lam_max=10.0)
    assert kkt_residual(prob, [[0.5]])[0] == pytest.approx(1.0, rel=1e-4)
    assert kkt_residual(prob, [[1.0]])[0] < 1e-6
