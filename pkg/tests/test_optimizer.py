import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nlimportance import activations as act
from nlimportance.adjoint import finite_difference_gradient
from nlimportance.models import make_family
from nlimportance.optimizer import (
    ConstraintSet,
    TrainConfig,
    TrainingError,
    infer_constraint,
    initial_theta,
    project_relu_set,
    relu_set_violation,
    train,
    train_full,
    train_subsampled,
)
from nlimportance.sampler import SampleSet, draw, full_enumeration
from nlimportance.scores import uniform_scores


@pytest.fixture
def linear_problem(rng):
    X = rng.normal(size=(300, 5))
    y = X @ rng.normal(size=5) + 0.3 * rng.normal(size=300)
    return X, y


class TestConstraintSet:
    def test_ball(self):
        C = ConstraintSet.ball(2.0, center=[1.0, 0.0])
        out = C.project(np.array([5.0, 3.0]))
        assert np.linalg.norm(out - [1.0, 0.0]) == pytest.approx(2.0)
        np.testing.assert_array_equal(C.project(np.array([1.5, 0.5])), [1.5, 0.5])

    def test_box(self):
        C = ConstraintSet.box([-1, -1], [1, 2])
        np.testing.assert_array_equal(C.project(np.array([-3.0, 3.0])), [-1.0, 2.0])
        assert C.violation(np.array([0.0, 2.5])) == pytest.approx(0.5)

    def test_invalid(self):
        with pytest.raises(ValueError):
            ConstraintSet.ball(0.0)
        with pytest.raises(ValueError):
            ConstraintSet.relu_set(1.0, 1.0, 2, 3)
        with pytest.raises(ValueError):
            ConstraintSet("sphere")

    def test_dict_round_trip(self):
        for C in (ConstraintSet.ball(1.5, [0.0, 1.0]), ConstraintSet.box([0, 0], [1, 1]),
                  ConstraintSet.relu_set(0.1, 3.0, 2, 2), ConstraintSet()):
            back = ConstraintSet.from_dict(json.loads(json.dumps(C.to_dict())))
            np.testing.assert_array_equal(back.project(np.arange(6.0)[: 6 if C.kind == "relu_set" else 2]),
                                          C.project(np.arange(6.0)[: 6 if C.kind == "relu_set" else 2]))


class TestReluProjection:
    def test_feasible_unchanged(self):
        theta = np.array([1.0, 0.1, 0.2, -0.8, 0.0, 0.3])
        np.testing.assert_array_equal(project_relu_set(theta, 0.25, 4.0, 2, 2), theta)

    def test_zero_output_weight_goes_positive(self):
        out = project_relu_set(np.array([0.0, 0.1, -0.2]), 0.09, 5.0, 1, 2)
        assert out[0] == pytest.approx(0.3)

    def test_infeasible_set(self):
        with pytest.raises(ValueError):
            project_relu_set(np.zeros(6), 1.0, 1.5, 2, 2)

    def test_a_alone_exceeds_budget(self):
        theta = np.array([3.0, 1.0, 1.0, -2.0, 1.0, 1.0])
        out = project_relu_set(theta, 0.25, 1.0, 2, 2)
        assert relu_set_violation(out, 0.25, 1.0, 2, 2) <= 1e-9
        np.testing.assert_array_equal(out.reshape(2, 3)[:, 1:], 0.0)

    @given(arrays(float, 12, elements=st.floats(-20, 20, allow_nan=False)),
           st.floats(0.01, 1.0), st.floats(1.0, 50.0))
    @settings(max_examples=200, deadline=None)
    def test_feasible_and_idempotent(self, theta, l, factor):
        m, d = 3, 3
        u = m * l * factor
        once = project_relu_set(theta, l, u, m, d)
        assert relu_set_violation(once, l, u, m, d) <= 1e-9 * max(1.0, u)
        np.testing.assert_allclose(project_relu_set(once, l, u, m, d), once, atol=1e-12)


class TestTrainFull:
    def test_linear_matches_lstsq(self, linear_problem):
        X, y = linear_problem
        fam = make_family("linear", X, y)
        res = train_full(fam)
        best = np.linalg.lstsq(X, y, rcond=None)[0]
        assert res.converged
        assert res.loss == pytest.approx(fam.loss(best), rel=1e-8)

    def test_identity_single_index_same_as_linear(self, linear_problem):
        X, y = linear_problem
        a = train_full(make_family("linear", X, y))
        b = train_full(make_family("single_index", X, y, act.identity()))
        np.testing.assert_allclose(a.theta, b.theta, atol=1e-8)

    def test_stationary_init(self, linear_problem):
        X, y = linear_problem
        best = np.linalg.lstsq(X, y, rcond=None)[0]
        res = train_full(make_family("linear", X, y), init=best, config=TrainConfig(tol=1e-6))
        assert res.iterations == 0 and res.converged

    def test_monotone_and_feasible(self, rng):
        X = rng.normal(size=(200, 4))
        y = act.swish_type()(X @ np.array([2.0, -1.0, 0.5, 1.5]))
        C = ConstraintSet.ball(1.0)
        res = train_full(make_family("single_index", X, y, act.swish_type()), C=C)
        assert np.all(np.diff(res.loss_trajectory) <= 1e-12 * res.loss_trajectory[:-1])
        assert C.violation(res.theta) <= 1e-9
        assert np.linalg.norm(res.theta) == pytest.approx(1.0)

    def test_relu_set_training(self, rng):
        m, d = 2, 3
        X = rng.normal(size=(150, d))
        fam = make_family("relu_two_layer", X, rng.normal(size=150), act.identity(), m)
        C = ConstraintSet.relu_set(0.2, 6.0, m, d)
        res = train_full(fam, C=C, config=TrainConfig(max_iters=300))
        assert C.violation(res.theta) <= 1e-9
        assert np.all(np.diff(res.loss_trajectory) <= 1e-12 * res.loss_trajectory[:-1])

    def test_nonfinite_loss_aborts(self):
        phi = act.custom(np.exp, np.exp)
        fam = make_family("single_index", np.full((3, 1), 1000.0), np.zeros(3), phi)
        with np.errstate(over="ignore"), pytest.raises(TrainingError):
            train_full(fam, init=np.ones(1))

    def test_result_serialization(self, tmp_path, linear_problem):
        X, y = linear_problem
        res = train_full(make_family("linear", X, y), config=TrainConfig(max_iters=5))
        res.to_json(tmp_path / "r.json", seed=0)
        data = json.loads((tmp_path / "r.json").read_text())
        assert data["iterations"] == res.iterations and len(data["init"]) == 5

    def test_deterministic_init(self):
        np.testing.assert_array_equal(initial_theta(7, 3), initial_theta(7, 3))


class TestTrainSubsampled:
    def test_full_enumeration_matches_full(self, linear_problem):
        X, y = linear_problem
        fam = make_family("single_index", X, y, act.swish_type())
        a = train_full(fam)
        b = train_subsampled(fam, full_enumeration(fam.n), uniform_scores(fam.n))
        np.testing.assert_allclose(a.theta, b.theta, atol=1e-7)

    def test_single_sample(self, linear_problem):
        X, y = linear_problem
        fam = make_family("linear", X, y)
        S = SampleSet(np.array([7]), np.array([3.0]), 0, "uniform")
        res = train_subsampled(fam, S)
        assert fam.subset([7]).loss(res.theta) <= 1e-12

    def test_duplicates_merge(self, linear_problem):
        X, y = linear_problem
        fam = make_family("linear", X, y)
        S = draw(uniform_scores(fam.n), 40, seed=3)
        res = train_subsampled(fam, S, uniform_scores(fam.n))
        w = np.bincount(S.indices, weights=S.weights, minlength=fam.n)
        sw = np.sqrt(w)
        best = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
        np.testing.assert_allclose(res.theta, best, atol=1e-6)

    def test_inconsistent_weights(self, linear_problem):
        X, y = linear_problem
        fam = make_family("linear", X, y)
        S = SampleSet(np.array([0, 1]), np.array([1.0, 1.0]), 0, "uniform")
        with pytest.raises(ValueError):
            train_subsampled(fam, S, uniform_scores(fam.n))


class TestGradient:
    @pytest.mark.parametrize("name, m", [("single_index", 1), ("relu_two_layer", 2)])
    def test_objective_gradient(self, name, m, rng):
        X = rng.normal(size=(40, 3))
        fam = make_family(name, X, rng.normal(size=40), act.swish_type(), m)
        theta = rng.normal(size=fam.p)
        g = 2 * fam.jacobian(theta).T @ fam.residuals(theta)
        fd = finite_difference_gradient(fam.loss, theta, step=1e-6)
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-6)


class TestInferConstraint:
    def test_ball_contains_pilot(self, linear_problem):
        X, y = linear_problem
        fam = make_family("linear", X, y)
        pilot = train_full(fam)
        C = infer_constraint(fam, "ball", 1.5, pilot=pilot)
        assert C.radius == pytest.approx(1.5 * np.linalg.norm(pilot.theta))
        assert C.violation(pilot.theta) == 0.0

    def test_relu_set_contains_pilot(self, rng):
        fam = make_family("relu_two_layer", rng.normal(size=(100, 2)), rng.normal(size=100), act.identity(), 2)
        pilot = train(fam, np.array([1.0, 0.5, 0.5, -1.0, 0.5, -0.5]), config=TrainConfig(max_iters=200))
        C = infer_constraint(fam, "relu_set", pilot=pilot)
        assert C.violation(pilot.theta) <= 1e-12

    def test_unknown_kind(self, linear_problem):
        X, y = linear_problem
        with pytest.raises(ValueError):
            infer_constraint(make_family("linear", X, y), "simplex")
