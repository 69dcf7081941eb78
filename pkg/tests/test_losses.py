import math

import numpy as np
import pytest

from modules.circular_module import TWO_PI, wrap_array
from modules.losses_module import (
    ANGLE_LOSSES,
    COORDINATE_LOSSES,
    ActivationKind,
    LossKind,
    activate,
    activate_array,
    batch_loss,
    loss,
    loss_arity,
    loss_terms,
    near_non_smooth,
)
from modules.utils_module import ContractError, DomainError


class TestActivations:

    def test_sigmoid_like_values(self):
        assert activate(ActivationKind.SIGMOID, 0.0) == (0.0, 0.5)
        value, derivative = activate(ActivationKind.SIGMOID, 2.0)
        assert value == pytest.approx(math.tanh(1.0))
        assert derivative == pytest.approx(0.5 * (1 - math.tanh(1.0) ** 2))

    def test_sigmoid_like_does_not_overflow(self):
        values, derivatives = activate_array(ActivationKind.SIGMOID, np.array([-1000.0, 1000.0]))
        assert list(values) == [-1.0, 1.0]
        assert np.all(derivatives == 0.0)

    def test_sigmoid_like_is_odd(self):
        z = np.linspace(-30, 30, 121)
        values, _ = activate_array(ActivationKind.SIGMOID, z)
        assert np.allclose(values, -activate_array(ActivationKind.SIGMOID, -z)[0])

    def test_cyclic_wraps_with_unit_derivative(self):
        value, derivative = activate(ActivationKind.CYCLIC, -0.5)
        assert value == pytest.approx(TWO_PI - 0.5)
        assert derivative == 1.0

    def test_sigmoid_like_at_ln3(self):
        assert activate(ActivationKind.SIGMOID, math.log(3.0))[0] == pytest.approx(0.5, abs=1e-15)

    def test_sigmoid_like_is_strictly_increasing_and_bounded(self):
        values, derivatives = activate_array(ActivationKind.SIGMOID, np.linspace(-20, 20, 4001))
        assert np.all(np.diff(values) > 0)
        assert np.all(derivatives > 0)
        assert np.all(np.abs(values) < 1.0)

    def test_identity(self):
        assert activate(ActivationKind.IDENTITY, -3.5) == (-3.5, 1.0)

    def test_non_finite_input(self):
        with pytest.raises(DomainError):
            activate(ActivationKind.IDENTITY, float("nan"))


class TestLossValues:

    def test_cyclic_across_zero(self):
        r = loss(LossKind.CYCLIC, 0.1, TWO_PI - 0.1)
        assert r.value == pytest.approx(0.2)
        assert r.grad_wrt_prediction[0] == 1.0

    def test_linear_ignores_the_cycle(self):
        r = loss(LossKind.LINEAR, 0.1, TWO_PI - 0.1)
        assert r.value == pytest.approx(TWO_PI - 0.2)
        assert r.grad_wrt_prediction[0] == -1.0

    def test_cyclic_sq_and_linear_sq(self):
        assert loss(LossKind.CYCLIC_SQ, 0.1, TWO_PI - 0.1).value == pytest.approx(0.04)
        assert loss(LossKind.LINEAR_SQ, 1.0, 0.5).grad_wrt_prediction[0] == pytest.approx(1.0)

    def test_cos(self):
        r = loss(LossKind.COS, 1.0, 0.25)
        assert r.value == pytest.approx(-math.cos(0.75))
        assert r.grad_wrt_prediction[0] == pytest.approx(math.sin(0.75))

    def test_cyclic_tie_at_pi(self):
        r = loss(LossKind.CYCLIC, math.pi, 0.0)
        assert r.value == pytest.approx(math.pi)
        assert r.grad_wrt_prediction[0] == 1.0

    def test_zero_difference_subgradient_is_zero(self):
        assert loss(LossKind.LINEAR, 1.0, 1.0).grad_wrt_prediction[0] == 0.0
        assert list(loss(LossKind.DIST, (0.3, 0.3), (0.3, 0.3)).grad_wrt_prediction) == [0.0, 0.0]

    def test_dist(self):
        r = loss(LossKind.DIST, (1.0, 0.0), (0.0, 1.0))
        assert r.value == 2.0
        assert list(r.grad_wrt_prediction) == [1.0, -1.0]
        r = loss(LossKind.DIST_SQ, (1.0, 0.0), (0.0, 1.0))
        assert r.value == 4.0
        assert list(r.grad_wrt_prediction) == [4.0, -4.0]

    def test_arity_mismatch(self):
        with pytest.raises(ContractError):
            loss(LossKind.DIST, 0.5, 0.5)
        with pytest.raises(ContractError):
            loss(LossKind.COS, (0.5, 0.1), (0.5, 0.1))

    def test_batch_mean(self):
        r = batch_loss(LossKind.LINEAR_SQ, [1.0, 2.0], [0.0, 0.0])
        assert r.value == pytest.approx(2.5)
        assert r.grad_wrt_prediction[0] == pytest.approx(3.0)

    def test_batch_cos_cancels(self):
        assert batch_loss(LossKind.COS, [0.0, 0.0], [0.0, math.pi]).value == pytest.approx(0.0, abs=1e-15)

    def test_cyclic_rejects_unwrapped_angles(self):
        with pytest.raises(ContractError):
            loss(LossKind.CYCLIC, 7.0, 0.0)
        with pytest.raises(ContractError):
            loss(LossKind.CYCLIC_SQ, 0.0, -TWO_PI)
        assert loss(LossKind.CYCLIC, TWO_PI - 1e-9, 0.0).value == pytest.approx(1e-9, abs=1e-12)

    def test_batch_length_mismatch(self):
        with pytest.raises(ContractError):
            batch_loss(LossKind.COS, [1.0], [1.0, 2.0])
        with pytest.raises(ContractError):
            batch_loss(LossKind.COS, [], [])


@pytest.mark.parametrize("kind", sorted(LossKind, key=lambda k: k.value))
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(11)
    arity = loss_arity(kind)
    if kind in ANGLE_LOSSES:
        p = rng.uniform(0, TWO_PI, size=(1000, 1))
        t = rng.uniform(0, TWO_PI, size=(1000, 1))
    else:
        p = rng.uniform(-1.5, 1.5, size=(1000, 2))
        t = rng.uniform(-1, 1, size=(1000, 2))

    h = 1e-6
    smooth = ~near_non_smooth(kind, p, t, margin=1e-3)
    assert smooth.sum() > 900

    _, grads = loss_terms(kind, p, t)
    for component in range(arity):
        step = np.zeros(arity)
        step[component] = h
        plus, _ = loss_terms(kind, p + step, t)
        minus, _ = loss_terms(kind, p - step, t)
        numeric = (plus - minus) / (2 * h)
        assert np.allclose(grads[smooth, component], numeric[smooth], rtol=1e-5, atol=1e-6)


def test_loss_families_partition_the_kinds():
    assert ANGLE_LOSSES | COORDINATE_LOSSES == set(LossKind)
    assert not ANGLE_LOSSES & COORDINATE_LOSSES


class TestLossProperties:

    @pytest.mark.parametrize("base, squared", [
        (LossKind.LINEAR, LossKind.LINEAR_SQ),
        (LossKind.CYCLIC, LossKind.CYCLIC_SQ),
        (LossKind.DIST, LossKind.DIST_SQ),
    ])
    def test_squared_variant_is_square_of_base(self, base, squared):
        rng = np.random.default_rng(21)
        if base in ANGLE_LOSSES:
            p, t = rng.uniform(0, TWO_PI, (500, 1)), rng.uniform(0, TWO_PI, (500, 1))
        else:
            p, t = rng.uniform(-1.5, 1.5, (500, 2)), rng.uniform(-1, 1, (500, 2))
        values, _ = loss_terms(base, p, t)
        squares, _ = loss_terms(squared, p, t)
        assert np.allclose(squares, values * values, rtol=1e-12, atol=0)

    def test_cyclic_is_symmetric(self):
        rng = np.random.default_rng(22)
        p, t = rng.uniform(0, TWO_PI, 500), rng.uniform(0, TWO_PI, 500)
        assert np.array_equal(loss_terms(LossKind.CYCLIC, p, t)[0], loss_terms(LossKind.CYCLIC, t, p)[0])

    def test_cos_ignores_full_turns(self):
        rng = np.random.default_rng(23)
        p, t = rng.uniform(0, TWO_PI, 500), rng.uniform(0, TWO_PI, 500)
        values, _ = loss_terms(LossKind.COS, p, t)
        assert np.allclose(loss_terms(LossKind.COS, p + TWO_PI, t)[0], values, rtol=0, atol=1e-12)
        assert np.allclose(loss_terms(LossKind.COS, p, t + TWO_PI)[0], values, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("kind", [LossKind.CYCLIC, LossKind.CYCLIC_SQ, LossKind.COS])
    def test_minimum_is_at_the_target(self, kind):
        offsets = np.linspace(-math.pi, math.pi, 2001)
        offsets = offsets[offsets != 0.0]
        for target in np.random.default_rng(24).uniform(0, TWO_PI, 20):
            at_target = loss(kind, target, target)
            assert at_target.grad_wrt_prediction[0] == 0.0
            predictions = wrap_array(target + offsets)
            values, _ = loss_terms(kind, predictions, np.full_like(predictions, target))
            assert np.all(values > at_target.value)
