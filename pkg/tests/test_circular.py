import math

import numpy as np
import pytest

from modules.circular_module import (
    TWO_PI,
    PredictionSet,
    UnitDirection,
    angle_to_unit,
    angles_to_units,
    circular_mean_oracle,
    cyclic_distance,
    cyclic_distance_array,
    fuse_predictions,
    unit_to_angle,
    units_to_angles,
    wrap,
    wrap_array,
)
from modules.utils_module import DegenerateOutputError, DomainError


def brute_force_min_span_mean(angles):
    """Try every circular arrangement explicitly; first arrangement wins ties"""
    s = sorted(wrap(a) for a in angles)
    best, best_span = None, None
    for k in range(len(s)):
        arrangement = s[k:] + [a + TWO_PI for a in s[:k]]
        span = arrangement[-1] - arrangement[0]
        if best_span is None or span < best_span:
            best, best_span = arrangement, span
    return wrap(math.fsum(best) / len(best))


class TestWrap:

    def test_examples(self):
        assert wrap(0.0) == 0.0
        assert wrap(TWO_PI) == 0.0
        assert wrap(-0.1) == pytest.approx(TWO_PI - 0.1)
        assert wrap(7 * math.pi) == pytest.approx(math.pi)

    def test_range_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for x in rng.uniform(-1e6, 1e6, size=1000):
            r = wrap(x)
            assert 0.0 <= r < TWO_PI

    def test_tiny_negative_stays_in_range(self):
        assert 0.0 <= wrap(-1e-300) < TWO_PI

    def test_non_finite_is_domain_error(self):
        with pytest.raises(DomainError):
            wrap(float("nan"))
        with pytest.raises(DomainError):
            wrap_array([0.0, float("inf")])

    def test_array_matches_scalar(self):
        xs = np.linspace(-20, 20, 101)
        assert np.allclose(wrap_array(xs), [wrap(x) for x in xs])


class TestEncodings:

    def test_unit_round_trip(self):
        for a in np.linspace(0, TWO_PI, 37, endpoint=False):
            p = angle_to_unit(a)
            assert p.is_valid()
            assert cyclic_distance(unit_to_angle(p), a) < 1e-12

    def test_y_down_convention(self):
        assert unit_to_angle((0.0, 1.0)) == pytest.approx(math.pi / 2)
        assert unit_to_angle((0.0, -1.0)) == pytest.approx(3 * math.pi / 2)

    def test_unnormalized_pair_decodes_direction(self):
        assert unit_to_angle((2.0, 0.0)) == 0.0
        assert unit_to_angle(UnitDirection(-3.0, 0.0)) == pytest.approx(math.pi)

    def test_origin_is_degenerate(self):
        with pytest.raises(DegenerateOutputError):
            unit_to_angle((0.0, 0.0))

    def test_batch_decoding_flags_degenerate_rows(self):
        points = angles_to_units([0.5, 2.0])
        points = np.vstack([points, [[0.0, 0.0]]])
        angles, degenerate = units_to_angles(points)
        assert list(degenerate) == [False, False, True]
        assert angles[:2] == pytest.approx([0.5, 2.0])
        assert angles[2] == 0.0


class TestCyclicDistance:

    def test_wrap_around(self):
        assert cyclic_distance(0.0, math.radians(350)) == pytest.approx(math.radians(10))

    def test_bounds_and_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(-10, 10, 500), rng.uniform(-10, 10, 500)
        d = cyclic_distance_array(a, b)
        assert np.all((d >= 0) & (d <= math.pi + 1e-15))
        assert np.allclose(d, cyclic_distance_array(b, a))

    def test_triangle_inequality(self):
        rng = np.random.default_rng(3)
        a, b, c = (rng.uniform(0, TWO_PI, 2000) for _ in range(3))
        assert np.all(cyclic_distance_array(a, c)
                      <= cyclic_distance_array(a, b) + cyclic_distance_array(b, c) + 1e-12)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(4)
        a, b = rng.uniform(0, TWO_PI, 2000), rng.uniform(0, TWO_PI, 2000)
        theta = rng.uniform(-20, 20, 2000)
        rotated = cyclic_distance_array(wrap_array(a + theta), wrap_array(b + theta))
        assert np.allclose(rotated, cyclic_distance_array(a, b), rtol=0, atol=1e-9)


class TestFusion:

    def test_empty_set_rejected(self):
        with pytest.raises(DomainError):
            PredictionSet(())

    def test_straddling_zero(self):
        fused = fuse_predictions(PredictionSet.of([math.radians(350), math.radians(10)]))
        assert cyclic_distance(fused, 0.0) < 1e-12

    def test_single_prediction(self):
        assert fuse_predictions(PredictionSet.of([1.25])) == pytest.approx(1.25)

    def test_matches_brute_force_search(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(1, 15))
            angles = list(rng.uniform(0, TWO_PI, size=n))
            assert fuse_predictions(PredictionSet.of(angles)) == brute_force_min_span_mean(angles)

    def test_symmetric_sets_match_circular_mean(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            center = rng.uniform(0, TWO_PI)
            offsets = rng.uniform(0, math.radians(44), size=int(rng.integers(1, 7)))
            angles = [center + o for o in offsets] + [center - o for o in offsets]
            preds = PredictionSet.of(angles)
            assert cyclic_distance(fuse_predictions(preds), circular_mean_oracle(preds)) < 1e-6

    def test_narrow_sets_stay_close_to_circular_mean(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            center = rng.uniform(0, TWO_PI)
            spread = math.radians(89)
            preds = PredictionSet.of(center + rng.uniform(-spread / 2, spread / 2, size=int(rng.integers(2, 15))))
            assert cyclic_distance(fuse_predictions(preds), circular_mean_oracle(preds)) < math.radians(10)

    def test_oracle_rejects_vanishing_resultant(self):
        with pytest.raises(DegenerateOutputError):
            circular_mean_oracle(PredictionSet.of([0.0, math.pi]))

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            angles = rng.uniform(0, TWO_PI, size=int(rng.integers(1, 15)))
            theta = rng.uniform(0, TWO_PI)
            rotated = fuse_predictions(PredictionSet.of(wrap_array(angles + theta)))
            assert cyclic_distance(rotated, wrap(fuse_predictions(PredictionSet.of(angles)) + theta)) < 1e-9
