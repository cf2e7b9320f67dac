import numpy as np
import numpy.testing as npt
import pytest

from contlearn.errors import AggregationError, MetricError, StateError
from contlearn.metrics import (
    RMatrix,
    RunResult,
    acc_final,
    aggregate,
    bwt_final,
    curves,
    read_rmatrix_csv,
    write_rmatrix_csv,
)

HAND_3X3 = [[0.9], [0.6, 0.8], [0.5, 0.7, 0.8]]


class TestRMatrix:
    def test_row_shape_enforced(self):
        r = RMatrix(2)
        r.add_row([0.5])
        with pytest.raises(StateError):
            r.add_row([0.5])  # row 2 needs two entries

    def test_range_enforced(self):
        r = RMatrix(1)
        with pytest.raises(StateError):
            r.add_row([1.5])

    def test_overfull(self):
        r = RMatrix(1)
        r.add_row([0.5])
        with pytest.raises(StateError):
            r.add_row([0.5, 0.5])


class TestAccFinal:
    def test_two_task(self):
        assert acc_final(RMatrix.from_rows([[0.5], [0.8, 0.9]])) == pytest.approx(85.0)

    def test_single_task(self):
        assert acc_final(RMatrix.from_rows([[0.7]])) == pytest.approx(70.0)

    def test_constant(self):
        r = RMatrix.from_rows([[0.3], [0.3, 0.3], [0.3, 0.3, 0.3]])
        assert acc_final(r) == pytest.approx(30.0)

    def test_incomplete(self):
        r = RMatrix(3)
        r.add_row([0.5])
        with pytest.raises(StateError):
            acc_final(r)


class TestBwtFinal:
    def test_two_task(self):
        r = RMatrix.from_rows([[1.0], [0.8, 0.9]])
        assert bwt_final(r) == pytest.approx(-20.0)

    def test_no_forgetting_zero(self):
        r = RMatrix.from_rows([[0.6], [0.6, 0.7], [0.6, 0.7, 0.9]])
        assert bwt_final(r) == pytest.approx(0.0)

    def test_single_task_undefined(self):
        with pytest.raises(MetricError):
            bwt_final(RMatrix.from_rows([[0.9]]))


class TestCurves:
    def test_consistency_with_finals(self):
        r = RMatrix.from_rows(HAND_3X3)
        acc_t, bwt_t = curves(r)
        assert acc_t[-1] == acc_final(r)
        assert bwt_t[-1] == bwt_final(r)

    def test_monotone_perfect_learner(self):
        r = RMatrix.from_rows([[1.0], [1.0, 1.0], [1.0, 1.0, 1.0]])
        acc_t, bwt_t = curves(r)
        npt.assert_allclose(acc_t, [100.0] * 3)
        assert bwt_t[0] is None
        npt.assert_allclose(bwt_t[1:], [0.0, 0.0])

    def test_hand_matrix(self):
        acc_t, bwt_t = curves(RMatrix.from_rows(HAND_3X3))
        npt.assert_allclose(acc_t, [90.0, 70.0, 200.0 / 3.0], atol=1e-9)
        assert bwt_t[0] is None
        npt.assert_allclose(bwt_t[1:], [-30.0, -25.0], atol=1e-9)

    def test_prefix_depends_only_on_prefix_rows(self):
        base = RMatrix.from_rows(HAND_3X3)
        perturbed = RMatrix.from_rows([[0.9], [0.6, 0.8], [0.1, 0.2, 0.3]])
        a1, b1 = curves(base)
        a2, b2 = curves(perturbed)
        assert a1[:2] == a2[:2]
        assert b1[1] == b2[1]


class TestAggregate:
    def result(self, acc_row, digest="d0", seed=0):
        # 2-task matrix whose final row mean is acc_row/100
        v = acc_row / 100.0
        r = RMatrix.from_rows([[v], [v, v]])
        return RunResult(config_digest=digest, seed=seed, rmatrix=r)

    def test_hand_mean_std(self):
        results = [self.result(a, seed=i) for i, a in enumerate((60, 62, 64, 61, 63))]
        agg = aggregate(results)
        assert agg["acc"][0] == pytest.approx(62.0)
        assert agg["acc"][1] == pytest.approx(1.5811, abs=1e-4)
        assert agg["n"] == 5 and not agg["single_seed"]

    def test_identical_results_zero_std(self):
        agg = aggregate([self.result(70, seed=i) for i in range(3)])
        assert agg["acc"] == (70.0, 0.0)

    def test_mixed_digests_rejected(self):
        with pytest.raises(AggregationError):
            aggregate([self.result(60, "a"), self.result(60, "b")])

    def test_single_seed_flagged(self):
        agg = aggregate([self.result(50)])
        assert agg["single_seed"] and agg["acc"][1] == 0.0

    def test_curve_points_aggregated(self):
        agg = aggregate([self.result(60, seed=0), self.result(70, seed=1)])
        assert agg["acc_curve"][0][0] == pytest.approx(65.0)
        assert agg["bwt_curve"][0] is None
        assert agg["bwt_curve"][1][0] == pytest.approx(0.0)

    def test_empty(self):
        with pytest.raises(AggregationError):
            aggregate([])


class TestCsv:
    def test_round_trip_and_determinism(self, tmp_path):
        r = RMatrix.from_rows(HAND_3X3)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_rmatrix_csv(p1, r)
        write_rmatrix_csv(p2, r)
        assert p1.read_bytes() == p2.read_bytes()
        back = read_rmatrix_csv(p1)
        for want, got in zip(r.rows, back.rows):
            npt.assert_array_equal(want, got)
