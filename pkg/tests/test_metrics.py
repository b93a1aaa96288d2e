"""Metrics, class bins, reports and the paired t-test vs scipy oracles."""

import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from reggap.errors import EmptyInput, LengthMismatch, NonFinite, ZeroVariance
from reggap.metrics import (
    BmiClass,
    build_report,
    class_bin,
    format_report_table,
    mae,
    paired_t_test,
    pearson,
    regularized_incomplete_beta,
    report_to_json,
    rmse,
    student_t_two_sided_p,
)


class TestMae:
    def test_perfect(self):
        assert mae([20.0, 30.0], [20.0, 30.0]) == 0.0

    def test_hand_values(self):
        assert mae([20.0, 30.0], [22.0, 27.0]) == pytest.approx(2.5, abs=0)
        assert mae([25.0], [20.0]) == pytest.approx(5.0, abs=0)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            mae([1.0, 2.0], [1.0])

    def test_empty(self):
        with pytest.raises(EmptyInput):
            mae([], [])


class TestRmse:
    def test_perfect(self):
        assert rmse([20.0, 30.0], [20.0, 30.0]) == 0.0

    def test_hand_values(self):
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5), rel=1e-12)

    def test_constant_offset_is_exact_offset(self):
        truth = np.array([18.0, 25.0, 31.0, 44.0])
        assert rmse(truth, truth + 2.5) == pytest.approx(2.5, rel=1e-12)

    @given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 64))
    @settings(max_examples=50, deadline=None)
    def test_rmse_at_least_mae(self, seed, n):
        rng = np.random.default_rng(seed)
        truth = rng.normal(25, 6, size=n)
        pred = rng.normal(25, 6, size=n)
        assert rmse(truth, pred) >= mae(truth, pred) - 1e-12


class TestPearson:
    def test_identity(self):
        assert pearson([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0)

    def test_antisymmetric(self):
        assert pearson([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == pytest.approx(-1.0)

    def test_formula_oracle(self):
        # direct evaluation: r = 3 / (sqrt(2) * sqrt(14/3)) = sqrt(27/28)
        got = pearson([1.0, 2.0, 3.0], [1.0, 2.0, 4.0])
        assert got == pytest.approx(math.sqrt(27.0 / 28.0), abs=1e-9)
        assert got == pytest.approx(0.9819805060619657, abs=1e-9)

    def test_zero_variance(self):
        with pytest.raises(ZeroVariance):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    @given(
        a=st.floats(0.1, 50.0),
        b=st.floats(-100.0, 100.0),
        seed=st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=50, deadline=None)
    def test_affine_invariance(self, a, b, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=12)
        y = rng.normal(size=12)
        base = pearson(x, y)
        assert pearson(a * x + b, y) == pytest.approx(base, abs=1e-12)
        assert pearson(x, a * y + b) == pytest.approx(base, abs=1e-12)
        assert pearson(-a * x + b, y) == pytest.approx(-base, abs=1e-12)


class TestClassBin:
    @pytest.mark.parametrize(
        "bmi,expected",
        [
            (12.0, BmiClass.UNDER_WEIGHT),
            (18.4999, BmiClass.UNDER_WEIGHT),
            (18.5, BmiClass.NORMAL),
            (24.999, BmiClass.NORMAL),
            (25.0, BmiClass.OVER_WEIGHT),
            (30.0, BmiClass.OBESE),
            (35.0, BmiClass.SEVERELY_OBESE),
            (40.0, BmiClass.VERY_SEVERELY_OBESE),
            (42.0, BmiClass.VERY_SEVERELY_OBESE),
        ],
    )
    def test_boundaries(self, bmi, expected):
        assert class_bin(bmi) is expected

    def test_below_sixteen_still_underweight(self):
        assert class_bin(12.0) is BmiClass.UNDER_WEIGHT

    def test_non_finite_rejected(self):
        with pytest.raises(NonFinite):
            class_bin(float("nan"))

    @given(
        a=st.floats(-50, 150),
        b=st.floats(-50, 150),
    )
    @settings(max_examples=100, deadline=None)
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert class_bin(lo) <= class_bin(hi)


class TestBuildReport:
    def test_single_class(self):
        truth = [26.0, 27.0, 28.0]
        pred = [26.5, 27.5, 27.0]
        report = build_report(truth, pred)
        assert set(report.per_class) == {BmiClass.OVER_WEIGHT}
        assert report.per_class[BmiClass.OVER_WEIGHT].n == 3

    def test_per_gender_recomputation(self):
        rng = np.random.default_rng(0)
        truth = rng.uniform(17.0, 45.0, size=40)
        pred = truth + rng.normal(0, 2, size=40)
        genders = ["male" if i % 2 == 0 else "female" for i in range(40)]
        report = build_report(truth, pred, genders)
        for gender in ("male", "female"):
            keep = [i for i, g in enumerate(genders) if g == gender]
            assert report.per_gender[gender].mae == pytest.approx(
                mae(truth[keep], pred[keep]), abs=1e-12
            )
            assert report.per_gender[gender].rmse == pytest.approx(
                rmse(truth[keep], pred[keep]), abs=1e-12
            )
            assert report.per_gender[gender].pearson == pytest.approx(
                pearson(truth[keep], pred[keep]), abs=1e-12
            )

    def test_no_genders_means_absent(self):
        report = build_report([20.0, 30.0], [21.0, 29.0], None)
        assert report.per_gender is None

    def test_all_none_genders_means_absent(self):
        report = build_report([20.0, 30.0], [21.0, 29.0], [None, None])
        assert report.per_gender is None

    def test_tiny_group_has_no_pearson(self):
        report = build_report([20.0, 32.0], [21.0, 31.0], ["male", "female"])
        assert report.per_gender["male"].pearson is None

    def test_overall_mae_is_weighted_class_mean(self):
        rng = np.random.default_rng(1)
        truth = rng.uniform(15.0, 50.0, size=60)
        pred = truth + rng.normal(0, 3, size=60)
        report = build_report(truth, pred)
        weighted = sum(g.mae * g.n for g in report.per_class.values())
        assert report.mae == pytest.approx(weighted / report.n, abs=1e-12)

    def test_json_document_shape(self):
        report = build_report([20.0, 30.0, 41.0], [21.0, 29.0, 40.0])
        doc = report_to_json(report)
        assert set(doc) == {"overall", "per_class", "per_gender", "significance"}
        assert set(doc["overall"]) == {"mae", "rmse", "pearson", "n"}
        assert doc["per_gender"] is None

    def test_table_renders(self):
        report = build_report([20.0, 30.0, 41.0], [21.0, 29.0, 40.0])
        table = format_report_table(report)
        assert "overall" in table and "MAE" in table


class TestIncompleteBeta:
    def test_against_scipy(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            a = float(rng.uniform(0.5, 30.0))
            b = float(rng.uniform(0.5, 30.0))
            x = float(rng.uniform(0.0, 1.0))
            assert regularized_incomplete_beta(a, b, x) == pytest.approx(
                float(scipy.special.betainc(a, b, x)), abs=1e-10
            )

    def test_edges(self):
        assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0


class TestStudentT:
    def test_two_sided_p_against_scipy(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            t = float(rng.normal(0, 3))
            dof = int(rng.integers(1, 60))
            expected = 2.0 * float(scipy.stats.t.sf(abs(t), dof))
            assert student_t_two_sided_p(t, dof) == pytest.approx(expected, abs=1e-10)


class TestPairedTTest:
    def test_identical_errors(self):
        result = paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert result.t == 0.0
        assert result.p_value == 1.0
        assert result.degenerate

    def test_constant_nonzero_difference_flagged(self):
        result = paired_t_test([2.0, 3.0, 4.0, 5.0], [1.0, 2.0, 3.0, 4.0])
        assert result.degenerate
        assert result.p_value == 1.0
        assert math.isinf(result.t)

    def test_matches_scipy_oracle(self):
        differences = [0.5, 1.5, 1.0, 0.8, 1.2]
        result = paired_t_test(differences, [0.0] * 5)
        expected = scipy.stats.ttest_rel(differences, [0.0] * 5)
        assert result.t == pytest.approx(float(expected.statistic), abs=1e-8)
        assert result.p_value == pytest.approx(float(expected.pvalue), abs=1e-8)

    def test_random_vectors_match_scipy(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            a = rng.exponential(2.0, size=n)
            b = rng.exponential(2.0, size=n)
            if np.std(a - b, ddof=1) == 0.0:
                continue
            got = paired_t_test(a, b)
            want = scipy.stats.ttest_rel(a, b)
            assert got.t == pytest.approx(float(want.statistic), abs=1e-8)
            assert got.p_value == pytest.approx(float(want.pvalue), abs=1e-8)

    def test_single_pair_rejected(self):
        with pytest.raises(EmptyInput):
            paired_t_test([1.0], [2.0])
