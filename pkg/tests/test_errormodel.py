from collections import defaultdict
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eivuq.errormodel import (ErrorModel, FeatureErrorSpec, degenerate, enumerate_support,
                              from_sensitivity_specificity)
from eivuq.errors import ConfigError, DataError, SupportOverflowError


def bayes_fraction(sens, spec, prev, obs):
    """Exact rational P(true=1 | obs) as an independent oracle."""
    sens, spec, prev = Fraction(sens), Fraction(spec), Fraction(prev)
    like1 = sens if obs else 1 - sens
    like0 = (1 - spec) if obs else spec
    return like1 * prev / (like1 * prev + like0 * (1 - prev))


class TestDegenerate:
    def test_single_point(self):
        pts = enumerate_support(degenerate(), [1.0, 0.0, 3.0])
        assert len(pts) == 1
        np.testing.assert_array_equal(pts[0].x, [1.0, 0.0, 3.0])
        assert pts[0].probability == 1.0

    def test_is_flagged(self):
        assert degenerate().is_degenerate


class TestBayesConstructor:
    def test_smear_characteristics_at_even_prevalence(self):
        spec = from_sensitivity_specificity(0, 0.64, 0.98, 0.5)
        p1_given_1 = dict(spec.table[1.0])[1.0]
        p1_given_0 = dict(spec.table[0.0])[1.0]
        assert p1_given_1 == pytest.approx(float(bayes_fraction("0.64", "0.98", "0.5", 1)), abs=1e-15)
        assert p1_given_0 == pytest.approx(float(bayes_fraction("0.64", "0.98", "0.5", 0)), abs=1e-15)
        assert round(p1_given_1, 6) == 0.969697
        assert round(p1_given_0, 6) == 0.268657

    def test_perfect_test_is_degenerate(self):
        spec = from_sensitivity_specificity(2, 1.0, 1.0, 0.3)
        assert spec.table == {0.0: ((0.0, 1.0),), 1.0: ((1.0, 1.0),)}
        pts = enumerate_support(ErrorModel((spec,)), [5.0, 5.0, 1.0])
        assert len(pts) == 1 and pts[0].probability == 1.0

    @pytest.mark.parametrize("args", [(0.0, 0.9, 0.5), (0.9, 1.2, 0.5), (0.9, 0.9, 1.0)])
    def test_rejects_out_of_range(self, args):
        with pytest.raises(ConfigError):
            from_sensitivity_specificity(0, *args)

    @settings(max_examples=50)
    @given(st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(0.01, 0.99))
    def test_rows_are_distributions(self, sens, spec, prev):
        fs = from_sensitivity_specificity(0, sens, spec, prev)
        for outs in fs.table.values():
            assert abs(sum(p for _, p in outs) - 1.0) <= 1e-12


class TestEnumerate:
    def test_product_rule(self):
        a = FeatureErrorSpec(0, {0.0: [(0.0, 0.7), (1.0, 0.3)]})
        b = FeatureErrorSpec(1, {0.0: [(0.0, 0.9), (1.0, 0.1)]})
        pts = enumerate_support(ErrorModel((b, a)), [0.0, 0.0])
        np.testing.assert_allclose([p.probability for p in pts], [0.63, 0.07, 0.27, 0.03],
                                   atol=1e-15)
        assert [tuple(p.x) for p in pts] == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_prunes_zero_branches(self):
        a = FeatureErrorSpec(0, {1.0: [(0.0, 0.0), (1.0, 1.0)]})
        assert len(enumerate_support(ErrorModel((a,)), [1.0])) == 1

    def test_exactly_max_support(self):
        specs = tuple(FeatureErrorSpec(j, {0.0: [(0.0, 0.5), (1.0, 0.5)]}) for j in range(12))
        pts = enumerate_support(ErrorModel(specs), np.zeros(12))
        assert len(pts) == 4096

    def test_overflow(self):
        specs = tuple(FeatureErrorSpec(j, {0.0: [(0.0, 0.5), (1.0, 0.5)]}) for j in range(13))
        with pytest.raises(SupportOverflowError, match="8192.*4096"):
            enumerate_support(ErrorModel(specs), np.zeros(13))

    def test_missing_observed_value(self):
        a = FeatureErrorSpec(1, {0.0: [(0.0, 1.0)]})
        with pytest.raises(DataError, match="feature 1"):
            enumerate_support(ErrorModel((a,)), [0.0, 0.5])

    def test_bad_table_rejected(self):
        with pytest.raises(ConfigError):
            FeatureErrorSpec(0, {0.0: [(0.0, 0.6), (1.0, 0.3)]})

    def test_joint_table(self):
        joint = {(0.0, 0.0): [((0.0, 0.0), 0.5), ((1.0, 1.0), 0.5)]}
        model = ErrorModel(joint_features=(0, 2), joint=joint)
        pts = enumerate_support(model, [0.0, 7.0, 0.0])
        assert [tuple(p.x) for p in pts] == [(0, 7, 0), (1, 7, 1)]


def random_model(rng, n_features=4):
    specs = []
    for j in rng.choice(n_features, size=rng.integers(1, n_features + 1), replace=False):
        table = {}
        for obs in (0.0, 1.0):
            k = int(rng.integers(1, 5))
            w = rng.random(k) + 1e-3
            w = w / w.sum()
            w[-1] = 1.0 - w[:-1].sum()
            table[obs] = [(float(v), float(p)) for v, p in zip(rng.normal(size=k), w)]
        specs.append(FeatureErrorSpec(int(j), table))
    return ErrorModel(tuple(specs))


class TestProperties:
    def test_random_models_sum_to_one(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            model = random_model(rng)
            obs = rng.integers(0, 2, size=4).astype(float)
            total = sum(p.probability for p in enumerate_support(model, obs))
            assert abs(total - 1.0) <= 1e-9

    def test_marginals_reproduce_tables(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            model = random_model(rng)
            obs = rng.integers(0, 2, size=4).astype(float)
            pts = enumerate_support(model, obs)
            for spec in model.specs:
                marg = defaultdict(float)
                for p in pts:
                    marg[p.x[spec.feature_index]] += p.probability
                for v, p in spec.outcomes(obs[spec.feature_index]):
                    assert abs(marg[v] - p) <= 1e-12

    def test_order_is_deterministic(self):
        rng = np.random.default_rng(1)
        model = random_model(rng)
        obs = np.ones(4)
        a = [tuple(p.x) for p in enumerate_support(model, obs)]
        b = [tuple(p.x) for p in enumerate_support(model, obs)]
        assert a == b


class TestFileFormat:
    def test_round_trip(self, tmp_path):
        model = ErrorModel((from_sensitivity_specificity(3, 0.64, 0.98, 0.9),
                            FeatureErrorSpec(0, {2.0: [(1.0, 0.25), (2.0, 0.75)]})), 128)
        model.save(tmp_path / "em.json")
        back = ErrorModel.load(tmp_path / "em.json")
        assert back == model

    def test_malformed_file(self, tmp_path):
        (tmp_path / "em.json").write_text('{"features": [{"feature_index": 0}]}')
        with pytest.raises(ConfigError):
            ErrorModel.load(tmp_path / "em.json")
