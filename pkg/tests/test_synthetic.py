import numpy as np
import pytest
from scipy.integrate import quad

from wfbounds.bayes_bounds import bayes_lower_bound, nn_error_cv, nn_upper_bound
from wfbounds.distances import MetricSpec
from wfbounds.synthetic import SyntheticKind, SyntheticSpec, analytic_bayes_error, generate, synthetic_traces


def integrated_bayes_error(densities, priors):
    # R* = integral of (sum_l prior_l f_l - max_l prior_l f_l) over the support
    lo = min(a for a, _ in (d[1] for d in densities))
    hi = max(b for _, b in (d[1] for d in densities))

    def loss(x):
        vals = [p * f(x) for p, (f, _) in zip(priors, densities)]
        return sum(vals) - max(vals)

    breaks = sorted({b for d in densities for b in d[1]})
    return quad(loss, lo, hi, points=breaks[1:-1], epsabs=1e-12, limit=200)[0]


def uniform(a, b):
    return (lambda x: 1.0 / (b - a) if a <= x <= b else 0.0), (a, b)


@pytest.mark.parametrize("shift", [0.0, 0.2, 0.5, 0.8, 1.0])
def test_uniform_overlap_matches_integration(shift):
    spec = SyntheticSpec(SyntheticKind.UNIFORM_OVERLAP, shift=shift)
    oracle = integrated_bayes_error([uniform(0, 1), uniform(shift, shift + 1)], [0.5, 0.5])
    assert analytic_bayes_error(spec) == pytest.approx(oracle, abs=1e-6)


def test_shift_point_eight_is_one_tenth():
    assert analytic_bayes_error(SyntheticSpec("uniform_overlap", shift=0.8)) == pytest.approx(0.1, abs=1e-15)


@pytest.mark.parametrize("gap,L", [(-0.5, 20), (-0.25, 4), (-0.1, 3)])
def test_overlapping_clouds_match_integration(gap, L):
    spec = SyntheticSpec("separated_clouds", labels=L, gap=gap)
    s = 1 + gap
    oracle = integrated_bayes_error([uniform(i * s, i * s + 1) for i in range(L)], [1 / L] * L)
    assert analytic_bayes_error(spec) == pytest.approx(oracle, abs=1e-6)


def test_identical_and_separated():
    assert analytic_bayes_error(SyntheticSpec("identical_classes", labels=2)) == 0.5
    assert analytic_bayes_error(SyntheticSpec("identical_classes", labels=5)) == 0.8
    assert analytic_bayes_error(SyntheticSpec("separated_clouds", labels=3)) == 0


def test_generate_shapes_and_supports():
    m = generate(SyntheticSpec("uniform_overlap", samples_per_label=500, shift=0.8, dimension=2))
    assert m.rows.shape == (1000, 2) and m.label_count == 2
    a, b = m.rows[:500, 0], m.rows[500:, 0]
    assert a.min() >= 0 and a.max() <= 1 and b.min() >= 0.8 and b.max() <= 1.8
    assert np.all((m.rows[:, 1] >= 0) & (m.rows[:, 1] <= 1))


def test_generate_is_seeded():
    s = SyntheticSpec("identical_classes", samples_per_label=50, seed=4)
    assert np.array_equal(generate(s).rows, generate(s).rows)
    assert not np.array_equal(generate(s).rows, generate(SyntheticSpec("identical_classes", samples_per_label=50, seed=5)).rows)


def test_identical_classes_share_distribution():
    m = generate(SyntheticSpec("identical_classes", samples_per_label=4000))
    a, b = m.rows[:4000, 0], m.rows[4000:, 0]
    assert abs(a.mean() - b.mean()) < 0.02


def test_separated_clouds_have_no_nn_error():
    m = generate(SyntheticSpec("separated_clouds", labels=4, samples_per_label=50, gap=3.0))
    assert nn_error_cv(m, MetricSpec())[0] == 0


def test_estimator_chain_sandwich():
    spec = SyntheticSpec("uniform_overlap", samples_per_label=5000, shift=0.8)
    r_star = analytic_bayes_error(spec)
    r_nn, _ = nn_error_cv(generate(spec), MetricSpec())
    assert r_star - 0.03 <= r_nn <= nn_upper_bound(r_star, 2) + 0.03
    assert bayes_lower_bound(r_nn, 2) <= r_star + 0.02


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "uniform_overlap", "labels": 3},
        {"kind": "uniform_overlap", "shift": 1.5},
        {"kind": "separated_clouds", "gap": -0.6},
        {"kind": "identical_classes", "labels": 1},
    ],
)
def test_invalid_generator_params(kwargs):
    with pytest.raises(ValueError):
        SyntheticSpec(**kwargs)


def test_synthetic_traces():
    ds = synthetic_traces(pages=3, instances=4, seed=1)
    assert len(ds) == 12 and ds.page_count == 3
    assert ds.names[0] == "p0-0"
    again = synthetic_traces(pages=3, instances=4, seed=1)
    assert ds == again
