import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swaybench.errors import DimensionError, StatisticsError
from swaybench.scoring import (ReferenceStats, cdf_position, distances, expand_frf, fit_reference,
                               regularize, score)
from swaybench.spectral import BandPlan, Frf, WeightVector, default_band_plan

PLAN = default_band_plan()


def make_ref(sigma=None, weights=None, mu=None, scores=()):
    p = 22
    return ReferenceStats(
        PLAN,
        np.zeros(p) if mu is None else mu,
        np.eye(p) if sigma is None else sigma,
        WeightVector(np.ones(11) if weights is None else weights),
        sample_scores=np.asarray(scores, float),
    )


def random_frfs(n, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=22)
    mix = rng.normal(size=(22, 22)) * 0.2
    return [Frf.from_real(base + mix @ rng.normal(size=22), PLAN) for _ in range(n)]


def test_expand_layout():
    frf = Frf(np.arange(11) + 1j * (np.arange(11) + 100), PLAN)
    v = expand_frf(frf)
    assert v.shape == (22,)
    assert np.array_equal(v[:11], np.arange(11))
    assert np.array_equal(v[11:], np.arange(11) + 100)


def test_score_at_mean_is_zero():
    frfs = random_frfs(40)
    ref = fit_reference(frfs, WeightVector(np.linspace(2, 1, 11)))
    d, m = distances(Frf.from_real(ref.mu, PLAN), ref)
    assert d <= 1e-12 and m <= 1e-12


def test_identity_covariance_gives_euclidean_norm():
    rng = np.random.default_rng(3)
    v = rng.normal(size=22)
    d, m = distances(Frf.from_real(v, PLAN), make_ref())
    assert d == pytest.approx(np.linalg.norm(v), abs=1e-12)
    assert m == pytest.approx(np.linalg.norm(v), abs=1e-12)


def test_weights_scale_components():
    w = np.ones(11)
    w[0] = 4.0  # normalised: 1 for band 0, 0.25 elsewhere
    v = np.zeros(22)
    v[1] = 2.0
    d, m = distances(Frf.from_real(v, PLAN), make_ref(weights=w))
    assert d == pytest.approx(0.5)
    assert m == pytest.approx(2.0)


@settings(max_examples=100, deadline=None)
@given(
    diag=st.lists(st.floats(1e-3, 1e3), min_size=22, max_size=22),
    w=st.lists(st.floats(0.0, 10.0), min_size=11, max_size=11).filter(lambda x: max(x) > 0),
    delta=st.lists(st.floats(-1e3, 1e3), min_size=22, max_size=22),
)
def test_weighted_score_bounded_for_diagonal_covariance(diag, w, delta):
    ref = make_ref(sigma=np.diag(diag), weights=w)
    d, m = distances(Frf.from_real(np.array(delta), PLAN), ref)
    assert d <= m * (1 + 1e-12) + 1e-300


def test_cdf_counts_strictly_below_and_ties():
    ref = make_ref(scores=[1.0, 2.0, 2.0, 3.0])
    cdf, lo, hi = cdf_position(2.0, ref, 500, seed=1)
    assert cdf == 0.25
    assert 0.0 <= lo <= cdf <= hi <= 1.0
    assert cdf_position(10.0, ref, 10)[0] == 1.0
    assert cdf_position(0.5, ref, 10)[0] == 0.0


def test_bootstrap_is_seeded():
    ref = make_ref(scores=np.linspace(0, 5, 38))
    assert cdf_position(2.2, ref, 300, seed=7) == cdf_position(2.2, ref, 300, seed=7)


def test_score_report():
    ref = make_ref(scores=[0.5, 1.0, 1.5])
    rep = score(Frf.from_real(np.r_[1.0, np.zeros(21)], PLAN), ref, n_bootstrap=100)
    assert rep.score_d == pytest.approx(1.0)
    assert rep.cdf == pytest.approx(1 / 3)
    assert rep.n_ties == 1
    assert score(Frf.from_real(np.zeros(22), PLAN), make_ref()).cdf is None


def test_cdf_without_population():
    with pytest.raises(StatisticsError):
        cdf_position(1.0, make_ref(), 10)


def test_regularize_singular():
    sigma = np.zeros((22, 22))
    sigma[0, 0] = 2.0
    reg, ridge = regularize(sigma)
    assert ridge == pytest.approx(1e-6 * 2.0 / 22)
    assert np.linalg.eigvalsh(reg).min() > 0
    zero, ridge0 = regularize(np.zeros((4, 4)))
    assert ridge0 == 1e-6
    same, none = regularize(np.eye(4))
    assert none == 0.0 and same is not None


def test_fit_reference_small_population_is_regularised():
    ref = fit_reference(random_frfs(5), WeightVector(np.ones(11)))
    assert ref.ridge > 0
    assert ref.n_subjects == 5
    assert np.all(ref.sample_scores >= 0)


def test_fit_reference_errors():
    with pytest.raises(StatisticsError):
        fit_reference(random_frfs(1), WeightVector(np.ones(11)))
    other = BandPlan(PLAN.f_peak, tuple((i,) for i in range(11)) + (tuple(range(11, 25)),))
    mixed = random_frfs(2) + [Frf(np.ones(12), other)]
    with pytest.raises(DimensionError):
        fit_reference(mixed, WeightVector(np.ones(11)))


def test_reference_validation():
    with pytest.raises(StatisticsError):
        make_ref(sigma=-np.eye(22))
    bad = np.eye(22)
    bad[0, 1] = 0.5
    with pytest.raises(StatisticsError):
        make_ref(sigma=bad)
    with pytest.raises(DimensionError):
        make_ref(mu=np.zeros(20))


def test_reference_roundtrip(tmp_path):
    ref = fit_reference(random_frfs(30), WeightVector(np.linspace(3, 1, 11)), {"source": "test"})
    path = ref.save(tmp_path / "ref.json")
    back = ReferenceStats.load(path)
    assert np.array_equal(back.mu, ref.mu)
    assert np.array_equal(back.sigma, ref.sigma)
    assert np.array_equal(back.sample_scores, ref.sample_scores)
    assert back.provenance == {"source": "test"}
    frf = random_frfs(1, seed=9)[0]
    assert distances(frf, back) == distances(frf, ref)
    assert path.read_text() == back.save(tmp_path / "again.json").read_text()
