from pathlib import Path

import numpy as np
import pytest
from scipy import stats as sps

from iwcv.datasets import (
    POSTERIORS,
    DomainPair,
    LabeledSet,
    OzoneConfig,
    bvn_cdf_posterior,
    dates_in_order,
    example1d_generate,
    load_domain_pair,
    ozone_load,
    ozone_prepare,
    product_posterior,
    read_feature_csv,
    read_ozone_csv,
    rejection_sample,
    save_domain_pair,
    synth2d_class_conditional,
    synth2d_generate,
    time_local_sample,
    true_densities,
)
from iwcv.stats_core import Gaussian1D, SeededStream

FIXTURE = Path(__file__).parent / "data" / "ozone_fixture.csv"


# --- containers ---------------------------------------------------------------------


def test_labeled_set_validation():
    s = LabeledSet(np.arange(3.0), [1, -1, 1])
    assert s.X.shape == (3, 1) and s.n == 3 and s.dim == 1
    with pytest.raises(ValueError):
        LabeledSet(np.zeros((3, 2)), [1, -1])
    with pytest.raises(ValueError):
        LabeledSet(np.zeros((2, 1)), [1, 0])
    with pytest.raises(ValueError):
        LabeledSet(np.array([[np.nan]]), [1])
    with pytest.raises(ValueError):
        DomainPair(LabeledSet(np.zeros((2, 1)), [1, 1]), LabeledSet(np.zeros((2, 2)), [1, 1]))


# --- synthetic generation -------------------------------------------------------------


def test_posteriors():
    X = np.array([[0.0, 0.0], [1.0, 2.0], [-1.0, 2.0]])
    assert np.allclose(product_posterior(X), sps.norm.cdf([0.0, 2.0, -2.0]))
    assert np.allclose(bvn_cdf_posterior(X)[0], 0.25)
    assert set(POSTERIORS) == {"bvn_cdf", "product"}


def test_synth2d_shapes_meta_and_reproducibility():
    pair = synth2d_generate(0.9, 50, 1000, SeededStream(3, 4))
    assert pair.source.X.shape == (50, 2) and pair.target.X.shape == (1000, 2)
    assert pair.meta == {"setting": "synthetic2d", "gamma": 0.9, "seed": 3, "stream_index": 4}
    again = synth2d_generate(0.9, 50, 1000, SeededStream(3, 4))
    assert np.array_equal(pair.source.X, again.source.X)
    assert np.array_equal(pair.target.y, again.target.y)
    with pytest.raises(ValueError):
        synth2d_generate(0.0, stream=SeededStream(0))
    with pytest.raises(ValueError):
        synth2d_generate(1.0)


def test_synth2d_distributions():
    pair = synth2d_generate(0.8, 40_000, 40_000, SeededStream(5, 0))
    xs, xt = pair.source.X, pair.target.X
    assert np.allclose(xs.mean(axis=0), [-1.0, 0.0], atol=0.02)
    assert np.allclose(np.cov(xs, rowvar=False), 0.64 * np.eye(2), atol=0.02)
    assert np.allclose(xt.mean(axis=0), [0.0, 0.0], atol=0.02)
    # label frequency matches the posterior in both domains
    for s in (pair.source, pair.target):
        assert np.mean(s.y == 1) == pytest.approx(product_posterior(s.X).mean(), abs=0.01)


def test_true_densities():
    pair = synth2d_generate(0.8, 5, 5, SeededStream(0))
    p_T, p_S = true_densities(pair)
    assert np.allclose(p_S.covariance, 0.64 * np.eye(2))
    e = example1d_generate(0.9, 5, 5, SeededStream(0))
    p_T, p_S = true_densities(e)
    assert p_S == Gaussian1D(-1.0, 0.9)
    with pytest.raises(ValueError):
        true_densities(DomainPair(e.source, e.target, {"setting": "ozone"}))


def test_rejection_sampler_ks():
    target = Gaussian1D(0.0, 1.0)
    proposal = Gaussian1D(0.0, 2.0)
    x = rejection_sample(target.pdf, proposal.pdf,
                         lambda n, rng: rng.normal(0.0, 2.0, n), 5000, SeededStream(1, 0))
    assert x.size == 5000
    assert sps.kstest(x, "norm").pvalue > 0.01


def test_rejection_sampler_uniform_envelope_ks():
    density = Gaussian1D().pdf
    x = rejection_sample(density, lambda v: np.full(len(v), 1 / 20),
                         lambda n, rng: rng.uniform(-10, 10, n), 10_000, SeededStream(1, 1),
                         bound=20 * density(0.0))
    assert sps.kstest(x, "norm").statistic < 1.36 / np.sqrt(x.size)


def test_rejection_sampler_rejects_useless_envelope():
    narrow = Gaussian1D(50.0, 0.01)
    with pytest.raises(ValueError, match="acceptance"):
        rejection_sample(narrow.pdf, Gaussian1D().pdf, lambda n, rng: rng.normal(size=n), 10,
                         SeededStream(0), bound=1.0)


def test_class_conditional_sampling():
    x = synth2d_class_conditional(1.0, +1, "target", 4000, SeededStream(2, 0))
    assert x.shape == (4000, 2)
    # y = +1 under Phi(x1 x2) favours quadrants where x1 and x2 share a sign
    assert np.mean(x[:, 0] * x[:, 1] > 0) > 0.6
    neg = synth2d_class_conditional(1.0, -1, "source", 4000, SeededStream(2, 1))
    assert np.mean(neg[:, 0] * neg[:, 1] < 0) > 0.6


# --- ozone ingestion ------------------------------------------------------------------


def test_read_ozone_fixture():
    dates, X, y, dropped = read_ozone_csv(FIXTURE)
    lines = FIXTURE.read_text().splitlines()
    assert dropped == sum("?" in line for line in lines) == 12
    assert X.shape == (len(lines) - 12, 72)
    assert set(np.unique(y)) == {-1.0, 1.0}
    assert dates[0] == "1/1/1998"


def write(tmp_path, text):
    p = tmp_path / "oz.csv"
    p.write_text(text)
    return p


def test_read_ozone_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_ozone_csv(tmp_path / "missing.csv")
    with pytest.raises(ValueError, match=":2: expected 4 fields"):
        read_ozone_csv(write(tmp_path, "d,1,2,0\nd,1,0\n"))
    with pytest.raises(ValueError, match="label must be 0 or 1"):
        read_ozone_csv(write(tmp_path, "d,1,2,3\n"))
    with pytest.raises(ValueError, match=":1:"):
        read_ozone_csv(write(tmp_path, "d,x,2,1\n"))
    with pytest.raises(ValueError, match="no complete rows"):
        read_ozone_csv(write(tmp_path, "d,?,2,1\n"))


def test_ozone_prepare_and_load():
    cfg = OzoneConfig(str(FIXTURE), n_components=5, per_class_draws=15, gamma=0.2)
    table = ozone_prepare(cfg)
    assert table.X.shape == (188, 5)
    assert np.allclose(table.X.mean(axis=0), 0.0, atol=1e-12)
    pair = ozone_load(cfg, SeededStream(0, 2))
    idx = np.array(pair.meta["source_indices"])
    assert pair.source.n == 30 and pair.target.n == 188
    assert np.array_equal(pair.source.X, table.X[idx])
    assert pair.meta["setting"] == "ozone"


def test_dates_in_order():
    assert dates_in_order(["1/1/1998", "1/2/1998", "2/1/1998"]) is True
    assert dates_in_order(["1/2/1998", "1/1/1998"]) is False
    assert dates_in_order(["not a date"]) is None
    assert dates_in_order(read_ozone_csv(FIXTURE)[0]) is True


def test_ozone_config_validation():
    for kw in ({"n_components": 0}, {"per_class_draws": 0}, {"gamma": 0.0}, {"gamma": 1.5}):
        with pytest.raises(ValueError):
            OzoneConfig("x.csv", **kw)


def test_time_local_sample_properties():
    labels = np.tile([1.0, -1.0, -1.0], 100)
    idx = time_local_sample(labels, 20, 0.05, SeededStream(0, 0))
    assert np.all(np.diff(idx) > 0)
    assert np.sum(labels[idx] == 1) == 20 and np.sum(labels[idx] == -1) == 20
    # small scale concentrates the draw near the start
    assert idx.mean() < time_local_sample(labels, 20, 1.0, SeededStream(0, 0)).mean()
    with pytest.raises(ValueError, match="fewer than"):
        time_local_sample(labels, 150, 0.5, SeededStream(0))


# --- serialisation ----------------------------------------------------------------------


def test_domain_pair_round_trip(tmp_path):
    pair = synth2d_generate(0.9, 12, 30, SeededStream(1, 1))
    save_domain_pair(pair, tmp_path / "pair", extra_meta={"note": "x"})
    back = load_domain_pair(tmp_path / "pair")
    assert np.array_equal(back.source.X, pair.source.X)
    assert np.array_equal(back.target.y, pair.target.y)
    assert back.meta["note"] == "x" and back.meta["gamma"] == 0.9
    assert np.array_equal(read_feature_csv(tmp_path / "pair" / "source.csv"), pair.source.X)
