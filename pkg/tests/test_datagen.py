import math
import zlib

import mpmath
import numpy as np
import pytest
from scipy import stats

from nncusum.datagen import (
    PRESETS,
    CsvSchemaError,
    DistributionSpec,
    InvalidParameterError,
    build_sequence,
    exp1,
    ingest_csv,
    log_likelihood_ratio,
    ncx2_logpdf,
    preset,
    preset_pair,
    read_sequence_csv,
    shift_for_equal_mean,
    sparse_cov_shift,
    write_csv,
)

from oracles import gmm_marginal, scipy_marginal


@pytest.mark.parametrize("z", [1e-6, 0.01, 0.5, 1.0, 1.5, 3.0, 10.0, 40.0])
def test_exp1_against_mpmath(z):
    assert exp1(z) == pytest.approx(float(mpmath.e1(z)), rel=1e-13)


@pytest.mark.parametrize("df,nonc", [(0.5, 1.0), (0.5, 0.6), (3.0, 2.5), (1.0, 20.0)])
def test_ncx2_logpdf_against_scipy(df, nonc):
    x = np.array([1e-3, 0.1, 0.7, 2.0, 9.0, 30.0])
    np.testing.assert_allclose(ncx2_logpdf(x, df, nonc), stats.ncx2.logpdf(x, df, nonc), rtol=1e-8)


@pytest.mark.parametrize("name", sorted(PRESETS))
@pytest.mark.parametrize("phase", ["pre", "post"])
def test_first_coordinate_goodness_of_fit(name, phase):
    spec = preset(name, phase, dim=5)
    x = spec.sample(20000, np.random.default_rng(zlib.crc32(f"{name}:{phase}".encode())))[:, 0]
    law = gmm_marginal(name, phase) if PRESETS[name][0] == "gmm" else scipy_marginal(name, phase)
    assert stats.kstest(x, law.cdf).pvalue > 1e-3


@pytest.mark.parametrize("name", [n for n in sorted(PRESETS) if PRESETS[n][0] not in ("gmm",)])
@pytest.mark.parametrize("phase", ["pre", "post"])
def test_log_density_against_independent_formula(name, phase):
    spec = preset(name, phase, dim=5)
    x = spec.sample(50, np.random.default_rng(1))
    kind = PRESETS[name][0]
    if kind in ("gaussian_mean", "gaussian_cov"):
        mean = spec.coordinate_mean()
        cov = np.eye(5)
        if kind == "gaussian_cov" and phase == "post":
            cov = sparse_cov_shift(5, 0.1, [0])
        expected = stats.multivariate_normal(mean, cov).logpdf(x)
    elif kind == "log_gaussian":
        cov = np.eye(5) if phase == "pre" else 0.8 * np.eye(5) + 0.2
        expected = stats.multivariate_normal(np.zeros(5), cov).logpdf(np.log(x)) - np.log(x).sum(axis=1)
    elif kind == "noncentral_chisq":
        nonc = np.ones(5)
        if phase == "post":
            nonc[0] = 0.6
        expected = stats.ncx2.logpdf(x, 0.5, nonc).sum(axis=1)
    else:
        expected = scipy_marginal(name, phase).logpdf(x).sum(axis=1)
    np.testing.assert_allclose(spec.log_density(x), expected, rtol=1e-8)


def test_gmm_density_against_mixture_formula():
    spec = preset("gmm", "post", dim=3)
    x = spec.sample(40, np.random.default_rng(2))
    cov3 = 0.8 * np.eye(3) + 0.2
    dens = (
        stats.multivariate_normal(np.full(3, 2.0)).pdf(x)
        + stats.multivariate_normal(np.full(3, -2.0)).pdf(x)
        + stats.multivariate_normal(np.zeros(3), cov3).pdf(x)
    ) / 3
    np.testing.assert_allclose(spec.log_density(x), np.log(dens), rtol=1e-10)


@pytest.mark.parametrize("name", ["exponential_shift", "gamma_shift", "weibull_shift", "gompertz_shift"])
def test_shifted_families_keep_the_mean(name):
    pre, post = preset_pair(name, dim=1)
    rng = np.random.default_rng(3)
    m_pre, m_post = pre.coordinate_mean()[0], post.coordinate_mean()[0]
    assert m_post == pytest.approx(m_pre, rel=1e-12)
    for spec, m in ((pre, m_pre), (post, m_post)):
        est = spec.sample(10**6, rng).mean()
        assert abs(est - m) / m < 0.005


def test_gompertz_shift_value():
    p = {"shape": 1.0, "scale_pre": 1.5, "scale_post": 1.0}
    assert shift_for_equal_mean("gompertz_shift", p) == pytest.approx(0.5 * math.e * 0.21938393439552029)


def test_sparse_covariance_structure():
    cov = sparse_cov_shift(10, 0.1, [0, 5])
    expected = np.eye(10)
    expected[0, 5] = expected[5, 0] = 0.1
    np.testing.assert_allclose(cov, expected)
    spec = preset("gaussian_cov", "post", dim=10)
    x = spec.sample(200000, np.random.default_rng(4))
    np.testing.assert_allclose(np.cov(x, rowvar=False), expected, atol=0.02)


def test_log_gaussian_post_covariance_of_logs():
    spec = preset("log_gaussian", "post", dim=4)
    logs = np.log(spec.sample(200000, np.random.default_rng(5)))
    np.testing.assert_allclose(np.cov(logs, rowvar=False), 0.8 * np.eye(4) + 0.2, atol=0.02)


def test_support_and_llr_at_boundary():
    pre, post = preset_pair("exponential_shift", dim=3)
    x = np.array([[0.1, 1.0, 1.0], [1.0, 1.0, 1.0]])
    llr = log_likelihood_ratio(pre, post, x)
    assert llr[0] == -np.inf
    assert np.isfinite(llr[1])
    assert pre.support_lower() == 0.0 and post.support_lower() == pytest.approx(0.2)


def test_pareto_samples_respect_scale():
    x = preset("pareto", "post", dim=20).sample(1000, np.random.default_rng(0))
    assert x.min() >= 1.0


def test_invalid_parameters():
    with pytest.raises(InvalidParameterError):
        DistributionSpec("nope")
    with pytest.raises(InvalidParameterError):
        DistributionSpec("pareto", params={"shape_pre": -1.0})
    with pytest.raises(InvalidParameterError):
        DistributionSpec("gaussian_mean", params={"bogus": 1})
    with pytest.raises(InvalidParameterError):
        preset("missing", "pre")


def test_build_sequence_layout_and_reproducibility():
    pre, post = preset_pair("gaussian_mean", dim=2, delta=5.0)
    a = build_sequence(pre, post, 30, 50, seed=1)
    b = build_sequence(pre, post, 30, 50, seed=1)
    np.testing.assert_array_equal(a.data, b.data)
    assert a.labels.tolist() == [0] * 30 + [1] * 20
    assert a.data[30:, 0].mean() > 3
    only_post = build_sequence(pre, post, 0, 10, seed=2)
    assert only_post.labels.tolist() == [1] * 10
    with pytest.raises(ValueError):
        build_sequence(pre, post, 60, 50)


def test_csv_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(7, 3)) * 1e5
    labels = np.r_[np.zeros(3), np.ones(4)]
    path = tmp_path / "s.csv"
    write_csv(path, x, labels)
    seq = read_sequence_csv(path)
    np.testing.assert_array_equal(seq.data, x)
    assert seq.change_point == 3
    bg, tg = ingest_csv(path, label_column="label")
    np.testing.assert_array_equal(bg, x[:3])
    np.testing.assert_array_equal(tg, x[3:])


def test_csv_errors_name_the_problem(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,label\n1,2,0\n1,x,1\n")
    with pytest.raises(CsvSchemaError, match="row 2, column b"):
        ingest_csv(p, label_column="label")
    p.write_text("a,b,label\n1,2,0\n1,2,7\n")
    with pytest.raises(CsvSchemaError, match="unknown label"):
        ingest_csv(p, label_column="label")
    with pytest.raises(CsvSchemaError, match="missing column"):
        ingest_csv(p, feature_columns=["a", "c"], label_column="label")
    p.write_text("a,label\n1,1\n2,0\n")
    with pytest.raises(CsvSchemaError, match="exactly once"):
        read_sequence_csv(p)
    p.write_text("a,b\n1,nan\n")
    with pytest.raises(CsvSchemaError, match="non-finite"):
        read_sequence_csv(p)
