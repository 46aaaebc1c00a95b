import zlib

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from perceptbias.covariance import classical_vcov, cluster_robust_vcov
from perceptbias.design import ModelSpec, absorb_fixed_effects, build_design, hour_bin
from perceptbias.exceptions import (EmptySampleError, IdentificationError, InferenceError, SpecificationError,
                                   VarianceWarning)
from perceptbias.fitting import fit_linear_fe
from perceptbias.linear import LinearFixedEffects

from helpers import dummy_ls, random_frame

CONTROL_SETS = [(), ("location_time",), ("officer",), ("duration",), ("location_time", "officer", "duration")]


def tiny_frame(rows):
    """rows: (driver, r, y) triples."""
    recs = []
    for t, (d, r, y) in enumerate(rows):
        recs.append({"driver_id": d, "linkable": True, "state": "AZ", "stop_id": f"s{t:03d}",
                     "date": pd.Timestamp("2012-01-01") + pd.Timedelta(days=t), "hour": 10.0,
                     "county": "c", "officer_id": f"o{t % 2}",
                     "perceived_race": "hispanic" if r else "white", "searched": float(y),
                     "arrested": 0.0, "duration_minutes": 10.0})
    return pd.DataFrame(recs)


def test_hour_bins():
    assert hour_bin(14) == 4
    np.testing.assert_array_equal(hour_bin(np.arange(24)), np.repeat(np.arange(8), 3))


def test_two_driver_example():
    f = tiny_frame([("a", 0, 0), ("a", 1, 1), ("b", 0, 0), ("b", 1, 0)])
    res = fit_linear_fe(f)
    assert res.delta_hat == pytest.approx(0.5, abs=1e-12)
    assert res.delta_pp == pytest.approx(50.0)
    assert res.ci95 == pytest.approx((res.delta_hat - 1.96 * res.se_delta, res.delta_hat + 1.96 * res.se_delta))


def test_no_controls_means_no_control_columns(rng):
    d = build_design(random_frame(rng), ModelSpec())
    assert d.X.shape[1] == 0 and d.names == ["hispanic"]


def test_design_spec_errors(rng):
    co = random_frame(rng, state="CO")
    with pytest.raises(SpecificationError):
        build_design(co, ModelSpec(controls={"duration"}))
    tx = random_frame(rng, state="TX")
    with pytest.raises(SpecificationError):
        build_design(tx, ModelSpec(outcome="arrested"))
    with pytest.raises(SpecificationError):
        ModelSpec(controls={"weather"})


def test_listwise_deletion_counts_only_active_columns(rng):
    f = random_frame(rng)
    f.loc[f.index[:5], "county"] = None
    assert build_design(f, ModelSpec()).n_missing_dropped == 0
    assert build_design(f, ModelSpec(controls={"location_time"})).n_missing_dropped == 5


def test_single_stop_county_dropped_as_collinear():
    rows = [("a", 0, 0), ("a", 1, 1), ("b", 0, 1), ("b", 1, 0), ("c", 0, 0), ("c", 1, 1), ("d", 1, 1)]
    f = tiny_frame(rows)
    f["date"] = pd.Timestamp("2012-01-02")
    f["county"] = ["x", "x", "x", "x", "x", "x", "z_lonely"]
    spec = ModelSpec(controls={"location_time"})
    assert "county[z_lonely]" in build_design(f, spec).names
    res = fit_linear_fe(f, spec)
    assert res.collinear_dropped == ["county[z_lonely]"]
    assert res.n_singletons_dropped == 1


def test_county_with_one_stop_is_dropped(rng):
    f = random_frame(rng, n_drivers=20, max_stops=4)
    f = f[f.groupby("driver_id")["driver_id"].transform("size") > 1].copy()
    f["county"] = "common"
    f.loc[f.index[0], "county"] = "zz_single"
    spec = ModelSpec(controls={"location_time"})
    d = build_design(f, spec)
    full = np.column_stack([d.matrix, (d.driver_ids[:, None] == np.unique(d.driver_ids)).astype(float)])
    res = fit_linear_fe(f, spec)
    rank = np.linalg.matrix_rank(full)
    assert rank == full.shape[1] - len(res.collinear_dropped)


def test_treatment_constant_within_driver_is_identification_error():
    f = tiny_frame([("a", 0, 0), ("a", 0, 1), ("b", 1, 0), ("b", 1, 1)])
    with pytest.raises(IdentificationError, match="treatment collinear with fixed effects"):
        fit_linear_fe(f)


def test_only_singletons_is_empty_sample():
    f = tiny_frame([("a", 0, 0), ("b", 1, 1)])
    with pytest.raises(EmptySampleError):
        fit_linear_fe(f)


@pytest.mark.parametrize("controls", CONTROL_SETS)
@pytest.mark.parametrize("absorb", [True, False])
def test_fwl_against_dummy_regression(controls, absorb):
    rng = np.random.default_rng(zlib.crc32(repr((controls, absorb)).encode()))
    for _ in range(5):
        f = random_frame(rng, n_drivers=int(rng.integers(5, 40)))
        spec = ModelSpec(controls=set(controls), absorb_officer=absorb)
        oracle = dummy_ls(f, spec)
        if oracle is None:
            with pytest.raises(IdentificationError):
                fit_linear_fe(f, spec)
            continue
        assert abs(fit_linear_fe(f, spec).delta_hat - oracle) <= 1e-8


def test_absorb_fixed_effects_orthogonality(rng):
    f = random_frame(rng, n_drivers=40)
    d = absorb_fixed_effects(build_design(f, ModelSpec(controls={"officer", "location_time"})))
    cols = np.column_stack([d.y, d.r, d.X])
    for dim in d.spec.fe_dims:
        labels = d.fe[dim]
        for lv in np.unique(labels):
            ind = (labels == lv).astype(float)
            assert np.all(np.abs(ind @ cols) <= 1e-8 * np.maximum(np.linalg.norm(cols, axis=0), 1e-300))


def test_absorb_needs_a_dimension(rng):
    d = build_design(random_frame(rng), ModelSpec(estimator="conditional_logit"))
    with pytest.raises(SpecificationError):
        absorb_fixed_effects(d)


def test_scale_equivariance(rng):
    f = random_frame(rng, n_drivers=50)
    est = LinearFixedEffects()
    d = build_design(f, ModelSpec(controls={"location_time"}))
    a = est.fit(d.matrix, d.y, groups=d.fe_matrix(), clusters=d.clusters)
    c0, s0 = a.coef_[0], a.bse_[0]
    b = clone(est).fit(d.matrix, 100 * d.y, groups=d.fe_matrix(), clusters=d.clusters)
    assert b.coef_[0] == pytest.approx(100 * c0, rel=1e-12)
    assert b.bse_[0] == pytest.approx(100 * s0, rel=1e-12)
    from scipy.stats import norm

    p0 = 2 * norm.sf(abs(c0 / s0))
    p1 = 2 * norm.sf(abs(b.coef_[0] / b.bse_[0]))
    assert abs(p0 - p1) <= 1e-12


@given(st.integers(0, 2**32 - 1))
def test_order_invariance(seed):
    rng = np.random.default_rng(seed)
    f = random_frame(rng, n_drivers=25)
    spec = ModelSpec(controls={"location_time", "officer"})
    try:
        base = fit_linear_fe(f, spec).to_dict()
    except IdentificationError:
        return
    shuffled = f.sample(frac=1.0, random_state=int(rng.integers(2**31))).reset_index(drop=True)
    assert fit_linear_fe(shuffled, spec).to_dict() == base


def test_duplicated_clusters_leave_delta_unchanged(rng):
    f = random_frame(rng, n_drivers=30)
    dup = f.copy()
    dup["driver_id"] = dup["driver_id"] + "_copy"
    dup["stop_id"] = dup["stop_id"] + "_copy"
    a = fit_linear_fe(f)
    b = fit_linear_fe(pd.concat([f, dup], ignore_index=True))
    assert b.delta_hat == pytest.approx(a.delta_hat, abs=1e-12)


def test_singleton_clusters_match_hc1(rng):
    X = rng.normal(size=(50, 2))
    e = rng.normal(size=50)
    bread = np.linalg.inv(X.T @ X)
    V = cluster_robust_vcov(X, e, np.arange(50), 2, bread)
    hc1 = 50 / (50 - 2) * bread @ (X.T * e**2) @ X @ bread
    # with G = N the factor G/(G-1) * (N-1)/(N-k) is exactly HC1's N/(N-k)
    np.testing.assert_allclose(V, hc1, rtol=1e-12)


def test_vcov_symmetric_psd(rng):
    X = rng.normal(size=(60, 3))
    V = cluster_robust_vcov(X, rng.normal(size=60), rng.integers(0, 10, 60), 3)
    np.testing.assert_array_equal(V, V.T)
    assert np.linalg.eigvalsh(V).min() >= -1e-14


def test_vcov_errors(rng):
    X = rng.normal(size=(5, 1))
    with pytest.raises(InferenceError):
        cluster_robust_vcov(X, np.ones(5), np.zeros(5), 1)
    with pytest.raises(InferenceError):
        cluster_robust_vcov(X, np.ones(5), np.arange(5), 5)
    with pytest.raises(InferenceError):
        classical_vcov(np.ones(3), np.eye(1), 3)


def test_single_cluster_keeps_point_estimate():
    f = tiny_frame([("a", 0, 0), ("a", 1, 1), ("a", 1, 1), ("b", 0, 1)])
    with pytest.warns(VarianceWarning, match="at least 2 clusters"):
        res = fit_linear_fe(f)
    assert res.delta_hat == pytest.approx(1.0)
    assert np.isnan(res.se_delta) and np.isnan(res.p_value)


def test_clustered_close_to_classical_under_homoskedasticity():
    rng = np.random.default_rng(7)
    n_drivers, T = 5000, 3
    g = np.repeat(np.arange(n_drivers), T)
    r = rng.integers(0, 2, n_drivers * T).astype(float)
    y = rng.normal(size=n_drivers)[g] + 0.1 * r + rng.normal(size=n_drivers * T)
    cl = LinearFixedEffects().fit(r[:, None], y, groups=g)
    cla = LinearFixedEffects(cov_type="classical").fit(r[:, None], y, groups=g)
    assert abs(cl.bse_[0] / cla.bse_[0] - 1) < 0.10


def test_estimator_api(rng):
    est = LinearFixedEffects(cov_type="hc1")
    assert clone(est).get_params()["cov_type"] == "hc1"
    X = rng.normal(size=(40, 2))
    g = np.repeat(np.arange(10), 4)
    y = X @ [1.0, -2.0] + np.arange(10)[g] + 0.01 * rng.normal(size=40)
    est.fit(X, y, groups=g)
    np.testing.assert_allclose(est.coef_, [1.0, -2.0], atol=0.02)
    np.testing.assert_allclose(est.predict(X, g), y, atol=0.05)
    with pytest.raises(ValueError):
        LinearFixedEffects(cov_type="bogus").fit(X, y, groups=g)


def test_residuals_and_alpha_on_request():
    f = tiny_frame([("a", 0, 0), ("a", 1, 1), ("b", 0, 0), ("b", 1, 0), ("b", 0, 1)])
    res = fit_linear_fe(f, return_residuals=True)
    assert res.residuals is not None and len(res.residuals) == res.n_obs_used
    assert set(res.alpha) == {"a", "b"}
    assert fit_linear_fe(f).residuals is None


def test_thread_count_does_not_change_estimates():
    from threadpoolctl import threadpool_limits

    from perceptbias.fitting import fit_conditional_logit

    f = random_frame(np.random.default_rng(77), n_drivers=400)
    spec = ModelSpec(controls={"location_time", "officer"})
    clogit = ModelSpec(estimator="conditional_logit")
    with threadpool_limits(limits=1):
        one = (fit_linear_fe(f, spec), fit_conditional_logit(f, clogit))
    many = (fit_linear_fe(f, spec), fit_conditional_logit(f, clogit))
    for a, b in zip(one, many):
        assert abs(a.delta_hat - b.delta_hat) <= 1e-12
        assert abs(a.se_delta - b.se_delta) <= 1e-12
