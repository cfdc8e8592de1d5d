import json
import math

import numpy as np
import pytest
from scipy import stats

from prwlab.experiments import (CenteringTables, ExperimentConfig,
                                ExperimentError, _exact_vj, gaussian_samples,
                                ks_two_sample, run, run_decomposition,
                                run_fdd, run_first_gen_flt,
                                run_self_similarity, simulate_replicas,
                                trend_verdict)
from prwlab.models import make_model

EXP_EXP = make_model({"kind": "exponential", "rate": 1},
                     {"kind": "exponential", "rate": 1})
PARETO15 = make_model({"kind": "pareto", "alpha": 1.5, "x_m": 1},
                      {"kind": "exponential", "rate": 1}, gamma=1.45)


def test_ks_two_sample_small_examples():
    d, _ = ks_two_sample([1.0, 2.0, 3.0], [1.5, 2.5, 3.5])
    assert d == pytest.approx(1.0 / 3.0)
    d, p = ks_two_sample([0.0] * 10, [1.0] * 10)  # disjoint supports
    assert d == pytest.approx(1.0) and p < 1e-3
    with pytest.raises(ExperimentError):
        ks_two_sample([], [1.0])


def test_ks_two_sample_matches_scipy():
    rng = np.random.default_rng(3)
    a = rng.normal(size=800)
    b = rng.normal(0.1, 1.1, size=600)
    d, p = ks_two_sample(a, b)
    ref = stats.ks_2samp(a, b, method="asymp")
    assert d == pytest.approx(ref.statistic, abs=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=0.2, abs=5e-3)


def test_trend_verdict():
    assert trend_verdict([0.30, 0.20, 0.10])
    assert trend_verdict([0.10, 0.11])          # within 15% slack
    assert not trend_verdict([0.10, 0.20])
    assert not trend_verdict([0.10, 0.08, 0.12])
    with pytest.raises(ExperimentError):
        trend_verdict([0.1])


def test_gaussian_samples_moments_and_determinism():
    x = gaussian_samples(200_000, seed=4, sd=2.0)
    assert abs(x.mean()) <= 0.02
    assert np.var(x) == pytest.approx(4.0, rel=0.02)
    assert np.array_equal(x, gaussian_samples(200_000, seed=4, sd=2.0))


def test_config_validation():
    with pytest.raises(ExperimentError):
        ExperimentConfig(model=EXP_EXP, mode="bogus")
    with pytest.raises(ExperimentError):
        ExperimentConfig(model=EXP_EXP, centering="bogus")
    with pytest.raises(ExperimentError):
        ExperimentConfig(model=EXP_EXP, mode="fdd_baseline", replicas=10)
    with pytest.raises(ExperimentError):
        # cap for pareto 1.5 / gamma 1.45 is (gamma-1)/2 = 0.225
        ExperimentConfig(model=PARETO15, mode="fdd_main", j_exponent=0.3)
    cfg = ExperimentConfig(model=PARETO15, mode="fdd_main")
    assert cfg.j_exponent == pytest.approx(0.18)


def test_config_round_trip():
    cfg = ExperimentConfig(model=PARETO15, mode="fdd_main", t_grid=(100.0, 200.0),
                           u_points=(1.0,), replicas=150, limit_paths=120, seed=9)
    cfg2 = ExperimentConfig.from_dict(cfg.to_dict())
    assert cfg2.to_dict() == cfg.to_dict()


def test_exact_centering_values():
    assert _exact_vj(EXP_EXP, 5.0, 2) == pytest.approx(12.5)
    det = make_model({"kind": "deterministic", "value": 1},
                     {"kind": "deterministic", "value": 1})
    assert _exact_vj(det, 10.0, 2) == pytest.approx(45.0)
    assert _exact_vj(PARETO15, 10.0, 2) is None


def test_numeric_centering_agrees_with_exact():
    tables = CenteringTables(EXP_EXP)
    tabs = tables.ensure(10.0, 2, h=0.005)
    assert float(tabs["Vj"][1](10.0)) == pytest.approx(50.0, rel=0.01)
    # the vj accessor prefers the exact closed form when one exists
    assert tables.vj(10.0, 2) == pytest.approx(50.0, rel=1e-12)
    with pytest.raises(ExperimentError):
        CenteringTables(PARETO15).vj(10.0, 2, centering="exact_formula")


def test_replica_fanout_is_worker_invariant():
    c1, e1 = simulate_replicas(EXP_EXP, 20.0, 2, seed=6, n=64, workers=1)
    c2, e2 = simulate_replicas(EXP_EXP, 20.0, 2, seed=6, n=64, workers=2)
    assert np.array_equal(c1, c2) and e1 == e2
    # tiny cap: every replica of this supercritical tree breaches
    c3, e3 = simulate_replicas(EXP_EXP, 50.0, 2, seed=6, n=16, cap=5, workers=1)
    assert c3.shape[0] == 0 and e3 == list(range(16))


def _baseline_config(**kw):
    base = dict(model=EXP_EXP, mode="fdd_baseline", t_grid=(40.0, 60.0),
                u_points=(1.0,), j_fixed=2, replicas=120, limit_paths=150,
                seed=11, workers=1)
    base.update(kw)
    return ExperimentConfig(**base)


def test_fdd_report_is_byte_stable():
    a = run_fdd(_baseline_config())
    b = run_fdd(_baseline_config())
    c = run_fdd(_baseline_config(workers=2))
    ja = json.dumps(a.report, sort_keys=True)
    assert ja == json.dumps(b.report, sort_keys=True)
    assert ja == json.dumps(c.report, sort_keys=True)
    # timing lives outside the report
    assert "elapsed_s" in a.runinfo and "elapsed_s" not in ja


def test_fdd_report_contents():
    out = run_fdd(_baseline_config())
    cells = out.report["cells"]
    assert len(cells) == 2
    for cell in cells:
        assert not cell["precluded"]
        assert 0.0 <= cell["D"] <= 1.0 and 0.0 <= cell["p_value"] <= 1.0
        assert cell["n"] == 120
    assert set(out.samples) == {(40.0, 1.0), (60.0, 1.0)}
    assert out.report["trends"]["1"]["ok"] in (True, False)


def test_fdd_precludes_cells_beyond_cap():
    out = run_fdd(_baseline_config(cap=500, t_grid=(60.0,)))
    cell = out.report["cells"][0]
    # expected second-generation population t^2/2 = 1800 > 500
    assert cell["precluded"] and "exceeds cap" in cell["reason"]
    assert cell["D"] is None and out.report["trends"]["1"]["ok"] is None
    assert out.samples == {}


def test_single_generation_window_matches_first_generation_statistic():
    # with j(t) = 1 and u = 1 the windowed statistic reduces to the
    # first-generation one; only the centering tables differ in resolution
    common = dict(model=PARETO15, t_grid=(300.0,), u_points=(1.0,),
                  replicas=150, limit_paths=100, seed=13, workers=1)
    fdd = run_fdd(ExperimentConfig(mode="fdd_main", j_exponent=0.01, **common))
    flt = run_first_gen_flt(ExperimentConfig(mode="first_gen_flt", **common))
    a = fdd.samples[(300.0, 1.0)]
    b = flt.samples[(300.0, 1.0)]
    assert len(a) == len(b) == 150
    assert np.max(np.abs(a - b)) <= 0.02 * np.std(b)


def test_first_generation_report_fields():
    cfg = ExperimentConfig(model=PARETO15, mode="first_gen_flt", t_grid=(300.0,),
                           replicas=200, limit_paths=500, seed=2, workers=1)
    out = run_first_gen_flt(cfg)
    rep = out.report
    assert rep["n"] == 200 and rep["n_excluded"] == 0
    assert 0.0 <= rep["D"] <= 1.0
    assert rep["abs_mean_ratio"] > 0.0
    # V(t) = t/m plus a positive lower-order term of size O(t^{2-gamma})
    assert 300.0 / 3.0 <= rep["centering_value"] <= 300.0 / 3.0 + 30.0


def test_decomposition_rows_and_centering():
    cfg = ExperimentConfig(model=EXP_EXP, mode="decomposition", j_fixed=2,
                           t_grid=(20.0, 40.0), replicas=300, seed=8, workers=1)
    out = run_decomposition(cfg)
    rows = out.report["rows"]
    assert [r["t"] for r in rows] == [20.0, 40.0]
    for r in rows:
        assert r["martingale_variance"] > 0 and r["shot_noise_variance"] > 0
        # both parts are centered at zero
        assert abs(r["martingale_mean"]) <= 5 * math.sqrt(r["martingale_variance"] / 300)
        assert abs(r["shot_noise_mean"]) <= 5 * math.sqrt(r["shot_noise_variance"] / 300)
    assert out.report["martingale_variance_decreasing"] in (True, False)


def test_self_similarity_runs_and_reports():
    cfg = ExperimentConfig(model=PARETO15, mode="self_similarity",
                           u_points=(1.0,), limit_paths=400, seed=5, a_scale=2.0)
    out = run_self_similarity(cfg)
    rep = out.report
    assert rep["alpha"] == 1.5 and rep["a"] == 2.0
    assert 0.0 <= rep["D"] <= 1.0


def test_run_dispatcher_routes_by_mode():
    cfg = ExperimentConfig(model=PARETO15, mode="self_similarity",
                           u_points=(1.0,), limit_paths=200, seed=5)
    assert run(cfg).report["mode"] == "self_similarity"
    assert run(_baseline_config()).report["mode"] == "fdd_baseline"
