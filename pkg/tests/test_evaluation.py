"""TPR/TNR, ROC assembly, AUC, diagnostics, and the benchmark harness."""

import numpy as np
import pytest

from mndelta import (
    BenchmarkConfig,
    Dataset,
    DeltaParams,
    FeatureMap,
    FeatureTensor,
    RocCurve,
    auc,
    build_edge_set,
    diagnose_assumptions,
    eval_features,
    illustrative_recovery,
    lambda_grid,
    lambda_max,
    lattice_change_pair,
    reg_path,
    roc_from_path,
    run_benchmark,
    sample_gaussian,
    tpr_tnr,
    true_delta,
)
from mndelta.evaluation import _trial_seeds
from mndelta.exceptions import DataError, ShapeError


def _truth(m, active):
    es = build_edge_set(m)
    vals = np.zeros(es.n_edges)
    for u, v in active:
        vals[es.index_of(u, v)] = 1.0
    return DeltaParams(edge_set=es, values=vals)


def _estimate(m, active):
    return _truth(m, active)


# ------------------------------------------------------------- tpr / tnr


def test_rates_perfect_recovery():
    truth = _truth(4, [(2, 1), (4, 3)])
    r = tpr_tnr(_estimate(4, [(2, 1), (4, 3)]), truth)
    assert r == (1.0, 1.0)


def test_rates_all_zero_estimate():
    truth = _truth(4, [(2, 1)])
    r = tpr_tnr(DeltaParams.zeros(truth.edge_set), truth)
    assert r == (0.0, 1.0)


def test_rates_counting_example():
    # |S| = 6 over m=50 (1275 edges, |S^c| = 1269); estimate hits 3 of the
    # 6 and adds 2 false edges
    s = [(10, 1), (20, 2), (30, 3), (40, 4), (50, 5), (25, 6)]
    truth = _truth(50, s)
    est = _estimate(50, s[:3] + [(11, 7), (12, 8)])
    r = tpr_tnr(est, truth)
    assert r.tpr == pytest.approx(0.5)
    assert r.tnr == pytest.approx(1267 / 1269)


def test_rates_matrix_estimate():
    truth = _truth(3, [(2, 1)])
    mat = np.zeros((3, 3))
    mat[1, 0] = mat[0, 1] = -0.7
    mat[2, 2] = 0.3  # false positive on a self-pair
    r = tpr_tnr(mat, truth)
    assert r.tpr == 1.0
    assert r.tnr == pytest.approx(4 / 5)


def test_rates_undefined_sets():
    es = build_edge_set(3)
    empty_truth = DeltaParams.zeros(es)
    r = tpr_tnr(DeltaParams.zeros(es), empty_truth)
    assert r.tpr is None  # S empty
    assert r.tnr == 1.0
    full = DeltaParams(edge_set=es, values=np.ones(es.n_edges))
    r2 = tpr_tnr(full, full)
    assert r2.tnr is None  # S^c empty
    assert r2.tpr == 1.0


def test_rates_reject_wrong_shapes():
    truth = _truth(3, [(2, 1)])
    with pytest.raises(ShapeError):
        tpr_tnr(np.zeros((4, 4)), truth)
    other = DeltaParams.zeros(build_edge_set(3, [(2, 1)]))
    with pytest.raises(ShapeError):
        tpr_tnr(other, truth)


# ------------------------------------------------------------------- roc


def test_roc_from_sweep_dedupes_fpr():
    # m=3, S = {(2,1), (3,2)}: |S^c| = 4, so one false edge is fpr 0.25
    truth = _truth(3, [(2, 1), (3, 2)])
    path = [
        (1.0, DeltaParams.zeros(truth.edge_set)),          # (0, 0)
        (0.5, _estimate(3, [(2, 1), (3, 2)])),             # (0, 1): dominates (0, 0)
        (0.2, _estimate(3, [(2, 1), (3, 2), (3, 1)])),     # (0.25, 1)
        (0.1, _estimate(3, [(3, 1)])),                     # (0.25, 0): dominated
    ]
    curve = roc_from_path(path, truth)
    assert curve.points.tolist() == [[0.0, 1.0], [0.25, 1.0]]
    # the parameter kept at each fpr is the one that achieved the max tpr
    assert curve.params.tolist() == [0.5, 0.2]


def test_roc_needs_defined_rates():
    es = build_edge_set(3)
    with pytest.raises(DataError):
        roc_from_path([(1.0, DeltaParams.zeros(es))], DeltaParams.zeros(es))
    with pytest.raises(DataError):
        roc_from_path([], _truth(3, [(2, 1)]))


def test_auc_pins_endpoints():
    curve = RocCurve(points=np.array([[0.0, 1.0]]), params=np.array([1.0]), sweep="lambda")
    assert auc(curve) == 1.0
    diag = RocCurve(points=np.empty((0, 2)), params=np.empty(0), sweep="lambda")
    assert auc(diag) == pytest.approx(0.5)


def test_auc_merges_staircase():
    pts = np.array([[0.25, 0.5], [0.5, 0.75]])
    curve = RocCurve(points=pts, params=np.zeros(2), sweep="tau")
    # trapezoids: (0,0)->(.25,.5)->(.5,.75)->(1,1)
    want = 0.25 * 0.25 + 0.25 * 0.625 + 0.5 * 0.875
    assert auc(curve) == pytest.approx(want)


def test_auc_order_invariance():
    rng = np.random.default_rng(0)
    pts = np.sort(rng.random((8, 2)), axis=0)
    a1 = auc(RocCurve(points=pts, params=np.zeros(8), sweep="tau"))
    perm = rng.permutation(8)
    a2 = auc(RocCurve(points=pts[perm], params=np.zeros(8), sweep="tau"))
    assert a1 == pytest.approx(a2, rel=1e-15)


def test_roc_curve_validation():
    with pytest.raises(DataError):
        RocCurve(points=np.array([[0.0, 1.5]]), params=np.array([1.0]), sweep="tau")
    with pytest.raises(ShapeError):
        RocCurve(points=np.array([[0.0, 1.0]]), params=np.array([1.0, 2.0]), sweep="tau")


# ----------------------------------------------------------- diagnostics


def _fisher_setup(seed=0, n=200):
    mp, mq = lattice_change_pair(3, 3, seed=seed)
    dstar = true_delta(mp.theta, mq.theta)
    xq = sample_gaussian(mq, n, seed=seed + 1)
    fq = eval_features(xq, build_edge_set(9), FeatureMap.product())
    return dstar, fq


def test_diagnose_reports_positive_margins():
    dstar, fq = _fisher_setup()
    rec = diagnose_assumptions(dstar, fq)
    assert rec.n_support == 3
    assert rec.width == 45
    assert not rec.singular
    assert rec.dependency_ok and rec.lambda_min > 0
    assert rec.alpha is not None


def test_diagnose_alpha_approaches_one_for_uncorrelated_features():
    # iid feature columns: the information matrix tends to the identity, so
    # the incoherence margin should rise toward 1 with the sample size
    es = build_edge_set(5)
    support = ((2, 1), (4, 3), (5, 5))
    dstar = DeltaParams.zeros(es)
    recs = []
    for n in (200, 20000):
        rng = np.random.default_rng(61)
        fq = FeatureTensor(
            values=rng.normal(size=(n, es.n_edges)),
            edge_set=es,
            feature_map=FeatureMap.product(),
        )
        recs.append(diagnose_assumptions(dstar, fq, support=support))
    assert recs[1].alpha > recs[0].alpha
    assert recs[1].alpha > 0.9
    assert recs[1].lambda_min > 0.95


def test_diagnose_alpha_invariant_to_support_order():
    dstar, fq = _fisher_setup(seed=5)
    sup = list(dstar.support())
    a = diagnose_assumptions(dstar, fq, support=sup)
    b = diagnose_assumptions(dstar, fq, support=sup[::-1])
    assert a.alpha == b.alpha
    assert a.lambda_min == b.lambda_min


def test_diagnose_singular_block_flagged_not_raised():
    dstar, fq = _fisher_setup()
    # two identical samples: rank-deficient information for a big support
    tiny = Dataset(samples=np.ones((2, 9)))
    fq_tiny = eval_features(tiny, build_edge_set(9), FeatureMap.product())
    rec = diagnose_assumptions(dstar, fq_tiny, support=[(u, u) for u in range(1, 10)])
    assert rec.singular
    assert rec.alpha is None
    assert not rec.dependency_ok


def test_diagnose_empty_support_rejected():
    dstar, fq = _fisher_setup()
    with pytest.raises(DataError):
        diagnose_assumptions(DeltaParams.zeros(dstar.edge_set), fq)


def test_diagnose_unknown_support_edge_rejected():
    dstar, fq = _fisher_setup()
    small = eval_features(
        Dataset(samples=np.random.default_rng(0).normal(size=(10, 9))),
        build_edge_set(9, [(2, 1)]),
        FeatureMap.product(),
    )
    with pytest.raises(DataError):
        diagnose_assumptions(dstar, small, support=[(9, 8)])


# ------------------------------------------------------------- benchmark


def test_trial_seeds_stable_and_distinct():
    a = _trial_seeds(1, 9, 0)
    assert a == _trial_seeds(1, 9, 0)
    assert a != _trial_seeds(1, 9, 1)
    assert a != _trial_seeds(1, 16, 0)
    assert a != _trial_seeds(2, 9, 0)


def test_benchmark_config_validation():
    with pytest.raises(DataError):
        BenchmarkConfig(dims=(10,))  # not a perfect square
    with pytest.raises(DataError):
        BenchmarkConfig(methods=("oracle",))
    with pytest.raises(DataError):
        BenchmarkConfig(trials=0)
    with pytest.raises(DataError):
        BenchmarkConfig(n_samples=1)


def _tiny_config(**kw):
    base = dict(
        methods=("kliep", "cp"),
        dims=(9,),
        trials=3,
        seed=5,
        n_samples=40,
        lambda_grid_size=8,
        tau_grid_size=8,
    )
    base.update(kw)
    return BenchmarkConfig(**base)


def test_benchmark_serial_runs_and_summarizes():
    res = run_benchmark(_tiny_config(), jobs=1)
    assert res.n_tasks == 3
    assert not res.failures
    assert len(res.records) == 6  # 3 trials x 2 methods
    for key in ("kliep/m=9", "cp/m=9"):
        assert res.summary[key]["n_ok"] == 3
        assert 0.0 <= res.summary[key]["auc_mean"] <= 1.0
    # sorted record order: method iteration within (m, trial)
    keys = [(r.m, r.trial) for r in res.records]
    assert keys == sorted(keys)


def test_benchmark_parallel_matches_serial():
    cfg = _tiny_config()
    serial = run_benchmark(cfg, jobs=1)
    parallel = run_benchmark(cfg, jobs=2)
    assert serial.summary == parallel.summary
    assert serial.records == parallel.records
    assert serial.failures == parallel.failures


def test_benchmark_is_deterministic_across_calls():
    cfg = _tiny_config()
    r1 = run_benchmark(cfg)
    r2 = run_benchmark(cfg)
    assert r1.records == r2.records


def test_roc_from_solver_path_is_a_staircase():
    model_p, model_q = lattice_change_pair(3, 3, seed=4)
    es = build_edge_set(9)
    fmap = FeatureMap.product()
    fp = eval_features(sample_gaussian(model_p, 150, 5), es, fmap)
    fq = eval_features(sample_gaussian(model_q, 150, 6), es, fmap)
    truth = true_delta(model_p.theta, model_q.theta)
    path = reg_path(fp, fq, lambda_grid(lambda_max(fp, fq), size=15))
    curve = roc_from_path(path, truth)
    assert len(curve.points) >= 5
    assert 0.5 < auc(curve) <= 1.0


# -------------------------------------------------------- recovery demo


def test_recovery_demo_active_set_shrinks_with_alpha():
    out = illustrative_recovery(seed=7, alphas=(0.75, 1.0, 1.25))
    records = out["records"]
    assert [r["alpha"] for r in records] == [0.75, 1.0, 1.25]
    actives = [r["n_active"] for r in records]
    # heavier penalty never grows the active set
    assert actives == sorted(actives, reverse=True)
    assert actives[-1] > 0
    for rec in records:
        assert rec["lambda"] == pytest.approx(rec["alpha"] * np.log(50) / 500)
        assert 0.0 <= rec["tpr"] <= 1.0
        assert 0.0 <= rec["tnr"] <= 1.0
        assert len(rec["delta"].support()) == rec["n_active"]
    assert out["truth"].support() != ()
    assert set(out["seeds"]) == {"pair", "sample_p", "sample_q"}
