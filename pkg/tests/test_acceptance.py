"""Acceptance suite: one test per acceptance criterion.

Each test prints a PASS line when it completes (the conftest terminal
summary also reports one line per criterion). Criteria 5 and 6 share one
module-scoped training fixture; everything else runs in seconds.
"""

import csv
import math
import time
from itertools import combinations
from pathlib import Path

import numpy as np
import pytest

from ctxflow import autodiff as ad
from ctxflow import bench
from ctxflow.autodiff import Tensor
from ctxflow.backbone import WindowSpec, window_samples
from ctxflow.context import (
    ContextManifest,
    build_contexts,
    encode_pois_tfidf,
    encode_temporal_position,
    parse_feature_selector,
    selector_label,
)
from ctxflow.datasets import (
    EffectConfig,
    LocationSet,
    PoiTable,
    aggregate_trips,
    chronological_split,
    synth_generate,
)
from ctxflow.fusion import ALL_TECHNIQUES, LATE_TECHNIQUES, FusionSpec, Pipeline
from ctxflow.graphs import build_graphs, normalize_adjacency, pearson
from ctxflow.training import FlowNormalizer, avg_normalized, build_split_data, mse_loss

FIXTURES = Path(__file__).parent / "fixtures"
DATASETS = ("bike", "metro", "ev")
INTERVALS = ("30", "60", "120")

# Entries of the published STMeta MAE table whose printed avgNMAE is
# arithmetically inconsistent with its own printed per-dataset cells (for
# NoContext at 60 minutes the bike and metro ratios alone sum to 2.360,
# so no third value could yield the printed 1.051). Asserted separately.
PUBLISHED_INCONSISTENT = {
    ("reference_techniques_stmeta.csv", "NoContext", "mae", "60"),
    ("reference_techniques_stmeta.csv", "LSTM-Add", "mae", "60"),
}


def _report(criterion: str):
    print(f"acceptance {criterion}: PASS")


def load_fixture(name: str):
    with open(FIXTURES / name) as fh:
        return list(csv.DictReader(fh))


# -- criterion 1: metric arithmetic oracle ---------------------------------------------


def test_criterion_1_metric_arithmetic_oracle():
    started = time.perf_counter()
    checked = 0
    for name in ("reference_techniques_stmgcn.csv", "reference_techniques_stmeta.csv"):
        rows = load_fixture(name)
        for metric in ("rmse", "mae"):
            for interval in INTERVALS:
                matrix = np.array(
                    [[float(r[f"{metric}_{ds}_{interval}"]) for ds in DATASETS] for r in rows])
                recomputed = avg_normalized(matrix)
                for row, value in zip(rows, recomputed):
                    if (name, row["technique"], metric, interval) in PUBLISHED_INCONSISTENT:
                        continue
                    printed = float(row[f"avgn{metric}_{interval}"])
                    assert value == pytest.approx(printed, abs=1e-3), (
                        f"{name} {row['technique']} {metric}@{interval}: "
                        f"recomputed {value:.4f}, printed {printed}")
                    checked += 1

    feature_rows = load_fixture("reference_features_30min.csv")
    for model in ("xgboost", "stmgcn", "stmeta"):
        subset = [r for r in feature_rows if r["model"] == model]
        matrix = np.array([[float(r[f"rmse_{ds}"]) for ds in DATASETS] for r in subset])
        for row, value in zip(subset, avg_normalized(matrix)):
            assert value == pytest.approx(float(row["avgnrmse"]), abs=1e-3)
            checked += 1

    # the two named spot values
    stmeta = {r["technique"]: r for r in load_fixture("reference_techniques_stmeta.csv")}
    matrix = np.array([[float(stmeta[t][f"rmse_{ds}_30"]) for ds in DATASETS]
                       for t in stmeta])
    raw_gating = avg_normalized(matrix)[list(stmeta).index("Raw-Gating")]
    assert raw_gating == pytest.approx(1.010, abs=1e-3)

    xgb = [r for r in feature_rows if r["model"] == "xgboost"]
    matrix = np.array([[float(r[f"rmse_{ds}"]) for ds in DATASETS] for r in xgb])
    holi_tp = avg_normalized(matrix)[[r["features"] for r in xgb].index("Holi-TP")]
    assert holi_tp == pytest.approx(1.001, abs=1e-3)

    elapsed = time.perf_counter() - started
    assert checked == 180 - len(PUBLISHED_INCONSISTENT) + 48
    assert elapsed < 1.0, f"metric oracle took {elapsed:.2f}s (budget 1s)"
    _report("criterion 1 (metric arithmetic oracle)")


@pytest.mark.xfail(strict=True, reason=(
    "published aggregate defect: the printed avgNMAE for these two STMeta "
    "60-minute rows cannot be reproduced from the printed per-dataset MAEs "
    "(for NoContext, 1.648/1.440 + 70.48/57.98 = 2.360 > 3 x 1.051 already); "
    "every other entry of the published tables reproduces within 1e-3"))
def test_criterion_1_published_inconsistencies():
    rows = {r["technique"]: r for r in load_fixture("reference_techniques_stmeta.csv")}
    matrix = np.array([[float(rows[t]["mae_" + ds + "_60"]) for ds in DATASETS] for t in rows])
    recomputed = avg_normalized(matrix)
    for technique in ("NoContext", "LSTM-Add"):
        printed = float(rows[technique]["avgnmae_60"])
        value = recomputed[list(rows).index(technique)]
        assert value == pytest.approx(printed, abs=1e-3)


# -- criterion 2: shape/assembly suite --------------------------------------------------


def all_feature_subsets():
    families = ("Wea", "Holi", "TP", "POIs")
    subsets = [()]
    for k in range(1, 5):
        subsets.extend(combinations(families, k))
    return ["None" if not s else "-".join(s) for s in subsets]


def test_criterion_2_shape_assembly_suite():
    started = time.perf_counter()
    window = WindowSpec()  # P = 17
    assert window.p == 17
    rng = np.random.default_rng(0)
    count = 0
    for interval in (30, 60, 120):
        slots_per_day = 1440 // interval
        for n in (4, 32):
            bundle = synth_generate(n, 2 * slots_per_day, interval,
                                    EffectConfig(holiday_rate=0.4), seed=11)
            for selector in all_feature_subsets():
                families = parse_feature_selector(selector)
                temporal, spatial = build_contexts(
                    bundle.flow, bundle.tables, bundle.locations, families,
                    (0, slots_per_day))
                manifest = ContextManifest.from_contexts(temporal, spatial)
                flow = rng.uniform(0.0, 1.0, (2, window.p, n, 1))
                context = rng.uniform(0.0, 1.0, (2, window.p, n, manifest.et + manifest.es))
                props = [np.eye(n), np.full((n, n), 1.0 / n)]
                for technique in ALL_TECHNIQUES:
                    pipeline = Pipeline(technique, manifest, window, hidden=8,
                                        n_graphs=2, seed=3)
                    out = pipeline.forward(flow, context, props)
                    assert out.shape == (2, n, 1)
                    assert np.all(np.isfinite(out.data))
                    count += 1
    elapsed = time.perf_counter() - started
    assert count == 15 * 16 * 3 * 2
    assert elapsed < 120.0, f"shape suite took {elapsed:.1f}s (budget 2min)"
    _report("criterion 2 (shape/assembly suite)")


# -- criterion 3: gradient suite ----------------------------------------------------------


def test_criterion_3_gradient_suite():
    started = time.perf_counter()
    rng = np.random.default_rng(0)
    manifest = ContextManifest(temporal=(("holiday", 1), ("temporal_position", 5)),
                               spatial=(("pois", 2),))
    window = WindowSpec(2, 1, 1)
    n = 3
    flow = rng.uniform(0, 1, (2, window.p, n, 1))
    context = rng.uniform(0, 1, (2, window.p, n, manifest.et + manifest.es))
    target = rng.uniform(0, 1, (2, n, 1))
    prop = np.eye(n) * 0.5 + np.full((n, n), 0.5 / n)

    worst = {}
    for technique in ALL_TECHNIQUES:
        spec = FusionSpec(technique, embed_dim=4, lstm_hidden=4,
                          family_dims=(("weather", 2), ("holiday", 1),
                                       ("temporal_position", 3), ("pois", 2)))
        pipeline = Pipeline(spec, manifest, window, hidden=4, n_graphs=1, seed=7)

        def loss():
            return mse_loss(pipeline.forward(flow, context, [prop]), Tensor(target))

        worst[technique] = ad.grad_check(loss, pipeline.parameters(), epsilon=1e-4)
        assert worst[technique] < 1e-4, f"{technique}: max rel err {worst[technique]:.2e}"

    # unit-level checks at the same tolerance
    from ctxflow.layers import ContextLSTM, GraphGRUCell
    from ctxflow.fusion import early_add, fuse_add, fuse_gating

    cell = GraphGRUCell(2, 3, rng)
    prop_t = Tensor(np.eye(3) * 0.5 + 0.5 / 3)
    xs = [Tensor(rng.normal(size=(3, 2))) for _ in range(2)]
    target_h = Tensor(rng.normal(size=(3, 3)))

    def gru_loss():
        hidden = Tensor(np.zeros((3, 3)))
        for x in xs:
            hidden = cell.step(hidden, x, prop_t)
        return mse_loss(hidden, target_h)

    assert ad.grad_check(gru_loss, cell.parameters(), epsilon=1e-4) < 1e-4

    lstm = ContextLSTM(3, 3, rng)
    seq = Tensor(rng.normal(size=(3, 2, 3)))
    target_l = Tensor(rng.normal(size=(2, 3)))
    assert ad.grad_check(lambda: mse_loss(lstm.run(seq), target_l),
                         lstm.parameters(), epsilon=1e-4) < 1e-4

    x_emb = Tensor(rng.normal(size=(3, 4)))
    e_emb = Tensor(rng.uniform(size=(3, 2)))
    w_x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    w_e = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    b1 = Tensor(np.zeros(4), requires_grad=True)
    t_add = Tensor(rng.normal(size=(3, 4)))
    assert ad.grad_check(lambda: mse_loss(fuse_add(x_emb, e_emb, w_x, w_e, b1), t_add),
                         [w_x, w_e, b1], epsilon=1e-5) < 1e-4

    w_g = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    b2 = Tensor(np.zeros(4), requires_grad=True)
    assert ad.grad_check(lambda: mse_loss(fuse_gating(x_emb, e_emb, w_g, b2), t_add),
                         [w_g, b2], epsilon=1e-5) < 1e-4

    e_early = Tensor(rng.uniform(size=(2, 3, 4)))
    x_early = Tensor(rng.uniform(size=(2, 3, 1)))
    w_ee = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    w_xx = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
    b_e = Tensor(np.zeros(3), requires_grad=True)
    t_early = Tensor(rng.normal(size=(2, 3, 3)))
    assert ad.grad_check(
        lambda: mse_loss(early_add(e_early, x_early, w_ee, w_xx, b_e), t_early),
        [w_ee, w_xx, b_e], epsilon=1e-5) < 1e-4

    elapsed = time.perf_counter() - started
    assert elapsed < 300.0, f"gradient suite took {elapsed:.1f}s (budget 5min)"
    _report(f"criterion 3 (gradient suite; worst end-to-end {max(worst.values()):.2e})")


# -- criterion 4: oracle equivalence -------------------------------------------------------


def test_criterion_4_oracle_equivalence():
    from datetime import datetime, timedelta

    started = time.perf_counter()
    rng = np.random.default_rng(9)

    # pearson vs direct formula
    for _ in range(20):
        x = rng.normal(size=12)
        y = rng.normal(size=12)
        dx, dy = x - x.mean(), y - y.mean()
        direct = (dx * dy).sum() / math.sqrt((dx * dx).sum() * (dy * dy).sum())
        assert pearson(x, y) == pytest.approx(direct, abs=1e-12)

    # TF-IDF vs brute force
    ids = tuple(f"L{i}" for i in range(5))
    locations = LocationSet(ids, rng.uniform(40, 42, (5, 2)))
    rows = [(ids[int(i)], cat, float(c)) for i, cat, c in
            zip(rng.integers(0, 4, 12), rng.choice(["a", "b", "c"], 12),
                rng.integers(1, 6, 12))]
    table = PoiTable(rows)
    got = encode_pois_tfidf(table, locations)
    categories = sorted({cat for _, cat, _ in rows})
    counts = np.zeros((5, len(categories)))
    for loc, cat, c in rows:
        counts[ids.index(loc), categories.index(cat)] += c
    expected = np.zeros_like(counts)
    for i in range(5):
        total = counts[i].sum()
        for j in range(len(categories)):
            tf = counts[i, j] / total if total else 0.0
            df = int((counts[:, j] > 0).sum())
            expected[i, j] = tf * (math.log(5 / df) if df else 0.0)
    np.testing.assert_allclose(got.values, expected, atol=1e-12)

    # adjacency normalization eigenvalue bound, dense oracle on N <= 10
    for n in range(2, 11):
        adjacency = (rng.uniform(size=(n, n)) < 0.4).astype(float)
        adjacency = np.triu(adjacency, 1)
        adjacency = adjacency + adjacency.T
        eigenvalues = np.linalg.eigvalsh(normalize_adjacency(adjacency))
        assert eigenvalues.min() >= -1.0 - 1e-12 and eigenvalues.max() <= 1.0 + 1e-12

    # window lag arithmetic
    assert WindowSpec().first_valid_target(60) == 672
    assert WindowSpec().first_valid_target(30) == 1344

    # half-open trip binning vs a direct recount
    start = datetime(2024, 1, 1)
    locations2 = LocationSet(("A", "B"), np.array([[41.0, -87.0], [41.1, -87.1]]))
    records = []
    for _ in range(200):
        records.append((("A", "B")[int(rng.integers(0, 2))],
                        start + timedelta(minutes=float(rng.uniform(0, 120)))))
    records.append(("A", start + timedelta(minutes=30)))  # exact boundary
    series, stats = aggregate_trips(records, locations2, 30, start, 4)
    recount = np.zeros((4, 2))
    for loc, ts in records:
        offset = (ts - start).total_seconds() / 60.0
        for t in range(4):
            if 30 * t <= offset < 30 * (t + 1):
                recount[t, ("A", "B").index(loc)] += 1
    np.testing.assert_array_equal(series.values, recount)
    assert stats.accepted == len(records)

    elapsed = time.perf_counter() - started
    assert elapsed < 60.0, f"oracle equivalence took {elapsed:.1f}s (budget 1min)"
    _report("criterion 4 (oracle equivalence)")


# -- criteria 5 and 6: synthetic end-to-end property and overhead ordering -----------------

ACCEPT_CONFIG = """
dataset.name = accept-synth
dataset.synth.n_locations = 20
dataset.synth.n_intervals = 1344
dataset.synth.seed = 7
dataset.synth.holiday_rate = 0.3
dataset.synth.holiday = -15
dataset.synth.diurnal = 10
dataset.synth.weekend = -5
dataset.synth.noise = 1.0
interval = 60
techniques = NoContext, Raw-Gating
features = Holi-TP
seeds = 1, 2, 3
backbone.hidden = 32
train.lr = 0.003
train.epochs = 80
train.patience = 12
"""


@pytest.fixture(scope="module")
def synthetic_runs(tmp_path_factory):
    """Training runs shared by criteria 5 and 6 (the expensive part)."""
    started = time.perf_counter()
    out = tmp_path_factory.mktemp("acceptance")
    config = bench.build_config(bench.parse_config_text(ACCEPT_CONFIG))
    dataset = bench.load_dataset(config)
    split, props, normalizer, samples = bench.prepare_dataset(config, dataset)
    prepared = bench.prepare_features(config, dataset, split, normalizer, samples, "Holi-TP")

    effect_rows = {}
    for technique in ("NoContext", "Raw-Gating"):
        for seed in config.seeds:
            effect_rows[(technique, seed)] = bench.run_cell(
                config, dataset, prepared, props, normalizer, technique, "Holi-TP", seed)

    # fixed-epoch runs for the time comparison: identical budgets everywhere
    overhead_config = bench.build_config(bench.parse_config_text(
        ACCEPT_CONFIG + "train.epochs = 3\ntrain.patience = 1000\n"))
    overhead_path = out / "overhead.csv"
    for technique in ("NoContext", "EarlyConcat") + LATE_TECHNIQUES:
        row = bench.run_cell(overhead_config, dataset, prepared, props, normalizer,
                             technique, "Holi-TP", 1)
        bench.append_result(overhead_path, row)
    return {
        "effect_rows": effect_rows,
        "overhead_path": overhead_path,
        "seeds": config.seeds,
        "seconds": time.perf_counter() - started,
    }


def test_criterion_5_context_beats_baseline_on_synthetic(synthetic_runs):
    rows = synthetic_runs["effect_rows"]
    improvements = []
    wins = 0
    for seed in synthetic_runs["seeds"]:
        baseline = rows[("NoContext", seed)].rmse
        gated = rows[("Raw-Gating", seed)].rmse
        improvements.append(baseline - gated)
        if gated < baseline:
            wins += 1
    assert wins >= 2, f"Raw-Gating won {wins}/3 seeds: improvements {improvements}"
    assert float(np.median(improvements)) > 0.0, f"median improvement {improvements}"
    assert synthetic_runs["seconds"] < 1800.0, (
        f"criteria 5+6 runs took {synthetic_runs['seconds']:.0f}s (budget 30min)")
    _report(f"criterion 5 (synthetic context benefit; wins {wins}/3, "
            f"median gain {np.median(improvements):.4f})")


def test_criterion_6_overhead_ordering(synthetic_runs):
    ratios, _ = bench.measure_overhead(synthetic_runs["overhead_path"])
    group = ratios[("accept-synth", 60)]
    early = group["EarlyConcat"]
    late = {t: group[t] for t in LATE_TECHNIQUES}
    assert early > max(late.values()), (
        f"EarlyConcat ratio {early:.3f} does not exceed all late ratios {late}")
    for technique, ratio in late.items():
        assert ratio < 1.5, f"{technique} ratio {ratio:.3f} >= 1.5"
    _report(f"criterion 6 (overhead ordering; EarlyConcat {early:.2f} "
            f"vs max late {max(late.values()):.2f})")


# -- criterion 7: determinism ---------------------------------------------------------------


def test_criterion_7_grid_determinism(tmp_path):
    config = bench.build_config({
        "dataset.name": "det",
        "dataset.synth.n_locations": "5",
        "dataset.synth.n_intervals": "1050",
        "dataset.synth.seed": "3",
        "interval": "60",
        "techniques": "Raw-Gating",
        "features": "Holi-TP",
        "seeds": "4",
        "backbone.hidden": "6",
        "train.epochs": "2",
        "train.patience": "2",
        "graphs.use": "distance",
        "out": str(tmp_path),
    })
    results = bench.run_grid(config)
    first = bench.read_results(results)

    dataset = bench.load_dataset(config)
    split, props, normalizer, samples = bench.prepare_dataset(config, dataset)
    prepared = bench.prepare_features(config, dataset, split, normalizer, samples, "Holi-TP")
    rerun = bench.run_cell(config, dataset, prepared, props, normalizer,
                           "Raw-Gating", "Holi-TP", 4)
    assert rerun.rmse == first[0].rmse  # bit-identical
    assert rerun.mae == first[0].mae

    before = results.read_text()
    bench.run_grid(config)
    assert results.read_text() == before  # zero rows appended
    _report("criterion 7 (determinism)")


# -- criterion 8: invariance suite ------------------------------------------------------------


def test_criterion_8_invariance_suite():
    started = time.perf_counter()
    rng = np.random.default_rng(21)

    # avgN ratio-invariance under per-dataset positive scaling
    matrix = rng.uniform(0.5, 9.0, size=(7, 4))
    scales = rng.uniform(0.01, 100.0, size=4)
    np.testing.assert_allclose(avg_normalized(matrix * scales), avg_normalized(matrix),
                               atol=1e-12)

    # location-permutation equivariance of the backbone
    from ctxflow.backbone import Backbone
    n = 4
    backbone = Backbone(1, 6, 2, WindowSpec(2, 1, 1), np.random.default_rng(5))
    x = rng.uniform(size=(backbone.window.p, n, 1))
    adjacency = (rng.uniform(size=(n, n)) < 0.5).astype(float)
    adjacency = np.triu(adjacency, 1)
    adjacency = adjacency + adjacency.T
    props = [normalize_adjacency(adjacency), np.eye(n)]
    perm = np.array([2, 0, 3, 1])
    p_mat = np.eye(n)[perm]
    base = backbone.forward(Tensor(x), [Tensor(p) for p in props]).data
    permuted = backbone.forward(
        Tensor(x[:, perm, :]), [Tensor(p_mat @ p @ p_mat.T) for p in props]).data
    np.testing.assert_allclose(permuted, base[perm], atol=1e-10)

    # gating outputs strictly inside (0, 1)
    from ctxflow.fusion import fuse_gating
    out = fuse_gating(Tensor(rng.normal(scale=7, size=(30, 8))),
                      Tensor(rng.normal(size=(30, 3))),
                      Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=8)))
    assert np.all(out.data > 0.0) and np.all(out.data < 1.0)

    # one-hot groups sum to 1
    from datetime import datetime, timedelta
    stamps = [datetime(2024, 1, 1) + timedelta(minutes=30 * i) for i in range(300)]
    ctx = encode_temporal_position(stamps, 30)
    np.testing.assert_array_equal(ctx.values[:, :48].sum(axis=1), np.ones(300))
    np.testing.assert_array_equal(ctx.values[:, 48:].sum(axis=1), np.ones(300))

    # zeroed context paths reduce every late technique to a function of the
    # flow embedding alone
    manifest = ContextManifest(temporal=(("holiday", 1), ("temporal_position", 5)),
                               spatial=(("pois", 2),))
    window = WindowSpec(2, 1, 1)
    flow = rng.uniform(0, 1, (2, window.p, 3, 1))
    prop = np.eye(3)
    zero_ctx = np.zeros((2, window.p, 3, manifest.et + manifest.es))
    for technique in LATE_TECHNIQUES:
        pipeline = Pipeline(technique, manifest, window, hidden=4, n_graphs=1, seed=13)
        for p in pipeline.context_parameters():
            if p.data.ndim == 1:
                p.data = np.zeros_like(p.data)
        x_emb = pipeline.backbone.forward(Tensor(flow), [Tensor(prop)]).data
        out = pipeline.embed(flow, zero_ctx, [prop]).data
        fusion_kind = technique.split("-")[1]
        if fusion_kind == "Gating":
            np.testing.assert_allclose(out, 1.0 / (1.0 + np.exp(-0.5 * x_emb)), atol=1e-12)
        elif fusion_kind == "Add":
            np.testing.assert_allclose(out, x_emb @ pipeline.fuse_w_flow.data, atol=1e-12)
        else:
            np.testing.assert_allclose(out[..., :4], x_emb, atol=1e-15)
            block = out[..., 4:]
            if block.shape[-1]:
                np.testing.assert_allclose(
                    block, np.broadcast_to(block[0, 0], block.shape), atol=1e-15)

    elapsed = time.perf_counter() - started
    assert elapsed < 120.0, f"invariance suite took {elapsed:.1f}s (budget 2min)"
    _report("criterion 8 (invariance suite)")
