"""Acceptance suite: every criterion runs at its stated tolerance and
prints one [PASS]/[FAIL] line (run with -s to see them inline)."""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from bfcodec.boosting import PairSet, gen_synthetic_pairs, rank_dexels
from bfcodec.bovw import dequantize_global, quantize_global
from bfcodec.codebooks import train_bovw_codebooks, train_local_codebooks
from bfcodec.entropy import (
    DexelStats,
    SymbolTable,
    learn_permutation,
    marginal_entropy,
    permutation_bound,
    range_decode,
    range_encode,
)
from bfcodec.features import SynthConfig, synth_stream
from bfcodec.geometry import homography_precision
from bfcodec.local_codec import (
    EncoderConfig,
    decode_stream,
    encode_stream,
    project_stream,
    stream_rate_summary,
)
from bfcodec.retrieval import RankedList, average_precision_exact, median_rank_aggregate
from bfcodec.sweep import evaluate_retrieval_pipeline, prepare_retrieval_artifacts
from bfcodec.synthdata import (
    PlanarSceneConfig,
    RetrievalDatasetConfig,
    gen_planar_scene,
    gen_retrieval_dataset,
)


def report(criterion: int, ok: bool, detail: str):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}", flush=True)
    assert ok, f"criterion {criterion}: {detail}"


ROUND_TRIP_SYNTH = dict(
    descriptor_length=512,
    frames=30,
    features_per_frame=16,
    transition=((0.6, 0.4), (0.4, 0.6)),
    duplication_prob=0.7,
    flip_prob=0.05,
    drift=6,
)


@pytest.fixture(scope="module")
def round_trip_configs():
    train = synth_stream(SynthConfig(**ROUND_TRIP_SYNTH, seed=9999))
    configs = {}
    for k in (8, 64, 512):
        intra, inter = train_local_codebooks(train, k=k)
        configs[k] = EncoderConfig(intra, inter, lam=1.0, width=640, height=480)
    # warm the JIT kernels outside the timed section
    tiny = synth_stream(SynthConfig(descriptor_length=512, frames=2, features_per_frame=4, seed=1))
    for k, conf in configs.items():
        for mode in ("intra", "inter", "auto"):
            decode_stream(encode_stream(tiny, conf, mode), conf)
    return configs


def test_criterion_1_lossless_round_trip(round_trip_configs):
    t0 = time.monotonic()
    checked = 0
    for seed in range(100):
        stream = synth_stream(SynthConfig(**ROUND_TRIP_SYNTH, seed=seed))
        for k, conf in round_trip_configs.items():
            projected = project_stream(stream, conf)
            for mode in ("intra", "inter", "auto"):
                es = encode_stream(stream, conf, mode)
                decoded = decode_stream(es, conf)
                assert decoded == projected, f"seed {seed} K={k} mode={mode}"
                checked += 1
    elapsed = time.monotonic() - t0
    report(
        1,
        checked == 900 and elapsed < 60.0,
        f"{checked}/900 stream round-trips bit-exact in {elapsed:.1f}s (< 60s)",
    )


def test_criterion_2_coder_entropy_optimality():
    rng = np.random.default_rng(42)
    a = 4
    trans = np.array(
        [
            [0.70, 0.15, 0.10, 0.05],
            [0.05, 0.80, 0.10, 0.05],
            [0.10, 0.10, 0.70, 0.10],
            [0.25, 0.25, 0.25, 0.25],
        ]
    )
    n = 100_000
    sym = np.empty(n, dtype=np.int64)
    state = 0
    for i in range(n):
        state = rng.choice(a, p=trans[state])
        sym[i] = state
    table = SymbolTable(trans)
    data = range_encode(sym, table)
    assert np.array_equal(range_decode(data, n, table), sym)
    coded_bits = 8 * len(data)
    # stationary distribution and conditional entropy rate
    evals, evecs = np.linalg.eig(trans.T)
    pi = np.real(evecs[:, np.argmin(np.abs(evals - 1))])
    pi = pi / pi.sum()
    h_cond = float(-(pi[:, None] * trans * np.log2(trans)).sum())
    analytic = n * h_cond + 64
    rel = abs(coded_bits - analytic) / analytic
    report(
        2,
        rel <= 0.01,
        f"coded {coded_bits} bits vs analytic {analytic:.0f} (+64 flush): {100 * rel:.3f}% (<= 1%)",
    )


def _oracle_greedy_order(stats: DexelStats):
    """Brute-force greedy over exact-count entropies, independent of the library path."""
    s = stats.sample_count

    def h(ps):
        return -sum(p * math.log2(p) for p in ps if p > 0)

    def hm(j):
        return h([stats.marginal[j, 0] / s, stats.marginal[j, 1] / s])

    def hc(j, prev):
        joint = stats.pairs[j, prev] / s
        return h(joint.ravel().tolist()) - h(joint.sum(axis=0).tolist())

    p = stats.P
    order = [min(range(p), key=lambda j: (hm(j), j))]
    while len(order) < p:
        remaining = [j for j in range(p) if j not in order]
        order.append(min(remaining, key=lambda j: (hc(j, order[-1]), j)))
    return order


def test_criterion_3_greedy_permutation_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(50):
        p = int(rng.integers(2, 9))
        n = int(rng.integers(10, 80))
        bias = rng.random(p)
        d = (rng.random((n, p)) < bias).astype(np.uint8)
        if trial % 3 == 0 and p >= 2:
            d[:, p - 1] = d[:, 0] ^ (rng.random(n) < 0.2)
        stats = DexelStats.from_matrix(d)
        perm = learn_permutation(stats)
        assert list(perm.order) == _oracle_greedy_order(stats), f"trial {trial}"
        bound = permutation_bound(stats, perm.order)
        marg = sum(marginal_entropy(stats, j) for j in range(p))
        assert bound <= marg + 1e-12, f"trial {trial}: bound {bound} > marginals {marg}"
        worst = max(worst, bound - marg)
    report(3, True, f"50/50 oracle-equal orders; max(bound - marginal sum) = {worst:.2e} <= 0")


def test_criterion_4_inter_beats_intra():
    synth = dict(
        descriptor_length=512,
        frames=30,
        features_per_frame=40,
        transition=((0.6, 0.4), (0.4, 0.6)),
        duplication_prob=0.9,
        flip_prob=0.02,
        drift=4,
    )
    train = synth_stream(SynthConfig(**synth, seed=500))
    test = synth_stream(SynthConfig(**synth, seed=501))
    intra_cb, inter_cb = train_local_codebooks(train, k=32)
    conf = EncoderConfig(intra_cb, inter_cb, lam=1.0, width=640, height=480)
    runs = {mode: encode_stream(test, conf, mode) for mode in ("intra", "inter", "auto")}
    summaries = {mode: stream_rate_summary(es) for mode, es in runs.items()}
    d_intra = summaries["intra"]["descriptor_bits_per_feature"]
    d_inter = summaries["inter"]["descriptor_bits_per_feature"]
    totals = {mode: s["payload_bits"] for mode, s in summaries.items()}
    ratio_ok = d_inter <= 0.7 * d_intra
    auto_ok = totals["auto"] <= min(totals["intra"], totals["inter"]) * 1.01
    report(
        4,
        ratio_ok and auto_ok,
        f"descriptor bits/feature inter {d_inter:.2f} <= 0.7 * intra {d_intra:.2f}; "
        f"auto {totals['auto']} <= 1.01 * min(intra {totals['intra']}, inter {totals['inter']})",
    )


def test_criterion_5_quantization_bound():
    rng = np.random.default_rng(11)
    v = 64
    idf = rng.uniform(0.2, 2.0, v)
    descriptors = []
    for _ in range(1000):
        hist = rng.poisson(1.2, v).astype(np.float64)
        if hist.sum() == 0:
            hist[int(rng.integers(0, v))] = 1.0
        g = hist * idf
        descriptors.append(g / np.linalg.norm(g))
    checked = 0
    for delta in (0.01, 0.05, 0.1, 0.2):
        for g in descriptors:
            err = g - dequantize_global(quantize_global(g, delta))
            assert np.all(err >= 0.0), f"negative reconstruction error at delta {delta}"
            assert np.all(err < delta), f"error >= delta at delta {delta}"
            checked += 1
    report(5, checked == 4000, f"0 <= v - v_hat < delta exact on {checked} descriptor/delta pairs")


def test_criterion_6_homography_harness():
    t0 = time.monotonic()
    # flip 0.10 re-observation noise: 512-dexel matching stays clean while
    # 8-dexel descriptors degrade, giving the strict precision drop
    scene_cfg = PlanarSceneConfig(
        frames=101, inliers=50, outlier_fraction=0.2, noise_px=0.5,
        desc_flip_prob=0.10, seed=60,
    )
    scene = gen_planar_scene(scene_cfg)
    train_scene = gen_planar_scene(
        PlanarSceneConfig(frames=30, inliers=50, outlier_fraction=0.2, noise_px=0.5,
                          desc_flip_prob=0.10, seed=61)
    )

    def precision_at_k(k):
        intra, inter = train_local_codebooks(train_scene.stream, k=k)
        conf = EncoderConfig(intra, inter, lam=1.0, width=640, height=480)
        decoded = decode_stream(encode_stream(scene.stream, conf, "auto"), conf)
        pairs = [(decoded.frames[i], decoded.frames[i + 1]) for i in range(100)]
        corners = [
            (scene.ground_truth[i][1], scene.ground_truth[i + 1][1]) for i in range(100)
        ]
        return homography_precision(pairs, corners, eps_bp=3.0, iterations=2000, seed=0).precision

    p_full = precision_at_k(512)
    p_tiny = precision_at_k(8)
    elapsed = time.monotonic() - t0
    report(
        6,
        p_full >= 0.95 and p_tiny < p_full and elapsed < 120.0,
        f"precision K=512: {p_full:.3f} (>= 0.95); K=8: {p_tiny:.3f} (strictly lower) "
        f"in {elapsed:.1f}s (< 120s)",
    )


def _ap_oracle(relevance) -> Fraction:
    """Direct Eq.-style AP: sum of P(k) * r(k) over k, divided by R."""
    r_total = sum(relevance)
    acc = Fraction(0)
    hits = 0
    for k, rel in enumerate(relevance, start=1):
        hits += rel
        if rel:
            acc += Fraction(hits, k)
    return acc / r_total


def test_criterion_7_retrieval_metric_oracle():
    rng = np.random.default_rng(23)
    checked = 0
    for _ in range(20):
        z = int(rng.integers(4, 40))
        rel = np.zeros(z, dtype=bool)
        rel[rng.choice(z, int(rng.integers(1, z)), replace=False)] = True
        ranked = RankedList(ids=np.arange(z), relevance=rel)
        got = average_precision_exact(ranked)
        want = _ap_oracle(rel.tolist())
        assert got == want, f"AP mismatch: {got} != {want}"
        assert abs(float(got) - float(want)) <= 1e-12
        checked += 1
    # MRA worked example: ranks (1, 9, 1) must beat (2, 2, 2)
    ids = list(range(12))
    a, b = 0, 1
    rest = [i for i in ids if i > 1]
    lists = [
        [a, b] + rest,
        rest[:1] + [b] + rest[1:7] + [a] + rest[7:],
        [a, b] + rest,
    ]
    rls = [
        RankedList(ids=np.array(o), relevance=np.array([i == a for i in o]))
        for o in lists
    ]
    fused = median_rank_aggregate(rls)
    order = list(fused.ids)
    mra_ok = order.index(a) < order.index(b)
    report(7, checked == 20 and mra_ok, f"20/20 rankings match the rational oracle; MRA ranks (1,9,1) ahead of (2,2,2): {mra_ok}")


def test_criterion_8_end_to_end_retrieval():
    t0 = time.monotonic()
    dataset = gen_retrieval_dataset(RetrievalDatasetConfig(seed=80))
    art = prepare_retrieval_artifacts(dataset, v=256, method="kmeans", seed=0)
    art_maps = {}
    unquantized = evaluate_retrieval_pipeline(art, delta=None)["map"]
    for delta in (0.01, 0.05, 0.1, 0.2):
        cbs = train_bovw_codebooks(
            np.stack([quantize_global(g, delta).indices for g in art.training_globals]),
            delta=delta,
        )
        art_maps[delta] = evaluate_retrieval_pipeline(
            art, delta=delta, mode="inter", bovw_cbs=cbs
        )["map"]
    elapsed = time.monotonic() - t0
    close_ok = abs(art_maps[0.01] - unquantized) <= 0.02
    grid = [art_maps[d] for d in (0.01, 0.05, 0.1, 0.2)]
    monotone_ok = all(a >= b - 1e-12 for a, b in zip(grid, grid[1:]))
    report(
        8,
        close_ok and monotone_ok and elapsed < 300.0,
        f"MAP unquantized {unquantized:.4f} vs delta grid {[round(m, 4) for m in grid]}; "
        f"|gap at 0.01| <= 0.02 and non-increasing, in {elapsed:.1f}s (< 5min)",
    )


def _boost_oracle_p4(pairs: PairSet, asymmetry=2.0):
    import math as m

    n, p = len(pairs), pairs.P
    w = [1.0 / n] * n
    order = []
    for _ in range(p):
        best_j, best_eps = None, None
        for j in range(p):
            if j in order:
                continue
            eps = 0.0
            for i in range(n):
                agree = pairs.a[i, j] == pairs.b[i, j]
                if agree and not pairs.labels[i]:
                    eps += w[i]
                elif not agree and pairs.labels[i]:
                    eps += asymmetry * w[i]
            if best_eps is None or eps < best_eps - 1e-15:
                best_j, best_eps = j, eps
        order.append(best_j)
        e = min(max(best_eps, 1e-10), 1 - 1e-10)
        alpha = 0.5 * m.log((1 - e) / e)
        for i in range(n):
            agree = pairs.a[i, best_j] == pairs.b[i, best_j]
            w[i] *= m.exp(alpha if agree != bool(pairs.labels[i]) else -alpha)
        total = sum(w)
        w = [x / total for x in w]
    return order


def test_criterion_9_boosting_sanity():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        planted = rng.choice(64, 8, replace=False)
        pairs = gen_synthetic_pairs(64, 1024, planted, agree_match=0.95, seed=2000 + seed)
        ranking = rank_dexels(pairs, rounds=12)
        if set(planted.tolist()) <= set(ranking.order.tolist()):
            hits += 1
    oracle_ok = True
    for seed in range(10):
        pairs = gen_synthetic_pairs(4, 64, np.array([1]), seed=seed)
        got = rank_dexels(pairs, rounds=4).order.tolist()
        if got != _boost_oracle_p4(pairs):
            oracle_ok = False
            break
    report(
        9,
        hits >= 95 and oracle_ok,
        f"planted dexels in top-12 in {hits}/100 trials (>= 95); P=4 oracle equality: {oracle_ok}",
    )
