"""Rate-efficiency sweeps: encode, decode, evaluate, and tabulate.

Each grid point encodes the query data at one operating point (K, delta,
GOP, mode), runs the matching evaluation task on the decoded side, and
yields one CSV row pairing the rate with the task metric.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .bovw import (
    Dictionary,
    aggregate_gop,
    build_global,
    decode_global_stream,
    dequantize_global,
    encode_global_stream,
    learn_dictionary,
    quantize_global,
    QuantizedGlobal,
)
from .codebooks import train_bovw_codebooks, train_local_codebooks
from .errors import ConfigError, UndefinedAP
from .features import FeatureStream, FrameFeatures
from .geometry import homography_precision
from .local_codec import EncoderConfig, decode_stream, encode_stream, stream_rate_summary
from .retrieval import (
    RetrievalDatabase,
    average_precision,
    mean_average_precision,
    median_rank_aggregate,
    rerank,
    retrieve,
)
from .synthdata import (
    PlanarSceneConfig,
    RetrievalDatasetConfig,
    gen_planar_scene,
    gen_retrieval_dataset,
)


# --- local-feature rate -----------------------------------------------------------

def evaluate_local_rate(test_stream: FeatureStream, config: EncoderConfig, mode: str) -> dict:
    es = encode_stream(test_stream, config, mode)
    summary = stream_rate_summary(es)
    decoded = decode_stream(es, config)
    assert decoded.total_features() == test_stream.total_features()
    return summary


def sweep_local_rate(
    train_stream: FeatureStream,
    test_stream: FeatureStream,
    ks,
    modes,
    lam: float = 1.0,
    selection=None,
    width: int | None = None,
    height: int | None = None,
) -> list[dict]:
    rows = []
    w = width or int(test_stream.metadata.get("width", 640))
    h = height or int(test_stream.metadata.get("height", 480))
    for k in ks:
        intra_cb, inter_cb = train_local_codebooks(train_stream, k=int(k), selection=selection)
        config = EncoderConfig(intra_cb, inter_cb, lam=lam, width=w, height=h)
        for mode in modes:
            summary = evaluate_local_rate(test_stream, config, mode)
            rows.append(
                {
                    "task": "local-rate",
                    "k": int(k),
                    "mode": mode,
                    "features": summary["features"],
                    "bits_per_feature": round(summary["bits_per_feature"], 3),
                    "location_bits_per_feature": round(summary["location_bits_per_feature"], 3),
                    "descriptor_bits_per_feature": round(summary["descriptor_bits_per_feature"], 3),
                    "inter_fraction": round(summary["inter_fraction"], 4),
                }
            )
    return rows


# --- homography rate-precision ------------------------------------------------------

def evaluate_homography_pipeline(
    scene,
    config: EncoderConfig,
    mode: str,
    eps_bp: float = 3.0,
    ratio=0.7,
    iterations: int = 2000,
    seed: int = 0,
    fps: float = 15.0,
) -> dict:
    """Encode the scene's features, decode, then score homography precision."""
    es = encode_stream(scene.stream, config, mode)
    decoded = decode_stream(es, config)
    pairs = [
        (decoded.frames[i], decoded.frames[i + 1]) for i in range(len(decoded.frames) - 1)
    ]
    corners = [
        (scene.ground_truth[i][1], scene.ground_truth[i + 1][1])
        for i in range(len(scene.ground_truth) - 1)
    ]
    report = homography_precision(
        pairs, corners, eps_bp=eps_bp, ratio=ratio, iterations=iterations, seed=seed
    )
    summary = stream_rate_summary(es)
    payload_bits = summary["payload_bits"]
    kbps = payload_bits * fps / max(len(decoded.frames), 1) / 1000.0
    return {
        "precision": report.precision,
        "bits_per_feature": summary.get("bits_per_feature", 0.0),
        "kbps": kbps,
        "report": report,
    }


def sweep_homography(
    train_stream: FeatureStream,
    scene,
    ks,
    modes,
    lam: float = 1.0,
    eps_bp: float = 3.0,
    iterations: int = 2000,
    seed: int = 0,
) -> list[dict]:
    rows = []
    w = int(scene.stream.metadata.get("width", 640))
    h = int(scene.stream.metadata.get("height", 480))
    for k in ks:
        intra_cb, inter_cb = train_local_codebooks(train_stream, k=int(k))
        config = EncoderConfig(intra_cb, inter_cb, lam=lam, width=w, height=h)
        for mode in modes:
            res = evaluate_homography_pipeline(
                scene, config, mode, eps_bp=eps_bp, iterations=iterations, seed=seed
            )
            rows.append(
                {
                    "task": "homography",
                    "k": int(k),
                    "mode": mode,
                    "bits_per_feature": round(res["bits_per_feature"], 3),
                    "kbps": round(res["kbps"], 3),
                    "precision": round(res["precision"], 4),
                }
            )
    return rows


# --- retrieval rate-MAP ----------------------------------------------------------------

@dataclass
class RetrievalArtifacts:
    """Prepared database side of a retrieval experiment."""

    db: RetrievalDatabase
    queries: dict[int, FeatureStream]
    dictionary: Dictionary
    training_globals: np.ndarray       # (N, V) sequence for coding-table training


def prepare_retrieval_artifacts(
    dataset,
    v: int,
    method: str = "kmeans",
    seed: int = 0,
) -> RetrievalArtifacts:
    dictionary = learn_dictionary(
        dataset.training_descriptors,
        v,
        method=method,
        seed=seed,
        documents=[fr.descriptor_matrix() for fr in dataset.db_images],
    )
    db = RetrievalDatabase(
        ids=dataset.db_ids,
        globals=np.stack([build_global(fr, dictionary) for fr in dataset.db_images]),
        local_features=dataset.db_images,
        relevance=dataset.relevance,
    )
    training_globals = np.stack(
        [build_global(fr, dictionary) for fr in dataset.training_video.frames]
    )
    return RetrievalArtifacts(db=db, queries=dataset.queries, dictionary=dictionary,
                              training_globals=training_globals)


def _project_frame(frame: FrameFeatures, selection, k: int) -> FrameFeatures:
    kp = frame.keypoint_array()
    desc = frame.descriptor_matrix()
    desc = desc[:, np.asarray(selection)[:k]] if desc.size else np.zeros((0, k), np.uint8)
    return FrameFeatures.from_arrays(frame.frame_index, kp, desc)


def evaluate_retrieval_pipeline(
    art: RetrievalArtifacts,
    delta: float | None = None,
    mode: str = "intra",
    bovw_cbs=None,
    gop: int = 1,
    strategy: str = "skip",
    top_k: int = 200,
    rerank_config: EncoderConfig | None = None,
    rerank_mode: str = "auto",
    ratio=0.7,
) -> dict:
    """Full query-side pipeline: GOP grouping, optional quantized coding,
    ranking, optional local-feature re-ranking, AP/MAP plus MRA fusion.

    With `delta` but no codebooks the descriptors are quantized and
    reconstructed without entropy coding; with `bovw_cbs` the coded
    bytes are counted.  `rerank_config` switches on the second stage
    using decoded K-dexel query features against projected stored sets.
    """
    if gop < 1:
        raise ConfigError("GOP size must be at least 1")
    per_query_aps = {}
    per_query_mra = {}
    total_bytes = 0.0
    for qid, stream in art.queries.items():
        frames = stream.frames
        groups = [frames[i:i + gop] for i in range(0, len(frames), gop)]
        if strategy == "skip":
            group_globals = [build_global(g[0], art.dictionary) for g in groups]
        else:
            group_globals = [
                aggregate_gop([build_global(f, art.dictionary) for f in g], strategy)
                for g in groups
            ]
        if delta is not None:
            if bovw_cbs is not None:
                encoded = encode_global_stream(group_globals, delta, *bovw_cbs, mode=mode)
                total_bytes += encoded.payload_bytes()
                indices = decode_global_stream(encoded, *bovw_cbs)
                used = [
                    dequantize_global(QuantizedGlobal(row, delta)) for row in indices
                ]
            else:
                used = [
                    dequantize_global(quantize_global(g, delta)) for g in group_globals
                ]
        else:
            used = group_globals

        decoded_locals = None
        if rerank_config is not None:
            firsts = FeatureStream(
                descriptor_length=stream.descriptor_length,
                frames=[g[0] for g in groups],
                metadata=stream.metadata,
            )
            les = encode_stream(firsts, rerank_config, rerank_mode)
            total_bytes += les.payload_bytes()
            decoded_locals = decode_stream(les, rerank_config).frames

        relevant = art.db.relevant_for(qid)
        rankings = []
        for gi, g in enumerate(used):
            ranked = retrieve(g, art.db, k=top_k, relevant_ids=relevant)
            if rerank_config is not None:
                proj_db = RetrievalDatabase(
                    ids=art.db.ids,
                    globals=art.db.globals,
                    local_features=[
                        _project_frame(fr, rerank_config.selection, rerank_config.K)
                        for fr in art.db.local_features
                    ],
                    relevance=art.db.relevance,
                )
                ranked = rerank(decoded_locals[gi], ranked, proj_db, ratio)
            rankings.append(ranked)
        try:
            per_query_aps[qid] = [average_precision(r) for r in rankings]
            per_query_mra[qid] = average_precision(median_rank_aggregate(rankings))
        except UndefinedAP:
            per_query_aps[qid] = [0.0]
            per_query_mra[qid] = 0.0
    n_queries = max(len(art.queries), 1)
    return {
        "map": mean_average_precision(per_query_aps),
        "map_mra": sum(per_query_mra.values()) / n_queries,
        "bytes_per_query": total_bytes / n_queries,
    }


def sweep_retrieval(
    art: RetrievalArtifacts,
    deltas,
    modes,
    gops=(1,),
    strategy: str = "skip",
    top_k: int = 200,
) -> list[dict]:
    rows = []
    for delta in deltas:
        cbs = train_bovw_codebooks(
            np.stack([quantize_global(g, float(delta)).indices for g in art.training_globals]),
            delta=float(delta),
        )
        for mode in modes:
            for gop in gops:
                res = evaluate_retrieval_pipeline(
                    art, delta=float(delta), mode=mode, bovw_cbs=cbs,
                    gop=int(gop), strategy=strategy, top_k=top_k,
                )
                rows.append(
                    {
                        "task": "retrieval",
                        "delta": float(delta),
                        "mode": mode,
                        "gop": int(gop),
                        "strategy": strategy,
                        "bytes_per_query": round(res["bytes_per_query"], 2),
                        "map": round(res["map"], 4),
                        "map_mra": round(res["map_mra"], 4),
                    }
                )
    return rows


# --- dispatch, CSV, plot ----------------------------------------------------------------

def default_synthetic_inputs(task: str, seed: int):
    """Seeded desk-scale inputs for self-contained sweeps."""
    from .features import SynthConfig, synth_stream

    if task in ("local-rate",):
        train = synth_stream(SynthConfig(frames=20, features_per_frame=40, duplication_prob=0.85,
                                         flip_prob=0.03, drift=4, seed=seed))
        test = synth_stream(SynthConfig(frames=20, features_per_frame=40, duplication_prob=0.85,
                                        flip_prob=0.03, drift=4, seed=seed + 1))
        return train, test
    if task == "homography":
        train = gen_planar_scene(PlanarSceneConfig(frames=20, seed=seed + 1)).stream
        scene = gen_planar_scene(PlanarSceneConfig(frames=31, seed=seed))
        return train, scene
    if task == "retrieval":
        dataset = gen_retrieval_dataset(RetrievalDatasetConfig(seed=seed))
        return dataset
    raise ConfigError(f"unknown sweep task {task!r}")


def run_rate_efficiency(task: str, grid: dict, seed: int = 0, lam: float = 1.0,
                        inputs=None, **kwargs) -> list[dict]:
    """Dispatch a sweep task over its parameter grid and return CSV rows."""
    modes = [str(m) for m in grid.get("mode", ["auto"])]
    if task == "local-rate":
        train, test = inputs if inputs is not None else default_synthetic_inputs(task, seed)
        ks = [int(k) for k in grid.get("k", [64])]
        return sweep_local_rate(train, test, ks, modes, lam=lam)
    if task == "homography":
        train, scene = inputs if inputs is not None else default_synthetic_inputs(task, seed)
        ks = [int(k) for k in grid.get("k", [64])]
        return sweep_homography(train, scene, ks, modes, lam=lam, seed=seed, **kwargs)
    if task == "retrieval":
        dataset = inputs if inputs is not None else default_synthetic_inputs(task, seed)
        art = prepare_retrieval_artifacts(dataset, v=int(kwargs.pop("v", 256)), seed=seed)
        deltas = [float(d) for d in grid.get("delta", [0.05])]
        gops = [int(g) for g in grid.get("gop", [1])]
        if "mode" not in grid:
            modes = ["intra"]
        return sweep_retrieval(art, deltas, modes, gops=gops, **kwargs)
    raise ConfigError(f"unknown sweep task {task!r}")


def write_rows_csv(rows: list[dict], path) -> int:
    if not rows:
        raise ConfigError("no rows to write")
    columns = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow(row)
    return len(rows)


def plot_rows(rows: list[dict], x: str, y: str, path, group_by: str = "mode"):
    """Optional rate-metric chart; needs matplotlib installed."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    groups = sorted({row.get(group_by, "") for row in rows})
    for g in groups:
        pts = [(row[x], row[y]) for row in rows if row.get(group_by, "") == g]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=str(g))
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.grid(True, alpha=0.3)
    if len(groups) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
