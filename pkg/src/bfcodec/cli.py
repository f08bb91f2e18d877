"""Command-line entry point: training, coding, synthesis, and evaluation.

Every subcommand is deterministic given its seed and inputs.  Options can
come from a flat INI config file (one section per subcommand); explicit
flags win over the file.  Data errors exit 1 with a single parseable
line; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import bovw as bovw_mod
from . import codebooks as cb_mod
from . import features as feat_mod
from . import local_codec as lc_mod
from . import retrieval as ret_mod
from . import sweep as sweep_mod
from .boosting import gen_synthetic_pairs, rank_dexels, read_pairs
from .errors import BfcodecError, ConfigError
from .geometry import homography_precision, read_ground_truth, write_ground_truth
from .synthdata import PlanarSceneConfig, RetrievalDatasetConfig, gen_planar_scene, gen_retrieval_dataset

CODEBOOK_DIR_ENV = "BFCODEC_CODEBOOK_DIR"

_DEFAULTS: dict[str, dict[str, tuple]] = {}


def _opt(parser, section, name, default, type_fn=str, help="", action=None, nargs=None):
    """Register an option whose default may come from the config file."""
    dest = name.lstrip("-").replace("-", "_")
    _DEFAULTS.setdefault(section, {})[dest] = (default, type_fn)
    if action:
        parser.add_argument(name, default=None, action=action, help=help)
        return
    kwargs = {"default": None, "help": help}
    if nargs:
        kwargs["nargs"] = nargs
    if type_fn is not None:
        kwargs["type"] = type_fn
    parser.add_argument(name, **kwargs)


def _finalize(args):
    """Fill unset options from the config file section, then from defaults."""
    section = args.command
    file_vals = {}
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        read = cp.read(args.config)
        if not read:
            raise ConfigError(f"config file {args.config} not found")
        if cp.has_section(section):
            file_vals = dict(cp.items(section))
    for dest, (default, type_fn) in _DEFAULTS.get(section, {}).items():
        if getattr(args, dest, None) is not None:
            continue
        key = dest.replace("_", "-")
        if key in file_vals or dest in file_vals:
            raw = file_vals.get(key, file_vals.get(dest))
            if type_fn is bool:
                setattr(args, dest, raw.strip().lower() in ("1", "true", "yes", "on"))
            else:
                setattr(args, dest, type_fn(raw) if type_fn else raw)
        else:
            setattr(args, dest, default)
    return args


def _codebook_path(path):
    """Relative codebook paths may live in $BFCODEC_CODEBOOK_DIR."""
    if path is None or os.path.exists(path) or os.path.isabs(path):
        return path
    env = os.environ.get(CODEBOOK_DIR_ENV)
    if env:
        candidate = os.path.join(env, path)
        if os.path.exists(candidate):
            return candidate
    return path


def _triple(text):
    parts = [int(v) for v in str(text).split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated ints, got {text!r}")
    return tuple(parts)


def _parse_grid(spec: str) -> dict[str, list[str]]:
    grid = {}
    for clause in str(spec).split(";"):
        clause = clause.strip()
        if not clause:
            continue
        if "=" not in clause:
            raise ConfigError(f"grid clause {clause!r} is not key=v1,v2,...")
        key, vals = clause.split("=", 1)
        grid[key.strip()] = [v.strip() for v in vals.split(",") if v.strip()]
    if not grid:
        raise ConfigError("empty sweep grid")
    return grid


def _load_local_configs(args, need_inter):
    intra = cb_mod.read_codebook(_codebook_path(args.intra_codebook))
    inter = None
    if args.inter_codebook:
        inter = cb_mod.read_codebook(_codebook_path(args.inter_codebook))
    if need_inter and inter is None:
        raise ConfigError(f"mode {args.mode} requires --inter-codebook")
    if not isinstance(intra, cb_mod.LocalIntraCodebook):
        raise ConfigError("--intra-codebook does not hold an intra-local codebook")
    if inter is not None and not isinstance(inter, cb_mod.LocalInterCodebook):
        raise ConfigError("--inter-codebook does not hold an inter-local codebook")
    return intra, inter


# --- subcommand runners ----------------------------------------------------------------

def _cmd_synth(args):
    if args.kind == "stream":
        t = ((args.stay0, 1.0 - args.stay0), (1.0 - args.stay1, args.stay1))
        cfg = feat_mod.SynthConfig(
            descriptor_length=args.p, frames=args.frames, features_per_frame=args.features,
            width=args.width, height=args.height, transition=t,
            duplication_prob=args.dup, flip_prob=args.flip, drift=args.drift, seed=args.seed,
        )
        stream = feat_mod.synth_stream(cfg)
        if args.format == "json":
            n = feat_mod.write_stream_json(stream, args.out)
        else:
            n = feat_mod.write_stream(stream, args.out)
        print(f"synth stream: {len(stream.frames)} frames, {stream.total_features()} features, {n} bytes -> {args.out}")
        return 0
    if args.kind == "planar":
        scene = gen_planar_scene(
            PlanarSceneConfig(
                frames=args.frames, inliers=args.features, outlier_fraction=args.outlier_frac,
                noise_px=args.noise, descriptor_length=args.p,
                width=args.width, height=args.height, seed=args.seed,
            )
        )
        feat_mod.write_stream(scene.stream, args.out)
        if not args.gt_out:
            raise ConfigError("--gt-out is required for planar synthesis")
        write_ground_truth(args.gt_out, scene.ground_truth)
        print(f"planar scene: {args.frames} frames -> {args.out}, ground truth -> {args.gt_out}")
        return 0
    if args.kind == "retrieval":
        ds = gen_retrieval_dataset(RetrievalDatasetConfig(seed=args.seed))
        os.makedirs(args.out_dir, exist_ok=True)
        db = feat_mod.FeatureStream(
            descriptor_length=ds.queries[0].descriptor_length,
            frames=ds.db_images,
            metadata={"role": "database"},
        )
        feat_mod.write_stream(db, os.path.join(args.out_dir, "db.bfs"))
        feat_mod.write_stream(ds.training_video, os.path.join(args.out_dir, "training_video.bfs"))
        sample = feat_mod.FeatureStream(
            descriptor_length=db.descriptor_length,
            frames=[feat_mod.FrameFeatures.from_arrays(
                0,
                np.zeros((len(ds.training_descriptors), 4), dtype=np.int32),
                ds.training_descriptors,
            )],
            metadata={"role": "dictionary-sample"},
        )
        feat_mod.write_stream(sample, os.path.join(args.out_dir, "dict_sample.bfs"))
        for qid, stream in ds.queries.items():
            feat_mod.write_stream(stream, os.path.join(args.out_dir, f"query_{qid:02d}.bfs"))
        ret_mod.write_relevance(ds.relevance, os.path.join(args.out_dir, "relevance.json"))
        print(f"retrieval dataset: {len(ds.db_images)} images, {len(ds.queries)} queries -> {args.out_dir}")
        return 0
    raise ConfigError(f"unknown synth kind {args.kind!r}")


def _cmd_rank_dexels(args):
    if args.pairs:
        pairs = read_pairs(args.pairs)
    else:
        rng = np.random.default_rng(args.seed)
        planted = rng.choice(args.p, args.planted, replace=False)
        pairs = gen_synthetic_pairs(args.p, args.n_pairs, planted, seed=args.seed)
        print(f"synthetic pairs with planted dexels {sorted(planted.tolist())}")
    ranking = rank_dexels(pairs, rounds=args.rounds, asymmetry=args.asymmetry)
    with open(args.out, "w") as fh:
        json.dump({"order": ranking.order.tolist(), "scores": ranking.scores.tolist()}, fh, indent=1)
    print(f"ranked {len(ranking.order)} dexels -> {args.out}")
    return 0


def _load_ranking(path):
    with open(path) as fh:
        doc = json.load(fh)
    return np.asarray(doc["order"], dtype=np.int64)


def _cmd_train_local(args):
    stream = feat_mod.read_stream(args.stream)
    selection = _load_ranking(args.ranking) if args.ranking else None
    intra, inter = cb_mod.train_local_codebooks(
        stream, k=args.k, selection=selection, window=args.window,
        scale_alphabet=args.scale_alphabet,
    )
    pi = f"{args.out_prefix}.intra.bfcb"
    pe = f"{args.out_prefix}.inter.bfcb"
    cb_mod.write_codebook(intra, pi)
    cb_mod.write_codebook(inter, pe)
    print(f"trained local codebooks (P={intra.P}, K={intra.K}) -> {pi}, {pe}")
    return 0


def _cmd_dict_learn(args):
    stream = feat_mod.read_stream(args.stream)
    descs = np.concatenate([fr.descriptor_matrix() for fr in stream.frames if len(fr)], axis=0)
    if args.sample and args.sample < len(descs):
        rng = np.random.default_rng(args.seed)
        descs = descs[rng.choice(len(descs), args.sample, replace=False)]
    documents = None
    if args.idf_docs:
        doc_stream = feat_mod.read_stream(args.idf_docs)
        documents = [fr.descriptor_matrix() for fr in doc_stream.frames]
    d = bovw_mod.learn_dictionary(descs, args.v, method=args.method, seed=args.seed,
                                  documents=documents)
    n = bovw_mod.write_dictionary(d, args.out)
    print(f"dictionary V={d.V} P={d.P} metric={d.metric} ({n} bytes) -> {args.out}")
    return 0


def _cmd_train_bovw(args):
    stream = feat_mod.read_stream(args.stream)
    dictionary = bovw_mod.read_dictionary(args.dict)
    indices = np.stack(
        [
            bovw_mod.quantize_global(bovw_mod.build_global(fr, dictionary), args.delta).indices
            for fr in stream.frames
        ]
    )
    intra, inter = cb_mod.train_bovw_codebooks(indices, delta=args.delta, alphabet=args.alphabet)
    pi = f"{args.out_prefix}.bovw-intra.bfcb"
    pe = f"{args.out_prefix}.bovw-inter.bfcb"
    cb_mod.write_codebook(intra, pi)
    cb_mod.write_codebook(inter, pe)
    print(f"trained bovw codebooks (V={intra.V}, delta={args.delta}) -> {pi}, {pe}")
    return 0


def _cmd_encode(args):
    stream = feat_mod.read_stream(args.stream)
    intra, inter = _load_local_configs(args, need_inter=args.mode != "intra")
    if args.k is not None and args.k != intra.K:
        raise ConfigError(f"--k {args.k} does not match codebook K {intra.K}")
    width = int(stream.metadata.get("width", args.width))
    height = int(stream.metadata.get("height", args.height))
    config = lc_mod.EncoderConfig(intra, inter, lam=getattr(args, "lambda"), width=width, height=height)
    es = lc_mod.encode_stream(stream, config, args.mode)
    nbytes = lc_mod.write_bitstream(es, args.out)
    summary = lc_mod.stream_rate_summary(es)
    bpf = summary.get("bits_per_feature", 0.0)
    print(f"encoded {summary['features']} features in {len(es.frames)} frames: "
          f"{bpf:.2f} bits/feature, {nbytes} bytes -> {args.out}")
    return 0


def _cmd_decode(args):
    es = lc_mod.read_bitstream(args.bitstream)
    intra, inter = _load_local_configs(args, need_inter=es.mode != lc_mod.MODE_INTRA)
    config = lc_mod.EncoderConfig(intra, inter, lam=es.lam, width=es.width, height=es.height)
    stream = lc_mod.decode_stream(es, config)
    if args.format == "json":
        feat_mod.write_stream_json(stream, args.out)
    else:
        feat_mod.write_stream(stream, args.out)
    print(f"decoded {stream.total_features()} features in {len(stream.frames)} frames -> {args.out}")
    return 0


def _cmd_bovw_encode(args):
    stream = feat_mod.read_stream(args.stream)
    dictionary = bovw_mod.read_dictionary(args.dict)
    intra = cb_mod.read_codebook(_codebook_path(args.intra_codebook))
    inter = cb_mod.read_codebook(_codebook_path(args.inter_codebook)) if args.inter_codebook else None
    if args.mode == "inter" and inter is None:
        raise ConfigError("inter mode requires --inter-codebook")
    globals_seq = [bovw_mod.build_global(fr, dictionary) for fr in stream.frames]
    es = bovw_mod.encode_global_stream(globals_seq, args.delta, intra, inter, mode=args.mode)
    nbytes = bovw_mod.write_global_stream(es, args.out)
    per_query = es.payload_bytes()
    print(f"encoded {len(globals_seq)} global descriptors (V={es.V}, delta={es.delta}): "
          f"{per_query} payload bytes ({per_query / max(len(globals_seq), 1):.1f} Bytes/frame) -> {args.out} ({nbytes} bytes)")
    return 0


def _cmd_bovw_decode(args):
    es = bovw_mod.read_global_stream(args.bitstream)
    intra = cb_mod.read_codebook(_codebook_path(args.intra_codebook))
    inter = cb_mod.read_codebook(_codebook_path(args.inter_codebook)) if args.inter_codebook else None
    indices = bovw_mod.decode_global_stream(es, intra, inter)
    values = indices.astype(np.float64) * es.delta
    np.savez(args.out, indices=indices, values=values, delta=es.delta)
    print(f"decoded {indices.shape[0]} global descriptors (V={es.V}) -> {args.out}")
    return 0


def _cmd_eval_homography(args):
    stream = feat_mod.read_stream(args.stream)
    gt = read_ground_truth(args.gt)
    corners = {idx: c for idx, c, _ in gt}
    pairs, corner_pairs = [], []
    for a, b in zip(stream.frames, stream.frames[1:]):
        if a.frame_index in corners and b.frame_index in corners:
            pairs.append((a, b))
            corner_pairs.append((corners[a.frame_index], corners[b.frame_index]))
    if not pairs:
        raise ConfigError("no consecutive frame pairs with ground truth")
    if args.jobs > 1:
        chunks = np.array_split(np.arange(len(pairs)), args.jobs)
        def run(chunk):
            if len(chunk) == 0:
                return 0, 0
            rep = homography_precision(
                [pairs[i] for i in chunk], [corner_pairs[i] for i in chunk],
                eps_bp=args.eps, ratio=args.ratio, iterations=args.iterations,
                inlier_threshold=args.threshold, seed=args.seed + int(chunk[0]),
            )
            return rep.correct, rep.total
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            parts = list(pool.map(run, chunks))
        correct = sum(p[0] for p in parts)
        total = sum(p[1] for p in parts)
        precision = correct / total
    else:
        rep = homography_precision(
            pairs, corner_pairs, eps_bp=args.eps, ratio=args.ratio,
            iterations=args.iterations, inlier_threshold=args.threshold, seed=args.seed,
        )
        precision, correct, total = rep.precision, rep.correct, rep.total
    print(f"homography precision: {precision:.4f} ({correct}/{total} pairs, eps={args.eps}px)")
    if args.csv_out:
        sweep_mod.write_rows_csv(
            [{"task": "homography", "pairs": total, "eps_bp": args.eps, "precision": round(precision, 4)}],
            args.csv_out,
        )
    return 0


def _cmd_eval_retrieval(args):
    db_stream = feat_mod.read_stream(args.db)
    dictionary = bovw_mod.read_dictionary(args.dict)
    relevance = ret_mod.read_relevance(args.relevance)
    queries = {}
    for i, qpath in enumerate(args.queries):
        queries[i] = feat_mod.read_stream(qpath)
    db = ret_mod.RetrievalDatabase(
        ids=np.array([fr.frame_index for fr in db_stream.frames], dtype=np.int64),
        globals=np.stack([bovw_mod.build_global(fr, dictionary) for fr in db_stream.frames]),
        local_features=db_stream.frames,
        relevance=relevance,
    )
    art = sweep_mod.RetrievalArtifacts(db=db, queries=queries, dictionary=dictionary,
                                       training_globals=np.zeros((0, dictionary.V)))
    cbs = None
    if args.bovw_intra:
        intra = cb_mod.read_codebook(_codebook_path(args.bovw_intra))
        inter = cb_mod.read_codebook(_codebook_path(args.bovw_inter)) if args.bovw_inter else None
        cbs = (intra, inter)
    rerank_config = None
    if args.rerank:
        li, le = _load_local_configs(args, need_inter=args.rerank_mode != "intra")
        w = int(queries[0].metadata.get("width", 640))
        h = int(queries[0].metadata.get("height", 480))
        rerank_config = lc_mod.EncoderConfig(li, le, lam=1.0, width=w, height=h)
    res = sweep_mod.evaluate_retrieval_pipeline(
        art, delta=args.delta, mode=args.mode, bovw_cbs=cbs, gop=args.gop,
        strategy=args.strategy, top_k=args.k, rerank_config=rerank_config,
        rerank_mode=args.rerank_mode, ratio=args.ratio,
    )
    print(f"retrieval MAP: {res['map']:.4f}  MAP(MRA): {res['map_mra']:.4f}  "
          f"{res['bytes_per_query']:.1f} Bytes/query")
    if args.csv_out:
        sweep_mod.write_rows_csv(
            [{
                "task": "retrieval", "delta": args.delta, "mode": args.mode, "gop": args.gop,
                "strategy": args.strategy, "bytes_per_query": round(res["bytes_per_query"], 2),
                "map": round(res["map"], 4), "map_mra": round(res["map_mra"], 4),
            }],
            args.csv_out,
        )
    return 0


def _cmd_sweep(args):
    grid = _parse_grid(args.grid)
    kwargs = {}
    if args.task == "retrieval":
        kwargs["v"] = args.v
    rows_jobs = [(args.task, grid, args.seed)]
    if args.jobs > 1 and len(grid.get("k", grid.get("delta", []))) > 1:
        # one job per primary grid value, merged in grid order
        primary = "k" if "k" in grid else "delta" if "delta" in grid else None
        if primary:
            rows_jobs = [
                (args.task, {**grid, primary: [v]}, args.seed) for v in grid[primary]
            ]
    def run(job):
        task, g, seed = job
        return sweep_mod.run_rate_efficiency(task, g, seed=seed, lam=getattr(args, "lambda"), **kwargs)
    if args.jobs > 1 and len(rows_jobs) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            parts = list(pool.map(run, rows_jobs))
        rows = [r for part in parts for r in part]
    else:
        rows = [r for job in rows_jobs for r in run(job)]
    n = sweep_mod.write_rows_csv(rows, args.out)
    print(f"sweep wrote {n} rows -> {args.out}")
    if args.plot:
        x = "bytes_per_query" if args.task == "retrieval" else "bits_per_feature"
        y = {"retrieval": "map", "homography": "precision", "local-rate": "descriptor_bits_per_feature"}[args.task]
        sweep_mod.plot_rows(rows, x, y, args.plot)
        print(f"plot -> {args.plot}")
    return 0


# --- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bfcodec",
        description="Codec toolkit for binary local features and BoVW global descriptors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=fn, command=name)
        p.add_argument("--config", default=None, help="INI config file; flags override it")
        return p

    p = add("synth", _cmd_synth, "generate synthetic streams / scenes / datasets")
    _opt(p, "synth", "--kind", "stream", str, "stream | planar | retrieval")
    _opt(p, "synth", "--seed", 0, int)
    _opt(p, "synth", "--frames", 30, int)
    _opt(p, "synth", "--features", 50, int, "features per frame (planar: plane inliers)")
    _opt(p, "synth", "--p", 512, int, "descriptor length")
    _opt(p, "synth", "--width", 640, int)
    _opt(p, "synth", "--height", 480, int)
    _opt(p, "synth", "--dup", 0.9, float, "feature duplication probability")
    _opt(p, "synth", "--flip", 0.02, float, "dexel flip probability on duplicates")
    _opt(p, "synth", "--drift", 4, int, "keypoint drift in quantized units")
    _opt(p, "synth", "--stay0", 0.5, float, "dexel Markov P(next=0 | prev=0)")
    _opt(p, "synth", "--stay1", 0.5, float, "dexel Markov P(next=1 | prev=1)")
    _opt(p, "synth", "--outlier-frac", 0.2, float, "planar: outlier fraction")
    _opt(p, "synth", "--noise", 0.5, float, "planar: keypoint noise in pixels")
    _opt(p, "synth", "--format", "binary", str, "binary | json")
    _opt(p, "synth", "--out", "stream.bfs", str)
    _opt(p, "synth", "--gt-out", None, str, "planar: ground-truth CSV path")
    _opt(p, "synth", "--out-dir", "retrieval_data", str, "retrieval: output directory")

    p = add("rank-dexels", _cmd_rank_dexels, "boosting-based dexel discriminability ranking")
    _opt(p, "rank-dexels", "--pairs", None, str, "pair file (binary or CSV)")
    _opt(p, "rank-dexels", "--p", 512, int, "descriptor length for synthetic pairs")
    _opt(p, "rank-dexels", "--n-pairs", 2000, int)
    _opt(p, "rank-dexels", "--planted", 8, int, "planted informative dexels (synthetic)")
    _opt(p, "rank-dexels", "--rounds", None, int)
    _opt(p, "rank-dexels", "--asymmetry", 2.0, float)
    _opt(p, "rank-dexels", "--seed", 0, int)
    _opt(p, "rank-dexels", "--out", "ranking.json", str)

    p = add("train-local", _cmd_train_local, "estimate intra/inter local codebooks")
    _opt(p, "train-local", "--stream", "train.bfs", str)
    _opt(p, "train-local", "--k", None, int)
    _opt(p, "train-local", "--ranking", None, str, "dexel ranking JSON from rank-dexels")
    _opt(p, "train-local", "--window", (64, 64, 4), _triple, "search window dx,dy,dscale")
    _opt(p, "train-local", "--scale-alphabet", 256, int)
    _opt(p, "train-local", "--out-prefix", "local", str)

    p = add("dict-learn", _cmd_dict_learn, "learn a BoVW dictionary")
    _opt(p, "dict-learn", "--stream", "train.bfs", str, "descriptor source stream")
    _opt(p, "dict-learn", "--v", 256, int)
    _opt(p, "dict-learn", "--method", "kmeans", str, "kmeans | kmedians | kmedoids")
    _opt(p, "dict-learn", "--sample", None, int, "subsample size")
    _opt(p, "dict-learn", "--seed", 0, int)
    _opt(p, "dict-learn", "--idf-docs", None, str, "stream whose frames are idf documents")
    _opt(p, "dict-learn", "--out", "dict.bfdc", str)

    p = add("train-bovw", _cmd_train_bovw, "estimate BoVW coding tables")
    _opt(p, "train-bovw", "--stream", "train.bfs", str)
    _opt(p, "train-bovw", "--dict", "dict.bfdc", str)
    _opt(p, "train-bovw", "--delta", 0.05, float)
    _opt(p, "train-bovw", "--alphabet", 16, int)
    _opt(p, "train-bovw", "--out-prefix", "bovw", str)

    p = add("encode", _cmd_encode, "encode a local feature stream")
    _opt(p, "encode", "--stream", "stream.bfs", str)
    _opt(p, "encode", "--intra-codebook", "local.intra.bfcb", str)
    _opt(p, "encode", "--inter-codebook", None, str)
    _opt(p, "encode", "--k", None, int, "expected K (validated against the codebook)")
    _opt(p, "encode", "--lambda", 1.0, float)
    _opt(p, "encode", "--mode", "auto", str, "intra | inter | auto")
    _opt(p, "encode", "--width", 640, int, "fallback when stream metadata lacks it")
    _opt(p, "encode", "--height", 480, int)
    _opt(p, "encode", "--out", "stream.bfe", str)

    p = add("decode", _cmd_decode, "decode a local feature bitstream")
    _opt(p, "decode", "--bitstream", "stream.bfe", str)
    _opt(p, "decode", "--intra-codebook", "local.intra.bfcb", str)
    _opt(p, "decode", "--inter-codebook", None, str)
    _opt(p, "decode", "--format", "binary", str, "binary | json")
    _opt(p, "decode", "--out", "decoded.bfs", str)

    p = add("bovw-encode", _cmd_bovw_encode, "encode global descriptors of a stream")
    _opt(p, "bovw-encode", "--stream", "stream.bfs", str)
    _opt(p, "bovw-encode", "--dict", "dict.bfdc", str)
    _opt(p, "bovw-encode", "--delta", 0.05, float)
    _opt(p, "bovw-encode", "--mode", "intra", str, "intra | inter")
    _opt(p, "bovw-encode", "--intra-codebook", "bovw.bovw-intra.bfcb", str)
    _opt(p, "bovw-encode", "--inter-codebook", None, str)
    _opt(p, "bovw-encode", "--out", "globals.bge", str)

    p = add("bovw-decode", _cmd_bovw_decode, "decode a global-descriptor bitstream")
    _opt(p, "bovw-decode", "--bitstream", "globals.bge", str)
    _opt(p, "bovw-decode", "--intra-codebook", "bovw.bovw-intra.bfcb", str)
    _opt(p, "bovw-decode", "--inter-codebook", None, str)
    _opt(p, "bovw-decode", "--out", "globals.npz", str)

    p = add("eval-homography", _cmd_eval_homography, "homography precision of a decoded stream")
    _opt(p, "eval-homography", "--stream", "decoded.bfs", str)
    _opt(p, "eval-homography", "--gt", "gt.csv", str)
    _opt(p, "eval-homography", "--eps", 3.0, float, "backprojection threshold in pixels")
    _opt(p, "eval-homography", "--ratio", 0.7, float)
    _opt(p, "eval-homography", "--iterations", 2000, int)
    _opt(p, "eval-homography", "--threshold", 3.0, float, "RANSAC inlier threshold (px)")
    _opt(p, "eval-homography", "--seed", 0, int)
    _opt(p, "eval-homography", "--jobs", 1, int)
    _opt(p, "eval-homography", "--csv-out", None, str)

    p = add("eval-retrieval", _cmd_eval_retrieval, "retrieval MAP of query streams vs a database")
    _opt(p, "eval-retrieval", "--db", "db.bfs", str)
    _opt(p, "eval-retrieval", "--dict", "dict.bfdc", str)
    _opt(p, "eval-retrieval", "--relevance", "relevance.json", str)
    p.add_argument("--queries", nargs="+", required=True, help="query stream files (id = position)")
    _opt(p, "eval-retrieval", "--k", 200, int, "top-k candidate block")
    _opt(p, "eval-retrieval", "--delta", None, float)
    _opt(p, "eval-retrieval", "--mode", "intra", str)
    _opt(p, "eval-retrieval", "--gop", 1, int)
    _opt(p, "eval-retrieval", "--strategy", "skip", str, "skip | gop_median")
    _opt(p, "eval-retrieval", "--ratio", 0.7, float)
    _opt(p, "eval-retrieval", "--bovw-intra", None, str)
    _opt(p, "eval-retrieval", "--bovw-inter", None, str)
    _opt(p, "eval-retrieval", "--rerank", False, bool, "re-rank top-k with local features", action="store_true")
    _opt(p, "eval-retrieval", "--rerank-mode", "auto", str)
    _opt(p, "eval-retrieval", "--intra-codebook", None, str)
    _opt(p, "eval-retrieval", "--inter-codebook", None, str)
    _opt(p, "eval-retrieval", "--csv-out", None, str)

    p = add("sweep", _cmd_sweep, "rate-efficiency sweep over a parameter grid")
    _opt(p, "sweep", "--task", "local-rate", str, "local-rate | homography | retrieval")
    _opt(p, "sweep", "--grid", "k=8,64,512", str, "e.g. 'k=8,64;mode=intra,auto' or 'delta=0.01,0.05'")
    _opt(p, "sweep", "--seed", 0, int)
    _opt(p, "sweep", "--lambda", 1.0, float)
    _opt(p, "sweep", "--v", 256, int, "retrieval dictionary size")
    _opt(p, "sweep", "--jobs", 1, int)
    _opt(p, "sweep", "--out", "sweep.csv", str)
    _opt(p, "sweep", "--plot", None, str, "optional PNG path (needs matplotlib)")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _finalize(args)
        return args.func(args)
    except BfcodecError as exc:
        print(f"BFCODEC-ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"BFCODEC-ERROR IoError: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
