"""Codec toolkit for binary local visual features and BoVW global descriptors."""

from .errors import (
    BfcodecError,
    ConfigError,
    DegenerateTrainingSet,
    DimensionError,
    EmptyGop,
    EmptyTrainingSet,
    FormatError,
    InsufficientCandidates,
    InsufficientMatches,
    InvalidKeypoint,
    InvalidPair,
    IoError,
    StreamError,
    SymbolError,
    TruncatedBitstream,
    UndefinedAP,
)
from .features import (
    BinaryDescriptor,
    FeatureStream,
    FrameFeatures,
    LocalFeature,
    QuantizedKeypoint,
    SynthConfig,
    quantize_keypoint,
    read_stream,
    synth_stream,
    write_stream,
    write_stream_json,
)
from .entropy import (
    CodingPermutation,
    DexelStats,
    SymbolTable,
    conditional_entropy,
    entropy,
    estimate_dexel_stats,
    learn_permutation,
    marginal_entropy,
    permutation_bound,
    range_decode,
    range_encode,
)
from .codebooks import (
    BovwInterCodebook,
    BovwIntraCodebook,
    LocalInterCodebook,
    LocalIntraCodebook,
    read_codebook,
    train_bovw_codebooks,
    train_local_codebooks,
    write_codebook,
)
from .local_codec import (
    EncodedFrame,
    EncodedStream,
    EncoderConfig,
    decode_frame,
    decode_stream,
    encode_frame,
    encode_stream,
    find_reference,
    project_stream,
    read_bitstream,
    select_dexels,
    stream_rate_summary,
    write_bitstream,
)
from .boosting import DexelRanking, PairSet, gen_synthetic_pairs, rank_dexels, read_pairs, write_pairs
from .bovw import (
    Dictionary,
    QuantizedGlobal,
    aggregate_gop,
    build_global,
    compute_idf,
    dequantize_global,
    learn_dictionary,
    quantize_global,
    read_dictionary,
    write_dictionary,
)
from .geometry import (
    backprojection_error,
    estimate_homography,
    homography_precision,
    match_features,
    read_ground_truth,
    write_ground_truth,
)
from .retrieval import (
    RankedList,
    RetrievalDatabase,
    average_precision,
    average_precision_exact,
    mean_average_precision,
    median_rank_aggregate,
    read_relevance,
    rerank,
    retrieve,
    write_relevance,
)
from .synthdata import (
    PlanarSceneConfig,
    RetrievalDatasetConfig,
    gen_planar_scene,
    gen_retrieval_dataset,
)
from .sweep import run_rate_efficiency

__version__ = "0.1.0"
