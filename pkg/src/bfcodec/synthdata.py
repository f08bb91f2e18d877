"""Synthetic scenes and databases for the evaluation harnesses.

The planar-scene generator replaces a tracking dataset: a textured plane
moves under a known smooth homography path, observed as noisy keypoints
with re-observed descriptors plus clutter outliers.  The retrieval
generator plants word-profile clusters so relevance is known exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .features import FeatureStream, FrameFeatures, quantize_keypoint, LocalFeature, BinaryDescriptor


# --- planar scene ------------------------------------------------------------------

@dataclass
class PlanarSceneConfig:
    frames: int = 101
    inliers: int = 50
    outlier_fraction: float = 0.2
    noise_px: float = 0.5
    descriptor_length: int = 512
    desc_flip_prob: float = 0.02
    width: int = 640
    height: int = 480
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ConfigError("outlier fraction must lie in [0, 1)")
        if self.frames < 2 or self.inliers < 4:
            raise ConfigError("need at least 2 frames and 4 plane points")


def _motion_homography(n: int, period: float, cx: float, cy: float) -> np.ndarray:
    """Smooth rotation + translation + scale + mild projective wobble."""
    t = 2.0 * math.pi * n / period
    ang = 0.10 * math.sin(t)
    s = 1.0 + 0.05 * math.sin(0.7 * t)
    tx = 25.0 * math.sin(0.5 * t)
    ty = 18.0 * math.cos(0.6 * t)
    ca, sa = math.cos(ang), math.sin(ang)
    core = np.array(
        [
            [s * ca, -s * sa, 0.0],
            [s * sa, s * ca, 0.0],
            [2e-5 * math.sin(t), 2e-5 * math.cos(t), 1.0],
        ]
    )
    to_origin = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    back = np.array([[1.0, 0.0, cx + tx], [0.0, 1.0, cy + ty], [0.0, 0.0, 1.0]])
    h = back @ core @ to_origin
    return h / h[2, 2]


def _apply_h(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    ph = np.column_stack([pts, np.ones(len(pts))])
    q = (h @ ph.T).T
    return q[:, :2] / q[:, 2:3]


@dataclass
class PlanarScene:
    stream: FeatureStream                               # observed features per frame
    ground_truth: list                                  # (frame_index, corners (4,2), H_ref->n)
    homographies: list                                  # H_ref->n as arrays


def gen_planar_scene(config: PlanarSceneConfig) -> PlanarScene:
    config.validate()
    rng = np.random.default_rng(config.seed)
    p = config.descriptor_length
    w, h = config.width, config.height
    corners_ref = np.array(
        [[0.25 * w, 0.25 * h], [0.75 * w, 0.25 * h], [0.75 * w, 0.75 * h], [0.25 * w, 0.75 * h]]
    )
    pts_ref = np.column_stack(
        [
            rng.uniform(0.27 * w, 0.73 * w, config.inliers),
            rng.uniform(0.27 * h, 0.73 * h, config.inliers),
        ]
    )
    base_desc = rng.integers(0, 2, (config.inliers, p)).astype(np.uint8)
    n_out = int(round(config.inliers * config.outlier_fraction / (1.0 - config.outlier_fraction)))

    frames = []
    gt = []
    hs = []
    for n in range(config.frames):
        hn = _motion_homography(n, period=max(config.frames, 40), cx=w / 2, cy=h / 2)
        hs.append(hn)
        gt.append((n, _apply_h(hn, corners_ref), hn))
        pts = _apply_h(hn, pts_ref) + rng.normal(0.0, config.noise_px, (config.inliers, 2))
        desc = base_desc ^ (rng.random((config.inliers, p)) < config.desc_flip_prob)
        out_pts = np.column_stack(
            [rng.uniform(0, w - 1, n_out), rng.uniform(0, h - 1, n_out)]
        )
        out_desc = rng.integers(0, 2, (n_out, p)).astype(np.uint8)
        feats = []
        for (x, y), d in zip(np.vstack([pts, out_pts]), np.vstack([desc, out_desc])):
            kp = quantize_keypoint(
                min(max(x, 0.0), w - 0.25), min(max(y, 0.0), h - 0.25),
                8.0 + rng.uniform(0, 2), rng.uniform(0, 2 * math.pi),
            )
            feats.append(LocalFeature(kp, BinaryDescriptor(d.astype(np.uint8))))
        frames.append(FrameFeatures(frame_index=n, features=feats))

    stream = FeatureStream(
        descriptor_length=p,
        frames=frames,
        metadata={"width": str(w), "height": str(h), "seed": str(config.seed)},
    )
    return PlanarScene(stream=stream, ground_truth=gt, homographies=hs)


# --- retrieval dataset ---------------------------------------------------------------

@dataclass
class RetrievalDatasetConfig:
    vocab_words: int = 256
    clusters: int = 10
    relevant_per_cluster: int = 5
    distractors: int = 150
    words_per_profile: int = 70
    words_per_image: int = 60
    query_frames: int = 5
    descriptor_length: int = 512
    word_noise_bits: int = 8
    training_samples_per_word: int = 30
    training_video_frames: int = 120
    width: int = 640
    height: int = 480
    seed: int = 0

    def validate(self):
        if self.words_per_image > self.words_per_profile:
            raise ConfigError("an image cannot use more words than its profile holds")
        if self.words_per_profile > self.vocab_words:
            raise ConfigError("profile larger than the vocabulary")


@dataclass
class RetrievalDataset:
    db_images: list[FrameFeatures]
    db_ids: np.ndarray
    relevance: dict[int, set]
    queries: dict[int, FeatureStream]
    training_descriptors: np.ndarray
    training_video: FeatureStream
    word_patterns: np.ndarray = field(repr=False, default=None)


def _noisy_word(rng, pattern: np.ndarray, flips: int) -> np.ndarray:
    d = pattern.copy()
    if flips:
        pos = rng.choice(pattern.shape[0], flips, replace=False)
        d[pos] ^= 1
    return d


def _image_features(rng, cfg, patterns, profile, frame_index) -> FrameFeatures:
    words = rng.choice(profile, cfg.words_per_image, replace=False)
    feats = []
    for wid in words:
        d = _noisy_word(rng, patterns[wid], cfg.word_noise_bits)
        kp = quantize_keypoint(
            rng.uniform(0, cfg.width - 1), rng.uniform(0, cfg.height - 1),
            4.0 + rng.uniform(0, 4), rng.uniform(0, 2 * math.pi),
        )
        feats.append(LocalFeature(kp, BinaryDescriptor(d)))
    return FrameFeatures(frame_index=frame_index, features=feats)


def gen_retrieval_dataset(config: RetrievalDatasetConfig) -> RetrievalDataset:
    """Database with planted relevant clusters plus distractors, and one
    query video per cluster whose frames share the cluster's word profile."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    p = config.descriptor_length
    patterns = rng.integers(0, 2, (config.vocab_words, p)).astype(np.uint8)
    profiles = [
        rng.choice(config.vocab_words, config.words_per_profile, replace=False)
        for _ in range(config.clusters)
    ]

    db_images = []
    relevance = {q: set() for q in range(config.clusters)}
    db_id = 0
    for c in range(config.clusters):
        for _ in range(config.relevant_per_cluster):
            db_images.append(_image_features(rng, config, patterns, profiles[c], db_id))
            relevance[c].add(db_id)
            db_id += 1
    for _ in range(config.distractors):
        profile = rng.choice(config.vocab_words, config.words_per_profile, replace=False)
        db_images.append(_image_features(rng, config, patterns, profile, db_id))
        db_id += 1

    queries = {}
    for c in range(config.clusters):
        frames = [
            _image_features(rng, config, patterns, profiles[c], n)
            for n in range(config.query_frames)
        ]
        queries[c] = FeatureStream(
            descriptor_length=p,
            frames=frames,
            metadata={"width": str(config.width), "height": str(config.height)},
        )

    samples = []
    for wid in range(config.vocab_words):
        for _ in range(config.training_samples_per_word):
            samples.append(_noisy_word(rng, patterns[wid], config.word_noise_bits))
    training_descriptors = np.stack(samples)

    # cluster random walk: temporally correlated frames for inter-table training
    video_frames = []
    c = int(rng.integers(0, config.clusters))
    for n in range(config.training_video_frames):
        if rng.random() < 0.1:
            c = int(rng.integers(0, config.clusters))
        video_frames.append(_image_features(rng, config, patterns, profiles[c], n))
    training_video = FeatureStream(
        descriptor_length=p,
        frames=video_frames,
        metadata={"width": str(config.width), "height": str(config.height)},
    )

    return RetrievalDataset(
        db_images=db_images,
        db_ids=np.arange(db_id, dtype=np.int64),
        relevance=relevance,
        queries=queries,
        training_descriptors=training_descriptors,
        training_video=training_video,
        word_patterns=patterns,
    )
