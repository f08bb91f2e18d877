"""Descriptor matching, RANSAC homography estimation, and the precision harness.

Matches between consecutive frames feed a 4-point RANSAC with normalized
DLT fits; an estimated homography counts as correct when the mean corner
backprojection error stays under a pixel threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import FormatError, InsufficientCandidates, InsufficientMatches, IoError
from .features import FrameFeatures

DEFAULT_RATIO = 0.7
DEFAULT_EPS_BP = 3.0
DEFAULT_RANSAC_ITERS = 2000
DEFAULT_INLIER_THRESHOLD = 3.0


def _desc_matrix(obj) -> np.ndarray:
    return obj.descriptor_matrix() if isinstance(obj, FrameFeatures) else np.asarray(obj, dtype=np.uint8)


def _ratio_fraction(ratio) -> Fraction:
    # exact rational comparison; str() keeps 0.7 as 7/10 rather than its float expansion
    if isinstance(ratio, Fraction):
        return ratio
    return Fraction(str(ratio))


def match_features(set_a, set_b, ratio=DEFAULT_RATIO) -> list[tuple[int, int]]:
    """Nearest-neighbor Hamming matches from A to B filtered by the ratio test.

    A pair is kept iff d1 < ratio * d2 with integer distances compared in
    exact rationals; nearest-neighbor ties go to the lowest B index.
    """
    a = _desc_matrix(set_a)
    b = _desc_matrix(set_b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InsufficientCandidates("both feature sets must be nonempty")
    if b.shape[0] < 2:
        raise InsufficientCandidates("ratio test needs at least two candidates")
    frac = _ratio_fraction(ratio)
    if not 0 < frac < 1:
        raise ValueError(f"ratio {ratio} outside (0, 1)")
    af = a.astype(np.float64)
    bf = b.astype(np.float64)
    ham = np.rint(af @ (1.0 - bf.T) + (1.0 - af) @ bf.T).astype(np.int64)
    j1 = np.argmin(ham, axis=1)
    rows = np.arange(a.shape[0])
    d1 = ham[rows, j1].copy()
    ham[rows, j1] = np.iinfo(np.int64).max
    d2 = ham.min(axis=1)
    keep = d1 * frac.denominator < frac.numerator * d2
    return [(int(i), int(j1[i])) for i in np.flatnonzero(keep)]


# --- homography estimation -----------------------------------------------------------

def _normalize_points(pts: np.ndarray):
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d if d > 1e-12 else 1.0
    t = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    ph = np.column_stack([pts, np.ones(len(pts))])
    return (t @ ph.T).T[:, :2], t


def _dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Normalized direct linear transform; None for degenerate systems."""
    sn, ts = _normalize_points(src)
    dn, td = _normalize_points(dst)
    n = len(src)
    a = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    a[0::2] = np.column_stack([x, y, np.ones(n), np.zeros((n, 3)), -u * x, -u * y, -u])
    a[1::2] = np.column_stack([np.zeros((n, 3)), x, y, np.ones(n), -v * x, -v * y, -v])
    if np.linalg.matrix_rank(a) < 8:
        return None
    _, _, vt = np.linalg.svd(a)
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    if abs(h[2, 2]) < 1e-12:
        return None
    return h / h[2, 2]


def _project(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    ph = np.column_stack([pts, np.ones(len(pts))])
    q = (h @ ph.T).T
    w = q[:, 2:3]
    w = np.where(np.abs(w) < 1e-12, 1e-12, w)
    return q[:, :2] / w


def _symmetric_error(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    hinv = np.linalg.inv(h)
    fwd = np.sqrt(((_project(h, src) - dst) ** 2).sum(axis=1))
    bwd = np.sqrt(((_project(hinv, dst) - src) ** 2).sum(axis=1))
    return fwd + bwd


def estimate_homography(
    src: np.ndarray,
    dst: np.ndarray,
    iterations: int = DEFAULT_RANSAC_ITERS,
    inlier_threshold: float = DEFAULT_INLIER_THRESHOLD,
    seed: int = 0,
    confidence: float = 0.9999,
) -> np.ndarray | None:
    """RANSAC homography from point correspondences (None when unsupported).

    4-point minimal samples, normalized DLT, inliers under the symmetric
    transfer error, final least-squares refit on the best consensus.
    Deterministic for a fixed seed; stops early once `confidence` is met.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = len(src)
    if n < 4 or len(dst) != n:
        raise InsufficientMatches(f"homography needs >= 4 correspondences, got {n}")
    rng = np.random.default_rng(seed)
    best_count = 0
    best_err = np.inf
    best_inliers = None
    needed = iterations
    for it in range(iterations):
        if it >= needed:
            break
        idx = rng.choice(n, size=4, replace=False)
        h = _dlt(src[idx], dst[idx])
        if h is None:
            continue
        try:
            err = _symmetric_error(h, src, dst)
        except np.linalg.LinAlgError:
            continue
        inliers = err < inlier_threshold
        count = int(inliers.sum())
        score = float(err[inliers].sum())
        if count > best_count or (count == best_count and score < best_err):
            best_count = count
            best_err = score
            best_inliers = inliers
            w = count / n
            if 0.0 < w < 1.0:
                denom = np.log1p(-(w ** 4))
                if denom < 0:
                    needed = min(iterations, int(np.ceil(np.log(1.0 - confidence) / denom)))
            elif w >= 1.0:
                needed = it + 1
    if best_inliers is None or best_count < 4:
        return None
    # refit on the consensus, letting the inlier set stabilize under the
    # refit model (the minimal-sample consensus is biased at the threshold)
    h = None
    inliers = best_inliers
    for _ in range(4):
        refit = _dlt(src[inliers], dst[inliers])
        if refit is None:
            break
        h = refit
        new_inliers = _symmetric_error(h, src, dst) < inlier_threshold
        if new_inliers.sum() < 4 or np.array_equal(new_inliers, inliers):
            break
        inliers = new_inliers
    return h


# --- precision harness -----------------------------------------------------------------

def _match_points(frame_a: FrameFeatures, frame_b: FrameFeatures, ratio):
    """Matched keypoint pixel coordinates between two frames."""
    pairs = match_features(frame_a, frame_b, ratio)
    if not pairs:
        return np.zeros((0, 2)), np.zeros((0, 2))
    kp_a = frame_a.keypoint_array().astype(np.float64) * 0.25
    kp_b = frame_b.keypoint_array().astype(np.float64) * 0.25
    ia = np.array([p[0] for p in pairs])
    ib = np.array([p[1] for p in pairs])
    return kp_a[ia, :2], kp_b[ib, :2]


def backprojection_error(h: np.ndarray, corners_a: np.ndarray, corners_b: np.ndarray) -> float:
    """Mean Euclidean displacement of the four warped corners."""
    warped = _project(h, np.asarray(corners_a, dtype=np.float64))
    diff = warped - np.asarray(corners_b, dtype=np.float64)
    return float(np.sqrt((diff ** 2).sum(axis=1)).mean())


@dataclass
class PrecisionReport:
    precision: float
    errors: list[float]            # per-pair backprojection error; inf when estimation failed
    correct: int
    total: int


def homography_precision(
    frame_pairs,
    corner_pairs,
    eps_bp: float = DEFAULT_EPS_BP,
    ratio=DEFAULT_RATIO,
    iterations: int = DEFAULT_RANSAC_ITERS,
    inlier_threshold: float = DEFAULT_INLIER_THRESHOLD,
    seed: int = 0,
) -> PrecisionReport:
    """Fraction of frame pairs whose estimated homography lands the ground
    truth corners within eps_bp pixels.

    `frame_pairs` holds (FrameFeatures, FrameFeatures); `corner_pairs`
    the matching ((4,2), (4,2)) ground-truth corners.  Failed matching or
    estimation simply counts as incorrect.
    """
    errors = []
    correct = 0
    total = 0
    for k, ((fa, fb), (ca, cb)) in enumerate(zip(frame_pairs, corner_pairs)):
        total += 1
        try:
            pa, pb = _match_points(fa, fb, ratio)
            if len(pa) < 4:
                errors.append(float("inf"))
                continue
            h = estimate_homography(pa, pb, iterations, inlier_threshold, seed=seed + k)
        except (InsufficientCandidates, InsufficientMatches):
            errors.append(float("inf"))
            continue
        if h is None:
            errors.append(float("inf"))
            continue
        e = backprojection_error(h, ca, cb)
        errors.append(e)
        if e < eps_bp:
            correct += 1
    precision = correct / total if total else 0.0
    return PrecisionReport(precision=precision, errors=errors, correct=correct, total=total)


# --- ground-truth file (CSV: frame, 8 corner floats, 9 homography floats) ---------------

def write_ground_truth(path, rows) -> int:
    """rows: iterable of (frame_index, corners (4,2), homography (3,3))."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["frame"]
                + [f"c{i}{ax}" for i in range(1, 5) for ax in ("x", "y")]
                + [f"h{i}{j}" for i in range(1, 4) for j in range(1, 4)]
            )
            count = 0
            for frame_index, corners, h in rows:
                corners = np.asarray(corners, dtype=np.float64).reshape(4, 2)
                h = np.asarray(h, dtype=np.float64).reshape(3, 3)
                w.writerow(
                    [frame_index]
                    + [repr(float(v)) for v in corners.ravel()]
                    + [repr(float(v)) for v in h.ravel()]
                )
                count += 1
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return count


def read_ground_truth(path) -> list[tuple[int, np.ndarray, np.ndarray]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "frame" or len(header) != 18:
            raise FormatError(f"{path}: ground-truth header must hold frame + 8 + 9 columns")
        for rec in reader:
            if len(rec) != 18:
                raise FormatError(f"{path}: row with {len(rec)} columns")
            vals = [float(v) for v in rec[1:]]
            rows.append(
                (
                    int(rec[0]),
                    np.array(vals[:8]).reshape(4, 2),
                    np.array(vals[8:]).reshape(3, 3),
                )
            )
    return rows
