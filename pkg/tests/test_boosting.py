import numpy as np
import pytest

from bfcodec.boosting import (
    DexelRanking,
    PairSet,
    gen_synthetic_pairs,
    rank_dexels,
    read_pairs,
    write_pairs,
    write_pairs_csv,
)
from bfcodec.errors import ConfigError, DegenerateTrainingSet, FormatError


def _perfect_dexel_pairs(p=10, n=40, j=4, seed=0):
    """Dexel j agrees on every matching pair and is fair noise on non-matching."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2 == 0
    a = rng.integers(0, 2, (n, p)).astype(np.uint8)
    b = rng.integers(0, 2, (n, p)).astype(np.uint8)
    b[labels, j] = a[labels, j]
    return PairSet(a=a, b=b, labels=labels)


class TestRankDexels:
    def test_perfect_dexel_wins_round_one(self):
        pairs = _perfect_dexel_pairs(j=4)
        ranking = rank_dexels(pairs, rounds=3)
        assert ranking.order[0] == 4

    def test_full_rounds_give_permutation(self):
        pairs = gen_synthetic_pairs(6, 60, np.array([1, 3]), seed=2)
        ranking = rank_dexels(pairs, rounds=6)
        assert sorted(ranking.order.tolist()) == list(range(6))

    def test_single_label_rejected(self):
        rng = np.random.default_rng(0)
        ps = PairSet(
            a=rng.integers(0, 2, (10, 4)).astype(np.uint8),
            b=rng.integers(0, 2, (10, 4)).astype(np.uint8),
            labels=np.ones(10, bool),
        )
        with pytest.raises(DegenerateTrainingSet):
            rank_dexels(ps)

    def test_empty_rejected(self):
        ps = PairSet(
            a=np.zeros((0, 4), np.uint8), b=np.zeros((0, 4), np.uint8), labels=np.zeros(0, bool)
        )
        with pytest.raises(DegenerateTrainingSet):
            rank_dexels(ps)

    def test_invalid_rounds(self):
        pairs = _perfect_dexel_pairs()
        with pytest.raises(ConfigError):
            rank_dexels(pairs, rounds=11)

    def test_invariant_to_pair_order(self, rng):
        pairs = gen_synthetic_pairs(12, 100, np.array([2, 7, 9]), seed=4)
        perm = rng.permutation(len(pairs))
        shuffled = PairSet(a=pairs.a[perm], b=pairs.b[perm], labels=pairs.labels[perm])
        a = rank_dexels(pairs, rounds=12)
        b = rank_dexels(shuffled, rounds=12)
        assert np.array_equal(a.order, b.order)

    def test_duplicate_order_rejected_by_type(self):
        with pytest.raises(ValueError):
            DexelRanking(order=np.array([1, 1, 2]), scores=np.zeros(3))


def _boost_oracle(pairs: PairSet, rounds, asymmetry):
    """Straight-line reimplementation with explicit per-pair loops."""
    import math

    n, p = len(pairs), pairs.P
    w = [1.0 / n] * n
    used = set()
    order = []
    for _ in range(rounds):
        best_j, best_eps = None, None
        for j in range(p):
            if j in used:
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
        used.add(best_j)
        e = min(max(best_eps, 1e-10), 1 - 1e-10)
        alpha = 0.5 * math.log((1 - e) / e)
        for i in range(n):
            agree = pairs.a[i, best_j] == pairs.b[i, best_j]
            wrong = agree != bool(pairs.labels[i])
            w[i] *= math.exp(alpha if wrong else -alpha)
        total = sum(w)
        w = [x / total for x in w]
    return order


class TestOracleEquality:
    def test_p4_hand_built_pairs(self):
        a = np.array([
            [0, 0, 1, 0], [1, 1, 0, 0], [0, 1, 1, 1], [1, 0, 0, 1],
            [0, 0, 0, 0], [1, 1, 1, 1], [0, 1, 0, 1], [1, 0, 1, 0],
        ], dtype=np.uint8)
        b = np.array([
            [0, 1, 1, 0], [1, 0, 0, 1], [0, 0, 1, 0], [1, 1, 0, 0],
            [1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 1], [1, 1, 0, 0],
        ], dtype=np.uint8)
        labels = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=bool)
        pairs = PairSet(a=a, b=b, labels=labels)
        ranking = rank_dexels(pairs, rounds=4, asymmetry=2.0)
        assert ranking.order.tolist() == _boost_oracle(pairs, 4, 2.0)

    def test_random_pairs_match_oracle(self):
        for seed in range(5):
            pairs = gen_synthetic_pairs(5, 32, np.array([2]), seed=seed)
            got = rank_dexels(pairs, rounds=5, asymmetry=2.0)
            assert got.order.tolist() == _boost_oracle(pairs, 5, 2.0)

    def test_asymmetry_one_is_symmetric_boosting(self):
        for seed in range(3):
            pairs = gen_synthetic_pairs(6, 64, np.array([1, 4]), seed=seed)
            got = rank_dexels(pairs, rounds=6, asymmetry=1.0)
            assert got.order.tolist() == _boost_oracle(pairs, 6, 1.0)


class TestPairFiles:
    def test_binary_round_trip(self, tmp_path):
        pairs = gen_synthetic_pairs(20, 30, np.array([3]), seed=1)
        path = tmp_path / "pairs.bfp"
        write_pairs(pairs, path)
        back = read_pairs(path)
        assert np.array_equal(back.a, pairs.a)
        assert np.array_equal(back.b, pairs.b)
        assert np.array_equal(back.labels, pairs.labels)

    def test_csv_round_trip(self, tmp_path):
        pairs = gen_synthetic_pairs(16, 10, np.array([2]), seed=3)
        path = tmp_path / "pairs.csv"
        write_pairs_csv(pairs, path)
        back = read_pairs(path)
        assert np.array_equal(back.a, pairs.a)
        assert np.array_equal(back.labels, pairs.labels)

    def test_bad_csv_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope\n1,00,11\n")
        with pytest.raises(FormatError):
            read_pairs(path)

    def test_truncated_binary(self, tmp_path):
        pairs = gen_synthetic_pairs(16, 10, np.array([2]), seed=3)
        path = tmp_path / "pairs.bfp"
        write_pairs(pairs, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(FormatError):
            read_pairs(path)
