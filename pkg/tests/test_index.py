import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymhash.index import (
    PackedCodeMatrix,
    hamming,
    hamming_to_all,
    inner_product,
    load_codes,
    pack,
    radius_search,
    rank_all,
    rank_topk,
    save_codes,
    unpack,
)
from helpers import naive_hamming

BITS = [16, 32, 64, 65]


def rand_codes(rng, n, K):
    return rng.choice([-1.0, 1.0], size=(n, K))


def test_pack_layout():
    assert pack([[1, -1, 1, 1]]).words[0, 0] == 13
    packed = pack(-np.ones((1, 64)))
    assert packed.words.shape == (1, 1) and packed.words[0, 0] == 0


def test_pack_bit_positions():
    codes = -np.ones((1, 130))
    codes[0, [0, 63, 64, 129]] = 1
    w = pack(codes).words[0]
    assert w.tolist() == [1 | (1 << 63), 1, 2]


@pytest.mark.parametrize("K", BITS)
def test_pack_roundtrip(K):
    rng = np.random.default_rng(K)
    codes = rand_codes(rng, 1000, K)
    packed = pack(codes)
    assert packed.padding_is_zero()
    np.testing.assert_array_equal(unpack(packed), codes)


def test_pack_rejects_non_binary():
    with pytest.raises(ValueError):
        pack([[1, 0, -1]])


def test_packed_is_immutable():
    packed = pack(np.ones((2, 8)))
    with pytest.raises(ValueError):
        packed.words[0, 0] = 0


def test_hamming_examples():
    rng = np.random.default_rng(0)
    a = rand_codes(rng, 1, 16)
    assert hamming(pack(a), pack(a)) == 0
    assert hamming(pack(a), pack(-a)) == 16
    assert inner_product(pack(a), pack(a)) == 16
    b = a.copy()
    b[0, :5] *= -1
    assert hamming(pack(a), pack(b)) == 5
    assert inner_product(pack(a), pack(b)) == 6


def test_hamming_length_mismatch():
    with pytest.raises(ValueError):
        hamming(pack(np.ones((1, 8))), pack(np.ones((1, 9))))


@pytest.mark.parametrize("K", BITS)
def test_hamming_against_naive(K):
    rng = np.random.default_rng(100 + K)
    A, B = rand_codes(rng, 300, K), rand_codes(rng, 300, K)
    pa, pb = pack(A), pack(B)
    for i in range(300):
        assert hamming(pa[i], pb[i]) == naive_hamming(A[i], B[i])
        assert inner_product(pa[i], pb[i]) == int(A[i] @ B[i])


@given(seed=st.integers(0, 2**32 - 1), K=st.sampled_from(BITS))
@settings(max_examples=50)
def test_hamming_metric_axioms(seed, K):
    rng = np.random.default_rng(seed)
    a, b, c = (pack(rand_codes(rng, 1, K)) for _ in range(3))
    ab, ba = hamming(a, b), hamming(b, a)
    assert ab == ba >= 0
    assert hamming(a, c) <= ab + hamming(b, c)
    assert (ab == 0) == np.array_equal(a.words, b.words)
    assert inner_product(a, b) + 2 * ab == K


def test_rank_topk_examples():
    rng = np.random.default_rng(1)
    db = rand_codes(rng, 20, 32)
    hits = rank_topk(pack(db[7]), pack(db), 3)
    assert hits[0] == (7, 0)
    same = pack(np.tile(db[0], (10, 1)))
    assert [i for i, _ in rank_topk(pack(db[3]), same, 4)] == [0, 1, 2, 3]
    assert len(rank_topk(pack(db[0]), pack(db), 100)) == 20
    with pytest.raises(ValueError):
        rank_topk(pack(db[0]), pack(db), 0)
    with pytest.raises(ValueError):
        rank_topk(pack(db[0]), PackedCodeMatrix(np.zeros((0, 1), np.uint64), 32), 1)


def test_rank_topk_against_full_sort():
    rng = np.random.default_rng(2)
    for _ in range(500):
        n = int(rng.integers(1, 201))
        K = int(rng.choice([8, 16, 65]))
        k = int(rng.integers(1, n + 3))
        db = rand_codes(rng, n, K)
        q = rand_codes(rng, 1, K)
        dists = [naive_hamming(q[0], row) for row in db]
        expected = sorted(((d, i) for i, d in enumerate(dists)))[:k]
        got = rank_topk(pack(q), pack(db), k)
        assert got == [(i, d) for d, i in expected]


def test_rank_all_threads_match():
    rng = np.random.default_rng(3)
    db, qs = pack(rand_codes(rng, 300, 48)), pack(rand_codes(rng, 25, 48))
    assert rank_all(qs, db, 10, threads=4) == rank_all(qs, db, 10, threads=1)


def test_radius_search():
    rng = np.random.default_rng(4)
    db = rand_codes(rng, 60, 12)
    db[5] = db[40]
    packed = pack(db)
    assert radius_search(packed[40], packed, 12) == list(range(60))
    exact = radius_search(packed[40], packed, 0)
    assert 5 in exact and 40 in exact
    assert all(np.array_equal(db[i], db[40]) for i in exact)
    for r in range(13):
        expected = [i for i in range(60) if naive_hamming(db[i], db[40]) <= r]
        assert radius_search(packed[40], packed, r) == expected
    with pytest.raises(ValueError):
        radius_search(packed[0], packed, 13)


def test_hamming_to_all_needs_single_query():
    packed = pack(np.ones((3, 8)))
    with pytest.raises(ValueError):
        hamming_to_all(packed, packed)


@pytest.mark.parametrize("K", BITS)
def test_codes_file_roundtrip(tmp_path, K):
    rng = np.random.default_rng(K)
    packed = pack(rand_codes(rng, 17, K))
    save_codes(packed, tmp_path / "c.ahc")
    raw = (tmp_path / "c.ahc").read_bytes()
    assert raw[:4] == b"AHC1" and len(raw) == 16 + 8 * 17 * ((K + 63) // 64)
    back = load_codes(tmp_path / "c.ahc")
    assert back.bits == K
    np.testing.assert_array_equal(back.words, packed.words)


def test_codes_file_rejects_dirty_padding(tmp_path):
    packed = pack(np.ones((1, 4)))
    save_codes(packed, tmp_path / "c.ahc")
    raw = bytearray((tmp_path / "c.ahc").read_bytes())
    raw[-1] = 0x80
    (tmp_path / "c.ahc").write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        load_codes(tmp_path / "c.ahc")
