"""Generator correctness: reference vectors, bias, determinism."""

from __future__ import annotations

from collections import Counter

import pytest
from hypothesis import given, strategies as st
from scipy import stats as scipy_stats

from tsp_eyeball.rng import MASK64, Pcg32, derive_seed, seed_from_string, splitmix64

# Known-answer vector: the first six 32-bit outputs of the published
# reference generator seeded with (42, 54).
PCG_REFERENCE_42_54 = [0xA15C02B7, 0x7B47F409, 0xBA1D3330, 0x83D2F293, 0xBFA4784B, 0xCBED606E]


def test_pcg32_reference_vector():
    gen = Pcg32(42, 54)
    assert [gen.next_u32() for _ in range(6)] == PCG_REFERENCE_42_54


def test_pcg32_determinism_and_stream_separation():
    a = [Pcg32(9).next_u32() for _ in range(4)]
    b = [Pcg32(9).next_u32() for _ in range(4)]
    assert a == b
    assert Pcg32(9, 1).next_u32() != Pcg32(9, 2).next_u32()


def test_splitmix64_avalanche_and_range():
    seen = {splitmix64(i) for i in range(1000)}
    assert len(seen) == 1000
    assert all(0 <= v <= MASK64 for v in seen)
    # single-bit flips must change the output
    assert splitmix64(0) != splitmix64(1)


def test_derive_seed_order_sensitive():
    assert derive_seed(5, 1, 2) != derive_seed(5, 2, 1)
    assert derive_seed(5, 1) != derive_seed(6, 1)
    assert derive_seed(5) == 5  # no context folds nothing


def test_seed_from_string_stable():
    assert seed_from_string("abc") == seed_from_string("abc")
    assert seed_from_string("abc") != seed_from_string("abd")
    assert 0 <= seed_from_string("n05i00") <= MASK64


@given(st.integers(min_value=0, max_value=2**64 - 1), st.integers(min_value=0, max_value=60),
       st.integers(min_value=0, max_value=200))
def test_randint_within_bounds(seed, lo, width):
    gen = Pcg32(seed)
    hi = lo + width
    for _ in range(20):
        v = gen.randint(lo, hi)
        assert lo <= v <= hi


def test_randint_rejects_empty_range():
    with pytest.raises(ValueError):
        Pcg32(0).randint(3, 2)


def test_randint_unbiased_chi_square():
    # span 7 does not divide 2^32; rejection sampling must keep it uniform
    gen = Pcg32(12345)
    counts = Counter(gen.randint(0, 6) for _ in range(70000))
    observed = [counts[i] for i in range(7)]
    _, p = scipy_stats.chisquare(observed)
    assert p > 0.01


def test_random_unit_interval():
    gen = Pcg32(3)
    values = [gen.random() for _ in range(1000)]
    assert all(0.0 <= v < 1.0 for v in values)


@given(st.integers(min_value=0, max_value=2**64 - 1), st.integers(min_value=0, max_value=12))
def test_shuffle_is_permutation(seed, size):
    gen = Pcg32(seed)
    items = list(range(size))
    gen.shuffle(items)
    assert sorted(items) == list(range(size))


def test_shuffle_deterministic():
    a, b = list(range(10)), list(range(10))
    Pcg32(77).shuffle(a)
    Pcg32(77).shuffle(b)
    assert a == b


def test_sample_indices_distinct():
    gen = Pcg32(5)
    picks = gen.sample_indices(10, 4)
    assert len(picks) == 4
    assert len(set(picks)) == 4
    assert all(0 <= p < 10 for p in picks)
