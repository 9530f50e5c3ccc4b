import itertools
from fractions import Fraction

import numpy as np
import pytest

from relpv.basis import (FREQUENCY_SIGNS, NUM_CHANNELS, build_basis, check_window, frequency_points,
                         reconstruct_from_factors, window_offsets)
from relpv.errors import ParameterError

WINDOWS = (3, 5, 7, 9)


def test_points_for_n3():
    pts = frequency_points(3)
    k = Fraction(1, 3)
    assert len(pts) == 13
    assert pts[0].v == (k, 0, 0)
    assert pts[7].v == (k, k, k)
    assert pts[12].v == (0, 0, k)


@pytest.mark.parametrize("n", WINDOWS)
def test_no_point_is_negation_of_another(n):
    vs = [p.v for p in frequency_points(n)]
    assert len(set(vs)) == 13
    for v in vs:
        assert v != (0, 0, 0)
        assert tuple(-c for c in v) not in vs


@pytest.mark.parametrize("bad", [1, 2, 4, 0, -3, 3.5])
def test_bad_windows(bad):
    with pytest.raises(ParameterError):
        check_window(bad)


def test_offsets_depth_slowest():
    off = window_offsets(3)
    assert off[0].tolist() == [-1, -1, -1]
    assert off[1].tolist() == [-1, -1, 0]
    assert off[13].tolist() == [0, 0, 0]
    assert off[-1].tolist() == [1, 1, 1]


@pytest.mark.parametrize("n", WINDOWS)
def test_basis_matches_scalar_evaluation(n):
    import cmath
    b = build_basis(n)
    assert b.W.shape == (NUM_CHANNELS, n ** 3)
    r = n // 2
    for i, signs in enumerate(FREQUENCY_SIGNS):
        for col, y in enumerate(itertools.product(range(-r, r + 1), repeat=3)):
            z = cmath.exp(-2j * cmath.pi * sum(s * t for s, t in zip(signs, y)) / n)
            assert b.W[2 * i, col] == pytest.approx(z.real, abs=1e-13)
            assert b.W[2 * i + 1, col] == pytest.approx(z.imag, abs=1e-13)


@pytest.mark.parametrize("n", WINDOWS)
def test_basis_invariants(n):
    b = build_basis(n)
    assert np.abs(b.W.sum(axis=1)).max() < 1e-12
    centre = b.W[:, n ** 3 // 2]
    assert np.all(centre[0::2] == 1) and np.all(centre[1::2] == 0)
    full = reconstruct_from_factors(b)
    assert np.abs(full.real - b.W[0::2]).max() < 1e-12
    assert np.abs(full.imag - b.W[1::2]).max() < 1e-12


def test_v1_real_row_sum_hand_value():
    # 1 + 2cos(2pi/3) = 0 along the active axis
    assert 1 + 2 * np.cos(2 * np.pi / 3) == pytest.approx(0, abs=1e-15)
    assert build_basis(3).W[0].sum() == pytest.approx(0, abs=1e-14)


def test_determinism_and_readonly():
    a = build_basis(5).W
    build_basis.cache_clear()
    b = build_basis(5).W
    assert a.tobytes() == b.tobytes()
    with pytest.raises(ValueError):
        b[0, 0] = 2


def test_paper_row_order_is_a_permutation():
    b = build_basis(3)
    order = b.paper_row_order()
    assert sorted(order.tolist()) == list(range(26))
    Wp = b.W[order]
    assert np.array_equal(Wp[:13], b.W[0::2]) and np.array_equal(Wp[13:], b.W[1::2])
