"""Fixed low-frequency 3D STFT basis.

The 13 frequency points are the lowest non-zero frequencies of an ``n**3``
window, one representative per conjugate pair.  Each point ``v`` has entries
in ``{-k, 0, k}`` with ``k = 1/n`` and components ordered (depth, height,
width).  The complex basis vector is ``w_v(y) = exp(-2j*pi * v.y)`` over the
window offsets ``y in {-r..r}**3`` (``n = 2r + 1``), and it factorises into
three 1-D exponentials, one per axis.
"""
import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import ParameterError

# Signs of (depth, height, width) components, in v1..v13 order.
FREQUENCY_SIGNS = (
    (1, 0, 0), (1, 0, 1), (1, 0, -1),
    (0, 1, 0), (0, 1, 1), (0, 1, -1),
    (1, 1, 0), (1, 1, 1), (1, 1, -1),
    (1, -1, 0), (1, -1, 1), (1, -1, -1),
    (0, 0, 1),
)
NUM_FREQUENCIES = len(FREQUENCY_SIGNS)
NUM_CHANNELS = 2 * NUM_FREQUENCIES


@dataclass(frozen=True)
class FrequencyPoint:
    signs: tuple
    n: int

    @property
    def v(self):
        """Exact frequency in cycles per sample."""
        return tuple(Fraction(s, self.n) for s in self.signs)

    def as_array(self):
        return np.array(self.signs, dtype=np.float64) / self.n

    def __neg__(self):
        return FrequencyPoint(tuple(-s for s in self.signs), self.n)


def check_window(n):
    if not isinstance(n, (int, np.integer)) or n < 3 or n % 2 == 0:
        raise ParameterError(f"STFT window size must be an odd integer >= 3, got {n!r}")
    return int(n)


def frequency_points(n):
    n = check_window(n)
    return [FrequencyPoint(s, n) for s in FREQUENCY_SIGNS]


def window_offsets(n):
    """Offsets of an ``n**3`` window, row-major with depth slowest."""
    r = n // 2
    return np.array(list(itertools.product(range(-r, r + 1), repeat=3)), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class StftBasis:
    """Real ``26 x n**3`` transform plus its per-axis complex factors.

    Row ``2i`` of ``W`` is the real part and row ``2i + 1`` the imaginary
    part of frequency ``i`` (0-based).  ``sep_factors[i, a]`` is the 1-D
    exponential of frequency ``i`` along axis ``a`` sampled at ``t = -r..r``.
    """
    n: int
    points: tuple
    W: np.ndarray
    complex_basis: np.ndarray
    sep_factors: np.ndarray

    @property
    def radius(self):
        return self.n // 2

    def paper_row_order(self):
        """Permutation taking interleaved rows to all-real-then-all-imaginary."""
        return np.concatenate([np.arange(0, NUM_CHANNELS, 2), np.arange(1, NUM_CHANNELS, 2)])


def _readonly(a):
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def build_basis(n):
    n = check_window(n)
    points = tuple(frequency_points(n))
    freqs = np.stack([p.as_array() for p in points])              # (13, 3)
    offsets = window_offsets(n)                                   # (n^3, 3)
    w = np.exp(-2j * np.pi * (freqs @ offsets.T))                 # (13, n^3)
    W = np.empty((NUM_CHANNELS, n ** 3))
    W[0::2] = w.real
    W[1::2] = w.imag
    t = np.arange(-(n // 2), n // 2 + 1)
    sep = np.exp(-2j * np.pi * freqs[:, :, None] * t[None, None, :])  # (13, 3, n)
    return StftBasis(n, points, _readonly(W), _readonly(w), _readonly(sep))


def reconstruct_from_factors(basis):
    """Rebuild the complex basis vectors as outer products of the 1-D factors."""
    f = basis.sep_factors
    full = np.einsum("fi,fj,fk->fijk", f[:, 0], f[:, 1], f[:, 2])
    return full.reshape(NUM_FREQUENCIES, -1)
