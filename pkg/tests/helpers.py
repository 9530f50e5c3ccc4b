"""Shared finite-difference helpers for the test-suite."""
import numpy as np

from relpv.verify import numeric_grad, rel_err  # noqa: F401


def random_indices(arr, count, rng):
    return [tuple(int(rng.integers(s)) for s in arr.shape) for _ in range(count)]


def fd_check(loss, pairs, rng, count=4, rtol=1e-5, eps=1e-6):
    """Largest relative error between analytic gradients and central differences."""
    worst = 0.0
    for arr, grad in pairs:
        for idx in random_indices(arr, count, rng):
            worst = max(worst, rel_err(numeric_grad(loss, arr, idx, eps), float(grad[idx])))
    assert worst < rtol, worst
    return worst
