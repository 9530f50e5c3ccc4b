"""Weight initialisation."""
import logging

import numpy as np

logger = logging.getLogger(__name__)


def orthogonal_init(shape, seed=0, gain=1.0, dtype=np.float64):
    """Orthogonal matrix of ``shape`` with trailing dims flattened.

    The rows are orthonormal when ``shape[0] <= prod(shape[1:])``, otherwise
    the columns are.  ``seed`` may be an int or a ``numpy.random.Generator``.
    Shapes that cannot hold an orthogonal matrix (rank < 2 or an empty
    extent) fall back to a scaled uniform draw, which is logged.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2 or 0 in shape:
        logger.warning("orthogonal_init: degenerate shape %s, using scaled uniform", shape)
        fan = max(1, int(np.prod(shape[1:])) if len(shape) > 1 else shape[0] if shape else 1)
        limit = gain * np.sqrt(3.0 / fan)
        return rng.uniform(-limit, limit, size=shape).astype(dtype)
    rows, cols = shape[0], int(np.prod(shape[1:]))
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    # sign fix makes the draw uniform over the orthogonal group
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray((gain * q).reshape(shape), dtype=dtype)
