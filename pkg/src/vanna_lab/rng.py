"""Counter-based normal variates (Philox4x32-10), vectorised over numpy arrays.

Every variate is a pure function of ``(seed, sample_index, step_index, stream)``,
so a path is reproduced exactly no matter how sample indices are split between
workers.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_SHIFT32 = np.uint64(32)
_ROUNDS = 10

STREAM_W = 0
STREAM_Z = 1


def philox4x32(c0, c1, c2, c3, k0, k1, rounds: int = _ROUNDS):
    """Philox4x32 block function.

    Counter words ``c0..c3`` may be arrays (broadcast together); key words are
    scalars. All words are 32-bit values carried in uint64. Returns four uint64
    arrays holding the 32-bit output words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in (c0, c1, c2, c3))
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0 = np.uint64(int(k0) & 0xFFFFFFFF)
    k1 = np.uint64(int(k1) & 0xFFFFFFFF)
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT32) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> _SHIFT32) ^ c3 ^ k1,
            p0 & _MASK32,
        )
    return c0, c1, c2, c3


def _to_unit(hi, lo):
    # 53 random bits, centred in their cell: strictly inside (0, 1)
    bits = ((hi << _SHIFT32) | lo) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (2.0**-53)


def normals(seed: int, samples, steps: int, stream: int = STREAM_W) -> np.ndarray:
    """Standard normals of shape ``(len(samples), steps)``.

    Row ``i`` depends only on ``(seed, samples[i], stream)``; column ``j`` is
    taken from Philox block ``j // 2``.
    """
    samples = np.asarray(samples, dtype=np.uint64).reshape(-1, 1)
    nblocks = (steps + 1) // 2
    block = np.arange(nblocks, dtype=np.uint64).reshape(1, -1)
    seed = int(seed)
    w0, w1, w2, w3 = philox4x32(
        block,
        samples & _MASK32,
        samples >> _SHIFT32,
        np.uint64(stream),
        seed & 0xFFFFFFFF,
        (seed >> 32) & 0xFFFFFFFF,
    )
    u = np.empty((samples.shape[0], 2 * nblocks))
    u[:, 0::2] = _to_unit(w0, w1)
    u[:, 1::2] = _to_unit(w2, w3)
    return ndtri(u[:, :steps])
