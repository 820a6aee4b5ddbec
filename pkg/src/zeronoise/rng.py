"""Counter-based normal variates (Philox4x32-10).

Every Gaussian increment is a pure function of ``(seed, path, step, block,
stream)``.  Paths can therefore be simulated in any order, in any number of
chunks or threads, and still reproduce bit-for-bit.

Counter layout: ``c0 = step``, ``c1 = path``, ``c2 = block`` (pair of
normals), ``c3 = stream``.  The 64-bit seed is the 2x32 key.
"""

import numpy as np
from numba import njit

_MASK = 0xFFFFFFFF
_M0 = 0xD2511F53
_M1 = 0xCD9E8D57
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
ROUNDS = 10

STREAM_INCREMENTS = 0


def split_seed(seed):
    """Map an arbitrary Python int onto the two 32-bit Philox key words."""
    s = int(seed) % (1 << 64)
    return s & _MASK, (s >> 32) & _MASK


def philox4x32_reference(counter, key, rounds=ROUNDS):
    """Plain numpy Philox4x32 on uint64 arrays holding 32-bit words.

    ``counter`` is a sequence of four arrays (or ints), ``key`` two ints.
    Slow; kept as the independent route for checking the compiled kernel.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & np.uint64(_MASK) for c in counter)
    k0, k1 = np.uint64(key[0] & _MASK), np.uint64(key[1] & _MASK)
    mask = np.uint64(_MASK)
    m0, m1 = np.uint64(_M0), np.uint64(_M1)
    w0, w1 = np.uint64(_W0), np.uint64(_W1)
    shift = np.uint64(32)
    for _ in range(rounds):
        p0 = m0 * c0
        p1 = m1 * c2
        hi0, lo0 = p0 >> shift, p0 & mask
        hi1, lo1 = p1 >> shift, p1 & mask
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = (k0 + w0) & mask
        k1 = (k1 + w1) & mask
    return c0, c1, c2, c3


@njit(cache=True, nogil=True)
def _philox_round_trip(c0, c1, c2, c3, k0, k1):
    mask = np.uint64(0xFFFFFFFF)
    m0 = np.uint64(0xD2511F53)
    m1 = np.uint64(0xCD9E8D57)
    w0 = np.uint64(0x9E3779B9)
    w1 = np.uint64(0xBB67AE85)
    s32 = np.uint64(32)
    for _ in range(10):
        p0 = m0 * c0
        p1 = m1 * c2
        hi0 = p0 >> s32
        lo0 = p0 & mask
        hi1 = p1 >> s32
        lo1 = p1 & mask
        n0 = hi1 ^ c1 ^ k0
        n2 = hi0 ^ c3 ^ k1
        c0 = n0
        c1 = lo1
        c2 = n2
        c3 = lo0
        k0 = (k0 + w0) & mask
        k1 = (k1 + w1) & mask
    return c0, c1, c2, c3


@njit(cache=True, nogil=True)
def _uniform53(a, b):
    # 27 + 26 high bits -> [0, 1)
    return (np.float64(a >> np.uint64(5)) * 67108864.0 + np.float64(b >> np.uint64(6))) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True)
def _normals_kernel(k0, k1, step, path_start, count, m, stream, out):
    two_pi = 6.283185307179586
    nblocks = (m + 1) // 2
    kk0 = np.uint64(k0)
    kk1 = np.uint64(k1)
    c0 = np.uint64(step)
    c3 = np.uint64(stream)
    for p in range(count):
        c1 = np.uint64(path_start + p)
        for blk in range(nblocks):
            r0, r1, r2, r3 = _philox_round_trip(c0, c1, np.uint64(blk), c3, kk0, kk1)
            u1 = _uniform53(r0, r1)
            u2 = _uniform53(r2, r3)
            rad = np.sqrt(-2.0 * np.log(1.0 - u1))
            ang = two_pi * u2
            j = 2 * blk
            out[p, j] = rad * np.cos(ang)
            if j + 1 < m:
                out[p, j + 1] = rad * np.sin(ang)


def standard_normals(seed, step, path_start, count, m, stream=STREAM_INCREMENTS):
    """Return a ``(count, m)`` array of N(0, 1) variates for paths
    ``path_start .. path_start + count - 1`` at time step ``step``."""
    if path_start < 0 or path_start + count > (1 << 32):
        raise ValueError("path indices must fit in 32 bits")
    if not 0 <= step < (1 << 32):
        raise ValueError("step index must fit in 32 bits")
    k0, k1 = split_seed(seed)
    out = np.empty((count, m), dtype=np.float64)
    if count and m:
        _normals_kernel(k0, k1, step, path_start, count, m, stream, out)
    return out


def standard_normals_reference(seed, step, path_start, count, m, stream=STREAM_INCREMENTS):
    """Vectorised numpy twin of :func:`standard_normals` (same counters)."""
    k0, k1 = split_seed(seed)
    paths = np.arange(path_start, path_start + count, dtype=np.uint64)
    out = np.empty((count, m))
    for blk in range((m + 1) // 2):
        r0, r1, r2, r3 = philox4x32_reference((step, paths, blk, stream), (k0, k1))
        u1 = ((r0 >> np.uint64(5)).astype(np.float64) * 67108864.0 + (r1 >> np.uint64(6)).astype(np.float64)) / 2.0**53
        u2 = ((r2 >> np.uint64(5)).astype(np.float64) * 67108864.0 + (r3 >> np.uint64(6)).astype(np.float64)) / 2.0**53
        rad = np.sqrt(-2.0 * np.log(1.0 - u1))
        out[:, 2 * blk] = rad * np.cos(2.0 * np.pi * u2)
        if 2 * blk + 1 < m:
            out[:, 2 * blk + 1] = rad * np.sin(2.0 * np.pi * u2)
    return out
