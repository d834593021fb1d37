"""Counter-based random streams (Philox4x64-10).

Every random number is a pure function of ``(seed, stream, index, lane)``:
``index`` is a particle or Monte-Carlo sample number and ``lane`` counts draws
within that index (for the simulators ``lane = step * per_step + component``).
Results are therefore independent of chunking and of the number of worker
threads used to produce them.

The block cipher agrees bit for bit with :class:`numpy.random.Philox`, which
increments its counter *before* encrypting: our counter ``c`` corresponds to
numpy's state ``c - 1``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

try:
    import numba as nb
except ImportError:  # pragma: no cover - exercised only without numba
    nb = None

PHILOX_M0 = 0xD2E7470EE14C6C93
PHILOX_M1 = 0xCA5A826395121157
PHILOX_W0 = 0x9E3779B97F4A7C15
PHILOX_W1 = 0xBB67AE8584CAA73B
ROUNDS = 10
LANES_PER_BLOCK = 4

# stream tags (second key word)
STREAM_NOISE = 1
STREAM_INIT = 2
STREAM_SAMPLES = 3

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def _mulhilo_np(a, b):
    a_lo = a & _M32
    a_hi = a >> _S32
    b_lo = b & _M32
    b_hi = b >> _S32
    lolo = a_lo * b_lo
    hilo = a_hi * b_lo
    lohi = a_lo * b_hi
    cross = (lolo >> _S32) + (hilo & _M32) + lohi
    hi = a_hi * b_hi + (hilo >> _S32) + (cross >> _S32)
    return hi, a * b


def philox4x64(counter, key):
    """Reference vectorised Philox4x64-10.

    ``counter`` is a 4-tuple and ``key`` a 2-tuple of uint64 arrays or scalars
    (broadcast together). Returns a 4-tuple of uint64 arrays.
    """
    c0, c1, c2, c3 = np.broadcast_arrays(*(np.asarray(c, dtype=np.uint64) for c in counter))
    c0, c1, c2, c3 = (c.copy() for c in (c0, c1, c2, c3))
    k0 = np.asarray(key[0], dtype=np.uint64)
    k1 = np.asarray(key[1], dtype=np.uint64)
    m0 = np.uint64(PHILOX_M0)
    m1 = np.uint64(PHILOX_M1)
    with np.errstate(over="ignore"):
        for r in range(ROUNDS):
            if r:
                k0 = k0 + np.uint64(PHILOX_W0)
                k1 = k1 + np.uint64(PHILOX_W1)
            hi0, lo0 = _mulhilo_np(m0, c0)
            hi1, lo1 = _mulhilo_np(m1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def _blocks_numpy(index, b0, nblocks, k0, k1):
    idx = index[:, None]
    blk = np.arange(b0, b0 + nblocks, dtype=np.uint64)[None, :]
    out = philox4x64((idx, blk, 0, 0), (k0, k1))
    return np.stack(out, axis=-1)


if nb is not None:
    @nb.njit(inline="always")
    def _mulhilo_nb(a, b):
        m32 = np.uint64(0xFFFFFFFF)
        s32 = np.uint64(32)
        a_lo = a & m32
        a_hi = a >> s32
        b_lo = b & m32
        b_hi = b >> s32
        lolo = a_lo * b_lo
        hilo = a_hi * b_lo
        lohi = a_lo * b_hi
        cross = (lolo >> s32) + (hilo & m32) + lohi
        hi = a_hi * b_hi + (hilo >> s32) + (cross >> s32)
        return hi, a * b

    @nb.njit(nogil=True, cache=True)
    def _blocks_kernel(index, b0, nblocks, k0, k1, out):
        m0 = np.uint64(PHILOX_M0)
        m1 = np.uint64(PHILOX_M1)
        w0 = np.uint64(PHILOX_W0)
        w1 = np.uint64(PHILOX_W1)
        for i in range(index.shape[0]):
            for j in range(nblocks):
                x0 = index[i]
                x1 = np.uint64(b0 + j)
                x2 = np.uint64(0)
                x3 = np.uint64(0)
                a = k0
                b = k1
                for r in range(10):
                    if r > 0:
                        a = a + w0
                        b = b + w1
                    hi0, lo0 = _mulhilo_nb(m0, x0)
                    hi1, lo1 = _mulhilo_nb(m1, x2)
                    x0, x1, x2, x3 = hi1 ^ x1 ^ a, lo1, hi0 ^ x3 ^ b, lo0
                out[i, j, 0] = x0
                out[i, j, 1] = x1
                out[i, j, 2] = x2
                out[i, j, 3] = x3

    def _blocks_fast(index, b0, nblocks, k0, k1):
        out = np.empty((index.shape[0], nblocks, 4), dtype=np.uint64)
        _blocks_kernel(index, np.uint64(b0), nblocks, np.uint64(k0), np.uint64(k1), out)
        return out
else:  # pragma: no cover
    _blocks_fast = _blocks_numpy


def to_unit_interval(raw: np.ndarray) -> np.ndarray:
    """Map uint64 words to doubles in the open interval (0, 1).

    52 bits keep the half-step offset exact: the extremes are 2^-53 and
    1 - 2^-53 (a 53-bit version rounds its largest value up to 1.0).
    """
    return ((raw >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0 ** -52


def box_muller(u: np.ndarray) -> np.ndarray:
    """Turn uniform blocks (..., 4) into standard normal blocks (..., 4)."""
    r01 = np.sqrt(-2.0 * np.log(u[..., 0]))
    r23 = np.sqrt(-2.0 * np.log(u[..., 2]))
    a01 = 2.0 * np.pi * u[..., 1]
    a23 = 2.0 * np.pi * u[..., 3]
    return np.stack([r01 * np.cos(a01), r01 * np.sin(a01),
                     r23 * np.cos(a23), r23 * np.sin(a23)], axis=-1)


class CounterStream:
    """Keyed family of random streams, one per index.

    ``uniforms(index, start, count)`` returns an array of shape
    ``(len(index), count)`` holding lanes ``start .. start+count-1`` of each
    index's stream.
    """

    def __init__(self, seed: int, stream: int = STREAM_NOISE, workers: int = 1,
                 backend: str = "auto"):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream)
        self.workers = max(1, int(workers))
        if backend == "numpy" or nb is None:
            self._blocks = _blocks_numpy
        else:
            self._blocks = _blocks_fast

    def raw_blocks(self, index, b0: int, nblocks: int) -> np.ndarray:
        index = np.ascontiguousarray(np.asarray(index, dtype=np.uint64).ravel())
        if self.workers == 1 or index.size < 2 * self.workers:
            return self._blocks(index, b0, nblocks, self.seed, self.stream)
        parts = np.array_split(index, self.workers)
        with ThreadPoolExecutor(self.workers) as pool:
            outs = list(pool.map(
                lambda ix: self._blocks(np.ascontiguousarray(ix), b0, nblocks,
                                        self.seed, self.stream), parts))
        return np.concatenate(outs, axis=0)

    def _lanes(self, index, start: int, count: int, transform) -> np.ndarray:
        b0 = start // LANES_PER_BLOCK
        b1 = -(-(start + count) // LANES_PER_BLOCK)
        blocks = transform(to_unit_interval(self.raw_blocks(index, b0, b1 - b0)))
        flat = blocks.reshape(blocks.shape[0], -1)
        off = start - b0 * LANES_PER_BLOCK
        return flat[:, off:off + count]

    def uniforms(self, index, start: int, count: int) -> np.ndarray:
        return self._lanes(index, start, count, lambda u: u)

    def normals(self, index, start: int, count: int) -> np.ndarray:
        return self._lanes(index, start, count, box_muller)


def numpy_generator(seed: int, stream: int) -> np.random.Generator:
    """Sequential Philox generator for non-per-index draws (initial laws, tests)."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & 0xFFFFFFFFFFFFFFFF, stream]))
