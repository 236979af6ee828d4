"""Pure-python (numpy-backed) kernels: byte-level hot paths.

Reference implementation; the compiled extension in ``_ckernels.pyx``
must produce bit-identical results.
"""

import numpy as np

MASK64 = (1 << 64) - 1

# 64/1a multiplier (odd, so a single flipped bit always changes the digest)
# and offset basis.
FNV_PRIME = 0x100000001B3
FNV_OFFSET = 0xCBF29CE484222325

# splitmix64 constants
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """splitmix64 finalizer; bijective on 64-bit ints."""
    x &= MASK64
    x ^= x >> 30
    x = (x * _MIX_A) & MASK64
    x ^= x >> 27
    x = (x * _MIX_B) & MASK64
    x ^= x >> 31
    return x


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX_A)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX_B)
    z ^= z >> np.uint64(31)
    return z


# Cached powers of FNV_PRIME mod 2**64, extended by doubling on demand.
_POW = np.array([1], dtype=np.uint64)


def _powers(m: int) -> np.ndarray:
    global _POW
    while len(_POW) < m:
        n = len(_POW)
        step = np.uint64(pow(FNV_PRIME, n, 1 << 64))
        with np.errstate(over="ignore"):
            _POW = np.concatenate([_POW, _POW * step])
    return _POW[:m]


def digest64(data) -> int:
    """64-bit digest of a byte sequence.

    Polynomial hash over little-endian 8-byte lanes (zero-padded tail),
    length-mixed and finalized with splitmix64. Any single flipped bit is
    guaranteed to change the digest because the multiplier is odd.
    """
    buf = np.frombuffer(bytes(data) if not isinstance(data, (bytes, bytearray, memoryview)) else data, dtype=np.uint8)
    n = len(buf)
    m = (n + 7) // 8
    if m:
        if n % 8:
            padded = np.zeros(m * 8, dtype=np.uint8)
            padded[:n] = buf
            lanes = padded.view("<u8")
        else:
            lanes = np.ascontiguousarray(buf).view("<u8")
        pw = _powers(m)[m - 1 :: -1]
        with np.errstate(over="ignore"):
            acc = int((lanes * pw).sum(dtype=np.uint64))
    else:
        acc = 0
    h = (FNV_OFFSET * pow(FNV_PRIME, m, 1 << 64) + acc) & MASK64
    h ^= n & MASK64
    return mix64(h)


def gen_bytes(seed: int, offset: int, length: int) -> bytes:
    """Deterministic pseudo-random content stream.

    Byte ``i`` of the stream for ``seed`` depends only on (seed, i), so any
    slice can be materialized independently. Lane k is
    splitmix64(seed + (k+1)*GOLDEN).
    """
    if length <= 0:
        return b""
    k0 = offset // 8
    k1 = (offset + length + 7) // 8
    idx = np.arange(k0 + 1, k1 + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        state = idx * np.uint64(_GOLDEN) + np.uint64(seed & MASK64)
        lanes = _mix64_vec(state)
    raw = lanes.astype("<u8").tobytes()
    lo = offset - k0 * 8
    return raw[lo : lo + length]
