# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; must match _pykernels bit for bit."""

from libc.stdint cimport uint64_t

cdef uint64_t FNV_PRIME = 0x100000001B3ULL
cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t MIX_A = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX_B = 0x94D049BB133111EBULL


cdef inline uint64_t _mix(uint64_t x) nogil:
    x ^= x >> 30
    x *= MIX_A
    x ^= x >> 27
    x *= MIX_B
    x ^= x >> 31
    return x


def mix64(x):
    return _mix(<uint64_t> (x & 0xFFFFFFFFFFFFFFFF))


def digest64(data):
    cdef const unsigned char[::1] buf = data
    cdef Py_ssize_t n = buf.shape[0]
    cdef Py_ssize_t full = n >> 3
    cdef Py_ssize_t i, j, base
    cdef uint64_t h = FNV_OFFSET
    cdef uint64_t lane
    with nogil:
        for i in range(full):
            base = i << 3
            lane = 0
            for j in range(8):
                lane |= (<uint64_t> buf[base + j]) << (8 * j)
            h = h * FNV_PRIME + lane
        if n & 7:
            base = full << 3
            lane = 0
            for j in range(n - base):
                lane |= (<uint64_t> buf[base + j]) << (8 * j)
            h = h * FNV_PRIME + lane
        h ^= <uint64_t> n
    return _mix(h)


def gen_bytes(seed, offset, length):
    cdef uint64_t s = <uint64_t> (seed & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t off = offset
    cdef Py_ssize_t ln = length
    if ln <= 0:
        return b""
    cdef Py_ssize_t k0 = off >> 3
    cdef Py_ssize_t k1 = (off + ln + 7) >> 3
    cdef Py_ssize_t nlanes = k1 - k0
    cdef bytearray out = bytearray(nlanes * 8)
    cdef unsigned char[::1] view = out
    cdef Py_ssize_t k, j
    cdef uint64_t lane
    with nogil:
        for k in range(nlanes):
            lane = _mix(s + (<uint64_t> (k0 + k + 1)) * GOLDEN)
            for j in range(8):
                view[k * 8 + j] = <unsigned char> (lane >> (8 * j))
    cdef Py_ssize_t lo = off - k0 * 8
    return bytes(out[lo : lo + ln])
