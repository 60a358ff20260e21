"""QARMA-64 tweakable block cipher (5 forward rounds, reflector, 5 backward
rounds) and the key hierarchy used by the memory encryption engine.

The state is 16 nibble cells, cell 0 being the most significant nibble of
the 64-bit block. All layers are precomputed into byte-indexed scatter
tables so a block operation is a few dozen dict-free lookups; CPython does
one encrypt/decrypt in roughly 15-20 microseconds, which is what makes
whole-region encryption sweeps affordable in the simulator.

Keys are 128 bits, split into a whitening half w0 and a core half k0. The
second whitening key w1 is derived as ror64(w0, 1) xor (w0 >> 63) and the
reflector key k1 equals k0, so Key128 carries only the two stored halves.

Nothing here is secret-sided against timing attacks; this is a functional
model, not a hardened implementation.
"""

from __future__ import annotations

from typing import NamedTuple

MASK64 = (1 << 64) - 1

# Inner S-boxes. sigma1 is the default used by the memory engine; sigma0
# and sigma2 exist so the published vectors for all three variants can be
# checked. sigma0 and sigma1 are involutions, sigma2 is not.
SIGMA = (
    (0x0, 0xE, 0x2, 0xA, 0x9, 0xF, 0x8, 0xB, 0x6, 0x4, 0x3, 0x7, 0xD, 0xC, 0x1, 0x5),
    (0xA, 0xD, 0xE, 0x6, 0xF, 0x7, 0x3, 0x5, 0x9, 0x8, 0x0, 0xC, 0xB, 0x1, 0x2, 0x4),
    (0xB, 0x6, 0x8, 0xF, 0xC, 0x0, 0x9, 0xE, 0x3, 0x7, 0x4, 0x5, 0xD, 0x2, 0x1, 0xA),
)

# Cell shuffle (gather: out[i] = in[TAU[i]]) and the tweak cell shuffle.
_TAU = (0, 11, 6, 13, 10, 1, 12, 7, 5, 14, 3, 8, 15, 4, 9, 2)
_H = (6, 5, 14, 15, 0, 1, 2, 3, 7, 12, 13, 4, 8, 9, 10, 11)
# Tweak cells that pass through the 4-bit LFSR after the shuffle.
_OMEGA_CELLS = (0, 1, 3, 4, 8, 11, 13)

_RC = (
    0x0000000000000000,
    0x13198A2E03707344,
    0xA4093822299F31D0,
    0x082EFA98EC4E6C89,
    0x452821E638D01377,
)
_ALPHA = 0xC0AC29B7C97C50DD


class Key128(NamedTuple):
    """Cipher key: whitening half w0, core half k0. Opaque outside this
    module; must never end up in reports or dumps."""

    w0: int
    k0: int


def _to_cells(x):
    return [(x >> (60 - 4 * i)) & 0xF for i in range(16)]


def _from_cells(c):
    x = 0
    for i in range(16):
        x |= c[i] << (60 - 4 * i)
    return x


def _inv(p):
    q = [0] * 16
    for i, v in enumerate(p):
        q[v] = i
    return tuple(q)


def _rotl4(x, n):
    return ((x << n) | (x >> (4 - n))) & 0xF


def _mix_cells(c):
    # M = circ(0, rho^1, rho^2, rho^1) acting on columns {i, i+4, i+8, i+12};
    # involutory, so it is its own inverse.
    o = [0] * 16
    for col in range(4):
        a, b, d, e = c[col], c[col + 4], c[col + 8], c[col + 12]
        o[col] = _rotl4(b, 1) ^ _rotl4(d, 2) ^ _rotl4(e, 1)
        o[col + 4] = _rotl4(a, 1) ^ _rotl4(d, 1) ^ _rotl4(e, 2)
        o[col + 8] = _rotl4(a, 2) ^ _rotl4(b, 1) ^ _rotl4(e, 1)
        o[col + 12] = _rotl4(a, 1) ^ _rotl4(b, 2) ^ _rotl4(d, 1)
    return o


def _lfsr(x):
    return ((x >> 1) | (((x ^ (x >> 1)) & 1) << 3)) & 0xF


def _cells_fn_to_tables(fn):
    # Build 8 x 256 scatter tables for any function on the 64-bit state that
    # is linear over GF(2), by superposing its action on single input bytes.
    tabs = []
    for j in range(8):
        row = []
        for b in range(256):
            row.append(fn(b << (8 * j)))
        tabs.append(row)
    return tabs


def _linearized(cell_op):
    def fn(x):
        return _from_cells(cell_op(_to_cells(x)))

    return fn


_TAU_INV = _inv(_TAU)
_H_INV = _inv(_H)


def _tweak_fwd_cells(c):
    o = [c[_H[i]] for i in range(16)]
    for i in _OMEGA_CELLS:
        o[i] = _lfsr(o[i])
    return o


# Scatter tables for every GF(2)-linear layer the rounds use.
_T_L = _cells_fn_to_tables(_linearized(lambda c: _mix_cells([c[_TAU[i]] for i in range(16)])))
_T_LI = _cells_fn_to_tables(_linearized(lambda c: [_mix_cells(c)[_TAU_INV[i]] for i in range(16)]))
_T_TAU = _cells_fn_to_tables(_linearized(lambda c: [c[_TAU[i]] for i in range(16)]))
_T_TAUI = _cells_fn_to_tables(_linearized(lambda c: [c[_TAU_INV[i]] for i in range(16)]))
_T_TWF = _cells_fn_to_tables(_linearized(_tweak_fwd_cells))


def _sbox_tables(sig):
    fwd = []
    bwd = []
    inv = _inv(sig)
    for j in range(8):
        frow = []
        brow = []
        for b in range(256):
            fb = (sig[b >> 4] << 4) | sig[b & 0xF]
            ib = (inv[b >> 4] << 4) | inv[b & 0xF]
            frow.append(fb << (8 * j))
            brow.append(ib << (8 * j))
        fwd.append(frow)
        bwd.append(brow)
    return fwd, bwd


_T_S = tuple(_sbox_tables(s) for s in SIGMA)


def _ap(t, x):
    # Apply one 8 x 256 scatter table to a 64-bit value.
    return (
        t[0][x & 0xFF]
        ^ t[1][(x >> 8) & 0xFF]
        ^ t[2][(x >> 16) & 0xFF]
        ^ t[3][(x >> 24) & 0xFF]
        ^ t[4][(x >> 32) & 0xFF]
        ^ t[5][(x >> 40) & 0xFF]
        ^ t[6][(x >> 48) & 0xFF]
        ^ t[7][x >> 56]
    )


def _w1_of(w0):
    return (((w0 >> 1) | (w0 << 63)) ^ (w0 >> 63)) & MASK64


def _schedule(tweak):
    ts = [tweak & MASK64]
    t = ts[0]
    for _ in range(5):
        t = _ap(_T_TWF, t)
        ts.append(t)
    return ts


def qarma_encrypt(key, tweak, plaintext, sigma=1):
    """Encrypt one 64-bit block under (key, tweak). Total function; inputs
    are masked to 64 bits."""
    w0, k0 = key
    w0 &= MASK64
    k0 &= MASK64
    w1 = _w1_of(w0)
    sb, sbi = _T_S[sigma]
    ts = _schedule(tweak)

    s = (plaintext & MASK64) ^ w0
    s ^= k0 ^ ts[0]  # RC[0] is zero
    s = _ap(sb, s)
    for i in (1, 2, 3, 4):
        s ^= k0 ^ ts[i] ^ _RC[i]
        s = _ap(sb, _ap(_T_L, s))

    # Central rounds and reflector. k1 equals k0.
    s ^= w1 ^ ts[5]
    s = _ap(sb, _ap(_T_L, s))
    s = _ap(_T_L, s) ^ k0
    s = _ap(_T_TAUI, s)
    s = _ap(sbi, s)
    s = _ap(_T_LI, s)
    s ^= w0 ^ ts[5]

    for i in (4, 3, 2, 1):
        s = _ap(_T_LI, _ap(sbi, s))
        s ^= _RC[i] ^ k0 ^ ts[i] ^ _ALPHA
    s = _ap(sbi, s)
    s ^= k0 ^ ts[0] ^ _ALPHA
    return s ^ w1


def qarma_decrypt(key, tweak, ciphertext, sigma=1):
    """Exact inverse of qarma_encrypt; implemented as the structural
    inverse rather than the key-swapped forward circuit."""
    w0, k0 = key
    w0 &= MASK64
    k0 &= MASK64
    w1 = _w1_of(w0)
    sb, sbi = _T_S[sigma]
    ts = _schedule(tweak)

    s = (ciphertext & MASK64) ^ w1
    s ^= k0 ^ ts[0] ^ _ALPHA
    s = _ap(sb, s)
    for i in (1, 2, 3, 4):
        s ^= _RC[i] ^ k0 ^ ts[i] ^ _ALPHA
        s = _ap(sb, _ap(_T_L, s))

    s ^= w0 ^ ts[5]
    s = _ap(_T_L, s)
    s = _ap(sb, s)
    s = _ap(_T_TAU, s)
    s = _ap(_T_LI, s ^ k0)
    s = _ap(_T_LI, _ap(sbi, s))
    s ^= w1 ^ ts[5]

    for i in (4, 3, 2, 1):
        s = _ap(_T_LI, _ap(sbi, s))
        s ^= k0 ^ ts[i] ^ _RC[i]
    s = _ap(sbi, s)
    s ^= k0 ^ ts[0]
    return s ^ w0


def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64, state


def generate_master_key(seed):
    """Expand a 64-bit seed into a Key128 with two splitmix64 draws.
    Deterministic by design so runs are reproducible."""
    w0, st = _splitmix64(seed & MASK64)
    k0, _ = _splitmix64(st)
    return Key128(w0, k0)


def derive_thread_key(master, tid):
    """Per-thread key: two cipher calls under the master key with the
    thread id as tweak and fixed distinct plaintext constants."""
    if tid < 0:
        raise ValueError("tid must be non-negative")
    w0 = qarma_encrypt(master, tid, 0xA5A5A5A5A5A5A5A5)
    k0 = qarma_encrypt(master, tid, 0x5A5A5A5A5A5A5A5A)
    return Key128(w0, k0)
