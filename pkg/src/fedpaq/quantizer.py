"""Low-precision stochastic quantizer, its wire codec, and variance checks.

Each coordinate of ``x`` is sent as ``norm * sign * level / s`` where ``level``
is a randomized rounding of ``s * |x_i| / ||x||`` to one of its two
neighbouring integers, so the reconstruction is unbiased.

Wire layout (big-endian, bit-packed, zero padded to a whole byte)::

    dim    : 32 bits unsigned
    s      : 32 bits unsigned
    norm   : F-bit IEEE float (F in {16, 32, 64})
    signs  : dim bits, 1 = negative
    levels : dim * ceil(log2(s + 1)) bits, unsigned

A sign is only meaningful where ``level > 0``; the quantizer emits sign 0 on
every zero level so the 1-bit sign field round-trips exactly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

HEADER_BITS = 64
DEFAULT_FLOAT_BITS = 32

_FLOAT_DTYPES = {16: ">f2", 32: ">f4", 64: ">f8"}


class InvalidInputError(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuantizedVector:
    norm: float
    signs: np.ndarray
    levels: np.ndarray
    level_count: int

    def __post_init__(self):
        signs = np.asarray(self.signs, dtype=np.int8)
        levels = np.asarray(self.levels, dtype=np.int64)
        object.__setattr__(self, "signs", signs)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "norm", float(self.norm))
        s = int(self.level_count)
        if s < 1:
            raise InvalidInputError(f"level_count must be >= 1, got {s}")
        if signs.ndim != 1 or signs.shape != levels.shape or signs.size < 1:
            raise InvalidInputError("signs and levels must be nonempty 1-d arrays of equal length")
        if not (math.isfinite(self.norm) and self.norm >= 0):
            raise InvalidInputError(f"norm must be finite and nonnegative, got {self.norm}")
        if levels.min() < 0 or levels.max() > s:
            raise InvalidInputError(f"levels must lie in [0, {s}]")
        if np.abs(signs).max() > 1:
            raise InvalidInputError("signs must be in {-1, 0, +1}")
        if self.norm == 0 and levels.any():
            raise InvalidInputError("zero norm requires all levels to be 0")

    @property
    def dim(self) -> int:
        return int(self.levels.size)

    def __eq__(self, other):
        if not isinstance(other, QuantizedVector):
            return NotImplemented
        return (
            struct.pack(">d", self.norm) == struct.pack(">d", other.norm)
            and self.level_count == other.level_count
            and np.array_equal(self.signs, other.signs)
            and np.array_equal(self.levels, other.levels)
        )

    __hash__ = None


# -- modes -------------------------------------------------------------------


@dataclass(frozen=True)
class LowPrecision:
    s: int

    def __post_init__(self):
        if int(self.s) < 1:
            raise ValueError(f"quantization levels must be >= 1, got {self.s}")

    def apply(self, x, rng, float_bits=DEFAULT_FLOAT_BITS):
        return quantize(x, self.s, rng, float_bits=float_bits)

    def bits(self, p: int, float_bits: int = DEFAULT_FLOAT_BITS) -> int:
        return payload_bits(p, self.s, float_bits)

    def variance_bound(self, p: int) -> float:
        return default_q(p, self.s)


@dataclass(frozen=True)
class Identity:
    """No compression: the raw vector is uploaded as ``p`` floats."""

    def apply(self, x, rng=None, float_bits=DEFAULT_FLOAT_BITS):
        return np.asarray(x, dtype=float)

    def bits(self, p: int, float_bits: int = DEFAULT_FLOAT_BITS) -> int:
        return p * float_bits

    def variance_bound(self, p: int) -> float:
        return 0.0


QuantizerMode = LowPrecision | Identity


# -- quantize / dequantize ---------------------------------------------------


_STRUCT_CODES = {16: ">e", 32: ">f", 64: ">d"}


def _round_norm(norm: float, float_bits: int) -> float:
    if float_bits not in _STRUCT_CODES:
        raise ValueError(f"float_bits must be one of {sorted(_STRUCT_CODES)}, got {float_bits}")
    code = _STRUCT_CODES[float_bits]
    try:
        return struct.unpack(code, struct.pack(code, norm))[0]
    except OverflowError:
        raise InvalidInputError(f"norm {norm} overflows a {float_bits}-bit float") from None


def _scaled_ratio(x: np.ndarray, s: int) -> tuple[float, np.ndarray]:
    if x.ndim != 1 or x.size < 1:
        raise InvalidInputError("expected a nonempty 1-d vector")
    if not np.isfinite(x).all():
        raise InvalidInputError("input has non-finite coordinates")
    if int(s) < 1:
        raise InvalidInputError(f"s must be >= 1, got {s}")
    mag = np.abs(x)
    peak = float(mag.max())
    if peak == 0.0:
        return 0.0, np.zeros_like(x)
    # rescale by the peak so the norm neither underflows nor overflows
    unit = mag / peak
    rel = math.sqrt(float(unit @ unit))
    norm = peak * rel
    if not math.isfinite(norm):
        raise InvalidInputError("vector norm overflows a float64")
    return norm, np.minimum(unit / rel * s, s)


def level_probabilities(x, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Lower level ``l`` per coordinate and the probability of rounding up to ``l+1``.

    ``l`` is clamped to ``s - 1`` so a coordinate carrying the whole norm maps
    to level ``s`` with probability one.
    """
    _, ratio = _scaled_ratio(np.asarray(x, dtype=float), s)
    lower = np.minimum(np.floor(ratio), s - 1)
    return lower.astype(np.int64), ratio - lower


def quantize(x, s: int, rng: np.random.Generator, float_bits: int = 64) -> QuantizedVector:
    """Quantize ``x`` to ``s`` levels.

    ``float_bits`` is the width the norm will travel at; the stored norm is
    rounded to it so the server reconstructs exactly what was sent.
    """
    x = np.asarray(x, dtype=float)
    norm, ratio = _scaled_ratio(x, s)
    if norm == 0.0:
        zeros = np.zeros(x.size, dtype=np.int64)
        return QuantizedVector(0.0, zeros.astype(np.int8), zeros, s)
    lower = np.minimum(np.floor(ratio), s - 1)
    levels = (lower + (rng.random(x.size) < ratio - lower)).astype(np.int64)
    signs = np.where(levels > 0, np.sign(x), 0).astype(np.int8)
    return _trusted(_round_norm(norm, float_bits), signs, levels, int(s))


def _trusted(norm, signs, levels, s) -> QuantizedVector:
    # valid by construction; skips __post_init__ checks on the hot path
    q = object.__new__(QuantizedVector)
    for name, value in (("norm", norm), ("signs", signs), ("levels", levels), ("level_count", s)):
        object.__setattr__(q, name, value)
    return q


def dequantize(q: QuantizedVector) -> np.ndarray:
    return q.norm * q.signs.astype(float) * (q.levels / q.level_count)


def sample_dequantized(x, s: int, rng: np.random.Generator, draws: int) -> np.ndarray:
    """``draws`` independent reconstructions of ``x``, shape ``(draws, p)``."""
    x = np.asarray(x, dtype=float)
    norm, ratio = _scaled_ratio(x, s)
    if norm == 0.0:
        return np.zeros((draws, x.size))
    lower = np.minimum(np.floor(ratio), s - 1)
    levels = lower + (rng.random((draws, x.size)) < ratio - lower)
    return norm * np.sign(x) * levels / s


def default_q(p: int, s: int) -> float:
    """Variance parameter bound ``min(p/s^2, sqrt(p)/s)``."""
    return min(p / s**2, math.sqrt(p) / s)


def estimate_variance_ratio(
    mode, p: int, trials: int, rng: np.random.Generator, vectors: int = 8, points=None
) -> float:
    """Max over test vectors of the empirical ``E||Q(x) - x||^2 / ||x||^2``.

    ``mode`` is a level count or a mode object. Test vectors are random unit
    vectors unless ``points`` (an iterable of vectors of length ``p``) is given.
    """
    if isinstance(mode, Identity):
        return 0.0
    s = mode.s if isinstance(mode, LowPrecision) else int(mode)
    if trials < 10_000:
        raise ValueError(f"trials must be >= 1e4, got {trials}")
    if points is None:
        g = rng.standard_normal((vectors, p))
        points = g / np.linalg.norm(g, axis=1, keepdims=True)
    worst = 0.0
    chunk = max(1, 2_000_000 // p)
    for x in points:
        x = np.asarray(x, dtype=float)
        total, done = 0.0, 0
        while done < trials:
            m = min(chunk, trials - done)
            err = sample_dequantized(x, s, rng, m) - x
            total += float(np.einsum("ij,ij->", err, err))
            done += m
        worst = max(worst, total / trials / float(x @ x))
    return worst


# -- wire format -------------------------------------------------------------


def level_width(s: int) -> int:
    """ceil(log2(s + 1)) bits per level."""
    return int(s).bit_length()


def payload_bits(p: int, s: int, float_bits: int = DEFAULT_FLOAT_BITS) -> int:
    """Bits of one upload excluding the (dim, s) header."""
    return float_bits + p * (1 + level_width(s))


def encoded_bits(p: int, s: int, float_bits: int = DEFAULT_FLOAT_BITS) -> int:
    return HEADER_BITS + payload_bits(p, s, float_bits)


def _uint_bits(values: np.ndarray, width: int) -> np.ndarray:
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    return ((values.astype(np.uint64)[:, None] >> shifts) & np.uint64(1)).astype(np.uint8).ravel()


def _bits_uint(bits: np.ndarray, width: int) -> np.ndarray:
    weights = np.uint64(1) << np.arange(width - 1, -1, -1, dtype=np.uint64)
    return (bits.reshape(-1, width).astype(np.uint64) * weights).sum(axis=1)


def encode(q: QuantizedVector, float_bits: int = DEFAULT_FLOAT_BITS) -> bytes:
    if float_bits not in _FLOAT_DTYPES:
        raise ValueError(f"float_bits must be one of {sorted(_FLOAT_DTYPES)}, got {float_bits}")
    if q.level_count >= 2**32 or q.dim >= 2**32:
        raise InvalidInputError("dim and level_count must fit in 32 bits")
    norm = np.array(q.norm, dtype=_FLOAT_DTYPES[float_bits])
    if float(norm) != q.norm:
        raise InvalidInputError(f"norm {q.norm!r} is not representable in {float_bits} bits")
    if np.any((q.levels > 0) & (q.signs == 0)) or np.any((q.levels == 0) & (q.signs != 0)):
        raise InvalidInputError("sign must be nonzero exactly where level is nonzero")
    head = np.frombuffer(struct.pack(">II", q.dim, q.level_count) + norm.tobytes(), dtype=np.uint8)
    bits = np.concatenate(
        [
            np.unpackbits(head),
            (q.signs < 0).astype(np.uint8),
            _uint_bits(q.levels, level_width(q.level_count)),
        ]
    )
    return np.packbits(bits).tobytes()


def decode(buf: bytes, float_bits: int = DEFAULT_FLOAT_BITS) -> QuantizedVector:
    if float_bits not in _FLOAT_DTYPES:
        raise ValueError(f"float_bits must be one of {sorted(_FLOAT_DTYPES)}, got {float_bits}")
    if len(buf) < 8:
        raise FormatError(f"buffer too short for header: {len(buf)} bytes")
    dim, s = struct.unpack(">II", buf[:8])
    if dim < 1 or s < 1:
        raise FormatError(f"bad header: dim={dim}, s={s}")
    total = encoded_bits(dim, s, float_bits)
    if len(buf) != (total + 7) // 8:
        raise FormatError(f"expected {(total + 7) // 8} bytes for dim={dim}, s={s}, got {len(buf)}")
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8))
    if bits[total:].any():
        raise FormatError("nonzero padding bits")
    fb = float_bits // 8
    norm = float(np.frombuffer(buf[8 : 8 + fb], dtype=_FLOAT_DTYPES[float_bits])[0])
    pos = HEADER_BITS + float_bits
    negative = bits[pos : pos + dim].astype(bool)
    pos += dim
    levels = _bits_uint(bits[pos:total], level_width(s)).astype(np.int64)
    signs = np.where(levels > 0, np.where(negative, -1, 1), 0)
    if np.any(negative & (levels == 0)):
        raise FormatError("sign bit set on a zero level")
    try:
        return QuantizedVector(norm, signs, levels, s)
    except InvalidInputError as exc:
        raise FormatError(str(exc)) from exc


def encode_dense(x, float_bits: int = DEFAULT_FLOAT_BITS) -> bytes:
    """Unquantized upload: ``p`` big-endian floats, ``p * F`` bits, no header."""
    if float_bits not in _FLOAT_DTYPES:
        raise ValueError(f"float_bits must be one of {sorted(_FLOAT_DTYPES)}, got {float_bits}")
    return np.asarray(x, dtype=_FLOAT_DTYPES[float_bits]).tobytes()


def decode_dense(buf: bytes, float_bits: int = DEFAULT_FLOAT_BITS) -> np.ndarray:
    width = float_bits // 8
    if float_bits not in _FLOAT_DTYPES or len(buf) % width:
        raise FormatError(f"buffer of {len(buf)} bytes is not a whole number of {float_bits}-bit floats")
    return np.frombuffer(buf, dtype=_FLOAT_DTYPES[float_bits]).astype(float)
