"""Deterministic random streams and a finite-difference gradient oracle.

The generator is SplitMix64: state ``s_k = s_0 + k * GOLDEN (mod 2**64)``,
output ``mix64(s_k)``. It is counter-based, so a stream is a pure function of
its initial state, and the constants below pin the draw sequence on every
platform. Gaussians come from the Box-Muller transform of uniform pairs, and
permutations from a stable argsort of raw 64-bit draws, so those sequences are
platform-stable too.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15  # SplitMix64 increment, floor(2**64 / phi), odd
_MIX_MUL_1 = 0xBF58476D1CE4E5B9  # mix64 multipliers (Stafford variant 13)
_MIX_MUL_2 = 0x94D049BB133111EB
_STREAM_SALT = 0xD6E8FEB86659FD93  # keeps stream-id mixing distinct from seed mixing
_CHILD_SALT = 0xA3AAC68B4F1CD217  # keeps derived substreams distinct from draws

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_INV_2_53 = 2.0 ** -53


class NumericError(ArithmeticError):
    """A numeric routine produced or encountered a non-finite value."""


def mix64(x: int) -> int:
    """SplitMix64 output function on a 64-bit integer."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * _MIX_MUL_1) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX_MUL_2) & _MASK64
    return x ^ (x >> 31)


def _mix64_array(x: np.ndarray) -> np.ndarray:
    # uint64 array twin of mix64; numpy array ops wrap silently mod 2**64.
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(_MIX_MUL_1)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(_MIX_MUL_2)
    return x ^ (x >> np.uint64(31))


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash, used for stable stream labels and file descriptors."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def _check_u64(value: int, name: str) -> int:
    if not isinstance(value, (int, np.integer)):
        raise ValueError(f"{name} must be an integer, got {type(value).__name__}")
    value = int(value)
    if not 0 <= value <= _MASK64:
        raise ValueError(f"{name} must fit in 64 unsigned bits, got {value}")
    return value


class RngStream:
    """A single-owner SplitMix64 draw stream.

    Draw k (1-based) is ``mix64(base + k * GOLDEN)``. The base is a pure
    function of (seed, stream_id), so two streams built from the same pair
    replay identically. Never draw from one stream on two threads; derive a
    child per parallel task instead.
    """

    __slots__ = ("seed", "stream_id", "_base", "_count")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = _check_u64(seed, "seed")
        self.stream_id = _check_u64(stream_id, "stream_id")
        self._base = mix64(mix64(self.seed) ^ mix64(self.stream_id ^ _STREAM_SALT))
        self._count = 0

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, drawn={self._count})"

    def derive(self, substream_id: int) -> "RngStream":
        """A child stream keyed on this stream's identity plus substream_id.

        Pure: does not consume draws from the parent.
        """
        substream_id = _check_u64(substream_id, "substream_id")
        child = RngStream.__new__(RngStream)
        child.seed = self.seed
        child.stream_id = self.stream_id
        child._base = mix64(self._base ^ mix64(substream_id ^ _CHILD_SALT))
        child._count = 0
        return child

    def raw(self, count: int) -> np.ndarray:
        """The next `count` raw 64-bit draws as a uint64 array."""
        if count < 0:
            raise ValueError(f"count must be nonnegative, got {count}")
        ks = np.arange(self._count + 1, self._count + count + 1, dtype=np.uint64)
        self._count += count
        return _mix64_array(np.uint64(self._base) + ks * np.uint64(GOLDEN))

    def uniforms(self, count: int) -> np.ndarray:
        """`count` doubles uniform on [0, 1), from the top 53 bits of each draw."""
        return (self.raw(count) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normals(self, count: int) -> np.ndarray:
        """`count` standard-normal doubles via Box-Muller on uniform pairs."""
        if count < 0:
            raise ValueError(f"count must be nonnegative, got {count}")
        pairs = (count + 1) // 2
        # u1 in (0, 1] so log() is finite; u2 in [0, 1).
        u1 = ((self.raw(pairs) >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = self.uniforms(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        out = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
        return out[:count]

    def permutation(self, n: int) -> np.ndarray:
        """A seeded permutation of range(n): stable argsort of n raw draws."""
        return np.argsort(self.raw(n), kind="stable")


def derive_stream(seed: int, stream_id: int) -> RngStream:
    """The stream for (seed, stream_id); same pair, same sequence, any platform."""
    return RngStream(seed, stream_id)


def stream_for(seed: int, label: str) -> RngStream:
    """A stream keyed on a human-readable label (hashed to a stream id)."""
    return RngStream(seed, fnv1a64(label.encode("utf-8")))


def sample_gaussian(rng: RngStream, mean: float, std: float, count: int) -> np.ndarray:
    """`count` draws from N(mean, std**2); std = 0 degenerates to the mean."""
    if std < 0:
        raise ValueError(f"std must be nonnegative, got {std}")
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    out = mean + std * rng.normals(count)
    if not np.all(np.isfinite(out)):
        raise NumericError("gaussian sampling produced a non-finite value")
    return out


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, coordinate by coordinate.

    This is the reference oracle the backpropagation tests are checked
    against; it must stay independent of any analytic gradient code.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty(x.size, dtype=np.float64)
    flat = x.ravel().copy()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(flat.reshape(x.shape)))
        flat[i] = orig - h
        f_minus = float(f(flat.reshape(x.shape)))
        flat[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericError(f"function value is non-finite when perturbing index {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise; the gradcheck comparison rule."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale
