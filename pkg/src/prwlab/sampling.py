"""Reproducible random variate generation.

All randomness in this package flows through a counter-based (splittable)
generator: a 64-bit state is derived by absorbing key words (seed, replica id,
role, ...) through the SplitMix64 finalizer, and the k-th variate of a stream
is a pure function of (state, k).  This makes every replica bit-reproducible
regardless of scheduling, chunking, or worker count.

Uniforms are produced strictly inside (0, 1) so inverse CDFs stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U52 = 2.0 ** -52

ROLE_CODES = {"tree": 0, "limit_path": 1, "aux": 2}


@numba.njit(numba.uint64(numba.uint64), cache=True, inline="always")
def mix64(z):
    """SplitMix64 finalizer (Stafford mix13)."""
    z = (z ^ (z >> numba.uint64(30))) * numba.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> numba.uint64(27))) * numba.uint64(0x94D049BB133111EB)
    return z ^ (z >> numba.uint64(31))


@numba.njit(numba.uint64(numba.uint64, numba.uint64), cache=True, inline="always")
def absorb(h, w):
    """Fold one key word into the running state."""
    return mix64(h + numba.uint64(0x9E3779B97F4A7C15) + w)


@numba.njit(numba.float64(numba.uint64), cache=True, inline="always")
def to_unit(x):
    """Map a 64-bit word to the open interval (0, 1) using the top 52 bits.

    52 bits (not 53) so the largest output, 1 - 2^-53, is exactly
    representable and never rounds up to 1.0.
    """
    return (np.float64(x >> numba.uint64(12)) + 0.5) * (2.0 ** -52)


def mix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorized SplitMix64 finalizer on uint64 arrays."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def absorb_array(h, w) -> np.ndarray:
    with np.errstate(over="ignore"):
        return mix64_array(np.asarray(h, dtype=np.uint64) + GOLDEN + np.asarray(w, dtype=np.uint64))


def to_unit_array(x: np.ndarray) -> np.ndarray:
    return ((x >> np.uint64(12)).astype(np.float64) + 0.5) * _U52


@dataclass(frozen=True)
class StreamKey:
    """Identifies one independent stream: (seed, replica, role)."""

    seed: int
    replica_id: int
    role: str = "aux"

    def __post_init__(self):
        if self.role not in ROLE_CODES:
            raise ValueError(f"unknown role {self.role!r}; expected one of {sorted(ROLE_CODES)}")
        if not (0 <= self.seed < 2 ** 64 and 0 <= self.replica_id < 2 ** 64):
            raise ValueError("seed and replica_id must fit in 64 unsigned bits")

    def state(self) -> np.uint64:
        h = absorb_array(np.uint64(0), np.uint64(self.seed))
        h = absorb_array(h, np.uint64(self.replica_id))
        return np.uint64(absorb_array(h, np.uint64(ROLE_CODES[self.role])))


@dataclass
class Stream:
    """Single-owner sequential view over a counter-based stream."""

    base: np.uint64
    counter: int = 0

    def next_uniform(self) -> float:
        with np.errstate(over="ignore"):
            z = np.uint64(self.base) + GOLDEN + np.uint64(self.counter)
        u = float(to_unit_array(mix64_array(z)))
        self.counter += 1
        return u

    def uniforms(self, n: int) -> np.ndarray:
        """Draw n uniforms, advancing the counter; identical to n next_uniform calls."""
        ctr = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return to_unit_array(mix64_array(np.uint64(self.base) + GOLDEN + ctr))


def stream_for(key: StreamKey) -> Stream:
    return Stream(base=key.state())


def sample_uniform(s: Stream) -> float:
    return s.next_uniform()


def uniform_block(base, counters) -> np.ndarray:
    """Stateless positional uniforms: entry i is draw `counters[i]` of stream `base[i]`.

    `base` and `counters` broadcast against each other.
    """
    with np.errstate(over="ignore"):
        z = np.asarray(base, dtype=np.uint64) + GOLDEN + np.asarray(counters, dtype=np.uint64)
    return to_unit_array(mix64_array(z))


# --- family inverse CDFs ------------------------------------------------

def pareto_inv(u, alpha: float, x_m: float):
    return x_m * (1.0 - u) ** (-1.0 / alpha)


def exponential_inv(u, rate: float):
    return -np.log1p(-u) / rate


def sample_pair(model, s: Stream) -> tuple[float, float]:
    """One draw of (xi, eta) from the model, honoring its dependence mode."""
    u1 = s.next_uniform()
    u2 = s.next_uniform()
    return model.pair_from_uniforms(u1, u2)


def sample_pairs(model, s: Stream, n: int) -> tuple[np.ndarray, np.ndarray]:
    u = s.uniforms(2 * n)
    return model.pair_from_uniforms(u[0::2], u[1::2])
