"""Deterministic synthetic activations with a shared-range failure regime.

Background tokens carry a per-token DC offset, unit-scale Gaussian noise and
occasional large positive spikes; a minority of boundary tokens are
zero-mean and free of spikes. The stream is xoshiro256++ seeded through
splitmix64, so any implementation of the same draw order reproduces the
tensor bit for bit.

Draw order:
  1. Fisher-Yates shuffle of ``range(T)``; the first ``n_boundary`` indices
     (sorted) are boundary tokens.
  2. Tokens in index order. Boundary: ``C`` normals times ``cue_scale``.
     Background: one sign draw for the offset (if ``background_offset`` is
     non-zero), ``C`` normals, then one uniform; if it is below
     ``spike_prob``, a bounded channel draw, then a sign draw when
     ``signed_spikes`` is set.

Normals come from Box-Muller pairs (cosine branch first); uniforms are the
top 53 bits of a 64-bit output.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .diagnostics import BOUNDARY, NON_BOUNDARY
from .errors import ConfigError

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256pp:
    """xoshiro256++ with splitmix64 seeding."""

    def __init__(self, seed: int = 0, state: tuple[int, int, int, int] | None = None):
        if state is None:
            sm = seed & MASK64
            s = []
            for _ in range(4):
                sm, out = splitmix64(sm)
                s.append(out)
            state = tuple(s)
        if not any(state):
            raise ValueError("xoshiro256++ state must not be all zero")
        self.s = list(state)
        self._spare = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s0 + s3) & MASK64, 23) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Uniform on [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Unbiased integer in ``[0, n)`` by rejection."""
        if n < 1:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.uniform()  # (0, 1], keeps log finite
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)


@dataclass(frozen=True)
class SynthSpec:
    n_tokens: int = 256
    n_channels: int = 128
    boundary_frac: float = 0.25
    cue_scale: float = 1.0
    background_scale: float = 1.0
    background_offset: float = 5.0
    spike_magnitude: float = 50.0
    spike_prob: float = 0.05
    signed_spikes: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_tokens < 2 or self.n_channels < 1:
            raise ConfigError("need at least 2 tokens and 1 channel")
        if not 0 < self.boundary_frac < 1:
            raise ConfigError(f"boundary_frac must be in (0, 1), got {self.boundary_frac}")
        if self.spike_magnitude < 1:
            raise ConfigError("spike_magnitude must be >= 1")
        if not 0 <= self.spike_prob <= 1:
            raise ConfigError("spike_prob must be in [0, 1]")
        if self.cue_scale < 0 or self.background_scale <= 0:
            raise ConfigError("scales must be positive")

    @property
    def n_boundary(self) -> int:
        return min(max(1, math.floor(self.boundary_frac * self.n_tokens)), self.n_tokens - 1)

    def to_dict(self) -> dict:
        return asdict(self)


def generate(spec: SynthSpec = SynthSpec()) -> tuple[np.ndarray, list[str]]:
    """Return a float32 ``(T, C)`` tensor and one label per token."""
    rng = Xoshiro256pp(spec.seed)
    T, C = spec.n_tokens, spec.n_channels
    order = list(range(T))
    for i in range(T - 1, 0, -1):
        j = rng.below(i + 1)
        order[i], order[j] = order[j], order[i]
    boundary = set(order[: spec.n_boundary])

    X = np.empty((T, C), dtype=np.float64)
    bs = spec.background_scale
    for t in range(T):
        if t in boundary:
            X[t] = [spec.cue_scale * rng.normal() for _ in range(C)]
            continue
        offset = 0.0
        if spec.background_offset:
            offset = spec.background_offset * bs * (1.0 if rng.uniform() < 0.5 else -1.0)
        X[t] = [offset + bs * rng.normal() for _ in range(C)]
        if rng.uniform() < spec.spike_prob:
            ch = rng.below(C)
            sign = -1.0 if spec.signed_spikes and rng.uniform() < 0.5 else 1.0
            X[t, ch] = sign * spec.spike_magnitude * bs
    labels = [BOUNDARY if t in boundary else NON_BOUNDARY for t in range(T)]
    return X.astype(np.float32), labels
