"""Gaussian increment sources for path simulation.

Two interchangeable sources produce the per-step Brownian increments
``dB[k, j] ~ N(0, h)`` for a path:

* ``pseudo`` draws uniforms from a keyed counter-based generator (Philox)
  and maps them through the inverse normal CDF.  Streams are addressed, not
  advanced: the uniform feeding increment ``(path p, step k, coordinate j)``
  sits at counter position ``p * d + j`` of the stream keyed by
  ``(seed, replication, k)``, so any path of any chunk can be produced by
  any worker with no shared state.
* ``sobol`` assigns path p the p-th point of a digitally shifted Sobol
  sequence in dimension ``n * d`` (direction numbers: the Joe/Kuo table
  shipped with scipy), with coordinate ``k * d + j`` feeding increment
  ``(k, j)``.  Distinct replication indices use independent digital shifts,
  which is what makes replication-based error bars honest.

Both modes consume exactly one uniform per Gaussian, so the path/step/
coordinate indexing is identical between them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.random import Philox, SeedSequence
from scipy.special import ndtri
from scipy.stats import qmc

from .model import ContractViolation

_SOBOL_BITS = 32
_SOBOL_SCALE = float(2**_SOBOL_BITS)

# Domain separators for SeedSequence spawn keys, so step streams and shift
# vectors never collide.
_TAG_STEP = 0
_TAG_SHIFT = 1


class NoiseBudgetExceeded(RuntimeError):
    """More increment dimensions were requested than the source was sized for."""


class NoiseKind(Enum):
    PSEUDO = "pseudo"
    SOBOL = "sobol"


def inverse_normal_cdf(u):
    """Standard normal quantile function.

    Accepts scalars or arrays with every entry strictly inside (0, 1).
    """
    arr = np.asarray(u, dtype=float)
    if arr.size and (np.min(arr) <= 0.0 or np.max(arr) >= 1.0):
        raise ContractViolation("inverse_normal_cdf requires 0 < u < 1")
    return ndtri(u)


def _philox_key(seed: int, spawn_key: tuple[int, ...]) -> np.ndarray:
    ss = SeedSequence(entropy=seed, spawn_key=spawn_key)
    return ss.generate_state(2, np.uint64)


def _raw_uniforms(key: np.ndarray, offset: int, count: int) -> np.ndarray:
    # Philox emits 64-bit words in blocks of four per counter value; start at
    # the enclosing block and drop the lead-in so position `offset` is exact.
    lead = offset % 4
    bg = Philox(key=key, counter=offset // 4)
    raw = bg.random_raw(lead + count)[lead:]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


@dataclass(frozen=True)
class NoiseSource:
    """A deterministic, addressable source of Gaussian increments.

    Every increment is a pure function of (kind, seed, replication_index,
    path, step, coordinate); no call mutates the source, so workers may pull
    arbitrary paths concurrently.  ``dims_per_path`` is the budget ``n * d``
    the source was sized for; requests beyond it fail loudly.
    """

    kind: NoiseKind
    seed: int
    dims_per_path: int
    replication_index: int = 0

    @staticmethod
    def pseudo(seed: int, dims_per_path: int, replication_index: int = 0) -> "NoiseSource":
        return NoiseSource(NoiseKind.PSEUDO, seed, dims_per_path, replication_index)

    @staticmethod
    def sobol(seed: int, dims_per_path: int, replication_index: int = 0) -> "NoiseSource":
        return NoiseSource(NoiseKind.SOBOL, seed, dims_per_path, replication_index)

    def require_budget(self, n: int, d: int) -> None:
        if n < 1 or d < 1:
            raise ContractViolation("n and d must be positive")
        if n * d > self.dims_per_path:
            raise NoiseBudgetExceeded(
                "request for %d x %d increments exceeds the per-path budget of %d"
                % (n, d, self.dims_per_path)
            )

    def gaussian_increments(self, path_index: int, n: int, d: int, h: float) -> np.ndarray:
        """The (n, d) increment matrix for one path."""
        return self.increments_block(path_index, 1, n, d, h)[0]

    def increments_block(
        self, path_start: int, count: int, n: int, d: int, h: float
    ) -> np.ndarray:
        """Increments for paths [path_start, path_start + count), shape
        (count, n, d)."""
        self.require_budget(n, d)
        if h <= 0.0:
            raise ContractViolation("step size h must be positive")
        if self.kind is NoiseKind.PSEUDO:
            out = np.empty((count, n, d))
            for k in range(n):
                out[:, k, :] = self.step_increments(path_start, count, k, d, h)
            return out
        u = self._sobol_uniforms(path_start, count, n * d)
        return (inverse_normal_cdf(u) * np.sqrt(h)).reshape(count, n, d)

    def step_increments(
        self, path_start: int, count: int, k: int, d: int, h: float
    ) -> np.ndarray:
        """Pseudo-random increments of step k only, shape (count, d).

        Lets the simulator stream long paths without materialising the full
        (count, n, d) block.  Sobol points are row-generated, so this is
        pseudo-only.
        """
        if self.kind is not NoiseKind.PSEUDO:
            raise ContractViolation("per-step generation is only available for pseudo noise")
        key = _philox_key(self.seed, (_TAG_STEP, self.replication_index, k))
        u = _raw_uniforms(key, path_start * d, count * d)
        return (ndtri(u) * np.sqrt(h)).reshape(count, d)

    def _digital_shift(self, dim: int) -> np.ndarray:
        key = _philox_key(self.seed, (_TAG_SHIFT, self.replication_index))
        gen = np.random.Generator(Philox(key=key))
        return gen.integers(0, 2**_SOBOL_BITS, size=dim, dtype=np.uint64)

    def _sobol_uniforms(self, path_start: int, count: int, dim: int) -> np.ndarray:
        engine = qmc.Sobol(d=dim, scramble=False, bits=_SOBOL_BITS)
        if path_start:
            engine.fast_forward(path_start)
        with warnings.catch_warnings():
            # Unbalanced draw counts are fine: chunking does not change the
            # point set, and error bars come from replications.
            warnings.simplefilter("ignore", UserWarning)
            pts = engine.random(count)
        ints = np.round(pts * _SOBOL_SCALE).astype(np.uint64)
        shifted = np.bitwise_xor(ints, self._digital_shift(dim))
        return (shifted.astype(np.float64) + 0.5) / _SOBOL_SCALE


def sobol_points(dim: int, count: int, skip_origin: bool = True) -> np.ndarray:
    """Raw (unshifted) Sobol points, mainly for uniformity diagnostics.

    The sequence's first point is the origin, which maps to an undefined
    quantile; it is skipped by default since no shift is applied here.
    """
    engine = qmc.Sobol(d=dim, scramble=False, bits=_SOBOL_BITS)
    if skip_origin:
        engine.fast_forward(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return engine.random(count)
