"""One-step discretisation maps and terminal-state simulation.

Three first-order weak schemes over a uniform grid ``h = T/n``:

* ``em``: the Euler-Maruyama update ``x + b h + sum_j sigma_j dB^j``.
* ``tmilstein``: truncated Milstein; adds the diffusion cross terms
  ``(1/2) sum_{j1,j2} g[j1][j2] (dB^{j1} dB^{j2} - h 1_{j1=j2})`` with the
  iterated-integral (Levy-area) part dropped.  On commutative models this
  coincides step-for-step with the classical Milstein scheme.
* ``extended``: the drift-expanded scheme.  Runs the same double sum over
  coefficient indices 0..d with the convention ``dB^0 = h`` (and no ``-h``
  compensator on the (0,0) term), which adds ``(1/2)(L_0 b) h^2`` and the
  mixed ``(1/2){(L_0 sigma_j) + (L_j b)} h dB^j`` drift-expansion terms on
  top of truncated Milstein.  Same number of Gaussians per step as the
  other two.

All maps are pure and vectorised over leading axes; batches of paths are
stepped together, and every contraction uses a fixed coordinate order so a
path's trajectory is bit-identical no matter how paths are chunked across
workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import ContractViolation, SdeModel, as_state, l_sigma
from .noise import NoiseSource

SCHEME_TOKENS = ("em", "tmilstein", "extended")


class SchemeKind(Enum):
    EM = "em"
    TRUNCATED_MILSTEIN = "tmilstein"
    EXTENDED_MILSTEIN = "extended"


def parse_scheme(token: str) -> SchemeKind:
    try:
        return SchemeKind(token)
    except ValueError:
        raise ContractViolation(
            "unknown scheme %r; expected one of {%s}" % (token, ", ".join(SCHEME_TOKENS))
        ) from None


@dataclass(frozen=True)
class SimConfig:
    """Grid and starting point of one simulation: n uniform steps to time T."""

    T: float
    n: int
    x0: np.ndarray
    scheme: SchemeKind

    def __post_init__(self):
        if self.T <= 0.0:
            raise ContractViolation("horizon T must be positive")
        if self.n < 1:
            raise ContractViolation("step count n must be a positive integer")

    @property
    def h(self) -> float:
        return self.T / self.n


def _check_step_input(model: SdeModel, x, h: float, dB) -> tuple[np.ndarray, np.ndarray]:
    x = as_state(model, x)
    dB = np.asarray(dB, dtype=float)
    if h <= 0.0:
        raise ContractViolation("step size h must be positive")
    if dB.shape[-1] != model.noise_dim:
        raise ContractViolation(
            "expected %d Brownian increments, got shape %r" % (model.noise_dim, dB.shape)
        )
    return x, dB


def step_em(model: SdeModel, x, h: float, dB) -> np.ndarray:
    """Euler-Maruyama update."""
    x, dB = _check_step_input(model, x, h, dB)
    out = x + model.drift(x) * h
    for j in range(1, model.noise_dim + 1):
        out = out + model.column(j)(x) * dB[..., j - 1 : j]
    return out


def step_truncated_milstein(model: SdeModel, x, h: float, dB) -> np.ndarray:
    """Truncated Milstein update (Levy areas replaced by zero)."""
    x, dB = _check_step_input(model, x, h, dB)
    out = x + model.drift(x) * h
    for j in range(1, model.noise_dim + 1):
        out = out + model.column(j)(x) * dB[..., j - 1 : j]
    for j1 in range(1, model.noise_dim + 1):
        for j2 in range(1, model.noise_dim + 1):
            g = l_sigma(model, j2, j1, x)  # g[j1][j2]: sigma_j1 along sigma_j2
            w = dB[..., j1 - 1] * dB[..., j2 - 1]
            if j1 == j2:
                w = w - h
            out = out + 0.5 * g * w[..., None]
    return out


def step_extended_milstein(model: SdeModel, x, h: float, dB) -> np.ndarray:
    """Drift-expanded Milstein update, with the dB^0 = h convention."""
    x, dB = _check_step_input(model, x, h, dB)
    out = x + model.drift(x) * h
    for j in range(1, model.noise_dim + 1):
        out = out + model.column(j)(x) * dB[..., j - 1 : j]
    for j1 in range(model.noise_dim + 1):
        b1 = h if j1 == 0 else dB[..., j1 - 1]
        for j2 in range(model.noise_dim + 1):
            b2 = h if j2 == 0 else dB[..., j2 - 1]
            w = b1 * b2
            if j1 == j2 and j1 != 0:
                w = w - h
            ls = l_sigma(model, j1, j2, x)
            out = out + 0.5 * ls * np.asarray(w)[..., None]
    return out


_STEP_FUNCTIONS = {
    SchemeKind.EM: step_em,
    SchemeKind.TRUNCATED_MILSTEIN: step_truncated_milstein,
    SchemeKind.EXTENDED_MILSTEIN: step_extended_milstein,
}


def one_step(model: SdeModel, scheme: SchemeKind, x, h: float, dB) -> np.ndarray:
    return _STEP_FUNCTIONS[scheme](model, x, h, dB)


@dataclass(frozen=True)
class BatchStats:
    """Bookkeeping for a simulated batch of paths."""

    paths: int
    invalid_paths: int
    negative_coordinate_steps: int

    def merge(self, other: "BatchStats") -> "BatchStats":
        return BatchStats(
            self.paths + other.paths,
            self.invalid_paths + other.invalid_paths,
            self.negative_coordinate_steps + other.negative_coordinate_steps,
        )


EMPTY_STATS = BatchStats(0, 0, 0)


def simulate_terminal(
    model: SdeModel, cfg: SimConfig, noise: NoiseSource, path_index: int
) -> np.ndarray:
    """Terminal state of one path; NaN-filled if the path left float range.

    The result is a pure function of (noise seed, replication, path_index,
    cfg), independent of worker scheduling or batch composition.
    """
    terminals, _ = simulate_terminal_batch(model, cfg, noise, path_index, 1)
    return terminals[0]


def simulate_terminal_batch(
    model: SdeModel,
    cfg: SimConfig,
    noise: NoiseSource,
    path_start: int,
    count: int,
) -> tuple[np.ndarray, BatchStats]:
    """Terminal states of paths [path_start, path_start + count).

    Returns an array of shape (count, N); paths that became non-finite are
    NaN rows, counted in the stats rather than aborting the batch.  Negative
    excursions of coordinates the model clamps internally (e.g. a variance)
    are tallied per (path, step).
    """
    x0 = as_state(model, cfg.x0)
    if x0.ndim != 1:
        raise ContractViolation("x0 must be a single state vector")
    n, d, h = cfg.n, model.noise_dim, cfg.h
    noise.require_budget(n, d)
    step = _STEP_FUNCTIONS[cfg.scheme]
    x = np.tile(x0, (count, 1))
    per_step = noise.kind.value == "pseudo"
    block = None if per_step else noise.increments_block(path_start, count, n, d, h)
    negative = 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for k in range(n):
            dB = noise.step_increments(path_start, count, k, d, h) if per_step else block[:, k, :]
            x = step(model, x, h, dB)
            for c in model.nonnegative_coordinates:
                negative += int(np.sum(x[:, c] < 0.0))
    finite = np.isfinite(x).all(axis=1)
    invalid = int(count - np.sum(finite))
    if invalid:
        x[~finite] = np.nan
    return x, BatchStats(count, invalid, negative)
