"""Coefficient calculus for multi-dimensional Ito SDEs.

An SDE ``dX = b(X) dt + sum_j sigma_j(X) dB^j`` on R^N driven by a
d-dimensional Brownian motion is described by an :class:`SdeModel` holding
the drift, the diffusion columns and their first/second derivatives.  On
top of that, this module provides the differential operators needed by the
one-step schemes and the leading-error diagnostics: directional derivatives
of one coefficient along another, generator applications, Lie brackets, the
Stratonovich-corrected drift, a commutativity check, and the coefficient
tensors of the three additive pieces of the leading weak-error density.

Conventions
-----------
* The drift doubles as column 0 of the coefficient family (``sigma_0 = b``),
  so operators indexed by ``j in 0..d`` treat ``j = 0`` as the drift and the
  generator.
* ``l_sigma(model, j1, j2, x)`` differentiates column ``j2`` along column
  ``j1``.  The classical Milstein coefficient ``g[j1][j2]`` (differentiate
  ``sigma_j1`` along ``sigma_j2``) is therefore ``l_sigma(model, j2, j1, x)``.
  Do not swap these silently; tests pin both orientations.
* Evaluators are vectorised: states have shape ``(..., N)`` and derivative
  arrays carry the component axes last, e.g. Jacobians are ``(..., N, N)``
  with entry ``[i, l] = d sigma^i / d x_l`` and Hessians ``(..., N, N, N)``
  with ``[i, l, m] = d^2 sigma^i / (d x_l d x_m)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Evaluator = Callable[[np.ndarray], np.ndarray]

_EPS_FIRST = float(np.finfo(float).eps) ** (1.0 / 3.0)
_EPS_SECOND = float(np.finfo(float).eps) ** (1.0 / 4.0)


class ContractViolation(ValueError):
    """An argument violates a documented precondition."""


@dataclass(frozen=True)
class SdeModel:
    """An autonomous Ito SDE with analytic coefficient derivatives.

    Attributes:
        state_dim: dimension N of the state space.
        noise_dim: dimension d of the driving Brownian motion.
        drift: ``x -> b(x)``, shape (..., N) -> (..., N).
        diffusion: one evaluator per noise coordinate, ``x -> sigma_j(x)``.
        drift_jacobian: ``x -> (..., N, N)`` with ``[i, l] = d b^i / d x_l``.
        diffusion_jacobians: per-column Jacobians, same layout.
        drift_hessian: ``x -> (..., N, N, N)``; needed by generator
            applications to the drift itself (may be None if never used).
        diffusion_hessians: per-column Hessians; needed only by generator
            applications to diffusion columns.
        label: identifier used in reports and cache keys.
        nonnegative_coordinates: state coordinates whose negative excursions
            the simulator counts (coefficients are expected to clamp them
            internally, e.g. a variance under a square root).

    All evaluators must return finite values inside the model's documented
    admissible region and must broadcast over leading axes.
    """

    state_dim: int
    noise_dim: int
    drift: Evaluator
    diffusion: tuple[Evaluator, ...]
    drift_jacobian: Evaluator
    diffusion_jacobians: tuple[Evaluator, ...]
    drift_hessian: Evaluator | None = None
    diffusion_hessians: tuple[Evaluator, ...] | None = None
    label: str = "sde"
    nonnegative_coordinates: tuple[int, ...] = ()

    def __post_init__(self):
        if self.state_dim < 1 or self.noise_dim < 1:
            raise ContractViolation("state_dim and noise_dim must be positive")
        if len(self.diffusion) != self.noise_dim:
            raise ContractViolation(
                "expected %d diffusion columns, got %d"
                % (self.noise_dim, len(self.diffusion))
            )
        if len(self.diffusion_jacobians) != self.noise_dim:
            raise ContractViolation("one Jacobian per diffusion column required")
        if self.diffusion_hessians is not None and len(self.diffusion_hessians) != self.noise_dim:
            raise ContractViolation("one Hessian per diffusion column required")

    def column(self, j: int) -> Evaluator:
        """Coefficient column j, with column 0 being the drift."""
        self._check_index(j)
        return self.drift if j == 0 else self.diffusion[j - 1]

    def jacobian(self, j: int) -> Evaluator:
        self._check_index(j)
        return self.drift_jacobian if j == 0 else self.diffusion_jacobians[j - 1]

    def hessian(self, j: int) -> Evaluator:
        self._check_index(j)
        if j == 0:
            if self.drift_hessian is None:
                raise ContractViolation(
                    "model %r has no drift Hessian; required for generator "
                    "applications to the drift" % self.label
                )
            return self.drift_hessian
        if self.diffusion_hessians is None:
            raise ContractViolation(
                "model %r has no diffusion Hessians; required for generator "
                "applications to diffusion columns" % self.label
            )
        return self.diffusion_hessians[j - 1]

    def _check_index(self, j: int, lowest: int = 0) -> None:
        if not lowest <= j <= self.noise_dim:
            raise ContractViolation(
                "coefficient index %d out of range %d..%d" % (j, lowest, self.noise_dim)
            )


@dataclass(frozen=True)
class ScalarField:
    """A scalar test function with its derivatives, for operator application."""

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass(frozen=True)
class CommutativityReport:
    """Outcome of sampling the Milstein cross-coefficient symmetry defect."""

    commutative: bool
    max_defect: float
    witness_point: np.ndarray
    sample_count: int
    tolerance: float


def as_state(model: SdeModel, x) -> np.ndarray:
    """Coerce x to a float array of states, checking the trailing dimension."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != model.state_dim:
        raise ContractViolation(
            "state shape %r incompatible with model of dimension %d"
            % (np.shape(x), model.state_dim)
        )
    return arr


def _directional(jac: np.ndarray, col: np.ndarray) -> np.ndarray:
    # out[..., i] = sum_l jac[..., i, l] * col[..., l], accumulated in fixed
    # coordinate order so batched and per-path evaluations agree bitwise.
    n = jac.shape[-1]
    out = jac[..., 0] * col[..., 0:1]
    for l in range(1, n):
        out = out + jac[..., l] * col[..., l : l + 1]
    return out


def _contract_hessian(hess: np.ndarray, a: np.ndarray) -> np.ndarray:
    # out[..., i] = sum_{l,m} a[..., l, m] * hess[..., i, l, m], fixed order.
    n = hess.shape[-1]
    out = None
    for l in range(n):
        for m in range(n):
            term = hess[..., l, m] * a[..., l, m][..., None]
            out = term if out is None else out + term
    return out


def diffusion_quadratic(model: SdeModel, x) -> np.ndarray:
    """The matrix a = sigma sigma^T, shape (..., N, N)."""
    x = as_state(model, x)
    out = None
    for j in range(1, model.noise_dim + 1):
        col = model.column(j)(x)
        term = col[..., :, None] * col[..., None, :]
        out = term if out is None else out + term
    return out


def apply_L(model: SdeModel, j: int, phi: ScalarField, x) -> np.ndarray:
    """Apply coefficient operator j to a scalar field at x.

    For j >= 1 this is the first-order operator sum_i sigma_j^i(x) d_i phi(x);
    for j = 0 it is the full generator b . grad phi + (1/2) a : hess phi, which
    requires the field's Hessian.
    """
    x = as_state(model, x)
    model._check_index(j)
    grad = np.asarray(phi.gradient(x), dtype=float)
    if grad.shape[-1] != model.state_dim:
        raise ContractViolation("field gradient has wrong dimension")
    col = model.column(j)(x)
    out = col[..., 0] * grad[..., 0]
    for i in range(1, model.state_dim):
        out = out + col[..., i] * grad[..., i]
    if j == 0:
        if phi.hessian is None:
            raise ContractViolation(
                "generator application (j=0) requires the field's Hessian"
            )
        hess = np.asarray(phi.hessian(x), dtype=float)
        a = diffusion_quadratic(model, x)
        second = None
        for i1 in range(model.state_dim):
            for i2 in range(model.state_dim):
                term = a[..., i1, i2] * hess[..., i1, i2]
                second = term if second is None else second + term
        out = out + 0.5 * second
    return out


def l_sigma(model: SdeModel, j1: int, j2: int, x) -> np.ndarray:
    """Apply operator j1 componentwise to coefficient column j2.

    Returns the vector with components ``(L_{j1} sigma_{j2})^i(x)``: for
    j1 >= 1 the directional derivative of column j2 along column j1, and for
    j1 = 0 the generator applied to each component of column j2 (first plus
    second-order term), with ``sigma_0 = b`` throughout.
    """
    x = as_state(model, x)
    model._check_index(j1)
    model._check_index(j2)
    jac = model.jacobian(j2)(x)
    col = model.column(j1)(x)
    out = _directional(jac, col)
    if j1 == 0:
        hess = model.hessian(j2)(x)
        a = diffusion_quadratic(model, x)
        out = out + 0.5 * _contract_hessian(hess, a)
    return out


def milstein_cross_coefficient(model: SdeModel, j1: int, j2: int, x) -> np.ndarray:
    """The classical Milstein coefficient g[j1][j2] = derivative of
    sigma_j1 along sigma_j2 (note the index order relative to l_sigma)."""
    model._check_index(j1, lowest=1)
    model._check_index(j2, lowest=1)
    return l_sigma(model, j2, j1, x)


def lie_bracket(model: SdeModel, j1: int, j2: int, x) -> np.ndarray:
    """Lie bracket of diffusion vector fields j1, j2 (both >= 1).

    Componentwise ``[L_{j1}, L_{j2}]^i = (L_{j1} sigma_{j2})^i
    - (L_{j2} sigma_{j1})^i``; antisymmetric in (j1, j2).
    """
    model._check_index(j1, lowest=1)
    model._check_index(j2, lowest=1)
    return l_sigma(model, j1, j2, x) - l_sigma(model, j2, j1, x)


def stratonovich_drift(model: SdeModel, x) -> np.ndarray:
    """Drift of the same SDE written in Stratonovich form:
    b^i - (1/2) sum_k sum_l sigma_k^l d_l sigma_k^i."""
    x = as_state(model, x)
    out = model.drift(x)
    for k in range(1, model.noise_dim + 1):
        col = model.column(k)(x)
        jac = model.jacobian(k)(x)
        out = out - 0.5 * _directional(jac, col)
    return out


def commutativity_check(
    model: SdeModel,
    sample_points: Sequence,
    tolerance: float | None = None,
) -> CommutativityReport:
    """Sample the symmetry defect g[j1][j2] - g[j2][j1] over points.

    The defect vanishes identically exactly when the diffusion vector fields
    commute, which is the condition under which the classical Milstein scheme
    needs no iterated-integral simulation.  The verdict compares the largest
    sampled componentwise defect against ``tolerance``; when omitted the
    tolerance is 1e-10 * (1 + largest sampled diffusion magnitude), a
    floating-point-safe stand-in for the exact algebraic condition.
    """
    points = [as_state(model, p) for p in sample_points]
    if not points:
        raise ContractViolation("commutativity_check needs at least one sample point")
    d = model.noise_dim
    if d == 1:
        return CommutativityReport(
            commutative=True,
            max_defect=0.0,
            witness_point=points[0],
            sample_count=len(points),
            tolerance=0.0 if tolerance is None else tolerance,
        )
    max_defect = 0.0
    witness = points[0]
    scale = 0.0
    for p in points:
        for j in range(1, d + 1):
            scale = max(scale, float(np.max(np.abs(model.column(j)(p)))))
        for j1 in range(1, d + 1):
            for j2 in range(j1 + 1, d + 1):
                defect = milstein_cross_coefficient(
                    model, j1, j2, p
                ) - milstein_cross_coefficient(model, j2, j1, p)
                worst = float(np.max(np.abs(defect)))
                if worst > max_defect:
                    max_defect = worst
                    witness = p
    if tolerance is None:
        tolerance = 1e-10 * (1.0 + scale)
    return CommutativityReport(
        commutative=max_defect <= tolerance,
        max_defect=max_defect,
        witness_point=witness,
        sample_count=len(points),
        tolerance=tolerance,
    )


def phi1_coefficient_fields(model: SdeModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient fields of the first leading-error piece.

    Returns ``(v, M)`` where ``v^i = (1/2) (L_0 b)^i`` multiplies first
    derivatives of the value function and ``M^{ij} = (1/2) sum_m sigma_m^i
    {(L_m b)^j + (L_0 sigma_m)^j}`` multiplies second derivatives.
    """
    x = as_state(model, x)
    v = 0.5 * l_sigma(model, 0, 0, x)
    m_out = None
    for m in range(1, model.noise_dim + 1):
        col = model.column(m)(x)
        w = l_sigma(model, m, 0, x) + l_sigma(model, 0, m, x)
        term = 0.5 * col[..., :, None] * w[..., None, :]
        m_out = term if m_out is None else m_out + term
    return v, m_out


def phi2_coefficient_fields(model: SdeModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient fields of the second leading-error piece.

    Returns ``(T, M)`` with ``T^{ijk} = (1/2) sum_{m1,m2} (L_{m1}
    sigma_{m2})^i sigma_{m1}^j sigma_{m2}^k`` (third derivatives) and
    ``M^{ij} = (1/8) sum_{m1,m2} (L_{m1} sigma_{m2})^i {(L_{m1}
    sigma_{m2})^j + (L_{m2} sigma_{m1})^j}`` (second derivatives).
    """
    x = as_state(model, x)
    t_out = None
    m_out = None
    for m1 in range(1, model.noise_dim + 1):
        col1 = model.column(m1)(x)
        for m2 in range(1, model.noise_dim + 1):
            col2 = model.column(m2)(x)
            ls12 = l_sigma(model, m1, m2, x)
            ls21 = l_sigma(model, m2, m1, x)
            t_term = (
                0.5
                * ls12[..., :, None, None]
                * col1[..., None, :, None]
                * col2[..., None, None, :]
            )
            m_term = 0.125 * ls12[..., :, None] * (ls12 + ls21)[..., None, :]
            t_out = t_term if t_out is None else t_out + t_term
            m_out = m_term if m_out is None else m_out + m_term
    return t_out, m_out


def phi3_coefficient_tensor(model: SdeModel, x) -> np.ndarray:
    """Coefficient tensor of the bracket-driven leading-error piece.

    ``C^{ij} = (1/8) sum_{m1,m2} (L_{m1} sigma_{m2})^i [L_{m1}, L_{m2}]^j``;
    identically zero on commutative models.  This is the only piece whose
    expectation survives in the drift-expanded scheme's leading weak error.
    """
    x = as_state(model, x)
    out = None
    for m1 in range(1, model.noise_dim + 1):
        for m2 in range(1, model.noise_dim + 1):
            ls12 = l_sigma(model, m1, m2, x)
            ls21 = l_sigma(model, m2, m1, x)
            term = 0.125 * ls12[..., :, None] * (ls12 - ls21)[..., None, :]
            out = term if out is None else out + term
    return out


def _fd_jacobian(fn: Evaluator, x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    cols = []
    for l in range(n):
        h = np.asarray(_EPS_FIRST * np.maximum(1.0, np.abs(x[..., l])))
        xp = x.copy()
        xm = x.copy()
        xp[..., l] = xp[..., l] + h
        xm[..., l] = xm[..., l] - h
        cols.append((fn(xp) - fn(xm)) / (2.0 * h)[..., None])
    return np.stack(cols, axis=-1)


def _fd_hessian(fn: Evaluator, x: np.ndarray) -> np.ndarray:
    # Second central differences use eps**(1/4) steps (balancing truncation
    # against the eps/h^2 roundoff floor) proportional to |x_l|, so the check
    # stays sharp near coordinates with steep higher derivatives (e.g. a
    # variance under a square root).
    n = x.shape[-1]
    f0 = fn(x)
    steps = [
        np.asarray(_EPS_SECOND * np.maximum(0.01, np.abs(x[..., l]))) for l in range(n)
    ]
    out = np.zeros(f0.shape + (n, n))
    for l in range(n):
        hl = steps[l]
        for m in range(l, n):
            if l == m:
                xp = x.copy()
                xm = x.copy()
                xp[..., l] = xp[..., l] + hl
                xm[..., l] = xm[..., l] - hl
                val = (fn(xp) - 2.0 * f0 + fn(xm)) / (hl * hl)[..., None]
            else:
                hm = steps[m]
                xpp = x.copy()
                xpm = x.copy()
                xmp = x.copy()
                xmm = x.copy()
                for arr, sl, sm in (
                    (xpp, +1, +1),
                    (xpm, +1, -1),
                    (xmp, -1, +1),
                    (xmm, -1, -1),
                ):
                    arr[..., l] = arr[..., l] + sl * hl
                    arr[..., m] = arr[..., m] + sm * hm
                val = (fn(xpp) - fn(xpm) - fn(xmp) + fn(xmm)) / (4.0 * hl * hm)[
                    ..., None
                ]
            out[..., l, m] = val
            out[..., m, l] = val
    return out


def model_from_functions(
    state_dim: int,
    noise_dim: int,
    drift: Evaluator,
    diffusion: Sequence[Evaluator],
    label: str = "adhoc",
    nonnegative_coordinates: tuple[int, ...] = (),
) -> SdeModel:
    """Build a model from value functions only, with finite-difference
    derivatives.

    Convenience for ad-hoc models; preset models wire analytic derivatives
    instead so that scheme accuracy is not polluted by differentiation error.
    """
    diffusion = tuple(diffusion)

    def jac_of(fn):
        return lambda x: _fd_jacobian(fn, np.asarray(x, dtype=float))

    def hess_of(fn):
        return lambda x: _fd_hessian(fn, np.asarray(x, dtype=float))

    return SdeModel(
        state_dim=state_dim,
        noise_dim=noise_dim,
        drift=drift,
        diffusion=diffusion,
        drift_jacobian=jac_of(drift),
        diffusion_jacobians=tuple(jac_of(fn) for fn in diffusion),
        drift_hessian=hess_of(drift),
        diffusion_hessians=tuple(hess_of(fn) for fn in diffusion),
        label=label,
        nonnegative_coordinates=nonnegative_coordinates,
    )


def check_derivatives(model: SdeModel, points: Sequence, include_hessians: bool = True) -> float:
    """Largest relative mismatch between supplied derivatives and central
    finite differences of the value functions over the given points.

    First derivatives use step eps**(1/3) * max(1, |x_l|); second derivatives
    use eps**(1/4).  Mismatch is measured relative to max(1, |finite diff|).
    """
    worst = 0.0
    for p in points:
        x = as_state(model, p)
        for j in range(model.noise_dim + 1):
            fn = model.column(j)
            jac = model.jacobian(j)(x)
            fd = _fd_jacobian(fn, x)
            worst = max(worst, float(np.max(np.abs(jac - fd) / np.maximum(1.0, np.abs(fd)))))
            if include_hessians:
                try:
                    hess = model.hessian(j)(x)
                except ContractViolation:
                    continue
                fd2 = _fd_hessian(fn, x)
                worst = max(
                    worst, float(np.max(np.abs(hess - fd2) / np.maximum(1.0, np.abs(fd2))))
                )
    return worst
