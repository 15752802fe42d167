"""Preset SDE models with analytic coefficient derivatives.

Four models cover the experiment suite:

* ``gbm``: geometric Brownian motion, the 1-d workhorse for operator and
  scheme unit oracles.
* ``bs-asian``: Black-Scholes asset plus its running time-integral
  (hypo-elliptic, commutative since d = 1); prices arithmetic Asian calls.
* ``heston-asian``: Heston stochastic volatility plus the running asset
  integral (non-commutative, d = 2); prices Asian digitals.  Parameters
  must satisfy the Feller condition 2*alpha*theta > nu**2; the discretised
  variance may still dip below zero, so every coefficient evaluates
  sqrt(max(v, 0)) and treats derivatives as zero where the clamp is active.
* ``small-diffusion``: a two-block linear system whose single noise column
  is scaled by eps, for studying how the schemes' bias gap behaves as the
  diffusion shrinks.  The smooth coordinate integrates the rough one, so
  the noise reaches it only through the drift (hypo-elliptic with one
  bracket level).

All derivatives are hand-written; ``check_derivatives`` cross-checks them
against finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ContractViolation, SdeModel

PRESET_IDS = ("gbm", "bs-asian", "heston-asian", "small-diffusion")


@dataclass(frozen=True)
class PresetModel:
    """A ready-to-simulate model plus the experiment defaults that go with it."""

    id: str
    model: SdeModel
    params: dict
    x0: np.ndarray
    horizon: float
    average_coordinate: int | None
    discount: float
    coupon: float
    admissible_low: np.ndarray
    admissible_high: np.ndarray

    def sample_points(self, count: int, seed: int = 0) -> np.ndarray:
        """Pseudo-random states inside the documented admissible box."""
        rng = np.random.default_rng(seed)
        u = rng.random((count, self.model.state_dim))
        return self.admissible_low + u * (self.admissible_high - self.admissible_low)

    def params_key(self) -> str:
        return ",".join("%s=%r" % (k, self.params[k]) for k in sorted(self.params))


def _const_matrix(entries) -> np.ndarray:
    return np.asarray(entries, dtype=float)


def _broadcast_const(x: np.ndarray, const: np.ndarray) -> np.ndarray:
    batch = x.shape[:-1]
    return np.broadcast_to(const, batch + const.shape).copy() if batch else const.copy()


def _zeros(x: np.ndarray, *dims: int) -> np.ndarray:
    return np.zeros(x.shape[:-1] + dims)


def _make_constant_evaluator(const: np.ndarray):
    return lambda x: _broadcast_const(np.asarray(x, dtype=float), const)


def _gbm(params: dict) -> PresetModel:
    r, sigma, s0 = params["r"], params["sigma"], params["s0"]

    model = SdeModel(
        state_dim=1,
        noise_dim=1,
        drift=lambda x: r * x,
        diffusion=(lambda x: sigma * x,),
        drift_jacobian=_make_constant_evaluator(_const_matrix([[r]])),
        diffusion_jacobians=(_make_constant_evaluator(_const_matrix([[sigma]])),),
        drift_hessian=lambda x: _zeros(x, 1, 1, 1),
        diffusion_hessians=(lambda x: _zeros(x, 1, 1, 1),),
        label="gbm",
    )
    return PresetModel(
        id="gbm",
        model=model,
        params=params,
        x0=np.array([s0]),
        horizon=params["T"],
        average_coordinate=None,
        discount=math.exp(-r * params["T"]),
        coupon=params["coupon"],
        admissible_low=np.array([1.0]),
        admissible_high=np.array([200.0]),
    )


def _bs_asian(params: dict) -> PresetModel:
    r, sigma = params["r"], params["sigma"]
    s0, a0 = params["s0"], params["a0"]

    def drift(x):
        s = x[..., 0]
        return np.stack([r * s, s], axis=-1)

    def diff1(x):
        s = x[..., 0]
        return np.stack([sigma * s, np.zeros_like(s)], axis=-1)

    model = SdeModel(
        state_dim=2,
        noise_dim=1,
        drift=drift,
        diffusion=(diff1,),
        drift_jacobian=_make_constant_evaluator(_const_matrix([[r, 0.0], [1.0, 0.0]])),
        diffusion_jacobians=(
            _make_constant_evaluator(_const_matrix([[sigma, 0.0], [0.0, 0.0]])),
        ),
        drift_hessian=lambda x: _zeros(x, 2, 2, 2),
        diffusion_hessians=(lambda x: _zeros(x, 2, 2, 2),),
        label="bs-asian",
    )
    return PresetModel(
        id="bs-asian",
        model=model,
        params=params,
        x0=np.array([s0, a0]),
        horizon=params["T"],
        average_coordinate=1,
        discount=math.exp(-r * params["T"]),
        coupon=params["coupon"],
        admissible_low=np.array([1.0, 0.0]),
        admissible_high=np.array([200.0, 200.0]),
    )


def _sqrt_pos(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(v, 0.0))


def _pow_pos(v: np.ndarray, p: float) -> np.ndarray:
    # v**p on the positive part, zero where the clamp is active.
    safe = np.where(v > 0.0, v, 1.0)
    return np.where(v > 0.0, safe**p, 0.0)


def _heston_asian(params: dict) -> PresetModel:
    alpha, theta, nu, rho = params["alpha"], params["theta"], params["nu"], params["rho"]
    if not -1.0 <= rho <= 1.0:
        raise ContractViolation("correlation rho must lie in [-1, 1]")
    if 2.0 * alpha * theta <= nu * nu:
        raise ContractViolation(
            "Feller condition violated: need 2*alpha*theta > nu**2, got "
            "2*%g*%g = %g <= %g" % (alpha, theta, 2.0 * alpha * theta, nu * nu)
        )
    rho_bar = math.sqrt(1.0 - rho * rho)
    s0, v0, a0 = params["s0"], params["v0"], params["a0"]

    def drift(x):
        s, v = x[..., 0], x[..., 1]
        return np.stack([np.zeros_like(s), alpha * (theta - v), s], axis=-1)

    def diff1(x):
        s, v = x[..., 0], x[..., 1]
        root = _sqrt_pos(v)
        return np.stack([root * s, nu * rho * root, np.zeros_like(s)], axis=-1)

    def diff2(x):
        s, v = x[..., 0], x[..., 1]
        root = _sqrt_pos(v)
        return np.stack([np.zeros_like(s), nu * rho_bar * root, np.zeros_like(s)], axis=-1)

    drift_jac_const = _const_matrix(
        [[0.0, 0.0, 0.0], [0.0, -alpha, 0.0], [1.0, 0.0, 0.0]]
    )

    def diff1_jac(x):
        s, v = x[..., 0], x[..., 1]
        root = _sqrt_pos(v)
        half_inv = 0.5 * _pow_pos(v, -0.5)
        out = _zeros(x, 3, 3)
        out[..., 0, 0] = root
        out[..., 0, 1] = s * half_inv
        out[..., 1, 1] = nu * rho * half_inv
        return out

    def diff2_jac(x):
        v = x[..., 1]
        out = _zeros(x, 3, 3)
        out[..., 1, 1] = nu * rho_bar * 0.5 * _pow_pos(v, -0.5)
        return out

    def diff1_hess(x):
        s, v = x[..., 0], x[..., 1]
        half_inv = 0.5 * _pow_pos(v, -0.5)
        quarter_inv3 = 0.25 * _pow_pos(v, -1.5)
        out = _zeros(x, 3, 3, 3)
        out[..., 0, 0, 1] = half_inv
        out[..., 0, 1, 0] = half_inv
        out[..., 0, 1, 1] = -s * quarter_inv3
        out[..., 1, 1, 1] = -nu * rho * quarter_inv3
        return out

    def diff2_hess(x):
        v = x[..., 1]
        out = _zeros(x, 3, 3, 3)
        out[..., 1, 1, 1] = -nu * rho_bar * 0.25 * _pow_pos(v, -1.5)
        return out

    model = SdeModel(
        state_dim=3,
        noise_dim=2,
        drift=drift,
        diffusion=(diff1, diff2),
        drift_jacobian=_make_constant_evaluator(drift_jac_const),
        diffusion_jacobians=(diff1_jac, diff2_jac),
        drift_hessian=lambda x: _zeros(x, 3, 3, 3),
        diffusion_hessians=(diff1_hess, diff2_hess),
        label="heston-asian",
        nonnegative_coordinates=(1,),
    )
    return PresetModel(
        id="heston-asian",
        model=model,
        params=params,
        x0=np.array([s0, v0, a0]),
        horizon=params["T"],
        average_coordinate=2,
        discount=1.0,
        coupon=params["coupon"],
        admissible_low=np.array([1.0, 0.01, 0.0]),
        admissible_high=np.array([200.0, 0.25, 200.0]),
    )


def _small_diffusion(params: dict) -> PresetModel:
    eps = params["eps"]
    if not 0.0 < eps < 1.0:
        raise ContractViolation("eps must lie in (0, 1)")
    r0, s0 = params["r0"], params["s0"]

    def drift(x):
        rough = x[..., 0]
        return np.stack([-rough, rough], axis=-1)

    model = SdeModel(
        state_dim=2,
        noise_dim=1,
        drift=drift,
        diffusion=(_make_constant_evaluator(_const_matrix([eps, 0.0])),),
        drift_jacobian=_make_constant_evaluator(
            _const_matrix([[-1.0, 0.0], [1.0, 0.0]])
        ),
        diffusion_jacobians=(lambda x: _zeros(x, 2, 2),),
        drift_hessian=lambda x: _zeros(x, 2, 2, 2),
        diffusion_hessians=(lambda x: _zeros(x, 2, 2, 2),),
        label="small-diffusion",
    )
    return PresetModel(
        id="small-diffusion",
        model=model,
        params=params,
        x0=np.array([r0, s0]),
        horizon=params["T"],
        average_coordinate=1,
        discount=1.0,
        coupon=params["coupon"],
        admissible_low=np.array([0.1, 0.0]),
        admissible_high=np.array([2.0, 2.0]),
    )


_DEFAULTS = {
    "gbm": {"r": 0.1, "sigma": 0.2, "s0": 100.0, "T": 1.0, "coupon": 1.0},
    "bs-asian": {"r": 0.1, "sigma": 0.4, "s0": 100.0, "a0": 0.0, "T": 1.0, "coupon": 1.0},
    "heston-asian": {
        "alpha": 2.0,
        "theta": 0.09,
        "nu": 0.1,
        "rho": 0.7,
        "s0": 100.0,
        "v0": 0.09,
        "a0": 0.0,
        "T": 1.0,
        "coupon": 100.0,
    },
    "small-diffusion": {"eps": 0.2, "r0": 1.0, "s0": 0.0, "T": 1.0, "coupon": 1.0},
}

_BUILDERS = {
    "gbm": _gbm,
    "bs-asian": _bs_asian,
    "heston-asian": _heston_asian,
    "small-diffusion": _small_diffusion,
}


def preset(preset_id: str, **overrides) -> PresetModel:
    """Build a preset model, optionally overriding its default parameters."""
    if preset_id not in _DEFAULTS:
        raise ContractViolation(
            "unknown preset %r; available: %s" % (preset_id, ", ".join(PRESET_IDS))
        )
    params = dict(_DEFAULTS[preset_id])
    for key, value in overrides.items():
        if key not in params:
            raise ContractViolation(
                "unknown parameter %r for preset %r (accepts %s)"
                % (key, preset_id, ", ".join(sorted(params)))
            )
        params[key] = float(value)
    return _BUILDERS[preset_id](params)
