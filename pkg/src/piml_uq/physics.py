"""Differentiable partial-physics models.

Every model maps a batch of transfer parameters ``T`` with shape
``(n, input_dim)`` to outputs ``(n, output_dim)`` and provides the analytic
Jacobian ``(n, output_dim, input_dim)``.  A 1-D ``t`` is treated as a
single point and the leading axis is dropped from the result.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .nn import as_batch

TEN_PI = 10.0 * np.pi


class PhysicsDomainError(ValueError):
    """Raised when transfer parameters fall outside a model's valid domain."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


# -- Gramacy & Lee ----------------------------------------------------------

def gl_partial(t):
    """Low-fidelity Gramacy & Lee curve ``sin(10 pi t) / (2 t) + (t - 1)^4``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t == 0.0):
        raise PhysicsDomainError("gl_partial is singular at t = 0", t)
    return np.sin(TEN_PI * t) / (2.0 * t) + (t - 1.0) ** 4


def gl_partial_derivative(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t == 0.0):
        raise PhysicsDomainError("gl_partial is singular at t = 0", t)
    a = TEN_PI * t
    return ((TEN_PI * np.cos(a) * 2.0 * t - 2.0 * np.sin(a)) / (4.0 * t * t)
            + 4.0 * (t - 1.0) ** 3)


def gl_ideal_transfer(x):
    """Input warp that turns the partial curve into the full one."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 + 2.0 * np.sin(np.pi * (x - 0.5) / 4.0)


def gl_full(x):
    return gl_partial(gl_ideal_transfer(x))


# -- model contract ---------------------------------------------------------

class PhysicsModel:
    """Base class: subclasses implement ``_evaluate`` and ``_jacobian`` on 2-D batches."""

    name = "physics"
    input_dim = 1
    output_dim = 1

    def in_domain(self, T):
        T = np.asarray(T, dtype=np.float64).reshape(-1, self.input_dim)
        return np.all(np.isfinite(T), axis=1)

    def _check(self, t):
        T, single = as_batch(t, self.input_dim, "t")
        ok = self.in_domain(T)
        if not np.all(ok):
            bad = T[~ok]
            raise PhysicsDomainError(
                f"{self.name}: {len(bad)} transfer vector(s) outside the valid "
                f"domain, first offender {bad[0].tolist()}", bad)
        return T, single

    def evaluate(self, t):
        T, single = self._check(t)
        Y = self._evaluate(T)
        return Y[0] if single else Y

    def jacobian(self, t):
        T, single = self._check(t)
        J = self._jacobian(T)
        return J[0] if single else J

    def evaluate_unchecked(self, T):
        return self._evaluate(np.asarray(T, dtype=np.float64).reshape(-1, self.input_dim))

    def _evaluate(self, T):
        raise NotImplementedError

    def _jacobian(self, T):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError


class GramacyLeePartial(PhysicsModel):
    """Scalar partial-physics model on a closed evaluation interval."""

    name = "gramacy_lee"
    input_dim = 1
    output_dim = 1

    def __init__(self, interval=(0.25, 3.0)):
        lo, hi = float(interval[0]), float(interval[1])
        if not lo < hi or lo <= 0.0 <= hi:
            raise ValueError(f"invalid interval {interval}; it must exclude t = 0")
        self.interval = (lo, hi)

    def in_domain(self, T):
        T = np.asarray(T, dtype=np.float64).reshape(-1, 1)
        lo, hi = self.interval
        return ((T >= lo) & (T <= hi)).all(axis=1)

    def _evaluate(self, T):
        return gl_partial(T)

    def _jacobian(self, T):
        return gl_partial_derivative(T)[:, :, None]

    def to_dict(self):
        return {"type": self.name, "interval": list(self.interval)}


class AffinePhysics(PhysicsModel):
    """``y = A t + b``.  Also serves as the output de-normaliser for pure networks."""

    name = "affine"

    def __init__(self, matrix, offset=None):
        A = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        self.matrix = A
        self.output_dim, self.input_dim = A.shape
        self.offset = (np.zeros(self.output_dim) if offset is None
                       else np.asarray(offset, dtype=np.float64).reshape(self.output_dim))

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim))

    def _evaluate(self, T):
        return T @ self.matrix.T + self.offset

    def _jacobian(self, T):
        return np.broadcast_to(self.matrix, (T.shape[0],) + self.matrix.shape).copy()

    def to_dict(self):
        return {"type": self.name, "matrix": self.matrix.tolist(),
                "offset": self.offset.tolist()}


# -- fixed-wing aircraft ----------------------------------------------------

AERO_INPUTS = ("V_inf", "alpha", "beta", "aileron", "rudder", "throttle")
AERO_OUTPUTS = ("F_x", "F_y", "F_z")


@dataclass(frozen=True)
class AeroState:
    V_inf: float
    alpha: float
    beta: float
    aileron: float
    rudder: float
    throttle: float

    def __post_init__(self):
        if not self.V_inf > 0:
            raise ValueError("V_inf must be positive")
        if not 0.0 <= self.throttle <= 1.0:
            raise ValueError("throttle must lie in [0, 1]")

    def as_array(self):
        return np.array([getattr(self, k) for k in AERO_INPUTS])


@dataclass(frozen=True)
class AeroConstants:
    """Physical constants and stand-in coefficient parameters (SI, radians).

    Defaults describe a 1.2 m span electric RC aircraft.  The coefficient
    model is a linear lift curve, a parabolic drag polar and a linear side
    force; thrust is ``thrust_coeff * throttle`` along body x.
    """
    rho: float = 1.225
    S_ref: float = 0.30
    mass: float = 1.50
    g: float = 9.80665
    lift_zero: float = 0.25
    lift_slope: float = 5.0
    drag_zero: float = 0.03
    induced_drag: float = 0.05
    side_slope: float = -0.30
    rudder_effect: float = 0.12
    thrust_coeff: float = 15.0

    def __post_init__(self):
        for name in ("rho", "S_ref", "mass", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown aero constants: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


def _state_columns(state):
    if isinstance(state, AeroState):
        return [getattr(state, k) for k in AERO_INPUTS]
    S = np.asarray(state, dtype=np.float64)
    return [S[..., k] for k in range(6)]


def standin_coefficients(state, consts: AeroConstants = AeroConstants()):
    """Wind-frame ``(C_L, C_D, C_Y)``; aileron deflection does not enter."""
    V, alpha, beta, _, rudder, _ = _state_columns(state)
    c_l = consts.lift_zero + consts.lift_slope * alpha
    c_d = consts.drag_zero + consts.induced_drag * c_l ** 2
    c_y = consts.side_slope * beta + consts.rudder_effect * rudder
    return c_l, c_d, c_y


def wind_to_body(c_l, c_d, c_y, alpha):
    """Small-sideslip rotation of wind-frame coefficients into body axes."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    c_x = -c_d * ca + c_l * sa
    c_z = -c_d * sa - c_l * ca
    return c_x, c_y, c_z


def dynamic_pressure(V, consts: AeroConstants):
    return 0.5 * consts.rho * np.asarray(V) ** 2


def body_forces(coeffs, state, consts: AeroConstants = AeroConstants()):
    V = _state_columns(state)[0]
    qs = dynamic_pressure(V, consts) * consts.S_ref
    return tuple(qs * c for c in coeffs)


def net_forces(f_aero, state, consts: AeroConstants = AeroConstants()):
    """Aerodynamic + propeller + gravity forces in body axes (z down)."""
    _, alpha, _, _, _, throttle = _state_columns(state)
    w = consts.mass * consts.g
    f_x = f_aero[0] + consts.thrust_coeff * throttle - w * np.sin(alpha)
    f_y = f_aero[1] + 0.0 * alpha
    f_z = f_aero[2] + w * np.cos(alpha)
    return f_x, f_y, f_z


@dataclass(frozen=True)
class AeroPerturbation:
    """Smooth gap between the stand-in physics and the synthetic 'truth'.

    Lift is scaled by ``1 + lift_alpha_scale * alpha``, drag gains a constant
    ``drag_offset`` and thrust is multiplied by ``thrust_scale``.
    """
    lift_alpha_scale: float = -0.8
    drag_offset: float = 0.012
    thrust_scale: float = 0.9

    def to_dict(self):
        return asdict(self)


def aero_pipeline(state, consts: AeroConstants = AeroConstants(),
                  perturbation: AeroPerturbation = None):
    """Net body forces for one state or a ``(..., 6)`` array of states."""
    c_l, c_d, c_y = standin_coefficients(state, consts)
    alpha = _state_columns(state)[1]
    if perturbation is not None:
        c_l = c_l * (1.0 + perturbation.lift_alpha_scale * alpha)
        c_d = consts.drag_zero + consts.induced_drag * c_l ** 2 + perturbation.drag_offset
        consts_eff = _replace(consts, thrust_coeff=consts.thrust_coeff * perturbation.thrust_scale)
    else:
        consts_eff = consts
    coeffs = wind_to_body(c_l, c_d, c_y, alpha)
    f_aero = body_forces(coeffs, state, consts_eff)
    return net_forces(f_aero, state, consts_eff)


def _replace(consts, **changes):
    d = consts.to_dict()
    d.update(changes)
    return AeroConstants(**d)


class FixedWingForces(PhysicsModel):
    """Net body-axis forces from ``(V_inf, alpha, beta, aileron, rudder, throttle)``."""

    name = "fixed_wing"
    input_dim = 6
    output_dim = 3

    def __init__(self, constants: AeroConstants = None):
        self.constants = constants if constants is not None else AeroConstants()

    def in_domain(self, T):
        T = np.asarray(T, dtype=np.float64).reshape(-1, 6)
        return np.all(np.isfinite(T), axis=1) & (T[:, 0] > 0.0)

    def _evaluate(self, T):
        return np.stack(aero_pipeline(T, self.constants), axis=-1)

    def _jacobian(self, T):
        c = self.constants
        V, alpha = T[:, 0], T[:, 1]
        c_l, c_d, c_y = standin_coefficients(T, c)
        c_x, _, c_z = wind_to_body(c_l, c_d, c_y, alpha)
        ca, sa = np.cos(alpha), np.sin(alpha)
        dcl = c.lift_slope
        dcd = 2.0 * c.induced_drag * c_l * dcl
        dcx = -dcd * ca + c_d * sa + dcl * sa + c_l * ca
        dcz = -dcd * sa - c_d * ca - dcl * ca + c_l * sa
        qs = dynamic_pressure(V, c) * c.S_ref
        dqs = c.rho * V * c.S_ref
        w = c.mass * c.g

        J = np.zeros((T.shape[0], 3, 6))
        J[:, 0, 0] = dqs * c_x
        J[:, 1, 0] = dqs * c_y
        J[:, 2, 0] = dqs * c_z
        J[:, 0, 1] = qs * dcx - w * ca
        J[:, 2, 1] = qs * dcz - w * sa
        J[:, 1, 2] = qs * c.side_slope
        J[:, 1, 4] = qs * c.rudder_effect
        J[:, 0, 5] = c.thrust_coeff
        return J

    def to_dict(self):
        return {"type": self.name, "constants": self.constants.to_dict()}


def physics_from_dict(d):
    kind = d["type"]
    if kind == GramacyLeePartial.name:
        return GramacyLeePartial(tuple(d["interval"]))
    if kind == AffinePhysics.name:
        return AffinePhysics(d["matrix"], d["offset"])
    if kind == FixedWingForces.name:
        return FixedWingForces(AeroConstants.from_dict(d["constants"]))
    raise ValueError(f"unknown physics model type {kind!r}")
