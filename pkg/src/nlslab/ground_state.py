"""Radial ground state of -ΔQ + Q = |Q|^{4/d} Q on R^d, d = 1, 2, 3.

The profile is found by shooting on Q(0) with bisection.  Trajectories that
cross zero overshoot, trajectories whose slope turns positive undershoot.
Once the bracket has collapsed to machine precision the outward trajectory is
trusted up to the radius where the two bracket ends start to separate; beyond
that the solution is continued by the decaying solution r^{-ν} K_ν(r),
ν = (d-2)/2, of the linearised equation ΔQ = Q.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.integrate import simpson, solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.special import iv, kv

__all__ = [
    "GroundState",
    "GroundStateError",
    "solve_ground_state",
    "evaluate_Q",
    "evaluate_Q_gradient",
    "sphere_area",
]

_BRACKET = (0.1, 20.0)
_R_START = 1e-3
_R_LIMIT = 50.0
_Q_FLOOR = 1e-14
# bracket ends may disagree by this relative amount before the tail takes over
_MATCH_RTOL = 1e-9


class GroundStateError(RuntimeError):
    pass


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1} (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def _rhs(d: int):
    p = 4.0 / d

    def f(r, y):
        q, qp = y
        return [qp, -(d - 1) / r * qp + q - abs(q) ** p * q]

    return f


def _series_start(q0: float, d: int, r0: float) -> list[float]:
    # Q = q0 + b r^2 + c r^4 near the origin
    p = 4.0 / d
    b = (q0 - q0 ** (1 + p)) / (2 * d)
    c = (1 - (1 + p) * q0**p) * b / (4 * (d + 2))
    return [q0 + b * r0**2 + c * r0**4, 2 * b * r0 + 4 * c * r0**3]


def _shoot(q0: float, d: int, dense: bool = False):
    """Integrate outward; returns (+1 overshoot | -1 undershoot | 0, solution)."""

    def crosses_zero(r, y):
        return y[0]

    def turns_up(r, y):
        return y[1]

    crosses_zero.terminal = True
    crosses_zero.direction = -1
    turns_up.terminal = True
    turns_up.direction = 1
    sol = solve_ivp(
        _rhs(d),
        (_R_START, _R_LIMIT),
        _series_start(q0, d, _R_START),
        method="DOP853",
        rtol=1e-13,
        atol=1e-300,
        events=[crosses_zero, turns_up],
        dense_output=dense,
    )
    if sol.t_events[0].size:
        return 1, sol
    if sol.t_events[1].size:
        return -1, sol
    return 0, sol


def _decaying(r, d):
    nu = (d - 2) / 2
    return r**-nu * kv(nu, r), -(r**-nu) * kv(nu + 1, r)


def _growing(r, d):
    nu = (d - 2) / 2
    return r**-nu * iv(nu, r), r**-nu * iv(nu + 1, r)


@dataclass(frozen=True, eq=False)
class GroundState:
    """Tabulated ground state with cubic Hermite interpolation.

    ``table`` has columns (r, Q, Q'). Q'' is not stored; it follows from the
    equation itself.
    """

    dimension: int
    initial_height: float
    table: np.ndarray
    l2_norm: float
    grad_l2_norm: float
    decay_constants: tuple[float, float]
    gradient_decay_constants: tuple[float, float]
    meta: dict = field(default_factory=dict)

    @property
    def r_max(self) -> float:
        return float(self.table[-1, 0])

    @property
    def mass(self) -> float:
        """‖Q‖²_{L²(R^d)}."""
        return self.l2_norm**2

    def _second_derivative_nodes(self) -> np.ndarray:
        r, q, qp = self.table.T
        return _ode_second_derivative(r, q, qp, self.dimension)

    @cached_property
    def _q_spline(self) -> CubicHermiteSpline:
        r, q, qp = self.table.T
        return CubicHermiteSpline(r, q, qp)

    @cached_property
    def _qp_spline(self) -> CubicHermiteSpline:
        r, _, qp = self.table.T
        return CubicHermiteSpline(r, qp, self._second_derivative_nodes())

    def _tail_log_factor(self, r):
        # Q(r) / Q(r_max) beyond the table, log-space to survive large r
        rm = self.r_max
        return -(r - rm) - 0.5 * (self.dimension - 1) * np.log(r / rm)

    def Q(self, r):
        """Q at radius r (scalar or array)."""
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inside = r <= self.r_max
        out[inside] = self._q_spline(r[inside])
        rt = r[~inside]
        out[~inside] = self.table[-1, 1] * np.exp(self._tail_log_factor(rt))
        return out if out.ndim else float(out)

    def dQ(self, r):
        """Radial derivative Q'(r)."""
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inside = r <= self.r_max
        out[inside] = self._qp_spline(r[inside])
        rt = r[~inside]
        q_tail = self.table[-1, 1] * np.exp(self._tail_log_factor(rt))
        out[~inside] = -q_tail * (1.0 + 0.5 * (self.dimension - 1) / rt)
        return out if out.ndim else float(out)

    def dQ_over_r(self, r):
        """Q'(r)/r with its limit Q''(0) at the origin."""
        r = np.asarray(r, dtype=float)
        small = r < 1e-8
        safe = np.where(small, 1.0, r)
        out = np.where(small, self.curvature_at_origin, self.dQ(safe) / safe)
        return out if out.ndim else float(out)

    def d2Q(self, r):
        """Q''(r) from the equation Q'' = Q - Q^{1+4/d} - (d-1) Q'/r."""
        d = self.dimension
        q = self.Q(r)
        return q - np.abs(q) ** (4.0 / d) * q - (d - 1) * self.dQ_over_r(r)

    @property
    def curvature_at_origin(self) -> float:
        q0 = self.initial_height
        d = self.dimension
        return (q0 - q0 ** (1 + 4.0 / d)) / d

    def to_json(self) -> dict:
        c0, d0 = self.decay_constants
        c1, d1 = self.gradient_decay_constants
        return {
            "d": self.dimension,
            "Q0": self.initial_height,
            "norms": {"l2": self.l2_norm, "grad_l2": self.grad_l2_norm},
            "decay": {"C0": c0, "D0": d0, "C1": c1, "D1": d1},
            "meta": self.meta,
            "table": self.table.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "GroundState":
        decay = data["decay"]
        return cls(
            dimension=int(data["d"]),
            initial_height=float(data["Q0"]),
            table=np.asarray(data["table"], dtype=float),
            l2_norm=float(data["norms"]["l2"]),
            grad_l2_norm=float(data["norms"]["grad_l2"]),
            decay_constants=(float(decay["C0"]), float(decay["D0"])),
            gradient_decay_constants=(float(decay["C1"]), float(decay["D1"])),
            meta=dict(data.get("meta", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "GroundState":
        return cls.from_json(json.loads(Path(path).read_text()))


def _ode_second_derivative(r, q, qp, d):
    p = 4.0 / d
    q0 = q[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        friction = np.where(r > 0, (d - 1) * qp / np.where(r > 0, r, 1.0), 0.0)
    out = q - np.abs(q) ** p * q - friction
    # at r = 0 the friction term tends to (d-1) Q''(0)
    out[r == 0] = (q0 - q0 ** (1 + p)) / d
    return out


def _radial_grid(step: float, r_end: float) -> np.ndarray:
    # fine spacing through the core, twice coarser in the exponential tail
    inner = np.arange(0.0, min(10.0, r_end) + 0.5 * step, step)
    if r_end <= 10.0:
        return inner
    outer = np.arange(inner[-1] + 2 * step, r_end + step, 2 * step)
    return np.concatenate([inner, outer])


def _fit_decay(r, values, d):
    """Fit |v| <= C e^{-D r} over the last decade of the table."""
    v = np.abs(values)
    keep = v > 0
    r, v = r[keep], v[keep]
    last = v <= 10.0 * v[-1]
    # the algebraic prefactor r^{-(d-1)/2} only helps the bound; strip it
    y = np.log(v[last]) + 0.5 * (d - 1) * np.log(r[last])
    slope = np.polyfit(r[last], y, 1)[0]
    rate = min(-slope, 1.0)
    const = float(np.max(v * np.exp(rate * r))) * (1.0 + 1e-9)
    return const, float(rate)


def solve_ground_state(d: int, tol: float = 1e-10, radial_step: float = 0.005) -> GroundState:
    """Compute the positive radial ground state in dimension ``d``.

    ``tol`` is the bracket width at which the reported Q(0) is accepted.  The
    tabulated tail needs the bracket narrowed to roundoff regardless, so the
    bisection always continues until the midpoint stops moving.
    """
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    if not 1e-12 <= tol <= 1e-4:
        raise ValueError(f"tol must lie in [1e-12, 1e-4], got {tol}")

    lo, hi = _BRACKET
    s_lo, _ = _shoot(lo, d)
    s_hi, _ = _shoot(hi, d)
    if s_lo >= 0 or s_hi <= 0:
        raise GroundStateError("no ground state bracket")

    iterations = 0
    width_at_tol = None
    while True:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        s, _ = _shoot(mid, d)
        iterations += 1
        if s > 0:
            hi = mid
        elif s < 0:
            lo = mid
        else:
            lo = hi = mid
            break
        if width_at_tol is None and hi - lo < tol:
            width_at_tol = iterations

    _, sol_lo = _shoot(lo, d, dense=True)
    _, sol_hi = _shoot(hi, d, dense=True)
    q0 = 0.5 * (lo + hi)

    # trusted radius: bracket ends still agree
    probe = np.linspace(_R_START, min(sol_lo.t[-1], sol_hi.t[-1]), 20001)
    a = sol_lo.sol(probe)[0]
    b = sol_hi.sol(probe)[0]
    split = np.abs(a - b) > _MATCH_RTOL * np.abs(a)
    r_match = float(probe[np.argmax(split)] if split.any() else probe[-1])
    r_match = max(r_match - 0.5, 1.0)

    def core(r):
        y = 0.5 * (sol_lo.sol(r) + sol_hi.sol(r))
        return y[0], y[1]

    # decompose (Q, Q') at r_match into decaying + growing linear modes and
    # keep only the decaying one
    qm, qpm = core(r_match)
    k, kp = _decaying(r_match, d)
    i_, ip = _growing(r_match, d)
    det = k * ip - kp * i_
    amp = (qm * ip - qpm * i_) / det
    growing_amp = (k * qpm - kp * qm) / det

    # table extent: until Q < 1e-14 or r = 50
    r_test = np.arange(r_match, _R_LIMIT + 1e-9, 0.01)
    tail_vals = amp * _decaying(r_test, d)[0]
    below = tail_vals < _Q_FLOOR
    r_end = float(r_test[np.argmax(below)] if below.any() else _R_LIMIT)

    r = _radial_grid(radial_step, r_end)
    q = np.empty_like(r)
    qp = np.empty_like(r)
    origin = r < _R_START
    body = (~origin) & (r <= r_match)
    tail = r > r_match
    q[origin], qp[origin] = _series_start(q0, d, r[origin])
    q[body], qp[body] = core(r[body])
    kt, kpt = _decaying(r[tail], d)
    q[tail], qp[tail] = amp * kt, amp * kpt

    if np.any(q <= 0) or np.any(np.diff(q) >= 0):
        raise GroundStateError("tabulated profile is not positive and decreasing")

    table = np.column_stack([r, q, qp])
    area = sphere_area(d)
    mass = area * _radial_integral(r, q**2 * r ** (d - 1))
    grad = area * _radial_integral(r, qp**2 * r ** (d - 1))
    # neglected beyond r_max: ∫ Q² r^{d-1} with Q ~ e^{-r}
    mass += area * 0.5 * q[-1] ** 2 * r[-1] ** (d - 1)
    grad += area * 0.5 * qp[-1] ** 2 * r[-1] ** (d - 1)

    return GroundState(
        dimension=d,
        initial_height=float(q0),
        table=table,
        l2_norm=float(math.sqrt(mass)),
        grad_l2_norm=float(math.sqrt(grad)),
        decay_constants=_fit_decay(r, q, d),
        gradient_decay_constants=_fit_decay(r, qp, d),
        meta={
            "tol": tol,
            "iterations": iterations,
            "iterations_to_tol": width_at_tol,
            "r_match": r_match,
            "dropped_growing_amplitude": float(growing_amp),
            "radial_step": radial_step,
        },
    )


def _radial_integral(r, integrand):
    # Simpson per uniform segment
    steps = np.diff(r)
    breaks = np.flatnonzero(~np.isclose(steps[1:], steps[:-1], rtol=1e-6)) + 1
    edges = [0, *breaks.tolist(), len(r) - 1]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += simpson(integrand[a : b + 1], x=r[a : b + 1])
    return float(total)


def evaluate_Q(gs: GroundState, r):
    return gs.Q(r)


def evaluate_Q_gradient(gs: GroundState, r):
    return gs.dQ(r)
