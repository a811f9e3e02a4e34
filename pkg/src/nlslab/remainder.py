"""Remainder u solving u(t) = i ∫_t^T e^{i(t-s)Δ} (S₀(s) + S(u)(s)) ds.

The integral runs backward from the blow-up time on a time mesh graded
geometrically toward T.  Sources decay like exp(-δ/(λ(T-s))), so the
trapezoid rule is replaced by product integration against that weight
(κ = δ/λ in the variable v = 1/(T-s)), and each sample is carried by the
exact free propagator (interaction picture).  Nodes past the underflow
cutoff hold identically zero states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .profile import Profile, ProfileError
from .profile import interaction_source as interaction_term
from .spectral import DomainSpec, Field, backward, forward, h2_norm_array, l2_norm_array

__all__ = [
    "RemainderError",
    "NotContractingError",
    "WeightedSpaceParams",
    "TimeMesh",
    "RemainderTrajectory",
    "FixedPointResult",
    "build_time_mesh",
    "default_delta",
    "duhamel",
    "duhamel_all",
    "interaction_picture",
    "RemainderProblem",
    "apply_phi",
    "fixed_point",
    "weighted_distance",
]

_LOG_UNDERFLOW = math.log(1e300)


class RemainderError(RuntimeError):
    pass


class NotContractingError(RemainderError):
    pass


@dataclass(frozen=True)
class WeightedSpaceParams:
    delta: float
    alpha: float
    lam: float
    blow_time: float
    dimension: int = 2
    beta: float | None = None

    def __post_init__(self):
        d = self.dimension
        upper = min(1.0, 4.0 / d - 1.0)
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 0 < self.alpha < upper:
            raise ValueError(f"alpha must lie in (0, {upper:g}) for d = {d}, got {self.alpha}")
        if self.beta is None:
            object.__setattr__(self, "beta", 0.5 * (self.alpha + 1.0))
        if not self.alpha < self.beta < 1:
            raise ValueError("beta must lie in (alpha, 1)")
        if not (self.lam > 0 and self.blow_time > 0):
            raise ValueError("lambda and T must be positive")

    @staticmethod
    def default_alpha(d: int) -> float:
        return min(1.0, 4.0 / d - 1.0) / 2

    @property
    def kappa(self) -> float:
        """Decay rate of the distance weight in v = 1/(T - s)."""
        return self.delta / self.lam

    def log_weight(self, t, exponent: float = 1.0):
        """log of exp(exponent · δ / (λ(T - t)))."""
        return exponent * self.delta / (self.lam * (self.blow_time - np.asarray(t, dtype=float)))

    def to_json(self) -> dict:
        return {
            "delta": self.delta,
            "alpha": self.alpha,
            "beta": self.beta,
            "lambda": self.lam,
            "T": self.blow_time,
        }


DELTA_SAFETY = 0.8


def default_delta(profile: Profile) -> tuple[float, dict]:
    """δ = 0.8 · min(δ_fit, D₀ρ) together with the S₀ decay fit.

    The weight must stay below the asymptotic decay rate D₀ρ of the source:
    with δ at or above it the weighted sup migrates to the last mesh node
    and the measured contraction degrades.  When S₀ underflows to zero on
    the whole fit window the fit is skipped (``delta_fit`` is None) and the
    asymptotic rate alone sets δ.
    """
    rate = profile.gs.decay_constants[1] * profile.cfg.rho
    try:
        fit = profile.source_decay_fit()
    except ProfileError:
        return DELTA_SAFETY * rate, {"delta_fit": None, "reason": "source underflows on the fit window"}
    return DELTA_SAFETY * min(fit["delta_fit"], rate), fit


@dataclass(frozen=True, eq=False)
class TimeMesh:
    """Nodes s_0 = 0 < s_1 < ... < s_M < T with T - s_m = T q^m."""

    nodes: np.ndarray
    blow_time: float
    ratio: float
    cutoff_index: int

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2 or np.any(np.diff(nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        if not 0 < self.ratio < 1:
            raise ValueError("grading ratio must lie in (0, 1)")
        if nodes[-1] >= self.blow_time:
            raise ValueError("mesh must stay below the blow-up time")
        nodes.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def active(self) -> int:
        """Number of leading nodes that carry nonzero states."""
        return self.cutoff_index

    @property
    def inverse_gaps(self) -> np.ndarray:
        """v_m = 1 / (T - s_m)."""
        return 1.0 / (self.blow_time - self.nodes)

    def index_of(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.nodes, t, rtol=0, atol=1e-14 * self.blow_time))
        if hits.size != 1:
            raise RemainderError(f"t = {t} is not a mesh node; time interpolation is not supported")
        return int(hits[0])

    def same_as(self, other: "TimeMesh") -> bool:
        return (
            self.blow_time == other.blow_time
            and self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
        )


def build_time_mesh(params: WeightedSpaceParams, size: int = 200, ratio: float = 0.9) -> TimeMesh:
    """Geometric mesh toward T with up to ``size`` + 1 nodes (s_0 = 0 ... s_M).

    States are kept only while the L² weight e^{-δ/(λ(T-s))} stays above
    1e-300; past that point every quantity of interest sits below double
    precision range and the weight would amplify denormal roundoff.  Since
    α < 1 this also zeroes everything the H² weight e^{-αδ/(λ(T-s))} cuts.
    """
    if size < 2:
        raise ValueError("need at least two mesh intervals")
    if not 0 < ratio < 1:
        raise ValueError("grading ratio must lie in (0, 1)")
    T = params.blow_time
    gaps = T * ratio ** np.arange(size + 1)
    nodes = T - gaps
    distinct = np.concatenate([[True], np.diff(nodes) > 0]) & (nodes < T)
    nodes, gaps = nodes[distinct], gaps[distinct]
    dead = params.delta / (params.lam * gaps) > _LOG_UNDERFLOW
    cutoff = int(np.argmax(dead)) if dead.any() else nodes.size
    return TimeMesh(nodes, T, ratio, max(cutoff, 1))


def _one_minus_x_scaled_e1(x: np.ndarray) -> np.ndarray:
    """f(x) = 1 - x e^x E₁(x), accurate for large x where it behaves like 1/x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    low = x < 1.0
    xl = x[low]
    with np.errstate(invalid="ignore"):
        out[low] = np.where(xl > 0, 1.0 - xl * np.exp(xl) * special.exp1(np.where(xl > 0, xl, 1.0)), 1.0)
    xh = x[~low]
    # e^x E₁(x) = 1/(x+1 - 1²/(x+3 - 2²/(x+5 - ...))), evaluated bottom-up
    tail = np.zeros_like(xh)
    for k in range(80, 0, -1):
        tail = k * k / (xh + 2 * k + 1 - tail)
    c = xh + 1 - tail
    out[~low] = (1.0 - tail) / c
    return out


def _interval_weights(v_a: np.ndarray, v_b: np.ndarray, kappa: float):
    """Weights (w_a, w_b) with ∫_{s_a}^{s_b} G ds ≈ w_a G(s_a) + w_b G(s_b).

    In v = 1/(T-s) the measure is ds = v⁻² dv and the weight of the space is
    φ = e^{-κv} v².  G is interpolated in span{1, φ}, which reproduces both a
    stationary integrand and φ exactly.  φ peaks at v = 2/κ; on the single
    interval straddling the peak the two samples cannot separate 1 from φ,
    so there G e^{κv} is interpolated in span{1, v²} instead (exact for φ
    only).
    """
    a, b = np.asarray(v_a, float), np.asarray(v_b, float)
    h = b - a
    kh = np.minimum(kappa * h, 700.0)
    # R = e^{κa} ∫ e^{-κv} dv = e^{κa} ∫ φ ds over [a, b]
    R = h if kappa == 0 else -np.expm1(-kh) / kappa
    S = h / (a * b)
    # span{1, φ}, with φ scaled by e^{κa}
    phi_a, phi_b = a * a, np.exp(-kh) * b * b
    peak = np.inf if kappa == 0 else 2.0 / kappa
    straddle = (a < peak) & (b > peak)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(straddle, 0.0, (R - a * h / b) / (phi_b - phi_a))
    wa, wb = S - theta, theta
    if np.any(straddle):
        P = _one_minus_x_scaled_e1(kappa * a) / a - np.exp(-kh) * _one_minus_x_scaled_e1(kappa * b) / b
        D = h * (b + a)
        wa = np.where(straddle, (b * b * P - R) / D, wa)
        wb = np.where(straddle, np.exp(kh) * (R - a * a * P) / D, wb)
    return wa, wb


def duhamel_weights(mesh: TimeMesh, kappa: float) -> tuple[np.ndarray, np.ndarray]:
    v = mesh.inverse_gaps[: mesh.active]
    if v.size < 2:
        return np.zeros(0), np.zeros(0)
    return _interval_weights(v[:-1], v[1:], kappa)


def interaction_picture(values: np.ndarray, s: float, domain: DomainSpec) -> np.ndarray:
    """Mode coefficients of e^{-isΔ} F."""
    return np.exp(1j * s * domain.eigenvalues) * forward(values, domain)


def duhamel_all(sources: Sequence[np.ndarray], mesh: TimeMesh, kappa: float, domain: DomainSpec) -> list[np.ndarray]:
    """i ∫_{s_m}^T e^{i(s_m - s)Δ} F(s) ds at every active node.

    ``sources[m]`` holds F(s_m) on the grid for m < mesh.active; later entries
    are ignored.  Returns grid arrays for every node (zeros past the cutoff).
    """
    n_active = mesh.active
    wa, wb = duhamel_weights(mesh, kappa)
    mu = domain.eigenvalues
    out = [None] * mesh.size
    acc = np.zeros(domain.shape, dtype=complex)
    g_next = None
    zero = np.zeros(domain.shape, dtype=complex)
    for m in range(mesh.size - 1, -1, -1):
        if m >= n_active:
            out[m] = zero.copy()
            continue
        s = mesh.nodes[m]
        g = interaction_picture(sources[m], s, domain)
        if m < n_active - 1:
            acc = acc + wa[m] * g + wb[m] * g_next
        g_next = g
        out[m] = backward(1j * np.exp(-1j * s * mu) * acc, domain)
    return out


def duhamel(source_at: Callable[[float], Field], t: float, mesh: TimeMesh, kappa: float) -> Field:
    """i ∫_t^T e^{i(t-s)Δ} F(s) ds for a mesh node t."""
    m = mesh.index_of(t)
    if m >= mesh.active:
        probe = source_at(mesh.nodes[0])
        return Field(probe.domain, probe.domain.zeros(), t)
    wa, wb = duhamel_weights(mesh, kappa)
    acc = None
    domain = None
    g_next = None
    for j in range(mesh.active - 1, m - 1, -1):
        s = mesh.nodes[j]
        f = source_at(s)
        domain = f.domain
        g = interaction_picture(f.values, s, domain)
        if acc is None:
            acc = np.zeros(domain.shape, dtype=complex)
        if j < mesh.active - 1:
            acc = acc + wa[j] * g + wb[j] * g_next
        g_next = g
    values = backward(1j * np.exp(-1j * t * domain.eigenvalues) * acc, domain)
    return Field(domain, values, t)


@dataclass(eq=False)
class RemainderTrajectory:
    mesh: TimeMesh
    states: list[np.ndarray]
    params: WeightedSpaceParams
    domain: DomainSpec
    l2: np.ndarray = field(init=False)
    h2: np.ndarray = field(init=False)

    def __post_init__(self):
        if len(self.states) != self.mesh.size:
            raise ValueError("one state per mesh node is required")
        self.l2 = np.array([l2_norm_array(u, self.domain) for u in self.states])
        self.h2 = np.array([h2_norm_array(u, self.domain) for u in self.states])

    @classmethod
    def zeros(cls, mesh, params, domain) -> "RemainderTrajectory":
        return cls(mesh, [domain.zeros() for _ in range(mesh.size)], params, domain)

    def _weighted_sup(self, norms, exponent):
        with np.errstate(divide="ignore"):
            logs = np.log(norms) + self.params.log_weight(self.mesh.nodes, exponent)
        return float(np.exp(np.max(logs))) if np.isfinite(logs).any() else 0.0

    @property
    def weighted_sup_l2(self) -> float:
        return self._weighted_sup(self.l2, 1.0)

    @property
    def weighted_sup_h2(self) -> float:
        return self._weighted_sup(self.h2, self.params.alpha)

    @property
    def in_space(self) -> bool:
        return self.weighted_sup_l2 + self.weighted_sup_h2 <= 1.0

    def gamma_fit(self) -> float:
        """γ from log ‖u(s)‖_{H²} ≈ c - γ / (λ(T - s)) over nonzero nodes."""
        y = 1.0 / (self.params.lam * (self.mesh.blow_time - self.mesh.nodes))
        keep = self.h2 > 0
        if keep.sum() < 3:
            return math.nan
        slope = np.polyfit(y[keep], np.log(self.h2[keep]), 1)[0]
        return float(-slope)

    def field(self, m: int) -> Field:
        return Field(self.domain, self.states[m], float(self.mesh.nodes[m]))

    def summary(self) -> dict:
        return {
            "weighted_sup_l2": self.weighted_sup_l2,
            "weighted_sup_h2": self.weighted_sup_h2,
            "in_space": self.in_space,
            "gamma_fit": self.gamma_fit(),
        }


_LOG_MAX_FLOAT = math.log(np.finfo(float).max)


def weighted_distance(u: RemainderTrajectory, v: RemainderTrajectory, params: WeightedSpaceParams | None = None) -> float:
    """sup_m e^{δ/(λ(T-s_m))} ‖u(s_m) - v(s_m)‖_{L²}."""
    if not u.mesh.same_as(v.mesh):
        raise RemainderError("trajectories live on different meshes")
    params = params or u.params
    dom = u.domain
    best = -math.inf
    for m, (a, b) in enumerate(zip(u.states, v.states)):
        n = l2_norm_array(a - b, dom)
        if n > 0:
            best = max(best, math.log(n) + float(params.log_weight(u.mesh.nodes[m])))
    if best == -math.inf:
        return 0.0
    return math.exp(best) if best < _LOG_MAX_FLOAT else math.inf


class RemainderProblem:
    """Φ for a fixed profile, parameter set and time mesh; caches S₀ and r."""

    def __init__(self, profile: Profile, params: WeightedSpaceParams, mesh: TimeMesh):
        if params.dimension != profile.dom.dimension:
            raise ValueError("parameter dimension does not match the domain")
        self.profile = profile
        self.params = params
        self.mesh = mesh
        self.domain = profile.dom
        active = mesh.nodes[: mesh.active]
        self._glued = [profile.glued(s) for s in active]
        self._s0 = [profile.source_S0(s) for s in active]

    @property
    def kappa(self) -> float:
        return self.params.kappa

    def glued(self, m: int) -> np.ndarray:
        return self._glued[m]

    def s0(self, m: int) -> np.ndarray:
        return self._s0[m]

    def sources(self, states: Sequence[np.ndarray], include_s0: bool = True) -> list[np.ndarray]:
        d = self.domain.dimension
        out = []
        for m in range(self.mesh.active):
            f = interaction_term(self._glued[m], states[m], d)
            if include_s0:
                f = f + self._s0[m]
            out.append(f)
        return out

    def phi(self, u: RemainderTrajectory) -> RemainderTrajectory:
        states = duhamel_all(self.sources(u.states), self.mesh, self.kappa, self.domain)
        return RemainderTrajectory(self.mesh, states, self.params, self.domain)

    def i0(self) -> RemainderTrajectory:
        """I₀ = Φ(0)."""
        return self.phi(RemainderTrajectory.zeros(self.mesh, self.params, self.domain))


def apply_phi(u: RemainderTrajectory, problem: RemainderProblem) -> RemainderTrajectory:
    return problem.phi(u)


@dataclass(eq=False)
class FixedPointResult:
    trajectory: RemainderTrajectory
    contraction_factor: float
    iterations: int
    distances: list[float]
    residual: float
    left_space: list[int]

    def report(self) -> dict:
        p = self.trajectory.params
        return {
            **p.to_json(),
            "contraction_factor": self.contraction_factor,
            "iterations": self.iterations,
            "distances": self.distances,
            "residual": self.residual,
            "left_space_at": self.left_space,
            "gamma_fit": self.trajectory.gamma_fit(),
            "weighted_sups": {
                "l2": self.trajectory.weighted_sup_l2,
                "h2": self.trajectory.weighted_sup_h2,
            },
            "mesh": {
                "size": self.trajectory.mesh.size,
                "ratio": self.trajectory.mesh.ratio,
                "active": self.trajectory.mesh.active,
            },
        }


def fixed_point(problem: RemainderProblem, tol: float = 1e-8, max_iter: int = 50) -> FixedPointResult:
    """Picard iteration u⁰ = 0, uⁿ⁺¹ = Φ(uⁿ) until d(uⁿ⁺¹, uⁿ) < tol.

    Raises NotContractingError once the distance ratio stays at or above 1
    for three consecutive iterations, or RemainderError if the budget runs
    out.
    """
    if not 1e-12 <= tol <= 1e-4:
        raise ValueError("tol must lie in [1e-12, 1e-4]")
    current = RemainderTrajectory.zeros(problem.mesh, problem.params, problem.domain)
    distances: list[float] = []
    left_space: list[int] = []
    strikes = 0
    for it in range(1, max_iter + 1):
        nxt = problem.phi(current)
        dist = weighted_distance(nxt, current)
        if not math.isfinite(dist):
            raise NotContractingError("not contracting: increase λ or decrease T (distance overflowed)")
        distances.append(dist)
        if not nxt.in_space:
            left_space.append(it)
        if len(distances) >= 2 and distances[-2] > 0:
            strikes = strikes + 1 if dist / distances[-2] >= 1.0 else 0
            if strikes >= 3:
                raise NotContractingError(
                    "not contracting: increase λ or decrease T "
                    f"(distance ratio >= 1 for 3 iterations, last d = {dist:.3e})"
                )
        current = nxt
        if dist < tol:
            factor = distances[-1] / distances[-2] if len(distances) >= 2 and distances[-2] > 0 else 0.0
            check = problem.phi(current)
            residual = weighted_distance(check, current)
            return FixedPointResult(current, factor, it, distances, residual, left_space)
    raise RemainderError(f"Picard iteration did not reach tol = {tol:g} in {max_iter} iterations")
