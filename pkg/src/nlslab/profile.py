"""Pseudo-conformal bubbles, cutoffs, the glued profile and its source terms.

For a blow-up point x_k, scale λ and blow-up time T the free bubble is

    r_k(t, x) = (λw)^{-d/2} exp(i(4 - λ²|z|²) / (4λ²w)) Q(|z| / (λw)),

with w = T - t and z = x - x_k.  It solves i∂_t u + Δu = -|u|^{4/d} u on the
whole space.  Multiplying by a cutoff φ_k and summing gives the glued
profile r = Σ φ_k r_k; the price for the cutoff is the source S₀, supported
in the annuli ρ < |z| < 2ρ, and the interaction S(u) with a remainder u.

All derivatives of r_k and φ_k are analytic; grid differencing of the chirp
exp(-i|z|²/4w) aliases long before the bubble itself is under-resolved.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .ground_state import GroundState
from .spectral import (
    DomainSpec,
    Field,
    derivative_array,
    forward,
    h2_norm_array,
    l2_norm_array,
    second_derivative_array,
)

__all__ = [
    "ProfileError",
    "BubbleConfig",
    "CutoffFamily",
    "Profile",
    "default_rho",
    "bump",
    "build_cutoffs",
    "bubble",
    "glued_profile",
    "source_S0",
    "source_S",
    "nonlinearity",
    "interaction_source",
    "nonlinearity_derivatives",
    "check_lemma1",
]

_EPS_SMALL_MODULUS = 1e-30


class ProfileError(ValueError):
    pass


def _distance(a, b, domain: DomainSpec | None = None) -> float:
    diffs = []
    for i, (x, y) in enumerate(zip(a, b)):
        z = x - y
        if domain is not None and domain.periodic:
            L = domain.side_lengths[i]
            z -= L * round(z / L)
        diffs.append(z)
    return math.sqrt(sum(z * z for z in diffs))


def default_rho(points, domain: DomainSpec) -> float:
    """min(min pairwise distance, 2 · min distance to ∂Ω) / 5."""
    pair = min(
        (_distance(a, b, domain) for a, b in itertools.combinations(points, 2)),
        default=math.inf,
    )
    wall = min(domain.distance_to_boundary(x) for x in points)
    rho = min(pair, 2 * wall) / 5
    if not math.isfinite(rho):
        # single point on a torus
        rho = min(domain.side_lengths) / 10
    return rho


@dataclass(frozen=True)
class BubbleConfig:
    points: tuple[tuple[float, ...], ...]
    lam: float
    blow_time: float
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(tuple(float(c) for c in x) for x in self.points))
        if not self.lam > 0:
            raise ProfileError("lambda must be positive")
        if not self.blow_time > 0:
            raise ProfileError("blow-up time must be positive")
        if not self.rho > 0:
            raise ProfileError("cutoff radius must be positive")

    @classmethod
    def with_default_rho(cls, points, lam: float, blow_time: float, domain: DomainSpec) -> "BubbleConfig":
        return cls(tuple(points), lam, blow_time, default_rho(points, domain))

    @property
    def p(self) -> int:
        return len(self.points)

    @property
    def cutoff_outer_radius(self) -> float:
        return 2 * self.rho

    def validate(self, domain: DomainSpec) -> None:
        for x in self.points:
            if len(x) != domain.dimension:
                raise ProfileError("cutoff geometry infeasible: point dimension mismatch")
            if not domain.periodic and not domain.contains(x):
                raise ProfileError(f"cutoff geometry infeasible: {x} is not inside the domain")
            if domain.distance_to_boundary(x) <= 2 * self.rho:
                raise ProfileError(f"cutoff geometry infeasible: ball B({x}, 2ρ) meets the boundary")
        if domain.periodic and 4 * self.rho >= min(domain.side_lengths):
            raise ProfileError("cutoff geometry infeasible: ball wraps around the torus")
        for a, b in itertools.combinations(self.points, 2):
            if _distance(a, b, domain) <= 4 * self.rho:
                raise ProfileError(f"cutoff geometry infeasible: {a} and {b} are closer than 4ρ")

    def to_json(self) -> dict:
        return {
            "points": [list(x) for x in self.points],
            "lambda": self.lam,
            "blow_time": self.blow_time,
            "rho": self.rho,
        }


# smooth step: η = 1 on [0, 1], 0 on [2, ∞), g(2-s) / (g(2-s) + g(s-1)) between


def _g(s):
    s = np.asarray(s, dtype=float)
    pos = s > 0
    out = np.zeros_like(s)
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def _g1(s):
    s = np.asarray(s, dtype=float)
    pos = s > 0
    out = np.zeros_like(s)
    sp = s[pos]
    out[pos] = np.exp(-1.0 / sp) / sp**2
    return out


def _g2(s):
    s = np.asarray(s, dtype=float)
    pos = s > 0
    out = np.zeros_like(s)
    sp = s[pos]
    out[pos] = np.exp(-1.0 / sp) * (1.0 / sp**4 - 2.0 / sp**3)
    return out


def bump(s, order: int = 0):
    """η(s) and its first two derivatives."""
    s = np.asarray(s, dtype=float)
    a, b = _g(2 - s), _g(s - 1)
    den = a + b
    mid = (s > 1) & (s < 2)
    if order == 0:
        out = np.where(s <= 1, 1.0, 0.0)
        out[mid] = a[mid] / den[mid]
        return out
    a1, b1 = -_g1(2 - s), _g1(s - 1)
    out = np.zeros_like(s)
    if order == 1:
        out[mid] = (a1 * b - a * b1)[mid] / den[mid] ** 2
        return out
    if order == 2:
        a2, b2 = _g2(2 - s), _g2(s - 1)
        den1, den2 = a1 + b1, a2 + b2
        eta1 = (a1 * den - a * den1)[mid] / den[mid] ** 2
        out[mid] = (a2 * den - a * den2)[mid] / den[mid] ** 2 - 2 * den1[mid] * eta1 / den[mid]
        return out
    raise ValueError("order must be 0, 1 or 2")


@dataclass(frozen=True, eq=False)
class CutoffFamily:
    """Cutoffs φ_k restricted to their supports |x - x_k| < 2ρ.

    ``masks[k]`` selects the support on the grid; ``displacements[k]`` holds
    x - x_k there, one array per axis.  φ, ∇φ and Δφ are analytic.
    """

    rho: float
    masks: list[np.ndarray]
    displacements: list[tuple[np.ndarray, ...]]
    phi: list[np.ndarray]
    grad_phi: list[tuple[np.ndarray, ...]]
    lap_phi: list[np.ndarray]
    shape: tuple[int, ...] = field(default=())

    def full(self, k: int) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.masks[k]] = self.phi[k]
        return out


def build_cutoffs(cfg: BubbleConfig, dom: DomainSpec) -> CutoffFamily:
    cfg.validate(dom)
    d = dom.dimension
    rho = cfg.rho
    masks, disps, phis, grads, laps = [], [], [], [], []
    for x in cfg.points:
        z = [np.broadcast_to(c, dom.shape) for c in dom.displacement(x)]
        dist = np.sqrt(sum(c**2 for c in z))
        mask = dist < 2 * rho
        zm = tuple(c[mask] for c in z)
        s = dist[mask] / rho
        eta0, eta1, eta2 = bump(s, 0), bump(s, 1), bump(s, 2)
        safe = np.where(s > 0, s, 1.0)
        # η' vanishes on s <= 1, so the 1/s is harmless
        radial = np.where(s > 0, eta1 / safe, 0.0)
        grads.append(tuple(radial * c / rho**2 for c in zm))
        laps.append((eta2 + (d - 1) * radial) / rho**2)
        masks.append(mask)
        disps.append(zm)
        phis.append(eta0)
    return CutoffFamily(rho, masks, disps, phis, grads, laps, dom.shape)


def _check_time(cfg: BubbleConfig, t: float) -> float:
    w = cfg.blow_time - t
    if not w > 0:
        raise ProfileError(f"post-blow-up evaluation: t = {t} >= T = {cfg.blow_time}")
    return w


@dataclass
class BubbleJet:
    value: np.ndarray
    gradient: tuple[np.ndarray, ...] | None = None
    laplacian: np.ndarray | None = None
    hessian: dict | None = None


def bubble_jet(gs: GroundState, lam: float, w: float, z: tuple[np.ndarray, ...], order: int = 0) -> BubbleJet:
    """r_k and its derivatives at displacements ``z`` from the centre.

    order 0: value; 1: + gradient; 2: + Laplacian and Hessian.
    """
    d = gs.dimension
    s = lam * w
    r2 = sum(c * c for c in z)
    dist = np.sqrt(r2)
    y = dist / s
    amp = s ** (-d / 2)
    phase = np.exp(1j * (1.0 / (lam**2 * w) - r2 / (4 * w)))
    q = gs.Q(y)
    carrier = amp * phase
    value = carrier * q
    jet = BubbleJet(value)
    if order == 0:
        return jet
    qp_over_y = gs.dQ_over_r(y)
    # ∇q = (Q'/y) z / s², ∇θ = -z / 2w
    grad_q = [qp_over_y * c / s**2 for c in z]
    jet.gradient = tuple(carrier * (gq - 0.5j * q * c / w) for gq, c in zip(grad_q, z))
    if order == 1:
        return jet
    p = 4.0 / d
    lap_q = (q - np.abs(q) ** p * q) / s**2
    grad_theta_dot_grad_q = -qp_over_y * r2 / (2 * w * s**2)
    lap_theta = -d / (2 * w)
    grad_theta_sq = r2 / (4 * w**2)
    jet.laplacian = carrier * (lap_q + 2j * grad_theta_dot_grad_q + q * (1j * lap_theta - grad_theta_sq))
    qpp = gs.d2Q(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        aniso = np.where(y > 1e-6, (qpp - qp_over_y) / np.where(y > 1e-6, y, 1.0) ** 2, 0.0)
    hess = {}
    for i in range(d):
        for j in range(i, d):
            delta = 1.0 if i == j else 0.0
            d2q = (aniso * z[i] * z[j] / s**2 + qp_over_y * delta) / s**2
            th_i, th_j = -z[i] / (2 * w), -z[j] / (2 * w)
            hij = carrier * (
                d2q
                + 1j * (th_i * grad_q[j] + th_j * grad_q[i])
                + q * (1j * (-delta / (2 * w)) - th_i * th_j)
            )
            hess[(i, j)] = hij
            hess[(j, i)] = hij
    jet.hessian = hess
    return jet


def nonlinearity(u: np.ndarray, d: int) -> np.ndarray:
    """|u|^{4/d} u."""
    return np.abs(u) ** (4.0 / d) * u


def _pow_diff(a2: np.ndarray, b2: np.ndarray, diff2: np.ndarray, e: float) -> np.ndarray:
    """a2^e - b2^e given diff2 = a2 - b2, without cancellation."""
    out = np.empty_like(a2)
    pos = b2 > 0
    ratio = np.maximum(diff2[pos] / b2[pos], -1.0)
    with np.errstate(divide="ignore"):
        out[pos] = b2[pos] ** e * np.expm1(e * np.log1p(ratio))
    out[~pos] = a2[~pos] ** e
    return out


def interaction_source(r: np.ndarray, u: np.ndarray, d: int) -> np.ndarray:
    """S(u) = |r|^p r - |r+u|^p (r+u) with p = 4/d, accurate for |u| << |r|.

    Written as -(|r+u|^p - |r|^p)(r+u) - |r|^p u with the modulus difference
    |r+u|² - |r|² = 2 Re(r̄u) + |u|² formed directly, so exponentially small
    remainders keep their relative precision against an O(1) profile.
    """
    p = 4.0 / d
    b2 = (r * np.conj(r)).real
    diff2 = 2 * (np.conj(r) * u).real + (u * np.conj(u)).real
    return -(_pow_diff(b2 + diff2, b2, diff2, p / 2) * (r + u) + b2 ** (p / 2) * u)


class Profile:
    """Glued multi-bubble profile for fixed (Ω, Q, x_k, λ, T, ρ).

    Caches the cutoff family; every method is a pure function of its time
    argument.
    """

    def __init__(self, cfg: BubbleConfig, gs: GroundState, dom: DomainSpec):
        if gs.dimension != dom.dimension:
            raise ProfileError("ground state and domain dimensions differ")
        cfg.validate(dom)
        self.cfg = cfg
        self.gs = gs
        self.dom = dom

    @cached_property
    def cutoffs(self) -> CutoffFamily:
        return build_cutoffs(self.cfg, self.dom)

    @property
    def exponent(self) -> float:
        return 4.0 / self.dom.dimension

    def bubble(self, k: int, t: float, order: int = 0) -> BubbleJet:
        """Free bubble r_k on the whole grid (no cutoff)."""
        w = _check_time(self.cfg, t)
        z = tuple(np.broadcast_to(c, self.dom.shape) for c in self.dom.displacement(self.cfg.points[k]))
        return bubble_jet(self.gs, self.cfg.lam, w, z, order)

    def glued(self, t: float) -> np.ndarray:
        w = _check_time(self.cfg, t)
        cut = self.cutoffs
        out = self.dom.zeros()
        for k in range(self.cfg.p):
            jet = bubble_jet(self.gs, self.cfg.lam, w, cut.displacements[k])
            out[cut.masks[k]] += cut.phi[k] * jet.value
        return out

    def glued_gradient(self, t: float) -> list[np.ndarray]:
        """∇r = Σ (r_k ∇φ_k + φ_k ∇r_k), analytic."""
        w = _check_time(self.cfg, t)
        cut = self.cutoffs
        out = [self.dom.zeros() for _ in range(self.dom.dimension)]
        for k in range(self.cfg.p):
            jet = bubble_jet(self.gs, self.cfg.lam, w, cut.displacements[k], order=1)
            for a in range(self.dom.dimension):
                out[a][cut.masks[k]] += jet.value * cut.grad_phi[k][a] + cut.phi[k] * jet.gradient[a]
        return out

    def source_S0(self, t: float) -> np.ndarray:
        w = _check_time(self.cfg, t)
        cut = self.cutoffs
        p = self.exponent
        out = self.dom.zeros()
        for k in range(self.cfg.p):
            phi = cut.phi[k]
            ring = (phi < 1.0) | (cut.lap_phi[k] != 0)
            z = tuple(c[ring] for c in cut.displacements[k])
            jet = bubble_jet(self.gs, self.cfg.lam, w, z, order=1)
            ph = phi[ring]
            rk = jet.value
            nl = np.abs(rk) ** p * rk
            grad_dot = sum(gp[ring] * gr for gp, gr in zip(cut.grad_phi[k], jet.gradient))
            vals = -(ph ** (1 + p) - ph) * nl - rk * cut.lap_phi[k][ring] - 2 * grad_dot
            local = np.zeros(phi.shape, dtype=complex)
            local[ring] = vals
            out[cut.masks[k]] = local
        return out

    def source_S(self, t: float, u: np.ndarray, glued: np.ndarray | None = None) -> np.ndarray:
        r = self.glued(t) if glued is None else glued
        return interaction_source(r, u, self.dom.dimension)

    def source_decay_fit(self, times=None) -> dict:
        """Fit log ‖S₀(t)‖_{H²} ≈ c - δ_fit / (λ(T - t)).

        Default times: 16 points with T - t geometric from T/2 down to 10⁻³,
        or down to T/20 when T < 0.02.  Times where S₀ underflows to zero
        are skipped.
        """
        T, lam = self.cfg.blow_time, self.cfg.lam
        if times is None:
            times = T - np.geomspace(T / 2, 1e-3 if T >= 0.02 else T / 20, 16)
        times = np.asarray(times, dtype=float)
        norms = np.array([h2_norm_array(self.source_S0(t), self.dom) for t in times])
        keep = norms > 0
        if keep.sum() < 3:
            raise ProfileError("source S0 vanishes on the fit window; cannot fit its decay")
        y = 1.0 / (lam * (T - times[keep]))
        slope, intercept = np.polyfit(y, np.log(norms[keep]), 1)
        resid = np.log(norms[keep]) - (slope * y + intercept)
        spread = np.log(norms[keep]) - np.log(norms[keep]).mean()
        r2 = 1.0 - float(resid @ resid) / float(spread @ spread) if spread.any() else 1.0
        return {
            "delta_fit": float(-slope),
            "log_constant": float(intercept),
            "r2": r2,
            "times": times[keep].tolist(),
            "h2_norms": norms[keep].tolist(),
        }

    def derivative_sup_norms(self, t: float) -> tuple[float, float, float]:
        """(‖r‖_∞, ‖∇r‖_∞, ‖∇²r‖_∞) of the glued profile, analytic.

        ‖∇r‖ is the pointwise Euclidean norm, ‖∇²r‖ the Frobenius norm.
        """
        w = _check_time(self.cfg, t)
        cut = self.cutoffs
        d = self.dom.dimension
        sups = [0.0, 0.0, 0.0]
        for k in range(self.cfg.p):
            jet = bubble_jet(self.gs, self.cfg.lam, w, cut.displacements[k], order=2)
            phi, gphi = cut.phi[k], cut.grad_phi[k]
            # Hessian of φ from the radial profile
            z = cut.displacements[k]
            s = np.sqrt(sum(c * c for c in z)) / cut.rho
            e1, e2 = bump(s, 1), bump(s, 2)
            safe = np.where(s > 0, s, 1.0)
            radial = np.where(s > 0, e1 / safe, 0.0)
            aniso = np.where(s > 0, (e2 - radial) / safe**2, 0.0)
            val = phi * jet.value
            grad = [gphi[a] * jet.value + phi * jet.gradient[a] for a in range(d)]
            hess_sq = np.zeros(val.shape)
            for i in range(d):
                for j in range(d):
                    delta = 1.0 if i == j else 0.0
                    hphi = (aniso * z[i] * z[j] / cut.rho**2 + radial * delta) / cut.rho**2
                    hij = (
                        hphi * jet.value
                        + gphi[i] * jet.gradient[j]
                        + gphi[j] * jet.gradient[i]
                        + phi * jet.hessian[(i, j)]
                    )
                    hess_sq += np.abs(hij) ** 2
            sups[0] = max(sups[0], float(np.max(np.abs(val), initial=0.0)))
            sups[1] = max(sups[1], float(np.max(np.sqrt(sum(np.abs(g) ** 2 for g in grad)), initial=0.0)))
            sups[2] = max(sups[2], float(np.max(np.sqrt(hess_sq), initial=0.0)))
        return tuple(sups)


# Field-level wrappers


def bubble(cfg: BubbleConfig, gs: GroundState, k: int, t: float, dom: DomainSpec) -> Field:
    return Field(dom, Profile(cfg, gs, dom).bubble(k, t).value, t)


def glued_profile(cfg: BubbleConfig, gs: GroundState, t: float, dom: DomainSpec) -> Field:
    return Field(dom, Profile(cfg, gs, dom).glued(t), t)


def source_S0(cfg: BubbleConfig, gs: GroundState, t: float, dom: DomainSpec) -> Field:
    return Field(dom, Profile(cfg, gs, dom).source_S0(t), t)


def source_S(cfg: BubbleConfig, gs: GroundState, t: float, u: Field, dom: DomainSpec) -> Field:
    if u.domain != dom:
        raise ProfileError("remainder lives on a different domain")
    return Field(dom, Profile(cfg, gs, dom).source_S(t, u.values), t)


def nonlinearity_derivatives(u: Field) -> dict:
    """First and second derivatives of |u|^{4/d} u by the product-rule expansions.

    Returns ``{"first": [∂_i], "second": {(i, j): ∂_ij}}`` as Fields.  Terms
    carrying negative powers of |u| are zeroed where |u| < 1e-30; their
    u-power prefactors vanish faster there.
    """
    dom = u.domain
    d = dom.dimension
    a = 2.0 / d
    p = 2 * a
    v = u.values
    mod = np.abs(v)
    tiny = mod < _EPS_SMALL_MODULUS
    safe = np.where(tiny, 1.0, mod)
    pow_p = mod**p
    pow_p2 = np.where(tiny, 0.0, safe ** (p - 2))
    pow_p4 = np.where(tiny, 0.0, safe ** (p - 4))
    vb = np.conj(v)
    du = [derivative_array(v, dom, i) for i in range(d)]
    dub = [np.conj(x) for x in du]
    first = [(a + 1) * du[i] * pow_p + a * dub[i] * pow_p2 * v**2 for i in range(d)]
    second = {}
    for i in range(d):
        for j in range(i, d):
            if i == j:
                dij = second_derivative_array(v, dom, i)
            else:
                dij = derivative_array(du[i], dom, j)
            dijb = np.conj(dij)
            val = (a + 1) * (
                dij * pow_p
                + a * du[i] * du[j] * pow_p2 * vb
                + a * dub[i] * du[j] * pow_p2 * v
            ) + a * (
                (a + 1) * du[i] * dub[j] * pow_p2 * v
                + dijb * pow_p2 * v**2
                + (a - 1) * dub[i] * dub[j] * pow_p4 * v**3
            )
            second[(i, j)] = Field(dom, val, u.time)
            second[(j, i)] = second[(i, j)]
    return {"first": [Field(dom, f, u.time) for f in first], "second": second}


def _h1_norm(values, dom):
    c = forward(values, dom)
    return float(np.sqrt(dom.cell_volume * np.sum((1 + dom.eigenvalues) * np.abs(c) ** 2)))


def _safe_ratio(num: float, den: float) -> float:
    if den == 0:
        if num == 0:
            return 0.0
        raise ZeroDivisionError("right-hand side vanishes while the left-hand side does not")
    return num / den


def check_lemma1(u: Field, v: Field) -> dict[str, float]:
    """Left-hand sides of the three nonlinear estimates over their right-hand sides.

    (i)   ‖f(u)-f(v)‖_{L²} / (‖u-v‖_{L²} (‖u‖_∞ + ‖v‖_∞)^{4/d})
    (ii)  ‖f(u)-f(v)‖_{H¹} / (‖u-v‖_{H²} (‖u‖_{H²} + ‖v‖_{H²})^{4/d})
    (iii) ‖f(u)‖_{H²} / ‖u‖_{H²}^{1+4/d}
    with f(z) = |z|^{4/d} z.  The unknown constant C is left out.
    """
    if u.domain != v.domain:
        raise ProfileError("fields live on different domains")
    dom = u.domain
    d = dom.dimension
    p = 4.0 / d
    fu, fv = nonlinearity(u.values, d), nonlinearity(v.values, d)
    diff = u.values - v.values
    linf = float(np.max(np.abs(u.values)) + np.max(np.abs(v.values)))
    hu, hv = h2_norm_array(u.values, dom), h2_norm_array(v.values, dom)
    ratio_i = _safe_ratio(l2_norm_array(fu - fv, dom), l2_norm_array(diff, dom) * linf**p)
    ratio_ii = _safe_ratio(_h1_norm(fu - fv, dom), h2_norm_array(diff, dom) * (hu + hv) ** p)
    ratio_iii = _safe_ratio(h2_norm_array(fu, dom), hu ** (1 + p))
    return {"ratio_i": ratio_i, "ratio_ii": ratio_ii, "ratio_iii": ratio_iii}
