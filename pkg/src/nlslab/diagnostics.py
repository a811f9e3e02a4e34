"""Blow-up diagnostics: local masses, mass identity, concentration, gradient rate.

Local masses are squared, ∫_{B(x_k,R)} |h|², so that they converge to
‖Q‖²_{L²} as t → T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ground_state import GroundState
from .profile import BubbleConfig, Profile
from .spectral import DomainSpec, Field, forward, l2_norm_array

__all__ = [
    "DiagnosticsError",
    "ball_mask",
    "local_mass",
    "total_mass_identity",
    "gaussian_bump",
    "measure_pairing",
    "measure_convergence",
    "trend_decreasing",
    "gradient_rate_fit",
    "BlowupReport",
    "build_blowup_report",
    "report_from_series",
    "radius_sensitivity",
    "gnuplot_script",
]


class DiagnosticsError(ValueError):
    pass


def ball_mask(domain: DomainSpec, center, R: float) -> np.ndarray:
    if not R > 0:
        raise DiagnosticsError("ball radius must be positive")
    if not domain.periodic and domain.distance_to_boundary(center) < R:
        raise DiagnosticsError(f"ball of radius {R:g} around {tuple(center)} exits the domain")
    z = domain.displacement(center)
    return sum(c * c for c in z) <= R * R


def local_mass(h: Field, center, R: float) -> float:
    """∫_{B̄(center, R)} |h|² by grid quadrature."""
    mask = np.broadcast_to(ball_mask(h.domain, center, R), h.domain.shape)
    return float(h.domain.cell_volume * np.sum(np.abs(h.values[mask]) ** 2))


def total_mass_identity(h: Field, p: int, gs: GroundState) -> float:
    """|‖h‖_{L²} - √p ‖Q‖_{L²}| / (√p ‖Q‖_{L²})."""
    target = math.sqrt(p) * gs.l2_norm
    return abs(l2_norm_array(h.values, h.domain) - target) / target


def gaussian_bump(domain: DomainSpec, center, width: float) -> np.ndarray:
    """exp(-|x - center|² / (2 width²)) on the grid."""
    z = domain.displacement(center)
    r2 = sum(c * c for c in z)
    return np.broadcast_to(np.exp(-r2 / (2 * width**2)), domain.shape).copy()


def measure_pairing(h: Field, psi: np.ndarray) -> float:
    """∫ |h|² ψ."""
    return float(h.domain.cell_volume * np.sum(np.abs(h.values) ** 2 * psi))


def _point_values(domain: DomainSpec, psi: np.ndarray, points) -> list[float]:
    """ψ sampled at the grid node nearest to each point."""
    out = []
    for x in points:
        idx = tuple(int(round(xi / hi)) - (0 if domain.periodic else 1) for xi, hi in zip(x, domain.spacing))
        out.append(float(psi[idx]))
    return out


def measure_convergence(
    h_series: Sequence[Field],
    psis: Sequence[np.ndarray | Callable],
    points,
    gs: GroundState,
) -> np.ndarray:
    """|∫|h(t)|²ψ - ‖Q‖² Σ_k ψ(x_k)| for each time (rows) and ψ (columns).

    A callable ψ is evaluated exactly at the points and sampled on the grid
    for the pairing; an array ψ is read at the nearest grid node.
    """
    if not h_series:
        return np.zeros((0, len(psis)))
    dom = h_series[0].domain
    mass = gs.l2_norm**2
    sampled, targets = [], []
    for psi in psis:
        if callable(psi):
            grid = np.broadcast_to(psi(*dom.coordinates), dom.shape)
            targets.append(mass * sum(float(psi(*x)) for x in points))
        else:
            grid = np.asarray(psi, dtype=float)
            targets.append(mass * sum(_point_values(dom, grid, points)))
        sampled.append(grid)
    out = np.empty((len(h_series), len(psis)))
    for i, h in enumerate(h_series):
        dens = np.abs(h.values) ** 2
        for j, grid in enumerate(sampled):
            out[i, j] = abs(h.domain.cell_volume * float(np.sum(dens * grid)) - targets[j])
    return out


def trend_decreasing(values: Sequence[float], window: int = 10, allowed: int = 1) -> bool:
    """Monotone decrease over the last ``window`` samples with ``allowed`` violations."""
    v = np.asarray(values, dtype=float)[-window:]
    return int(np.sum(np.diff(v) > 0)) <= allowed


def gradient_rate_fit(h_series: Sequence[Field], lam: float, T: float, p: int, gs: GroundState) -> dict:
    """Regress 1/‖∇h(t)‖ on T - t through the origin.

    The prediction is slope = λ / (√p ‖∇Q‖_{L²}).
    """
    w, inv = [], []
    for h in h_series:
        c = forward(h.values, h.domain)
        g = math.sqrt(h.domain.cell_volume * float(np.sum(h.domain.eigenvalues * np.abs(c) ** 2)))
        if g > 0 and h.time < T:
            w.append(T - h.time)
            inv.append(1.0 / g)
    if len(w) < 5:
        raise DiagnosticsError("gradient rate fit needs at least 5 usable samples")
    w, inv = np.array(w), np.array(inv)
    slope = float(w @ inv / (w @ w))
    resid = inv - slope * w
    r2 = 1.0 - float(resid @ resid) / float(inv @ inv)
    predicted = lam / (math.sqrt(p) * gs.grad_l2_norm)
    return {
        "slope": slope,
        "predicted": predicted,
        "relative_error": abs(slope - predicted) / predicted,
        "r2": r2,
        "gradient_norms": (1.0 / inv).tolist(),
        "gaps": w.tolist(),
    }


@dataclass(eq=False)
class BlowupReport:
    times: np.ndarray
    R: float
    points: list
    local_masses: np.ndarray  # (n_t, p)
    total_mass: np.ndarray
    pairings: np.ndarray  # (n_t, n_psi) absolute errors
    psi_labels: list[str]
    gradient_norms: np.ndarray
    rate: dict
    q_mass: float
    blow_time: float
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise DiagnosticsError("report times must increase strictly")
        for name in ("local_masses", "total_mass", "pairings", "gradient_norms"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DiagnosticsError(f"non-finite values in {name}")

    def local_mass_errors(self) -> np.ndarray:
        return np.abs(self.local_masses - self.q_mass) / self.q_mass

    def to_json(self) -> dict:
        return {
            "T": self.blow_time,
            "times": self.times.tolist(),
            "R": self.R,
            "points": [list(x) for x in self.points],
            "Q_mass_squared": self.q_mass,
            "local_masses": self.local_masses.tolist(),
            "total_mass": self.total_mass.tolist(),
            "pairing_errors": {lab: self.pairings[:, j].tolist() for j, lab in enumerate(self.psi_labels)},
            "gradient_norms": self.gradient_norms.tolist(),
            "gradient_rate": {k: v for k, v in self.rate.items() if k not in ("gradient_norms", "gaps")},
            **self.extra,
        }


def build_blowup_report(
    profile: Profile,
    times: Sequence[float],
    R: float | None = None,
    psis: Sequence[tuple[str, Callable]] | None = None,
    remainder: Callable[[float], np.ndarray] | None = None,
) -> BlowupReport:
    """Evaluate all four limits of the blow-up statement along ``times``.

    ``remainder`` optionally maps t to the remainder grid values; the
    glued profile alone is used otherwise.  ψ defaults to three Gaussians
    centred at the first blow-up point with widths ρ, 2ρ and 4ρ.
    """
    series = []
    for t in sorted(times):
        vals = profile.glued(t)
        if remainder is not None:
            vals = vals + remainder(t)
        series.append(Field(profile.dom, vals, float(t)))
    return report_from_series(series, profile.cfg, profile.gs, R, psis)


def report_from_series(
    series: Sequence[Field],
    cfg: BubbleConfig,
    gs: GroundState,
    R: float | None = None,
    psis: Sequence[tuple[str, Callable]] | None = None,
) -> BlowupReport:
    """Blow-up report from stored fields, e.g. snapshots read back from disk."""
    series = sorted(series, key=lambda h: h.time)
    R = cfg.rho if R is None else R
    if psis is None:
        psis = [(f"gauss_{s:g}rho", _gaussian_callable(cfg.points[0], s * cfg.rho)) for s in (1, 2, 4)]
    dom = series[0].domain
    local = np.array([[local_mass(h, x, R) for x in cfg.points] for h in series])
    total = np.array([l2_norm_array(h.values, dom) for h in series])
    pair = measure_convergence(series, [f for _, f in psis], cfg.points, gs)
    rate = gradient_rate_fit(series, cfg.lam, cfg.blow_time, cfg.p, gs)
    return BlowupReport(
        times=np.array([h.time for h in series]),
        R=R,
        points=[tuple(x) for x in cfg.points],
        local_masses=local,
        total_mass=total,
        pairings=pair,
        psi_labels=[lab for lab, _ in psis],
        gradient_norms=np.array(rate["gradient_norms"]),
        rate=rate,
        q_mass=gs.l2_norm**2,
        blow_time=cfg.blow_time,
        extra={"mass_identity_deviation": [total_mass_identity(h, cfg.p, gs) for h in series]},
    )


def _gaussian_callable(center, width):
    center = tuple(float(c) for c in center)

    def psi(*x):
        r2 = sum((xi - ci) ** 2 for xi, ci in zip(x, center))
        return np.exp(-r2 / (2 * width**2))

    return psi


def radius_sensitivity(profile: Profile, t: float, factors=(0.5, 1.0, 2.0)) -> dict:
    """Local masses at time t for R = f·ρ; radii that leave Ω are skipped."""
    h = Field(profile.dom, profile.glued(t), t)
    out = {}
    for f in factors:
        R = f * profile.cfg.rho
        try:
            out[f"{f:g}rho"] = [local_mass(h, x, R) for x in profile.cfg.points]
        except DiagnosticsError as exc:
            out[f"{f:g}rho"] = str(exc)
    return out


def gnuplot_script(report: BlowupReport) -> str:
    """Four-panel plot script with inline data blocks."""
    T = report.blow_time
    lines = ["# blow-up diagnostics", "set terminal pngcairo size 1200,900", "set output 'blowup.png'"]

    def block(name, cols):
        lines.append(f"${name} << EOD")
        for row in zip(*cols):
            lines.append(" ".join(f"{v:.12e}" for v in row))
        lines.append("EOD")

    w = T - report.times
    block("local", [w, *report.local_masses.T])
    block("total", [w, report.total_mass])
    block("pair", [w, *report.pairings.T])
    block("grad", [np.array(report.rate["gaps"]), 1.0 / np.array(report.rate["gradient_norms"])])
    local_curves = [f"$local using 1:{k + 2} with linespoints title 'x_{k + 1}'" for k in range(len(report.points))]
    pair_curves = [f"$pair using 1:{j + 2} with linespoints title '{lab}'" for j, lab in enumerate(report.psi_labels)]
    lines += [
        "set multiplot layout 2,2",
        "set logscale x; set xlabel 'T - t'",
        "set title '(i) local masses'",
        "plot " + ", ".join(local_curves) + f", {report.q_mass:.12e} title '||Q||^2'",
        "set title '(ii) total mass'",
        "plot $total using 1:2 with linespoints notitle",
        "set title '(iii) pairing errors'; set logscale y",
        "plot " + ", ".join(pair_curves),
        "unset logscale y; set title '(iv) 1/||grad h||'",
        f"plot $grad using 1:2 with points title 'data', {report.rate['slope']:.12e}*x title 'fit'",
        "unset multiplot",
    ]
    return "\n".join(lines) + "\n"
