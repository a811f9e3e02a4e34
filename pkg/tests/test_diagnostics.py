import numpy as np
import pytest

from nlslab.diagnostics import (
    DiagnosticsError,
    ball_mask,
    build_blowup_report,
    gaussian_bump,
    gnuplot_script,
    gradient_rate_fit,
    local_mass,
    measure_convergence,
    measure_pairing,
    radius_sensitivity,
    report_from_series,
    total_mass_identity,
    trend_decreasing,
)
from nlslab.profile import BubbleConfig, Profile
from nlslab.spectral import DomainSpec, Field, l2_norm_array

DOM = DomainSpec.square(2, 1.0, 255)
TWO = ((0.25, 0.5), (0.75, 0.5))


def test_local_mass_of_a_constant_is_the_ball_area():
    f = Field(DOM, np.ones(DOM.shape))
    assert local_mass(f, (0.5, 0.5), 0.2) == pytest.approx(np.pi * 0.04, rel=2e-2)
    with pytest.raises(DiagnosticsError, match="exits"):
        ball_mask(DOM, (0.1, 0.5), 0.2)
    with pytest.raises(DiagnosticsError):
        ball_mask(DOM, (0.5, 0.5), 0.0)


def test_pairing_with_a_gaussian():
    f = Field(DOM, np.ones(DOM.shape))
    psi = gaussian_bump(DOM, (0.5, 0.5), 0.05)
    assert measure_pairing(f, psi) == pytest.approx(2 * np.pi * 0.05**2, rel=1e-3)


def test_trend_detection():
    assert trend_decreasing(np.geomspace(1, 1e-3, 12))
    assert trend_decreasing([5, 4, 3, 3.5, 2, 1, 0.5, 0.4, 0.3, 0.2])
    assert not trend_decreasing([5, 4, 4.5, 3, 3.5, 2, 1, 0.5, 0.4, 0.3])


def test_concentration_on_the_glued_profile(gs2):
    prof = Profile(BubbleConfig(TWO, 10.0, 0.1, 0.1), gs2, DOM)
    times = 0.1 - np.geomspace(0.05, 2e-3, 8)
    rep = build_blowup_report(prof, times)
    err = rep.local_mass_errors()
    assert err.shape == (8, 2)
    # ρ is five bubble widths at the last time: defect ~ e^{-10}
    assert err[-1].max() < 5e-4
    assert np.all(np.diff(err[:, 0]) <= 0)
    assert rep.extra["mass_identity_deviation"][-1] < 1e-5
    data = rep.to_json()
    assert set(data["pairing_errors"]) == {"gauss_1rho", "gauss_2rho", "gauss_4rho"}
    series = [Field(DOM, prof.glued(t), t) for t in times]
    again = report_from_series(series[::-1], prof.cfg, gs2)
    assert np.array_equal(again.local_masses, rep.local_masses)


def test_measure_convergence_accepts_callables_and_arrays(gs2):
    prof = Profile(BubbleConfig(TWO, 10.0, 0.1, 0.1), gs2, DOM)
    h = [Field(DOM, prof.glued(0.099), 0.099)]
    psi_grid = gaussian_bump(DOM, (0.25, 0.5), 0.2)
    by_array = measure_convergence(h, [psi_grid], TWO, gs2)
    by_call = measure_convergence(h, [lambda x, y: np.exp(-((x - 0.25) ** 2 + (y - 0.5) ** 2) / 0.08)], TWO, gs2)
    assert by_array[0, 0] == pytest.approx(by_call[0, 0], abs=5e-3 * gs2.l2_norm**2)


def test_gradient_rate_on_exact_one_dimensional_bubbles(gs1):
    dom = DomainSpec.square(1, 1.0, 2**14 - 1)
    prof = Profile(BubbleConfig(((0.5,),), 1.0, 0.05, 0.2), gs1, dom)
    series = [Field(dom, prof.glued(t), t) for t in 0.05 - np.geomspace(5e-3, 5e-4, 8)]
    fit = gradient_rate_fit(series, 1.0, 0.05, 1, gs1)
    assert fit["relative_error"] < 1e-4 and fit["r2"] > 0.999999
    with pytest.raises(DiagnosticsError, match="at least 5"):
        gradient_rate_fit(series[:3], 1.0, 0.05, 1, gs1)


def test_total_mass_identity_and_radius_sensitivity(gs2):
    prof = Profile(BubbleConfig(TWO, 10.0, 0.1, 0.1), gs2, DOM)
    h = Field(DOM, prof.glued(0.099), 0.099)
    assert total_mass_identity(h, 2, gs2) < 1e-5
    sens = radius_sensitivity(prof, 0.099, (0.5, 1.0, 2.0, 3.0))
    assert sens["1rho"][0] == pytest.approx(gs2.l2_norm**2, rel=1e-5)
    assert sens["1rho"][0] >= sens["0.5rho"][0]
    assert "exits" in sens["3rho"]


def test_gnuplot_script_has_four_panels(gs2):
    prof = Profile(BubbleConfig(TWO, 10.0, 0.1, 0.1), gs2, DOM)
    rep = build_blowup_report(prof, 0.1 - np.geomspace(0.05, 2e-3, 6))
    script = gnuplot_script(rep)
    assert script.count("set title") == 4
    assert "$local << EOD" in script and script.rstrip().endswith("unset multiplot")


def test_trivial_fields_and_weights():
    zero = Field(DOM, DOM.zeros())
    assert local_mass(zero, (0.5, 0.5), 0.2) == 0.0
    rng = np.random.default_rng(5)
    h = Field(DOM, rng.normal(size=DOM.shape) + 1j * rng.normal(size=DOM.shape))
    assert measure_pairing(h, np.zeros(DOM.shape)) == 0.0
    total = l2_norm_array(h.values, DOM) ** 2
    assert measure_pairing(h, np.ones(DOM.shape)) == pytest.approx(total, rel=1e-12)


def test_two_bubbles_carry_root_two_times_the_mass(gs2):
    one = Profile(BubbleConfig(TWO[:1], 10.0, 0.1, 0.1), gs2, DOM).glued(0.099)
    two = Profile(BubbleConfig(TWO, 10.0, 0.1, 0.1), gs2, DOM).glued(0.099)
    ratio = l2_norm_array(two, DOM) / l2_norm_array(one, DOM)
    assert ratio == pytest.approx(np.sqrt(2), rel=1e-10)


def test_local_masses_and_the_outside_add_up(gs2):
    h = Field(DOM, Profile(BubbleConfig(TWO, 1.0, 0.1, 0.1), gs2, DOM).glued(0.05), 0.05)
    R = 0.15
    inside = sum(local_mass(h, x, R) for x in TWO)
    masks = [np.broadcast_to(ball_mask(DOM, x, R), DOM.shape) for x in TWO]
    outside = DOM.cell_volume * float(np.sum(np.abs(h.values[~(masks[0] | masks[1])]) ** 2))
    total = l2_norm_array(h.values, DOM) ** 2
    assert inside + outside == pytest.approx(total, rel=1e-12)


def test_gradient_rate_ignores_a_global_phase(gs1):
    dom = DomainSpec.square(1, 1.0, 2**12 - 1)
    prof = Profile(BubbleConfig(((0.5,),), 1.0, 0.05, 0.2), gs1, dom)
    series = [Field(dom, prof.glued(t), t) for t in 0.05 - np.geomspace(5e-3, 5e-4, 6)]
    turned = [Field(dom, np.exp(0.7j) * h.values, h.time) for h in series]
    a, b = gradient_rate_fit(series, 1.0, 0.05, 1, gs1), gradient_rate_fit(turned, 1.0, 0.05, 1, gs1)
    assert b["slope"] == pytest.approx(a["slope"], rel=1e-12)
