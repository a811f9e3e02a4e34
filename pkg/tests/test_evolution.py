import csv
import io

import numpy as np
import pytest

from nlslab.evolution import (
    CSV_HEADER,
    EvolutionConfig,
    conserved_quantities,
    evolve,
    step,
    step_reverse,
    time_reversal_error,
)
from nlslab.profile import BubbleConfig, Profile
from nlslab.spectral import PERIODIC, DomainSpec, Field, h2_norm_array, l2_norm_array, propagate_array

DOM = DomainSpec.square(2, 1.0, 63)


def sine_mode(amplitude=0.1):
    x, y = DOM.coordinates
    return Field(DOM, amplitude * np.sin(np.pi * x) * np.sin(np.pi * y) + 0j)


def test_small_mode_conserves_mass():
    res = evolve(sine_mode(), EvolutionConfig(t_end=0.05, dt_max=1e-3))
    assert res.halt_reason == "t_end"
    assert res.times[-1] == pytest.approx(0.05, abs=1e-15)
    assert res.mass_drift() < 1e-12


def test_tiny_data_follow_the_linear_flow():
    u0 = sine_mode(1e-8)
    u = u0
    for _ in range(10):
        u = step(u, 1e-3)
    assert np.allclose(u.values, propagate_array(u0.values, DOM, 1e-2), atol=1e-20)


def test_time_reversal():
    rng = np.random.default_rng(0)
    u0 = Field(DOM, rng.normal(size=DOM.shape) + 1j * rng.normal(size=DOM.shape))
    assert time_reversal_error(u0, 1e-3, 50) < 1e-12
    assert np.allclose(step_reverse(step(u0, 1e-3), 1e-3).values, u0.values, atol=1e-12)


def test_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        step(sine_mode(), 0.0)
    with pytest.raises(ValueError):
        step_reverse(sine_mode(), -1.0)


def test_stops_are_hit_exactly_and_reported():
    seen = []
    stops = [0.0013, 0.0021, 0.0099]
    res = evolve(sine_mode(), EvolutionConfig(t_end=0.01, dt_max=1e-3), stops=stops, on_stop=lambda f: seen.append(f.time))
    assert seen == stops
    assert set(stops) <= set(res.times.tolist())


def test_adaptive_step_shrinks_with_amplitude():
    small = evolve(sine_mode(0.1), EvolutionConfig(t_end=1e-2, dt_safety=0.1, dt_max=1.0))
    big = evolve(sine_mode(30.0), EvolutionConfig(t_end=1e-2, dt_safety=0.1, dt_max=1.0))
    assert big.column("dt")[1] == pytest.approx(0.1 / big.column("linf")[0] ** 2)
    assert len(big.times) > len(small.times)


def test_resolution_guard_halts_a_collapsing_bubble(gs2):
    prof = Profile(BubbleConfig(((0.5, 0.5),), 10.0, 0.005, 0.1), gs2, DOM)
    u0 = Field(DOM, prof.bubble(0, 0.0).value, 0.0)
    res = evolve(u0, EvolutionConfig(t_end=0.005, dt_safety=0.05, resolution_guard=1e-3))
    assert res.halt_reason == "resolution_guard"
    assert res.times[-1] < 0.005
    assert res.column("tail_fraction")[-1] > 1e-3
    assert res.mass_drift() < 1e-11


def test_energy_of_a_single_mode():
    dom = DomainSpec.square(1, 2 * np.pi, 64, PERIODIC)
    (x,) = dom.coordinates
    u = Field(dom, 0.5 * np.exp(2j * x))
    q = conserved_quantities(u)
    # ½‖∇u‖² - 1/6 ∫|u|⁶ on a 2π torus
    assert q["mass"] == pytest.approx(0.5 * np.sqrt(2 * np.pi), rel=1e-13)
    assert q["energy"] == pytest.approx(0.5 * 4 * 0.25 * 2 * np.pi - 0.5**6 * 2 * np.pi / 6, rel=1e-13)


def test_csv_output():
    res = evolve(sine_mode(), EvolutionConfig(t_end=3e-3, dt_max=1e-3))
    rows = list(csv.reader(io.StringIO(res.to_csv())))
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == len(res.times) + 1
    assert float(rows[-1][0]) == res.times[-1]
    assert res.to_csv() == evolve(sine_mode(), EvolutionConfig(t_end=3e-3, dt_max=1e-3)).to_csv()


@pytest.mark.parametrize("kw", [dict(dt_safety=0), dict(dt_max=-1), dict(resolution_guard=0.7), dict(t_end=float("nan"))])
def test_config_validation(kw):
    base = dict(t_end=1.0)
    base.update(kw)
    with pytest.raises(ValueError):
        EvolutionConfig(**base)


def test_mass_is_l2_norm():
    u = sine_mode(2.0)
    assert conserved_quantities(u)["mass"] == pytest.approx(l2_norm_array(u.values, DOM), rel=1e-14)


def test_zero_data_stay_zero():
    res = evolve(Field(DOM, DOM.zeros()), EvolutionConfig(t_end=1e-2))
    assert not np.any(res.final.values)
    assert res.halt_reason == "t_end"


@pytest.mark.parametrize("d", [1, 2])
def test_constant_on_the_torus(d):
    dom = DomainSpec.square(d, 2.0, 16, PERIODIC)
    c = 0.8
    u = Field(dom, np.full(dom.shape, c + 0j))
    vol = 2.0**d
    q = conserved_quantities(u)
    assert q["energy"] == pytest.approx(-d / (4 + 2 * d) * c ** ((4 + 2 * d) / d) * vol, rel=1e-13)
    # the flow is a pure phase rotation e^{i c^{4/d} t}
    res = evolve(u, EvolutionConfig(t_end=0.1))
    assert np.allclose(res.final.values, c * np.exp(1j * c ** (4 / d) * 0.1), rtol=1e-12)


def test_bubble_mass_is_the_ground_state_mass(gs2):
    dom = DomainSpec.square(2, 1.0, 127)
    prof = Profile(BubbleConfig(((0.5, 0.5),), 1.0, 0.03, 0.2), gs2, dom)
    u0 = Field(dom, prof.bubble(0, 0.0).value, 0.0)
    res = evolve(u0, EvolutionConfig(t_end=0.01))
    assert res.column("mass")[0] == pytest.approx(gs2.l2_norm, rel=1e-9)
    assert res.mass_drift() < 1e-12


def test_energy_is_conserved_for_smooth_data():
    res = evolve(sine_mode(1.0), EvolutionConfig(t_end=0.01, dt_max=1e-4))
    assert res.energy_drift() < 1e-6


def test_guard_halt_follows_a_large_norm_growth(gs2):
    prof = Profile(BubbleConfig(((0.5, 0.5),), 10.0, 0.005, 0.1), gs2, DOM)
    u0 = Field(DOM, prof.bubble(0, 0.0).value, 0.0)
    res = evolve(u0, EvolutionConfig(t_end=0.005, dt_safety=0.05, resolution_guard=0.1))
    assert res.halt_reason == "resolution_guard"
    assert h2_norm_array(res.final.values, DOM) >= 10 * h2_norm_array(u0.values, DOM)
