import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlslab.spectral import (
    DIRICHLET,
    PERIODIC,
    DomainSpec,
    Field,
    backward,
    forward,
    h2_norm_array,
    l2_norm_array,
    laplacian_array,
    propagate_array,
    tail_fraction_array,
)

DOMAINS = [
    DomainSpec.square(1, 1.0, 63),
    DomainSpec.square(2, 1.0, 31),
    DomainSpec.square(2, 2.0, 32, PERIODIC),
    DomainSpec.square(3, 1.0, 15),
]


def random_values(dom, seed):
    rng = np.random.default_rng(seed)
    return rng.normal(size=dom.shape) + 1j * rng.normal(size=dom.shape)


@pytest.mark.parametrize("dom", DOMAINS, ids=lambda d: f"{d.kind}-{d.dimension}d")
@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=10, deadline=None)
def test_parseval_and_round_trip(dom, seed):
    f = random_values(dom, seed)
    c = forward(f, dom)
    assert math.sqrt(dom.cell_volume) * np.linalg.norm(c) == pytest.approx(l2_norm_array(f, dom), rel=1e-12)
    assert np.allclose(backward(c, dom), f, atol=1e-12)


def test_dirichlet_sine_is_laplacian_eigenfunction():
    dom = DomainSpec.square(2, 1.0, 63)
    x, y = dom.coordinates
    f = np.sin(2 * np.pi * x) * np.sin(3 * np.pi * y) + 0j
    assert np.allclose(laplacian_array(f, dom), -13 * np.pi**2 * f, atol=1e-9)


def test_periodic_mode_is_laplacian_eigenfunction():
    dom = DomainSpec.square(1, 2 * np.pi, 64, PERIODIC)
    (x,) = dom.coordinates
    f = np.exp(3j * x)
    assert np.allclose(laplacian_array(f, dom), -9 * f, atol=1e-10)


@pytest.mark.parametrize("dom", DOMAINS, ids=lambda d: f"{d.kind}-{d.dimension}d")
def test_propagator_is_unitary_group(dom):
    f = random_values(dom, 3)
    a = propagate_array(propagate_array(f, dom, 0.3), dom, 0.2)
    b = propagate_array(f, dom, 0.5)
    assert np.allclose(a, b, atol=1e-12)
    assert l2_norm_array(b, dom) == pytest.approx(l2_norm_array(f, dom), rel=1e-13)
    assert np.allclose(propagate_array(b, dom, -0.5), f, atol=1e-12)


def test_h2_norm_of_single_mode():
    dom = DomainSpec.square(1, 1.0, 127)
    (x,) = dom.coordinates
    f = np.sin(np.pi * x) + 0j
    l2 = math.sqrt(0.5)
    assert l2_norm_array(f, dom) == pytest.approx(l2, rel=1e-12)
    assert h2_norm_array(f, dom) == pytest.approx(l2 * (1 + np.pi**2), rel=1e-12)


def test_norms_do_not_underflow():
    dom = DomainSpec.square(2, 1.0, 31)
    f = 1e-200 * random_values(dom, 1)
    assert l2_norm_array(f, dom) == pytest.approx(1e-200 * l2_norm_array(f * 1e200, dom), rel=1e-12)


def test_tail_fraction_detects_high_modes():
    dom = DomainSpec.square(1, 1.0, 127)
    (x,) = dom.coordinates
    assert tail_fraction_array(np.sin(np.pi * x) + 0j, dom) < 1e-20
    assert tail_fraction_array(np.sin(120 * np.pi * x) + 0j, dom) > 0.99


@pytest.mark.parametrize(
    "kwargs, message",
    [
        (dict(dimension=4, side_lengths=(1,) * 4, grid_points=(15,) * 4), "dimension"),
        (dict(dimension=1, side_lengths=(1,), grid_points=(100,)), "7-smooth"),
        (dict(dimension=1, side_lengths=(-1,), grid_points=(15,)), "positive"),
        (dict(dimension=1, side_lengths=(1,), grid_points=(4,)), "at least 8"),
        (dict(dimension=1, side_lengths=(1,), grid_points=(15,), kind="sphere"), "kind"),
    ],
)
def test_domain_validation(kwargs, message):
    with pytest.raises(ValueError, match=message):
        DomainSpec(**kwargs)


def test_field_rejects_bad_values():
    dom = DomainSpec.square(1, 1.0, 15)
    with pytest.raises(ValueError, match="NaN"):
        Field(dom, np.full(dom.shape, np.nan))
    with pytest.raises(ValueError, match="shape"):
        Field(dom, np.zeros(16))


def test_domain_json_round_trip():
    for dom in DOMAINS:
        assert DomainSpec.from_json(dom.to_json()) == dom
    assert DOMAINS[0].kind == DIRICHLET


def test_sine_transform_matches_direct_summation():
    dom = DomainSpec.square(1, 1.0, 31)
    f = random_values(dom, 11)
    n = 31
    j = np.arange(1, n + 1)
    basis = np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(j, j) / (n + 1))
    assert np.allclose(forward(f, dom), basis @ f, atol=1e-12)
    assert not np.any(forward(np.zeros(dom.shape, complex), dom))


def test_single_sine_mode_has_one_coefficient():
    dom = DomainSpec.square(1, 2.0, 63)
    (x,) = dom.coordinates
    c = forward(np.sin(np.pi * x / 2.0) + 0j, dom)
    assert abs(c[0]) > 1
    assert np.max(np.abs(c[1:])) < 1e-12 * abs(c[0])


def test_propagator_special_cases():
    dom = DomainSpec.square(1, 2.0, 63)
    (x,) = dom.coordinates
    f = np.sin(np.pi * x / 2.0) + 0j
    assert np.array_equal(propagate_array(f, dom, 0.0), f)
    t = 0.7
    assert np.allclose(propagate_array(f, dom, t), np.exp(-1j * t * (np.pi / 2) ** 2) * f, atol=1e-13)
    g = random_values(DOMAINS[1], 4)
    d2 = DOMAINS[1]
    assert np.allclose(laplacian_array(propagate_array(g, d2, 0.1), d2), propagate_array(laplacian_array(g, d2), d2, 0.1), rtol=0, atol=1e-9)


def test_gradient_norm_closed_form_and_finite_differences():
    from nlslab.spectral import gradient_norm_sq

    dom = DomainSpec.square(1, 3.0, 255)
    (x,) = dom.coordinates
    f = Field(dom, np.sin(np.pi * x / 3.0) + 0j)
    assert gradient_norm_sq(f) == pytest.approx((np.pi / 3) ** 2 * 1.5, rel=1e-12)
    errors = []
    for n in (63, 127, 255):
        d2 = DomainSpec.square(2, 1.0, n)
        x, y = d2.coordinates
        g = np.sin(np.pi * x) * np.sin(2 * np.pi * y) * np.exp(x * y) + 0j
        errors.append(abs(gradient_norm_sq(Field(d2, g)) - _fd_gradient_sq(g)))
    assert errors[0] / errors[1] == pytest.approx(4, rel=0.1)
    assert errors[1] / errors[2] == pytest.approx(4, rel=0.1)


def _fd_gradient_sq(g):
    """2D forward-difference ‖∇g‖², boundary zeros included; h² cancels."""
    pad = np.pad(g, 1)
    dx = np.diff(pad, axis=0)[:, 1:-1]
    dy = np.diff(pad, axis=1)[1:-1, :]
    return float(np.sum(np.abs(dx) ** 2) + np.sum(np.abs(dy) ** 2))
