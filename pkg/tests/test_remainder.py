import math

import numpy as np
import pytest

from nlslab.profile import BubbleConfig, Profile
from nlslab.remainder import (
    NotContractingError,
    RemainderError,
    RemainderProblem,
    RemainderTrajectory,
    WeightedSpaceParams,
    build_time_mesh,
    default_delta,
    duhamel,
    duhamel_all,
    fixed_point,
    weighted_distance,
)
from nlslab.spectral import DomainSpec, Field, backward, forward
from nlslab.verify import scalar_identity_error

DOM = DomainSpec.square(2, 1.0, 63)
TWO = ((0.25, 0.5), (0.75, 0.5))


def params(**kw):
    base = dict(delta=0.5, alpha=0.5, lam=100.0, blow_time=2e-4)
    base.update(kw)
    return WeightedSpaceParams(**base)


def test_parameter_validation():
    p = params()
    assert p.beta == pytest.approx(0.75)
    assert p.kappa == pytest.approx(0.005)
    with pytest.raises(ValueError):
        params(alpha=1.0)
    with pytest.raises(ValueError):
        params(alpha=0.5, dimension=3)  # 4/d - 1 = 1/3
    with pytest.raises(ValueError):
        params(delta=-1.0)


def test_mesh_is_geometric_and_cut_where_the_weight_underflows():
    p = params()
    mesh = build_time_mesh(p, 400, 0.97)
    gaps = p.blow_time - mesh.nodes
    assert mesh.nodes[0] == 0.0
    assert np.allclose(gaps[1:] / gaps[:-1], 0.97)
    assert 1 < mesh.active < mesh.size
    last = gaps[mesh.active - 1]
    assert p.delta / (p.lam * last) <= 300 * math.log(10) + 1e-9
    assert mesh.index_of(mesh.nodes[7]) == 7
    with pytest.raises(RemainderError, match="not a mesh node"):
        mesh.index_of(0.5 * (mesh.nodes[3] + mesh.nodes[4]))


def test_mesh_drops_duplicate_nodes():
    mesh = build_time_mesh(params(delta=1e-12), 2000, 0.5)
    assert np.all(np.diff(mesh.nodes) > 0)
    with pytest.raises(ValueError):
        build_time_mesh(params(), 1, 0.9)
    with pytest.raises(ValueError):
        build_time_mesh(params(), 10, 1.0)


@pytest.mark.parametrize("ratio", [0.9, 0.97])
def test_weight_integral_identity(ratio):
    assert scalar_identity_error(M=200, ratio=ratio) < 1e-6


def _random_sources(mesh, seed):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=DOM.shape) + 1j * rng.normal(size=DOM.shape) for _ in range(mesh.active)]


def test_duhamel_is_linear_and_vanishes_on_zero():
    p = params()
    mesh = build_time_mesh(p, 100, 0.9)
    a, b = _random_sources(mesh, 1), _random_sources(mesh, 2)
    da, db = duhamel_all(a, mesh, p.kappa, DOM), duhamel_all(b, mesh, p.kappa, DOM)
    dab = duhamel_all([2.0 * x - 3j * y for x, y in zip(a, b)], mesh, p.kappa, DOM)
    for m in range(mesh.size):
        ref = 2.0 * da[m] - 3j * db[m]
        scale = max(np.max(np.abs(ref)), 1e-300)
        assert np.max(np.abs(dab[m] - ref)) <= 1e-12 * scale
    zero = duhamel_all([DOM.zeros() for _ in range(mesh.active)], mesh, p.kappa, DOM)
    assert all(not np.any(z) for z in zero)
    # the integral runs from t to T, so the last node carries nothing
    assert not np.any(da[mesh.active - 1])


def test_weighted_distance_is_a_metric():
    p = params()
    mesh = build_time_mesh(p, 60, 0.9)
    rng = np.random.default_rng(3)

    def traj():
        # states past the cutoff are zero, as in every trajectory Φ produces
        states = [1e-3 * rng.normal(size=DOM.shape) + 0j if m < mesh.active else DOM.zeros() for m in range(mesh.size)]
        return RemainderTrajectory(mesh, states, p, DOM)

    u, v, w = traj(), traj(), traj()
    assert weighted_distance(u, u) == 0.0
    assert weighted_distance(u, v) == pytest.approx(weighted_distance(v, u), rel=1e-14)
    assert weighted_distance(u, w) <= (weighted_distance(u, v) + weighted_distance(v, w)) * (1 + 1e-14)
    assert 0 < weighted_distance(u, v) < math.inf


def test_picard_contracts_for_large_lambda(gs2):
    prof = Profile(BubbleConfig(TWO, 100.0, 2e-4, 0.1), gs2, DOM)
    delta, fit = default_delta(prof)
    assert delta <= 0.8 * gs2.decay_constants[1] * 0.1 + 1e-15
    assert fit["delta_fit"] > 0
    p = WeightedSpaceParams(delta, 0.5, 100.0, 2e-4)
    problem = RemainderProblem(prof, p, build_time_mesh(p, 400, 0.97))
    res = fixed_point(problem, tol=1e-8)
    assert res.contraction_factor < 0.5
    assert res.distances[-1] < 1e-8
    assert res.residual < 1e-8
    # the remainder is exponentially small next to the profile
    from nlslab.spectral import l2_norm_array

    assert l2_norm_array(res.trajectory.states[0], DOM) < 1e-3 * l2_norm_array(problem.glued(0), DOM)
    report = res.report()
    assert report["iterations"] == res.iterations and report["mesh"]["ratio"] == 0.97


def test_vanishing_source_gives_the_zero_remainder(gs2):
    # λT = 2e-5: S₀ underflows everywhere, so u = 0 is the exact fixed point
    prof = Profile(BubbleConfig(TWO, 0.1, 2e-4, 0.1), gs2, DOM)
    delta, fit = default_delta(prof)
    assert fit["delta_fit"] is None
    p = WeightedSpaceParams(delta, 0.5, 0.1, 2e-4)
    res = fixed_point(RemainderProblem(prof, p, build_time_mesh(p, 100, 0.9)))
    assert res.contraction_factor == 0.0
    assert all(not np.any(u) for u in res.trajectory.states)


def test_small_lambda_is_reported_as_not_contracting(gs2):
    prof = Profile(BubbleConfig(TWO, 0.1, 0.05, 0.1), gs2, DOM)
    delta, _ = default_delta(prof)
    p = WeightedSpaceParams(delta, 0.5, 0.1, 0.05)
    with pytest.raises(NotContractingError, match="not contracting"):
        fixed_point(RemainderProblem(prof, p, build_time_mesh(p, 200, 0.97)))


def _stationary(g, s):
    return backward(np.exp(-1j * s * DOM.eigenvalues) * forward(g, DOM), DOM)


@pytest.mark.parametrize("delta, lam", [(1e-6, 1e6), (0.5, 100.0)])
def test_stationary_source_integrates_exactly(delta, lam):
    # F(s) = e^{isΔ} g is constant in the interaction picture: i ∫_t^{s*} ... = i (s* - t) e^{itΔ} g,
    # where s* is the last node kept before the underflow cutoff (T itself up to T q^M)
    p = params(delta=delta, lam=lam)
    mesh = build_time_mesh(p, 200, 0.9)
    x, y = DOM.coordinates
    g = np.sin(np.pi * x) * np.sin(2 * np.pi * y) + 0.3j * np.sin(3 * np.pi * x) * np.sin(np.pi * y)
    out = duhamel_all([_stationary(g, s) for s in mesh.nodes[: mesh.active]], mesh, p.kappa, DOM)
    end = mesh.nodes[mesh.active - 1]
    for m in range(0, mesh.active, 7):
        t = mesh.nodes[m]
        ref = 1j * (end - t) * _stationary(g, t)
        assert np.max(np.abs(out[m] - ref)) < 1e-12 * p.blow_time
    if mesh.active == mesh.size:
        ref = 1j * p.blow_time * g
        assert np.max(np.abs(out[0] - ref)) / np.max(np.abs(ref)) < 1e-8
    single = duhamel(lambda s: Field(DOM, _stationary(g, s), s), mesh.nodes[3], mesh, p.kappa)
    assert np.allclose(single.values, out[3], rtol=0, atol=1e-14 * p.blow_time)


def test_converged_remainder_lives_in_the_weighted_space(gs2):
    prof = Profile(BubbleConfig(TWO, 100.0, 2e-4, 0.1), gs2, DOM)
    delta, _ = default_delta(prof)
    p = WeightedSpaceParams(delta, 0.5, 100.0, 2e-4)
    problem = RemainderProblem(prof, p, build_time_mesh(p, 200, 0.94))
    tol = 1e-8
    res = fixed_point(problem, tol=tol)
    traj = res.trajectory
    assert traj.weighted_sup_l2 <= 1
    assert traj.gamma_fit() >= p.alpha * p.delta
    assert res.residual < 2 * tol
    # I₀ = Φ(0) is bounded in the weighted norm and decays toward T
    i0 = problem.i0()
    assert np.isfinite(i0.weighted_sup_l2) and i0.weighted_sup_l2 < 1
    h2 = i0.h2[: problem.mesh.active]
    assert np.all(np.diff(h2) <= 0)
