import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affinepoly.fem1d import build_space, load_constant, uniform_space
from affinepoly.fields import DiscreteField, compute_theta, default_space, make_constant, make_disjoint_inclusions, make_haar
from affinepoly.multiindex import MultiIndex, is_downward_closed
from affinepoly.taylor import (
    IncompleteLayerError,
    closed_form_constant,
    greedy_expand,
    layer_energy,
    layer_size,
    layerwise,
    new_map,
    taylor_batch,
    taylor_step,
)

Z = MultiIndex.zero()
e = MultiIndex.unit


def _setup(field, elements=None):
    space = default_space(field, elements)
    disc = DiscreteField(field, space)
    return disc, load_constant(space, 1.0)


def test_closed_form_constant_field():
    b = (0.3, 0.1)
    disc, load = _setup(make_constant(b), 16)
    cm = layerwise(disc, load, 4)
    assert len(cm) == sum(layer_size(2, k) for k in range(5))
    t0 = cm[Z]
    for nu in cm.keys:
        ref = closed_form_constant(t0, b, nu)
        assert disc.v_norms(cm[nu] - ref)[0] <= 1e-12 * disc.v_norms(ref)[0]
    # even order: t_{2e_1} = b_1^2 t_0, t_{e_1+e_2} = 2 b_1 b_2 t_0
    assert np.allclose(cm[e(1, 2)], 0.09 * t0, rtol=1e-12)
    assert np.allclose(cm[e(1) + e(2)], 2 * 0.03 * t0, rtol=1e-12)


def test_t0_parabola_and_zero_psi():
    fld = make_constant((0.0,))
    space = build_space(np.linspace(0, 1, 9))
    disc = DiscreteField(fld, space)
    cm = new_map(disc, load_constant(space, 1.0))
    assert np.allclose(cm[Z], space.interpolate(lambda x: x * (1 - x) / 2), atol=1e-14)
    assert np.allclose(taylor_step(cm, e(1)), 0.0)


def test_batch_errors():
    disc, load = _setup(make_constant((0.2, 0.1)), 8)
    cm = new_map(disc, load)
    with pytest.raises(ValueError):
        taylor_batch(cm, [Z])
    with pytest.raises(KeyError):
        taylor_batch(cm, [e(1, 2)])


def test_layer_energy_incomplete():
    disc, load = _setup(make_constant((0.2, 0.1, 0.05)), 8)
    cm = layerwise(disc, load, 1)
    assert layer_size(3, 2) == 6
    with pytest.raises(IncompleteLayerError):
        layer_energy(cm, 2)
    assert layer_energy(cm, 0) > layer_energy(cm, 1) > 0


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.3, 3.0), st.integers(1, 6))
def test_layer_decay_inclusions(theta, beta, J):
    fld = make_disjoint_inclusions(beta, theta, J)
    disc, load = _setup(fld, 64)
    cm = layerwise(disc, load, 4)
    th = compute_theta(fld)
    sigma = th / (2 - th)
    for k in range(1, 5):
        assert layer_energy(cm, k) <= sigma * layer_energy(cm, k - 1) + 1e-12


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 0.9), st.floats(0.5, 2.0))
def test_layer_decay_haar(theta, alpha):
    fld = make_haar(alpha, theta, 1)
    disc, load = _setup(fld)
    cm = layerwise(disc, load, 4)
    sigma = compute_theta(fld) / (2 - compute_theta(fld))
    for k in range(1, 5):
        assert layer_energy(cm, k) <= sigma * layer_energy(cm, k - 1) + 1e-12


def test_greedy_exact_size_and_closure():
    fld = make_disjoint_inclusions(1.0, 0.5, 32)
    disc, load = _setup(fld, 128)
    for N in (1, 2, 37, 200):
        cm, lam = greedy_expand(disc, load, N)
        assert len(lam) == N == len(cm.members)
        assert is_downward_closed(cm.members)
        assert set(lam) == cm.members


def _naive_greedy(disc, load, N, bulk):
    """Reference: compute the whole reduced margin each sweep and move the
    top ceil(bulk |Lambda|) by norm (ties: canonical order)."""
    from affinepoly.multiindex import DownwardClosedSet

    cm = new_map(disc, load)
    lam = DownwardClosedSet(disc.field.J)
    while len(lam) < N:
        margin = sorted(lam.reduced_margin, key=MultiIndex.sort_key)
        todo = [m for m in margin if m not in cm]
        if todo:
            taylor_batch(cm, todo)
        K = min(math.ceil(bulk * len(lam)), N - len(lam))
        ranked = sorted(margin, key=lambda m: (-cm.v_norm(m), m.sort_key()))
        for m in ranked[:K]:
            lam.add(m)
    return set(lam)


@pytest.mark.parametrize("family", ["inclusions", "haar"])
def test_bounded_selection_matches_naive_greedy(family):
    fld = make_disjoint_inclusions(0.5, 0.5, 24) if family == "inclusions" else make_haar(1.0, 0.5, 3)
    disc, load = _setup(fld, 96 if family == "inclusions" else None)
    cm, lam = greedy_expand(disc, load, 300, bulk=0.2)
    assert set(lam) == _naive_greedy(disc, load, 300, 0.2)


def test_final_margin_is_reduced_margin():
    fld = make_disjoint_inclusions(1.0, 0.5, 16)
    disc, load = _setup(fld, 64)
    cm, lam = greedy_expand(disc, load, 120, final_margin=True)
    margin = {n for n in cm.keys if n not in cm.members}
    assert margin == lam.reduced_margin


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 12), st.floats(0.3, 2.0), st.floats(0.1, 0.9))
def test_margin_bounds_dominate(J, beta, theta):
    fld = make_disjoint_inclusions(beta, theta, J)
    disc, load = _setup(fld, 64)
    cm, lam = greedy_expand(disc, load, 25, final_margin=True)
    for mu in lam.reduced_margin:
        # ||t_mu||_abar <= sum_j ||psi_j t_{mu-e_j}' / sqrt(abar)||
        bound = sum(disc.coupling_bounds(cm[p])[0, j - 1] for j, p in mu.backward_neighbors())
        assert cm.a_norm(mu) <= bound * (1 + 1e-10) / math.sqrt(fld.abar_min)


def test_greedy_deterministic():
    fld = make_haar(1.0, 0.5, 4)
    disc, load = _setup(fld)
    a, _ = greedy_expand(disc, load, 150)
    b, _ = greedy_expand(disc, load, 150)
    assert a.keys == b.keys
    assert np.array_equal(a.vectors, b.vectors)


def test_greedy_argument_errors():
    disc, load = _setup(make_constant((0.1,)), 8)
    with pytest.raises(ValueError):
        greedy_expand(disc, load, 0)
    with pytest.raises(ValueError):
        greedy_expand(disc, load, 5, bulk=0)
    with pytest.raises(ValueError):
        greedy_expand(disc, load, 5, selection="other")


def test_uniform_space_single_parameter_geometric():
    # one constant psi: ||t_k|| = b^k ||t_0||, so the greedy set is {0, .., N-1} e_1
    disc, load = _setup(make_constant((0.4,)), 8)
    cm, lam = greedy_expand(disc, load, 10)
    assert set(lam) == {e(1, k) if k else Z for k in range(10)}
    ratios = [cm.v_norm(e(1, k + 1)) / cm.v_norm(e(1, k) if k else Z) for k in range(9)]
    assert np.allclose(ratios, 0.4, rtol=1e-12)
    assert uniform_space(8).dof_count == 15
