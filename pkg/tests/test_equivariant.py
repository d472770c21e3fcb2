import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recm import tensor as T
from recm.equivariant import (
    ChannelMixLayer,
    LinearIntertwiner,
    UnconstrainedTerm,
    apply_relaxed,
    check_equivariance,
    clamp_norm,
    reynolds_operator,
    reynolds_project,
)
from recm.exceptions import ContractError, ShapeError
from recm.groups import copies_rep, det_rep, get_group, standard_rep, trivial_rep

FINITE = ["C2", "C4", "S2", "S3"]


def test_swap_projection_by_hand():
    s2 = get_group("S2")
    rep = standard_rep(s2)
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(reynolds_project(w, rep, rep, s2), [[2.5, 2.5], [2.5, 2.5]], atol=1e-15)


def test_sign_to_trivial_projects_to_zero():
    c2 = get_group("C2")
    assert np.array_equal(reynolds_project(np.array([[3.0]]), det_rep(), trivial_rep(1), c2), [[0.0]])
    assert np.array_equal(reynolds_project(np.array([[7.0]]), det_rep(), det_rep(), c2), [[7.0]])


def test_projection_rejects_bad_inputs():
    c4 = get_group("C4")
    rep = standard_rep(c4)
    with pytest.raises(ShapeError):
        reynolds_project(np.ones((3, 2)), rep, rep, c4)
    with pytest.raises(ContractError):
        reynolds_operator(standard_rep(get_group("SO2")), standard_rep(get_group("SO2")), get_group("SO2"))


@pytest.mark.parametrize("name", FINITE)
@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_projection_properties(name, seed):
    rng = np.random.default_rng(seed)
    g = get_group(name)
    std = standard_rep(g)
    rep_in, rep_out = copies_rep(std, 2), std
    w1, w2 = rng.standard_normal((2, rep_out.dim, rep_in.dim))
    p1 = reynolds_project(w1, rep_in, rep_out, g)
    assert np.abs(reynolds_project(p1, rep_in, rep_out, g) - p1).max() < 1e-12
    a, b = rng.standard_normal(2)
    lin = reynolds_project(a * w1 + b * w2, rep_in, rep_out, g)
    assert np.abs(lin - (a * p1 + b * reynolds_project(w2, rep_in, rep_out, g))).max() < 1e-12
    for el in g.elements:
        assert np.abs(p1 @ rep_in(el) - rep_out(el) @ p1).max() < 1e-10
        conj = rep_out(el).T @ w1 @ rep_in(el)
        assert np.abs(reynolds_project(conj, rep_in, rep_out, g) - p1).max() < 1e-10


def test_operator_agrees_with_direct_average():
    g = get_group("S3")
    rep = standard_rep(g)
    w = np.random.default_rng(0).standard_normal((3, 3))
    via_op = (reynolds_operator(rep, rep, g) @ w.reshape(-1)).reshape(3, 3)
    assert np.abs(via_op - reynolds_project(w, rep, rep, g)).max() < 1e-13


def test_intertwiner_dimensions():
    # the commutant of the quarter turn is {aI + bJ}; S3 on R^3 has {aI + b 11^T}
    for name, dim in (("C4", 2), ("S3", 2), ("C2", 1)):
        g = get_group(name)
        rep = standard_rep(g)
        assert LinearIntertwiner(rep, rep, g).n_free_parameters() == dim


@pytest.mark.parametrize("name", FINITE)
def test_intertwiner_layer_equivariant(name):
    g = get_group(name)
    std = standard_rep(g)
    layer = LinearIntertwiner(copies_rep(std, 2), copies_rep(std, 3), g, rng=np.random.default_rng(1))
    err = check_equivariance(lambda v: layer(v).data, g, copies_rep(std, 2), copies_rep(std, 3), batch=3)
    assert err < 1e-10


@pytest.mark.parametrize("name", ["SO2", "SO3"])
def test_channel_mix_equivariant(name):
    g = get_group(name)
    std = standard_rep(g)
    layer = ChannelMixLayer(3, 2, g.dim, rng=np.random.default_rng(2))
    err = check_equivariance(lambda v: layer(v).data, g, copies_rep(std, 3), copies_rep(std, 2), batch=3)
    assert err < 1e-12


def test_dense_term_breaks_equivariance():
    g = get_group("C4")
    std = standard_rep(g)
    broken = 0
    for seed in range(100):
        term = UnconstrainedTerm("dense", 2, 2, rng=np.random.default_rng(seed))
        if check_equivariance(lambda v: term(T.tensor(v)).data, g, std, std, n_samples=20) > 0.01:
            broken += 1
    assert broken >= 99


def test_apply_relaxed_examples():
    rng = np.random.default_rng(3)
    z = T.tensor(rng.standard_normal((4, 2)))
    w = rng.standard_normal((2, 2))
    eq_out = T.matmul(z, T.tensor(w.T))
    dense = UnconstrainedTerm("dense", 2, 2, params=w)
    bias = UnconstrainedTerm("bias", 2, 2, params=np.ones(2))
    outs = [dense(z), bias(z)]
    assert np.array_equal(apply_relaxed(eq_out, outs, 1.0, [0.0, 0.0]).data, eq_out.data)
    assert np.array_equal(apply_relaxed(eq_out, outs, 0.0, [1.0, 0.0]).data, outs[0].data)
    assert np.allclose(apply_relaxed(eq_out, outs, 1.0, [0.5, 0.0]).data, 1.5 * eq_out.data, atol=1e-14)
    with pytest.raises(ContractError):
        apply_relaxed(eq_out, outs, 1.0, [0.5])


def test_noise_term_train_versus_eval():
    term = UnconstrainedTerm("noise", 2, 3, norm_bound=1.0)
    x = T.tensor(np.ones((5, 2)))
    assert np.array_equal(term(x, training=False).data, np.zeros((5, 3)))
    a = term(x, rng=np.random.default_rng(0)).data
    b = term(x, rng=np.random.default_rng(1)).data
    assert a.shape == (5, 3) and not np.array_equal(a, b)


def test_clamp_norm_examples():
    dense = UnconstrainedTerm("dense", 2, 2, params=2 * np.eye(2))
    clamp_norm(dense)
    assert np.linalg.norm(dense.params.data) == pytest.approx(1.0, abs=1e-15)
    small = UnconstrainedTerm("dense", 2, 2, params=np.array([[0.5, 0.0], [0.0, 0.0]]))
    clamp_norm(small)
    assert np.array_equal(small.params.data, [[0.5, 0.0], [0.0, 0.0]])
    edge = UnconstrainedTerm("bias", 2, 2, params=np.array([0.6, 0.8]))
    clamp_norm(edge)
    assert np.array_equal(edge.params.data, [0.6, 0.8])
    noise = UnconstrainedTerm("noise", 2, 2, params=np.array(-3.0))
    clamp_norm(noise)
    assert float(noise.params.data) == 1.0


def test_unknown_term_kind():
    with pytest.raises(ContractError):
        UnconstrainedTerm("rotation", 2, 2)
