import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from recm import tensor as T
from recm.equivariant import LinearIntertwiner, UnconstrainedTerm, check_equivariance
from recm.exceptions import ContractError, ShapeError
from recm.groups import copies_rep, det_rep, get_group, standard_rep, trivial_rep
from recm.layer import (
    RecmLayer,
    RecmState,
    UpdateNet,
    expected_l,
    l_theta,
    modulation_values,
    prune,
    state_update,
)
from recm.transport import GELU_LIPSCHITZ


class ConstantNet:
    """Stands in for r_theta when the test needs l to be a fixed vector c."""

    def __init__(self, c):
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        self.n_out = self.c.shape[0]

    def __call__(self, q):
        return T.tensor(np.tile(self.c, (q.shape[0], 1)))


def _c4_layer(rng, a=1e-3, w_init=0.5):
    g = get_group("C4")
    std = standard_rep(g)
    eq = LinearIntertwiner(std, copies_rep(std, 2), g, rng=rng)
    terms = [UnconstrainedTerm(k, 2, 4, rng=rng) for k in ("dense", "bias", "noise")]
    return RecmLayer(eq, terms, g.generating_set, std, trivial_rep(3), a=a, rng=rng, w_init=w_init), g, std


def test_constant_r_gives_zero_l():
    g = get_group("C4")
    net = UpdateNet(5, (16,), 16, rng=np.random.default_rng(0))
    for w in net.weights:
        w.data = np.zeros_like(w.data)
    net.biases[-1].data = np.arange(16.0)
    z = np.random.default_rng(1).standard_normal((7, 2))
    y = np.eye(3)[[0, 1, 2, 0, 1, 2, 0]]
    assert np.array_equal(l_theta(net, z, y, g.generating_set, standard_rep(g), trivial_rep(3)).data, np.zeros((7, 16)))


def test_invariant_r_gives_zero_l():
    # r depends on |z| only through a rotation-invariant feature built from the net input
    g = get_group("C4")

    class NormNet:
        n_out = 3

        def __call__(self, q):
            r = np.linalg.norm(q.data[:, :2], axis=1, keepdims=True)
            return T.tensor(np.concatenate([r, r**2, np.sin(r)], axis=1))

    z = np.random.default_rng(2).standard_normal((6, 2))
    y = np.ones((6, 1))
    out = l_theta(NormNet(), z, y, g.generating_set, standard_rep(g), trivial_rep(1)).data
    assert np.abs(out).max() < 1e-12


def test_sign_action_identity_readout():
    c2 = get_group("C2")
    net = UpdateNet(2, (), 1, weights=[(np.array([[1.0, 0.0]]), np.zeros(1))])
    z = np.array([[0.7], [-2.0]])
    y = np.zeros((2, 1))
    out = l_theta(net, z, y, c2.generating_set, det_rep(), trivial_rep(1)).data[:, 0]
    # brute force: r(z) minus the average of r over the generator images {-z}
    assert np.allclose(out, z[:, 0] - (-z[:, 0]), atol=1e-15)


def test_single_pair_shape_and_errors():
    g = get_group("C4")
    net = UpdateNet(3, (16,), 16, rng=np.random.default_rng(0))
    out = l_theta(net, np.ones(2), np.ones(1), g.generating_set, standard_rep(g), trivial_rep(1))
    assert out.shape == (16,)
    with pytest.raises(ShapeError):
        l_theta(net, np.ones((2, 2)), np.ones((3, 1)), g.generating_set, standard_rep(g), trivial_rep(1))
    with pytest.raises(ShapeError):
        l_theta(net, np.ones((2, 3)), np.ones((2, 1)), g.generating_set, standard_rep(g), trivial_rep(1))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_expected_l_vanishes_on_invariant_batches(seed):
    rng = np.random.default_rng(seed)
    g = get_group("C4")
    std = standard_rep(g)
    net = UpdateNet(4, (16,), 16, rng=rng)
    base_z, base_y = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    z = np.concatenate([base_z @ e.T for e in g.elements])
    y = np.concatenate([base_y @ e.T for e in g.elements])
    assert np.abs(expected_l(net, z, y, g.generating_set, std, std).data).max() < 1e-12


def _scalar_state(h0, a=1.0, b=1.0):
    st_ = RecmState.initial(1, a, b, m=1)
    st_.h = np.array([float(h0)])
    return st_


def test_state_update_by_hand():
    g = get_group("C2")
    st_ = _scalar_state(5.0)
    net = ConstantNet(1.0)
    state_update(st_, np.zeros((1, 1)), np.zeros((1, 1)), net, g.generating_set, det_rep(), trivial_rep(1))
    # a constant r makes l vanish, so h halves: (1 - 1/2) * 5 + (1/2) * 0
    assert st_.h[0] == 2.5
    assert st_.t == 1


def _run_constant(h0, c, steps, a=1.0, b=1.0):
    st_ = _scalar_state(h0, a, b)
    hs = []
    for _ in range(steps):
        st_.t += 1
        cw = st_.mixing_weight()
        st_.h = (1 - cw) * st_.h + cw * c
        hs.append(float(st_.h[0]))
    return hs


def test_recursion_examples_and_closed_form():
    hs = _run_constant(5.0, 1.0, 2)
    assert hs[0] == pytest.approx(3.0, abs=1e-15)
    assert hs[1] == pytest.approx(7.0 / 3.0, abs=1e-15)
    for t, h in enumerate(_run_constant(5.0, 1.0, 50), start=1):
        assert h == pytest.approx(5.0 / (1 + t) + t / (1 + t), abs=1e-13)
    assert abs(_run_constant(4.0, 0.0, 1000)[-1]) < 4.0 / 1000


def test_state_update_uses_l_theta():
    rng = np.random.default_rng(4)
    g = get_group("C4")
    std = standard_rep(g)
    net = UpdateNet(2 + 3, (16,), 16, rng=rng)
    st_ = RecmState.initial(3, a=0.3, b=1.0, m=16, rng=rng)
    st_.h = rng.standard_normal(16)
    h_prev = st_.h.copy()
    z, y = rng.standard_normal((4, 2)), np.eye(3)[[0, 1, 2, 1]]
    h = state_update(st_, z, y, net, g.generating_set, std, trivial_rep(3))
    c = 0.3 / (1 + 0.3)
    expect = (1 - c) * h_prev + c * expected_l(net, z, y, g.generating_set, std, trivial_rep(3)).data
    assert np.allclose(h.data, expect, atol=1e-14)
    assert np.array_equal(st_.h, h.data)


def test_state_update_rejects_bad_constants():
    g = get_group("C4")
    st_ = RecmState.initial(1, a=-1.0, m=16)
    with pytest.raises(ContractError):
        state_update(st_, np.zeros((1, 2)), np.zeros((1, 1)), UpdateNet(3), g.generating_set, standard_rep(g), trivial_rep(1))


def test_mixing_weight_in_unit_interval():
    st_ = RecmState.initial(1, a=0.7, b=0.2)
    assert all(0 < st_.mixing_weight(t) <= 1 for t in range(1, 1000))


def test_modulation_at_zero_and_gelu_one():
    st_ = RecmState.initial(2, a=1e-3, m=4, rng=np.random.default_rng(0))
    alphas, beta = modulation_values(st_)
    assert np.array_equal(alphas, [0.0, 0.0]) and beta == 1.0
    st_.w_alpha.data = np.array([[1.0, 0, 0, 0], [0, 0, 0, 0.5]])
    st_.h = np.array([1.0, 0, 0, 0])
    alphas, _ = modulation_values(st_)
    assert alphas[0] == pytest.approx(norm.cdf(1.0), abs=1e-15)
    assert alphas[0] == pytest.approx(0.8413447460685429, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(1e-3, 10))
def test_alpha_bounded_by_gelu_lipschitz(seed, scale):
    rng = np.random.default_rng(seed)
    st_ = RecmState.initial(3, a=1e-3, m=16, rng=rng, w_init=1.0)
    st_.h = scale * rng.standard_normal(16)
    alphas, beta = modulation_values(st_)
    assert (np.abs(alphas) <= GELU_LIPSCHITZ * np.linalg.norm(st_.h) + 1e-12).all()
    assert 0 <= beta <= 2


def test_fresh_layer_equals_equivariant_path_and_is_equivariant():
    rng = np.random.default_rng(5)
    layer, g, std = _c4_layer(rng)
    z = rng.standard_normal((6, 2))
    out = layer.forward(z, rng=rng, training=False).data
    assert np.array_equal(out, layer.eq_path(z).data)
    err = check_equivariance(lambda v: layer.forward(v, training=False).data, g, std, copies_rep(std, 2), batch=2)
    assert err < 1e-10


def test_step_hooks_bookkeeping():
    rng = np.random.default_rng(6)
    layer, g, std = _c4_layer(rng)
    with pytest.raises(ContractError):
        layer.step_hooks(np.eye(3)[[0]])
    layer.state.w_alpha.data[0] *= 4.0 / np.linalg.norm(layer.state.w_alpha.data[0])
    layer.un_terms[0].params.data = 5 * np.eye(4, 2)
    for expected_t in (1, 2):
        layer.forward(rng.standard_normal((4, 2)), rng=rng, n_points=2)
        layer.step_hooks(np.eye(3)[[0, 2]])
        assert layer.state.t == expected_t
    assert np.linalg.norm(layer.state.w_alpha.data, axis=1).max() <= 1 + 1e-15
    assert np.linalg.norm(layer.un_terms[0].params.data) <= 1 + 1e-15


def test_h_is_constant_on_the_tape_and_all_parameters_get_gradients():
    rng = np.random.default_rng(7)
    layer, g, std = _c4_layer(rng, a=0.5, w_init=1.0)
    layer.state.h = rng.standard_normal(16)
    layer.forward(rng.standard_normal((4, 2)), rng=rng, n_points=2)
    layer.step_hooks(np.eye(3)[[0, 2]])
    out = layer.forward(rng.standard_normal((4, 2)), rng=rng, n_points=2)
    T.backward(T.tsum(T.mul(out, out)))
    for p in layer.parameters():
        assert p.grad is not None and np.isfinite(p.grad).all(), p.name
    assert not isinstance(layer.state.h, T.Tensor)


def test_prune_threshold_logic():
    rng = np.random.default_rng(8)
    layer, g, std = _c4_layer(rng)
    layer.frozen = {"alphas": np.array([0.005, 0.5, 0.009]), "beta": 1.2}
    pruned, report = prune(layer, 0.01)
    assert report.retained == ["bias"] and report.removed == ["dense", "noise"]
    assert pruned.term_kinds == ["bias"]
    assert report.n_retained_unconstrained == 4


def test_prune_all_small_is_scaled_equivariant_path():
    rng = np.random.default_rng(9)
    layer, g, std = _c4_layer(rng)
    layer.state.h = 1e-4 * rng.standard_normal(16)
    pruned, report = prune(layer, 0.01)
    assert report.retained == [] and report.n_retained_unconstrained == 0
    z = rng.standard_normal((5, 2))
    assert np.allclose(pruned.forward(z, training=False).data, report.beta * layer.eq_path(z).data, atol=1e-15)
    err = check_equivariance(lambda v: pruned.forward(v, training=False).data, g, std, copies_rep(std, 2), batch=2)
    assert err < 1e-10
    assert (np.abs(report.alphas) < 0.01).all()


def test_state_boundedness_under_bounded_l():
    rng = np.random.default_rng(10)
    st_ = RecmState.initial(1, a=0.2, m=1)
    st_.h = np.array([0.3])
    for _ in range(500):
        st_.t += 1
        c = st_.mixing_weight()
        st_.h = (1 - c) * st_.h + c * rng.uniform(-2, 2, size=1)
        assert abs(st_.h[0]) <= 2.0
