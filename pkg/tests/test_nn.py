import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evalrl.nn import (
    AdamState,
    Mlp,
    adam_step,
    finite_diff_check,
    load_checkpoint,
    polyak_update,
    save_checkpoint,
    softplus,
    softplus_inverse,
)
from oracles import mlp_forward


def squared_loss(target):
    def loss(out):
        d = out - target
        return 0.5 * float(np.sum(d * d)), d

    return loss


def kl_loss(post):
    def loss(out):
        return float(np.sum(post * (np.log(post) - np.log(out)))), -post / out

    return loss


def random_net(rng, head):
    dims = [int(rng.integers(1, 6))] + [int(rng.integers(2, 8)) for _ in range(rng.integers(1, 3))]
    dims.append(int(rng.integers(2, 4)))
    return Mlp(dims, head, seed=int(rng.integers(2**31)))


class TestForward:
    @pytest.mark.parametrize("head", ["softplus", "softmax", "linear"])
    def test_matches_loop_oracle(self, head, rng):
        net = Mlp([3, 5, 4, 2], head, seed=7)
        for x in rng.normal(size=(5, 3)):
            assert np.allclose(net.forward(x), mlp_forward(net.params, x, head), rtol=1e-13, atol=1e-15)

    def test_batch_equals_rows(self, rng):
        net = Mlp([4, 8, 3], "softplus", seed=1)
        x = rng.normal(size=(6, 4))
        assert np.allclose(net.forward(x), np.array([net.forward(r) for r in x]), rtol=1e-14)

    def test_heads(self, rng):
        x = rng.normal(size=(10, 3)) * 50
        assert np.all(Mlp([3, 4, 2], "softplus", seed=0).forward(x) > 0)
        assert np.allclose(Mlp([3, 4, 2], "softmax", seed=0).forward(x).sum(axis=1), 1.0)

    def test_input_dimension_checked(self):
        with pytest.raises(ValueError, match="input dimension"):
            Mlp([3, 4, 2]).forward(np.zeros(4))

    def test_bad_head(self):
        with pytest.raises(ValueError, match="head"):
            Mlp([3, 2], "tanh")

    def test_init_is_seeded(self):
        a, b = Mlp([3, 4, 2], seed=5), Mlp([3, 4, 2], seed=5)
        assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
        bound = 1 / np.sqrt(3)
        assert np.all(np.abs(a.params[0]) <= bound)


class TestSoftplus:
    def test_inverse_round_trip(self):
        y = np.array([1e-300, 1e-20, 1e-3, 1.0, 30.0, 1e6])
        assert np.allclose(softplus(softplus_inverse(y)), y, rtol=1e-12)

    def test_inverse_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            softplus_inverse(np.array([0.0]))

    def test_no_overflow(self):
        assert softplus(np.array([1000.0]))[0] == 1000.0
        assert softplus(np.array([-1000.0]))[0] == 0.0


class TestGradients:
    @pytest.mark.parametrize("head", ["softplus", "linear"])
    def test_finite_differences_squared_loss(self, head):
        rng = np.random.default_rng(0 if head == "softplus" else 1)
        for _ in range(50):
            net = random_net(rng, head)
            x = rng.normal(size=(int(rng.integers(1, 5)), net.layer_dims[0]))
            target = rng.uniform(0.1, 2.0, size=(x.shape[0], net.layer_dims[-1]))
            rep = finite_diff_check(net, x, squared_loss(target))
            assert rep.passed, rep

    def test_finite_differences_softmax_kl(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            net = random_net(rng, "softmax")
            x = rng.normal(size=(int(rng.integers(1, 5)), net.layer_dims[0]))
            post = rng.dirichlet(np.ones(net.layer_dims[-1]), size=x.shape[0])
            rep = finite_diff_check(net, x, kl_loss(post))
            assert rep.passed, rep

    def test_logit_gradient_matches_head_gradient(self, rng):
        net = Mlp([3, 6, 3], "softmax", seed=3)
        x = rng.normal(size=(4, 3))
        post = rng.dirichlet(np.ones(3), size=4)
        p = net.forward(x, keep_cache=True)
        via_head = net.backward(-post / p)
        p = net.forward(x, keep_cache=True)
        via_logits = net.backward_logits(p - post)
        assert all(np.allclose(a, b, atol=1e-12) for a, b in zip(via_head, via_logits))

    def test_backward_needs_cache(self):
        with pytest.raises(RuntimeError):
            Mlp([2, 2]).backward(np.zeros(2))


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        net = Mlp([2, 1], "linear", params=[np.zeros((2, 1)), np.zeros(1)])
        state = AdamState.for_net(net, 0.1)
        adam_step(net, [np.array([[3.0], [-0.5]]), np.array([2.0])], state)
        assert np.allclose(net.params[0], [[-0.1], [0.1]], rtol=1e-6)
        assert np.allclose(net.params[1], [-0.1], rtol=1e-6)

    def test_reference_recursion(self, rng):
        # textbook Adam written out directly
        net = Mlp([3, 2], "linear", seed=0)
        w0 = net.params[0].copy()
        state = AdamState.for_net(net, 0.01)
        m = np.zeros_like(w0)
        v = np.zeros_like(w0)
        w = w0.copy()
        for t in range(1, 6):
            g = rng.normal(size=w0.shape)
            adam_step(net, [g, np.zeros(2)], state)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert np.allclose(net.params[0], w, rtol=1e-12, atol=1e-15)

    def test_non_finite_rejected(self):
        net = Mlp([1, 1])
        with pytest.raises(FloatingPointError):
            adam_step(net, [np.array([[np.nan]]), np.zeros(1)], AdamState.for_net(net, 0.1))

    def test_rejects_bad_lr(self):
        with pytest.raises(ValueError):
            AdamState.for_net(Mlp([1, 1]), 0.0)


class TestPolyak:
    def test_hard_copy(self):
        a, b = Mlp([3, 4, 2], seed=0), Mlp([3, 4, 2], seed=1)
        polyak_update(a, b, 1.0)
        assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1e-3, 1.0))
    def test_convex_mix(self, tau):
        a, b = Mlp([2, 3, 2], seed=0), Mlp([2, 3, 2], seed=1)
        expected = [(1 - tau) * p + tau * q for p, q in zip(a.params, b.params)]
        polyak_update(a, b, tau)
        assert all(np.allclose(p, e, rtol=1e-14, atol=1e-15) for p, e in zip(a.params, expected))

    def test_rejects_bad_tau(self):
        with pytest.raises(ValueError):
            polyak_update(Mlp([1, 1]), Mlp([1, 1]), 0.0)

    def test_rejects_mismatch(self):
        with pytest.raises(ValueError, match="architecture"):
            polyak_update(Mlp([1, 2]), Mlp([1, 3]), 0.5)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        nets = [Mlp([3, 4, 2], "softplus", seed=0), Mlp([3, 5, 2], "softmax", seed=1)]
        save_checkpoint(tmp_path / "c.npz", nets, {"theta": -0.25})
        back, extra = load_checkpoint(tmp_path / "c.npz")
        x = np.ones(3)
        for a, b in zip(nets, back):
            assert a.same_architecture(b)
            assert np.array_equal(a.forward(x), b.forward(x))
        assert float(extra["theta"]) == -0.25

    def test_version_checked(self, tmp_path):
        np.savez(tmp_path / "bad.npz", version=np.array(99), num_nets=np.array(0))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(tmp_path / "bad.npz")
