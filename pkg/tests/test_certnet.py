import json
import math

import numpy as np
import pytest

from advlyap.certnet import (CertificateParams, MlpArchitecture, OptimizerState, QuadraticCertificate,
                             adam_step, available_backends, decrease_terms, dumps_checkpoint, eval_V,
                             grad_theta, grad_x_V, init_params, load_checkpoint, quadratic_params,
                             save_checkpoint)
from advlyap.certnet import _backend
from advlyap.errors import CheckpointError
from advlyap.sim import pendulum_field, rollout_many, sample_initial_conditions

ARCH = MlpArchitecture(2, 20)


def oracle_V(params, x):
    """Independent matrix-arithmetic evaluation of x^T (L^T L + I) x."""
    lay = params.layers()
    a1 = np.tanh(lay["W1"] @ x + lay["b1"])
    a2 = np.tanh(lay["W2"] @ a1 + lay["b2"])
    L = (lay["W3"] @ a2 + lay["b3"]).reshape(2 * params.p, params.p)
    return float(x @ (L.T @ L + np.eye(params.p)) @ x)


def fd_grad_x(params, x, h=1e-5):
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (params.value(x + e) - params.value(x - e)) / (2 * h)
    return g


def pendulum_batch(n_traj=2, seed=0, keep=21):
    xis = sample_initial_conditions(n_traj, [-2, -2], [2, 2], seed)
    trs = rollout_many(pendulum_field(), xis, 8.0, 0.05, [0])
    X = np.concatenate([t.states[:keep] for t in trs])
    U = np.concatenate([t.derivs[:keep] for t in trs])
    return X, U


class TestParams:
    def test_parameter_count(self):
        assert init_params(ARCH, 1).theta.size == 648
        assert ARCH.n_params == 40 + 20 + 400 + 20 + 160 + 8
        assert ARCH.output_dim == 8

    def test_deterministic(self):
        assert init_params(ARCH, 3) == init_params(ARCH, 3)
        assert init_params(ARCH, 3) != init_params(ARCH, 4)

    def test_biases_zero_and_glorot_range(self):
        lay = init_params(ARCH, 1).layers()
        for b in ("b1", "b2", "b3"):
            assert np.all(lay[b] == 0.0)
        lim = math.sqrt(6.0 / (20 + 8))
        assert np.max(np.abs(lay["W3"])) <= lim

    def test_round_trip(self):
        p = init_params(ARCH, 5)
        q = CertificateParams.from_layers(ARCH, {k: v.copy() for k, v in p.layers().items()})
        np.testing.assert_array_equal(p.theta, q.theta)

    def test_nonfinite_rejected(self):
        th = init_params(ARCH, 0).theta
        th[3] = np.nan
        with pytest.raises(ValueError):
            CertificateParams(ARCH, th)

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            CertificateParams(ARCH, np.zeros(10))


class TestValue:
    def test_degenerate_quadratic(self, rng):
        p = quadratic_params(ARCH, 2)
        X = rng.normal(size=(10, 2))
        np.testing.assert_allclose(eval_V(p, X), np.sum(X ** 2, axis=1), rtol=1e-15)

    def test_zero_at_origin(self):
        assert eval_V(init_params(ARCH, 9), np.zeros(2)) == 0.0

    def test_pinned_against_oracle(self):
        p = init_params(ARCH, 1)
        x = np.array([1.0, 1.0])
        v = eval_V(p, x)
        assert v >= 2.0
        assert v == pytest.approx(oracle_V(p, x), rel=1e-13)

    def test_positive_definite(self, rng):
        for s in range(20):
            p = init_params(ARCH, s)
            X = rng.uniform(-3, 3, size=(50, 2))
            V = eval_V(p, X)
            assert np.all(V > 0) and np.all(V >= np.sum(X ** 2, axis=1) * (1 - 1e-15))

    def test_other_dimensions(self, rng):
        arch = MlpArchitecture(3, 7)
        p = init_params(arch, 0)
        x = rng.normal(size=3)
        assert eval_V(p, x) == pytest.approx(oracle_V(p, x), rel=1e-13)


class TestGradX:
    def test_quadratic(self):
        x = np.array([0.3, -0.7])
        np.testing.assert_allclose(grad_x_V(quadratic_params(ARCH), x), 2 * x, rtol=1e-15)

    def test_origin(self):
        np.testing.assert_array_equal(grad_x_V(init_params(ARCH, 4), np.zeros(2)), np.zeros(2))

    def test_finite_difference(self):
        p = init_params(ARCH, 1)
        x = np.array([0.3, -0.7])
        g, gfd = grad_x_V(p, x), fd_grad_x(p, x)
        assert np.linalg.norm(g - gfd) / np.linalg.norm(g) <= 1e-6

    def test_bounded_on_box(self):
        p = init_params(ARCH, 1)
        g = np.linspace(-3, 3, 50)
        S = np.array([[a, b] for a in g for b in g])
        assert np.isfinite(np.max(np.linalg.norm(grad_x_V(p, S), axis=1)))


class TestGradTheta:
    def test_dead_zone(self):
        p = quadratic_params(ARCH)
        X = np.array([[1.0, 0.0], [0.0, -2.0]])
        loss, g = grad_theta(p, X, -X, 0.4, 0.0)
        assert loss == 0.0 and np.all(g == 0.0)

    def test_identity_region(self):
        p = quadratic_params(ARCH)
        # V = x^2-like quadratic: <2x, u> + eta |x|^2 = 2*0.25 + 0 = 0.5
        loss, _ = grad_theta(p, np.array([[1.0, 0.0]]), np.array([[0.25, 0.0]]), 0.0, 0.0)
        assert loss == pytest.approx(0.5, abs=1e-15)

    def test_matches_decrease_terms(self):
        p = init_params(ARCH, 3)
        X, U = pendulum_batch()
        loss, _ = grad_theta(p, X, U, 0.4, 0.0)
        assert loss == pytest.approx(np.sum(np.maximum(decrease_terms(p, X, U, 0.4), 0.0)), rel=1e-12)

    def test_regularizer(self):
        p = init_params(ARCH, 3)
        X, U = pendulum_batch()
        l0, g0 = grad_theta(p, X, U, 0.4, 0.0)
        l1, g1 = grad_theta(p, X, U, 0.4, 0.1)
        assert l1 - l0 == pytest.approx(0.1 * p.theta @ p.theta, rel=1e-12)
        np.testing.assert_allclose(g1 - g0, 0.2 * p.theta, rtol=1e-9, atol=1e-12)

    def test_finite_difference_coordinates(self, rng):
        p = init_params(ARCH, 7)
        X, U = pendulum_batch()
        X, U = X[:8] * 3.0, U[:8] * 3.0
        loss, g = grad_theta(p, X, U, 0.4, 0.1)
        h = 1e-6
        for k in rng.choice(p.theta.size, 20, replace=False):
            e = np.zeros_like(p.theta)
            e[k] = h
            lp, _ = grad_theta(p.with_theta(p.theta + e), X, U, 0.4, 0.1)
            lm, _ = grad_theta(p.with_theta(p.theta - e), X, U, 0.4, 0.1)
            fd = (lp - lm) / (2 * h)
            assert abs(g[k] - fd) <= 1e-5 * max(abs(fd), 1e-3)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            grad_theta(init_params(ARCH, 0), np.empty((0, 2)), np.empty((0, 2)), 0.4, 0.1)

    def test_loss_decreases_under_adam(self):
        # a batch of the training size (1000 samples)
        p = init_params(ARCH, 0)
        X, U = pendulum_batch(25, keep=40)
        st = OptimizerState(p.theta.size)
        losses = []
        theta = p.theta
        for _ in range(51):
            loss, g = grad_theta(p.with_theta(theta), X, U, 0.4, 0.1)
            losses.append(loss)
            theta, st = adam_step(st, theta, g)
        assert np.mean(np.diff(losses) < 0) >= 0.9


class TestAdam:
    def test_first_step(self):
        st = OptimizerState(5, base_lr=0.005)
        th, _ = adam_step(st, np.zeros(5), np.ones(5))
        assert np.all(np.abs(th + 0.005) < 1e-5)

    def test_zero_gradient(self):
        th0 = np.arange(4.0)
        th, _ = adam_step(OptimizerState(4), th0, np.zeros(4))
        np.testing.assert_array_equal(th, th0)

    def test_cosine_endpoint(self):
        st = OptimizerState(3, total_steps=10, step=10)
        assert st.lr() == 0.0
        th0 = np.ones(3)
        th, _ = adam_step(st, th0, np.ones(3))
        np.testing.assert_array_equal(th, th0)

    def test_cosine_midpoint(self):
        assert OptimizerState(1, base_lr=0.004, total_steps=100).lr(50) == pytest.approx(0.002)

    def test_nonfinite_gradient(self):
        with pytest.raises(ValueError):
            adam_step(OptimizerState(2), np.zeros(2), np.array([np.inf, 0.0]))


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        p = init_params(ARCH, 11)
        path = tmp_path / "c.json"
        save_checkpoint(path, p)
        assert load_checkpoint(path) == p
        doc = json.loads(path.read_text())
        assert doc["version"] == 1 and doc["arch"] == {"p": 2, "h": 20}

    def test_version_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        doc = json.loads(dumps_checkpoint(init_params(ARCH, 0)))
        doc["version"] = 2
        path.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_dimension_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        doc = json.loads(dumps_checkpoint(init_params(ARCH, 0)))
        doc["theta"] = doc["theta"][:-1]
        path.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_arch_mismatch(self, tmp_path):
        path = tmp_path / "c.json"
        save_checkpoint(path, init_params(ARCH, 0))
        with pytest.raises(CheckpointError):
            load_checkpoint(path, expect_arch=MlpArchitecture(2, 10))

    def test_garbage(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("not json")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


def test_quadratic_certificate():
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    V = QuadraticCertificate(P)
    x = np.array([1.0, -1.0])
    assert V.value(x) == pytest.approx(x @ P @ x)
    np.testing.assert_allclose(V.grad(x), 2 * P @ x)


class TestBackends:
    def test_numpy_always_available(self):
        assert "numpy" in available_backends()

    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("ADVLYAP_BACKEND", "numpy")
        assert _backend.default_name() == "numpy"

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            _backend.get("fortran")

    @pytest.mark.skipif("cython" not in available_backends(), reason="compiled extension not built")
    @pytest.mark.parametrize("n", [1, 7, 300])
    def test_cython_matches_numpy(self, n, rng):
        p = init_params(ARCH, 2)
        X = rng.uniform(-2, 2, size=(n, 2))
        U = rng.normal(size=(n, 2))
        a, b = p.using("numpy"), p.using("cython")
        Va, Ga = a.value_and_grad(X)
        Vb, Gb = b.value_and_grad(X)
        np.testing.assert_allclose(Va, Vb, rtol=1e-13)
        np.testing.assert_allclose(Ga, Gb, rtol=1e-12, atol=1e-14)
        la, ga = grad_theta(a, X, U, 0.4, 0.1)
        lb, gb = grad_theta(b, X, U, 0.4, 0.1)
        assert la == pytest.approx(lb, rel=1e-12)
        np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-12)

    @pytest.mark.skipif("cython" not in available_backends(), reason="compiled extension not built")
    def test_auto_dispatch_consistent(self, rng):
        p = init_params(ARCH, 2)
        X = rng.uniform(-2, 2, size=(200, 2))
        np.testing.assert_allclose(p.using("auto").value(X), p.using("numpy").value(X), rtol=1e-13)
