import math

import numpy as np
import pytest

from semisub.model import (
    DimensionError,
    InvalidOutcomeError,
    LikelihoodHead,
    MlpArchitecture,
    SsrModel,
    grad_log_likelihood,
    log_likelihood,
    mlp_forward,
    predict_mu,
)

TOY_ARCH = MlpArchitecture(input_dim=1, hidden_layers=((16, "relu"), (16, "relu")))


def finite_diff(f, x, eps=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy(); xp[i] += eps
        xm = x.copy(); xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


class TestArchitecture:
    def test_weight_count_matches_fan_in_plus_one_times_fan_out(self):
        arch = MlpArchitecture(1, ((16, "relu"), (16, "relu")))
        assert arch.weight_count == (1 + 1) * 16 + (16 + 1) * 16 + (16 + 1) * 1 == 321

    def test_small_single_hidden_layer(self):
        arch = MlpArchitecture(4, ((3, "relu"),))
        assert arch.weight_count == 5 * 3 + 4 * 1

    def test_flatten_roundtrip_exact(self):
        arch = MlpArchitecture(3, ((5, "tanh"), (4, "relu")))
        rng = np.random.default_rng(7)
        w = rng.standard_normal(arch.weight_count)
        assert np.array_equal(arch.flatten(arch.unflatten(w)), w)

    def test_rejects_bad_activation_and_width(self):
        with pytest.raises(ValueError):
            MlpArchitecture(1, ((4, "sigmoid"),))
        with pytest.raises(ValueError):
            MlpArchitecture(1, ((0, "relu"),))

    def test_zero_hidden_layers_is_a_plain_linear_layer(self):
        arch = MlpArchitecture(2, ())
        assert arch.weight_count == 3
        out = mlp_forward(arch, np.array([1.0, 2.0, 0.5]), np.array([[3.0, 4.0]]))
        assert out[0] == pytest.approx(1.0 * 3 + 2.0 * 4 + 0.5)


class TestPredictMu:
    def test_zero_network_pure_offset(self):
        model = SsrModel(p=2, arch=TOY_ARCH, head=LikelihoodHead("normal", 1.0))
        params = model.join([-0.5, 1.0], np.zeros(model.d))
        mu = predict_mu(model, params, [[0.0, 1.0]], [[0.3]])
        assert mu[0] == pytest.approx(1.0)

    def test_all_zero_params_give_zero(self):
        model = SsrModel(p=2, arch=TOY_ARCH, head=LikelihoodHead("normal", 1.0))
        params = np.zeros(model.n_params)
        mu = predict_mu(model, params, [[4.2, -1.0]], [[0.7]])
        assert mu[0] == 0.0

    def test_matches_layer_by_layer_reevaluation(self):
        # independent forward-pass oracle: explicit loops, tanh net
        arch = MlpArchitecture(1, ((16, "tanh"), (16, "tanh")))
        model = SsrModel(p=1, arch=arch, head=LikelihoodHead("normal", 1.0))
        rng = np.random.default_rng(11)
        w = rng.standard_normal(arch.weight_count)
        u = 0.3

        off = 0
        a = [u]
        for fan_in, fan_out, act in ((1, 16, True), (16, 16, True), (16, 1, False)):
            W = np.array(w[off:off + fan_in * fan_out]).reshape(fan_out, fan_in)
            off += fan_in * fan_out
            b = np.array(w[off:off + fan_out])
            off += fan_out
            z = [sum(W[i][j] * a[j] for j in range(fan_in)) + b[i] for i in range(fan_out)]
            a = [math.tanh(v) for v in z] if act else z
        expected = a[0]

        params = model.join([0.0], w)
        got = predict_mu(model, params, [[0.0]], [[u]])
        assert got[0] == pytest.approx(expected, rel=1e-12)

    def test_additivity_with_zero_bias_output(self):
        # split theta-part and network-part; biases zero so no double counting
        model = SsrModel(p=2, arch=TOY_ARCH, head=LikelihoodHead("normal", 1.0))
        rng = np.random.default_rng(3)
        layers = TOY_ARCH.unflatten(rng.standard_normal(model.d))
        w = TOY_ARCH.flatten([(W, np.zeros_like(b)) for W, b in layers])
        theta = rng.standard_normal(2)
        X = rng.standard_normal((5, 2))
        U = rng.standard_normal((5, 1))
        both = predict_mu(model, model.join(theta, w), X, U)
        theta_only = predict_mu(model, model.join(theta, np.zeros(model.d)), X, U)
        net_only = predict_mu(model, model.join(np.zeros(2), w), X, U)
        assert np.allclose(both, theta_only + net_only, atol=1e-12)

    def test_dimension_mismatch_reports_sizes(self):
        model = SsrModel(p=2, arch=TOY_ARCH, head=LikelihoodHead("normal", 1.0))
        params = np.zeros(model.n_params)
        with pytest.raises(DimensionError, match="2"):
            predict_mu(model, params, [[1.0, 2.0, 3.0]], [[0.1]])


class TestLogLikelihood:
    def test_normal_single_point(self):
        model = SsrModel(p=1, arch=MlpArchitecture(1, ()), head=LikelihoodHead("normal", 1.0))
        params = np.zeros(model.n_params)
        ll = log_likelihood(model, params, [0.0], [[0.0]], [[0.0]])
        assert ll == pytest.approx(-0.5 * math.log(2 * math.pi))  # -0.918938...

    def test_poisson_single_point(self):
        model = SsrModel(p=1, arch=MlpArchitecture(1, ()), head=LikelihoodHead("poisson"))
        params = np.zeros(model.n_params)
        ll = log_likelihood(model, params, [0.0], [[0.0]], [[0.0]])
        assert ll == pytest.approx(-1.0)  # rate e^0 = 1, log P(0) = -1

    def test_bernoulli_single_point(self):
        model = SsrModel(p=1, arch=MlpArchitecture(1, ()), head=LikelihoodHead("bernoulli"))
        params = np.zeros(model.n_params)
        ll = log_likelihood(model, params, [1.0], [[0.0]], [[0.0]])
        assert ll == pytest.approx(math.log(0.5))

    def test_rejects_invalid_outcomes_with_row_index(self):
        model = SsrModel(p=1, arch=MlpArchitecture(1, ()), head=LikelihoodHead("poisson"))
        params = np.zeros(model.n_params)
        with pytest.raises(InvalidOutcomeError, match=r"\[1\]"):
            log_likelihood(model, params, [0.0, -3.0], [[0.0], [0.0]], [[0.0], [0.0]])
        model_b = SsrModel(p=1, arch=MlpArchitecture(1, ()), head=LikelihoodHead("bernoulli"))
        with pytest.raises(InvalidOutcomeError):
            log_likelihood(model_b, np.zeros(model_b.n_params), [0.5], [[0.0]], [[0.0]])

    def test_row_permutation_invariance(self):
        model = SsrModel(p=2, arch=TOY_ARCH)
        rng = np.random.default_rng(5)
        params = model.init_params(rng)
        y = rng.standard_normal(10)
        X = rng.standard_normal((10, 2))
        U = rng.standard_normal((10, 1))
        perm = rng.permutation(10)
        a = log_likelihood(model, params, y, X, U)
        b = log_likelihood(model, params, y[perm], X[perm], U[perm])
        assert a == pytest.approx(b, rel=1e-12)


def _random_case(rng, family):
    q = int(rng.integers(1, 4))
    p = int(rng.integers(1, 4))
    widths = tuple((int(rng.integers(2, 6)), rng.choice(["relu", "tanh"]))
                   for _ in range(int(rng.integers(0, 3))))
    if family == "normal":
        head = LikelihoodHead("normal", "learnable" if rng.random() < 0.5 else 0.7)
    else:
        head = LikelihoodHead(family)
    model = SsrModel(p=p, arch=MlpArchitecture(q, widths), head=head)
    n = int(rng.integers(3, 12))
    X = rng.standard_normal((n, p))
    U = rng.standard_normal((n, q))
    if family == "normal":
        y = rng.standard_normal(n)
    elif family == "poisson":
        y = rng.poisson(1.5, n).astype(float)
    else:
        y = rng.integers(0, 2, n).astype(float)
    params = model.init_params(rng)
    return model, params, y, X, U


class TestGradient:
    def test_zero_residual_theta_gradient(self):
        model = SsrModel(p=2, arch=TOY_ARCH, head=LikelihoodHead("normal", 1.0))
        params = np.zeros(model.n_params)
        g = grad_log_likelihood(model, params, np.zeros(4), np.ones((4, 2)), np.zeros((4, 1)))
        assert np.allclose(g[:2], 0.0)

    @pytest.mark.parametrize("family", ["normal", "poisson", "bernoulli"])
    def test_matches_central_finite_differences(self, family):
        rng = np.random.default_rng(hash(family) % 2 ** 32)
        for _ in range(7):  # 21 triples across the three heads
            model, params, y, X, U = _random_case(rng, family)
            g = grad_log_likelihood(model, params, y, X, U)
            gfd = finite_diff(lambda v: log_likelihood(model, v, y, X, U), params)
            # relative tolerance 1e-4 with absolute floor 1e-7
            assert np.allclose(g, gfd, rtol=1e-4, atol=1e-7)

    def test_single_linear_layer_matches_glm_closed_form(self):
        # no hidden units: the whole model is linear regression with intercept
        arch = MlpArchitecture(1, ())
        model = SsrModel(p=2, arch=arch, head=LikelihoodHead("normal", 1.0))
        rng = np.random.default_rng(17)
        params = rng.standard_normal(model.n_params)
        theta, w, _ = model.split(params)
        n = 20
        X = rng.standard_normal((n, 2))
        U = rng.standard_normal((n, 1))
        y = rng.standard_normal(n)
        D = np.hstack([X, U, np.ones((n, 1))])  # design: theta cols, slope, bias
        beta = np.concatenate([theta, w])
        resid = y - D @ beta
        expected = D.T @ resid  # least-squares gradient, sigma = 1
        got = grad_log_likelihood(model, params, y, X, U)
        assert np.allclose(got, expected, rtol=1e-10, atol=1e-10)
