import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infoprior import diffcore as dc
from infoprior.priors import (
    DeltaScale,
    GsmPriorSpec,
    InvGammaScale,
    JointCountIndicators,
    FlattenedLaplace,
    NetworkSpec,
    SpecError,
    sample_weight_draw,
)
from infoprior.pve import (
    DegenerateTargetError,
    draw_prior_noise,
    forward,
    homogeneity_check,
    model_output_variance,
    pve_graph,
    pve_of_fit,
    pve_prior_samples,
)


class TestPveOfFit:
    def test_perfect(self):
        y = np.array([1.0, 3.0, -2.0])
        assert pve_of_fit(y, y) == 1.0

    def test_mean_prediction(self):
        y = np.array([1.0, 3.0, -2.0])
        assert pve_of_fit(y, np.full(3, y.mean())) == pytest.approx(0.0, abs=1e-15)

    def test_two_points(self):
        assert pve_of_fit([0.0, 2.0], [1.0, 1.0]) == 0.0

    def test_constant_target(self):
        with pytest.raises(DegenerateTargetError):
            pve_of_fit([1.0, 1.0], [0.0, 1.0])

    @settings(max_examples=40, deadline=None)
    @given(a=st.floats(0.1, 10) | st.floats(-10, -0.1), b=st.floats(-5, 5), seed=st.integers(0, 999))
    def test_affine_invariance(self, a, b, seed):
        rng = np.random.default_rng(seed)
        y, yhat = rng.standard_normal(20), rng.standard_normal(20)
        assert pve_of_fit(a * y + b, a * yhat + b) == pytest.approx(pve_of_fit(y, yhat), abs=1e-9)


class TestModelOutputVariance:
    def test_zero_weights(self):
        spec = GsmPriorSpec.build(NetworkSpec((3, 4, 1)), DeltaScale(1.0))
        draw = sample_weight_draw(spec, np.random.default_rng(0))
        for layer in draw.layers:
            layer.beta[:] = 0.0
        X = np.random.default_rng(1).standard_normal((10, 3))
        assert float(model_output_variance(spec.network, draw, X).value) == 0.0

    def test_linear_closed_form(self):
        spec = GsmPriorSpec.build(NetworkSpec((4, 1)), DeltaScale(1.0))
        draw = sample_weight_draw(spec, np.random.default_rng(2))
        X = np.random.default_rng(3).standard_normal((30, 4))
        w = draw.weights[0][:, 0]
        assert float(model_output_variance(spec.network, draw, X).value) == pytest.approx(np.var(X @ w))

    def test_doubling_last_layer_quadruples(self):
        spec = GsmPriorSpec.build(NetworkSpec((3, 5, 1)), DeltaScale(1.0))
        draw = sample_weight_draw(spec, np.random.default_rng(4))
        X = np.random.default_rng(5).standard_normal((25, 3))
        v1 = float(model_output_variance(spec.network, draw, X).value)
        draw.layers[-1].beta *= 2.0
        v2 = float(model_output_variance(spec.network, draw, X).value)
        assert v2 == pytest.approx(4.0 * v1, rel=1e-12)

    def test_differentiable_in_weights(self):
        spec = GsmPriorSpec.build(NetworkSpec((2, 3, 1)), DeltaScale(1.0))
        draw = sample_weight_draw(spec, np.random.default_rng(6))
        X = np.random.default_rng(7).standard_normal((9, 2))
        W1 = draw.weights[1]

        def f(tape, w0):
            return dc.op_variance(forward(X, [w0, W1], spec.network))

        assert dc.finite_diff_check(f, draw.weights[0]) < 1e-5


class TestPriorSamples:
    X = np.random.default_rng(10).standard_normal((40, 6))

    def test_samples_in_unit_interval(self):
        spec = GsmPriorSpec.build(NetworkSpec((6, 5, 3, 1)), DeltaScale(1.0))
        s = pve_prior_samples(spec, self.X, 50, np.random.default_rng(0))
        assert len(s) == 50
        assert np.all((s.samples >= 0) & (s.samples < 1))

    def test_tiny_scale_gives_zero(self):
        spec = GsmPriorSpec.build(NetworkSpec((6, 5, 1)), DeltaScale(1e-6))
        s = pve_prior_samples(spec, self.X, 20, np.random.default_rng(1))
        assert s.samples.max() < 1e-9

    def test_row_duplication_invariance(self):
        spec = GsmPriorSpec.build(NetworkSpec((6, 4, 1)), InvGammaScale(2.0, 0.5))
        a = pve_prior_samples(spec, self.X, 30, np.random.default_rng(2))
        b = pve_prior_samples(spec, np.vstack([self.X, self.X]), 30, np.random.default_rng(2))
        np.testing.assert_allclose(a.samples, b.samples, rtol=1e-12)

    def test_reproducible(self):
        spec = GsmPriorSpec.build(NetworkSpec((6, 4, 1)), DeltaScale(0.7),
                                  JointCountIndicators(FlattenedLaplace(6, 0, 3, 1.0)))
        a = pve_prior_samples(spec, self.X, 30, np.random.default_rng(3))
        b = pve_prior_samples(spec, self.X, 30, np.random.default_rng(3))
        assert np.array_equal(a.samples, b.samples)

    def test_matches_explicit_weight_draws(self):
        """The batched reparametrized path equals materializing each draw."""
        spec = GsmPriorSpec.build(NetworkSpec((6, 4, 1)), InvGammaScale(2.0, 0.8))
        noise = draw_prior_noise(spec, 5, np.random.default_rng(4))
        tape = dc.Tape()
        rho, V = pve_graph(tape, spec, tape.var(0.8), noise, self.X)
        for m in range(5):
            ws = []
            for l in range(2):
                lam = np.sqrt(0.8 / noise.g[l][m])
                ws.append(noise.beta[l][m] * (lam * noise.tau[l][m])[:, None])
            f = forward(self.X, ws, spec.network)
            assert V.value[m] == pytest.approx(np.var(f), rel=1e-12)

    def test_rho_increasing_in_v(self):
        spec = GsmPriorSpec.build(NetworkSpec((6, 4, 1)), DeltaScale(1.0))
        noise = draw_prior_noise(spec, 20, np.random.default_rng(5))
        tape = dc.Tape()
        rho, V = pve_graph(tape, spec, tape.var(1.0), noise, self.X)
        order = np.argsort(V.value)
        assert np.all(np.diff(rho.value[order]) >= 0)

    def test_scaled_global_scales_rejected(self):
        spec = GsmPriorSpec.build(NetworkSpec((6, 4, 1)), DeltaScale(1.0), global_scales=[2.0, 1.0])
        with pytest.raises(SpecError):
            pve_prior_samples(spec, self.X, 10, np.random.default_rng(6))


class TestHomogeneity:
    def test_unit_scales(self):
        spec = GsmPriorSpec.build(NetworkSpec((4, 6, 1)), DeltaScale(1.0))
        draw = sample_weight_draw(spec, np.random.default_rng(0))
        X = np.random.default_rng(1).standard_normal((20, 4))
        assert homogeneity_check(spec.network, draw, X, [1.0, 1.0]) == 0.0

    def test_first_layer_doubling(self):
        spec = GsmPriorSpec.build(NetworkSpec((4, 6, 1)), DeltaScale(1.0))
        draw = sample_weight_draw(spec, np.random.default_rng(2))
        X = np.random.default_rng(3).standard_normal((20, 4))
        f0 = forward(X, draw.weights, spec.network)
        f1 = forward(X, [2.0 * draw.weights[0], draw.weights[1]], spec.network)
        np.testing.assert_allclose(f1, 2.0 * f0, rtol=1e-14)
        assert np.var(f1) == pytest.approx(4.0 * np.var(f0), rel=1e-12)

    @pytest.mark.parametrize("bias", ["none", "scaled"])
    def test_random_three_layer(self, bias):
        rng = np.random.default_rng(4)
        spec = GsmPriorSpec.build(NetworkSpec((5, 7, 4, 1), bias=bias), InvGammaScale(2.0, 1.0))
        draw = sample_weight_draw(spec, rng)
        X = rng.standard_normal((100, 5))
        scales = np.exp(rng.uniform(-1.5, 1.5, 3))
        assert homogeneity_check(spec.network, draw, X, scales) < 1e-10

    def test_wrong_scale_count(self):
        spec = GsmPriorSpec.build(NetworkSpec((4, 1)), DeltaScale(1.0))
        draw = sample_weight_draw(spec, np.random.default_rng(5))
        with pytest.raises(ValueError):
            homogeneity_check(spec.network, draw, np.ones((3, 4)), [1.0, 2.0])
