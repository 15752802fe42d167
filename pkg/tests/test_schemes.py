import math

import numpy as np
import pytest

from sdeweak.model import ContractViolation, SdeModel, l_sigma
from sdeweak.noise import NoiseBudgetExceeded, NoiseKind, NoiseSource
from sdeweak.presets import preset
from sdeweak.schemes import (
    SchemeKind,
    SimConfig,
    one_step,
    parse_scheme,
    simulate_terminal,
    simulate_terminal_batch,
    step_em,
    step_extended_milstein,
    step_truncated_milstein,
)

from conftest import constant_diffusion_model

S100 = np.array([100.0])


class TestOneStepOracles:
    # GBM with r=0.1, sigma=0.2 at S=100, h=0.5, dB=0.1 throughout.

    def test_em(self, gbm):
        out = step_em(gbm.model, S100, 0.5, [0.1])
        assert out[0] == pytest.approx(107.0, rel=1e-12)

    def test_truncated_milstein(self, gbm):
        # adds (1/2) sigma^2 S (dB^2 - h) = -0.98
        out = step_truncated_milstein(gbm.model, S100, 0.5, [0.1])
        assert out[0] == pytest.approx(106.02, rel=1e-12)

    def test_extended_milstein(self, gbm):
        # adds (1/2) r^2 S h^2 = 0.125 and r sigma S h dB = 0.1 on top
        out = step_extended_milstein(gbm.model, S100, 0.5, [0.1])
        assert out[0] == pytest.approx(106.245, rel=1e-12)

    def test_extended_at_zero_increment(self, gbm):
        # dB = 0 is a particular increment value, not a mean: the (1,1)
        # compensator still fires, giving S (1 + r h + r^2 h^2 / 2) minus
        # (1/2) sigma^2 S h = 105.125 - 1.0.  The order-2 mean recursion is
        # covered by the expectation-propagation tests below.
        out = step_extended_milstein(gbm.model, S100, 0.5, [0.0])
        assert out[0] == pytest.approx(104.125, rel=1e-12)


class TestSchemeCoincidence:
    def test_zero_coefficients_identity(self):
        model = constant_diffusion_model(columns=((0.0, 0.0),))
        x = np.array([3.0, -4.0])
        for step in (step_em, step_truncated_milstein, step_extended_milstein):
            assert np.array_equal(step(model, x, 0.25, [0.7]), x)

    def test_constant_diffusion_tmilstein_equals_em(self):
        model = constant_diffusion_model(drift_matrix=[[0.0, 1.0], [-1.0, 0.0]])
        x = np.array([1.0, 2.0])
        dB = np.array([0.3, -0.2])
        assert np.array_equal(
            step_truncated_milstein(model, x, 0.1, dB), step_em(model, x, 0.1, dB)
        )

    def test_increment_matching_h_cancels_correction(self, gbm):
        dB = [math.sqrt(0.5)]
        assert np.array_equal(
            step_truncated_milstein(gbm.model, S100, 0.5, dB),
            step_em(gbm.model, S100, 0.5, dB),
        )

    def test_zero_drift_constant_diffusion_all_agree(self):
        model = constant_diffusion_model()
        x = np.array([0.5, 1.5])
        dB = np.array([0.11, -0.23])
        em = step_em(model, x, 0.2, dB)
        assert np.array_equal(step_truncated_milstein(model, x, 0.2, dB), em)
        assert np.array_equal(step_extended_milstein(model, x, 0.2, dB), em)

    def test_additive_noise_linear_drift_difference_is_drift_expansion(
        self, small_diffusion
    ):
        # extended - em == (1/2) L0 b h^2 + (1/2) (L1 b) h dB; all sigma terms vanish
        model = small_diffusion.model
        x = np.array([1.3, 0.4])
        h, db = 0.125, 0.37
        diff = step_extended_milstein(model, x, h, [db]) - step_em(model, x, h, [db])
        want = 0.5 * l_sigma(model, 0, 0, x) * h * h + 0.5 * l_sigma(model, 1, 0, x) * h * db
        assert diff == pytest.approx(want, rel=1e-12, abs=1e-15)


class TestExpectationPropagation:
    # Two-point quadrature over dB in {+sqrt(h), -sqrt(h)} matches the first
    # three Gaussian moments exactly, and the step maps are quadratic in dB,
    # so this reproduces E[step] without sampling.

    @staticmethod
    def mean_factor(step, model, h):
        up = step(model, np.array([1.0]), h, [math.sqrt(h)])[0]
        down = step(model, np.array([1.0]), h, [-math.sqrt(h)])[0]
        return 0.5 * (up + down)

    def test_em_mean_recursion(self, gbm):
        h = 0.125
        factor = self.mean_factor(step_em, gbm.model, h)
        assert factor == pytest.approx(1.0 + 0.1 * h, rel=1e-14)

    def test_extended_mean_recursion(self, gbm):
        h = 0.125
        factor = self.mean_factor(step_extended_milstein, gbm.model, h)
        assert factor == pytest.approx(1.0 + 0.1 * h + 0.5 * 0.01 * h * h, rel=1e-14)

    def test_truncated_mean_matches_em(self, gbm):
        h = 0.125
        assert self.mean_factor(step_truncated_milstein, gbm.model, h) == pytest.approx(
            self.mean_factor(step_em, gbm.model, h), rel=1e-14
        )


class TestSimulateTerminal:
    def test_single_step_reduces_to_one_step_map(self, gbm):
        cfg = SimConfig(T=0.5, n=1, x0=S100, scheme=SchemeKind.EXTENDED_MILSTEIN)
        src = NoiseSource.pseudo(seed=5, dims_per_path=1)
        terminal = simulate_terminal(gbm.model, cfg, src, path_index=3)
        dB = src.gaussian_increments(3, 1, 1, 0.5)
        want = one_step(gbm.model, SchemeKind.EXTENDED_MILSTEIN, S100, 0.5, dB[0])
        assert np.array_equal(terminal, want)

    def test_zero_diffusion_em_recursion(self):
        pre = preset("gbm", sigma=0.0)
        cfg = SimConfig(T=1.0, n=4, x0=pre.x0, scheme=SchemeKind.EM)
        src = NoiseSource.pseudo(seed=1, dims_per_path=4)
        terminal = simulate_terminal(pre.model, cfg, src, 0)
        assert terminal[0] == pytest.approx(100.0 * 1.025**4, rel=1e-12)

    @pytest.mark.parametrize("scheme", list(SchemeKind))
    def test_zero_drift_zero_increments_returns_start(self, scheme, monkeypatch):
        model = constant_diffusion_model()  # zero drift, constant columns
        monkeypatch.setattr(
            NoiseSource,
            "step_increments",
            lambda self, path_start, count, k, d, h: np.zeros((count, d)),
        )
        cfg = SimConfig(T=1.0, n=8, x0=np.array([2.0, -1.0]), scheme=scheme)
        src = NoiseSource.pseudo(seed=0, dims_per_path=16)
        terminal = simulate_terminal(model, cfg, src, 0)
        assert np.array_equal(terminal, np.array([2.0, -1.0]))

    def test_path_vs_batch_bitwise(self, heston):
        cfg = SimConfig(T=1.0, n=4, x0=heston.x0, scheme=SchemeKind.EXTENDED_MILSTEIN)
        for kind in NoiseKind:
            src = NoiseSource(kind=kind, seed=9, dims_per_path=8, replication_index=1)
            batch, _ = simulate_terminal_batch(heston.model, cfg, src, 10, 7)
            single = simulate_terminal(heston.model, cfg, src, 13)
            assert np.array_equal(single, batch[3])

    def test_noise_budget_enforced(self, gbm):
        cfg = SimConfig(T=1.0, n=8, x0=S100, scheme=SchemeKind.EM)
        src = NoiseSource.pseudo(seed=0, dims_per_path=4)
        with pytest.raises(NoiseBudgetExceeded):
            simulate_terminal(gbm.model, cfg, src, 0)

    def test_nonfinite_path_flagged_not_raised(self):
        # cubic drift with a huge step blows up within a few iterations
        def drift(x):
            return x**3

        model = SdeModel(
            state_dim=1,
            noise_dim=1,
            drift=drift,
            diffusion=(lambda x: np.ones_like(x),),
            drift_jacobian=lambda x: (3.0 * x**2)[..., None],
            diffusion_jacobians=(lambda x: np.zeros(x.shape[:-1] + (1, 1)),),
            drift_hessian=lambda x: (6.0 * x)[..., None, None],
            diffusion_hessians=(lambda x: np.zeros(x.shape[:-1] + (1, 1, 1)),),
            label="explosive",
        )
        cfg = SimConfig(T=400.0, n=40, x0=np.array([10.0]), scheme=SchemeKind.EM)
        src = NoiseSource.pseudo(seed=2, dims_per_path=40)
        terminals, stats = simulate_terminal_batch(model, cfg, src, 0, 8)
        assert stats.invalid_paths == 8
        assert np.all(np.isnan(terminals))

    def test_negative_variance_excursions_counted(self):
        # weak mean reversion plus a variance that starts near zero makes the
        # discretised chain dip below it (Feller still holds: 0.036 > 0.0324)
        pre = preset("heston-asian", alpha=0.2, nu=0.18, v0=0.001)
        cfg = SimConfig(T=1.0, n=16, x0=pre.x0, scheme=SchemeKind.EM)
        src = NoiseSource.pseudo(seed=3, dims_per_path=32)
        terminals, stats = simulate_terminal_batch(pre.model, cfg, src, 0, 256)
        assert stats.negative_coordinate_steps > 0
        assert stats.invalid_paths == 0
        assert np.all(np.isfinite(terminals))


class TestMonteCarloMoments:
    def test_exact_mean_recursion_mc(self, gbm):
        # E[terminal] is S0 (1 + r h)^n under EM and
        # S0 (1 + r h + r^2 h^2 / 2)^n under the drift-expanded scheme.
        n, paths = 8, 50_000
        h = 1.0 / n
        targets = {
            SchemeKind.EM: 100.0 * (1.0 + 0.1 * h) ** n,
            SchemeKind.EXTENDED_MILSTEIN: 100.0
            * (1.0 + 0.1 * h + 0.5 * 0.01 * h * h) ** n,
        }
        src = NoiseSource.pseudo(seed=11, dims_per_path=n)
        for scheme, target in targets.items():
            cfg = SimConfig(T=1.0, n=n, x0=S100, scheme=scheme)
            terminals, _ = simulate_terminal_batch(gbm.model, cfg, src, 0, paths)
            values = terminals[:, 0]
            stderr = values.std(ddof=1) / math.sqrt(paths)
            assert abs(values.mean() - target) < 4.0 * stderr

    @pytest.mark.parametrize("scheme", list(SchemeKind))
    def test_driftless_schemes_preserve_mean(self, scheme):
        pre = preset("gbm", r=0.0, sigma=0.2)
        cfg = SimConfig(T=1.0, n=4, x0=pre.x0, scheme=scheme)
        src = NoiseSource.pseudo(seed=13, dims_per_path=4)
        terminals, _ = simulate_terminal_batch(pre.model, cfg, src, 0, 50_000)
        values = terminals[:, 0]
        stderr = values.std(ddof=1) / math.sqrt(values.size)
        assert abs(values.mean() - 100.0) < 4.0 * stderr


class TestConfigValidation:
    def test_parse_scheme_tokens(self):
        assert parse_scheme("em") is SchemeKind.EM
        assert parse_scheme("tmilstein") is SchemeKind.TRUNCATED_MILSTEIN
        assert parse_scheme("extended") is SchemeKind.EXTENDED_MILSTEIN
        with pytest.raises(ContractViolation, match="em, tmilstein, extended"):
            parse_scheme("foo")

    def test_sim_config_validation(self):
        with pytest.raises(ContractViolation):
            SimConfig(T=0.0, n=4, x0=S100, scheme=SchemeKind.EM)
        with pytest.raises(ContractViolation):
            SimConfig(T=1.0, n=0, x0=S100, scheme=SchemeKind.EM)

    def test_step_input_validation(self, gbm):
        with pytest.raises(ContractViolation):
            step_em(gbm.model, S100, -0.5, [0.1])
        with pytest.raises(ContractViolation):
            step_em(gbm.model, S100, 0.5, [0.1, 0.2])
