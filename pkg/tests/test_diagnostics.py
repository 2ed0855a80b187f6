import math
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import random_vector
from nslab import spectral as sp
from nslab.diagnostics import (
    LedgerOptions,
    NormLedger,
    compute_D1,
    compute_D2,
    gamma_norm,
    lp_norm,
    lr_terms,
    sobolev_norm,
)
from nslab.dynamics import PhysicalParams, ScenarioSpec, SimState, run_coupled, taylor_green
from nslab.errors import RegimeViolation, UsageError
from nslab.estimates import EstimateParams

PI3 = math.pi**3


def coords(n=16):
    return sp.create_grid(n).coords


def steady_state(t, V, v=None, params=PhysicalParams()):
    # zero tendencies: Nv cancels the linear part
    v = V if v is None else v
    from nslab.dynamics import _lame_linear

    return SimState(t=t, V=V, v=v, NV=-params.mu * sp.laplacian(V), Nv=-_lame_linear(v, params),
                    params=params)


class TestLpNorm:
    def test_sin_l2(self):
        x = coords()
        assert lp_norm(np.sin(x[0]), 2) ** 2 == pytest.approx(4 * PI3, rel=1e-10)
        assert lp_norm(np.sin(x[0]), 2) == pytest.approx(11.13665, rel=1e-6)

    def test_sin_inf(self):
        assert lp_norm(np.sin(coords()[0]), np.inf) == 1.0

    @pytest.mark.parametrize("p", [1, 2, 3, 4.5, 6])
    def test_unit_magnitude(self, p):
        x = coords()
        f = np.stack([np.cos(x[0]), np.sin(x[0]), 0 * x[0]])
        assert lp_norm(f, p) == pytest.approx((2 * math.pi) ** (3 / p), rel=1e-12)

    def test_p_below_one(self):
        with pytest.raises(UsageError):
            lp_norm(np.ones((8, 8, 8)), 0.5)

    def test_parseval(self):
        F = random_vector(seed=2)
        assert lp_norm(sp.to_real(F), 2) == pytest.approx(math.sqrt(sp.norm_sq(F)), rel=1e-10)

    def test_spectral_input(self):
        F = random_vector(seed=3)
        assert lp_norm(F, 4) == lp_norm(sp.to_real(F), 4)

    def test_holder_monotone(self):
        f = sp.to_real(random_vector(seed=4))
        vals = [lp_norm(f, p) / (2 * math.pi) ** (3 / p) for p in (2, 3, 4, 6)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestSobolev:
    def test_sin_h1(self):
        assert sobolev_norm(np.sin(coords()[0]), 1) ** 2 == pytest.approx(8 * PI3, rel=1e-10)

    @pytest.mark.parametrize("s", [0, 1, 2, 3])
    def test_constant(self, s):
        c = -1.7
        assert sobolev_norm(np.full((16, 16, 16), c), s) == pytest.approx(abs(c) * (2 * math.pi) ** 1.5,
                                                                          rel=1e-12)

    def test_taylor_green_h2(self):
        assert sobolev_norm(taylor_green(sp.create_grid(16)), 2) ** 2 == pytest.approx(24 * PI3, rel=1e-10)

    def test_derivative_sum_oracle(self):
        # Σ_{|α|≤2} |D^α f|₂² by explicit differentiation
        F = random_vector(seed=5)
        total = sum(sp.norm_sq(sp.differentiate(F[i], a)) for i in range(3) for a in sp.multi_indices(2))
        assert sobolev_norm(F, 2) ** 2 == pytest.approx(total, rel=1e-12)

    def test_single_mode_multiplier(self):
        # for a single mode k the weight is Σ_{|α|≤s} Π k_j^{2α_j}
        x = coords()
        f = np.cos(2 * x[0] + 3 * x[1])
        w = 1 + (4 + 9) + (16 + 81 + 36)
        assert sobolev_norm(f, 2) ** 2 == pytest.approx(4 * PI3 * w, rel=1e-10)


class TestGammaNorm:
    def test_taylor_green_steady(self):
        tg = taylor_green(sp.create_grid(16))
        assert gamma_norm(tg, np.zeros_like(tg), 2, 1) == pytest.approx(math.sqrt(24 * PI3), rel=1e-10)
        assert gamma_norm(tg, np.zeros_like(tg), 2, 1) == pytest.approx(27.28, abs=5e-3)

    def test_l0_is_sobolev(self):
        F = random_vector(seed=6)
        assert gamma_norm(F, None, 2, 0) == sobolev_norm(F, 2)

    def test_time_part(self):
        x = coords()
        g = gamma_norm(np.zeros((16, 16, 16)), np.sin(x[0]), 2, 1)
        assert g == pytest.approx(math.sqrt(8 * PI3), rel=1e-10)

    def test_missing_time_derivative(self):
        with pytest.raises(UsageError):
            gamma_norm(np.zeros((16, 16, 16)), None, 2, 1)


class TestLrTerms:
    def test_unit_magnitude(self):
        x = coords()
        v = np.stack([np.cos(x[0]), np.sin(x[0]), 0 * x[0]])
        r = lr_terms(v, 4)
        assert r.grad_mag_pow <= 1e-10
        assert r.identity_residual <= 1e-10
        assert r.direction_sq_l2 == pytest.approx(r.grad_sq_l2, rel=1e-10)

    def test_solenoidal_div_terms(self):
        r = lr_terms(taylor_green(sp.create_grid(16)), 3, nu=100.0)
        assert r.div_term <= 1e-12 and r.cbar_term <= 1e-12

    def test_identity_random(self):
        r = lr_terms(random_vector(seed=7), 2)
        assert r.grad_mag_sq_l2 + r.direction_sq_l2 == pytest.approx(r.grad_sq_l2, rel=1e-6)
        assert r.singular_fraction < 0.01

    def test_range(self):
        with pytest.raises(UsageError):
            lr_terms(random_vector(), 7)


class TestLedger:
    """Accumulators against closed forms on steady fields."""

    def test_steady_time_integral(self):
        # constant integrand: ∫₀ᵗ|v|₂² = |v|₂²·t
        tg = taylor_green(sp.create_grid(16))
        led = NormLedger(PhysicalParams(1.0, 10.0))
        for t in np.linspace(0, 0.5, 6):
            led.update(steady_state(float(t), tg))
        assert led.last["I_v_h1sq"] == pytest.approx(sobolev_norm(tg, 1) ** 2 * 0.5, rel=1e-12)

    def test_no_gradient(self):
        tg = taylor_green(sp.create_grid(16))
        led = NormLedger(PhysicalParams(1.0, 10.0))
        for t in (0.0, 0.1, 0.2):
            led.update(steady_state(t, tg))
        assert led.last["Psi"] == 0 and led.last["chi0"] == 0
        assert led.last["Y2"] == pytest.approx(24 * PI3, rel=1e-10)

    def test_out_of_order(self):
        tg = taylor_green(sp.create_grid(16))
        led = NormLedger(PhysicalParams())
        led.update(steady_state(0.1, tg))
        with pytest.raises(UsageError):
            led.update(steady_state(0.1, tg))

    def test_X_from_parts(self):
        cfg = SimpleNamespace(grid_n=16, dt=1e-3, t_end=0.05, sample_stride=5,
                              physics=PhysicalParams(1.0, 50.0),
                              scenario=ScenarioSpec("random-band", grad_fraction=0.2),
                              estimates=EstimateParams(), seed=1, dealias=True)
        led = NormLedger(cfg.physics)
        run_coupled(cfg, ledger=led, store_fields=False)
        mu, nu = 1.0, 50.0
        for rec in led.records:
            parts = rec["Y2"] + mu * (nu * rec["I_gphi31"] + rec["I_rot31"]) + nu**2 * rec["I_gphi31"]
            assert rec["X"] ** 2 == pytest.approx(parts, rel=1e-10)
        X = led.series("X")
        assert X[0] == pytest.approx(led.series("Y")[0], rel=1e-15)
        assert np.all(np.diff(led.series("I_gphi31")) >= 0)
        assert np.all(np.diff(led.series("Psi")) >= 0)
        assert led.series("energy_residual").max() <= 1e-10

    def test_trapezoid_second_order(self):
        # ∫₀¹ e^{−4μt}|v0|² dt for Taylor-Green under the Stokes flow, two sample spacings
        g = sp.create_grid(16)
        tg = taylor_green(g)
        par = PhysicalParams(1.0, 10.0)
        exact = sp.norm_sq(tg) * (1 - math.exp(-4.0)) / 4.0

        def err(m):
            led = NormLedger(par)
            for t in np.linspace(0, 1, m + 1):
                V = math.exp(-2 * t) * tg
                led.update(steady_state(float(t), V, params=par))
            # ∫|v|₂² via ∫‖v‖₁² − ∫|∇v|₂² = ∫|v|² (|∇v|² = 2|v|²)
            return abs(led.last["I_v_h1sq"] / 3.0 - exact)

        assert math.log2(err(10) / err(20)) == pytest.approx(2.0, abs=0.05)


class TestD:
    def _ledger(self, v0_l6=2.0, A1=3.0):
        led = NormLedger(PhysicalParams(1.0, 1e4), EstimateParams(nu=1e4, c1=1.0))
        led.initial = {"v0_l6": v0_l6, "A1": A1, "vt0_l2": 0.5, "phi0_lp": 1e-3}
        led.records = [{"t": 0.0, "Psi": 0.0, "vmix_pm1": 0.0, "vmix_pm2": 0.0}]
        led._min_phi_margin = 1e-3
        return led

    def test_nu_infinity_value(self):
        assert compute_D1(self._ledger()) == pytest.approx(5.0)

    def test_D2_trivial(self):
        led = self._ledger(v0_l6=0.0, A1=0.0)
        assert compute_D2(led) == pytest.approx(0.5)

    def test_D2_halved_exponent(self):
        led = self._ledger(v0_l6=0.1, A1=0.2)
        D1 = compute_D1(led)
        assert compute_D2(led) == pytest.approx(0.5 * math.exp(D1**2 * 0.04 / 2), rel=1e-14)
        led.opt = LedgerOptions(d2_form="full")
        assert compute_D2(led) == pytest.approx(0.5 * math.exp(D1**2 * 0.04), rel=1e-14)

    def test_regime_violation(self):
        led = self._ledger()
        led.records[-1].update(Psi=1.0, t=1.0)
        led._min_phi_margin = -1e-3
        with pytest.raises(RegimeViolation):
            compute_D1(led)
