import math

import numpy as np
import pytest

from nslab.errors import ConfigurationError, RegimeViolation, UsageError
from nslab.estimates import (
    D1_of_X,
    EstimateParams,
    check_admissibility,
    eval_bound_chain,
    eval_cbar,
    eval_phi1,
    lower_bound_A,
    solve_A,
)

ZERO_DATA = dict(v0_l2=0.0, v0_l6=0.0, vt0_l2=0.0, X0=0.0, B0=0.0)


class TestCbar:
    def test_r6(self):
        # 4 * (4/5)^5 * 6^1 / 1
        assert eval_cbar(6, 1.0, 1.0) == pytest.approx(4 * 0.8**5 * 6, rel=1e-14)
        assert eval_cbar(6, 1.0, 1.0) == pytest.approx(7.86432, rel=1e-6)

    def test_r3(self):
        assert eval_cbar(3, 1.0, 1.0) == pytest.approx(0.25 / math.sqrt(3), rel=1e-14)

    def test_decreasing_in_mu(self):
        vals = [eval_cbar(4, mu, 1.0) for mu in (1, 2, 5, 10, 100, 1e4)]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-10

    def test_domain(self):
        with pytest.raises(UsageError):
            eval_cbar(2, 1, 1)


class TestParams:
    def test_kappa(self):
        assert EstimateParams(p=4).kappa == 0.75

    @pytest.mark.parametrize("p", [3.0, 6.0, 2.5, 7])
    def test_p_range(self, p):
        with pytest.raises(ConfigurationError) as e:
            EstimateParams(p=p)
        assert e.value.key == "p"

    def test_beta_range(self):
        with pytest.raises(ConfigurationError):
            EstimateParams(p=4, beta=0.5)
        EstimateParams(p=4, beta=0.49)

    def test_t_star(self):
        assert EstimateParams(nu=1e8, p=4).t_star == pytest.approx(100.0)


class TestPhi1:
    def setup_method(self):
        self.par = EstimateParams(nu=1e4, phi0_lp=1e-3)

    def test_zero_norm(self):
        assert eval_phi1(self.par, 1.0, 0.5, 0.0) == 1.0

    def test_large_nu_limit(self):
        vals = [eval_phi1(self.par.with_(nu=nu), 0.0, 1.0, 1.0) for nu in (1e4, 1e6, 1e8, 1e12)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))
        assert vals[-1] == pytest.approx(1.0, abs=1e-6)

    def test_regime_violation(self):
        with pytest.raises(RegimeViolation):
            eval_phi1(self.par, Psi=100.0, t=1.0, v_mixed_norm=1.0)

    def test_min_over_samples(self):
        # the worst sample decides: margin 1e-3 - 1*9/1e4 = 1e-4 > 0 passes, 1e-3 - 2*9/1e4 < 0 fails
        eval_phi1(self.par, Psi=[0.0, 9.0], t=[0.0, 1.0], v_mixed_norm=0.1)
        with pytest.raises(RegimeViolation):
            eval_phi1(self.par, Psi=[0.0, 9.0], t=[0.0, 4.0], v_mixed_norm=0.1)


class TestBoundChain:
    def test_zero_data(self):
        assert eval_bound_chain(EstimateParams(**ZERO_DATA), 0.0) == 0.0

    def test_nu_infinity_limit(self):
        par = EstimateParams()
        far = eval_bound_chain(par.with_(nu=1e120), 0.05)
        assert far == pytest.approx(lower_bound_A(par), rel=1e-6)

    def test_at_zero_equals_lower_bound(self):
        par = EstimateParams(nu=1e3)
        assert eval_bound_chain(par, 0.0) == pytest.approx(lower_bound_A(par), rel=1e-15)

    @pytest.mark.parametrize("form", ["nested", "flat"])
    def test_monotone_in_X(self, form):
        par = EstimateParams(nu=1e4, chain_form=form)
        xs = np.linspace(0, 2.0, 41)
        vals = [eval_bound_chain(par, x) for x in xs]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    @pytest.mark.parametrize("name", ["v0_l2", "v0_l6", "vt0_l2", "X0", "B0"])
    def test_monotone_in_data(self, name):
        base = EstimateParams(nu=1e4)
        vals = [eval_bound_chain(base.with_(**{name: s}), 0.2) for s in (0.0, 0.05, 0.1, 0.2, 0.4)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_regime_propagates(self):
        # c3 - sqrt(t) X / nu^(1-k) with t = nu^(1-k): X = 2 nu^((1-k)/2) violates c3=1
        par = EstimateParams(nu=1e4)
        with pytest.raises(RegimeViolation):
            D1_of_X(par, 2 * 1e4 ** 0.125)
        with pytest.raises(RegimeViolation):
            eval_bound_chain(par, 2 * 1e4 ** 0.125)

    def test_D1_nu_infinity(self):
        par = EstimateParams(v0_l6=2.0, v0_l2=3.0, c1=1.0)
        assert D1_of_X(par, 0.0) == pytest.approx(5.0)


class TestSolveA:
    """Successive approximations on the fixed-point equation."""

    def test_default_converges(self):
        r = solve_A(EstimateParams(nu=1e6))
        assert r.converged and r.contraction_modulus < 1
        assert abs(r.A - eval_bound_chain(EstimateParams(nu=1e6), r.A)) <= 1e-9 * (1 + r.A)
        assert r.lower_bound_ok
        # regression value of the converged bound
        assert r.A == pytest.approx(0.0380349487, rel=1e-8)

    def test_nonincreasing_in_nu(self):
        As = [solve_A(EstimateParams(nu=nu)).A for nu in np.logspace(2, 8, 13)]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(As, As[1:]))

    def test_small_nu_fails(self):
        r = solve_A(EstimateParams(nu=1.0))
        assert not r.converged
        assert r.contraction_modulus >= 1 or r.regime_violation

    def test_zero_data(self):
        r = solve_A(EstimateParams(**ZERO_DATA))
        assert r.A == 0.0 and r.iterations == 1 and r.converged

    def test_l2_lower_bound_variant(self):
        par = EstimateParams(v0_l2=0.1, v0_l6=0.3)
        assert lower_bound_A(par.with_(lower_bound_norm="l2")) < lower_bound_A(par)

    def test_regime_reported_not_raised(self):
        par = EstimateParams(nu=1e4, c3=1e-3, X0=1.0)
        r = solve_A(par)
        assert r.regime_violation and not r.converged
        assert r.offending_iterate is not None

    def test_fixed_point_property(self):
        for nu in (1e3, 1e5):
            par = EstimateParams(nu=nu, B0=0.05)
            r = solve_A(par)
            assert r.converged
            assert abs(r.A - eval_bound_chain(par, r.A)) <= 1e-9 * (1 + r.A)


class TestAdmissibility:
    def test_decay_margin(self):
        rep = check_admissibility(EstimateParams(mu=1, T=10, c_generic=1), 1.0)
        c = rep["decay_A4"]
        assert c.ok and c.margin == pytest.approx(4.0)

    def test_horizon_strict(self):
        par = EstimateParams(nu=1e4, p=4)
        T = 1e4 ** (2 * (1 - 0.75))
        assert not check_admissibility(par.with_(T=T), 0.01)["horizon"].ok
        assert check_admissibility(par.with_(T=0.99 * T), 0.01)["horizon"].ok

    def test_phi0_upper(self):
        nu = 1e4
        par = EstimateParams(nu=nu, phi0_lp=2 * 1.0 / nu**0.75)
        rep = check_admissibility(par, 0.01)
        assert not rep["phi0_upper"].ok and rep["phi0_lower"].ok
        assert not rep.ok

    def test_gamma_star_equality(self):
        A = 0.3
        mu = 1.0
        gs = (mu / 2 / math.exp(2 * A**2)) ** 0.25
        rep = check_admissibility(EstimateParams(mu=mu, gamma_star=gs), A)
        assert rep["gamma_star"].margin == pytest.approx(0.0, abs=1e-14)
        assert rep["gamma_star"].ok

    def test_variant_reported_separately(self):
        # A = 1.5: A^4 = 5.06 > 5 fails, A^2 = 2.25 <= 5 passes
        rep = check_admissibility(EstimateParams(mu=1, T=10), 1.5)
        assert not rep["decay_A4"].ok
        assert rep["decay_A2(variant)"].ok
