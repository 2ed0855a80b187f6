import math
from types import SimpleNamespace

import numpy as np
import pytest

from nslab.auditor import (
    AuditReport,
    GRONWALL_PRESETS,
    GronwallSpec,
    Term,
    _fit_growth_bound,
    audit_decay,
    audit_energy,
    audit_final_bound,
    audit_gronwall,
    audit_phi_heat,
    audit_residual,
    audit_stability,
    run_checks,
)
from nslab.diagnostics import NormLedger
from nslab.dynamics import PhysicalParams, ScenarioSpec, SimState, _lame_linear, run_coupled
from nslab.errors import UsageError
from nslab.estimates import EstimateParams


class FakeLedger:
    """Ledger stand-in carrying hand-made series."""

    def __init__(self, t, mu=1.0, nu=100.0, **series):
        self.physics = PhysicalParams(mu, nu)
        self.est = EstimateParams(mu=mu, nu=max(nu, 1e-300))
        t = np.asarray(t, float)
        self.records = [{"t": float(ti), **{k: float(v[i]) for k, v in series.items()}}
                        for i, ti in enumerate(t)]
        self.initial = {}
        self.A_sup = 1.0

    def __len__(self):
        return len(self.records)

    @property
    def times(self):
        return self.series("t")

    def series(self, name):
        return np.array([r[name] for r in self.records])


def fake_traj(led):
    return SimpleNamespace(ledger=led, samples=[], params=led.physics, dealias=True)


def cfg(scenario="taylor-green", n=16, nu=1e3, t_end=0.05, stride=5, **kw):
    return SimpleNamespace(grid_n=n, dt=1e-3, t_end=t_end, sample_stride=stride,
                           physics=PhysicalParams(1.0, nu), scenario=ScenarioSpec(scenario, **kw),
                           estimates=EstimateParams(nu=nu), seed=3, dealias=True)


@pytest.fixture(scope="module")
def tg_run():
    c = cfg()
    return run_coupled(c, ledger=NormLedger(c.physics, c.estimates))


@pytest.fixture(scope="module")
def rb_run():
    c = cfg("random-band", nu=50.0, grad_fraction=0.3)
    return run_coupled(c, ledger=NormLedger(c.physics, c.estimates))


class TestReport:
    def test_fitted_needs_constant(self):
        with pytest.raises(UsageError):
            AuditReport("x", "fitted")
        with pytest.raises(UsageError):
            AuditReport("x", "identity-pass", fitted_constant=1.0)

    def test_unknown_status(self):
        with pytest.raises(UsageError):
            AuditReport("x", "passed")

    def test_ok_is_recursive(self):
        bad = AuditReport("child", "violated")
        assert not AuditReport("parent", "identity-pass", related=[bad]).ok
        assert AuditReport("parent", "not-applicable").ok

    def test_lines(self):
        rep = AuditReport("g", "fitted", fitted_constant=0.5, worst_time=0.1, details={"a": 1})
        lines = rep.lines()
        assert lines[0].startswith("g: fitted") and "c=0.5" in lines[0]
        assert lines[1].strip() == "a = 1"


class TestEnergy:
    def test_taylor_green(self, tg_run):
        rep = audit_energy(tg_run)
        assert rep.status == "identity-pass" and rep.ok
        assert rep.max_relative_residual <= 1e-10

    def test_random_band_with_gradient(self, rb_run):
        assert audit_energy(rb_run).ok

    def test_injected_defect(self, rb_run):
        # 1% perturbation of the velocity with v_t left as recorded
        led = NormLedger(rb_run.params)
        for s in rb_run.samples:
            Nv = s.Nv - 0.01 * _lame_linear(s.v, s.params)
            led.update(SimState(t=s.t, V=s.V, v=1.01 * s.v, NV=s.NV, Nv=Nv, params=s.params))
        rep = audit_energy(SimpleNamespace(ledger=led))
        assert rep.status == "violated"
        assert rep.max_relative_residual > 1e-3

    def test_needs_ledger(self):
        with pytest.raises(UsageError):
            audit_energy(SimpleNamespace(ledger=None))


class TestDecay:
    def test_envelope_holds(self, tg_run, rb_run):
        for traj in (tg_run, rb_run):
            rep = audit_decay(traj)
            assert rep.status == "inequality-pass"

    def test_lowest_mode_rate(self, tg_run):
        # |k|² = 2 for Taylor-Green: |v|₂² ∝ e^{−4μt}
        assert audit_decay(tg_run).details["observed_rate"] == pytest.approx(4.0, rel=1e-3)

    def test_growth_is_violation(self):
        t = np.linspace(0, 1, 11)
        led = FakeLedger(t, v_l2=np.exp(0.1 * t), Y2=np.ones_like(t))
        rep = audit_decay(fake_traj(led))
        assert rep.status == "violated"
        # worst excess at t = 1: e^{0.2} − e^{−1}
        assert rep.max_relative_residual == pytest.approx(math.exp(0.2) - math.exp(-1.0), rel=1e-12)

    def test_Y_constant_closed_form(self):
        # Y² = e^{−μt/2}: max(log(Y²/Y²₀) + μt) = μ/2 at t = 1, c = 0.5/A⁴
        t = np.linspace(0, 1, 11)
        led = FakeLedger(t, v_l2=np.exp(-t), Y2=np.exp(-0.5 * t))
        led.A_sup = 2.0
        rel = audit_decay(fake_traj(led)).related
        assert rel[0].fitted_constant == pytest.approx(0.5 / 16, rel=1e-12)
        assert rel[1].check_id == "decay.Y_at_T" and rel[1].ok


class TestGronwall:
    """Fitted constants against closed forms on exponential series."""

    SPEC = GronwallSpec("exp", "L", (Term("mu", (("zero", 1),)),), (Term("1", (("L", 1),)),))

    @pytest.mark.parametrize("a", [0.5, 2.0])
    def test_exponential(self, a):
        t = np.linspace(0, 1, 21)
        h = t[1]
        led = FakeLedger(t, L=np.exp(a * t), zero=0 * t)
        rep = audit_gronwall(fake_traj(led), self.SPEC)
        # centered difference of e^{at}: e^{at} sinh(ah)/h
        assert rep.fitted_constant == pytest.approx(math.sinh(a * h) / h, rel=1e-12)

    def test_decaying_gives_zero(self):
        t = np.linspace(0, 1, 21)
        led = FakeLedger(t, L=np.exp(-t), zero=0 * t)
        assert audit_gronwall(fake_traj(led), self.SPEC).fitted_constant == 0.0

    def test_dissipation_raises_demand(self):
        t = np.linspace(0, 1, 21)
        led = FakeLedger(t, mu=2.0, L=np.ones_like(t), zero=np.ones_like(t))
        assert audit_gronwall(fake_traj(led), self.SPEC).fitted_constant == pytest.approx(2.0)

    def test_zero_rhs_positive_demand(self):
        t = np.linspace(0, 1, 11)
        spec = GronwallSpec("z", "L", (Term("mu", (("zero", 1),)),), (Term("1", (("zero", 1),)),))
        led = FakeLedger(t, L=1 + t, zero=0 * t)
        assert audit_gronwall(fake_traj(led), spec).status == "violated"

    def test_vanishing_rhs_identity(self):
        t = np.linspace(0, 1, 11)
        spec = GronwallSpec("z", "L", (Term("mu", (("zero", 1),)),), (Term("1", (("zero", 1),)),))
        led = FakeLedger(t, L=np.ones_like(t), zero=0 * t)
        assert audit_gronwall(fake_traj(led), spec).status == "identity-pass"

    def test_too_few_samples(self):
        led = FakeLedger([0.0, 1.0], L=[1.0, 1.0], zero=[0.0, 0.0])
        assert audit_gronwall(fake_traj(led), self.SPEC).status == "not-applicable"

    def test_unknown_series(self):
        spec = GronwallSpec("q", "L", (Term("mu", (("nope", 1),)),), ())
        led = FakeLedger([0, 1, 2], L=[1, 1, 1])
        with pytest.raises(UsageError):
            audit_gronwall(fake_traj(led), spec)

    def test_unknown_preset(self, tg_run):
        with pytest.raises(UsageError):
            audit_gronwall(tg_run, "no-such")

    @pytest.mark.parametrize("name", sorted(GRONWALL_PRESETS))
    def test_presets_finite(self, rb_run, name):
        rep = audit_gronwall(rb_run, name)
        assert rep.status in ("fitted", "identity-pass")
        if rep.status == "fitted":
            assert math.isfinite(rep.fitted_constant)

    def test_stride_comparison_reported(self):
        t = np.linspace(0, 1, 21)
        led = FakeLedger(t, L=np.exp(t), zero=0 * t)
        rep = audit_gronwall(fake_traj(led), self.SPEC)
        h2 = 2 * t[1]
        assert rep.details["stride_doubled_c"] == pytest.approx(math.sinh(h2) / h2, rel=1e-12)


class TestFieldChecks:
    def test_phi_heat(self, rb_run):
        rep = audit_phi_heat(rb_run)
        assert rep.ok and rep.max_relative_residual <= 1e-8

    def test_residual(self, rb_run):
        assert audit_residual(rb_run).max_relative_residual <= 1e-8

    def test_needs_fields(self):
        with pytest.raises(UsageError):
            audit_residual(SimpleNamespace(samples=[]))


class TestStability:
    def test_growth_bound_root(self):
        A, base, nu = 2.0, 0.01, 10.0
        c = _fit_growth_bound(1.0, A, base, nu)
        assert (c * (A**2 + 1) * A**2 / nu**2 + base) * math.exp(c * A**2) == pytest.approx(1.0, rel=1e-10)

    def test_growth_bound_large_A(self):
        # the bracket search must not overflow when A² is large
        A, base, nu = 30.0, 1e-4, 1e4
        c = _fit_growth_bound(2.0, A, base, nu)
        assert (c * (A**2 + 1) * A**2 / nu**2 + base) * math.exp(c * A**2) == pytest.approx(2.0, rel=1e-10)

    def test_growth_bound_already_holds(self):
        assert _fit_growth_bound(0.005, 1.0, 0.01, 10.0) == 0.0

    def test_taylor_green_small_difference(self, tg_run):
        rep = audit_stability(tg_run, gamma=1e-2)
        assert rep.ok and rep.details["checkpoints"] == 1
        assert rep.details["sup_u_h1sq_over_gamma_sq"] < 1.0


class TestFinal:
    def test_triangle(self, tg_run, rb_run):
        for traj in (tg_run, rb_run):
            rep = audit_final_bound(traj)
            assert rep.related[0].status == "identity-pass"
            assert rep.status == "fitted" and math.isfinite(rep.fitted_constant)

    def test_equality_when_u_vanishes(self, tg_run):
        led = tg_run.ledger
        assert led.row(0)["V_h1"] == led.row(0)["v_h1"]


class TestRunChecks:
    def test_gronwall_expands(self, rb_run):
        reps = run_checks(rb_run, ("gronwall",))
        assert [r.check_id for r in reps] == [f"gronwall.{k}" for k in GRONWALL_PRESETS]

    def test_all_ok_on_taylor_green(self, tg_run):
        reps = run_checks(tg_run, gamma=1e-2)
        assert all(r.ok for r in reps), [r.lines() for r in reps if not r.ok]
