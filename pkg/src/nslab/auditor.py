"""Numerical audits of identities and inequalities along a trajectory.

Identities are checked against a tolerance. Inequalities whose constants are
left unnamed are audited in fitted mode: the report carries the smallest
constant that makes the inequality hold at every sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import spectral as sp
from .dynamics import residual_1_9
from .errors import UsageError
from .estimates import solve_A
from .helmholtz import decompose

STATUSES = ("identity-pass", "inequality-pass", "fitted", "violated", "not-applicable")


@dataclass
class AuditReport:
    check_id: str
    status: str
    max_relative_residual: float = 0.0
    fitted_constant: float | None = None
    worst_time: float | None = None
    details: dict = field(default_factory=dict)
    related: list = field(default_factory=list)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise UsageError(f"unknown audit status {self.status!r}")
        if (self.fitted_constant is not None) != (self.status == "fitted"):
            raise UsageError("fitted_constant must be present exactly when status is 'fitted'")

    @property
    def ok(self) -> bool:
        return self.status != "violated" and all(r.ok for r in self.related)

    def lines(self, indent: str = "") -> list[str]:
        fc = "-" if self.fitted_constant is None else f"{self.fitted_constant:.6g}"
        wt = "-" if self.worst_time is None else f"{self.worst_time:.6g}"
        out = [f"{indent}{self.check_id}: {self.status} residual={self.max_relative_residual:.3e} "
               f"c={fc} worst_t={wt}"]
        for k, v in self.details.items():
            if np.isscalar(v) or isinstance(v, (bool, str)):
                out.append(f"{indent}  {k} = {v}")
        for r in self.related:
            out.extend(r.lines(indent + "  "))
        return out


def _ledger(traj):
    led = getattr(traj, "ledger", None)
    if led is None or len(led) == 0:
        raise UsageError("audit needs a trajectory with a populated ledger")
    return led


def _samples(traj):
    if not traj.samples:
        raise UsageError("audit needs stored fields (run with store_fields=True)")
    return traj.samples


# --- energy -----------------------------------------------------------------


def audit_energy(traj, tol: float = 1e-6, conv_tol: float = 1e-10) -> AuditReport:
    """Per-sample ½d/dt|v|₂² + μ|∇v|₂² + ν|div v|₂² = 0 with d/dt = ⟨v_t, v⟩, plus the
    integrated inequality |v(t)|₂² + μ∫‖v‖₁² + ν∫|Δφ|₂² ≤ c|v(0)|₂²."""
    led = _ledger(traj)
    t = led.times
    res = led.series("energy_residual")
    i = int(np.argmax(res))
    status = "identity-pass" if res[i] <= tol else "violated"

    conv = led.series("conv_work")
    conv_rep = AuditReport("energy.convection", "identity-pass" if conv.max() <= conv_tol else "violated",
                           float(conv.max()), worst_time=float(t[int(np.argmax(conv))]))

    v0sq = led.initial["v0_l2"] ** 2
    lhs = led.series("energy_lhs")
    c = led.est.c("energy")
    if v0sq > 0:
        ratio = lhs / (c * v0sq)
        j = int(np.argmax(ratio))
        ineq = AuditReport("energy.integrated", "inequality-pass" if ratio[j] <= 1 + tol else "violated",
                           max(0.0, float(ratio[j]) - 1.0), worst_time=float(t[j]),
                           details={"max_ratio": float(ratio[j])})
    else:
        ineq = AuditReport("energy.integrated", "inequality-pass" if lhs.max() == 0 else "violated",
                           float(lhs.max()))
    return AuditReport("energy", status, float(res[i]), worst_time=float(t[i]),
                       details={"samples": len(t), "tolerance": tol}, related=[conv_rep, ineq])


# --- decay ------------------------------------------------------------------


def audit_decay(traj, tol: float = 1e-12) -> AuditReport:
    """Envelope |v(t)|₂² ≤ e^{−μt}|v(0)|₂²; the Y-bound Y²(t) ≤ exp(−μt + cA⁴)Y²(0) in fitted mode."""
    led = _ledger(traj)
    mu = led.physics.mu
    t = led.times
    e = led.series("v_l2") ** 2
    env = e[0] * np.exp(-mu * t)
    excess = (e - env) / max(e[0], 1e-300)
    i = int(np.argmax(excess))
    status = "inequality-pass" if excess[i] <= tol else "violated"
    rate = None
    if e[0] > 0 and len(t) > 1 and e[-1] > 0:
        rate = float(-math.log(e[-1] / e[0]) / t[-1])

    Y2 = led.series("Y2")
    A = led.A_sup
    related = []
    if Y2[0] > 0 and A > 0:
        with np.errstate(divide="ignore"):
            logs = np.log(np.maximum(Y2, 1e-300) / Y2[0]) + mu * t
        c = max(0.0, float(np.max(logs)) / A**4)
        j = int(np.argmax(logs))
        related.append(AuditReport("decay.Y", "fitted", 0.0, fitted_constant=c, worst_time=float(t[j]),
                                   details={"A": A}))
    else:
        ok = np.all(Y2 <= Y2[0] * (1 + tol))
        related.append(AuditReport("decay.Y", "inequality-pass" if ok else "violated"))
    T = led.est.T
    if t[-1] >= T and Y2[0] > 0:
        k = int(np.argmin(np.abs(t - T)))
        ratio = Y2[k] / (Y2[0] * math.exp(-0.5 * mu * t[k]))
        related.append(AuditReport("decay.Y_at_T", "inequality-pass" if ratio <= 1 else "violated",
                                   max(0.0, ratio - 1), worst_time=float(t[k]), details={"ratio": ratio}))
    return AuditReport("decay", status, max(0.0, float(excess[i])), worst_time=float(t[i]),
                       details={"observed_rate": rate if rate is not None else 0.0, "mu": mu},
                       related=related)


# --- Gronwall family --------------------------------------------------------

_COEF = {
    "1": lambda mu, nu: 1.0,
    "mu": lambda mu, nu: mu,
    "nu": lambda mu, nu: nu,
    "1/nu": lambda mu, nu: 1.0 / nu if nu > 0 else math.inf,
}


@dataclass(frozen=True)
class Term:
    """coef · Π series^exponent over the listed ledger series."""

    coef: str = "1"
    factors: tuple = ()

    def evaluate(self, led, mu, nu) -> np.ndarray:
        out = np.full(len(led), _COEF[self.coef](mu, nu))
        for name, power in self.factors:
            out = out * led.series(name) ** power
        return out


@dataclass(frozen=True)
class GronwallSpec:
    """d/dt lhs + Σ dissipation ≤ c · Σ rhs, all read from ledger series."""

    inequality_id: str
    lhs_quantity: str
    dissipation: tuple
    rhs_factors: tuple

    def resolve(self, led):
        for term in (*self.dissipation, *self.rhs_factors):
            for name, _ in term.factors:
                if name not in led.records[0]:
                    raise UsageError(f"{self.inequality_id}: unknown ledger series {name!r}")


GRONWALL_PRESETS = {
    "gradient-energy": GronwallSpec(
        "gradient-energy", "gphi_l2sq",
        (Term("mu", (("hess_l2sq", 1),)), Term("nu", (("lap_phi_l2sq", 1),))),
        (Term("1/nu", (("rot_l3", 2), ("v_l6", 2))),),
    ),
    "Y": GronwallSpec(
        "Y", "Y2",
        (Term("mu", (("Y2", 1),)),),
        tuple(Term("1", (("Y2", 1), (name, 4))) for name in ("v_l6", "v_x_l6", "v_t_l6", "rot_l6")),
    ),
    "u-energy": GronwallSpec(
        "u-energy", "u_l2sq",
        (Term("mu", (("u_h1sq", 1),)),),
        (
            Term("1", (("u_l2sq", 1), ("v_x_l6", 2))),
            Term("1", (("u_l2sq", 1), ("gphi_l6", 4))),
            Term("1", (("v_h1", 2), ("gphi_l6", 2))),
            Term("1", (("gphi_h1sq", 1),)),
            Term("1", (("gphi_t_l2sq", 1),)),
        ),
    ),
    "u-gradient": GronwallSpec(
        "u-gradient", "u_x_l2sq",
        (Term("mu", (("grad_u_h1sq", 1),)),),
        (
            Term("1", (("u_x_l2sq", 3),)),
            Term("1", (("u_h1sq", 1), ("v_h2", 2))),
            Term("1", (("G2", 1),)),
        ),
    ),
}


def _centered(t, f):
    return (f[2:] - f[:-2]) / (t[2:] - t[:-2])


def _fit(t, lhs, diss, rhs, tol):
    """Smallest c ≥ 0 with lhs' + diss ≤ c·rhs at interior samples; None when no finite c exists."""
    demand = _centered(t, lhs) + diss[1:-1]
    r = rhs[1:-1]
    scale = max(float(np.max(np.abs(_centered(t, lhs)))), float(np.max(np.abs(diss))), 1e-300)
    zero = r <= 1e-300
    bad = zero & (demand > tol * scale)
    if np.any(bad):
        return None, demand, scale, int(np.argmax(np.where(bad, demand, -np.inf))) + 1
    if np.all(zero):
        return 0.0, demand, scale, int(np.argmax(demand)) + 1
    ratios = np.where(zero, -np.inf, demand / np.where(zero, 1.0, r))
    j = int(np.argmax(ratios))
    return max(0.0, float(ratios[j])), demand, scale, j + 1


def audit_gronwall(traj, spec: GronwallSpec | str, tol: float = 1e-6) -> AuditReport:
    """Fitted constant of a Gronwall-type inequality, with the stride-halving comparison."""
    led = _ledger(traj)
    if isinstance(spec, str):
        if spec not in GRONWALL_PRESETS:
            raise UsageError(f"unknown Gronwall preset {spec!r}; known: {sorted(GRONWALL_PRESETS)}")
        spec = GRONWALL_PRESETS[spec]
    spec.resolve(led)
    if len(led) < 3:
        return AuditReport(f"gronwall.{spec.inequality_id}", "not-applicable",
                           details={"reason": "fewer than 3 samples"})
    mu, nu = led.physics.mu, led.physics.nu
    t = led.times
    lhs = led.series(spec.lhs_quantity)
    diss = sum(term.evaluate(led, mu, nu) for term in spec.dissipation)
    rhs = sum(term.evaluate(led, mu, nu) for term in spec.rhs_factors)
    c, demand, scale, j = _fit(t, lhs, diss, rhs, tol)
    cid = f"gronwall.{spec.inequality_id}"
    if c is None:
        return AuditReport(cid, "violated", float(demand[j - 1] / scale), worst_time=float(t[j]),
                           details={"reason": "zero right-hand side with positive demand"})
    if np.all(rhs[1:-1] <= 1e-300):
        rel = max(0.0, float(np.max(demand)) / scale)
        return AuditReport(cid, "identity-pass", rel, worst_time=float(t[j]),
                           details={"reason": "right-hand side vanishes"})
    coarse = None
    if len(t) >= 5:
        sl = slice(None, None, 2)
        c2, *_ = _fit(t[sl], lhs[sl], diss[sl], rhs[sl], tol)
        coarse = c2
    details = {"samples": len(t), "stride_doubled_c": coarse if coarse is not None else math.nan}
    if coarse is not None and c > 0:
        details["stride_relative_change"] = abs(coarse - c) / c
    return AuditReport(cid, "fitted", 0.0, fitted_constant=c, worst_time=float(t[j]), details=details)


# --- gradient potential heat equation ---------------------------------------


def phi_heat_residual(sample, params, dealias: bool = True) -> tuple[float, float]:
    """(‖LHS − RHS‖₂, max(‖LHS‖₂, ‖RHS‖₂)) for
    φ_t − (μ+ν)Δφ = −Δ⁻¹∂_i∂_j(v_i v_j) + Δ⁻¹∂_i∂_j(φ_{x_j} v_i)."""
    v = sample.v
    grid = sp.grid_of(v)
    phi = decompose(v).phi
    phi_t = decompose(sample.v_t).phi
    lhs = phi_t - (params.mu + params.nu) * sp.laplacian(phi)
    vr = sp.to_real(v)
    gphi = sp.to_real(sp.gradient(phi))
    # m_ij = v_i v_j − v_i φ_{x_j} = v_i (rot ψ)_j
    m = sp.to_spectral(vr[:, None] * (vr - gphi)[None, :])
    if dealias:
        m = sp.dealias(m)
    k = grid.k_odd
    didj = -np.einsum("ixyz,jxyz,ijxyz->xyz", k, k, m)
    rhs = -sp.inverse_laplacian(sp.zero_mean(didj))
    diff = math.sqrt(sp.norm_sq(lhs - rhs))
    return diff, max(math.sqrt(sp.norm_sq(lhs)), math.sqrt(sp.norm_sq(rhs)))


def audit_phi_heat(traj, tol: float = 1e-4) -> AuditReport:
    samples = _samples(traj)
    res, times = [], []
    for s in samples:
        d, scale = phi_heat_residual(s, traj.params, traj.dealias)
        res.append(d / scale if scale > 0 else d)
        times.append(s.t)
    res = np.array(res)
    i = int(np.argmax(res))
    return AuditReport("phi_heat", "identity-pass" if res[i] <= tol else "violated", float(res[i]),
                       worst_time=float(times[i]), details={"samples": len(res), "tolerance": tol})


# --- difference system ------------------------------------------------------


def audit_residual(traj, tol: float = 1e-4) -> AuditReport:
    """Curl of the difference-system residual: R must be a gradient."""
    samples = _samples(traj)
    ratios = np.array([residual_1_9(s, traj.params, traj.dealias).curl_ratio for s in samples])
    i = int(np.argmax(ratios))
    return AuditReport("residual", "identity-pass" if ratios[i] <= tol else "violated", float(ratios[i]),
                       worst_time=float(samples[i].t), details={"samples": len(ratios), "tolerance": tol})


# --- stability of the difference ---------------------------------------------


def _fit_growth_bound(target: float, A: float, base: float, nu: float) -> float:
    """Smallest c ≥ 0 with target ≤ [c(A²+1)A²/ν² + base]·exp(cA²)."""
    def f(c):
        # exp overflow means the bound is already far above the target
        e = math.exp(c * A**2) if c * A**2 < 700 else math.inf
        return (c * (A**2 + 1) * A**2 / nu**2 + base) * e - target

    if f(0.0) >= 0:
        return 0.0
    if A == 0:
        return math.inf
    hi = min(1.0, 600.0 / A**2)
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e300:
            return math.inf
    return brentq(f, 0.0, hi, xtol=1e-15, rtol=1e-12)


def audit_stability(traj, gamma: float, tol: float = 1e-12) -> AuditReport:
    """Checkpoint bound ‖u(kT)‖₁² ≤ γ² and the fitted growth bound
    ‖u(t)‖₁² ≤ [c(A²+1)A²/ν² + γ²]exp(cA²) with A = sup X from the ledger."""
    led = _ledger(traj)
    t = led.times
    uh = led.series("u_h1sq")
    nu = led.physics.nu
    g2 = gamma**2
    A = led.A_sup
    T = led.est.T
    checkpoints = []
    k = 0
    while k * T <= t[-1] + 1e-12:
        i = int(np.argmin(np.abs(t - k * T)))
        if abs(t[i] - k * T) <= 1e-9 * max(1.0, T):
            checkpoints.append((float(t[i]), float(uh[i])))
        k += 1
    cp_ok = all(val <= g2 * (1 + tol) for _, val in checkpoints)
    sup_ratio = float(uh.max() / g2) if g2 > 0 else (0.0 if uh.max() == 0 else math.inf)
    c = _fit_growth_bound(float(uh.max()), A, g2, nu) if nu > 0 else math.inf
    details = {
        "sup_u_h1sq_over_gamma_sq": sup_ratio,
        "sup_u_h1": float(math.sqrt(uh.max())),
        "A": A,
        "checkpoints": len(checkpoints),
        "checkpoints_ok": cp_ok,
        "X0_u_max": float(led.series("X0_u").max()),
        "K_max": float(led.series("K").max()),
    }
    j = int(np.argmax(uh))
    cp = AuditReport("stability.checkpoints", "inequality-pass" if cp_ok else "violated",
                     max(0.0, max((v / g2 - 1 for _, v in checkpoints), default=0.0)) if g2 > 0 else 0.0)
    if not math.isfinite(c):
        return AuditReport("stability", "violated", sup_ratio, worst_time=float(t[j]), details=details,
                           related=[cp])
    return AuditReport("stability", "fitted", 0.0, fitted_constant=c, worst_time=float(t[j]),
                       details=details, related=[cp])


# --- final bound ------------------------------------------------------------


def audit_final_bound(traj, gamma: float | None = None, tol: float = 1e-12) -> AuditReport:
    """Triangle chain ‖V‖₁ ≤ ‖v‖₁ + ‖u‖₁ and the assembled bound
    ‖V‖₁² ≤ A² + [c(A²+1)A²/ν² + γ²]exp(cA²) with A from the fixed-point solver."""
    led = _ledger(traj)
    t = led.times
    Vh, vh, uh = led.series("V_h1"), led.series("v_h1"), led.series("u_h1")
    gap = (Vh - vh - uh) / np.maximum(vh + uh, 1e-300)
    i = int(np.argmax(gap))
    tri = AuditReport("final.triangle", "identity-pass" if gap[i] <= tol else "violated",
                      max(0.0, float(gap[i])), worst_time=float(t[i]))

    ini = led.initial
    seeded = led.est.with_(mu=led.physics.mu, nu=max(led.physics.nu, 1e-300), v0_l2=ini["v0_l2"],
                           v0_l6=ini["v0_l6"], vt0_l2=ini["vt0_l2"], X0=ini["X0"], B0=ini["B0"],
                           phi0_lp=ini["phi0_lp"] if ini["phi0_lp"] > 0 else None)
    sol = solve_A(seeded)
    if sol.converged and math.isfinite(sol.A):
        A, source = sol.A, "fixed-point"
    else:
        A, source = led.A_sup, "measured-sup-X"
    g2 = (gamma if gamma is not None else led.est.gamma) ** 2
    target = float(np.max(Vh**2))
    nu = led.physics.nu
    base = A**2 + g2
    if target <= base:
        c = 0.0
    else:
        c = _fit_growth_bound(target - A**2, A, g2, nu) if nu > 0 else math.inf
    details = {"A": A, "A_source": source, "solver_converged": sol.converged,
               "sup_V_h1sq": target}
    j = int(np.argmax(Vh))
    status = "fitted" if math.isfinite(c) else "violated"
    return AuditReport("final", status, 0.0 if status == "fitted" else math.inf,
                       fitted_constant=c if status == "fitted" else None, worst_time=float(t[j]),
                       details=details, related=[tri])


# --- registry ---------------------------------------------------------------

CHECKS = ("energy", "decay", "gronwall", "phi_heat", "stability", "final", "residual")


def run_checks(traj, checks=CHECKS, gamma: float | None = None) -> list[AuditReport]:
    """Run the named audits; ``gronwall`` expands to every preset."""
    out = []
    for name in checks:
        if name == "energy":
            out.append(audit_energy(traj))
        elif name == "decay":
            out.append(audit_decay(traj))
        elif name == "gronwall":
            out.extend(audit_gronwall(traj, key) for key in GRONWALL_PRESETS)
        elif name == "phi_heat":
            out.append(audit_phi_heat(traj))
        elif name == "stability":
            out.append(audit_stability(traj, gamma if gamma is not None else traj.ledger.est.gamma))
        elif name == "final":
            out.append(audit_final_bound(traj, gamma))
        elif name == "residual":
            out.append(audit_residual(traj))
        else:
            raise UsageError(f"unknown check {name!r}; known: {', '.join(CHECKS)}")
    return out
