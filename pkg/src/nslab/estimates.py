"""The a-priori constant chain as executable scalar formulas.

Every unnamed absolute constant collapses to ``c_generic`` unless a per-site
override is supplied in ``EstimateParams.c_overrides``. Recognised override
keys: ``phi1`` (exponent of the φ₁ factor and of D₁(X)), ``chain`` (the
composite bound φ²), ``energy`` (integrated energy bound), ``decay`` (the
cA⁴ and cA² smallness predicates), ``stability`` (the γ* predicate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, RegimeViolation, UsageError

LOWER_BOUND_NORMS = ("l6", "l2")
CHAIN_FORMS = ("nested", "flat")


@dataclass(frozen=True)
class EstimateParams:
    """Constants, exponents and initial-data norms feeding the bound chain."""

    mu: float = 1.0
    nu: float = 1e6
    p: float = 4.0
    beta: float | None = None
    T: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    c4: float = 1.0
    c_generic: float = 1.0
    c_p: float = 1.0
    c0_embed: float = 1.0
    gamma: float = 1e-2
    gamma_star: float = 1e-2
    # initial-data norms
    v0_l2: float = 0.1
    v0_l6: float = 0.1
    vt0_l2: float = 0.1
    phi0_lp: float | None = None
    X0: float = 0.01
    B0: float = 0.01
    # switches
    t_freeze: float | None = None
    lower_bound_norm: str = "l6"
    chain_form: str = "nested"
    c_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 3.0 < self.p < 6.0:
            raise ConfigurationError(f"p must lie strictly inside (3, 6), got {self.p}", key="p")
        if not self.mu > 0:
            raise ConfigurationError(f"mu must be positive, got {self.mu}", key="mu")
        if not self.nu > 0:
            raise ConfigurationError(f"nu must be positive, got {self.nu}", key="nu")
        if self.beta is not None and not self.beta < 2.0 * (1.0 - self.kappa):
            raise ConfigurationError(
                f"beta must be < 2(1-kappa) = {2 * (1 - self.kappa):g}, got {self.beta}", key="beta"
            )
        for name in ("T", "c1", "c2", "c3", "c4", "c_generic", "c_p", "c0_embed",
                     "gamma", "gamma_star"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive", key=name)
        for name in ("v0_l2", "v0_l6", "vt0_l2", "X0", "B0"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigurationError(f"{name} must be finite and non-negative", key=name)
        if self.phi0_lp is not None and not self.phi0_lp >= 0:
            raise ConfigurationError("phi0_lp must be non-negative", key="phi0_lp")
        if self.t_freeze is not None and not self.t_freeze > 0:
            raise ConfigurationError("t_freeze must be positive", key="t_freeze")
        if self.lower_bound_norm not in LOWER_BOUND_NORMS:
            raise ConfigurationError(
                f"lower_bound_norm must be one of {LOWER_BOUND_NORMS}", key="lower_bound_norm"
            )
        if self.chain_form not in CHAIN_FORMS:
            raise ConfigurationError(f"chain_form must be one of {CHAIN_FORMS}", key="chain_form")

    @property
    def kappa(self) -> float:
        return 1.5 - 3.0 / self.p

    @property
    def A1(self) -> float:
        return self.v0_l2

    @property
    def t_star(self) -> float:
        """Time at which D₁(X) is frozen; ν^{1-ϰ} unless overridden."""
        return self.nu ** (1.0 - self.kappa) if self.t_freeze is None else self.t_freeze

    @property
    def horizon_exponent(self) -> float:
        """β of the horizon predicate; without a configured β the supremum 2(1-ϰ)."""
        return 2.0 * (1.0 - self.kappa) if self.beta is None else self.beta

    def c(self, site: str) -> float:
        return float(self.c_overrides.get(site, self.c_generic))

    def with_(self, **changes) -> "EstimateParams":
        return replace(self, **changes)


# --- closed-form pieces -----------------------------------------------------


def eval_cbar(r: float, mu: float, c0: float) -> float:
    """ν-free factor c̄(r, μ, c₀) of the div-v term in the L_r estimate."""
    if not r > 2:
        raise UsageError(f"eval_cbar requires r > 2, got {r}")
    if not (mu > 0 and c0 > 0):
        raise UsageError("eval_cbar requires mu > 0 and c0 > 0")
    return (r - 2) * ((r - 2) / ((r - 1) * mu)) ** (r - 1) * r ** (r / 2 - 2) / c0 ** (r / 2 - 1)


def eval_phi1(params: EstimateParams, Psi, t, v_mixed_norm: float) -> float:
    """exp[c m^{2/(1-ϰ)} / ((μ+ν)^ϰ min_t(|φ(0)|_p − √t Ψ/ν))^{1/(1-ϰ)}].

    ``Psi`` and ``t`` may be arrays of sampled values; the minimum over them
    enters the denominator.
    """
    if params.phi0_lp is None:
        raise UsageError("eval_phi1 needs params.phi0_lp")
    margin = phi1_margin(params, Psi, t)
    if not margin > 0:
        raise RegimeViolation(
            f"|phi(0)|_p - sqrt(t) Psi / nu = {margin:.6g} <= 0", value=margin
        )
    k = params.kappa
    m = float(v_mixed_norm)
    if m == 0.0:
        return 1.0
    den = ((params.mu + params.nu) ** k * margin) ** (1.0 / (1.0 - k))
    try:
        return math.exp(params.c("phi1") * m ** (2.0 / (1.0 - k)) / den)
    except OverflowError:
        return math.inf


def phi1_margin(params: EstimateParams, Psi, t) -> float:
    """min over samples of |φ(0)|_p − √t Ψ(t)/ν."""
    Psi = np.atleast_1d(np.asarray(Psi, float))
    t = np.atleast_1d(np.asarray(t, float))
    return float(np.min(params.phi0_lp - np.sqrt(t) * Psi / params.nu))


def D1_of_X(params: EstimateParams, X: float) -> float:
    """D₁ as a function of the composite bound X, with t frozen at ``t_star``."""
    k = params.kappa
    nu = params.nu
    den = params.c3 - math.sqrt(params.t_star) * X / nu ** (1.0 - k)
    if not den > 0:
        raise RegimeViolation(
            f"c3 - sqrt(t) X / nu^(1-kappa) = {den:.6g} <= 0 at X = {X:.6g}", value=X
        )
    expo = params.c("phi1") * X ** (2.0 / (1.0 - k)) / den ** (1.0 / (1.0 - k))
    growth = X / nu ** (1.0 / 3.0) + X ** (2.0 / 3.0) / nu ** ((k - 0.5) / 3.0)
    head = params.c1 * math.exp(expo) * growth if growth > 0 else 0.0
    return head + params.c1 * params.v0_l6 + params.A1


def D2_of_D1(params: EstimateParams, D1: float) -> float:
    try:
        return params.vt0_l2 * math.exp(D1**2 * params.A1**2 / 2.0)
    except OverflowError:
        return math.inf if params.vt0_l2 > 0 else 0.0


def _phi_sq_nested(D1, D2, a, b2, A1, B0):
    """φ² assembled from the intermediate bounds φ_t, φ₂ … φ₅ (without c)."""
    b4 = b2 * b2
    a2 = a * a
    phit = (D1**2 + b2) * (D2**2 + a2)
    phi2 = A1**2 * (D1**4 + D1**8 + b4) + D1**4 * B0
    phi3 = (D1**4 + b4) * (phit + B0) + (D2**2 + b2) * (phi2 + B0) + (D1**2 + b2) * a2
    phi4 = ((A1**2 + a2) * (D1**2 + b2) ** 4 + (A1**2 + b2) * (phi2 + B0) ** 4
            + a2 * (D1**2 + b2) ** 4)
    phi5 = (phi2 + B0) * D2**4 + phi3 + phi4
    return A1**2 * D1**4 + phit + phi2 + phi5


def _phi_sq_flat(D1, D2, a, b2, A1, B0):
    """φ² in the single collected display (without c)."""
    b4 = b2 * b2
    a2 = a * a
    s = D1**4 + D1**8 + b4
    return (
        (A1**2 + a2) * (D1**2 + b2) ** 4
        + (1 + D1**4 + b4) * (D1**2 + b2) * (D2**2 + a2)
        + A1**2 * (1 + D2**2 + D2**4 + b2) * s
        + A1**8 * (A1**2 + b2) * s**4
        + (A1**2 + b2) * (1 + D1**16) * B0**4
        + (1 + D1**4) * (D2**2 + D2**4 + b2 + D1**4 + b4) * B0
    )


def phi_composite(params: EstimateParams, D1, D2, Psi_over_nu, chi0_over_sqrt_nu, B0) -> float:
    """φ(D₁, D₂, Ψ/ν, χ₀/√ν, B(0)) ≥ 0."""
    form = _phi_sq_nested if params.chain_form == "nested" else _phi_sq_flat
    try:
        sq = params.c("chain") * form(D1, D2, Psi_over_nu, chi0_over_sqrt_nu**2, params.A1, B0)
    except OverflowError:
        return math.inf
    return math.sqrt(sq) if math.isfinite(sq) else math.inf


def eval_bound_chain(params: EstimateParams, X: float) -> float:
    """Right-hand side φ(D₁(X), D₂(X), X/ν, X/√ν, B(0)) + X(0)."""
    X = float(X)
    if X < 0:
        raise UsageError(f"X must be non-negative, got {X}")
    try:
        D1 = D1_of_X(params, X)
        D2 = D2_of_D1(params, D1)
    except OverflowError:
        return math.inf
    return phi_composite(params, D1, D2, X / params.nu, X / math.sqrt(params.nu),
                         params.B0) + params.X0


def lower_bound_A(params: EstimateParams) -> float:
    """The ν = ∞ value of the right-hand side, used to start the iteration.

    The exponent of D₂ uses D₁² as in D₂(X); the ``l2`` option swaps |v(0)|₆
    for |v(0)|₂ in the first argument.
    """
    v0 = params.v0_l6 if params.lower_bound_norm == "l6" else params.v0_l2
    D1 = params.c1 * v0 + params.A1
    D2 = D2_of_D1(params, params.c1 * params.v0_l6 + params.A1)
    return phi_composite(params, D1, D2, 0.0, 0.0, params.B0) + params.X0


# --- fixed point ------------------------------------------------------------


@dataclass
class FixedPointResult:
    A: float
    iterations: int
    contraction_modulus: float
    converged: bool
    lower_bound_ok: bool
    lower_bound: float = float("nan")
    relaxed: bool = False
    regime_violation: bool = False
    offending_iterate: float | None = None
    message: str = ""
    history: list = field(default_factory=list)

    @property
    def contraction(self) -> bool:
        return self.contraction_modulus < 1.0

    def as_row(self) -> dict:
        return {
            "A": self.A,
            "iterations": self.iterations,
            "contraction_modulus": self.contraction_modulus,
            "converged": int(self.converged),
            "contraction": int(self.contraction),
            "lower_bound": self.lower_bound,
            "lower_bound_ok": int(self.lower_bound_ok),
            "relaxed": int(self.relaxed),
            "regime_violation": int(self.regime_violation),
        }


def _modulus(params, A, A_prev_steps):
    """Largest sampled difference quotient of the map around A."""
    quotients = []
    for rel in (1e-7, 1e-5, 1e-3):
        h = rel * (1.0 + A)
        try:
            hi = eval_bound_chain(params, A + h)
            lo = eval_bound_chain(params, max(A - h, 0.0))
        except RegimeViolation:
            return math.inf
        if not (math.isfinite(hi) and math.isfinite(lo)):
            return math.inf
        quotients.append(abs(hi - lo) / (A + h - max(A - h, 0.0)))
    # empirical ratio of the last iterate differences
    if len(A_prev_steps) >= 3:
        d1 = A_prev_steps[-1] - A_prev_steps[-2]
        d0 = A_prev_steps[-2] - A_prev_steps[-3]
        if d0 != 0 and d1 != 0:
            quotients.append(abs(d1 / d0))
    return max(quotients)


def solve_A(params: EstimateParams, max_iter: int = 500, rtol: float = 1e-10) -> FixedPointResult:
    """Successive approximations A_{j+1} = map(A_j) from the ν = ∞ lower bound.

    Regime violations and non-convergence are reported in the result, never
    raised. When successive differences alternate in sign the iteration
    switches to the 0.5-averaged map and sets ``relaxed``.
    """
    A0 = lower_bound_A(params)
    result = FixedPointResult(A=A0, iterations=0, contraction_modulus=math.nan,
                              converged=False, lower_bound_ok=False, lower_bound=A0)
    hist = [A0]
    A = A0
    if not math.isfinite(A0):
        result.message = "the nu = infinity lower bound already overflows"
        result.contraction_modulus = math.inf
        result.history = hist
        return result
    relaxed = False
    for j in range(1, max_iter + 1):
        try:
            An = eval_bound_chain(params, A)
        except RegimeViolation as exc:
            result.regime_violation = True
            result.offending_iterate = A
            result.message = str(exc)
            result.iterations = j
            result.contraction_modulus = math.inf
            result.A = A
            result.history = hist
            return result
        if not math.isfinite(An):
            result.message = f"map overflowed at A = {A:.6g}"
            result.offending_iterate = A
            result.iterations = j
            result.contraction_modulus = math.inf
            result.A = A
            result.history = hist
            return result
        if relaxed:
            An = 0.5 * (A + An)
        hist.append(An)
        if len(hist) >= 3 and not relaxed:
            d1, d0 = hist[-1] - hist[-2], hist[-2] - hist[-3]
            if d1 * d0 < 0:
                relaxed = True
        if abs(An - A) <= rtol * (1.0 + An):
            A = An
            result.iterations = j
            break
        A = An
        result.iterations = j
    result.A = A
    result.relaxed = relaxed
    result.history = hist
    result.contraction_modulus = _modulus(params, A, hist)
    try:
        residual = abs(A - eval_bound_chain(params, A))
    except RegimeViolation:
        residual = math.inf
    result.converged = residual <= rtol * (1.0 + A) * 10 and result.contraction_modulus < 1.0
    # the ν = ∞ lower bound must lie below the solution (strictly above the ν = ∞ map value)
    result.lower_bound_ok = A >= A0
    if not result.converged and not result.message:
        result.message = (
            "no contraction" if result.contraction_modulus >= 1 else "max_iter reached"
        )
    return result


# --- admissibility ----------------------------------------------------------


@dataclass
class Condition:
    name: str
    ok: bool
    margin: float
    detail: str = ""


@dataclass
class AdmissibilityReport:
    conditions: list

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.conditions if not c.name.endswith("(variant)"))

    def __getitem__(self, name):
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self):
        for c in self.conditions:
            yield f"{c.name:<28} {'ok' if c.ok else 'FAIL':<5} margin={c.margin:.6g} {c.detail}"


def check_admissibility(params: EstimateParams, A: float, Psi: float = 0.0,
                        t: float | None = None) -> AdmissibilityReport:
    """Evaluate every admissibility predicate; the verdict is their conjunction.

    ``decay_A2(variant)`` is reported but does not enter the verdict.
    """
    k = params.kappa
    mu, nu, T = params.mu, params.nu, params.T
    t = params.t_star if t is None else t
    conds = []

    if params.phi0_lp is not None:
        m = (mu + nu) ** k * (params.phi0_lp - math.sqrt(t) * Psi / nu) - params.c2
        conds.append(Condition("phi_margin", m >= 0, m, "(mu+nu)^k(|phi0|_p - sqrt(t)Psi/nu) >= c2"))
        lo = params.c3 / nu**k
        hi = params.c4 / nu**k
        conds.append(Condition("phi0_lower", params.phi0_lp >= lo, params.phi0_lp - lo,
                               "c3/nu^k <= |phi0|_p"))
        conds.append(Condition("phi0_upper", params.phi0_lp <= hi, hi - params.phi0_lp,
                               "|phi0|_p <= c4/nu^k"))

    cd = params.c("decay")
    m4 = mu * T / 2 - cd * A**4
    conds.append(Condition("decay_A4", m4 > 0, m4, "c A^4 < mu T / 2"))
    m2 = mu * T / 2 - cd * A**2
    conds.append(Condition("decay_A2(variant)", m2 >= 0, m2, "c A^2 <= mu T / 2"))

    horizon = nu ** params.horizon_exponent
    conds.append(Condition("horizon", T < horizon, horizon - T, "T < nu^beta"))

    cs = params.c("stability")
    with np.errstate(over="ignore"):
        ms = mu / 2 - cs * float(np.exp(2 * cs * A**2)) * params.gamma_star**4
    conds.append(Condition("gamma_star", ms >= 0, ms, "mu - c exp(2cA^2) gamma*^4 >= mu/2"))
    return AdmissibilityReport(conds)


def nu_sweep(base: EstimateParams, nus) -> list:
    """solve_A at each ν, in the given order."""
    return [(float(nu), solve_A(base.with_(nu=float(nu)))) for nu in nus]
