"""Norm functionals and the running ledger of scalar diagnostics.

Conventions: a complex array is a spectral coefficient array, a real array is
a field sampled on the grid. Sobolev norms are Σ_{|α|≤s} |D^α f|₂² (summed
over multi-indices, not the (1+|k|²)^s multiplier). Space-time norms
|f|_{k,l,r,Ω^t} = (∫₀ᵗ |f|_{k,l}^r)^{1/r} are accumulated with the composite
trapezoid rule over sample times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import spectral as sp
from .errors import RegimeViolation, UsageError
from .estimates import EstimateParams, eval_cbar
from .helmholtz import decompose

# --- pointwise helpers ------------------------------------------------------


def _real(f):
    return sp.to_real(f) if np.iscomplexobj(f) else np.asarray(f, float)


def _spec(f):
    return f if np.iscomplexobj(f) else sp.to_spectral(np.asarray(f, float))


def magnitude(f: np.ndarray) -> np.ndarray:
    """Pointwise |f|: absolute value for scalars, Euclidean norm over the leading axes."""
    f = _real(f)
    if f.ndim == 3:
        return np.abs(f)
    return np.sqrt(np.sum(f.reshape(-1, *f.shape[-3:]) ** 2, axis=0))


def lp_norm(f: np.ndarray, p: float) -> float:
    """|f|_p by grid quadrature; vectors and tensors use the pointwise Euclidean magnitude."""
    if not p >= 1:
        raise UsageError(f"lp_norm needs p >= 1, got {p}")
    m = magnitude(f)
    if math.isinf(p):
        return float(np.max(m))
    cell = (2 * np.pi / m.shape[-1]) ** 3
    if p == 2:
        return math.sqrt(float(np.sum(m * m)) * cell)
    return (float(np.sum(m**p)) * cell) ** (1.0 / p)


def sobolev_norm_sq(f: np.ndarray, s: int) -> float:
    if not 0 <= s <= 4:
        raise UsageError(f"sobolev order must be 0..4, got {s}")
    F = _spec(f)
    grid = sp.create_grid(F.shape[-1])
    w = grid.sobolev_weight(s)
    return float(grid.volume * np.sum(w * np.abs(F) ** 2))


def sobolev_norm(f: np.ndarray, s: int) -> float:
    """‖f‖_s = (Σ_{|α|≤s} |D^α f|₂²)^{1/2}, derivatives spectral."""
    return math.sqrt(sobolev_norm_sq(f, s))


def gamma_norm_sq(f, f_t, k: int, l: int) -> float:
    if l not in (0, 1) or l > k:
        raise UsageError(f"gamma_norm needs l in {{0, 1}} and l <= k, got k={k}, l={l}")
    out = sobolev_norm_sq(f, k)
    if l == 1:
        if f_t is None:
            raise UsageError("gamma_norm with l = 1 needs the time derivative")
        out += sobolev_norm_sq(f_t, k - 1)
    return out


def gamma_norm(f, f_t, k: int, l: int) -> float:
    """|f|_{k,l} = (‖f‖_k² + [l=1] ‖f_t‖_{k−1}²)^{1/2}."""
    return math.sqrt(gamma_norm_sq(f, f_t, k, l))


def grad_tensor(F: np.ndarray) -> np.ndarray:
    """Real-space ∇f: shape (3, n, n, n) for scalars, (3, 3, n, n, n) with [i, j] = ∂_j f_i for vectors."""
    k = sp.create_grid(F.shape[-1]).k_odd
    if F.ndim == 3:
        return sp.to_real(1j * k * F)
    return sp.to_real(1j * k[None, :] * F[:, None])


def hessian(Fphi: np.ndarray) -> np.ndarray:
    """Real-space ∇²φ, shape (3, 3, n, n, n)."""
    return grad_tensor(sp.gradient(Fphi))


# --- L_r estimate terms -----------------------------------------------------


@dataclass
class LrTerms:
    r: float
    lr: float
    l3r: float
    grad_mag_pow: float
    direction_term: float
    div_term: float
    cbar_term: float
    singular_fraction: float
    grad_sq_l2: float
    grad_mag_sq_l2: float
    direction_sq_l2: float
    identity_residual: float


def lr_terms(v: np.ndarray, r: float, mu: float = 1.0, nu: float = 0.0, c0: float = 1.0,
             eps_rel: float = 1e-8) -> LrTerms:
    """Terms of the L_r estimate for v, with the identity
    |∇v|² = |v|²|∇(v/|v|)|² + |∇|v||² checked pointwise off the singular set.

    Gradients of |v| and v/|v| are obtained by the chain rule from the exact
    spectral ∇v; points with |v| ≤ eps_rel·|v|_∞ are excluded.
    """
    if not 2 <= r <= 6:
        raise UsageError(f"lr_terms needs r in [2, 6], got {r}")
    V = _spec(v)
    vr = sp.to_real(V)
    grid = sp.grid_of(V)
    cell = grid.cell_volume
    G = grad_tensor(V)  # [i, j] = ∂_j v_i
    mag = magnitude(vr)
    vmax = float(np.max(mag))
    mask = mag > eps_rel * vmax if vmax > 0 else np.zeros_like(mag, bool)
    safe = np.where(mask, mag, 1.0)
    n = vr / safe
    grad_mag = np.einsum("ixyz,ijxyz->jxyz", n, G) * mask  # ∇|v| = (∇v)ᵀ v/|v|
    grad_dir = (G - n[:, None] * grad_mag[None, :]) / safe * mask  # ∇(v/|v|)
    pow_half = np.where(mask, safe ** (r / 2.0), 0.0)
    grad_pow = (r / 2.0) * np.where(mask, safe ** (r / 2.0 - 1.0), 0.0) * grad_mag

    grad_sq = np.sum(G**2, axis=(0, 1)) * mask
    gm_sq = np.sum(grad_mag**2, axis=0)
    dir_sq = mag**2 * np.sum(grad_dir**2, axis=(0, 1))
    scale = max(float(np.max(grad_sq)), 1e-300)
    ident = float(np.max(np.abs(grad_sq - gm_sq - dir_sq))) / scale

    div = sp.to_real(sp.divergence(V))
    div_term = math.sqrt(float(np.sum((div * np.where(mask, safe ** (r / 2 - 1), 0.0)) ** 2)) * cell)
    if r > 2 and nu > 0:
        q = 3 * r / (r + 1)
        cbar_term = eval_cbar(r, mu, c0) * nu**r * lp_norm(div, q) ** r
    else:
        cbar_term = 0.0
    return LrTerms(
        r=r,
        lr=lp_norm(vr, r),
        l3r=lp_norm(vr, 3 * r),
        grad_mag_pow=math.sqrt(float(np.sum(grad_pow**2)) * cell),
        direction_term=math.sqrt(float(np.sum(pow_half**2 * np.sum(grad_dir**2, axis=(0, 1)))) * cell),
        div_term=div_term,
        cbar_term=cbar_term,
        singular_fraction=float(np.mean(~mask)),
        grad_sq_l2=float(np.sum(grad_sq)) * cell,
        grad_mag_sq_l2=float(np.sum(gm_sq)) * cell,
        direction_sq_l2=float(np.sum(dir_sq)) * cell,
        identity_residual=ident,
    )


# --- ledger -----------------------------------------------------------------


def mixed_exponents(p: float, variant: str = "pm1"):
    """(r, q) of the mixed norm |v|_{r,q,Ω^t} inside φ₁: r = 2p/(p−1) or 2p/(p−2), q = 2/(1−ϰ)."""
    kappa = 1.5 - 3.0 / p
    r = 2 * p / (p - 1) if variant == "pm1" else 2 * p / (p - 2)
    return r, 2.0 / (1.0 - kappa)


class _Trapezoid:
    """Running ∫ f dt over irregular samples."""

    __slots__ = ("value", "_t", "_f")

    def __init__(self):
        self.value = 0.0
        self._t = None
        self._f = None

    def add(self, t, f):
        if self._t is not None:
            self.value += 0.5 * (t - self._t) * (f + self._f)
        self._t, self._f = t, f
        return self.value


class _WindowTrapezoid:
    """∫_{kT}^t f dt with k = floor(t/T), restarting at every multiple of T."""

    def __init__(self, T):
        self.T = T
        self.value = 0.0
        self._t = None
        self._f = None

    def add(self, t, f):
        if self._t is not None:
            k_prev = math.floor(self._t / self.T + 1e-12)
            k_now = math.floor(t / self.T + 1e-12)
            if k_now == k_prev:
                self.value += 0.5 * (t - self._t) * (f + self._f)
            else:
                tb = k_now * self.T
                fb = self._f + (f - self._f) * (tb - self._t) / (t - self._t)
                self.value = 0.5 * (t - tb) * (f + fb)
        self._t, self._f = t, f
        return self.value


COLUMNS = (
    "t", "v_l2", "V_l2", "u_h1", "v_h1", "V_h1", "div_v_l2", "Psi", "chi0", "X", "Y",
    "X0_v", "X0_u", "G", "K", "D1", "D2", "energy_residual",
)


@dataclass
class LedgerOptions:
    mixed_variant: str = "pm1"  # "pm1": r = 2p/(p-1); "pm2": r = 2p/(p-2)
    d2_form: str = "halved"  # "halved": exp(D1²A1²/2); "full": exp(D1²A1²)
    gronwall: bool = True


class NormLedger:
    """Per-sample scalars and running space-time accumulators for one run.

    ``update`` must see samples in time order. Series are available through
    ``series(name)``; the latest snapshot through ``row(i)``.
    """

    def __init__(self, physics, estimates: EstimateParams | None = None,
                 options: LedgerOptions | None = None):
        self.physics = physics
        self.est = estimates or EstimateParams(mu=physics.mu, nu=max(physics.nu, 1e-300))
        self.opt = options or LedgerOptions()
        self.records: list[dict] = []
        self._acc = {name: _Trapezoid() for name in (
            "gphi31", "rot31", "vmix_pm1", "vmix_pm2", "lap18_6", "gphi_l2sq",
            "grad_v_sq", "div_v_sq", "v_h1sq", "v_l2sq_full", "lap_phi_l2sq")}
        self._acc_T = {name: _Trapezoid() for name in ("v_h3sq", "lap_h2sq")}
        self._win = _WindowTrapezoid(self.est.T)
        self._sup = {"gphi21": 0.0, "X": 0.0, "grad_lap": 0.0}
        self._min_phi_margin = math.inf
        self.initial: dict = {}
        self.regime_violation_at: float | None = None

    # -- accessors --
    def series(self, name: str) -> np.ndarray:
        return np.array([rec[name] for rec in self.records], float)

    def row(self, i: int) -> dict:
        return self.records[i]

    @property
    def last(self) -> dict:
        return self.records[-1]

    @property
    def times(self) -> np.ndarray:
        return self.series("t")

    def __len__(self):
        return len(self.records)

    @property
    def A1(self) -> float:
        return self.initial.get("A1", 0.0)

    @property
    def A_sup(self) -> float:
        return self._sup["X"]

    # -- update --
    def update(self, state) -> dict:
        """Record one sample; ``state`` needs t, V, v and cached tendencies."""
        t = float(state.t)
        if self.records and not t > self.records[-1]["t"]:
            raise UsageError(f"ledger sample at t={t} is not after t={self.records[-1]['t']}")
        mu, nu = self.physics.mu, self.physics.nu
        p = self.est.p
        kappa = self.est.kappa
        V, v = state.V, state.v
        v_t, V_t = state.v_t, state.V_t
        u = v - V
        pair = decompose(v)
        pair_t = decompose(v_t)
        gphi = sp.gradient(pair.phi)
        gphi_t = sp.gradient(pair_t.phi)
        rot = sp.curl(pair.psi)
        rot_t = sp.curl(pair_t.psi)
        vr = sp.to_real(v)
        rec = {"t": t}

        # elementary norms
        rec["v_l2"] = math.sqrt(sp.norm_sq(v))
        rec["V_l2"] = math.sqrt(sp.norm_sq(V))
        rec["u_l2"] = math.sqrt(sp.norm_sq(u))
        rec["v_h1"] = sobolev_norm(v, 1)
        rec["V_h1"] = sobolev_norm(V, 1)
        rec["u_h1"] = sobolev_norm(u, 1)
        rec["v_h2"] = sobolev_norm(v, 2)
        div_v = sp.divergence(v)
        rec["div_v_l2"] = math.sqrt(sp.norm_sq(div_v))
        grad_v_sq = sp.norm_sq(sp.grid_of(v).k_odd[None, :] * v[:, None])
        rec["grad_v_l2sq"] = grad_v_sq
        rec["V_div_max"] = float(np.max(np.abs(sp.divergence(V))))

        # energy identity: ⟨v_t, v⟩ + μ|∇v|² + ν|div v|² = 0
        diss = mu * grad_v_sq + nu * rec["div_v_l2"] ** 2
        rate = sp.inner(v_t, v)
        rec["energy_rate"] = rate
        rec["dissipation"] = diss
        rec["energy_residual"] = abs(rate + diss) / diss if diss > 0 else abs(rate)
        # convection alone is energy-neutral: ⟨(rot ψ·∇)v, v⟩ = 0
        nv = math.sqrt(sp.norm_sq(state.Nv)) * rec["v_l2"]
        rec["conv_work"] = abs(sp.inner(state.Nv, v)) / nv if nv > 0 else 0.0

        # Γ-norms of the potentials
        gphi21 = gamma_norm_sq(gphi, gphi_t, 2, 1)
        rot21 = gamma_norm_sq(rot, rot_t, 2, 1)
        gphi31 = gamma_norm_sq(gphi, gphi_t, 3, 1)
        rot31 = gamma_norm_sq(rot, rot_t, 3, 1)
        rec["gphi21"] = math.sqrt(gphi21)
        rec["rot21"] = math.sqrt(rot21)
        Y2 = nu * gphi21 + rot21
        rec["Y2"] = Y2
        rec["Y"] = math.sqrt(Y2)

        # pointwise Lebesgue norms
        grad_v = grad_tensor(v)
        rec["v_l6"] = lp_norm(vr, 6)
        rec["v_x_l6"] = lp_norm(grad_v, 6)
        rec["v_t_l6"] = lp_norm(v_t, 6)
        rec["rot_l6"] = lp_norm(rot, 6)
        rec["rot_l3"] = lp_norm(rot, 3)
        gphi_r = sp.to_real(gphi)
        hess = hessian(pair.phi)
        hess_t = hessian(pair_t.phi)
        rec["gphi_l2sq"] = sp.norm_sq(gphi)
        rec["gphi_l6"] = lp_norm(gphi_r, 6)
        rec["hess_l2sq"] = float(np.sum(hess**2)) * sp.grid_of(v).cell_volume
        rec["hess_l3"] = lp_norm(hess, 3)
        rec["hess_t_l2sq"] = float(np.sum(hess_t**2)) * sp.grid_of(v).cell_volume
        lap_phi = sp.laplacian(pair.phi)
        rec["lap_phi_l2sq"] = sp.norm_sq(lap_phi)
        rec["gphi_h1sq"] = sobolev_norm_sq(gphi, 1)
        rec["gphi_h2sq"] = sobolev_norm_sq(gphi, 2)
        rec["gphi_t_l2sq"] = sp.norm_sq(gphi_t)
        rec["phi_lp"] = lp_norm(pair.phi, p)

        # difference field
        rec["u_l2sq"] = sp.norm_sq(u)
        rec["u_h1sq"] = rec["u_h1"] ** 2
        grad_u = sp.grid_of(u).k_odd[None, :] * u[:, None]
        rec["u_x_l2sq"] = sp.norm_sq(grad_u)
        rec["grad_u_h1sq"] = sobolev_norm_sq(grad_u.reshape(9, *u.shape[-3:]), 1)

        # G² for the difference estimates (unit constant)
        G2 = (rec["v_h2"] ** 2 * rec["gphi_h1sq"] + rec["hess_t_l2sq"] + rec["gphi_h2sq"]
              + rec["gphi_l6"] ** 2 * rec["hess_l3"] ** 2 + rec["hess_l2sq"] * rec["hess_l3"] ** 2)
        rec["G2"] = G2

        # interpolation pieces for the Δφ mixed-norm bound
        rec["lap_phi_l18_7"] = lp_norm(lap_phi, 18.0 / 7.0)
        rec["grad_lap_l2"] = math.sqrt(sp.norm_sq(sp.gradient(lap_phi)))

        # mixed norms for φ₁
        r_l, q = mixed_exponents(p, "pm1")
        r_n, _ = mixed_exponents(p, "pm2")
        rec["v_lr_pm1"] = lp_norm(vr, r_l)
        rec["v_lr_pm2"] = lp_norm(vr, r_n)

        # -- accumulators --
        acc = self._acc
        I_gphi31 = acc["gphi31"].add(t, gphi31)
        I_rot31 = acc["rot31"].add(t, rot31)
        I_mix_l = acc["vmix_pm1"].add(t, rec["v_lr_pm1"] ** q)
        I_mix_n = acc["vmix_pm2"].add(t, rec["v_lr_pm2"] ** q)
        I_lap = acc["lap18_6"].add(t, rec["lap_phi_l18_7"] ** 6)
        I_gphi2 = acc["gphi_l2sq"].add(t, rec["gphi_l2sq"])
        I_grad_v = acc["grad_v_sq"].add(t, grad_v_sq)
        I_div = acc["div_v_sq"].add(t, rec["div_v_l2"] ** 2)
        I_vh1 = acc["v_h1sq"].add(t, rec["v_h1"] ** 2)
        I_lapphi = acc["lap_phi_l2sq"].add(t, rec["lap_phi_l2sq"])
        self._sup["gphi21"] = max(self._sup["gphi21"], rec["gphi21"])
        self._sup["grad_lap"] = max(self._sup["grad_lap"], rec["grad_lap_l2"])

        rec["I_gphi31"] = I_gphi31
        rec["I_rot31"] = I_rot31
        rec["Psi"] = nu * math.sqrt(I_gphi31)
        rec["chi0"] = math.sqrt(nu) * self._sup["gphi21"]
        X2 = Y2 + mu * (nu * I_gphi31 + I_rot31) + nu**2 * I_gphi31
        rec["X2"] = X2
        rec["X"] = math.sqrt(X2)
        self._sup["X"] = max(self._sup["X"], rec["X"])
        rec["A_sup"] = self._sup["X"]
        rec["vmix_pm1"] = I_mix_l ** (1.0 / q)
        rec["vmix_pm2"] = I_mix_n ** (1.0 / q)
        rec["I_v_h1sq"] = I_vh1
        # energy inequality: |v|² + μ∫‖v‖₁² + ν∫|Δφ|²
        rec["energy_lhs"] = rec["v_l2"] ** 2 + mu * I_vh1 + nu * I_lapphi
        rec["energy_balance"] = rec["v_l2"] ** 2 + 2 * mu * I_grad_v + 2 * nu * I_div

        # interpolation ratio
        lhs = I_lap ** (1.0 / 6.0)
        rhs = self._sup["grad_lap"] ** (2.0 / 3.0) * math.sqrt(I_gphi2) ** (1.0 / 3.0)
        rec["interp_lhs"] = lhs
        rec["interp_rhs"] = rhs
        rec["interp_ratio"] = lhs / rhs if rhs > 0 else 0.0

        # first-sample constants
        if not self.records:
            B0 = nu * gamma_norm_sq(gphi, gphi_t, 1, 1) + gamma_norm_sq(rot, rot_t, 1, 1)
            self.initial = {
                "A1": math.sqrt(self.est.c("energy")) * rec["v_l2"],
                "v0_l2": rec["v_l2"],
                "v0_l6": rec["v_l6"],
                "vt0_l2": math.sqrt(sp.norm_sq(v_t)),
                "phi0_lp": rec["phi_lp"],
                "gphi0_gamma21": rec["gphi21"],
                "X0": rec["X"],
                "Y0": rec["Y"],
                "B0": B0,
                "u0_h1": rec["u_h1"],
                "V0_h1": rec["V_h1"],
                "v0_h2": rec["v_h2"],
            }

        # X0_v: ‖v‖₂² + μ∫_T^t‖v‖₃² + ν∫_T^t‖Δφ‖₂²
        T = self.est.T
        if t >= T - 1e-12:
            a = self._acc_T["v_h3sq"].add(t, sobolev_norm_sq(v, 3))
            b = self._acc_T["lap_h2sq"].add(t, sobolev_norm_sq(lap_phi, 2))
        else:
            a = b = 0.0
        rec["X0_v"] = rec["v_h2"] ** 2 + mu * a + nu * b

        # X0_u and K of the difference estimates (stored as square roots)
        cg = self.est.c_generic
        W = self._win.add(t, rec["v_h2"] ** 2)
        rec["I_window_v_h2sq"] = W
        damp = math.exp(-cg * W)
        rec["X0_u"] = math.sqrt(damp * rec["u_h1sq"])
        rec["G"] = math.sqrt(cg * G2)
        rec["K"] = math.sqrt(damp * cg * G2)

        # B with A = sup X so far
        rec["B"] = math.exp(-mu * T) * self.initial["v0_l2"] + (
            self._sup["X"] / math.sqrt(nu) if nu > 0 else math.inf)

        # φ₁ denominator margin and D₁, D₂
        margin = self.initial["phi0_lp"] - math.sqrt(t) * rec["Psi"] / nu if nu > 0 else -math.inf
        self._min_phi_margin = min(self._min_phi_margin, margin)
        rec["phi_margin"] = self._min_phi_margin
        self.records.append(rec)
        try:
            D1 = compute_D1(self, self.est)
            rec["D1"] = D1
            rec["D2"] = compute_D2(self, self.est, D1)
        except RegimeViolation:
            if self.regime_violation_at is None:
                self.regime_violation_at = t
            rec["D1"] = math.nan
            rec["D2"] = math.nan
        return rec


def compute_D1(ledger: NormLedger, est: EstimateParams | None = None) -> float:
    """D₁ = c₁Ψ^{2/3}φ₁(Ψ^{1/3}/ν^{1/3} + ν^{−(ϰ−1/2)/3}) + c₁(|v(0)|₆ + A₁) at the latest sample.

    Raises RegimeViolation when min_t(|φ(0)|_p − √t Ψ/ν) ≤ 0.
    """
    est = est or ledger.est
    if not ledger.records:
        raise UsageError("compute_D1 on an empty ledger")
    rec = ledger.last
    ini = ledger.initial
    nu = ledger.physics.nu
    kappa = est.kappa
    tail = est.c1 * (ini["v0_l6"] + ini["A1"])
    Psi = rec["Psi"]
    if Psi == 0.0:
        return tail
    margin = ledger._min_phi_margin
    if not margin > 0:
        raise RegimeViolation(f"phi(0) margin {margin:.6g} <= 0 at t={rec['t']:.6g}", value=margin)
    mixed = rec["vmix_pm1"] if ledger.opt.mixed_variant == "pm1" else rec["vmix_pm2"]
    par = est.with_(phi0_lp=ini["phi0_lp"], mu=ledger.physics.mu, nu=nu)
    phi1 = _phi1_from_margin(par, margin, mixed)
    growth = Psi ** (1.0 / 3.0) / nu ** (1.0 / 3.0) + 1.0 / nu ** ((kappa - 0.5) / 3.0)
    return est.c1 * Psi ** (2.0 / 3.0) * phi1 * growth + tail


def _phi1_from_margin(par: EstimateParams, margin: float, mixed: float) -> float:
    k = par.kappa
    if mixed == 0.0:
        return 1.0
    den = ((par.mu + par.nu) ** k * margin) ** (1.0 / (1.0 - k))
    try:
        return math.exp(par.c("phi1") * mixed ** (2.0 / (1.0 - k)) / den)
    except OverflowError:
        return math.inf


def compute_D2(ledger: NormLedger, est: EstimateParams | None = None, D1: float | None = None) -> float:
    """D₂ = |v_t(0)|₂ exp(D₁²A₁²/2); the ``full`` option drops the 1/2."""
    est = est or ledger.est
    D1 = compute_D1(ledger, est) if D1 is None else D1
    A1 = ledger.A1
    half = 0.5 if ledger.opt.d2_form == "halved" else 1.0
    try:
        return ledger.initial["vt0_l2"] * math.exp(half * D1**2 * A1**2)
    except OverflowError:
        return math.inf
