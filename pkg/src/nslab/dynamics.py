"""Right-hand sides, integrating-factor RK4 and the coupled (V, v) runner.

V solves the incompressible system (pressure removed by Leray projection), v
solves the two-viscosity system

    v_t + rot ψ·∇v − μΔv − ν∇div v = 0,

and u = v − V is formed at every sample rather than evolved. All fields are
spectral coefficient arrays of shape (3, n, n, n).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import spectral as sp
from .errors import BlowUpError, ModelError, ScenarioError, UsageError
from .helmholtz import PotentialPair, decompose, leray_project

SCENARIOS = ("taylor-green", "random-band", "paper-scaling")


class CFLWarning(RuntimeWarning):
    """dt exceeds the advective CFL heuristic 0.5·Δx / max|v|."""


@dataclass(frozen=True)
class PhysicalParams:
    mu: float = 1.0
    nu: float = 100.0

    def __post_init__(self):
        from .errors import ConfigurationError

        if not (math.isfinite(self.mu) and self.mu > 0):
            raise ConfigurationError(f"mu must be positive, got {self.mu}", key="mu")
        if not (math.isfinite(self.nu) and self.nu >= 0):
            raise ConfigurationError(f"nu must be non-negative, got {self.nu}", key="nu")


# --- nonlinear terms --------------------------------------------------------


def _advect(W: np.ndarray, U: np.ndarray, dealias: bool) -> np.ndarray:
    """Spectral coefficients of (w·∇)u, optionally 2/3-truncated."""
    w = sp.to_real(W)
    grad_u = sp.to_real(1j * sp.grid_of(U).k_odd[None, :] * U[:, None])  # [i, j] = ∂_j u_i
    prod = sp.to_spectral(np.einsum("jxyz,ijxyz->ixyz", w, grad_u))
    return sp.dealias(prod) if dealias else prod


def convection_nse(V: np.ndarray, dealias: bool = True) -> np.ndarray:
    """−P_L (V·∇V)."""
    return -leray_project(sp.zero_mean(_advect(V, V, dealias)))


def convection_lame(v: np.ndarray, dealias: bool = True) -> np.ndarray:
    """−(rot ψ)·∇v with rot ψ the solenoidal part of v; not projected."""
    w = leray_project(v)
    return sp.zero_mean(-_advect(w, v, dealias))


def _lame_linear(v: np.ndarray, params: PhysicalParams) -> np.ndarray:
    grid = sp.grid_of(v)
    out = -params.mu * grid.k2 * v
    if params.nu:
        k = grid.k_odd
        out = out - params.nu * k * np.sum(k * v, axis=0)
    return out


def _divergence_max(V):
    scale = max(float(np.max(np.abs(V))), 1.0)
    return float(np.max(np.abs(sp.divergence(V)))) / scale


def rhs_nse(V: np.ndarray, mu: float, dealias: bool = True, tol: float = 1e-8) -> np.ndarray:
    """−P_L(V·∇V) + μΔV for a solenoidal zero-mean V."""
    if _divergence_max(V) > tol:
        raise ModelError("rhs_nse: V is not divergence-free")
    return convection_nse(V, dealias) + mu * sp.laplacian(V)


def rhs_lame(v: np.ndarray, mu: float, nu: float, dealias: bool = True) -> np.ndarray:
    """−rot ψ·∇v + μΔv + ν∇div v."""
    return convection_lame(v, dealias) + _lame_linear(v, PhysicalParams(mu, nu))


# --- integrating factors ----------------------------------------------------


class _Propagator:
    """exp(L h) for the NSE (scalar per mode) and the Lamé operator (per-mode 3×3)."""

    def __init__(self, grid: sp.Grid, params: PhysicalParams, h: float):
        self.visc = np.exp(-params.mu * grid.k2 * h)
        k = grid.k_odd
        ko2 = np.sum(k * k, axis=0)
        self.khat = np.zeros_like(k)
        nz = ko2 > 0
        self.khat[:, nz] = k[:, nz] / np.sqrt(ko2[nz])
        self.bulk = np.expm1(-params.nu * ko2 * h)  # e^{−ν|k|²h} − 1

    def nse(self, V):
        return self.visc * V

    def lame(self, v):
        along = np.sum(self.khat * v, axis=0)
        return self.visc * (v + self.bulk * self.khat * along)


@dataclass(frozen=True)
class SimState:
    """State at time t with the nonlinear terms evaluated at that state."""

    t: float
    V: np.ndarray
    v: np.ndarray
    NV: np.ndarray | None = None
    Nv: np.ndarray | None = None
    params: PhysicalParams | None = None

    @property
    def u(self) -> np.ndarray:
        return self.v - self.V

    @property
    def has_tendencies(self) -> bool:
        return self.NV is not None and self.Nv is not None and self.params is not None

    @property
    def V_t(self) -> np.ndarray:
        self._need()
        return self.NV + self.params.mu * sp.laplacian(self.V)

    @property
    def v_t(self) -> np.ndarray:
        self._need()
        return self.Nv + _lame_linear(self.v, self.params)

    @property
    def u_t(self) -> np.ndarray:
        return self.v_t - self.V_t

    @property
    def pair(self) -> PotentialPair:
        return decompose(self.v)

    @property
    def pair_t(self) -> PotentialPair:
        return decompose(self.v_t)

    def pressure(self, dealias: bool = True) -> np.ndarray:
        """P = −Δ⁻¹ div(V·∇V), the NSE pressure diagnostic."""
        return -sp.inverse_laplacian(sp.zero_mean(sp.divergence(_advect(self.V, self.V, dealias))))

    def _need(self):
        if not self.has_tendencies:
            raise UsageError("state carries no cached tendencies")


def with_tendencies(V, v, t, params: PhysicalParams, dealias: bool = True) -> SimState:
    return SimState(t=t, V=V, v=v, NV=convection_nse(V, dealias),
                    Nv=convection_lame(v, dealias), params=params)


def _lawson(u, N0, Nfun, E, Eh, dt):
    """One Lawson (integrating-factor) RK4 step given N0 = N(u)."""
    a = Eh(u + 0.5 * dt * N0)
    Na = Nfun(a)
    b = Eh(u) + 0.5 * dt * Na
    Nb = Nfun(b)
    c = E(u) + dt * Eh(Nb)
    Nc = Nfun(c)
    return E(u) + (dt / 6.0) * (E(N0) + 2.0 * Eh(Na + Nb) + Nc)


class _ModeOperator:
    """f(Lh) for a scalar function f, applied per mode: f(z_s) across k̂ and f(z_g) along k̂,
    with z_s = −μ|k|²h and z_g = z_s − ν|k|²h."""

    def __init__(self, grid: sp.Grid, fs: np.ndarray, fg: np.ndarray):
        k = grid.k_odd
        ko2 = np.sum(k * k, axis=0)
        self.khat = np.zeros_like(k)
        nz = ko2 > 0
        self.khat[:, nz] = k[:, nz] / np.sqrt(ko2[nz])
        self.fs = fs
        self.dfg = fg - fs

    def nse(self, V):
        return self.fs * V

    def lame(self, v):
        return self.fs * v + self.dfg * self.khat * np.sum(self.khat * v, axis=0)


def _etd_functions(z: np.ndarray, points: int = 32) -> dict:
    """Exponential RK4 weights (without the factor h) by contour averaging around each z.

    Q = (e^{z/2} − 1)/z, f1 = (−4 − z + e^z(4 − 3z + z²))/z³,
    f2 = (2 + z + e^z(z − 2))/z³, f3 = (−4 − 3z − z² + e^z(4 − z))/z³.
    """
    uniq, inv = np.unique(z, return_inverse=True)
    r = np.exp(1j * np.pi * (np.arange(1, points + 1) - 0.5) / points)
    w = uniq[:, None] + r[None, :]
    ew = np.exp(w)
    out = {
        "Q": np.mean((np.exp(w / 2) - 1) / w, axis=1).real,
        "f1": np.mean((-4 - w + ew * (4 - 3 * w + w * w)) / w**3, axis=1).real,
        "f2": np.mean((2 + w + ew * (w - 2)) / w**3, axis=1).real,
        "f3": np.mean((-4 - 3 * w - w * w + ew * (4 - w)) / w**3, axis=1).real,
    }
    return {key: val[inv].reshape(z.shape) for key, val in out.items()}


class _ETDCoefficients:
    """E, E_{h/2} and the h-scaled weights Q, f1, f2, f3 as mode operators."""

    def __init__(self, grid: sp.Grid, params: PhysicalParams, h: float):
        zs = -params.mu * grid.k2 * h
        zg = zs - params.nu * np.sum(grid.k_odd**2, axis=0) * h
        fs, fg = _etd_functions(zs), _etd_functions(zg)
        self.E = _ModeOperator(grid, np.exp(zs), np.exp(zg))
        self.E2 = _ModeOperator(grid, np.exp(zs / 2), np.exp(zg / 2))
        for key in ("Q", "f1", "f2", "f3"):
            setattr(self, key, _ModeOperator(grid, h * fs[key], h * fg[key]))


def _etdrk4(u, N0, Nfun, C, kind):
    """One exponential time differencing RK4 step given N0 = N(u)."""
    E, E2, Q, f1, f2, f3 = (getattr(getattr(C, name), kind) for name in ("E", "E2", "Q", "f1", "f2", "f3"))
    E2u = E2(u)
    a = E2u + Q(N0)
    Na = Nfun(a)
    b = E2u + Q(Na)
    Nb = Nfun(b)
    c = E2(a) + Q(2.0 * Nb - N0)
    Nc = Nfun(c)
    return E(u) + f1(N0) + 2.0 * f2(Na + Nb) + f3(Nc)


SCHEMES = ("ifrk4", "etdrk4")

_PROP_CACHE: dict = {}


def _propagators(grid, params, dt, scheme="ifrk4"):
    key = (grid.n, params.mu, params.nu, dt, scheme)
    if key not in _PROP_CACHE:
        if len(_PROP_CACHE) > 16:
            _PROP_CACHE.clear()
        if scheme == "etdrk4":
            _PROP_CACHE[key] = _ETDCoefficients(grid, params, dt)
        else:
            _PROP_CACHE[key] = (_Propagator(grid, params, dt), _Propagator(grid, params, 0.5 * dt))
    return _PROP_CACHE[key]


def cfl_ok(state: SimState, dt: float) -> bool:
    grid = sp.grid_of(state.v)
    vmax = max(float(np.max(np.linalg.norm(sp.to_real(state.v), axis=0))),
               float(np.max(np.linalg.norm(sp.to_real(state.V), axis=0))))
    return vmax == 0 or dt <= 0.5 * grid.spacing / vmax


def step(state: SimState, dt: float, params: PhysicalParams, dealias: bool = True,
         project_v: bool = False, check_cfl: bool = True, step_index: int = 0,
         scheme: str = "ifrk4") -> SimState:
    """Advance (V, v) by dt with integrating-factor RK4 (``etdrk4``: exponential
    time differencing RK4 on the same exact exponential).

    ``project_v`` removes the gradient part of v after the step (the ν → ∞
    limit). Raises BlowUpError on non-finite output.
    """
    if not dt > 0:
        raise UsageError(f"dt must be positive, got {dt}")
    if scheme not in SCHEMES:
        raise UsageError(f"unknown scheme {scheme!r}; known: {', '.join(SCHEMES)}")
    if not state.has_tendencies or state.params != params:
        state = with_tendencies(state.V, state.v, state.t, params, dealias)
    if check_cfl and not cfl_ok(state, dt):
        warnings.warn(f"CFL heuristic violated at t={state.t:.6g}", CFLWarning, stacklevel=2)
    grid = sp.grid_of(state.v)
    NVf = lambda X: convection_nse(X, dealias)
    Nv0 = state.Nv
    if project_v:
        # ν → ∞: every stage stays solenoidal
        Nvf = lambda X: leray_project(convection_lame(leray_project(X), dealias))
        Nv0 = leray_project(Nv0)
    else:
        Nvf = lambda X: convection_lame(X, dealias)
    if scheme == "etdrk4":
        C = _propagators(grid, params, dt, scheme)
        V1 = _etdrk4(state.V, state.NV, NVf, C, "nse")
        v1 = _etdrk4(state.v, Nv0, Nvf, C, "lame")
    else:
        P, Ph = _propagators(grid, params, dt)
        V1 = _lawson(state.V, state.NV, NVf, P.nse, Ph.nse, dt)
        v1 = _lawson(state.v, Nv0, Nvf, P.lame, Ph.lame, dt)
    if not (np.all(np.isfinite(V1)) and np.all(np.isfinite(v1))):
        raise BlowUpError(f"non-finite state after step {step_index}", step=step_index)
    V1 = leray_project(sp.zero_mean(V1))
    v1 = sp.zero_mean(v1)
    if project_v:
        v1 = leray_project(v1)
    return with_tendencies(V1, v1, state.t + dt, params, dealias)


# --- trajectories -----------------------------------------------------------


@dataclass
class Trajectory:
    params: PhysicalParams
    dt: float
    samples: list = field(default_factory=list)
    ledger: object = None
    outcome: str = "running"
    failed_step: int | None = None
    dealias: bool = True
    times: list = field(default_factory=list)

    def append(self, state: SimState, store: bool = True):
        if self.times and not state.t > self.times[-1]:
            raise UsageError("sample times must increase strictly")
        self.times.append(state.t)
        if store:
            self.samples.append(state)
        if self.ledger is not None:
            self.ledger.update(state)

    @property
    def n_samples(self) -> int:
        return len(self.times)


def run_coupled(config, ledger=None, project_v: bool = False, store_fields: bool = True,
                initial: tuple | None = None, convection: bool = True) -> Trajectory:
    """Co-evolve (V, v) from the scenario initial data over [0, t_end].

    ``config`` needs grid_n, dt, t_end, sample_stride, physics, scenario,
    seed and dealias attributes (see ``nslab.config.Config``). ``ledger``
    receives every sample via ``update``. ``convection=False`` runs the
    linear (Stokes) dynamics. On blow-up the partial trajectory is attached
    to the raised BlowUpError.
    """
    params = config.physics
    grid = sp.create_grid(config.grid_n)
    if initial is None:
        V0, v0 = make_initial_data(config.scenario, grid, params, config.estimates, config.seed,
                                   dealias=config.dealias)
    else:
        V0, v0 = initial
    traj = Trajectory(params=params, dt=config.dt, ledger=ledger, dealias=config.dealias)
    dealias = config.dealias
    nsteps = int(round(config.t_end / config.dt))
    if nsteps < 1:
        raise UsageError("t_end shorter than one step")

    if convection:
        state = with_tendencies(V0, v0, 0.0, params, dealias)
        scheme = getattr(config, "scheme", "ifrk4")
        advance = lambda s, i: step(s, config.dt, params, dealias, project_v, step_index=i,
                                    scheme=scheme)
    else:
        state = _stokes_state(V0, v0, 0.0, params)
        advance = lambda s, i: _stokes_step(s, config.dt, params, project_v)
    traj.append(state, store_fields)
    with warnings.catch_warnings():
        warnings.simplefilter("once", CFLWarning)
        for i in range(1, nsteps + 1):
            try:
                state = advance(state, i)
            except BlowUpError as exc:
                traj.outcome = "blow-up"
                traj.failed_step = i
                exc.trajectory = traj
                raise
            if i % config.sample_stride == 0 or i == nsteps:
                state = SimState(t=i * config.dt, V=state.V, v=state.v, NV=state.NV,
                                 Nv=state.Nv, params=state.params)
                traj.append(state, store_fields)
    traj.outcome = "ok"
    return traj


def _stokes_state(V, v, t, params):
    zero = np.zeros_like(V)
    return SimState(t=t, V=V, v=v, NV=zero, Nv=zero, params=params)


def _stokes_step(state, dt, params, project_v):
    P, _ = _propagators(sp.grid_of(state.v), params, dt)
    v1 = P.lame(state.v)
    if project_v:
        v1 = leray_project(v1)
    return _stokes_state(P.nse(state.V), v1, state.t + dt, params)


# --- difference system residual ---------------------------------------------


@dataclass
class Residual:
    R: np.ndarray
    curl_ratio: float
    norm_R: float


def residual_1_9(sample: SimState, params: PhysicalParams | None = None,
                 dealias: bool = True, u_t_defect: np.ndarray | None = None) -> Residual:
    """R = u_t + rot ψ·∇u + (u − ∇φ)·∇(v − u) − μΔu − ν∇div u and ‖rot R‖/‖R‖.

    R must be a pure gradient (the pressure difference); the curl ratio is 0
    when R vanishes. ``u_t_defect`` is added to u_t to probe sensitivity.
    """
    if not sample.has_tendencies:
        raise UsageError("residual_1_9 needs cached tendencies")
    params = params or sample.params
    u, v = sample.u, sample.v
    u_t = sample.u_t
    if u_t_defect is not None:
        u_t = u_t + u_t_defect
    w = leray_project(v)
    grad_phi = v - w
    R = (
        u_t
        + _advect(w, u, dealias)
        + _advect(u - grad_phi, v - u, dealias)
        - _lame_linear(u, params)
    )
    R = sp.zero_mean(R)
    nR = math.sqrt(sp.norm_sq(R))
    ratio = 0.0 if nR == 0 else math.sqrt(sp.norm_sq(sp.curl(R))) / nR
    return Residual(R=R, curl_ratio=ratio, norm_R=nR)


def solenoidal_defect(sample: SimState, rel: float = 1e-2, seed: int = 0) -> np.ndarray:
    """A divergence-free, non-gradient field of size rel·‖u_t‖ (‖R‖ if u_t = 0)."""
    grid = sp.grid_of(sample.v)
    d = leray_project(_band_field(grid, np.random.default_rng(seed), 1, 2, vector=True))
    scale = math.sqrt(sp.norm_sq(sample.u_t))
    if scale == 0:
        scale = residual_1_9(sample).norm_R
    nd = math.sqrt(sp.norm_sq(d))
    return d * (rel * scale / nd) if nd > 0 else d


# --- initial data -----------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "taylor-green"
    band_min: int = 1
    band_max: int = 3
    gamma: float = 1e-2
    amplitude: float = 1.0
    grad_fraction: float = 0.0

    def __post_init__(self):
        from .errors import ConfigurationError

        if self.name not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.name!r}", key="scenario")
        if not 1 <= self.band_min <= self.band_max:
            raise ConfigurationError("need 1 <= band_min <= band_max", key="band_max")
        if self.gamma < 0:
            raise ConfigurationError("gamma must be non-negative", key="gamma")
        if not self.amplitude >= 0:
            raise ConfigurationError("amplitude must be non-negative", key="amplitude")
        if self.grad_fraction < 0:
            raise ConfigurationError("grad_fraction must be non-negative", key="grad_fraction")


def taylor_green(grid: sp.Grid, amplitude: float = 1.0) -> np.ndarray:
    """(sin x₁ cos x₂, −cos x₁ sin x₂, 0) from its exact Fourier coefficients."""
    n = grid.n
    F = np.zeros((3, n, n, n), complex)
    for s1 in (1, -1):
        for s2 in (1, -1):
            F[0, s1 % n, s2 % n, 0] = -0.25j * s1 * amplitude
            F[1, s1 % n, s2 % n, 0] = 0.25j * s2 * amplitude
    return F


def _band_field(grid: sp.Grid, rng: np.random.Generator, kmin: float, kmax: float,
                vector: bool) -> np.ndarray:
    """Random real field with kmin ≤ |k| ≤ kmax, independent of the grid size.

    Samples are drawn on a fixed small grid and the band is embedded into
    ``grid``, so the same seed gives the same continuous field at every n.
    """
    m = max(8, 2 * (int(math.ceil(kmax)) + 1))
    m += m % 2
    if grid.n <= 2 * kmax:
        raise ScenarioError(f"band |k| <= {kmax} not resolvable at n = {grid.n}")
    shape = ((3,) if vector else ()) + (m, m, m)
    small = np.fft.fftn(rng.standard_normal(shape), axes=(-3, -2, -1), norm="forward")
    ks = np.fft.fftfreq(m, 1.0 / m)
    K = np.stack(np.meshgrid(ks, ks, ks, indexing="ij"))
    kk = np.sqrt(np.sum(K**2, axis=0))
    small = small * ((kk >= kmin) & (kk <= kmax) & np.all(np.abs(K) < m // 2, axis=0))
    out = np.zeros(((3,) if vector else ()) + (grid.n,) * 3, complex)
    idx_small = np.r_[0 : m // 2, m - m // 2 + 1 : m]  # drop the small grid's Nyquist
    idx_big = np.where(idx_small < m // 2, idx_small, idx_small - m + grid.n)
    out[..., idx_big[:, None, None], idx_big[None, :, None], idx_big[None, None, :]] = small[
        ..., idx_small[:, None, None], idx_small[None, :, None], idx_small[None, None, :]
    ]
    return out


def _rms(F):
    grid = sp.grid_of(F)
    return math.sqrt(sp.norm_sq(F) / grid.volume)


def make_initial_data(scenario: ScenarioSpec, grid: sp.Grid, params: PhysicalParams,
                      estimates=None, seed: int = 0, dealias: bool = True):
    """(V₀, v₀) spectral, zero mean, V₀ solenoidal.

    paper-scaling: V₀ random solenoidal; u₀ = ∇φ + r·s with φ on the |k| = 1
    shell rescaled so |φ|_p = (c₃+c₄)/(2ν^ϰ), s random solenoidal and r chosen
    so that ‖u₀‖_{H¹} = γ. Needs ``estimates`` for p, c₃, c₄.
    """
    if isinstance(scenario, str):
        scenario = ScenarioSpec(name=scenario)
    rng = np.random.default_rng(seed)
    trunc = sp.dealias if dealias else (lambda F: F)

    if scenario.name == "taylor-green":
        V0 = taylor_green(grid, scenario.amplitude)
        return V0, V0.copy()

    V0 = trunc(leray_project(_band_field(grid, rng, scenario.band_min, scenario.band_max, True)))
    rms = _rms(V0)
    V0 = V0 * (scenario.amplitude / rms) if rms > 0 else V0

    if scenario.name == "random-band":
        g = trunc(_band_field(grid, rng, scenario.band_min, scenario.band_max, True))
        g = g - leray_project(g)
        ng = math.sqrt(sp.norm_sq(g))
        if scenario.grad_fraction and ng > 0:
            g = g * (scenario.grad_fraction * math.sqrt(sp.norm_sq(V0)) / ng)
        else:
            g = np.zeros_like(V0)
        return V0, V0 + g

    # paper-scaling
    if estimates is None:
        raise UsageError("paper-scaling needs estimate parameters (p, c3, c4)")
    from .diagnostics import lp_norm, sobolev_norm

    p = estimates.p
    kappa = 1.5 - 3.0 / p
    target_phi = (estimates.c3 + estimates.c4) / (2.0 * params.nu**kappa) if params.nu > 0 else 0.0
    phi = _band_field(grid, rng, 1.0, 1.0, vector=False)
    phi = phi * (target_phi / lp_norm(sp.to_real(phi), p))
    grad = sp.gradient(phi)
    s = leray_project(_band_field(grid, rng, scenario.band_min, scenario.band_max, True))
    s = trunc(s)
    g1 = sobolev_norm(grad, 1)
    s1 = sobolev_norm(s, 1)
    gamma = scenario.gamma
    if gamma**2 < g1**2 * (1 + 1e-12) and not (gamma == 0 and g1 == 0):
        raise ScenarioError(
            f"paper-scaling: gradient part has H1 norm {g1:.6g} > gamma = {gamma:.6g}"
        )
    r = math.sqrt(max(gamma**2 - g1**2, 0.0)) / s1
    u0 = grad + r * s
    return V0, V0 + u0
