"""Fields on the 2π-periodic torus and exact Fourier-space operators.

Fields are plain numpy arrays. A scalar field has shape ``(n, n, n)`` and a
vector field ``(3, n, n, n)``; the grid is recovered from the trailing axis,
so operators never need a grid argument. Spectral coefficients are normalised
so that ``coeff[0, 0, 0]`` equals the spatial mean of the field.

Odd-order derivatives act with the Nyquist wavenumber set to zero, even orders
(and the Laplacian) keep it. On band-limited fields (no Nyquist content, which
is everything the dynamics ever produces) the two conventions coincide.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import ConfigurationError, NumericError, SolvabilityError, UsageError

TWO_PI = 2.0 * np.pi
_AXES = (-3, -2, -1)

MIN_N = 8
MAX_N = 128


@dataclass(frozen=True)
class Grid:
    """Uniform n×n×n grid on [0, 2π)³."""

    n: int

    def __post_init__(self):
        n = self.n
        if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
            raise ConfigurationError(f"grid_n must be an integer, got {n!r}", key="grid_n")
        if n % 2:
            raise ConfigurationError(f"grid_n must be even, got {n}", key="grid_n")
        if not MIN_N <= n <= MAX_N:
            raise ConfigurationError(
                f"grid_n must lie in [{MIN_N}, {MAX_N}], got {n}", key="grid_n"
            )

    @property
    def period(self) -> float:
        return TWO_PI

    @property
    def volume(self) -> float:
        return TWO_PI**3

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def npoints(self) -> int:
        return self.n**3

    @functools.cached_property
    def wavenumbers_1d(self) -> np.ndarray:
        """Integer wavenumbers in FFT order: 0..n/2-1, -n/2..-1."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n)

    @functools.cached_property
    def k(self) -> np.ndarray:
        """Wavevector components, shape (3, n, n, n), Nyquist kept as -n/2."""
        kk = np.stack(np.meshgrid(*(self.wavenumbers_1d,) * 3, indexing="ij"))
        kk.setflags(write=False)
        return kk

    @functools.cached_property
    def k_odd(self) -> np.ndarray:
        """Wavevector with the Nyquist component zeroed (odd-order derivatives)."""
        kk = self.k.copy()
        kk[kk == -self.n // 2] = 0.0
        kk.setflags(write=False)
        return kk

    @functools.cached_property
    def k2(self) -> np.ndarray:
        """|k|² including Nyquist."""
        k2 = np.sum(self.k**2, axis=0)
        k2.setflags(write=False)
        return k2

    @functools.cached_property
    def inv_k2(self) -> np.ndarray:
        """1/|k|² with the k = 0 entry set to 0."""
        inv = np.zeros_like(self.k2)
        nz = self.k2 > 0
        inv[nz] = 1.0 / self.k2[nz]
        inv.setflags(write=False)
        return inv

    @functools.cached_property
    def dealias_mask(self) -> np.ndarray:
        """True where every |k_j| < n/3 (alias-free for quadratic products)."""
        mask = np.all(np.abs(self.k) < self.n / 3.0, axis=0)
        mask.setflags(write=False)
        return mask

    @functools.cached_property
    def coords(self) -> np.ndarray:
        """Grid point coordinates, shape (3, n, n, n)."""
        x = np.arange(self.n) * self.spacing
        return np.stack(np.meshgrid(x, x, x, indexing="ij"))

    def sobolev_weight(self, s: int) -> np.ndarray:
        """Σ_{|α|≤s} Π_j k_j^{2α_j}: the per-mode weight of Σ_{|α|≤s} |D^α f|₂²."""
        return _sobolev_weight(self.n, s)


def create_grid(n: int) -> Grid:
    """Validated, cached grid for resolution n."""
    if isinstance(n, (int, np.integer)) and not isinstance(n, bool):
        return _grid(int(n))
    return Grid(n)


@functools.lru_cache(maxsize=None)
def _grid(n: int) -> Grid:
    return Grid(n)


@functools.lru_cache(maxsize=None)
def _sobolev_weight(n: int, s: int) -> np.ndarray:
    grid = _grid(n)
    weight = np.zeros((n, n, n))
    for alpha in multi_indices(s):
        term = np.ones((n, n, n))
        for j, a in enumerate(alpha):
            if a:
                kj = grid.k_odd[j] if a % 2 else grid.k[j]
                term = term * kj ** (2 * a)
        weight += term
    weight.setflags(write=False)
    return weight


def multi_indices(order: int):
    """All (α₁, α₂, α₃) with |α| ≤ order."""
    return [a for a in itertools.product(range(order + 1), repeat=3) if sum(a) <= order]


def grid_of(field: np.ndarray) -> Grid:
    """Grid implied by the trailing axis of a scalar or vector field."""
    if field.ndim not in (3, 4) or field.shape[-3:] != (field.shape[-1],) * 3:
        raise UsageError(f"not a field array: shape {field.shape}")
    if field.ndim == 4 and field.shape[0] != 3:
        raise UsageError(f"vector fields need 3 components, got shape {field.shape}")
    return create_grid(field.shape[-1])


def is_vector(field: np.ndarray) -> bool:
    return field.ndim == 4


def _require_scalar(F, what):
    if F.ndim != 3:
        raise UsageError(f"{what} needs a scalar field, got shape {F.shape}")


def _require_vector(F, what):
    if F.ndim != 4:
        raise UsageError(f"{what} needs a vector field, got shape {F.shape}")


# --- transforms -------------------------------------------------------------


def _trailing_grid(f: np.ndarray) -> Grid:
    """Grid from the last three axes; leading axes are treated as a batch."""
    if f.ndim < 3 or f.shape[-3:] != (f.shape[-1],) * 3:
        raise UsageError(f"not a field array: shape {f.shape}")
    return create_grid(f.shape[-1])


def to_spectral(f: np.ndarray) -> np.ndarray:
    """Forward FFT normalised so that the zero mode is the spatial mean.

    Leading axes beyond the last three are transformed independently.
    """
    _trailing_grid(f)
    if not np.all(np.isfinite(f)):
        raise NumericError("to_spectral: non-finite input")
    return scipy.fft.fftn(f, axes=_AXES, norm="forward")


def to_real(F: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_spectral`; returns the real part."""
    _trailing_grid(F)
    if not np.all(np.isfinite(F)):
        raise NumericError("to_real: non-finite input")
    return scipy.fft.ifftn(F, axes=_AXES, norm="forward").real


# --- differential operators -------------------------------------------------


def differentiate(F: np.ndarray, alpha) -> np.ndarray:
    """Apply D^α = ∂₁^α₁ ∂₂^α₂ ∂₃^α₃ componentwise."""
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != 3 or min(alpha) < 0:
        raise UsageError(f"multi-index must have 3 non-negative entries, got {alpha}")
    if sum(alpha) > 4:
        raise UsageError(f"|alpha| ≤ 4 supported, got {alpha}")
    grid = grid_of(F)
    mult = np.ones(F.shape[-3:], dtype=complex)
    for j, a in enumerate(alpha):
        if a:
            kj = grid.k_odd[j] if a % 2 else grid.k[j]
            mult = mult * (1j * kj) ** a
    return F * mult


def gradient(F: np.ndarray) -> np.ndarray:
    _require_scalar(F, "gradient")
    return 1j * grid_of(F).k_odd * F


def divergence(F: np.ndarray) -> np.ndarray:
    _require_vector(F, "divergence")
    return np.sum(1j * grid_of(F).k_odd * F, axis=0)


def curl(F: np.ndarray) -> np.ndarray:
    _require_vector(F, "curl")
    ik = 1j * grid_of(F).k_odd
    return np.stack(
        [
            ik[1] * F[2] - ik[2] * F[1],
            ik[2] * F[0] - ik[0] * F[2],
            ik[0] * F[1] - ik[1] * F[0],
        ]
    )


def laplacian(F: np.ndarray) -> np.ndarray:
    return -grid_of(F).k2 * F


def vector_calculus(F: np.ndarray, kind: str) -> np.ndarray:
    ops = {"gradient": gradient, "divergence": divergence, "curl": curl, "laplacian": laplacian}
    try:
        op = ops[kind]
    except KeyError:
        raise UsageError(f"unknown operator {kind!r}; expected one of {sorted(ops)}") from None
    return op(F)


def inverse_laplacian(F: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Zero-mean solution of Δu = F; F must have zero mean (per component)."""
    grid = grid_of(F)
    mean = F[..., 0, 0, 0]
    scale = max(1.0, float(np.max(np.abs(F)))) if F.size else 1.0
    if np.any(np.abs(mean) > tol * scale):
        raise SolvabilityError(
            f"inverse_laplacian: source has nonzero mean {np.max(np.abs(mean)):.3e}"
        )
    return -F * grid.inv_k2


def dealias(F: np.ndarray) -> np.ndarray:
    return F * _trailing_grid(F).dealias_mask


def zero_mean(F: np.ndarray) -> np.ndarray:
    out = np.array(F, copy=True)
    out[..., 0, 0, 0] = 0.0
    return out


# --- spectral inner products ------------------------------------------------


def inner(F: np.ndarray, G: np.ndarray) -> float:
    """L₂(Ω) inner product of two real fields given by their coefficients."""
    grid = _trailing_grid(F)
    return float(grid.volume * np.real(np.vdot(F, G)))


def norm_sq(F: np.ndarray) -> float:
    """|f|₂² by Parseval; leading axes (vector, tensor) are summed."""
    grid = _trailing_grid(F)
    return float(grid.volume * np.sum(np.abs(F) ** 2))


def band_limited_random(grid: Grid, rng: np.random.Generator, vector: bool = True,
                        kmax: int | None = None) -> np.ndarray:
    """Random real field (spectral) with modes |k_j| ≤ kmax, zero mean, no Nyquist.

    Real-space samples are drawn first so conjugate symmetry is exact.
    """
    shape = ((3,) if vector else ()) + (grid.n,) * 3
    F = to_spectral(rng.standard_normal(shape))
    kmax = grid.n // 3 - 1 if kmax is None else kmax
    mask = np.all(np.abs(grid.k) <= kmax, axis=0) & grid.dealias_mask
    return zero_mean(F * mask)
