"""Helmholtz splitting v = ∇φ + rot ψ and the Leray projector on the torus."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral as sp
from .errors import DecompositionError, UsageError

# relative size of the k = 0 coefficient treated as a nonzero mean
MEAN_TOL = 1e-12


@dataclass(frozen=True)
class PotentialPair:
    """Zero-mean potentials (φ, ψ) with div ψ = 0, stored as spectral coefficients."""

    phi: np.ndarray
    psi: np.ndarray

    def gradient_part(self) -> np.ndarray:
        return sp.gradient(self.phi)

    def solenoidal_part(self) -> np.ndarray:
        return sp.curl(self.psi)


def _check_mean(V: np.ndarray, what: str):
    sp._require_vector(V, what)
    mean = np.abs(V[:, 0, 0, 0])
    scale = max(float(np.max(np.abs(V))), 1e-300)
    if np.any(mean > MEAN_TOL * max(scale, 1.0)):
        raise DecompositionError(f"{what}: field has nonzero mean {mean.max():.3e}")


def decompose(V: np.ndarray) -> PotentialPair:
    """φ = Δ⁻¹ div v, ψ = −Δ⁻¹ rot v; rejects fields with nonzero mean."""
    _check_mean(V, "decompose")
    V = sp.zero_mean(V)
    phi = sp.inverse_laplacian(sp.divergence(V))
    psi = -sp.inverse_laplacian(sp.curl(V))
    return PotentialPair(phi=phi, psi=psi)


def recompose(pair: PotentialPair) -> np.ndarray:
    """∇φ + rot ψ."""
    if pair.phi.ndim != 3 or pair.psi.ndim != 4:
        raise UsageError("recompose needs a scalar phi and a vector psi")
    return sp.zero_mean(pair.gradient_part() + pair.solenoidal_part())


def gradient_part(V: np.ndarray) -> np.ndarray:
    """∇φ = ∇Δ⁻¹ div v, the complement of the Leray projection."""
    _check_mean(V, "gradient_part")
    return _grad_projection(sp.zero_mean(V))


def leray_project(V: np.ndarray) -> np.ndarray:
    """rot ψ = v − ∇φ; divergence-free and idempotent."""
    _check_mean(V, "leray_project")
    V = sp.zero_mean(V)
    return V - _grad_projection(V)


def _grad_projection(V):
    """Per-mode projector k kᵀ/|k|² onto the gradient subspace (no mean check).

    Uses the odd-derivative wavevector, so Nyquist components along an axis
    are treated as solenoidal; band-limited fields never carry them.
    """
    grid = sp.grid_of(V)
    k = grid.k_odd
    k2 = np.sum(k * k, axis=0)
    inv = np.zeros_like(k2)
    nz = k2 > 0
    inv[nz] = 1.0 / k2[nz]
    kdotv = np.sum(k * V, axis=0)
    return k * (kdotv * inv)


def orthogonality_report(V: np.ndarray) -> dict:
    """Orthogonality and Pythagoras residuals of the splitting of V."""
    pair = decompose(V)
    g = pair.gradient_part()
    s = pair.solenoidal_part()
    nv = sp.norm_sq(V)
    ng = sp.norm_sq(g)
    ns = sp.norm_sq(s)
    denom = max(nv, 1e-300)
    return {
        "norm_sq_v": nv,
        "norm_sq_grad": ng,
        "norm_sq_rot": ns,
        "inner_grad_rot_rel": abs(sp.inner(g, s)) / denom,
        "pythagoras_rel": abs(nv - ng - ns) / denom,
        "recompose_rel": float(np.sqrt(sp.norm_sq(recompose(pair) - sp.zero_mean(V)) / denom)),
        "div_psi_max": float(np.max(np.abs(sp.to_real(sp.divergence(pair.psi))))),
    }
