"""Diagonal spectral model: eigen-system, Hilbert norms, and the semigroup.

The state space H is represented by coefficient sequences in the orthonormal
eigenbasis {e_k} of the adjoint operator, with eigenvalues

    0 <= zeta_1 <= zeta_2 <= ... <= zeta_K.

With the V-norm fixed as ||u||_V^2 = sum_k (1 + zeta_k) u_k^2, the coercivity
inequality

    2 <A u, u> + lambda0 ||u||_H^2 >= alpha ||u||_V^2

holds with alpha = min(2, lambda0): the margin decomposes mode by mode into
((2 - alpha) zeta_k + (lambda0 - alpha)) u_k^2, and both brackets are
nonnegative exactly when alpha <= 2 and alpha <= lambda0.

Everything here is immutable after construction and safe to share across
parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EigenSystem",
    "SpectralField",
    "semigroup_apply",
    "fractional_laplacian_system",
    "coercivity_margin",
]


def _as_coeffs(u) -> np.ndarray:
    """Accept a SpectralField or a plain coefficient array."""
    if isinstance(u, SpectralField):
        return u.coeffs
    return np.asarray(u, dtype=float)


@dataclass(frozen=True)
class SpectralField:
    """An element of H as a finite coefficient sequence <u, e_k>."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 1:
            raise ValueError("SpectralField coefficients must be one-dimensional")
        if not np.all(np.isfinite(c)):
            raise ValueError("SpectralField coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    def h_norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def v_norm(self, system: "EigenSystem") -> float:
        c = self.coeffs
        return float(np.sqrt(np.sum((1.0 + system.zetas[: c.size]) * c**2)))


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues of the diagonal coercive operator plus coercivity constants.

    ``lambda0`` defaults to 1 so that ``alpha = min(2, lambda0)`` stays
    strictly positive even when ``zeta_1 = 0``.
    """

    zetas: np.ndarray
    lambda0: float = 1.0
    alpha: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        z = np.asarray(self.zetas, dtype=float)
        if z.ndim != 1 or z.size == 0:
            raise ValueError("zetas must be a nonempty one-dimensional sequence")
        if np.any(z < 0) or not np.all(np.isfinite(z)):
            raise ValueError("eigenvalues must be finite and >= 0")
        if np.any(np.diff(z) < 0):
            raise ValueError("eigenvalues must be nondecreasing")
        if not (self.lambda0 > 0 and np.isfinite(self.lambda0)):
            raise ValueError("lambda0 must be a finite positive number")
        object.__setattr__(self, "zetas", z)
        if self.alpha is None:
            object.__setattr__(self, "alpha", min(2.0, float(self.lambda0)))
        if not (0 < self.alpha <= min(2.0, self.lambda0)):
            raise ValueError(
                "alpha must lie in (0, min(2, lambda0)] for the coercivity "
                "inequality to hold with the (1 + zeta_k)-weighted V-norm"
            )

    @property
    def n_modes(self) -> int:
        return int(self.zetas.size)

    def h_norm(self, u) -> float:
        return float(np.linalg.norm(_as_coeffs(u)))

    def v_norm(self, u) -> float:
        c = _as_coeffs(u)
        return float(np.sqrt(np.sum((1.0 + self.zetas) * c**2)))

    def decay(self, dt: float) -> np.ndarray:
        """Per-mode semigroup factor exp(-zeta_k dt)."""
        return np.exp(-self.zetas * dt)

    def phi1(self, dt: float) -> np.ndarray:
        """Per-mode forcing weight (1 - exp(-zeta_k dt)) / zeta_k.

        Continuous limit dt at zeta_k = 0; used by the exponential-Euler step.
        """
        z = self.zetas
        out = np.full_like(z, float(dt))
        nz = z > 0
        out[nz] = -np.expm1(-z[nz] * dt) / z[nz]
        return out

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [float(v) for v in self.zetas],
            "lambda0": float(self.lambda0),
            "alpha": float(self.alpha),
        }

    @staticmethod
    def from_dict(d: dict) -> "EigenSystem":
        return EigenSystem(
            zetas=np.asarray(d["eigenvalues"], dtype=float),
            lambda0=float(d.get("lambda0", 1.0)),
            alpha=d.get("alpha"),
        )


def semigroup_apply(system: EigenSystem, t: float, u):
    """Apply e^{-A t} to a field: coefficient k is scaled by exp(-zeta_k t)."""
    if t < 0:
        raise ValueError(f"semigroup requires t >= 0, got {t}")
    scaled = _as_coeffs(u) * np.exp(-system.zetas * t)
    if isinstance(u, SpectralField):
        return SpectralField(scaled)
    return scaled


def fractional_laplacian_system(
    order: float, n_modes: int, domain_length: float = math.pi, lambda0: float = 1.0
) -> EigenSystem:
    """Eigen-system of the fractional power of the Dirichlet interval Laplacian.

    zeta_k = ((k pi / L)^2)^(order/2) for k = 1..K.  The interval spectrum is a
    discretizable surrogate for the whole-space fractional generator, whose
    spectrum is continuous.
    """
    if not (0 < order <= 2):
        raise ValueError(f"order must lie in (0, 2], got {order}")
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if domain_length <= 0:
        raise ValueError("domain_length must be positive")
    k = np.arange(1, n_modes + 1, dtype=float)
    zetas = ((k * math.pi / domain_length) ** 2) ** (order / 2.0)
    return EigenSystem(zetas=zetas, lambda0=lambda0)


def coercivity_margin(system: EigenSystem, u) -> float:
    """2 <A u, u> + lambda0 ||u||_H^2 - alpha ||u||_V^2 (>= 0 for admissible alpha)."""
    c = _as_coeffs(u)
    z = system.zetas
    return float(
        np.sum((2.0 * z + system.lambda0 - system.alpha * (1.0 + z)) * c**2)
    )
