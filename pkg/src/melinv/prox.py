"""
melinv proximity operators
Closed-form updates shared by the joint reconstruction algorithms
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, SolverStateError
from .mel import MelFilterbank

# Floor for |Ψ| inside the phase quotient only
_PHASE_EPS = np.finfo(np.float64).tiny


def unit_phase(values: np.ndarray) -> np.ndarray:
    """values / |values|, with phase 1 where values == 0"""
    magnitude = np.abs(values)
    phase = np.ones_like(values, dtype=np.complex128)
    nonzero = magnitude > 0.0
    np.divide(values, np.maximum(magnitude, _PHASE_EPS), out=phase, where=nonzero)
    return phase


@dataclass(frozen=True)
class ProxContext:
    """Hyperparameters and filterbank shared by the mel-fit prox"""

    lam: float
    rho: float
    filterbank: MelFilterbank

    def __post_init__(self):
        if self.rho <= 0.0:
            raise InvalidInputError(f"rho must be positive, got {self.rho}")
        if self.lam < 0.0:
            raise InvalidInputError(f"lambda must be nonnegative, got {self.lam}")

    def prepare(self) -> "ProxContext":
        """Factorize the mel system ahead of the iterations"""
        self.filterbank.factor(self.lam, self.rho)
        return self

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """(λEᵀE + ρI)⁻¹ rhs through the cached factor"""
        if not self.filterbank.has_factor(self.lam, self.rho):
            raise SolverStateError(
                f"No factorization cached for lambda={self.lam}, rho={self.rho}; call prepare() first"
            )
        return self.filterbank.solve(self.lam, self.rho, rhs)


def prox_magnitude_fit(psi: np.ndarray, Y: np.ndarray, rho: float) -> np.ndarray:
    """
    prox of ½‖|X| − Y‖²/ρ at Ψ

    Blends the target magnitude with |Ψ| and keeps the phase of Ψ; bins where
    Ψ = 0 take zero phase, giving Y/(1+ρ).
    """
    if rho < 0.0:
        raise InvalidInputError(f"rho must be nonnegative, got {rho}")
    magnitude = (Y + rho * np.abs(psi)) / (1.0 + rho)
    return magnitude * unit_phase(psi)


def prox_mel_fit(phi: np.ndarray, M: np.ndarray, ctx: ProxContext) -> np.ndarray:
    """
    prox of (λ/ρ)·½‖EW − M‖² at Φ: (λEᵀE + ρI)⁻¹(λEᵀM + ρΦ)

    The result may be negative; nonnegativity belongs to the Y-update.
    """
    if ctx.lam == 0.0:
        return np.array(phi, dtype=np.float64, copy=True)
    rhs = ctx.lam * (ctx.filterbank.E.T @ M) + ctx.rho * phi
    return ctx.solve(rhs)


def update_Y_joint(x_mag: np.ndarray, upsilon: np.ndarray, rho: float) -> np.ndarray:
    """(|X| + ρΥ)₊ / (1+ρ)"""
    return np.maximum(x_mag + rho * upsilon, 0.0) / (1.0 + rho)


def project_nonneg(values: np.ndarray) -> np.ndarray:
    """Entrywise max(·, 0)"""
    return np.maximum(values, 0.0)
