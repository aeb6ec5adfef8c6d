"""Fluid property models.

Density may depend on pressure (compressible flow); viscosity is constant per
fluid. Every model exposes an analytic density derivative so callers never
have to finite-difference the equation of state.
"""

from __future__ import annotations

import numpy as np

UNIVERSAL_GAS_CONSTANT = 8.314462618  # J/(mol K)


class FluidEvaluationError(ValueError):
    """Raised when the equation of state is evaluated outside its domain."""


class IdealGas:
    """Isothermal ideal gas, rho = p M / (R T), constant dynamic viscosity."""

    def __init__(self, molar_mass: float = 0.02896, temperature: float = 293.15,
                 viscosity: float = 1.8e-5):
        if molar_mass <= 0.0 or temperature <= 0.0 or viscosity <= 0.0:
            raise ValueError("molar mass, temperature and viscosity must be positive")
        self.molar_mass = molar_mass
        self.temperature = temperature
        self._viscosity = viscosity
        # rho = coeff * p
        self._coeff = molar_mass / (UNIVERSAL_GAS_CONSTANT * temperature)

    def density(self, p):
        p = np.asarray(p, dtype=float)
        if np.any(p <= 0.0):
            raise FluidEvaluationError(
                f"ideal gas density requires positive pressure, got min(p) = {p.min():g}")
        return self._coeff * p

    def density_derivative(self, p):
        p = np.asarray(p, dtype=float)
        if np.any(p <= 0.0):
            raise FluidEvaluationError(
                f"ideal gas density requires positive pressure, got min(p) = {p.min():g}")
        return np.full_like(p, self._coeff)

    def viscosity(self, p):
        p = np.asarray(p, dtype=float)
        return np.full_like(p, self._viscosity)


class ConstantFluid:
    """Incompressible reference fluid: fixed density and viscosity.

    Used by the verification problems (patch tests, Poiseuille, manufactured
    solutions) where compressibility would only obscure the discrete algebra.
    """

    def __init__(self, density: float = 1.0, viscosity: float = 1.0):
        if density <= 0.0 or viscosity <= 0.0:
            raise ValueError("density and viscosity must be positive")
        self._density = density
        self._viscosity = viscosity

    def density(self, p):
        p = np.asarray(p, dtype=float)
        return np.full_like(p, self._density)

    def density_derivative(self, p):
        p = np.asarray(p, dtype=float)
        return np.zeros_like(p)

    def viscosity(self, p):
        p = np.asarray(p, dtype=float)
        return np.full_like(p, self._viscosity)


def make_fluid(kind: str, **kwargs):
    """Instantiate a fluid model by configuration name."""
    if kind == "ideal_gas_air":
        return IdealGas(**kwargs)
    if kind == "constant":
        if "reference_density" in kwargs:
            kwargs["density"] = kwargs.pop("reference_density")
        return ConstantFluid(**kwargs)
    raise ValueError(f"unknown fluid kind {kind!r} (expected 'ideal_gas_air' or 'constant')")
