"""Constitutive laws: relative permeabilities, capillary pressure, mobilities.

All saturation arguments are wetting-phase saturations.  Inputs outside the
physical interval [s_rw, 1 - s_ro] are clamped before evaluation (converged
states stay in range; intermediate fixed-point iterates may not) and the
clamping is reported through the module logger.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateStateError

logger = logging.getLogger(__name__)

# Excursions smaller than this are floating-point noise, not worth a log line.
_CLAMP_NOISE = 1e-12


def _capillary_curve(sbar, theta, p_d, R):
    """Entry-pressure capillary curve with a linear extension below R.

    p_c = p_d * sbar^(-1/theta) for sbar > R; for sbar <= R the curve
    continues as the tangent line at R, which keeps it C^1 at the joint.
    """
    sbar = np.asarray(sbar, dtype=float)
    pc_at_R = p_d * R ** (-1.0 / theta)
    slope_at_R = -(p_d / theta) * R ** (-1.0 - 1.0 / theta)
    power = np.power(np.maximum(sbar, R), -1.0 / theta) * p_d
    linear = pc_at_R + slope_at_R * (sbar - R)
    return np.where(sbar > R, power, linear)


def _capillary_curve_derivative(sbar, theta, p_d, R):
    """d p_c / d sbar for the curve above."""
    sbar = np.asarray(sbar, dtype=float)
    slope_at_R = -(p_d / theta) * R ** (-1.0 - 1.0 / theta)
    power = -(p_d / theta) * np.power(np.maximum(sbar, R), -1.0 - 1.0 / theta)
    return np.where(sbar > R, power, slope_at_R)


class ConstitutiveModel:
    """Interface: k_rw, k_ro, p_c and dp_c/ds as functions of saturation.

    Implementations expose ``s_rw``/``s_ro`` residual saturations and are
    pure functions over an immutable parameter set.
    """

    s_rw = 0.0
    s_ro = 0.0

    def effective_saturation(self, s):
        """Rescale s in [s_rw, 1-s_ro] to [0, 1], clamping out-of-range input.

        Sub-tolerance excursions (intermediate fixed-point iterates, solver
        noise) are logged at debug level; anything larger gets a warning.
        """
        s = np.asarray(s, dtype=float)
        lo, hi = self.s_rw, 1.0 - self.s_ro
        excess = max(float(np.max(s - hi, initial=0.0)), float(np.max(lo - s, initial=0.0)))
        if excess > _CLAMP_NOISE:
            n_out = int(np.count_nonzero((s < lo - _CLAMP_NOISE) | (s > hi + _CLAMP_NOISE)))
            level = logging.WARNING if excess > 1e-6 else logging.DEBUG
            logger.log(
                level,
                "clamped %d saturation value(s) outside [%g, %g] (worst excursion %.3e)",
                n_out, lo, hi, excess,
            )
        s = np.clip(s, lo, hi)
        return (s - lo) / (hi - lo)

    def rel_perm_w(self, s):
        raise NotImplementedError

    def rel_perm_o(self, s):
        raise NotImplementedError

    def capillary_pressure(self, s):
        raise NotImplementedError

    def capillary_pressure_derivative(self, s):
        raise NotImplementedError


@dataclass(frozen=True)
class BrooksCoreyModel(ConstitutiveModel):
    """Brooks-Corey relative permeabilities and capillary pressure.

    Parameters
    ----------
    theta : float
        Pore-size distribution index, in [0.2, 3.0].
    p_d : float
        Entry pressure in Pa.
    R : float
        Effective-saturation threshold below which the capillary curve is
        replaced by its tangent line (keeps dp_c/ds bounded), in (0, 1).
    s_rw, s_ro : float
        Residual saturations of the wetting and non-wetting phase.
    """

    theta: float = 3.0
    p_d: float = 5e3
    R: float = 0.05
    s_rw: float = 0.15
    s_ro: float = 0.15

    def __post_init__(self):
        problems = []
        if not 0.2 <= self.theta <= 3.0:
            problems.append(f"theta={self.theta} outside [0.2, 3.0]")
        if self.p_d <= 0:
            problems.append(f"entry pressure p_d={self.p_d} must be > 0")
        if not 0.0 < self.R < 1.0:
            problems.append(f"regularization threshold R={self.R} outside (0, 1)")
        if not (0.0 <= self.s_rw <= 1.0 and 0.0 <= self.s_ro <= 1.0):
            problems.append("residual saturations must lie in [0, 1]")
        if self.s_rw + self.s_ro >= 1.0:
            problems.append("s_rw + s_ro must be < 1")
        if problems:
            raise ConfigError("invalid Brooks-Corey parameters", problems)

    def _exponent(self):
        return (2.0 + 3.0 * self.theta) / self.theta

    def rel_perm_w(self, s):
        sbar = self.effective_saturation(s)
        return np.power(sbar, self._exponent())

    def rel_perm_o(self, s):
        sbar = self.effective_saturation(s)
        return (1.0 - sbar) ** 2 * (1.0 - np.power(sbar, self._exponent()))

    def capillary_pressure(self, s):
        sbar = self.effective_saturation(s)
        return _capillary_curve(sbar, self.theta, self.p_d, self.R)

    def capillary_pressure_derivative(self, s):
        # chain rule: d sbar / d s = 1 / (1 - s_rw - s_ro)
        sbar = self.effective_saturation(s)
        dpc = _capillary_curve_derivative(sbar, self.theta, self.p_d, self.R)
        return dpc / (1.0 - self.s_rw - self.s_ro)


@dataclass(frozen=True)
class QuadraticKrModel(ConstitutiveModel):
    """Quadratic relative permeabilities k_rw = s^2, k_ro = (1-s)^2.

    Zero residual saturations; the capillary pressure uses the same
    entry-pressure curve as the Brooks-Corey model.  This is the model used
    by the manufactured-solution verification cases.
    """

    theta: float = 2.0
    p_d: float = 50.0
    R: float = 0.05

    s_rw = 0.0
    s_ro = 0.0

    def rel_perm_w(self, s):
        sbar = self.effective_saturation(s)
        return sbar ** 2

    def rel_perm_o(self, s):
        sbar = self.effective_saturation(s)
        return (1.0 - sbar) ** 2

    def capillary_pressure(self, s):
        sbar = self.effective_saturation(s)
        return _capillary_curve(sbar, self.theta, self.p_d, self.R)

    def capillary_pressure_derivative(self, s):
        sbar = self.effective_saturation(s)
        return _capillary_curve_derivative(sbar, self.theta, self.p_d, self.R)


@dataclass(frozen=True)
class FluidPair:
    """Dynamic viscosities of the wetting and non-wetting phase, Pa*s."""

    mu_w: float
    mu_o: float

    def __post_init__(self):
        if self.mu_w <= 0 or self.mu_o <= 0:
            raise ConfigError(f"viscosities must be positive, got {self.mu_w}, {self.mu_o}")


def mobility(model, fluids, phase, s):
    """Phase mobility k_r(s) / mu, units 1/(Pa*s); phase is 'w' or 'o'."""
    if phase == "w":
        return model.rel_perm_w(s) / fluids.mu_w
    if phase == "o":
        return model.rel_perm_o(s) / fluids.mu_o
    raise ValueError(f"phase must be 'w' or 'o', got {phase!r}")


def fractional_flow(model, fluids, phase, s):
    """Fraction of the total mobility carried by one phase; f_w + f_o = 1."""
    eta_w = mobility(model, fluids, "w", s)
    eta_o = mobility(model, fluids, "o", s)
    total = eta_w + eta_o
    if np.any(np.asarray(total) <= 0.0):
        raise DegenerateStateError("both phase mobilities vanish")
    if phase == "w":
        return eta_w / total
    if phase == "o":
        return eta_o / total
    raise ValueError(f"phase must be 'w' or 'o', got {phase!r}")
