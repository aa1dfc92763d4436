"""Equations of state and the pressure-equilibrium closure.

Two families are provided: barotropic laws ``p(rho) = coeff * rho**exponent
- offset`` (gamma-law when ``offset == 0``, stiffened gas otherwise) and
complete stiffened-gas laws ``p(rho, rho_e) = (gamma - 1) rho_e - gamma *
offset`` with temperature ``theta = (rho_e - offset) / (rho * c_v)``.  Both
are strictly increasing in density, which makes the two-phase
pressure-equilibrium root solve monotone.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ClosureError, EosDomainError

ALPHA_BRACKET = (1e-9, 1.0 - 1e-9)
CLOSURE_RTOL = 1e-12


@dataclass(frozen=True)
class BarotropicLaw:
    """Barotropic pressure law p(rho) = coeff * rho**exponent - offset.

    Parameters
    ----------
    exponent : float
        Polytropic exponent, >= 1.
    coeff : float
        Pressure scale, > 0.
    offset : float
        Stiffness offset, 0 for a plain gamma-law.
    """

    exponent: float
    coeff: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not self.coeff > 0.0:
            raise EosDomainError(f"coeff must be positive, got {self.coeff}")
        if not self.exponent >= 1.0:
            raise EosDomainError(f"exponent must be >= 1, got {self.exponent}")

    def pressure(self, rho):
        rho = _require_positive(rho, "density")
        return self.coeff * rho**self.exponent - self.offset

    def dp_drho(self, rho):
        rho = _require_positive(rho, "density")
        return self.coeff * self.exponent * rho ** (self.exponent - 1.0)

    def sound_speed(self, rho):
        return np.sqrt(self.dp_drho(rho))

    def density(self, p):
        """Inverse law: density at pressure ``p`` (p + offset must be > 0)."""
        arg = np.asarray(p, dtype=float) + self.offset
        if np.any(arg <= 0.0):
            raise EosDomainError("pressure below the stiffened vacuum limit")
        out = (arg / self.coeff) ** (1.0 / self.exponent)
        return out if np.ndim(p) else float(out)


@dataclass(frozen=True)
class CompleteEos:
    """Stiffened-gas complete law (ideal gas when ``offset == 0``).

    p(rho, rho_e) = (gamma - 1) rho_e - gamma * offset
    theta(rho, rho_e) = (rho_e - offset) / (rho * c_v)

    The specific entropy s = c_v * log(theta / rho**(gamma - 1)) satisfies
    the Gibbs relation theta ds = p d(1/rho) + de exactly; see
    :func:`gibbs_residual` for the finite-difference verification hook.
    Valid for rho > 0 and rho_e > offset.
    """

    gamma: float
    c_v: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise EosDomainError(f"gamma must be > 1, got {self.gamma}")
        if not self.c_v > 0.0:
            raise EosDomainError(f"c_v must be positive, got {self.c_v}")

    def _check(self, rho, rho_e):
        rho = _require_positive(rho, "density")
        rho_e = np.asarray(rho_e, dtype=float)
        if np.any(rho_e <= self.offset):
            raise EosDomainError("internal energy below the stiffened floor")
        return rho, rho_e

    def pressure(self, rho, rho_e):
        rho, rho_e = self._check(rho, rho_e)
        out = (self.gamma - 1.0) * rho_e - self.gamma * self.offset
        return out if out.ndim else float(out)

    def temperature(self, rho, rho_e):
        rho, rho_e = self._check(rho, rho_e)
        out = (rho_e - self.offset) / (rho * self.c_v)
        return out if out.ndim else float(out)

    def entropy(self, rho, e):
        """Specific entropy as a function of (rho, specific internal energy)."""
        rho = np.asarray(rho, dtype=float)
        theta = self.temperature(rho, rho * np.asarray(e, dtype=float))
        out = self.c_v * np.log(theta * rho ** (1.0 - self.gamma))
        return out if out.ndim else float(out)

    def sound_speed(self, rho, rho_e):
        rho, rho_e = self._check(rho, rho_e)
        p = (self.gamma - 1.0) * rho_e - self.gamma * self.offset
        out = np.sqrt(self.gamma * (p + self.offset) / rho)
        return out if out.ndim else float(out)

    def rho_e_from_pressure(self, p):
        """Volumetric internal energy at pressure ``p`` (density-free)."""
        return (np.asarray(p, dtype=float) + self.gamma * self.offset) / (self.gamma - 1.0)


def sound_speed(law, rho, rho_e=None):
    """Sound speed for either EOS family.

    Barotropic: c = sqrt(dp/drho).  Complete: c = sqrt(gamma (p + offset) / rho).
    """
    if isinstance(law, BarotropicLaw):
        return law.sound_speed(rho)
    if rho_e is None:
        raise EosDomainError("complete EOS sound speed needs rho_e")
    return law.sound_speed(rho, rho_e)


def gibbs_residual(eos, rho, e, delta):
    """Centered-difference residuals of the Gibbs relation.

    Returns ``(r_energy, r_volume)`` where

    r_energy = |theta * ds/de - 1|            (at fixed rho)
    r_volume = |theta * ds/d(1/rho) - p|      (at fixed e)

    Both vanish at rate O(delta^2) because the entropy satisfies the
    relation exactly and the differencing is second order.
    """
    if not delta > 0.0:
        raise EosDomainError("delta must be positive")
    rho = float(rho)
    e = float(e)
    theta = eos.temperature(rho, rho * e)
    p = eos.pressure(rho, rho * e)

    ds_de = (eos.entropy(rho, e + delta) - eos.entropy(rho, e - delta)) / (2.0 * delta)
    r_energy = abs(theta * ds_de - 1.0)

    v = 1.0 / rho
    if v - delta <= 0.0:
        raise EosDomainError("volume perturbation leaves the EOS domain")
    s_plus = eos.entropy(1.0 / (v + delta), e)
    s_minus = eos.entropy(1.0 / (v - delta), e)
    ds_dv = (s_plus - s_minus) / (2.0 * delta)
    r_volume = abs(theta * ds_dv - p)
    return r_energy, r_volume


def _phase_pressure(law, m, alpha, rho_e_vol):
    """Phase pressure as a function of its volume fraction.

    ``m`` is the partial mass alpha*rho_bar; ``rho_e_vol`` the partial
    internal energy alpha*rho_bar*e_tilde (complete EOS only).
    """
    rho = m / alpha
    if isinstance(law, BarotropicLaw):
        return law.coeff * rho**law.exponent - law.offset
    return (law.gamma - 1.0) * rho_e_vol / alpha - law.gamma * law.offset


def _phase_dp_dalpha(law, m, alpha, rho_e_vol):
    if isinstance(law, BarotropicLaw):
        rho = m / alpha
        return law.coeff * law.exponent * rho ** (law.exponent - 1.0) * (-m / alpha**2)
    return -(law.gamma - 1.0) * rho_e_vol / alpha**2


def pressure_equilibrium_alpha(m1, m2, law1, law2, rho_e1=None, rho_e2=None,
                               rtol=CLOSURE_RTOL, max_iter=200):
    """Volume fraction alpha1 equalizing the phase pressures.

    Solves p1(m1/alpha1, .) = p2(m2/(1 - alpha1), .) for alpha1 in (0, 1)
    with a safeguarded Newton iteration (bisection fallback) on the bracket
    (1e-9, 1 - 1e-9).  The mismatch g(alpha) = p1 - p2 is strictly
    decreasing for increasing laws, so the bracketed root is unique.

    Parameters
    ----------
    m1, m2 : float or ndarray
        Partial masses alpha_k * rho_bar_k, > 0.
    law1, law2 : BarotropicLaw or CompleteEos
    rho_e1, rho_e2 : float or ndarray, optional
        Partial internal energies m_k * e_tilde_k; required for complete laws.

    Returns
    -------
    alpha1 with |p1 - p2| <= rtol * max(|p1|, |p2|) elementwise.

    Raises
    ------
    ClosureError
        If the pressure ranges admit no sign change on the bracket, or the
        bracket collapses before the tolerance is met (best iterate attached).
    """
    scalar = np.ndim(m1) == 0 and np.ndim(m2) == 0
    m1 = np.atleast_1d(np.asarray(m1, dtype=float))
    m2 = np.atleast_1d(np.asarray(m2, dtype=float))
    if np.any(m1 <= 0.0) or np.any(m2 <= 0.0):
        raise EosDomainError("partial masses must be positive")
    need_e1 = not isinstance(law1, BarotropicLaw)
    need_e2 = not isinstance(law2, BarotropicLaw)
    if (need_e1 and rho_e1 is None) or (need_e2 and rho_e2 is None):
        raise EosDomainError("complete EOS closure needs partial internal energies")
    e1 = np.broadcast_to(np.asarray(0.0 if rho_e1 is None else rho_e1, float), m1.shape)
    e2 = np.broadcast_to(np.asarray(0.0 if rho_e2 is None else rho_e2, float), m2.shape)
    if need_e1 and np.any(e1 <= 0.0):
        raise EosDomainError("partial internal energy of phase 1 must be positive")
    if need_e2 and np.any(e2 <= 0.0):
        raise EosDomainError("partial internal energy of phase 2 must be positive")

    lo = np.full_like(m1, ALPHA_BRACKET[0])
    hi = np.full_like(m1, ALPHA_BRACKET[1])

    def mismatch(a):
        p1 = _phase_pressure(law1, m1, a, e1)
        p2 = _phase_pressure(law2, m2, 1.0 - a, e2)
        return p1 - p2, p1, p2

    g_lo, _, _ = mismatch(lo)
    g_hi, _, _ = mismatch(hi)
    if np.any(g_lo < 0.0) or np.any(g_hi > 0.0):
        bad = np.flatnonzero((g_lo < 0.0) | (g_hi > 0.0))
        raise ClosureError(
            f"no pressure-equilibrium sign change on (0, 1) for {bad.size} state(s); "
            "EOS ranges incompatible")

    alpha = 0.5 * (lo + hi)
    converged = np.zeros(alpha.shape, dtype=bool)
    best = alpha.copy()
    best_res = np.full_like(alpha, np.inf)
    for _ in range(max_iter):
        g, p1, p2 = mismatch(alpha)
        res = np.abs(g)
        tol = rtol * np.maximum(np.abs(p1), np.abs(p2))
        better = res < best_res
        best = np.where(better, alpha, best)
        best_res = np.where(better, res, best_res)
        converged |= res <= tol
        if np.all(converged):
            break
        # tighten the bracket: g decreasing, so g > 0 means root above alpha
        lo = np.where(~converged & (g > 0.0), alpha, lo)
        hi = np.where(~converged & (g < 0.0), alpha, hi)
        # chain rule through alpha2 = 1 - alpha flips the phase-2 sign twice
        gp = (_phase_dp_dalpha(law1, m1, alpha, e1)
              + _phase_dp_dalpha(law2, m2, 1.0 - alpha, e2))
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = alpha - g / gp
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        alpha = np.where(converged, alpha, np.where(inside, newton, 0.5 * (lo + hi)))
        if np.all((hi - lo)[~converged] < np.finfo(float).eps * 4.0) and not np.all(converged):
            idx = np.flatnonzero(~converged)
            err = ClosureError(
                f"pressure-equilibrium bracket collapsed for {idx.size} state(s)",
                best_alpha=best if not scalar else float(best[0]),
                residual=best_res if not scalar else float(best_res[0]))
            raise err
    if not np.all(converged):
        idx = np.flatnonzero(~converged)
        raise ClosureError(
            f"pressure-equilibrium iteration did not converge for {idx.size} state(s)",
            best_alpha=best if not scalar else float(best[0]),
            residual=best_res if not scalar else float(best_res[0]))
    return float(alpha[0]) if scalar else alpha


def _require_positive(x, name):
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
        raise EosDomainError(f"{name} must be positive and finite")
    return arr
