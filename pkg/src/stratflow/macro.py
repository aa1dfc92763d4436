"""Finite-volume solver for the averaged two-velocity one-pressure models.

The 1D periodic horizontal domain carries, per phase, averaged mass and
momentum (plus total energy in the heat-carrying variant), closed cell by
cell through the pressure-equilibrium root solve.  Convective fluxes use a
Rusanov numerical flux; the interface-pressure coupling p_i * grad(alpha)
is discretized centrally so that its two phasic contributions cancel
exactly, and friction/heat-exchange sources keep their antisymmetry at the
discrete level.  The one-velocity limit model shares the machinery with a
single mixture momentum.
"""

from dataclasses import dataclass, field

import numpy as np

from .eos import BarotropicLaw, pressure_equilibrium_alpha, sound_speed
from .errors import CflViolation, PositivityError

MASS_FLOOR = 1e-12
DEFAULT_CFL = 0.45


@dataclass
class MacroState:
    """Primitive averaged state on the 1D grid (phase-major (2, N) arrays)."""

    alpha1: np.ndarray
    rho: np.ndarray
    v: np.ndarray
    p: np.ndarray
    E: np.ndarray = None       # specific total energies (energy variant)
    e: np.ndarray = None       # specific internal energies
    theta: np.ndarray = None   # averaged temperatures

    @property
    def alpha(self):
        return np.stack([self.alpha1, 1.0 - self.alpha1])

    @property
    def is_nsf(self):
        return self.E is not None

    @property
    def n_cells(self):
        return self.alpha1.shape[0]


@dataclass
class Conserved:
    """Per-cell conserved quantities m_k, q_k (and phase total energies)."""

    m: np.ndarray
    q: np.ndarray
    En: np.ndarray = None

    def copy(self):
        return Conserved(self.m.copy(), self.q.copy(),
                         None if self.En is None else self.En.copy())


@dataclass
class OneVelocityState:
    alpha1: np.ndarray
    rho: np.ndarray
    v: np.ndarray       # single shared velocity, (N,)
    p: np.ndarray

    @property
    def alpha(self):
        return np.stack([self.alpha1, 1.0 - self.alpha1])

    @property
    def rho_mix(self):
        return self.alpha1 * self.rho[0] + (1.0 - self.alpha1) * self.rho[1]


@dataclass
class OneVelocityConserved:
    m: np.ndarray       # (2, N)
    q_mix: np.ndarray   # (N,)

    def copy(self):
        return OneVelocityConserved(self.m.copy(), self.q_mix.copy())


@dataclass
class SourceParams:
    """Friction and heat-exchange coefficients of the averaged models.

    ``delta_xi`` switches the wall friction on (the xi = 1 regime) and
    ``delta_gamma`` the averaged heat diffusion (the gamma = 0 regime).
    ``w_pi`` sets the interface pressure p_i = w_pi p1 + (1 - w_pi) p2.
    """

    kappa_wall: tuple = (0.0, 0.0)
    kappa_int: float = 0.0
    h_contact: float = 0.0
    beta: tuple = (0.0, 0.0)
    delta_xi: int = 1
    delta_gamma: int = 0
    w_pi: float = 0.5
    quadratic_friction: bool = False


# ---------------------------------------------------------------------------
# state conversions
# ---------------------------------------------------------------------------

def conserved_from_primitive(state):
    m = state.alpha * state.rho
    q = m * state.v
    if state.is_nsf:
        return Conserved(m, q, m * state.E)
    return Conserved(m, q)


def _check_positivity(Cn):
    for k in range(2):
        bad = np.flatnonzero(Cn.m[k] <= MASS_FLOOR)
        if bad.size:
            raise PositivityError(
                f"phase {k + 1} partial mass at floor in cell {bad[0]}",
                cell=int(bad[0]), phase=k + 1)


def primitive_from_conserved(Cn, eos_pair):
    """Recover the primitive state, re-establishing the pressure closure.

    Runs the per-cell pressure-equilibrium root solve, then evaluates the
    EOS.  Raises :class:`PositivityError` when a partial mass sits at the
    floor and propagates closure failures from the root solve.
    """
    _check_positivity(Cn)
    law1, law2 = eos_pair
    m, q = Cn.m, Cn.q
    v = q / m
    if Cn.En is None:
        alpha1 = pressure_equilibrium_alpha(m[0], m[1], law1, law2)
        alpha = np.stack([alpha1, 1.0 - alpha1])
        rho = m / alpha
        p = np.stack([law1.pressure(rho[0]), law2.pressure(rho[1])])
        return MacroState(alpha1, rho, v, p)
    E = Cn.En / m
    internal = Cn.En - 0.5 * q**2 / m      # m_k * e_k per cell
    alpha1 = pressure_equilibrium_alpha(m[0], m[1], law1, law2,
                                        rho_e1=internal[0], rho_e2=internal[1])
    alpha = np.stack([alpha1, 1.0 - alpha1])
    rho = m / alpha
    rho_e = internal / alpha
    p = np.stack([law1.pressure(rho[0], rho_e[0]), law2.pressure(rho[1], rho_e[1])])
    theta = np.stack([law1.temperature(rho[0], rho_e[0]),
                      law2.temperature(rho[1], rho_e[1])])
    return MacroState(alpha1, rho, v, p, E=E, e=internal / m, theta=theta)


# ---------------------------------------------------------------------------
# fluxes and sources
# ---------------------------------------------------------------------------

def convective_flux(state):
    """Physical convective fluxes (mass, momentum[, energy]) per phase."""
    m = state.alpha * state.rho
    f_mass = m * state.v
    f_mom = m * state.v**2 + state.alpha * state.p
    if state.is_nsf:
        f_en = (m * state.E + state.alpha * state.p) * state.v
        return f_mass, f_mom, f_en
    return f_mass, f_mom, None


def interface_pressure(state, w_pi):
    return w_pi * state.p[0] + (1.0 - w_pi) * state.p[1]


def phase_sound_speeds(state, eos_pair):
    law1, law2 = eos_pair
    if state.is_nsf:
        rho_e = state.rho * state.e
        return np.stack([sound_speed(law1, state.rho[0], rho_e[0]),
                         sound_speed(law2, state.rho[1], rho_e[1])])
    return np.stack([sound_speed(law1, state.rho[0]),
                     sound_speed(law2, state.rho[1])])


def max_wave_speed(state, eos_pair):
    c = phase_sound_speeds(state, eos_pair)
    return np.max(np.abs(state.v) + c, axis=0)


def nonconservative_face_terms(state, params, dx):
    """Per-face interface-pressure coupling p_i * (alpha_right - alpha_left) / dx.

    Face j sits between cells j and j+1 (periodic); p_i is the two-cell
    average of the convex pressure combination.  Returns the phase-1 face
    values; phase 2 is the exact negative since alpha2 = 1 - alpha1.
    """
    p_i = interface_pressure(state, params.w_pi)
    p_face = 0.5 * (p_i + np.roll(p_i, -1))
    dalpha = np.roll(state.alpha1, -1) - state.alpha1
    return p_face * dalpha / dx


def nonconservative_cell_terms(state, params, dx):
    """Cell-centered momentum contributions of the p_i grad(alpha) coupling.

    The average of the two adjacent face terms; summing the phase-1 and
    phase-2 rows gives exactly zero in every cell.
    """
    face1 = nonconservative_face_terms(state, params, dx)
    cell1 = 0.5 * (face1 + np.roll(face1, 1))
    return np.stack([cell1, -cell1])


def _interfacial_drag(state, params):
    dv = state.v[0] - state.v[1]
    if params.quadratic_friction:
        return params.kappa_int * np.abs(dv) * dv
    return params.kappa_int * dv


def friction_sources(state, params):
    """Wall and interfacial friction sources (momentum[, energy]) per phase.

    Momentum: -delta_xi kappa_k v_k + (-1)^k kappa_i (v1 - v2); the
    interfacial parts cancel over k.  Energy: -delta_xi kappa_k |v_k|^2 +
    (-1)^k kappa_i (v1 - v2) . v_k, whose interfacial parts sum to the
    dissipation -kappa_i (v1 - v2)^2 <= 0.
    """
    kw = np.asarray(params.kappa_wall, dtype=float).reshape(2, 1)
    drag = _interfacial_drag(state, params)
    signs = np.array([[-1.0], [1.0]])
    mom = -params.delta_xi * kw * state.v + signs * drag
    energy = -params.delta_xi * kw * state.v**2 + signs * drag * state.v
    return mom, energy


def heat_sources(state, params, dx):
    """Interfacial heat exchange and averaged heat diffusion (energy variant).

    Exchange (-1)^k h_c (theta1 - theta2) sums to zero pointwise; diffusion
    delta_gamma beta_k d/dx(alpha_k d theta_k/dx) uses centered second
    differences with face-averaged fractions on the periodic grid.
    """
    dtheta = state.theta[0] - state.theta[1]
    signs = np.array([[-1.0], [1.0]])
    out = signs * (params.h_contact * dtheta)
    if params.delta_gamma:
        beta = np.asarray(params.beta, dtype=float).reshape(2, 1)
        alpha = state.alpha
        a_face = 0.5 * (alpha + np.roll(alpha, -1, axis=1))
        grad_face = (np.roll(state.theta, -1, axis=1) - state.theta) / dx
        flux = a_face * grad_face
        out = out + params.delta_gamma * beta * (flux - np.roll(flux, 1, axis=1)) / dx
    return out


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------

def _rusanov(flux, cons, speeds):
    f_face = 0.5 * (flux + np.roll(flux, -1, axis=-1))
    s_face = np.maximum(speeds, np.roll(speeds, -1))
    u_jump = np.roll(cons, -1, axis=-1) - cons
    return f_face - 0.5 * s_face * u_jump


def _divergence(face_flux, dx):
    return -(face_flux - np.roll(face_flux, 1, axis=-1)) / dx


def _enforce_cfl(state, eos_pair, dt, dx, cfl):
    smax = float(np.max(max_wave_speed(state, eos_pair)))
    if smax > 0.0 and dt * smax / dx > cfl * (1.0 + 1e-12):
        raise CflViolation(
            f"dt={dt:.3e} exceeds the CFL bound", admissible_dt=cfl * dx / smax)


def _euler_step_two_velocity(Cn, state, dt, dx, eos_pair, params):
    f_mass, f_mom, f_en = convective_flux(state)
    speeds = max_wave_speed(state, eos_pair)
    m_new = Cn.m + dt * _divergence(_rusanov(f_mass, Cn.m, speeds), dx)
    q_new = Cn.q + dt * _divergence(_rusanov(f_mom, Cn.q, speeds), dx)
    noncons = nonconservative_cell_terms(state, params, dx)
    mom_src, en_src = friction_sources(state, params)
    q_new += dt * (noncons + mom_src)
    if Cn.En is None:
        out = Conserved(m_new, q_new)
        return out, primitive_from_conserved(out, eos_pair)
    en_new = Cn.En + dt * _divergence(_rusanov(f_en, Cn.En, speeds), dx)
    en_new += dt * (en_src + heat_sources(state, params, dx))
    # close once to get the in-step alpha change, then charge p_i d_t alpha
    predictor = primitive_from_conserved(Conserved(m_new, q_new, en_new), eos_pair)
    p_i = interface_pressure(state, params.w_pi)
    dalpha1 = predictor.alpha1 - state.alpha1
    en_new = en_new - p_i * np.stack([dalpha1, -dalpha1])
    out = Conserved(m_new, q_new, en_new)
    return out, primitive_from_conserved(out, eos_pair)


def hyperbolic_step(Cn, dt, dx, eos_pair, params, state=None,
                    cfl=DEFAULT_CFL, integrator="euler"):
    """Advance the two-velocity model by one step.

    Forward Euler by default, SSP-RK2 with ``integrator="rk2"``.  Checks
    the CFL bound against the pre-step state and re-establishes the
    pressure closure cell by cell.  Returns ``(conserved, state)``.
    """
    if state is None:
        state = primitive_from_conserved(Cn, eos_pair)
    _enforce_cfl(state, eos_pair, dt, dx, cfl)
    U1, s1 = _euler_step_two_velocity(Cn, state, dt, dx, eos_pair, params)
    if integrator == "euler":
        return U1, s1
    if integrator != "rk2":
        raise ValueError(f"unknown integrator {integrator!r}")
    U2, _ = _euler_step_two_velocity(U1, s1, dt, dx, eos_pair, params)
    out = Conserved(0.5 * (Cn.m + U2.m), 0.5 * (Cn.q + U2.q),
                    None if Cn.En is None else 0.5 * (Cn.En + U2.En))
    return out, primitive_from_conserved(out, eos_pair)


# ---------------------------------------------------------------------------
# one-velocity limit model
# ---------------------------------------------------------------------------

def one_velocity_primitive(Cn, eos_pair):
    law1, law2 = eos_pair
    for k in range(2):
        bad = np.flatnonzero(Cn.m[k] <= MASS_FLOOR)
        if bad.size:
            raise PositivityError(
                f"phase {k + 1} partial mass at floor in cell {bad[0]}",
                cell=int(bad[0]), phase=k + 1)
    alpha1 = pressure_equilibrium_alpha(Cn.m[0], Cn.m[1], law1, law2)
    alpha = np.stack([alpha1, 1.0 - alpha1])
    rho = Cn.m / alpha
    p = np.stack([law1.pressure(rho[0]), law2.pressure(rho[1])])
    v = Cn.q_mix / (Cn.m[0] + Cn.m[1])
    return OneVelocityState(alpha1, rho, v, p)


def one_velocity_conserved(state):
    m = state.alpha * state.rho
    return OneVelocityConserved(m, state.rho_mix * state.v)


def one_velocity_step(Cn, dt, dx, eos_pair, params, state=None,
                      cfl=DEFAULT_CFL, integrator="euler"):
    """Advance the one-velocity mixture model by one step.

    Mass fluxes m_k v, mixture momentum flux rho v^2 + alpha1 p1 + alpha2 p2,
    wall friction -delta_xi (kappa1 + kappa2) v; fully conservative.
    """
    law1, law2 = eos_pair
    if state is None:
        state = one_velocity_primitive(Cn, eos_pair)
    c = np.stack([law1.sound_speed(state.rho[0]), law2.sound_speed(state.rho[1])])
    speeds = np.abs(state.v) + np.max(c, axis=0)
    smax = float(np.max(speeds))
    if smax > 0.0 and dt * smax / dx > cfl * (1.0 + 1e-12):
        raise CflViolation(
            f"dt={dt:.3e} exceeds the CFL bound", admissible_dt=cfl * dx / smax)

    def euler(U, st, spd):
        f_mass = U.m * st.v
        p_mix = st.alpha1 * st.p[0] + (1.0 - st.alpha1) * st.p[1]
        f_mom = U.q_mix * st.v + p_mix
        m_new = U.m + dt * _divergence(_rusanov(f_mass, U.m, spd), dx)
        q_new = U.q_mix + dt * _divergence(_rusanov(f_mom, U.q_mix, spd), dx)
        kappa_sum = params.delta_xi * (params.kappa_wall[0] + params.kappa_wall[1])
        q_new -= dt * kappa_sum * st.v
        out = OneVelocityConserved(m_new, q_new)
        return out, one_velocity_primitive(out, eos_pair)

    U1, s1 = euler(Cn, state, speeds)
    if integrator == "euler":
        return U1, s1
    if integrator != "rk2":
        raise ValueError(f"unknown integrator {integrator!r}")
    c1 = np.stack([law1.sound_speed(s1.rho[0]), law2.sound_speed(s1.rho[1])])
    U2, _ = euler(U1, s1, np.abs(s1.v) + np.max(c1, axis=0))
    out = OneVelocityConserved(0.5 * (Cn.m + U2.m), 0.5 * (Cn.q_mix + U2.q_mix))
    return out, one_velocity_primitive(out, eos_pair)


# ---------------------------------------------------------------------------
# diagnostics used across test suites
# ---------------------------------------------------------------------------

def total_phase_masses(Cn, dx):
    return np.sum(Cn.m, axis=1) * dx


def total_momentum(Cn, dx):
    q = Cn.q_mix if isinstance(Cn, OneVelocityConserved) else np.sum(Cn.q, axis=0)
    return np.sum(q) * dx


def kinetic_energy(Cn, dx):
    return float(np.sum(0.5 * Cn.q**2 / Cn.m) * dx)


def closure_mismatch(state):
    return float(np.max(np.abs(state.p[0] - state.p[1])
                        / np.maximum(np.abs(state.p[0]), np.abs(state.p[1]))))
