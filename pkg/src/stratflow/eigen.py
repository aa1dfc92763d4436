"""Quasilinear forms and spectra of the averaged models' convective parts.

The two-velocity one-pressure system is assembled in primitive variables
(alpha1, rho1, v1, v2) for the barotropic variant and (alpha1, rho1, v1,
v2, e1, e2) for the energy-carrying variant; the phase-2 density is
eliminated through the pressure-equilibrium closure.  The one-velocity
limit model is 3x3 in (alpha1, rho1, v).  A finite-difference Jacobian of
the conserved-variable flux assembly (including the interface-pressure
nonconservative block) provides an independent cross-check of the
analytic matrices.
"""

from dataclasses import dataclass

import numpy as np

from .eos import BarotropicLaw, pressure_equilibrium_alpha
from .errors import EosDomainError, SpectrumError

TWO_VELOCITY_BAROTROPIC = "two-velocity-barotropic"
TWO_VELOCITY_NSF = "two-velocity-nsf"
ONE_VELOCITY = "one-velocity"

RESIDUAL_RTOL = 1e-8


@dataclass(frozen=True)
class StatePoint:
    """Primitive state at which a quasilinear form is assembled.

    ``rho2`` is always derived from the closure, never stored.  ``e1``,
    ``e2`` are the phase specific internal energies (energy variant only);
    ``v2`` is ignored by the one-velocity variant.
    """

    alpha1: float
    rho1: float
    v1: float
    v2: float = 0.0
    e1: float = None
    e2: float = None


@dataclass(frozen=True)
class QuasilinearForm:
    state: StatePoint
    variant: str
    matrix: np.ndarray
    w_pi: float
    variables: tuple


def closure_density2(state, eos_pair):
    """Phase-2 density implied by pressure equality at the state point."""
    law1, law2 = eos_pair
    if isinstance(law1, BarotropicLaw):
        return law2.density(law1.pressure(state.rho1))
    p1 = law1.pressure(state.rho1, state.rho1 * state.e1)
    rho2 = (p1 + law2.gamma * law2.offset) / ((law2.gamma - 1.0) * state.e2)
    if rho2 <= 0.0:
        raise EosDomainError("closure admits no positive phase-2 density")
    return rho2


def assemble_quasilinear(state, variant, eos_pair, w_pi=0.5):
    """Analytic quasilinear matrix A with d_t V + A d_x V = 0.

    The interface pressure p_i = w_pi * p1 + (1 - w_pi) * p2 enters the
    velocity rows through the (p_k - p_i) d_x alpha_k coupling; on the
    closure manifold the two pressures coincide so that block vanishes
    identically, which is what makes the assembled coefficients
    independent of w_pi.
    """
    if variant == TWO_VELOCITY_BAROTROPIC:
        return _assemble_barotropic(state, eos_pair, w_pi)
    if variant == TWO_VELOCITY_NSF:
        return _assemble_energy(state, eos_pair, w_pi)
    if variant == ONE_VELOCITY:
        return _assemble_one_velocity(state, eos_pair, w_pi)
    raise ValueError(f"unknown model variant {variant!r}")


def _mass_block_inverse(alpha1, rho1, rho2, r2p):
    """Inverse of the (alpha1, rho1) time-derivative coupling of the masses."""
    alpha2 = 1.0 - alpha1
    det = rho1 * alpha2 * r2p + alpha1 * rho2
    return np.array([[alpha2 * r2p, -alpha1], [rho2, rho1]]) / det


def _assemble_barotropic(state, eos_pair, w_pi):
    law1, law2 = eos_pair
    a1, rho1 = state.alpha1, state.rho1
    a2 = 1.0 - a1
    v1, v2 = state.v1, state.v2
    rho2 = closure_density2(state, eos_pair)
    c1sq = law1.dp_drho(rho1)
    c2sq = law2.dp_drho(rho2)
    r2p = c1sq / c2sq  # d rho2 / d rho1 along the closure manifold
    p1 = law1.pressure(rho1)
    p2 = law2.pressure(rho2)
    p_i = w_pi * p1 + (1.0 - w_pi) * p2

    A = np.zeros((4, 4))
    mass_x = np.array([
        [v1 * rho1, v1 * a1, a1 * rho1, 0.0],
        [-v2 * rho2, v2 * a2 * r2p, 0.0, a2 * rho2],
    ])
    A[0:2] = _mass_block_inverse(a1, rho1, rho2, r2p) @ mass_x
    A[2] = [(p1 - p_i) / (a1 * rho1), c1sq / rho1, v1, 0.0]
    A[3] = [-(p2 - p_i) / (a2 * rho2), c1sq / rho2, 0.0, v2]
    return QuasilinearForm(state, TWO_VELOCITY_BAROTROPIC, A, w_pi,
                           ("alpha1", "rho1", "v1", "v2"))


def _assemble_energy(state, eos_pair, w_pi):
    eos1, eos2 = eos_pair
    a1, rho1, v1, v2 = state.alpha1, state.rho1, state.v1, state.v2
    e1, e2 = state.e1, state.e2
    a2 = 1.0 - a1
    rho2 = closure_density2(state, eos_pair)
    p1 = eos1.pressure(rho1, rho1 * e1)
    p2 = eos2.pressure(rho2, rho2 * e2)
    p_i = w_pi * p1 + (1.0 - w_pi) * p2
    # partials of p_k(rho_k, e_k) for the stiffened-gas family
    dp1_drho, dp1_de = (eos1.gamma - 1.0) * e1, (eos1.gamma - 1.0) * rho1
    dp2_drho, dp2_de = (eos2.gamma - 1.0) * e2, (eos2.gamma - 1.0) * rho2
    # closure manifold rho2(rho1, e1, e2): implicit differentiation of p2 = p1
    R_rho = dp1_drho / dp2_drho
    R_e1 = dp1_de / dp2_drho
    R_e2 = -dp2_de / dp2_drho

    B0 = np.zeros((6, 6))
    B1 = np.zeros((6, 6))
    # variables: alpha1, rho1, v1, v2, e1, e2
    B0[0] = [rho1, a1, 0, 0, 0, 0]
    B1[0] = [v1 * rho1, v1 * a1, a1 * rho1, 0, 0, 0]
    B0[1] = [-rho2, a2 * R_rho, 0, 0, a2 * R_e1, a2 * R_e2]
    B1[1] = [-v2 * rho2, v2 * a2 * R_rho, 0, a2 * rho2, v2 * a2 * R_e1, v2 * a2 * R_e2]
    B0[2] = [0, 0, 1, 0, 0, 0]
    B1[2] = [(p1 - p_i) / (a1 * rho1), dp1_drho / rho1, v1, 0, dp1_de / rho1, 0]
    B0[3] = [0, 0, 0, 1, 0, 0]
    B1[3] = [-(p2 - p_i) / (a2 * rho2), dp1_drho / rho2, 0, v2, dp1_de / rho2, 0]
    B0[4] = [p_i / a1, 0, 0, 0, rho1, 0]
    B1[4] = [p_i * v1 / a1, 0, p1, 0, rho1 * v1, 0]
    B0[5] = [-p_i / a2, 0, 0, 0, 0, rho2]
    B1[5] = [-p_i * v2 / a2, 0, 0, p2, 0, rho2 * v2]
    A = np.linalg.solve(B0, B1)
    return QuasilinearForm(state, TWO_VELOCITY_NSF, A, w_pi,
                           ("alpha1", "rho1", "v1", "v2", "e1", "e2"))


def _assemble_one_velocity(state, eos_pair, w_pi):
    law1, law2 = eos_pair
    a1, rho1, v = state.alpha1, state.rho1, state.v1
    a2 = 1.0 - a1
    rho2 = closure_density2(state, eos_pair)
    c1sq = law1.dp_drho(rho1)
    c2sq = law2.dp_drho(rho2)
    r2p = c1sq / c2sq
    p1 = law1.pressure(rho1)
    p2 = law2.pressure(rho2)
    rho_mix = a1 * rho1 + a2 * rho2

    A = np.zeros((3, 3))
    mass_x = np.array([
        [v * rho1, v * a1, a1 * rho1],
        [-v * rho2, v * a2 * r2p, a2 * rho2],
    ])
    A[0:2] = _mass_block_inverse(a1, rho1, rho2, r2p) @ mass_x
    A[2] = [(p1 - p2) / rho_mix, c1sq / rho_mix, v]
    return QuasilinearForm(state, ONE_VELOCITY, A, w_pi, ("alpha1", "rho1", "v"))


def mixture_sound_speed(alpha1, rho1, rho2, c1, c2):
    """Sound speed of the one-velocity mixture.

    Satisfies 1 / (rho_mix c_mix^2) = alpha1 / (rho1 c1^2) + alpha2 / (rho2 c2^2).
    """
    rho_mix = alpha1 * rho1 + (1.0 - alpha1) * rho2
    inv = alpha1 / (rho1 * c1**2) + (1.0 - alpha1) / (rho2 * c2**2)
    return np.sqrt(1.0 / (rho_mix * inv))


def characteristic_polynomial(A):
    """Characteristic polynomial coefficients by the Faddeev-LeVerrier scheme."""
    n = A.shape[0]
    coeffs = np.zeros(n + 1)
    coeffs[0] = 1.0
    M = np.zeros_like(A)
    for k in range(1, n + 1):
        M = A @ M + coeffs[k - 1] * np.eye(n)
        coeffs[k] = -np.trace(A @ M) / k
    return coeffs


def spectrum(form):
    """Eigenvalues of the quasilinear matrix with a residual guarantee.

    Roots of the characteristic polynomial (degree <= 6) are computed,
    Newton-polished, and each is certified by the smallest singular pair
    of (A - lambda I): the residual ||(A - lambda I) v|| must not exceed
    1e-8 ||A||.
    """
    A = form.matrix.astype(complex)
    norm_a = np.linalg.norm(A, 2)
    scale = max(norm_a, 1.0)
    roots = np.roots(characteristic_polynomial(form.matrix)).astype(complex)
    eye = np.eye(A.shape[0])

    def residual_at(lam):
        sing = np.linalg.svd(A - lam * eye, compute_uv=False)
        return sing[-1]

    def rayleigh(lam):
        _, _, vh = np.linalg.svd(A - lam * eye)
        vec = vh[-1].conj()
        return (vec.conj() @ (A @ vec)) / (vec.conj() @ vec)

    # Multiple polynomial roots carry only eps**(1/m) accuracy.  Refine each
    # candidate by Rayleigh steps (semisimple case) and by means of nearby
    # root clusters, whose symmetric error pattern cancels (defective case).
    # A candidate that moves beyond roundoff must cut the residual decisively,
    # otherwise refinements could hop between distinct exact eigenvalues.
    tiny_move = 100.0 * np.finfo(float).eps * scale
    worst = 0.0
    refined = np.empty_like(roots)
    for i, lam in enumerate(roots):
        lam0 = complex(lam)
        best, best_res = lam0, residual_at(lam0)

        def consider(cand, best, best_res):
            res = residual_at(cand)
            decisive = res < 0.5 * best_res or res <= 1e-14 * scale < best_res
            if abs(cand - lam0) <= tiny_move and res < best_res:
                return cand, res
            if decisive:
                return cand, res
            return best, best_res

        cand = lam0
        for _ in range(3):
            if best_res <= 1e-14 * scale:
                break
            cand = rayleigh(cand)
            best, best_res = consider(cand, best, best_res)
        by_distance = roots[np.argsort(np.abs(roots - lam0))]
        for m in range(2, roots.size + 1):
            cluster = by_distance[:m]
            mean = np.mean(cluster)
            # only clusters shaped like a scattered multiple root qualify
            radius = scale * (1e3 * np.finfo(float).eps) ** (1.0 / m)
            if np.max(np.abs(cluster - mean)) > radius:
                continue
            best, best_res = consider(mean, best, best_res)
        # tie-break toward the real axis: imaginary dust on multiple real
        # roots certifies equally well, a genuine complex pair does not
        if best.imag != 0.0 and abs(best.imag) <= 1e-6 * scale:
            res = residual_at(complex(best.real))
            if res <= 1.5 * best_res + 1e-15 * scale:
                best, best_res = complex(best.real), res
        refined[i] = best
        worst = max(worst, best_res)
    if worst > RESIDUAL_RTOL * norm_a:
        raise SpectrumError(
            f"eigenpair residual {worst:.3e} exceeds {RESIDUAL_RTOL:.0e} * ||A||",
            best_residual=worst)
    # drop spurious imaginary dust on the real eigenvalues of a real matrix
    refined = np.where(np.abs(refined.imag) < 1e-13 * max(norm_a, 1.0),
                       refined.real + 0.0j, refined)
    order = np.lexsort((refined.imag, refined.real))
    return refined[order]


def max_imag(form):
    """Largest |Im lambda| of the form's spectrum."""
    return float(np.max(np.abs(spectrum(form).imag)))


def hyperbolicity_map(variant, eos_pair, dv_over_c, alphas, rho1=1.0,
                      e1=1.0, e2=1.0, w_pi=0.5):
    """Map of max |Im lambda| / ||A|| over relative slip and volume fraction.

    ``dv_over_c`` scales the velocity difference by the stiffer of the two
    phase sound speeds at the base state.  Velocities are centered
    (v1 = -v2) which loses nothing by Galilean invariance.
    """
    out = np.zeros((len(dv_over_c), len(alphas)))
    for j, a in enumerate(alphas):
        probe = StatePoint(alpha1=a, rho1=rho1, v1=0.0, v2=0.0, e1=e1, e2=e2)
        c_ref = _reference_speed(probe, eos_pair)
        for i, r in enumerate(dv_over_c):
            dv = r * c_ref
            st = StatePoint(alpha1=a, rho1=rho1, v1=0.5 * dv, v2=-0.5 * dv,
                            e1=e1, e2=e2)
            form = assemble_quasilinear(st, variant, eos_pair, w_pi)
            out[i, j] = max_imag(form) / np.linalg.norm(form.matrix, 2)
    return out


def _reference_speed(state, eos_pair):
    law1, law2 = eos_pair
    rho2 = closure_density2(state, eos_pair)
    if isinstance(law1, BarotropicLaw):
        return max(law1.sound_speed(state.rho1), law2.sound_speed(rho2))
    return max(law1.sound_speed(state.rho1, state.rho1 * state.e1),
               law2.sound_speed(rho2, rho2 * state.e2))


# ---------------------------------------------------------------------------
# Finite-difference cross-check through the conserved-variable assembly
# ---------------------------------------------------------------------------

def _conserved_of_primitive(V, variant, eos_pair):
    law1, law2 = eos_pair
    if variant == ONE_VELOCITY:
        a1, rho1, v = V
        st = StatePoint(alpha1=a1, rho1=rho1, v1=v)
        rho2 = closure_density2(st, eos_pair)
        m1, m2 = a1 * rho1, (1.0 - a1) * rho2
        return np.array([m1, m2, (m1 + m2) * v])
    if variant == TWO_VELOCITY_BAROTROPIC:
        a1, rho1, v1, v2 = V
        st = StatePoint(alpha1=a1, rho1=rho1, v1=v1, v2=v2)
        rho2 = closure_density2(st, eos_pair)
        m1, m2 = a1 * rho1, (1.0 - a1) * rho2
        return np.array([m1, m1 * v1, m2, m2 * v2])
    a1, rho1, v1, v2, e1, e2 = V
    st = StatePoint(alpha1=a1, rho1=rho1, v1=v1, v2=v2, e1=e1, e2=e2)
    rho2 = closure_density2(st, eos_pair)
    m1, m2 = a1 * rho1, (1.0 - a1) * rho2
    return np.array([m1, m1 * v1, m1 * (0.5 * v1**2 + e1),
                     m2, m2 * v2, m2 * (0.5 * v2**2 + e2)])


def _recover(U, variant, eos_pair, w_pi):
    """Closure recovery U -> (alpha1, per-phase primitives, fluxes, p_i)."""
    law1, law2 = eos_pair
    if variant == ONE_VELOCITY:
        m1, m2, Q = U
        a1 = pressure_equilibrium_alpha(m1, m2, law1, law2, rtol=1e-15)
        rho1, rho2 = m1 / a1, m2 / (1.0 - a1)
        p1, p2 = law1.pressure(rho1), law2.pressure(rho2)
        v = Q / (m1 + m2)
        flux = np.array([m1 * v, m2 * v, Q * v + a1 * p1 + (1.0 - a1) * p2])
        return a1, flux, None
    if variant == TWO_VELOCITY_BAROTROPIC:
        m1, q1, m2, q2 = U
        a1 = pressure_equilibrium_alpha(m1, m2, law1, law2, rtol=1e-15)
        rho1, rho2 = m1 / a1, m2 / (1.0 - a1)
        p1, p2 = law1.pressure(rho1), law2.pressure(rho2)
        v1, v2 = q1 / m1, q2 / m2
        flux = np.array([q1, q1 * v1 + a1 * p1, q2, q2 * v2 + (1.0 - a1) * p2])
        return a1, flux, w_pi * p1 + (1.0 - w_pi) * p2
    m1, q1, E1, m2, q2, E2 = U
    i1 = E1 - 0.5 * q1**2 / m1
    i2 = E2 - 0.5 * q2**2 / m2
    a1 = pressure_equilibrium_alpha(m1, m2, law1, law2, rho_e1=i1, rho_e2=i2,
                                    rtol=1e-15)
    rho1, rho2 = m1 / a1, m2 / (1.0 - a1)
    p1 = law1.pressure(rho1, i1 / a1)
    p2 = law2.pressure(rho2, i2 / (1.0 - a1))
    v1, v2 = q1 / m1, q2 / m2
    flux = np.array([q1, q1 * v1 + a1 * p1, (E1 + a1 * p1) * v1,
                     q2, q2 * v2 + (1.0 - a1) * p2, (E2 + (1.0 - a1) * p2) * v2])
    return a1, flux, w_pi * p1 + (1.0 - w_pi) * p2


def _fd_gradient(fun, x, rel_step):
    n = x.size
    probe = fun(x)
    m = np.atleast_1d(probe).size
    J = np.zeros((m, n))
    for i in range(n):
        h = rel_step * max(abs(x[i]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.atleast_1d(fun(xp)) - np.atleast_1d(fun(xm))) / (2.0 * h)
    return J


def fd_quasilinear(state, variant, eos_pair, w_pi=0.5, rel_step=1e-5):
    """Quasilinear matrix obtained by finite differences.

    Differentiates the conserved-variable flux assembly (plus the
    p_i-weighted nonconservative block, with the time-derivative coupling
    of the energy rows resolved implicitly) and transports the result to
    primitive variables.  Serves as the independent oracle for
    :func:`assemble_quasilinear`.
    """
    if variant == ONE_VELOCITY:
        V = np.array([state.alpha1, state.rho1, state.v1])
    elif variant == TWO_VELOCITY_BAROTROPIC:
        V = np.array([state.alpha1, state.rho1, state.v1, state.v2])
    else:
        V = np.array([state.alpha1, state.rho1, state.v1, state.v2,
                      state.e1, state.e2])
    U0 = _conserved_of_primitive(V, variant, eos_pair)
    n = U0.size

    flux_jac = _fd_gradient(lambda u: _recover(u, variant, eos_pair, w_pi)[1],
                            U0, rel_step)
    if variant == ONE_VELOCITY:
        A_cons = flux_jac
    else:
        alpha_grad = _fd_gradient(
            lambda u: _recover(u, variant, eos_pair, w_pi)[0], U0, rel_step)[0]
        _, _, p_i = _recover(U0, variant, eos_pair, w_pi)
        A_cons = flux_jac.copy()
        if variant == TWO_VELOCITY_BAROTROPIC:
            A_cons[1] -= p_i * alpha_grad
            A_cons[3] += p_i * alpha_grad
        else:
            A_cons[1] -= p_i * alpha_grad
            A_cons[4] += p_i * alpha_grad
            # p_i d_t alpha_k in the energy rows couples back into d_t U
            D = np.zeros((n, n))
            D[2] = p_i * alpha_grad
            D[5] = -p_i * alpha_grad
            A_cons = np.linalg.solve(np.eye(n) + D, A_cons)
    T = _fd_gradient(lambda v: _conserved_of_primitive(v, variant, eos_pair),
                     V, rel_step)
    return np.linalg.solve(T, A_cons @ T)


def jacobian_deviation(form, eos_pair, rel_step=1e-5):
    """Max entrywise deviation of the analytic matrix from the FD oracle,
    relative to the largest analytic entry."""
    A_fd = fd_quasilinear(form.state, form.variant, eos_pair, form.w_pi, rel_step)
    return float(np.max(np.abs(form.matrix - A_fd)) / np.max(np.abs(form.matrix)))
