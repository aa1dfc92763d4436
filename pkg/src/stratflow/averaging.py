"""Vertical and density-weighted averaging of micro fields.

The plain vertical average of f over a layer is (1/alpha) int f dz, which
on the sigma grid is simply the integral of f over s in [0, 1]; the
density-weighted (Favre) average is int(rho f) / int(rho).  Composite
trapezoid quadrature matches the solver's second-order accuracy.  The
diagnostics quantify how far the micro solution sits from the closed
averaged description: vertical velocity spread around the Favre mean,
pressure stratification and interfacial pressure mismatch, and the
quadratic closure defect of the Favre-averaged momentum flux.
"""

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .macro import MacroState
from .micro import ALPHA_MIN

_TRAPZ_CACHE = {}


def _weights(n_nodes):
    if n_nodes not in _TRAPZ_CACHE:
        w = np.ones(n_nodes)
        w[0] = w[-1] = 0.5
        _TRAPZ_CACHE[n_nodes] = w / (n_nodes - 1)
    return _TRAPZ_CACHE[n_nodes]


def _check_thickness(thickness):
    if np.any(np.asarray(thickness) < ALPHA_MIN):
        raise GeometryError(f"layer thickness below {ALPHA_MIN}")


def vertical_average(f, thickness):
    """Layer average (1/alpha) int f dz = int f ds on the sigma grid."""
    _check_thickness(thickness)
    w = _weights(f.shape[0])
    return np.tensordot(w, f, axes=(0, 0))


def favre_average(rho, f, thickness):
    """Density-weighted average int(rho f) ds / int(rho) ds."""
    _check_thickness(thickness)
    w = _weights(f.shape[0])
    return (np.tensordot(w, rho * f, axes=(0, 0))
            / np.tensordot(w, rho, axes=(0, 0)))


def project_micro_to_macro(fields):
    """Column-wise projection of micro fields onto the averaged unknowns.

    Produces the barotropic :class:`~stratflow.macro.MacroState` with the
    layer fraction, the averaged densities, the Favre velocities, and the
    averaged pressures p_bar = mean of p(rho(z)).
    """
    law1, law2 = fields.eos
    a1 = fields.thickness(1)
    a2 = fields.thickness(2)
    rho1, rho2 = fields.layer1.rho, fields.layer2.rho
    rho = np.stack([vertical_average(rho1, a1), vertical_average(rho2, a2)])
    v = np.stack([favre_average(rho1, fields.layer1.u, a1),
                  favre_average(rho2, fields.layer2.u, a2)])
    p = np.stack([vertical_average(law1.pressure(rho1), a1),
                  vertical_average(law2.pressure(rho2), a2)])
    return MacroState(fields.alpha1.copy(), rho, v, p)


@dataclass
class DiagnosticRecord:
    """Per-column closure diagnostics of a micro solution.

    velocity_spread_k : sup_z |u_k(z) - v_tilde_k|
    pressure_interface : |p_1(interface trace) - p_bar_1|
    pressure_gap : |p_bar_1 - p_bar_2|
    momentum_defect_k : |favre(u_k^2) - v_tilde_k^2|
    slip : |v_tilde_1 - v_tilde_2|
    """

    velocity_spread_1: np.ndarray
    velocity_spread_2: np.ndarray
    pressure_interface: np.ndarray
    pressure_gap: np.ndarray
    momentum_defect_1: np.ndarray
    momentum_defect_2: np.ndarray
    slip: np.ndarray

    FIELDS = ("velocity_spread_1", "velocity_spread_2", "pressure_interface",
              "pressure_gap", "momentum_defect_1", "momentum_defect_2", "slip")

    def sup(self):
        """Supremum over columns of each diagnostic."""
        return {name: float(np.max(getattr(self, name))) for name in self.FIELDS}


def estimate_diagnostics(fields):
    """Closure-estimate diagnostics of a micro state, per column."""
    law1, law2 = fields.eos
    a1 = fields.thickness(1)
    a2 = fields.thickness(2)
    rho1, rho2 = fields.layer1.rho, fields.layer2.rho
    u1, u2 = fields.layer1.u, fields.layer2.u
    v1 = favre_average(rho1, u1, a1)
    v2 = favre_average(rho2, u2, a2)
    p1_bar = vertical_average(law1.pressure(rho1), a1)
    p2_bar = vertical_average(law2.pressure(rho2), a2)
    p1_trace = law1.pressure(rho1[-1])
    return DiagnosticRecord(
        velocity_spread_1=np.max(np.abs(u1 - v1[None, :]), axis=0),
        velocity_spread_2=np.max(np.abs(u2 - v2[None, :]), axis=0),
        pressure_interface=np.abs(p1_trace - p1_bar),
        pressure_gap=np.abs(p1_bar - p2_bar),
        momentum_defect_1=np.abs(favre_average(rho1, u1**2, a1) - v1**2),
        momentum_defect_2=np.abs(favre_average(rho2, u2**2, a2) - v2**2),
        slip=np.abs(v1 - v2),
    )
