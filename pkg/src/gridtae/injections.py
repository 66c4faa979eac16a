"""AC bus-injection equations and their analytic partial derivatives.

All functions accept batched voltage arrays: ``V`` and ``theta`` may have
shape (N,) or (T, N); results broadcast accordingly.  The injection model is
the polar-form power flow

    P_i = V_i * sum_j V_j * (G_ij cos th_ij + B_ij sin th_ij)
    Q_i = V_i * sum_j V_j * (G_ij sin th_ij - B_ij cos th_ij)

with th_ij = theta_i - theta_j and G, B the shunt-free admittance matrices.
"""
from __future__ import annotations

import numpy as np

__all__ = ["bus_injections", "injection_jacobian"]


def _kernels(G, B, theta):
    th_ij = theta[..., :, None] - theta[..., None, :]
    cos, sin = np.cos(th_ij), np.sin(th_ij)
    # a_ij = G cos + B sin (drives P);  c_ij = G sin - B cos (drives Q)
    return G * cos + B * sin, G * sin - B * cos


def bus_injections(G, B, V, theta):
    """Net injections (P, Q), each shaped like V."""
    a, c = _kernels(G, B, theta)
    P = V * np.einsum("...ij,...j->...i", a, V)
    Q = V * np.einsum("...ij,...j->...i", c, V)
    return P, Q


def injection_jacobian(G, B, V, theta):
    """Partial derivatives of (P, Q) w.r.t. (theta, V).

    Returns
    -------
    dP_dth, dP_dV, dQ_dth, dQ_dV : ndarray, shape (..., N, N)
        Entry [i, j] is the derivative of the bus-i injection w.r.t. the
        bus-j variable.
    """
    a, c = _kernels(G, B, theta)
    P = V * np.einsum("...ij,...j->...i", a, V)
    Q = V * np.einsum("...ij,...j->...i", c, V)

    Vi = V[..., :, None]
    Vj = V[..., None, :]
    dP_dth = Vi * Vj * c
    dP_dV = Vi * a
    dQ_dth = -Vi * Vj * a
    dQ_dV = Vi * c

    n = G.shape[-1]
    idx = np.arange(n)
    Gd = np.diagonal(G, axis1=-2, axis2=-1)
    Bd = np.diagonal(B, axis1=-2, axis2=-1)
    dP_dth[..., idx, idx] = -Q - Bd * V**2
    dP_dV[..., idx, idx] = P / V + Gd * V
    dQ_dth[..., idx, idx] = P - Gd * V**2
    dQ_dV[..., idx, idx] = Q / V - Bd * V
    return dP_dth, dP_dV, dQ_dth, dQ_dV
