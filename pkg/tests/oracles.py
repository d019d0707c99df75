"""Closed-form reference values derived by hand, independent of the package code."""

import numpy as np


def sphere_metric(x):
    x = np.asarray(x, dtype=float)
    return 4.0 / (1.0 + x @ x) ** 2 * np.eye(x.size)


def hyperbolic_metric(x):
    x = np.asarray(x, dtype=float)
    return 4.0 / (1.0 - x @ x) ** 2 * np.eye(x.size)


def cigar_metric(t, x):
    x = np.asarray(x, dtype=float)
    return np.eye(2) / (np.exp(-2 * t) + x @ x)


def cigar_gauss_curvature(t, x):
    """K = -e^{-2 phi} Delta phi for phi = -1/2 log(a + r^2), a = e^{-2t}: K = 2a / (a + r^2)."""
    a = np.exp(-2 * t)
    return 2 * a / (a + np.dot(x, x))


def cigar_dg_dt(t, x):
    a = np.exp(-2 * t)
    return 2 * a / (a + np.dot(x, x)) ** 2 * np.eye(2)


def cigar_rho(t, r):
    return np.arcsinh(np.exp(t) * r)


def cigar_laplacian_rho(t, r):
    """e^{-2 phi} (rho'' + rho'/r) for the radial function rho(r) = arcsinh(e^t r)."""
    e = np.exp(t)
    d1 = e / np.sqrt(1 + (e * r) ** 2)
    d2 = -(e**3) * r / (1 + (e * r) ** 2) ** 1.5
    return (np.exp(-2 * t) + r**2) * (d2 + d1 / r)


def cigar_drho_dt(t, r):
    e = np.exp(t)
    return e * r / np.sqrt(1 + (e * r) ** 2)


def flat_cpr_expression(p, R, d, rho):
    """f^{p+2} * 1/2 Delta f^{-p} for f = cos(a rho) on flat R^d, from explicit radial derivatives."""
    a = 0.5 * np.pi / R
    c, s = np.cos(a * rho), np.sin(a * rho)
    g1 = p * a * s * c ** (-p - 1)
    g2 = p * a**2 * (c ** (-p) + (p + 1) * s**2 * c ** (-p - 2))
    return c ** (p + 2) * 0.5 * (g2 + (d - 1) / rho * g1)


def first_factor_rhs_p2(c, t, v_norm):
    """p = 2: (2c/2) / (1 - e^{-ct})^2 |v|^2."""
    return c / (1 - np.exp(-c * t)) ** 2 * v_norm**2


def sphere_height_mean(t, m=2):
    """E[z(X_t)] for the height z = (1-|x|^2)/(1+|x|^2) under 1/2 Delta on S^m, started at z = 1."""
    return np.exp(-0.5 * m * t)


def stereo_height(x):
    q = np.sum(np.asarray(x) ** 2, axis=-1)
    return (1 - q) / (1 + q)
