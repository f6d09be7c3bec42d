"""Spherical-spline interpolation of scalp potentials (Perrin-style).

The spline kernel is g(cos angle) = (1/4pi) * sum_{n>=1} (2n+1) /
(n(n+1))^m * P_n(cos angle), truncated after a fixed number of Legendre
terms.  Fitting solves the bordered linear system

    [0   1^T] [c0]   [0]
    [1  G+hI] [c ] = [v]

on the known electrodes (h is a small ridge for conditioning); the field at
any target point t is then c0 + sum_i c_i g(cos angle(t, e_i)).  One
factorization serves all time points because the system depends only on
geometry.
"""

import numpy as np
from numpy.polynomial.legendre import legval

from .errors import NumericalError


def spline_g(cosang, m=4, n_terms=50):
    """Evaluate the spline kernel at the given cosines of angular distance."""
    n = np.arange(1, n_terms + 1, dtype=np.float64)
    coef = np.concatenate([[0.0], (2 * n + 1) / (n * n + n) ** m])
    return legval(np.clip(cosang, -1.0, 1.0), coef) / (4 * np.pi)


class SphericalSpline:
    """Spline system factored on a fixed set of source positions."""

    def __init__(self, positions, m=4, n_terms=50, ridge=1e-5):
        self.positions = np.asarray(positions, dtype=np.float64)
        self.m = m
        self.n_terms = n_terms
        p = self.positions.shape[0]
        g = spline_g(self.positions @ self.positions.T, m, n_terms)
        a = np.zeros((p + 1, p + 1))
        a[0, 1:] = 1.0
        a[1:, 0] = 1.0
        a[1:, 1:] = g + ridge * np.eye(p)
        cond = np.linalg.cond(a)
        if not np.isfinite(cond) or cond > 1.0 / np.finfo(np.float64).eps:
            raise NumericalError(
                f"spline system is singular or ill-conditioned (cond={cond:.3e}); "
                "increase the ridge or reduce the Legendre order"
            )
        self._system = a

    def fit(self, values):
        """Solve for spline coefficients; values is (p,) or (p, t)."""
        v = np.atleast_2d(np.asarray(values, dtype=np.float64).T).T
        if v.shape[0] != self.positions.shape[0]:
            v = np.asarray(values, dtype=np.float64).reshape(self.positions.shape[0], -1)
        rhs = np.vstack([np.zeros((1, v.shape[1])), v])
        coef = np.linalg.solve(self._system, rhs)
        return coef  # (p+1, t): row 0 is c0

    def evaluate(self, coef, targets):
        """Field at target positions; returns (n_targets,) or (n_targets, t)."""
        targets = np.asarray(targets, dtype=np.float64)
        g = spline_g(targets @ self.positions.T, self.m, self.n_terms)
        out = coef[0] + g @ coef[1:]
        return out[:, 0] if out.shape[1] == 1 else out


def interpolate_at(source_pos, source_values, target_pos, m=4, n_terms=50, ridge=1e-5):
    """One-shot spherical-spline interpolation from sources to targets."""
    spline = SphericalSpline(source_pos, m=m, n_terms=n_terms, ridge=ridge)
    return spline.evaluate(spline.fit(source_values), target_pos)
