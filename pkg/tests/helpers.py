"""Shared fixtures-free helpers: random polynomial fields with exact derivatives."""

import numpy as np
from numpy.polynomial import polynomial as P


class PolyField:
    """Vector field with both components random polynomials of total degree <= ``degree``."""

    def __init__(self, degree: int, rng: np.random.Generator, center=(0.5, 0.5)):
        self.center = np.asarray(center, dtype=float)
        self.coef = np.zeros((2, degree + 1, degree + 1))
        for i in range(degree + 1):
            for j in range(degree + 1 - i):
                self.coef[:, i, j] = rng.standard_normal(2)

    def _ev(self, c, x):
        z = np.atleast_2d(x) - self.center
        return P.polyval2d(z[:, 0], z[:, 1], c)

    def __call__(self, x):
        return np.column_stack([self._ev(self.coef[0], x), self._ev(self.coef[1], x)])

    def gradient(self, x):
        g = np.empty((len(np.atleast_2d(x)), 2, 2))
        for i in range(2):
            g[:, i, 0] = self._ev(P.polyder(self.coef[i], axis=0), x)
            g[:, i, 1] = self._ev(P.polyder(self.coef[i], axis=1), x)
        return g

    def mandel_symgrad(self, x):
        g = self.gradient(x)
        return np.column_stack([g[:, 0, 0], g[:, 1, 1], np.sqrt(2.0) * 0.5 * (g[:, 0, 1] + g[:, 1, 0])])

    def divergence(self, x):
        g = self.gradient(x)
        return g[:, 0, 0] + g[:, 1, 1]
