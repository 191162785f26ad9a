"""Symmetric quadrature rules on the reference triangle.

Points are given in barycentric coordinates, weights sum to one (multiply
by the triangle area).
"""

import numpy as np


def _perm3(a, b):
    return [(b, a, a), (a, b, a), (a, a, b)]


# 3-point rule, exact for degree 2
BARY_DEG2 = np.array(_perm3(1.0 / 6.0, 2.0 / 3.0))
WEIGHTS_DEG2 = np.full(3, 1.0 / 3.0)

# 6-point Dunavant rule, exact for degree 4
_A1 = 0.445948490915964886
_A2 = 0.091576213509770743
_B1, _B2 = 1.0 - 2.0 * _A1, 1.0 - 2.0 * _A2
BARY_DEG4 = np.array(_perm3(_A1, _B1) + _perm3(_A2, _B2))
_W1 = 0.223381589678011466
WEIGHTS_DEG4 = np.array([_W1] * 3 + [1.0 / 3.0 - _W1] * 3)

RULES = {2: (BARY_DEG2, WEIGHTS_DEG2), 4: (BARY_DEG4, WEIGHTS_DEG4)}

# 1D Gauss-Legendre on [0, 1] for edge integrals
_GL_X, _GL_W = np.polynomial.legendre.leggauss(3)
EDGE_POINTS = 0.5 * (_GL_X + 1.0)
EDGE_WEIGHTS = 0.5 * _GL_W


def triangle_rule(degree=4):
    """Return (barycentric points, weights) of the rule exact to `degree`."""
    for deg in sorted(RULES):
        if deg >= degree:
            return RULES[deg]
    raise ValueError(f"no triangle rule of degree {degree}")
