"""Compiled O(N*M) kernel sums ``out[a] = sum_b w[b] * eta(P[a] - X[b])``.

One loop is compiled per kernel family so the profile inlines into the inner
loop; d = 1 takes a flat fast path.  The numpy implementation in
:mod:`osgoodflow.measures` is the reference; tests compare the two.
"""

import math

import numpy as np
from numba import njit

ZERO, HAT, GAUSSIAN, BUMP, ODD_GAUSS, LOGLIP, CUSP = range(7)


@njit(inline="always")
def _hat(p0, p1, r2, zax):
    return p0 * max(0.0, 1.0 - math.sqrt(r2) / p1)


@njit(inline="always")
def _gaussian(p0, p1, r2, zax):
    return p0 * math.exp(-0.5 * r2 / (p1 * p1))


@njit(inline="always")
def _bump(p0, p1, r2, zax):
    q = r2 / (p1 * p1)
    if q >= 1.0:
        return 0.0
    b = 1.0 - q
    return p0 * b * b * b * b


@njit(inline="always")
def _odd_gauss(p0, p1, r2, zax):
    return p0 * (zax / p1) * math.exp(-0.5 * r2 / (p1 * p1))


@njit(inline="always")
def _loglip(p0, p1, r2, zax):
    if r2 >= 1.0:
        return 0.0
    if r2 == 0.0:
        return p0
    r = math.sqrt(r2)
    return p0 * (1.0 - r * (1.0 - math.log(r)))


@njit(inline="always")
def _cusp(p0, p1, r2, zax):
    return p0 * max(0.0, 1.0 - math.sqrt(math.sqrt(r2) / p1))


def _make_loop(profile):
    @njit(nogil=True)
    def loop(P, X, w, p0, p1, axis):
        n, d = P.shape
        m = X.shape[0]
        out = np.zeros(n)
        if d == 1:
            x = X[:, 0]
            for a in range(n):
                pa = P[a, 0]
                acc = 0.0
                for b in range(m):
                    z = pa - x[b]
                    acc += w[b] * profile(p0, p1, z * z, z)
                out[a] = acc
            return out
        for a in range(n):
            acc = 0.0
            for b in range(m):
                r2 = 0.0
                for c in range(d):
                    z = P[a, c] - X[b, c]
                    r2 += z * z
                acc += w[b] * profile(p0, p1, r2, P[a, axis] - X[b, axis])
            out[a] = acc
        return out

    return loop


_PROFILES = {HAT: _hat, GAUSSIAN: _gaussian, BUMP: _bump, ODD_GAUSS: _odd_gauss, LOGLIP: _loglip, CUSP: _cusp}
_LOOPS = {}


def pair_sum(P, X, w, code, params):
    if code == ZERO or X.shape[0] == 0:
        return np.zeros(P.shape[0])
    loop = _LOOPS.get(code)
    if loop is None:
        loop = _LOOPS[code] = _make_loop(_PROFILES[code])
    return loop(P, X, w, float(params[0]), float(params[1]), int(params[2]))
