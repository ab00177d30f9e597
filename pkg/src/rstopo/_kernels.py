"""Compiled Metropolis-Hastings sweeps.  All randomness is passed in."""
import math

import numpy as np
from numba import njit

_LOG2PI = math.log(2.0 * math.pi)


@njit(cache=True, nogil=True)
def _moments(s, n):
    mx = s[0] / n
    my = s[1] / n
    cxx = (s[2] - n * mx * mx) / (n - 1)
    cxy = (s[3] - n * mx * my) / (n - 1)
    cyy = (s[4] - n * my * my) / (n - 1)
    return regularize(mx, my, cxx, cxy, cyy)


@njit(cache=True, nogil=True)
def regularize(mx, my, cxx, cxy, cyy):
    if cxx < 0.0:
        cxx = 0.0
    if cyy < 0.0:
        cyy = 0.0
    tr = cxx + cyy
    if cxx * cyy - cxy * cxy <= 1e-12 * tr * tr:
        eps = 1e-9 * tr if tr > 0.0 else 1e-300
        cxx += eps
        cyy += eps
    return mx, my, cxx, cxy, cyy


@njit(cache=True, nogil=True)
def log_folded_density(z0, z1, mx, my, cxx, cxy, cyy):
    if z1 < 0.0:
        return -np.inf
    det = cxx * cyy - cxy * cxy
    dx = z0 - mx
    a = z1 - my
    b = -z1 - my
    qa = (cyy * dx * dx - 2.0 * cxy * dx * a + cxx * a * a) / det
    qb = (cyy * dx * dx - 2.0 * cxy * dx * b + cxx * b * b) / det
    lo = min(qa, qb)
    return -_LOG2PI - 0.5 * math.log(det) - 0.5 * lo + math.log1p(math.exp(-0.5 * abs(qa - qb)))


@njit(cache=True, nogil=True)
def run_sweeps(pts, theta, K, delta, normals, uniforms, orders, frozen, xbar_frozen):
    """Apply ``len(uniforms)`` sweeps to ``pts`` in place; return accept count."""
    n = pts.shape[0]
    accepted = 0
    bestd = np.empty(K)
    besti = np.empty(K, dtype=np.int64)
    s = np.zeros(5)
    t = np.empty(5)
    for sw in range(uniforms.shape[0]):
        s[:] = 0.0
        for j in range(n):
            s[0] += pts[j, 0]
            s[1] += pts[j, 1]
            s[2] += pts[j, 0] * pts[j, 0]
            s[3] += pts[j, 0] * pts[j, 1]
            s[4] += pts[j, 1] * pts[j, 1]
        for step in range(n):
            i = orders[sw, step]
            x0 = pts[i, 0]
            x1 = pts[i, 1]
            mx, my, cxx, cxy, cyy = _moments(s, n)
            # proposal: bivariate normal via Cholesky, second coordinate folded
            l11 = math.sqrt(cxx)
            l21 = cxy / l11
            l22 = math.sqrt(max(cyy - l21 * l21, 0.0))
            g0 = normals[sw, step, 0]
            g1 = normals[sw, step, 1]
            y0 = mx + l11 * g0
            y1 = abs(my + l21 * g0 + l22 * g1)
            # K nearest other points of the current x, ties to the lower index
            found = 0
            for j in range(n):
                if j == i:
                    continue
                dx = pts[j, 0] - x0
                dy = pts[j, 1] - x1
                d = dx * dx + dy * dy
                if found < K:
                    pos = found
                    found += 1
                elif d < bestd[K - 1]:
                    pos = K - 1
                else:
                    continue
                while pos > 0 and bestd[pos - 1] > d:
                    bestd[pos] = bestd[pos - 1]
                    besti[pos] = besti[pos - 1]
                    pos -= 1
                bestd[pos] = d
                besti[pos] = j
            for k in range(found):
                bestd[k] = math.sqrt(bestd[k])
            xbar = xbar_frozen if frozen else s[0] / n
            e_old = theta[0] * (x0 - xbar) ** 2 + theta[1] * x1 * x1
            e_new = theta[0] * (y0 - xbar) ** 2 + theta[1] * y1 * y1
            cum_old = 0.0
            cum_new = 0.0
            new_ok = True
            for k in range(K):
                if k >= found or bestd[k] > delta:
                    break
                cum_old += bestd[k]
                j = besti[k]
                dn = math.sqrt((pts[j, 0] - y0) ** 2 + (pts[j, 1] - y1) ** 2)
                cum_new += dn
                if dn > delta:
                    new_ok = False
                e_old += theta[2 + k] * cum_old
                if new_ok:
                    e_new += theta[2 + k] * cum_new
            # proposal moments after replacing x by the candidate
            s0 = s[0] - x0 + y0
            s1 = s[1] - x1 + y1
            s2 = s[2] - x0 * x0 + y0 * y0
            s3 = s[3] - x0 * x1 + y0 * y1
            s4 = s[4] - x1 * x1 + y1 * y1
            t[0] = s0
            t[1] = s1
            t[2] = s2
            t[3] = s3
            t[4] = s4
            ax, ay, axx, axy, ayy = _moments(t, n)
            log_rho = (e_old - e_new
                       + log_folded_density(x0, x1, ax, ay, axx, axy, ayy)
                       - log_folded_density(y0, y1, mx, my, cxx, cxy, cyy))
            rho = 1.0 if log_rho >= 0.0 else math.exp(log_rho)
            if uniforms[sw, step] < rho:
                pts[i, 0] = y0
                pts[i, 1] = y1
                s[0] = s0
                s[1] = s1
                s[2] = s2
                s[3] = s3
                s[4] = s4
                accepted += 1
    return accepted
