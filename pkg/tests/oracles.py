"""Independent reference implementations used as test oracles.

Written for clarity over speed, sharing no code with the package.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

N4 = ndimage.generate_binary_structure(2, 1)
N8 = ndimage.generate_binary_structure(2, 2)


def hamiltonian_bruteforce(points, theta_H, theta_V, theta_k, delta):
    """Cluster-expansion energy by explicit loops over points and orders."""
    pts = [tuple(map(float, p)) for p in points]
    n = len(pts)
    xbar = sum(p[0] for p in pts) / n
    energy = theta_H * sum((p[0] - xbar) ** 2 for p in pts)
    energy += theta_V * sum(p[1] ** 2 for p in pts)
    for k, t in enumerate(theta_k, start=1):
        total = 0.0
        for i, p in enumerate(pts):
            others = sorted((math.dist(p, q), j) for j, q in enumerate(pts) if j != i)
            if len(others) < k:
                continue
            chosen = others[:k]
            if all(d <= delta for d, _ in chosen):
                total += math.fsum(d for d, _ in chosen)
        energy += t * total
    return energy


def _rank_order(values: np.ndarray, descending: bool) -> np.ndarray:
    flat = values.ravel()
    keys = -flat if descending else flat
    return np.argsort(keys, kind="stable")


def superlevel_h0_oracle(values: np.ndarray):
    """H0 pairs by labelling every superlevel set of the cell-by-cell filtration.

    A component is named by its oldest cell (earliest in the filtration
    order).  A name that disappears between consecutive steps died at the
    cell entering at that step.  Returns (finite pairs, essential pair) in
    raw field values (birth >= death).
    """
    flat = values.ravel()
    order = _rank_order(values, descending=True)
    rank = np.empty(flat.size, dtype=int)
    rank[order] = np.arange(flat.size)
    rank = rank.reshape(values.shape)
    names_prev: set[int] = set()
    pairs = []
    for t in range(flat.size):
        mask = rank <= t
        lab, n = ndimage.label(mask, structure=N4)
        names = {int(rank[lab == c].min()) for c in range(1, n + 1)}
        for gone in names_prev - names:
            pairs.append((flat[order[gone]], flat[order[t]]))
        names_prev = names
    (survivor,) = names_prev
    return pairs, (flat[order[survivor]], flat.min())


def superlevel_h1_oracle(values: np.ndarray):
    """H1 pairs from bounded 8-connected components of each complement.

    The complement of the step-t superlevel set is a sublevel set; a bounded
    component is named by its last cell to be filled (its minimum value).
    A hole is born when its name first appears as a bounded component and
    dies when that cell is filled.  Returns pairs (birth, death) in raw
    field values (birth >= death).
    """
    h, w = values.shape
    flat = values.ravel()
    order = _rank_order(values, descending=True)
    rank = np.empty(flat.size, dtype=int)
    rank[order] = np.arange(flat.size)
    rank = rank.reshape(values.shape)
    born: dict[int, int] = {}
    for t in range(flat.size):
        comp = rank > t
        lab, n = ndimage.label(comp, structure=N8)
        for c in range(1, n + 1):
            cells = lab == c
            rows, cols = np.nonzero(cells)
            if rows.min() == 0 or cols.min() == 0 or rows.max() == h - 1 or cols.max() == w - 1:
                continue
            name = int(rank[cells].max())
            born.setdefault(name, t)
    return [(flat[order[t]], flat[order[name]]) for name, t in born.items()]


def betti_oracle(values: np.ndarray, u: float) -> tuple[int, int]:
    """(b0, b1) of {f >= u}: 4-components and bounded 8-components of the complement."""
    mask = values >= u
    _, b0 = ndimage.label(mask, structure=N4)
    lab, n = ndimage.label(~mask, structure=N8)
    h, w = values.shape
    b1 = 0
    for c in range(1, n + 1):
        rows, cols = np.nonzero(lab == c)
        if not (rows.min() == 0 or cols.min() == 0 or rows.max() == h - 1 or cols.max() == w - 1):
            b1 += 1
    return b0, b1


def euler_characteristic(values: np.ndarray, u: float) -> int:
    """Euler characteristic of {f >= u} seen as a 4-connected pixel set.

    Pixels are vertices, horizontally/vertically adjacent pairs are edges,
    and 2x2 blocks are squares; this complex has the 4-connectivity of the
    set and its holes are the bounded 8-components of the complement.
    """
    m = (values >= u).astype(int)
    v = m.sum()
    e = (m[:, 1:] & m[:, :-1]).sum() + (m[1:, :] & m[:-1, :]).sum()
    f = (m[1:, 1:] & m[1:, :-1] & m[:-1, 1:] & m[:-1, :-1]).sum()
    return int(v - e + f)


def reference_sweeps(pts, theta, delta, normals, uniforms, orders, frozen, xbar_frozen):
    """Metropolis-Hastings sweeps in plain Python, consuming the given random numbers.

    Mirrors the documented algorithm (folded Gaussian proposal from the
    current empirical moments, neighbourhoods fixed at the current point,
    reverse proposal from the moments after the move) without sharing code
    with the compiled kernel.
    """
    pts = np.array(pts, dtype=float)
    n = pts.shape[0]
    th_H, th_V, th_k = theta[0], theta[1], list(theta[2:])
    accepted = 0

    def moments(p):
        c = np.cov(p.T)
        tr = c[0, 0] + c[1, 1]
        if np.linalg.det(c) <= 1e-12 * tr * tr:
            c = c + 1e-9 * tr * np.eye(2)
        return p.mean(axis=0), c

    def folded_logpdf(z, mean, cov):
        if z[1] < 0:
            return -np.inf
        inv = np.linalg.inv(cov)
        norm = -math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(cov))
        tot = 0.0
        for zz in (z, np.array([z[0], -z[1]])):
            d = zz - mean
            tot += math.exp(norm - 0.5 * d @ inv @ d)
        return math.log(tot)

    def energy(z, members, xbar):
        e = th_H * (z[0] - xbar) ** 2 + th_V * z[1] ** 2
        for k, t in enumerate(th_k):
            mem = members[k]
            if mem is None:
                continue
            d = [math.dist(z, m) for m in mem]
            if all(di <= delta for di in d):
                e += t * sum(d)
        return e

    for sw in range(uniforms.shape[0]):
        for step in range(n):
            i = int(orders[sw, step])
            x = pts[i].copy()
            mean, cov = moments(pts)
            chol = np.linalg.cholesky(cov)
            y = mean + chol @ normals[sw, step]
            y[1] = abs(y[1])
            others = sorted((math.dist(x, pts[j]), j) for j in range(n) if j != i)
            members = []
            for k in range(1, len(th_k) + 1):
                sel = others[:k]
                ok = len(sel) == k and all(d <= delta for d, _ in sel)
                members.append([pts[j] for _, j in sel] if ok else None)
            xbar = xbar_frozen if frozen else pts[:, 0].mean()
            after = pts.copy()
            after[i] = y
            m_after, c_after = moments(after)
            log_rho = (energy(x, members, xbar) - energy(y, members, xbar)
                       + folded_logpdf(x, m_after, c_after) - folded_logpdf(y, mean, cov))
            if uniforms[sw, step] < min(1.0, math.exp(min(log_rho, 0.0))):
                pts[i] = y
                accepted += 1
    return pts, accepted


def bh_reference(p, alpha):
    """Benjamini-Hochberg via statsmodels."""
    from statsmodels.stats.multitest import multipletests
    return multipletests(p, alpha=alpha, method="fdr_bh")[0]
