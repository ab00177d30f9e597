"""Maximum pseudolikelihood fitting of the cluster Gibbs model.

Each point's conditional density is normalised over R x R+.  The Gaussian
part of that integral is analytic; what remains is a correction supported
on the delta-disc around the point's nearest neighbour, which is integrated
along rays from that neighbour with the exact breakpoints of every
cluster-activity region.  The node geometry does not depend on theta, so it
is built once per data set and reused by every optimizer step.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import optimize

from .diagram import ModelConfig, ProjectedDiagram
from .gibbs import Theta, sorted_neighbor_distances

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    """Raised when the optimizer fails; ``trace`` holds the diagnostics."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or {}


@dataclass(frozen=True)
class QuadratureSpec:
    """How local normalizers are integrated.

    ``rule="polar"``: analytic Gaussian plus ray integration of the cluster
    correction, Gauss-Legendre in angle (arcs split at every critical
    direction, at least ``n_arc`` of them) and in radius (``n_gauss``
    nodes per smooth piece).  ``rule="tensor"``: Gauss-Legendre product rule with
    ``nodes`` per axis on the box ``xbar +- m/sqrt(theta_H)`` by
    ``[0, m/sqrt(theta_V)]``, with ``m = box_halfwidth``.
    """

    rule: str = "polar"
    n_arc: int = 8
    n_gauss: int = 6
    nodes: int = 64
    box_halfwidth: float = 8.0


@dataclass(frozen=True)
class OptimizerSettings:
    n_starts: int = 5
    jitter_seed: int = 0
    maxiter: int = 10_000
    gtol: float = 1e-7
    ftol: float = 1e-8
    xtol: float = 1e-6
    prune: Optional[str] = None  # "aic" or "bic"


def gaussian_normalizer(theta_H: float, theta_V: float) -> float:
    """Integral of exp(-theta_H u^2 - theta_V v^2) over R x R+."""
    return 0.5 * np.pi / np.sqrt(theta_H * theta_V)


# --- node geometry ---------------------------------------------------------------

def _neighbor_members(pts: np.ndarray, K: int, delta: float):
    d, idx = sorted_neighbor_distances(pts, K)
    # term k is live when the k-th nearest other point is within delta
    live = d <= delta
    return d, idx, live


@lru_cache(maxsize=None)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def _circle_circle(c0, c1, r):
    """Intersection points of two circles of equal radius ``r``."""
    d = np.linalg.norm(c1 - c0)
    if d == 0 or d > 2 * r:
        return []
    mid = 0.5 * (c0 + c1)
    h = np.sqrt(max(r * r - 0.25 * d * d, 0.0))
    perp = np.array([-(c1 - c0)[1], (c1 - c0)[0]]) / d
    return [mid + h * perp, mid - h * perp]


def _circle_axis(c, r):
    """Intersection points of a circle with the line z2 = 0."""
    if abs(c[1]) > r:
        return []
    h = np.sqrt(r * r - c[1] ** 2)
    return [np.array([c[0] - h, 0.0]), np.array([c[0] + h, 0.0])]


def _critical_angles(center: np.ndarray, members: np.ndarray, delta: float) -> np.ndarray:
    """Ray directions at which the set of radial breakpoints changes structure.

    Between consecutive critical angles every breakpoint is a smooth function
    of the angle, so Gauss-Legendre in angle converges quickly.
    """
    pts = _circle_axis(center, delta)
    angles = []
    for i, m in enumerate(members):
        p = m - center
        dist = np.hypot(*p)
        if dist >= delta and dist > 0:
            a, b = np.arctan2(p[1], p[0]), np.arcsin(min(delta / dist, 1.0))
            angles += [a - b, a + b]
        pts += _circle_circle(center, m, delta) + _circle_axis(m, delta)
        for m2 in members[i + 1:]:
            pts += _circle_circle(m, m2, delta)
    for q in pts:
        v = q - center
        if np.hypot(*v) > 1e-14:
            angles.append(np.arctan2(v[1], v[0]))
    return np.mod(np.asarray(angles, dtype=float), 2 * np.pi)


def _ray_nodes(center: np.ndarray, members: np.ndarray, delta: float, n_arc: int,
               n_gauss: int):
    """Nodes and weights covering the delta-disc around ``center`` inside z2 >= 0.

    ``members`` are the other fixed neighbours (their balls create radial
    breakpoints).  Angles are split at every critical direction and into at
    least ``n_arc`` equal arcs; each arc and each radial piece gets
    ``n_gauss`` Gauss-Legendre nodes.  Returns (z, w) with z of shape (M, 2).
    """
    cuts = np.r_[2 * np.pi * np.arange(n_arc) / n_arc, _critical_angles(center, members, delta)]
    cuts = np.unique(cuts)
    cuts = np.r_[cuts, cuts[0] + 2 * np.pi]
    cuts = cuts[np.r_[True, np.diff(cuts) > 1e-13]]
    gx, gw = _leggauss(n_gauss)
    a_lo, a_hi = cuts[:-1], cuts[1:]
    a_half = 0.5 * (a_hi - a_lo)
    phi = ((a_lo + a_half)[:, None] + a_half[:, None] * gx).ravel()
    w_phi = (a_half[:, None] * gw).ravel()
    n_ray = phi.size
    u = np.column_stack([np.cos(phi), np.sin(phi)])
    with np.errstate(divide="ignore"):
        rmax = np.where(u[:, 1] < 0, -center[1] / u[:, 1], np.inf)
    rmax = np.minimum(rmax, delta)
    ends = [np.zeros(n_ray), rmax]
    for y in members:
        p = center - y
        pu = u @ p
        disc = pu ** 2 - p @ p + delta ** 2
        root = np.sqrt(np.maximum(disc, 0.0))
        ends += [-pu - root, -pu + root]
    e = np.clip(np.column_stack(ends), 0.0, rmax[:, None])
    e.sort(axis=1)
    lo, hi = e[:, :-1], e[:, 1:]
    half = 0.5 * (hi - lo)
    r = (lo + half)[..., None] + half[..., None] * gx
    wr = half[..., None] * gw * r * w_phi[:, None, None]
    z = center + r[..., None] * u[:, None, None, :]
    z = z.reshape(-1, 2)
    w = wr.reshape(-1)
    keep = w > 0
    return z[keep], w[keep]


def _active_lengths(z: np.ndarray, members_by_k, delta: float) -> np.ndarray:
    """(M, K) cluster lengths at nodes against fixed member sets."""
    out = np.zeros((z.shape[0], len(members_by_k)))
    for k, mem in enumerate(members_by_k):
        if mem is None:
            continue
        dist = np.hypot(z[:, None, 0] - mem[None, :, 0], z[:, None, 1] - mem[None, :, 1])
        ok = np.all(dist <= delta, axis=1)
        out[:, k] = np.where(ok, dist.sum(axis=1), 0.0)
    return out


def _members_by_k(pts, d_row, idx_row, live_row):
    return [pts[idx_row[:k + 1]] if live_row[k] else None for k in range(len(live_row))]


class PseudoLikelihood:
    """Log-pseudolikelihood of a fixed configuration, with analytic gradient.

    ``xbar1`` defaults to the data mean of the first coordinate.
    """

    def __init__(self, ppd, config: ModelConfig, quad: QuadratureSpec | None = None):
        quad = quad or QuadratureSpec()
        if quad.rule != "polar":
            raise ValueError("PseudoLikelihood precomputes geometry only for the polar rule")
        pts = ppd.points if isinstance(ppd, ProjectedDiagram) else np.asarray(ppd, float)
        n = pts.shape[0]
        if n < 2:
            raise ValueError("pseudolikelihood needs at least two points")
        self.pts = pts
        self.config = config
        self.K = config.K
        self.xbar1 = float(pts[:, 0].mean())
        d, idx, live = _neighbor_members(pts, config.K, config.delta)
        csum = np.cumsum(np.where(np.isfinite(d), d, 0.0), axis=1)
        self.data_L = np.where(live, csum, 0.0)
        self.data_u2 = (pts[:, 0] - self.xbar1) ** 2
        self.data_v2 = pts[:, 1] ** 2
        zs, ws, Ls, segs = [], [], [], []
        for i in range(n):
            if not live[i, 0]:
                continue
            members = _members_by_k(pts, d[i], idx[i], live[i])
            top = max(k for k in range(self.K) if live[i, k])
            center = pts[idx[i, 0]]
            z, w = _ray_nodes(center, pts[idx[i, 1:top + 1]], config.delta, quad.n_arc,
                              quad.n_gauss)
            zs.append(z)
            ws.append(w)
            Ls.append(_active_lengths(z, members, config.delta))
            segs.append(np.full(w.size, i))
        if zs:
            z = np.vstack(zs)
            self.node_u2 = (z[:, 0] - self.xbar1) ** 2
            self.node_v2 = z[:, 1] ** 2
            self.node_w = np.concatenate(ws)
            self.node_L = np.vstack(Ls)
            self.node_seg = np.concatenate(segs)
        else:
            self.node_u2 = self.node_v2 = self.node_w = np.zeros(0)
            self.node_L = np.zeros((0, self.K))
            self.node_seg = np.zeros(0, dtype=int)
        self.n = n
        # a cluster order no point ever realises leaves the likelihood flat in theta_k
        self.identified = live.any(axis=0)

    def _parts(self, th: np.ndarray):
        tH, tV, tk = th[0], th[1], th[2:]
        G = gaussian_normalizer(tH, tV)
        g = np.exp(-tH * self.node_u2 - tV * self.node_v2) * self.node_w
        e = np.exp(-self.node_L @ tk)
        corr = np.bincount(self.node_seg, weights=g * (e - 1.0), minlength=self.n)
        return G, g, e, corr

    def log_normalizers(self, theta) -> np.ndarray:
        th = _as_array(theta)
        G, _, _, corr = self._parts(th)
        return np.log(G + corr)

    def energies(self, theta) -> np.ndarray:
        th = _as_array(theta)
        return th[0] * self.data_u2 + th[1] * self.data_v2 + self.data_L @ th[2:]

    def value(self, theta) -> float:
        th = _as_array(theta)
        return float(-(self.energies(th).sum()) - self.log_normalizers(th).sum())

    def value_and_grad(self, theta) -> tuple[float, np.ndarray]:
        """Value and gradient with respect to (theta_H, theta_V, theta_1..theta_K)."""
        th = _as_array(theta)
        G, g, e, corr = self._parts(th)
        I = G + corr
        val = float(-(self.energies(th).sum()) - np.log(I).sum())
        seg, n = self.node_seg, self.n
        dI = np.empty((th.size, n))
        dI[0] = -G / (2 * th[0]) - np.bincount(seg, weights=self.node_u2 * g * (e - 1), minlength=n)
        dI[1] = -G / (2 * th[1]) - np.bincount(seg, weights=self.node_v2 * g * (e - 1), minlength=n)
        for k in range(self.K):
            dI[2 + k] = -np.bincount(seg, weights=self.node_L[:, k] * g * e, minlength=n)
        grad = np.empty(th.size)
        grad[0] = -self.data_u2.sum()
        grad[1] = -self.data_v2.sum()
        grad[2:] = -self.data_L.sum(axis=0)
        grad -= (dI / I).sum(axis=1)
        return val, grad


def _as_array(theta) -> np.ndarray:
    if isinstance(theta, Theta):
        theta.require_normalizable()
        return theta.as_array()
    th = np.asarray(theta, dtype=float)
    if not (th[0] > 0 and th[1] > 0):
        raise ValueError("theta_H and theta_V must be positive for a normalizable density")
    return th


# --- public single-point and whole-diagram functions ------------------------------

def _tensor_log_normalizer(nbhd_members, xbar1, theta: Theta, config: ModelConfig,
                           quad: QuadratureSpec) -> float:
    gx, gw = _leggauss(quad.nodes)
    m = quad.box_halfwidth
    a = m / np.sqrt(theta.theta_H)
    b = m / np.sqrt(theta.theta_V)
    z1 = xbar1 + a * gx
    z2 = 0.5 * b * (gx + 1)
    Z1, Z2 = np.meshgrid(z1, z2, indexing="ij")
    W = np.outer(a * gw, 0.5 * b * gw)
    z = np.column_stack([Z1.ravel(), Z2.ravel()])
    L = _active_lengths(z, nbhd_members, config.delta)
    E = theta.theta_H * (z[:, 0] - xbar1) ** 2 + theta.theta_V * z[:, 1] ** 2 + L @ np.array(theta.theta_k)
    return float(np.log(np.sum(W.ravel() * np.exp(-E))))


def local_log_normalizer(x, theta: Theta, config: ModelConfig, ppd,
                         quad: QuadratureSpec | None = None, exclude: int | None = None) -> float:
    """Log of the integral over R x R+ of exp(-conditional energy), neighbourhoods fixed at ``x``.

    ``exclude`` is the index of ``x`` when it belongs to ``ppd``.
    """
    quad = quad or QuadratureSpec()
    theta.require_normalizable()
    if theta.K != config.K:
        raise ValueError("theta and config disagree on K")
    pts = ppd.points if isinstance(ppd, ProjectedDiagram) else np.asarray(ppd, float)
    x = np.asarray(x, dtype=float)
    xbar1 = float(pts[:, 0].mean())
    others = np.delete(pts, exclude, axis=0) if exclude is not None else pts
    dist = np.hypot(others[:, 0] - x[0], others[:, 1] - x[1])
    order = np.argsort(dist, kind="stable")
    members = []
    for k in range(1, config.K + 1):
        ok = order.size >= k and dist[order[k - 1]] <= config.delta
        members.append(others[order[:k]] if ok else None)
    if quad.rule == "tensor":
        return _tensor_log_normalizer(members, xbar1, theta, config, quad)
    if quad.rule != "polar":
        raise ValueError(f"unknown quadrature rule {quad.rule!r}")
    G = gaussian_normalizer(theta.theta_H, theta.theta_V)
    if members[0] is None:
        return float(np.log(G))
    top = max(k for k in range(config.K) if members[k] is not None)
    z, w = _ray_nodes(members[top][0], members[top][1:], config.delta, quad.n_arc, quad.n_gauss)
    L = _active_lengths(z, members, config.delta)
    g = np.exp(-theta.theta_H * (z[:, 0] - xbar1) ** 2 - theta.theta_V * z[:, 1] ** 2)
    corr = np.sum(w * g * (np.exp(-L @ np.array(theta.theta_k)) - 1.0))
    return float(np.log(G + corr))


def log_pseudolikelihood(theta: Theta, ppd, config: ModelConfig,
                         quad: QuadratureSpec | None = None) -> float:
    pts = ppd.points if isinstance(ppd, ProjectedDiagram) else np.asarray(ppd, float)
    if pts.shape[0] < 2:
        raise ValueError("pseudolikelihood needs at least two points")
    if theta.K != config.K:
        raise ValueError("theta and config disagree on K")
    return PseudoLikelihood(pts, config, quad).value(theta)


# --- fitting ------------------------------------------------------------------------

@dataclass
class FittedModel:
    theta_hat: Theta
    config: ModelConfig
    log_pl: float
    trace: dict
    ppd_snapshot: ProjectedDiagram

    @property
    def converged(self) -> bool:
        return bool(self.trace.get("converged", False))

    def fingerprint(self) -> str:
        return data_fingerprint(self.ppd_snapshot)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta_hat.to_dict(),
            "config": self.config.to_dict(),
            "log_pl": self.log_pl,
            "trace": self.trace,
            "data_fingerprint": self.fingerprint(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, ppd: ProjectedDiagram) -> "FittedModel":
        fm = cls(Theta.from_dict(d["theta"]), ModelConfig.from_dict(d["config"]),
                 float(d["log_pl"]), dict(d.get("trace", {})), ppd)
        want = d.get("data_fingerprint")
        if want and want != fm.fingerprint():
            raise ValueError("model was fitted to a different diagram (fingerprint mismatch)")
        return fm


def data_fingerprint(ppd: ProjectedDiagram) -> str:
    return hashlib.sha256(np.ascontiguousarray(ppd.points, dtype="<f8").tobytes()).hexdigest()


def moment_start(ppd) -> Theta:
    """Closed-form maximizer of the pseudolikelihood with every theta_k = 0."""
    pts = ppd.points if isinstance(ppd, ProjectedDiagram) else np.asarray(ppd, float)
    n = pts.shape[0]
    s_h = ((pts[:, 0] - pts[:, 0].mean()) ** 2).sum()
    s_v = (pts[:, 1] ** 2).sum()
    if s_h <= 0 or s_v <= 0:
        raise ValueError("degenerate diagram: zero horizontal or vertical spread")
    return Theta(n / (2 * s_h), n / (2 * s_v), ())


def _to_free(th: np.ndarray) -> np.ndarray:
    u = th.copy()
    u[:2] = np.log(th[:2])
    return u


def _from_free(u: np.ndarray) -> np.ndarray:
    th = u.copy()
    th[:2] = np.exp(u[:2])
    return th


def _optimize(pl: PseudoLikelihood, starts: list[np.ndarray], free_mask: np.ndarray,
              settings: OptimizerSettings):
    n = pl.n

    def full(uf):
        u = np.zeros(free_mask.size)
        u[free_mask] = uf
        return u

    def objective(uf):
        u = full(uf)
        th = _from_free(u)
        try:
            val, grad = pl.value_and_grad(th)
        except (FloatingPointError, ValueError):
            return np.inf, np.zeros(uf.size)
        if not np.isfinite(val):
            return np.inf, np.zeros(uf.size)
        grad = grad.copy()
        grad[:2] *= th[:2]  # chain rule through the log parameterisation
        return -val / n, -grad[free_mask] / n

    runs = []
    for s in starts:
        u0 = _to_free(s)[free_mask]
        with np.errstate(over="ignore", invalid="ignore"):
            res = optimize.minimize(objective, u0, jac=True, method="BFGS",
                                    options={"maxiter": settings.maxiter, "gtol": settings.gtol})
            if not np.isfinite(res.fun) or not (res.success or np.max(np.abs(res.jac)) < 1e-5):
                nm = optimize.minimize(lambda v: objective(v)[0], res.x if np.isfinite(res.fun) else u0,
                                       method="Nelder-Mead",
                                       options={"maxiter": settings.maxiter, "xatol": settings.xtol,
                                                "fatol": settings.ftol, "adaptive": True})
                res = optimize.minimize(objective, nm.x, jac=True, method="BFGS",
                                        options={"maxiter": settings.maxiter, "gtol": settings.gtol})
        runs.append(res)
    best = min(runs, key=lambda r: r.fun if np.isfinite(r.fun) else np.inf)
    return best, runs, full


def fit(ppd, config: ModelConfig, quad: QuadratureSpec | None = None,
        settings: OptimizerSettings | None = None, start: Theta | None = None) -> FittedModel:
    """Maximize the log-pseudolikelihood over theta (theta_H, theta_V kept positive).

    ``start`` replaces the moment-estimator start (jittered starts are then
    drawn around it).
    """
    settings = settings or OptimizerSettings()
    quad = quad or QuadratureSpec()
    ppd = ppd if isinstance(ppd, ProjectedDiagram) else ProjectedDiagram(ppd)
    if ppd.N < config.K + 2:
        raise ValueError(f"need at least K+2={config.K + 2} points, got {ppd.N}")
    base = moment_start(ppd)
    th0 = np.r_[base.theta_H, base.theta_V, np.zeros(config.K)]
    if start is not None:
        th0 = start.as_array()
    pl = PseudoLikelihood(ppd, config, quad)
    free = np.r_[True, True, pl.identified]
    rng = np.random.default_rng(settings.jitter_seed)
    starts = [th0]
    for _ in range(settings.n_starts - 1):
        u = _to_free(th0)
        u[:2] += rng.normal(scale=0.5, size=2)
        u[2:] += rng.normal(scale=0.5 / config.delta, size=config.K)
        starts.append(_from_free(u))
    for s in starts:
        s[2:][~pl.identified] = 0.0
    best, runs, full = _optimize(pl, starts, free, settings)
    th = _from_free(full(best.x))
    trace = _trace(best, runs, pl, settings)
    if settings.prune:
        th, free, trace = _prune(pl, th, free, settings, trace)
    if not trace["converged"]:
        raise FitError(f"pseudolikelihood fit did not converge: {best.message}", trace)
    theta = Theta.from_array(th)
    return FittedModel(theta, config, pl.value(theta), trace, ppd)


def _trace(best, runs, pl, settings) -> dict:
    grad_max = float(np.max(np.abs(best.jac))) if best.jac is not None and best.jac.size else 0.0
    vals = sorted(float(-r.fun * pl.n) for r in runs if np.isfinite(r.fun))
    return {
        "iterations": int(sum(r.nit for r in runs)),
        "n_starts": len(runs),
        "best_start_log_pl": vals[::-1],
        "grad_max": grad_max,
        "converged": bool(np.isfinite(best.fun) and (best.success or grad_max < 1e-5)),
        "message": str(best.message),
        "unidentified": [f"theta_{k + 1}" for k in np.flatnonzero(~pl.identified)],
        "pruned": [],
    }


def _prune(pl, th, free, settings, trace):
    """Greedy backward deletion of cluster terms by AIC or BIC."""
    n = pl.n
    penalty = 2.0 if settings.prune == "aic" else np.log(n)
    if settings.prune not in ("aic", "bic"):
        raise ValueError("prune must be 'aic' or 'bic'")
    crit = -2 * pl.value(th) + penalty * free.sum()
    for k in range(pl.K - 1, -1, -1):
        if not free[2 + k]:
            continue
        trial_free = free.copy()
        trial_free[2 + k] = False
        start = th.copy()
        start[2 + k] = 0.0
        best, runs, full = _optimize(pl, [start], trial_free, settings)
        cand = _from_free(full(best.x))
        c = -2 * pl.value(cand) + penalty * trial_free.sum()
        if c < crit:
            th, free, crit = cand, trial_free, c
            trace["pruned"].append(f"theta_{k + 1}")
    return th, free, trace
