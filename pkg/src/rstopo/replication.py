"""Replicating diagrams from a fitted model by Metropolis-Hastings.

Each update replaces one point by a draw from a folded Gaussian whose
moments are the empirical moments of the current configuration.  Both
conditional densities in the acceptance ratio use the neighbourhoods of the
point being replaced, so their normalizers cancel.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .diagram import (ModelConfig, PersistenceDiagram, ProjectedDiagram, read_diagram, unproject,
                      write_diagram)
from .estimation import FittedModel
from .gibbs import Theta, conditional_energy, neighborhood_sets

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProposalMoments:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def from_points(cls, pts) -> "ProposalMoments":
        pts = pts.points if isinstance(pts, ProjectedDiagram) else np.asarray(pts, float)
        mean = pts.mean(axis=0)
        c = np.cov(pts.T)
        mx, my, cxx, cxy, cyy = _kernels.regularize(mean[0], mean[1], c[0, 0], c[0, 1], c[1, 1])
        return cls(np.array([mx, my]), np.array([[cxx, cxy], [cxy, cyy]]))


def proposal_sample(moments: ProposalMoments, rng: np.random.Generator) -> np.ndarray:
    g = rng.multivariate_normal(moments.mean, moments.cov)
    return np.array([g[0], abs(g[1])])


def proposal_density(z, moments: ProposalMoments) -> float:
    """Folded Gaussian density on R x R+ (fold on the second coordinate)."""
    z = np.asarray(z, dtype=float)
    if z[1] < 0:
        return 0.0
    c = moments.cov
    return math.exp(_kernels.log_folded_density(z[0], z[1], moments.mean[0], moments.mean[1],
                                                c[0, 0], c[0, 1], c[1, 1]))


def acceptance_ratio(x, x_star, ppd, theta: Theta, config: ModelConfig,
                     moments_now: ProposalMoments, moments_after: ProposalMoments,
                     index: int | None = None, xbar1: float | None = None) -> float:
    """Probability of replacing configuration point ``x`` (at ``index``) by ``x_star``."""
    pts = ppd.points if isinstance(ppd, ProjectedDiagram) else np.asarray(ppd, float)
    if xbar1 is None:
        xbar1 = float(pts[:, 0].mean())
    nb = neighborhood_sets(x, pts, config, exclude=index)
    e_old = conditional_energy(x, nb, xbar1, theta, config)
    e_new = conditional_energy(x_star, nb, xbar1, theta, config)
    q_back = proposal_density(x, moments_after)
    q_fwd = proposal_density(x_star, moments_now)
    if q_fwd == 0.0:
        return 1.0
    return min(1.0, math.exp(e_old - e_new) * q_back / q_fwd)


@dataclass(frozen=True)
class Schedule:
    burn_in: int = 1000
    n_b: int = 500
    n_r: int = 20
    n_R: int = 50
    seed: int = 0

    def __post_init__(self):
        if min(self.burn_in, self.n_b, self.n_r, self.n_R) < 1:
            raise ValueError("schedule entries must be positive")

    @property
    def n(self) -> int:
        return self.n_r * self.n_R


@dataclass(frozen=True)
class ChainOptions:
    """``xbar``: "live" recomputes the mean birth from the current
    configuration, "frozen" keeps the data value.  ``order``: "sequential" or
    "shuffled" visiting order within a sweep."""

    xbar: str = "live"
    order: str = "sequential"

    def __post_init__(self):
        if self.xbar not in ("live", "frozen"):
            raise ValueError("xbar must be 'live' or 'frozen'")
        if self.order not in ("sequential", "shuffled"):
            raise ValueError("order must be 'sequential' or 'shuffled'")


def _draw(rng: np.random.Generator, n_sweeps: int, n: int, order: str):
    normals = rng.standard_normal((n_sweeps, n, 2))
    uniforms = rng.random((n_sweeps, n))
    if order == "shuffled":
        orders = np.vstack([rng.permutation(n) for _ in range(n_sweeps)])
    else:
        orders = np.broadcast_to(np.arange(n), (n_sweeps, n)).copy()
    return normals, uniforms, orders


def _run(pts: np.ndarray, theta: Theta, config: ModelConfig, rng, n_sweeps: int,
         options: ChainOptions, xbar_frozen: float) -> int:
    if theta.K != config.K:
        raise ValueError("theta and config disagree on K")
    th = theta.as_array()
    normals, uniforms, orders = _draw(rng, n_sweeps, pts.shape[0], options.order)
    return int(_kernels.run_sweeps(pts, th, config.K, config.delta, normals, uniforms, orders,
                                   options.xbar == "frozen", xbar_frozen))


def sweep(ppd, theta: Theta, config: ModelConfig, rng: np.random.Generator,
          options: ChainOptions = ChainOptions(), xbar_frozen: float | None = None):
    """One pass over all points.  Returns (new ProjectedDiagram, accept count)."""
    pts = np.array(ppd.points if isinstance(ppd, ProjectedDiagram) else ppd, dtype=float)
    if pts.shape[0] < 2:
        raise ValueError("need at least two points to sweep")
    if xbar_frozen is None:
        xbar_frozen = float(pts[:, 0].mean())
    acc = _run(pts, theta, config, rng, 1, options, xbar_frozen)
    return ProjectedDiagram(pts), acc


def run_chain(ppd, theta: Theta, config: ModelConfig, n_sweeps: int, seed: int,
              options: ChainOptions = ChainOptions(), record_every: int = 1,
              xbar_frozen: float | None = None):
    """Run ``n_sweeps`` sweeps, returning configurations every ``record_every`` sweeps.

    Returns (array of shape (n_records, N, 2), acceptance rate).
    """
    pts = np.array(ppd.points if isinstance(ppd, ProjectedDiagram) else ppd, dtype=float)
    if xbar_frozen is None:
        xbar_frozen = float(pts[:, 0].mean())
    rng = np.random.default_rng(seed)
    out, acc = [], 0
    for _ in range(n_sweeps // record_every):
        acc += _run(pts, theta, config, rng, record_every, options, xbar_frozen)
        out.append(pts.copy())
    return np.array(out), acc / (max(len(out), 1) * record_every * pts.shape[0])


@dataclass
class ReplicateEnsemble:
    replicates: list[PersistenceDiagram]
    fitted: FittedModel
    schedule: Schedule
    acceptance_rate: float
    projected: np.ndarray = field(repr=False, default=None)  # (n, N, 2)
    options: ChainOptions = ChainOptions()

    def __len__(self) -> int:
        return len(self.replicates)

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for idx, pd in enumerate(self.replicates):
            chain, block = divmod(idx, self.schedule.n_r)
            write_diagram(pd, directory / f"replicate_{chain:04d}_{block:04d}.csv")
        meta = {
            "schedule": asdict(self.schedule),
            "seed": self.schedule.seed,
            "theta": self.fitted.theta_hat.to_dict(),
            "config": self.fitted.config.to_dict(),
            "acceptance_rate": self.acceptance_rate,
            "options": asdict(self.options),
            "data_fingerprint": self.fitted.fingerprint(),
            "n": len(self.replicates),
        }
        (directory / "ensemble.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                                 encoding="utf-8")


def read_ensemble_diagrams(directory) -> tuple[list[PersistenceDiagram], dict]:
    """Replicate diagrams (in chain/block order) and the ensemble metadata."""
    directory = Path(directory)
    meta = json.loads((directory / "ensemble.json").read_text(encoding="utf-8"))
    files = sorted(directory.glob("replicate_*_*.csv"))
    return [read_diagram(f) for f in files], meta


def _chain_job(ppd_pts, theta, config, schedule: Schedule, chain: int, options: ChainOptions):
    pts = ppd_pts.copy()
    xbar_frozen = float(pts[:, 0].mean())
    rng = np.random.default_rng(schedule.seed + chain)
    acc = _run(pts, theta, config, rng, schedule.burn_in, options, xbar_frozen)
    blocks = np.empty((schedule.n_r,) + pts.shape)
    for b in range(schedule.n_r):
        acc += _run(pts, theta, config, rng, schedule.n_b, options, xbar_frozen)
        blocks[b] = pts
    return blocks, acc


def replicate(ppd, fitted: FittedModel, schedule: Schedule, workers: int = 1,
              options: ChainOptions = ChainOptions(), theta: Theta | None = None) -> ReplicateEnsemble:
    """Simulate ``n_r * n_R`` replicate diagrams.

    Every super-chain starts from the original configuration with its own
    burn-in and random stream (``seed + chain``).  ``theta`` overrides the
    fitted parameters (used for simulation studies).
    """
    if not fitted.converged:
        raise ValueError("refusing to replicate from a non-converged fit")
    pts = np.array(ppd.points if isinstance(ppd, ProjectedDiagram) else ppd, dtype=float)
    if pts.shape[0] < 2:
        raise ValueError("need at least two points to replicate")
    theta = theta or fitted.theta_hat
    config = fitted.config
    jobs = range(schedule.n_R)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda c: _chain_job(pts, theta, config, schedule, c, options), jobs))
    else:
        results = [_chain_job(pts, theta, config, schedule, c, options) for c in jobs]
    projected = np.concatenate([r[0] for r in results])
    total = sum(r[1] for r in results)
    steps = schedule.n_R * (schedule.burn_in + schedule.n_b * schedule.n_r) * pts.shape[0]
    degree = config.degree
    reps = [unproject(p, degree=degree, source_meta=f"replicate {i}") for i, p in enumerate(projected)]
    return ReplicateEnsemble(reps, fitted, schedule, total / steps, projected, options)


def simulate(theta: Theta, config: ModelConfig, start, n_sweeps: int, seed: int,
             options: ChainOptions = ChainOptions()) -> ProjectedDiagram:
    """Run a single chain from ``start`` and return its final configuration."""
    pts = np.array(start.points if isinstance(start, ProjectedDiagram) else start, dtype=float)
    rng = np.random.default_rng(seed)
    _run(pts, theta, config, rng, n_sweeps, options, float(pts[:, 0].mean()))
    return ProjectedDiagram(pts)
