"""Significance tests against replicate ensembles."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .diagram import ModelConfig, PersistenceDiagram, ProjectedDiagram, project
from .estimation import FitError, FittedModel, OptimizerSettings, QuadratureSpec, fit
from .gibbs import Theta
from .replication import ChainOptions, ReplicateEnsemble, Schedule, replicate

log = logging.getLogger(__name__)


def order_statistics(pd: PersistenceDiagram, J: int) -> np.ndarray:
    """The J largest persistences of the finite points, in descending order."""
    p = pd.persistence()
    if J > p.size:
        raise ValueError(f"J={J} exceeds the {p.size} finite points in the diagram")
    if J < 1:
        raise ValueError("J must be positive")
    return -np.sort(-p)[:J]


def empirical_pvalue(observed: float, null: np.ndarray) -> float:
    """Add-one Monte Carlo p-value; ties count as at least as extreme."""
    null = np.asarray(null, dtype=float)
    return float((1 + np.count_nonzero(null >= observed)) / (null.size + 1))


@dataclass
class OrderStatReport:
    observed: np.ndarray
    pvalues: np.ndarray
    quantiles: np.ndarray  # (J, 3) at 0.5, 0.95, 0.99
    n: int
    null: np.ndarray = field(repr=False, default=None)  # (n, J)

    QUANTILE_LEVELS = (0.5, 0.95, 0.99)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "rows": [
                {"j": j + 1, "T_obs": float(self.observed[j]), "p_value": float(self.pvalues[j]),
                 "q50": float(self.quantiles[j, 0]), "q95": float(self.quantiles[j, 1]),
                 "q99": float(self.quantiles[j, 2])}
                for j in range(self.observed.size)
            ],
        }

    def table(self) -> str:
        lines = [f"{'j':>3} {'T_obs':>12} {'p':>9} {'q50':>12} {'q95':>12} {'q99':>12}"]
        for r in self.to_dict()["rows"]:
            lines.append(f"{r['j']:>3} {r['T_obs']:>12.6g} {r['p_value']:>9.5f} "
                         f"{r['q50']:>12.6g} {r['q95']:>12.6g} {r['q99']:>12.6g}")
        lines.append(f"replicates: {self.n}")
        return "\n".join(lines)


def order_stat_test(pd: PersistenceDiagram, ensemble, J: int) -> OrderStatReport:
    """Compare T_1..T_J of ``pd`` with their replicate distributions.

    ``ensemble`` is a ReplicateEnsemble or any sequence of diagrams.
    """
    reps = ensemble.replicates if isinstance(ensemble, ReplicateEnsemble) else list(ensemble)
    if not reps:
        raise ValueError("empty replicate ensemble")
    obs = order_statistics(pd, J)
    null = np.array([order_statistics(r, J) for r in reps])
    pv = np.array([empirical_pvalue(obs[j], null[:, j]) for j in range(J)])
    q = np.quantile(null, OrderStatReport.QUANTILE_LEVELS, axis=0).T
    return OrderStatReport(obs, pv, q, len(reps), null)


def bh_fdr(pvals: Sequence[float], alpha: float = 0.05) -> np.ndarray:
    """Benjamini-Hochberg step-up rejections, as a boolean mask."""
    p = np.asarray(pvals, dtype=float)
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool)
    order = np.argsort(p, kind="stable")
    below = p[order] <= alpha * np.arange(1, m + 1) / m
    reject = np.zeros(m, dtype=bool)
    if below.any():
        last = np.flatnonzero(below).max()
        reject[order[:last + 1]] = True
    return reject


def bonferroni(pvals: Sequence[float], alpha: float = 0.05) -> np.ndarray:
    p = np.asarray(pvals, dtype=float)
    return p <= alpha / max(p.size, 1)


CORRECTIONS = {"bh": bh_fdr, "bonferroni": bonferroni}


@dataclass
class ComparisonReport:
    names: list[str]
    estimate_a: np.ndarray
    estimate_b: np.ndarray
    se_a: np.ndarray
    se_b: np.ndarray
    z: np.ndarray
    pvalues: np.ndarray
    alpha: float
    rejections: dict  # correction name -> boolean mask
    n_refits: tuple = (0, 0)

    def count(self, correction: str) -> int:
        return int(self.rejections[correction].sum())

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "n_refits": list(self.n_refits),
            "parameters": [
                {"name": nm, "estimate_a": float(a), "estimate_b": float(b), "se_a": float(sa),
                 "se_b": float(sb), "z": float(z), "p_value": float(p),
                 **{f"reject_{c}": bool(mask[i]) for c, mask in self.rejections.items()}}
                for i, (nm, a, b, sa, sb, z, p) in enumerate(
                    zip(self.names, self.estimate_a, self.estimate_b, self.se_a, self.se_b,
                        self.z, self.pvalues))
            ],
            "significant": {c: self.count(c) for c in self.rejections},
        }

    def table(self) -> str:
        cols = list(self.rejections)
        head = f"{'parameter':<10} {'A':>11} {'B':>11} {'z':>8} {'p':>9} " + " ".join(f"{c:>10}" for c in cols)
        lines = [head]
        for i, nm in enumerate(self.names):
            marks = " ".join(f"{'*' if self.rejections[c][i] else '.':>10}" for c in cols)
            lines.append(f"{nm:<10} {self.estimate_a[i]:>11.5g} {self.estimate_b[i]:>11.5g} "
                         f"{self.z[i]:>8.3f} {self.pvalues[i]:>9.4f} {marks}")
        lines.append("significant: " + ", ".join(f"{c}={self.count(c)}" for c in cols))
        return "\n".join(lines)


def refit_ensemble(ensemble: ReplicateEnsemble, quad: QuadratureSpec | None = None,
                   settings: OptimizerSettings | None = None, max_failure: float = 0.05,
                   resolve_delta: bool = True) -> np.ndarray:
    """Refit theta on every replicate; rows of failed fits are dropped.

    Refits start from the parent estimate.  With ``resolve_delta`` each
    replicate gets its own interaction distance, as the original did;
    otherwise the parent's is reused.  Raises when more than ``max_failure``
    of the refits fail.
    """
    fitted = ensemble.fitted
    base = fitted.config
    settings = settings or OptimizerSettings(n_starts=1)
    out, failures = [], 0
    for pts in ensemble.projected:
        ppd = ProjectedDiagram(pts)
        try:
            cfg = (ModelConfig.for_diagram(ppd, base.K, base.delta_star, base.data_dim, base.degree)
                   if resolve_delta else base)
            fm = fit(ppd, cfg, quad, settings, start=fitted.theta_hat)
            out.append(fm.theta_hat.as_array())
        except (FitError, ValueError) as exc:
            failures += 1
            log.debug("replicate refit failed: %s", exc)
    n = len(ensemble.projected)
    if failures > max_failure * n:
        raise FitError(f"{failures} of {n} replicate refits failed")
    if failures:
        warnings.warn(f"{failures} of {n} replicate refits failed and were excluded")
    return np.array(out)


def compare_estimates(names, est_a, est_b, refits_a, refits_b, alpha: float = 0.05,
                      corrections=("bh", "bonferroni")) -> ComparisonReport:
    """Two-sample z tests per parameter with replicate-refit standard errors."""
    se_a = refits_a.std(axis=0, ddof=1)
    se_b = refits_b.std(axis=0, ddof=1)
    se = np.sqrt(se_a ** 2 + se_b ** 2)
    diff = est_a - est_b
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, np.where(diff == 0, 0.0, np.inf * np.sign(diff)))
    p = 2 * stats.norm.sf(np.abs(z))
    rej = {c: CORRECTIONS[c](p, alpha) for c in corrections}
    return ComparisonReport(list(names), est_a, est_b, se_a, se_b, z, p, alpha, rej,
                            (len(refits_a), len(refits_b)))


def parameter_compare(pd_a: PersistenceDiagram, pd_b: PersistenceDiagram, K: int = 2,
                      delta_star: float = 1.0, data_dim=2, schedule: Schedule = Schedule(),
                      alpha: float = 0.05, corrections=("bh", "bonferroni"),
                      quad: QuadratureSpec | None = None, settings: OptimizerSettings | None = None,
                      options: ChainOptions = ChainOptions(), workers: int = 1) -> ComparisonReport:
    """Fit both diagrams, replicate each, refit every replicate, and test per parameter.

    Diagram B's chains use ``schedule.seed + schedule.n_R`` onwards so the
    two ensembles never share random streams.
    """
    fits, refits = [], []
    for which, pd in enumerate((pd_a, pd_b)):
        ppd = project(pd.finite())
        cfg = ModelConfig.for_diagram(ppd, K, delta_star, data_dim, pd.degree)
        fm = fit(ppd, cfg, quad, settings)
        sched = Schedule(schedule.burn_in, schedule.n_b, schedule.n_r, schedule.n_R,
                         schedule.seed + which * schedule.n_R)
        ens = replicate(ppd, fm, sched, workers=workers, options=options)
        fits.append(fm)
        refits.append(refit_ensemble(ens, quad))
    names = fits[0].theta_hat.names()
    return compare_estimates(names, fits[0].theta_hat.as_array(), fits[1].theta_hat.as_array(),
                             refits[0], refits[1], alpha, corrections)
