"""The two-circles demonstration, composed from the library pieces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagram import ModelConfig, PersistenceDiagram, ProjectedDiagram, project
from .estimation import FittedModel, OptimizerSettings, QuadratureSpec, fit
from .field import ScalarGrid, kde_grid, sample_two_circles, superlevel_h0, superlevel_h1
from .inference import OrderStatReport, order_stat_test
from .replication import ChainOptions, ReplicateEnsemble, Schedule, replicate

DEFAULT_BANDWIDTH = 0.15
DEFAULT_GRID = (128, 128)
PAPER_SCHEDULES = ((500, 20, 50), (500, 40, 25), (500, 100, 10))


def prominent_count(pd: PersistenceDiagram) -> int:
    """Number of finite points above the largest multiplicative gap in persistence."""
    p = np.sort(pd.persistence())[::-1]
    p = p[p > 0]
    if p.size <= 1:
        return int(p.size)
    ratios = p[:-1] / p[1:]
    return int(np.argmax(ratios) + 1)


def modelled_diagram(h0: PersistenceDiagram, essential: str = "close") -> PersistenceDiagram:
    """The H0 diagram handed to the model: essential classes closed or dropped."""
    if essential == "close":
        return h0.close_essential()
    if essential == "exclude":
        return h0.finite()
    raise ValueError("essential must be 'close' or 'exclude'")


@dataclass
class TwoCirclesResult:
    cloud: np.ndarray
    grid: ScalarGrid
    h0: PersistenceDiagram
    h1: PersistenceDiagram
    diagram: PersistenceDiagram
    ppd: ProjectedDiagram
    fitted: FittedModel
    ensemble: ReplicateEnsemble
    report: OrderStatReport

    @property
    def h1_prominent(self) -> int:
        return prominent_count(self.h1)


def two_circles_pipeline(seed: int = 0, bandwidth: float = DEFAULT_BANDWIDTH,
                         grid: tuple = DEFAULT_GRID, schedule: Schedule | None = None,
                         K: int = 2, delta_star: float = 1.0, data_dim=2, J: int = 5,
                         essential: str = "close", n_large: int = 500, n_small: int = 300,
                         quad: QuadratureSpec | None = None,
                         settings: OptimizerSettings | None = None,
                         options: ChainOptions = ChainOptions(), workers: int = 1) -> TwoCirclesResult:
    """sample -> KDE -> H0 diagram -> fit -> replicate -> order-statistic test."""
    schedule = schedule or Schedule(1000, *PAPER_SCHEDULES[0], seed=seed)
    cloud = sample_two_circles(n_large, n_small, 4.0, 2.0, seed=seed)
    g = kde_grid(cloud, bandwidth, grid)
    h0 = superlevel_h0(g)
    h1 = superlevel_h1(g)
    pd = modelled_diagram(h0, essential)
    ppd = project(pd)
    cfg = ModelConfig.for_diagram(ppd, K, delta_star, data_dim, degree=0)
    fm = fit(ppd, cfg, quad, settings)
    ens = replicate(ppd, fm, schedule, workers=workers, options=options)
    report = order_stat_test(pd, ens, J)
    return TwoCirclesResult(cloud, g, h0, h1, pd, ppd, fm, ens, report)
