"""Gibbs-model replication and significance testing of persistence diagrams."""
__version__ = "0.1.0"

from .diagram import (DiagramFormatError, ModelConfig, PersistenceDiagram, PersistencePoint,
                      ProjectedDiagram, project, read_diagram, resolve_delta, unproject,
                      write_diagram)
from .gibbs import Theta, conditional_energy, hamiltonian, neighborhood
from .estimation import (FitError, FittedModel, OptimizerSettings, QuadratureSpec, fit,
                         local_log_normalizer, log_pseudolikelihood)
from .replication import (ChainOptions, ReplicateEnsemble, Schedule, acceptance_ratio,
                          replicate, sweep)
from .inference import (ComparisonReport, OrderStatReport, bh_fdr, bonferroni, empirical_pvalue,
                        order_stat_test, order_statistics, parameter_compare)
from .field import (ScalarGrid, betti_at_level, kde_grid, sample_two_circles, superlevel_h0,
                    superlevel_h1)
