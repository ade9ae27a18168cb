"""Monitored-circuit simulator for magic in rotated Bell cluster states."""

from .core import ClusterState, ParityState, PhaseValue, Outcome, init_product, cluster_census
from .lattice import LatticeSpec, build_lattice
from .observables import (MagicMeasure, full_magic, subsystem_magic, mutual_magic,
                          topological_magic, entanglement_entropy,
                          participation_entropy, shannon_mutual_information)
from .circuit import (AngleScheme, CircuitParams, ObservableRequest, derive_seed,
                      run_trajectory, run_ensemble, step)
from .exceptions import (RBCError, ImpossibleOutcomeError, MeasureMismatchError,
                         ConfigError, SchemeModeError, CollapseError)

__version__ = "0.1.0"
