"""Monte Carlo simulation and statistical verification for regime-switching
jump-diffusions with state-dependent switching intensities."""

from .errors import *  # noqa: F401,F403
from .model_core import (CharacteristicsTriplet, CoefficientSet, GeneratorEvaluation, LevySpec, ModelSpec,
                         QuadratureConfig, RegimeSet, TestFunction, compute_characteristics, evaluate_generator,
                         validate_model)
from .path_simulator import (EnsembleSummary, PathBatch, PathRecord, SimulationConfig, simulate_ensemble,
                             simulate_path)
from .rng import RandomStream
from .verifier import (InvariantTally, TestReport, check_path_invariants, characteristics_residual_test, dynkin_test,
                       markov_property_test, moment_growth_test, regime_marginal_test,
                       uniqueness_two_construction_test)

__version__ = "0.1.0"
