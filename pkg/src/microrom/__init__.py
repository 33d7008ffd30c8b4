"""Probabilistic coarse-grained surrogates for two-phase diffusion problems.

Workflow: draw random two-phase conductivity images and solve the fine-grid
reference problem (io.generate_dataset); compress each image into
interpretable per-cell features (features); fit a sparse probabilistic map
from features to an effective coarse-grid conductivity together with a linear
decoder back to the fine grid (training.train); then predict full solution
fields with calibrated uncertainty for unseen images (prediction.predict).
"""

from .errors import (ConfigError, MicroromError, NumericalError, SolveError,
                     VacuousModelError)
from .grids import (BoundaryCondition, MacroCellPartition, StructuredGrid,
                    interpolation_matrix)
from .fem import Solver, assemble_system, solve, adjoint_gradient
from .media import (GrfSampler, GrfSpec, MicrostructureSample, PhaseSpec,
                    level_cut, make_microstructure, sample_cut_threshold)
from .features import (FeatureSpec, PcaBasis, Standardizer, basic_registry,
                       build_design_matrix, default_registry, fit_pca,
                       NAMED_REGISTRIES)
from .model import (DecoderParams, EncoderParams, LinkFunction,
                    VariationalState, pc_log_density, pcf_log_density)
from .training import (SampleMoments, TrainingConfig, TrainingData,
                       inner_gamma_loop, svi_objective_and_grad, train)
from .prediction import (SurrogateModel, baseline_L_data, error_e, error_L,
                         estimate_var_uf, evaluate, free_dof_mask, predict)
from .io import (Dataset, RunConfig, config_hash, fit_pca_bases,
                 generate_dataset, load_config, load_dataset, load_model,
                 parse_config, save_dataset, save_model)

__version__ = "0.1.0"

__all__ = [
    "BoundaryCondition", "ConfigError", "Dataset", "DecoderParams",
    "EncoderParams", "FeatureSpec", "GrfSampler", "GrfSpec", "LinkFunction",
    "MacroCellPartition", "MicroromError", "MicrostructureSample",
    "NumericalError", "PcaBasis", "PhaseSpec", "RunConfig", "SampleMoments",
    "SolveError", "Solver", "Standardizer", "StructuredGrid",
    "SurrogateModel", "TrainingConfig", "TrainingData", "VacuousModelError",
    "VariationalState", "adjoint_gradient", "assemble_system",
    "baseline_L_data", "basic_registry", "build_design_matrix", "config_hash",
    "default_registry", "error_L", "error_e", "estimate_var_uf", "evaluate",
    "fit_pca", "fit_pca_bases", "free_dof_mask", "generate_dataset",
    "inner_gamma_loop", "interpolation_matrix", "level_cut", "load_config",
    "load_dataset", "load_model", "make_microstructure", "parse_config",
    "pc_log_density", "pcf_log_density", "predict", "sample_cut_threshold",
    "save_dataset", "save_model", "solve", "svi_objective_and_grad", "train",
    "NAMED_REGISTRIES",
]
