from .pca import PcaBasis, fit_pca, project
from .registry import (FeatureSpec, FeatureContext, Standardizer,
                       build_design_matrix, basic_registry, default_registry,
                       evaluate_feature, registry_from_obj, registry_to_obj,
                       registry_uses_pca, validate_registry, NAMED_REGISTRIES)

__all__ = [
    "FeatureSpec", "FeatureContext", "Standardizer", "PcaBasis",
    "build_design_matrix", "basic_registry", "default_registry",
    "evaluate_feature", "fit_pca", "project", "registry_from_obj",
    "registry_to_obj", "registry_uses_pca", "validate_registry",
    "NAMED_REGISTRIES",
]
