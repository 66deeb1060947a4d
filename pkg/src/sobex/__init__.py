"""Whitney-type Sobolev extension on grid masks, with product-domain extension."""

from .errors import (
    CertificationError, ConnectivityError, CoverageError, DegenerateCubeError, DegenerateDomainError,
    DomainFlag, EmptyDomainError, EmptyRegionError, InSetError, InvariantViolation,
    RegularityViolationError, ResolutionExhaustedError, ShapeMismatchError, SobexError,
)
from .extension import (
    ExtensionMap, OperatorNormReport, WhitneyExtension, apply, assemble, build_extension,
    default_window, operator_norm_study,
)
from .grid import Cube, DomainMask, GridSpec, ScalarField, mask_for_shape, rasterize
from .harness import ExperimentConfig, run_certification, run_norm_study
from .local import best_constant, local_lambda, sharp_maximal, sobolev_report
from .partition import BumpBasis, build_partition, evaluate_partition
from .product import ProductExtension, ProductField, extend_first_factor, extend_product
from .quasicubes import QuasiCubeFamily, build_quasicubes
from .shapes import load_shape
from .whitney import WhitneyFamily, decompose, locate

__version__ = "0.1.0"

__all__ = [
    "CertificationError", "ConnectivityError", "CoverageError", "DegenerateCubeError",
    "DegenerateDomainError", "DomainFlag", "EmptyDomainError", "EmptyRegionError", "InSetError",
    "InvariantViolation", "RegularityViolationError", "ResolutionExhaustedError",
    "ShapeMismatchError", "SobexError", "ExtensionMap", "OperatorNormReport", "WhitneyExtension",
    "apply", "assemble", "build_extension", "default_window", "operator_norm_study", "Cube",
    "DomainMask", "GridSpec", "ScalarField", "mask_for_shape", "rasterize", "ExperimentConfig",
    "run_certification", "run_norm_study", "best_constant", "local_lambda", "sharp_maximal",
    "sobolev_report", "BumpBasis", "build_partition", "evaluate_partition", "ProductExtension",
    "ProductField", "extend_first_factor", "extend_product", "QuasiCubeFamily", "build_quasicubes",
    "load_shape", "WhitneyFamily", "decompose", "locate",
]
