"""
celldir Modules Package

This package contains the modules for the celldir CLI tool:
- utils_module: Error hierarchy, metadata files and usage logging
- circular_module: Wrapped angles, encodings, cyclic distance and min-span fusion
- losses_module: Output activations and cycle-sensitive losses
- vonmises_module: Von Mises density, likelihood and Bessel I0
- network_module: Probing CNN, optimizers, gradient check and checkpoints
- data_module: Synthetic cells, tracks, augmentation, folds and dataset files
- training_module: Training loop, E_deg, sweep and quadrant baseline
- tta_module: Rotation test-time augmentation
- report_module: Markdown result tables
"""

# Version information
__version__ = "1.0.0"

# Import key functions for easier access
from .utils_module import (
    CellDirError,
    ConfigError,
    ContractError,
    DegenerateOutputError,
    DomainError,
    NumericError,
    ParseError,
    StateError,
    exit_code_for,
    log_event,
)

from .circular_module import (
    PredictionSet,
    UnitDirection,
    angle_to_unit,
    circular_mean_oracle,
    cyclic_distance,
    fuse_predictions,
    unit_to_angle,
    wrap,
)

from .losses_module import ActivationKind, LossKind, activate, batch_loss, loss

# Module information for debugging
MODULE_INFO = {
    "utils_module": "Errors, metadata files and usage logging",
    "circular_module": "Wrapped-angle arithmetic and fusion",
    "losses_module": "Activations and losses with analytic gradients",
    "vonmises_module": "Von Mises distribution",
    "network_module": "Probing CNN engine",
    "data_module": "Datasets, augmentation and folds",
    "training_module": "Training, evaluation and sweeps",
    "tta_module": "Test-time augmentation",
    "report_module": "Markdown tables",
}


def get_module_info():
    """Get information about available modules"""
    return MODULE_INFO


# Validation functions for package health
def validate_all_modules():
    """Validate that all modules can be imported successfully"""
    results = {}

    for module_name in MODULE_INFO:
        try:
            __import__(f'modules.{module_name}')
            results[module_name] = {'status': 'OK', 'error': None}
        except Exception as e:
            results[module_name] = {'status': 'FAILED', 'error': str(e)}

    return results
