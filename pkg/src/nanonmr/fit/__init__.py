from .engine import FitError, FitResult, ParameterDegeneracyError, least_squares
from .models import (
    MODELS,
    Model,
    ModelSpec,
    fit_curve,
    guess_xy8_dual,
    guess_xy8_single,
    model_corr_dual_cosine,
    model_linear,
    model_rabi,
    model_xy8_dual,
    model_xy8_single,
    rabi_contrast,
)

__all__ = [
    "FitError",
    "FitResult",
    "ParameterDegeneracyError",
    "least_squares",
    "MODELS",
    "Model",
    "ModelSpec",
    "fit_curve",
    "guess_xy8_dual",
    "guess_xy8_single",
    "model_corr_dual_cosine",
    "model_linear",
    "model_rabi",
    "model_xy8_dual",
    "model_xy8_single",
    "rabi_contrast",
]
