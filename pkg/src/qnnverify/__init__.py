"""Robustness verification for integer-quantized neural networks."""

from .model import (
    BatchNormParams,
    DtypeBounds,
    MaxPoolLayer,
    QConvLayer,
    QLinearLayer,
    QuantModel,
    QuantParams,
    RealAffine,
    RobustnessQuery,
    fuse_batchnorm,
    fuse_relu,
    load_model,
    load_model_file,
    serialize_model,
)
from .inference import IntTensor, forward, predict, quantize_input, validate_counterexample
from .intervals import analyze
from .encode import encode_query
from .solver import solve_ilp
from .attack import AttackConfig, build_dummy, pgd_attack
from .pipeline import Verdict, verify, verify_batch

__all__ = [
    "AttackConfig",
    "BatchNormParams",
    "DtypeBounds",
    "IntTensor",
    "MaxPoolLayer",
    "QConvLayer",
    "QLinearLayer",
    "QuantModel",
    "QuantParams",
    "RealAffine",
    "RobustnessQuery",
    "Verdict",
    "analyze",
    "build_dummy",
    "encode_query",
    "forward",
    "fuse_batchnorm",
    "fuse_relu",
    "load_model",
    "load_model_file",
    "pgd_attack",
    "predict",
    "quantize_input",
    "serialize_model",
    "solve_ilp",
    "validate_counterexample",
    "verify",
    "verify_batch",
]

__version__ = "0.1.0"
