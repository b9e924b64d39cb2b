"""Exact-summation SPH volume rendering with piecewise polynomial particle
approximations and integer accumulation along rays."""

from . import _backend
from .approx import ApproxConfig, optimize_knots, project_fixed_knots
from .intarith import IntegerOverflowError, UnsortedStreamError, accumulate_stream
from .kernel import PiecewisePolynomialKernel, cubic_spline_kernel, kernel_constants, load_kernel
from .lut import Lut, LutEntry, build_lut, load_lut, lookup, overall_error_E_star, save_lut
from .quantize import Particle, QuantaConfig, choose_quanta, dataset_stats, quantization_error, quantize_particle
from .raycast import Camera, Ray, TransferFunction, accumulate, composite, render

BACKEND = _backend.NAME

__all__ = [
    "ApproxConfig",
    "BACKEND",
    "Camera",
    "IntegerOverflowError",
    "Lut",
    "LutEntry",
    "Particle",
    "PiecewisePolynomialKernel",
    "QuantaConfig",
    "Ray",
    "TransferFunction",
    "UnsortedStreamError",
    "accumulate",
    "accumulate_stream",
    "build_lut",
    "choose_quanta",
    "composite",
    "cubic_spline_kernel",
    "dataset_stats",
    "kernel_constants",
    "load_kernel",
    "load_lut",
    "lookup",
    "optimize_knots",
    "overall_error_E_star",
    "project_fixed_knots",
    "quantization_error",
    "quantize_particle",
    "render",
    "save_lut",
]
