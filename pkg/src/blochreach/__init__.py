"""Reachable and controllability sets of a controlled open qubit.

The package propagates the Bloch equations of a two-level system driven by a
coherent and an incoherent control, and estimates on a grid which states can
be reached (or steered to a target) with bounded piecewise-constant controls.
"""
from .controls import (
    ControlBox,
    PiecewiseControl,
    RegularizerKind,
    RegularizerSpec,
    regularizer_upper_bounds,
    scaled_box,
    suggest_weights,
)
from .dynamics import (
    SystemParams,
    bloch_matrices,
    propagate_adaptive,
    propagate_endpoints,
    propagate_exact,
    propagate_gksl,
)
from .estimation import (
    GridSpec,
    OuterBox,
    RetryPolicy,
    build_grid,
    metrics,
    outer_box_cs,
    outer_box_rs,
    pointwise_cs,
    pointwise_rs,
    sweep,
)
from .objectives import BoxProblem, CsBoxProblem, MismatchSpec, NodeProblem, mismatch
from .optimize import OptimizerConfig, differential_evolution, dual_annealing, multi_run

__version__ = "0.1.0"
