"""Newton Sketch with leverage-score-sparsified (LESS) embeddings."""

from .leverage import LeverageProfile, SingularHessianError, approx_leverage, effective_dims, exact_leverage
from .moments import MomentEstimate, estimate_moments, gaussian_exact_moments, second_moment_target
from .problem import HessianSqrtView, Objective
from .sketch import (
    SketchOperator,
    SketchSpec,
    Sparsifier,
    apply_sketch,
    build_sketch,
    count_madds,
    draw_sparsifier,
    sketched_hessian,
)
from .solver import (
    SolverConfig,
    StepPolicy,
    Trace,
    TraceSet,
    distributed_step,
    newton_exact_step,
    newton_sketch_step,
    solve,
    step_size,
)

__version__ = "0.1.0"
