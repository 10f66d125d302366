"""Cubature formulas with prescribed weights on model manifolds.

The package builds, for a target band L and a prescribed weight vector,
node configurations whose weighted point evaluations reproduce integrals
of all band-L diffusion or algebraic polynomials.  The pipeline follows
the constructive route: a measure-exact weighted area partition seeds the
nodes, a smoothed gradient flow and a damped Gauss-Newton descent drive
the spectral residual to zero, and weighted sampling ratios plus
reproducing-kernel identities provide the diagnostics.
"""

from .geometry import (
    Manifold,
    ManifoldPoint,
    QuadratureGrid,
    arclength,
    arclength_inverse,
    ball_measure,
    canonical_point,
    charts_to_ambient,
    circumference,
    distance,
    doubling_constants,
    exp_step,
    manifold_from_descriptor,
    move_points,
    pairwise_distance,
    reference_grid,
    reference_integrate,
)
from .spectra import (
    DiffusionPoly,
    Eigenpair,
    SpectralSpace,
    enumerate_basis,
    eval_poly,
    grad_poly,
)
from .algebraic import (
    RestrictedPolySpace,
    build_restricted_space,
    restriction_fit_residual,
)
from .weights import (
    BlockAggregation,
    WeightVector,
    block_aggregate,
    concentrated_weights,
    random_band_weights,
    validate_weights,
    weight_energy,
)
from .partition import (
    CellTree,
    Partition,
    PartitionReport,
    Region,
    build_cell_tree,
    exact_cut,
    partition_from_json,
    partition_to_json,
    spanning_tree,
    verify_partition,
    weighted_partition,
)
from .engine import (
    CubatureRule,
    FlowConfig,
    FlowResult,
    RuleReport,
    SmootherV,
    flow_run,
    kernel_psi,
    kernel_w,
    mz_ratio_algebraic,
    mz_ratio_diffusion,
    residual_vector,
    riesz_coefficients,
    rule_from_json,
    rule_to_csv,
    rule_to_json,
    smooth_cutoff,
    solve,
    verify_rule,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
