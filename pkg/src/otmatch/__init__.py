"""Inverse data matching under interchangeable discrepancy metrics:
plain and weighted Sobolev norms, and the quadratic transport distance.
"""

__version__ = "0.1.0"

from .errors import (
    AllZeroInput,
    DegenerateTarget,
    MassMismatch,
    NoConvergence,
    NonSPD,
    NonpositiveWeight,
    OtmatchError,
    SingularAdjoint,
    SingularSymbol,
    SolverFailure,
    SupportOverflow,
)
from .grid import (
    Density,
    Grid,
    GridFn,
    NoiseSpec,
    add_noise,
    high_frequency_fraction,
    inner,
    make_density,
    mass,
    norm_l2,
    read_gridfn_csv,
    reflect_to_periodic,
    spectrum_report,
    write_gridfn_csv,
)
from .invert import (
    ConvolutionModel,
    FlowModel,
    InversionConfig,
    InversionTrace,
    MismatchSpec,
    PATModel,
    evaluate_objective,
    fd_gradient,
    gradient_wrt_model,
    run_inversion,
    weight_from_data,
)
from .models import (
    DiffusionProblem,
    FlowParams,
    KernelSpec,
    convolve,
    diffusion_solve,
    flow_translate,
    pat_forward,
    pat_gradient_adjoint,
    project_axes,
)
from .sobolev import (
    DiagonalOperator,
    FrequencyGrid,
    SobolevSpec,
    apply_diagonal,
    hs_mismatch,
    hs_normal_solve,
    precondition,
    resolution_study,
    truncated_inverse,
    weighted_hs_mismatch,
)
from .transport1d import (
    Cdf,
    TransportMap1D,
    cdf_of,
    optimal_map_1d,
    quantile_of,
    w2_1d,
    w2_gradient_1d,
)
from .transport_nd import (
    AffineParams,
    GaussianParams,
    MomentPair,
    MongeAmpereSolution,
    solve_adjoint_ma_2d,
    solve_monge_ampere_2d,
    w2_affine,
    w2_gaussian,
    w2_gradient_2d,
    weighted_hm1_surrogate,
)
