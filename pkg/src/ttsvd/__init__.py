"""TT-SVD for dense tensors built on a Q-less tall-skinny QR and a fused TSMM kernel."""
from .counters import RunCounters, collect_counters
from .decompose import (
    ThickBoundsParams,
    choose_combined_dims,
    concat_leading,
    run_distributed,
    split_leading,
    tt_svd_distributed,
    tt_svd_reference,
    tt_svd_thick_bounds,
    tt_svd_tsqr,
    tt_svd_two_sided,
)
from .errors import (
    AllocationError,
    ConvergenceError,
    DegenerateDimension,
    DimensionError,
    DimensionMismatch,
    DivergenceError,
    LayoutError,
    PartitionMismatch,
    ShapeError,
    ShapeMismatch,
    TTSVDError,
)
from .perfmodel import (
    DEFAULT_PROFILE,
    CostEstimate,
    MachineProfile,
    ReductionPlan,
    load_profile,
    optimal_reduction_factor,
    per_step_model,
    roofline,
    tsmm_cost,
    tsqr_cost,
    ttsvd_flops_estimate,
    ttsvd_volume_estimate,
)
from .report import Report, emit_report, parse_report
from .small_dense import SmallSVD, TruncationSpec, derive_delta, select_rank, small_svd
from .tensor import DenseTensor, PaddedMatrix, padded_stride, random_tensor, reshape_view
from .train import TensorTrain, check_orthonormality, load_tt, save_tt, tt_error, tt_reconstruct
from .tsmm import transpose_reorder, tsmm_reshape
from .tsqr import BlockParams, combine_factors, reduce_block, tsqr

__all__ = [name for name in dir() if not name.startswith("_")]
