"""Whole-brain QSM reconstruction with boundary-preserving residual
background field filtering (maximum spherical mean value, mSMV)."""

from .bfr import BfrResult, pdf, vsharp
from .errors import (
    ConfigError,
    ConvergenceError,
    GridMismatchError,
    MsmvQsmError,
    PhantomSpecError,
    VolumeConsistencyError,
    VolumeFormatError,
)
from .fieldmap import FieldFitResult, R2StarResult, fit_field, fit_r2star, unwrap_phase
from .inversion import (
    InversionInputs,
    MediParams,
    build_gradient_mask,
    csf_stats,
    medi_invert,
)
from .io import load_volume, save_volume
from .kernels import (
    GAMMA_MHZ_PER_T,
    DipoleKernel,
    SphericalKernel,
    dipole_convolve,
    make_dipole_kernel,
    make_spherical_kernel,
    minimal_radius,
    smv_apply,
)
from .metrics import (
    MetricsReport,
    bland_altman,
    roi_regression,
    shadow_score,
    wilcoxon_signed_rank,
)
from .msmv import (
    MsmvParams,
    MsmvTrace,
    compute_threshold,
    initial_filter,
    msmv_filter,
    vessel_mask,
)
from .phantom import (
    AcquisitionParams,
    PhantomSpec,
    PhantomVolumes,
    Region,
    build_phantom,
    default_phantom_spec,
    forward_field,
    synthesize_mgre,
)
from .pipeline import RunManifest, run_pipeline
from .config import PipelineConfig, validate_config
from .volume import (
    MaskVolume,
    MultiEchoVolume,
    ScalarVolume,
    VoxelGrid,
    boundary_layer,
    dilate_mask,
    erode_mask,
)

__version__ = "0.1.0"
