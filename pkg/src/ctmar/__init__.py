"""Fan-beam CT toolkit for metal artifact reduction experiments.

Projector/back-projector pairs, a differentiable fan-beam FBP operator with an
exact transpose, polychromatic metal simulation, sinogram inpainting, iterative
MAR solvers and image quality metrics.
"""

import os

import numba

# The TBB layer is frequently unavailable; OpenMP is fine for our prange loops.
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "omp"

from .errors import (  # noqa: E402
    CTMarError, DivergenceError, FormatError, GeometryError, UnrecoverableInputError,
    ValidationError,
)
from .geometry import (  # noqa: E402
    FanGeometry, ParallelGeometry, default_geometry, fan_covering, fov_mask,
    parallel_from_fan,
)
from .mar import (  # noqa: E402
    SolverConfig, combine_image, combine_sinogram, dual_domain_loss, iterative_mar,
    li_inpaint, trace_refine,
)
from .metrics import evaluate, grouped_report, psnr, ssim  # noqa: E402
from .phantom import EllipseSpec, disc_mask, ellipse_phantom, shepp_logan_specs  # noqa: E402
from .projector import (  # noqa: E402
    adjoint_fan, adjoint_parallel, forward_fan, forward_parallel, metal_trace,
)
from .ril import RilPlan, make_plan, rc_loss, ril_backward, ril_forward  # noqa: E402
from .simulate import (  # noqa: E402
    MarInstance, NoiseSpec, Spectrum, add_poisson, default_spectrum, make_instance,
)
from .tensor_io import WindowSpec, export_png, load_tensor, save_tensor  # noqa: E402

__version__ = "0.1.0"


def set_threads(n: int | None) -> None:
    """Cap numba's worker threads (``None`` leaves the default of all cores)."""
    if n is None:
        return
    if n < 1:
        raise ValidationError("thread count must be >= 1")
    numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
