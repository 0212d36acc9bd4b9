"""fluidmotion: animate fluid regions of a still image from motion arrows.

A still image, a mask of the region to animate, and a few arrows with speeds
are turned into a constant per-pixel velocity map, integrated over time, and
forward-warped with softmax splatting into a looping frame sequence.
"""

from .flow import (
    FlowField,
    FlowParams,
    Hint,
    HintError,
    ParamError,
    default_sigma,
    dense_flow_from_hints,
    euler_integrate,
    euler_integrate_sequence,
    negate,
    scale,
    sparse_flow_from_hints,
)
from .media import (
    Project,
    load_project,
    read_flo,
    read_image,
    read_mask,
    save_project,
    write_animation,
    write_flo,
    write_image,
)
from .pipeline import ResolvedProject, resolve_project, run_animation
from .render import RenderConfig, render_frame, render_sequence
from .splat import SplatResult, brute_force_splat, softmax_splat, symmetric_splat

__version__ = "0.1.0"

__all__ = [
    "FlowField", "FlowParams", "Hint", "HintError", "ParamError",
    "default_sigma", "dense_flow_from_hints", "euler_integrate",
    "euler_integrate_sequence", "negate", "scale", "sparse_flow_from_hints",
    "Project", "load_project", "read_flo", "read_image", "read_mask",
    "save_project", "write_animation", "write_flo", "write_image",
    "ResolvedProject", "resolve_project", "run_animation",
    "RenderConfig", "render_frame", "render_sequence",
    "SplatResult", "brute_force_splat", "softmax_splat", "symmetric_splat",
    "__version__",
]
