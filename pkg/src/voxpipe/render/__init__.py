"""Software volume raycaster: scene model, transfer functions, ray marching."""

from .scene import (
    Camera,
    ClipPlane,
    Projection,
    SceneState,
    TransferFunction,
    build_transfer_function,
    quat_from_axis_angle,
    quat_multiply,
    quat_normalize,
    quat_rotate,
)
from .raycast import (
    MinMaxBlockGrid,
    RenderFrame,
    build_minmax_blocks,
    cast_ray,
    composite,
    render_frame,
    sample_trilinear,
    write_ppm,
)

__all__ = [
    "Camera",
    "ClipPlane",
    "Projection",
    "SceneState",
    "TransferFunction",
    "build_transfer_function",
    "quat_from_axis_angle",
    "quat_multiply",
    "quat_normalize",
    "quat_rotate",
    "MinMaxBlockGrid",
    "RenderFrame",
    "build_minmax_blocks",
    "cast_ray",
    "composite",
    "render_frame",
    "sample_trilinear",
    "write_ppm",
]
