"""Ray marching core: trilinear sampling, front-to-back compositing,
min/max block skipping and full-frame rendering.

All rays of a frame march in lockstep over numpy arrays; per-ray arithmetic
is elementwise, so results are identical to casting each ray alone and
independent of any scheduling.  Interpolation uses the symmetric lerp
(1-f)*a + f*b, which makes axis-mirrored renders byte-identical.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..volume import Volume3D, window_scalar
from .scene import Camera, ClipPlane, Projection, SceneState, TransferFunction

DEFAULT_EARLY_EXIT = 0.99

_FORMAT_BYTES = {"RGB8": 3, "RGBA8": 4}


@dataclass(frozen=True)
class RenderFrame:
    """One rendered image plus the metadata the stream protocol carries."""

    width: int
    height: int
    pixel_format: str  # RGB8 | RGBA8
    frame_id: int
    timestamp_us: int
    pixels: bytes

    def __post_init__(self):
        if self.pixel_format not in _FORMAT_BYTES:
            raise ValueError(f"pixel_format {self.pixel_format!r}")
        expected = self.width * self.height * _FORMAT_BYTES[self.pixel_format]
        if len(self.pixels) != expected:
            raise ValueError(f"pixels has {len(self.pixels)} bytes, expected {expected}")


@dataclass(frozen=True)
class MinMaxBlockGrid:
    """Per-block intensity ranges; block b covers voxels [b*edge, (b+1)*edge]
    inclusive of one overlap voxel so every trilinear footprint stays inside
    its block's range."""

    block_edge: int
    mins: np.ndarray  # (bz, by, bx)
    maxs: np.ndarray

    def __post_init__(self):
        if self.block_edge < 2:
            raise ValueError(f"block_edge must be >= 2, got {self.block_edge}")
        if self.mins.shape != self.maxs.shape:
            raise ValueError("min/max grids must share shape")
        if np.any(self.mins > self.maxs):
            raise ValueError("block min exceeds max")


def build_minmax_blocks(vol: Volume3D, block_edge: int = 8) -> MinMaxBlockGrid:
    if block_edge < 2:
        raise ValueError(f"block_edge must be >= 2, got {block_edge}")
    arr = vol.voxels
    nz, ny, nx = arr.shape
    bz, by, bx = (math.ceil(n / block_edge) for n in (nz, ny, nx))
    mins = np.empty((bz, by, bx), dtype=np.float64)
    maxs = np.empty((bz, by, bx), dtype=np.float64)
    for kz in range(bz):
        zs = slice(kz * block_edge, min((kz + 1) * block_edge + 1, nz))
        for ky in range(by):
            ys = slice(ky * block_edge, min((ky + 1) * block_edge + 1, ny))
            for kx in range(bx):
                xs = slice(kx * block_edge, min((kx + 1) * block_edge + 1, nx))
                cell = arr[zs, ys, xs]
                mins[kz, ky, kx] = cell.min()
                maxs[kz, ky, kx] = cell.max()
    return MinMaxBlockGrid(block_edge=block_edge, mins=mins, maxs=maxs)


def _skip_flags(blocks: MinMaxBlockGrid, tf: TransferFunction) -> np.ndarray:
    """Per-block flag: every intensity in the block maps to zero opacity."""
    nonzero = (tf.table[:, 3] != 0.0).astype(np.int64)
    prefix = np.concatenate([[0], np.cumsum(nonzero)])
    jmn = window_scalar(blocks.mins, tf.window).astype(np.int64)
    jmx = window_scalar(blocks.maxs, tf.window).astype(np.int64)
    return (prefix[jmx + 1] - prefix[jmn]) == 0


def _trilinear_many(arr: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Interpolate at in-domain voxel coordinates v (M, 3) given as (x, y, z)."""
    nz, ny, nx = arr.shape
    x0f = np.floor(v[:, 0])
    y0f = np.floor(v[:, 1])
    z0f = np.floor(v[:, 2])
    fx = v[:, 0] - x0f
    fy = v[:, 1] - y0f
    fz = v[:, 2] - z0f
    ix0 = x0f.astype(np.int64)
    iy0 = y0f.astype(np.int64)
    iz0 = z0f.astype(np.int64)
    ix1 = np.minimum(ix0 + 1, nx - 1)
    iy1 = np.minimum(iy0 + 1, ny - 1)
    iz1 = np.minimum(iz0 + 1, nz - 1)

    c000 = arr[iz0, iy0, ix0]
    c001 = arr[iz0, iy0, ix1]
    c010 = arr[iz0, iy1, ix0]
    c011 = arr[iz0, iy1, ix1]
    c100 = arr[iz1, iy0, ix0]
    c101 = arr[iz1, iy0, ix1]
    c110 = arr[iz1, iy1, ix0]
    c111 = arr[iz1, iy1, ix1]

    c00 = (1.0 - fx) * c000 + fx * c001
    c01 = (1.0 - fx) * c010 + fx * c011
    c10 = (1.0 - fx) * c100 + fx * c101
    c11 = (1.0 - fx) * c110 + fx * c111
    c0 = (1.0 - fy) * c00 + fy * c01
    c1 = (1.0 - fy) * c10 + fy * c11
    return (1.0 - fz) * c0 + fz * c1


def sample_trilinear(vol: Volume3D, p) -> float:
    """Value at continuous voxel coordinate p = (x, y, z); voxel centers sit
    at integer coordinates.  Outside [0, n-1] on any axis the volume reads 0."""
    p = np.asarray(p, dtype=np.float64)
    dims_minus1 = np.array([vol.nx - 1, vol.ny - 1, vol.nz - 1], dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > dims_minus1):
        return 0.0
    arr = vol.voxels.astype(np.float64)
    return float(_trilinear_many(arr, p[None, :])[0])


def composite(front, back):
    """Combine two premultiplied RGBA segments front-to-back."""
    fr, fg, fb, fa = front
    br, bg, bb, ba = back
    rem = 1.0 - fa
    return (fr + rem * br, fg + rem * bg, fb + rem * bb, fa + rem * ba)


def _march_rays(
    vol: Volume3D,
    tf: TransferFunction,
    origins: np.ndarray,
    directions: np.ndarray,
    step_mm: float,
    clip: ClipPlane | None,
    blocks: MinMaxBlockGrid | None,
    early_exit: float,
    stats: dict | None,
) -> np.ndarray:
    """March all rays in lockstep; returns (N, 4) premultiplied RGBA.

    Each ray keeps its own next-sample index so that a ray sitting in a
    fully transparent block can jump ahead to the block exit.  The jump
    target stays one full step short of the computed exit, so every skipped
    sample is strictly inside the transparent block and the output bytes
    cannot differ from the unskipped march.
    """
    # native dtype: gathered values widen exactly to float64 in the lerp
    arr = vol.voxels
    spacing = np.asarray(vol.spacing, dtype=np.float64)
    extent = spacing * np.array([vol.nx, vol.ny, vol.nz], dtype=np.float64)
    dims_minus1 = np.array([vol.nx - 1, vol.ny - 1, vol.nz - 1], dtype=np.float64)

    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64)
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("ray direction must be nonzero")
    d = d / norms

    # slab intersection against [0, extent]
    t0, t1 = _slab_range(o, d, np.zeros(3), extent)
    t0 = np.maximum(t0, 0.0)

    n_rays = o.shape[0]
    color = np.zeros((n_rays, 3), dtype=np.float64)
    alpha = np.zeros(n_rays, dtype=np.float64)
    hit = t1 > t0

    skip = _skip_flags(blocks, tf) if blocks is not None else None
    clip_threshold = clip.offset_fraction * extent[clip.axis] if clip is not None else None

    # compacted per-ray state; finished rays scatter their result back once
    rows = np.flatnonzero(hit)
    k = np.zeros(rows.size, dtype=np.int64)
    t1_eff = t1
    if skip is not None and clip is None and tf.lookup(0.0)[3] == 0.0:
        # restrict marching to the bounding box of non-transparent blocks;
        # everything outside is skippable blocks or zero-intensity border,
        # both of which contribute exactly nothing
        box = _occupied_box_mm(skip, blocks.block_edge, spacing, extent)
        if box is None:
            return np.concatenate([color, alpha[:, None]], axis=1)
        enter, leave = _slab_range(o[rows], d[rows], box[0], box[1])
        misses = enter > leave
        first = np.ceil((enter - step_mm - t0[rows]) / step_mm - 0.5)
        first = np.where(misses, np.inf, np.maximum(first, 0.0))
        capped = np.minimum(first, 2.0**60)
        k = capped.astype(np.int64)
        t1_eff = t1.copy()
        t1_eff[rows] = np.where(misses, t0[rows], np.minimum(t1[rows], leave + step_mm))
    o_r, d_r = o[rows], d[rows]
    t0_r, t1_r = t0[rows], t1_eff[rows]
    col_r = np.zeros((rows.size, 3), dtype=np.float64)
    a_r = np.zeros(rows.size, dtype=np.float64)
    while rows.size:
        t = t0_r + (k + 0.5) * step_mm
        live = (t < t1_r) & (a_r < early_exit)
        if not live.all():
            dead = ~live
            color[rows[dead]] = col_r[dead]
            alpha[rows[dead]] = a_r[dead]
            rows, k, t = rows[live], k[live], t[live]
            o_r, d_r, t0_r, t1_r = o_r[live], d_r[live], t0_r[live], t1_r[live]
            col_r, a_r = col_r[live], a_r[live]
            if rows.size == 0:
                break
        pos = o_r + t[:, None] * d_r
        advance = np.ones(rows.size, dtype=np.int64)  # default: one step forward
        if clip_threshold is not None:
            sel = np.flatnonzero(pos[:, clip.axis] >= clip_threshold)
            pos = pos[sel]
        else:
            sel = np.arange(rows.size)
        if sel.size:
            v = pos / spacing - 0.5
            in_domain = np.all((v >= 0.0) & (v <= dims_minus1), axis=1)
            intensity = np.zeros(sel.size, dtype=np.float64)
            # samples to composite: out-of-domain ones read 0, in-domain ones
            # interpolate unless their whole block is transparent
            comp = np.ones(sel.size, dtype=bool)
            dom = np.flatnonzero(in_domain)
            if dom.size:
                vv = v[dom]
                if skip is not None:
                    bidx = (vv // blocks.block_edge).astype(np.int64)
                    skipped = skip[bidx[:, 2], bidx[:, 1], bidx[:, 0]]
                    if np.any(skipped):
                        comp[dom[skipped]] = False
                        jump_local = sel[dom[skipped]]
                        t_exit = _block_exit_t(
                            o_r[jump_local], d_r[jump_local], bidx[skipped],
                            blocks.block_edge, spacing,
                        )
                        jump = np.ceil(
                            (t_exit - step_mm - t0_r[jump_local]) / step_mm - 0.5
                        ).astype(np.int64)
                        advance[jump_local] = np.maximum(jump - k[jump_local], 1)
                    dom = dom[~skipped]
                    vv = vv[~skipped]
                if dom.size:
                    intensity[dom] = _trilinear_many(arr, vv)
                    if stats is not None:
                        stats["samples"] = stats.get("samples", 0) + int(dom.size)
            csel = np.flatnonzero(comp)
            if csel.size:
                rgba = tf.lookup(intensity[csel])
                visible = np.flatnonzero(rgba[:, 3] != 0.0)  # zero alpha is a no-op
                if visible.size:
                    loc = sel[csel[visible]]
                    rgba = rgba[visible]
                    w = (1.0 - a_r[loc]) * rgba[:, 3]
                    col_r[loc] += w[:, None] * rgba[:, :3]
                    a_r[loc] += w
        k += advance

    return np.concatenate([color, alpha[:, None]], axis=1)


def _slab_range(o: np.ndarray, d: np.ndarray, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Entry/exit ray parameters against an axis-aligned box; a ray misses
    when entry > exit."""
    safe = np.where(d != 0.0, d, 1.0)
    ta = (lo - o) / safe
    tb = (hi - o) / safe
    tmin = np.minimum(ta, tb)
    tmax = np.maximum(ta, tb)
    parallel = d == 0.0
    inside = (o >= lo) & (o <= hi)
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    return tmin.max(axis=1), tmax.min(axis=1)


def _occupied_box_mm(skip: np.ndarray, edge: int, spacing, extent):
    """Bounding box (mm) of the non-skippable blocks, or None if all skip."""
    nonskip = ~skip
    if not nonskip.any():
        return None
    zs, ys, xs = np.nonzero(nonskip)
    lo_v = np.array([xs.min(), ys.min(), zs.min()], dtype=np.float64) * edge
    hi_v = (np.array([xs.max(), ys.max(), zs.max()], dtype=np.float64) + 1.0) * edge
    lo_mm = np.maximum((lo_v + 0.5) * spacing, 0.0)
    hi_mm = np.minimum((hi_v + 0.5) * spacing, extent)
    return lo_mm, hi_mm


def _block_exit_t(o: np.ndarray, d: np.ndarray, block_idx_xyz: np.ndarray, edge: int, spacing):
    """Ray parameter where each ray leaves its current min/max block."""
    # block bounds in continuous voxel coordinates, converted to mm
    upper = (block_idx_xyz + 1) * edge
    lower = block_idx_xyz * edge
    bound_v = np.where(d > 0, upper, lower).astype(np.float64)
    bound_mm = (bound_v + 0.5) * spacing
    with np.errstate(divide="ignore", invalid="ignore"):
        t_axis = (bound_mm - o) / d
    t_axis = np.where(d == 0.0, np.inf, t_axis)
    return t_axis.min(axis=1)


def cast_ray(
    vol: Volume3D,
    tf: TransferFunction,
    origin,
    direction,
    step_mm: float | None = None,
    clip: ClipPlane | None = None,
    blocks: MinMaxBlockGrid | None = None,
    early_exit: float = DEFAULT_EARLY_EXIT,
    stats: dict | None = None,
) -> tuple[float, float, float, float]:
    """Single ray through the volume's local frame; returns premultiplied RGBA.

    Samples sit at the midpoints t0 + (k + 0.5) * step between the box entry
    and exit; marching stops early once opacity reaches early_exit.  A ray
    that misses the volume returns transparent black.
    """
    if step_mm is None:
        step_mm = 0.5 * min(vol.spacing)
    if step_mm <= 0:
        raise ValueError(f"step_mm must be > 0, got {step_mm}")
    out = _march_rays(
        vol,
        tf,
        np.asarray(origin, dtype=np.float64)[None, :],
        np.asarray(direction, dtype=np.float64)[None, :],
        step_mm,
        clip,
        blocks,
        early_exit,
        stats,
    )
    return (float(out[0, 0]), float(out[0, 1]), float(out[0, 2]), float(out[0, 3]))


def _pixel_rays(cam: Camera, width: int, height: int):
    """World-space origin and direction per pixel, row-major."""
    px = np.arange(width, dtype=np.float64)
    py = np.arange(height, dtype=np.float64)
    u = (2.0 * px + 1.0 - width) / width  # -1 left .. +1 right
    v = (height - 2.0 * py - 1.0) / height  # +1 top .. -1 bottom
    uu, vv = np.meshgrid(u, v)  # (H, W)
    uu = uu.ravel()
    vv = vv.ravel()

    right, up, forward = cam.basis()
    pos = np.asarray(cam.position, dtype=np.float64)
    if cam.projection is Projection.ORTHOGRAPHIC:
        ex = cam.view_extent_mm
        ey = ex * height / width
        origins = pos[None, :] + uu[:, None] * (ex / 2.0) * right + vv[:, None] * (ey / 2.0) * up
        dirs = np.broadcast_to(forward, origins.shape).copy()
    else:
        tanv = math.tan(math.radians(cam.fov_deg) / 2.0)
        aspect = width / height
        dirs = (
            forward[None, :]
            + uu[:, None] * (tanv * aspect) * right
            + vv[:, None] * tanv * up
        )
        origins = np.broadcast_to(pos, dirs.shape).copy()
    return origins, dirs


def render_frame(
    scene: SceneState,
    cam: Camera,
    width: int,
    height: int,
    frame_id: int = 0,
    timestamp_us: int = 0,
    pixel_format: str = "RGB8",
    step_mm: float | None = None,
    blocks: MinMaxBlockGrid | None = None,
    stats: dict | None = None,
    workers: int = 1,
) -> RenderFrame:
    """Render one frame: a pure function of (scene, camera, size).

    The background is opaque black.  With a MinMaxBlockGrid supplied,
    transparent blocks are skipped without changing a single output byte.
    Rays are independent, so the frame may fan out over `workers` threads;
    the result does not depend on the worker count or scheduling.
    """
    if width < 1 or height < 1:
        raise ValueError(f"frame size {width}x{height}")
    bpp = _FORMAT_BYTES[pixel_format]

    if scene.volume is None:
        return RenderFrame(width, height, pixel_format, frame_id, timestamp_us, bytes(width * height * bpp))

    vol = scene.volume
    if step_mm is None:
        step_mm = 0.5 * min(vol.spacing)

    origins_w, dirs_w = _pixel_rays(cam, width, height)
    origins = scene.world_to_local(origins_w)
    dirs = scene.world_dir_to_local(dirs_w)

    def march(chunk_origins, chunk_dirs, chunk_stats):
        return _march_rays(
            vol, scene.transfer, chunk_origins, chunk_dirs, step_mm,
            scene.clip_plane, blocks, DEFAULT_EARLY_EXIT, chunk_stats,
        )

    n = origins.shape[0]
    if workers <= 1 or n < workers:
        rgba = march(origins, dirs, stats)
    else:
        bounds = [n * i // workers for i in range(workers + 1)]
        chunk_stats = [dict() for _ in range(workers)] if stats is not None else [None] * workers
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    march,
                    (origins[bounds[i] : bounds[i + 1]] for i in range(workers)),
                    (dirs[bounds[i] : bounds[i + 1]] for i in range(workers)),
                    chunk_stats,
                )
            )
        rgba = np.concatenate(parts, axis=0)
        if stats is not None:
            stats["samples"] = stats.get("samples", 0) + sum(
                cs.get("samples", 0) for cs in chunk_stats
            )
    channels = rgba[:, :3] if pixel_format == "RGB8" else rgba
    data = np.floor(255.0 * np.clip(channels, 0.0, 1.0) + 0.5).astype(np.uint8)
    return RenderFrame(width, height, pixel_format, frame_id, timestamp_us, data.tobytes())


def write_ppm(frame: RenderFrame, path) -> None:
    """Binary PPM (P6); RGB8 frames only."""
    if frame.pixel_format != "RGB8":
        raise ValueError("PPM output requires an RGB8 frame")
    with open(path, "wb") as f:
        f.write(f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii"))
        f.write(frame.pixels)
