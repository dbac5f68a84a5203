"""Dense fully connected binary CRF over a voxel grid, with mean-field inference.

The model couples every voxel pair through two Gaussian kernels: a
smoothness kernel on positions that removes small isolated regions, and an
appearance kernel on positions and intensities that keeps nearby
similar-intensity voxels in the same class.  Label compatibility is Potts
(a pair only costs energy when its labels differ).

Inference is mean field with the kernels truncated at a multiple of their
sigma.  Neighbor sums are accumulated in +/- pairs per axis, which makes
the result exactly equivariant under axis reflections (float addition of a
swapped pair is commutative), a property the tests rely on.

For tiny instances `crf_energy` evaluates the exact untruncated energy and
serves as the brute-force MAP oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import DimsMismatch, VolumeTooLarge
from .volume import Volume3D

PROB_EPS = 1e-7


@dataclass(frozen=True)
class CrfParams:
    """Kernel weights/widths and inference settings.

    Sigmas are in voxel units unless spacing_scaled is set, in which case
    positions are measured in millimeters.  sigma_int is in the units of the
    intensity volume (normally normalized [0,1] intensities).
    """

    w_pos: float = 3.0
    sigma_pos: float = 3.0
    w_bil: float = 10.0
    sigma_bil: float = 30.0
    sigma_int: float = 0.1
    iterations: int = 5
    truncation_radius: float = 3.0
    spacing_scaled: bool = False

    def __post_init__(self):
        if self.w_pos < 0 or self.w_bil < 0:
            raise ValueError("kernel weights must be >= 0")
        if min(self.sigma_pos, self.sigma_bil, self.sigma_int) <= 0:
            raise ValueError("sigmas must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.truncation_radius <= 0:
            raise ValueError("truncation_radius must be > 0")

    def lesion_preset(self) -> "CrfParams":
        """Smaller spatial range for the lesion stage (lesions are much
        smaller than the organ)."""
        return replace(self, sigma_pos=self.sigma_pos / 2.0, sigma_bil=self.sigma_bil / 2.0)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CrfParams":
        doc = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})


@dataclass(frozen=True)
class UnaryField:
    """Per-voxel label costs; costs[l] is the cost volume for label l."""

    costs: np.ndarray  # (2, nz, ny, nx)

    def __post_init__(self):
        if self.costs.ndim != 4 or self.costs.shape[0] != 2:
            raise ValueError(f"expected (2, nz, ny, nx), got {self.costs.shape}")
        if not np.all(np.isfinite(self.costs)):
            raise ValueError("unary costs must be finite")

    def cost(self, label: int) -> np.ndarray:
        return self.costs[label]


def unary_from_probability(prob: np.ndarray) -> UnaryField:
    """Negative log-probability costs from a foreground-probability volume."""
    p = np.clip(np.asarray(prob, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    return UnaryField(np.stack([-np.log(1.0 - p), -np.log(p)]))


def pairwise_weight(pi, pj, intensity_i: float, intensity_j: float, params: CrfParams) -> float:
    """Exact kernel sum for one voxel pair (before the Potts factor)."""
    d2 = float(sum((a - b) ** 2 for a, b in zip(pi, pj)))
    di2 = (float(intensity_i) - float(intensity_j)) ** 2
    smooth = params.w_pos * math.exp(-d2 / (2.0 * params.sigma_pos**2))
    appear = params.w_bil * math.exp(
        -d2 / (2.0 * params.sigma_bil**2) - di2 / (2.0 * params.sigma_int**2)
    )
    return smooth + appear


def _positions(shape, spacing, spacing_scaled: bool) -> np.ndarray:
    nz, ny, nx = shape
    zz, yy, xx = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    pos = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3).astype(np.float64)
    if spacing_scaled:
        pos *= np.asarray(spacing, dtype=np.float64)
    return pos


def crf_energy(labels: np.ndarray, unaries: UnaryField, vol: Volume3D, params: CrfParams) -> float:
    """Exact energy of a labeling: unary sum plus Potts-gated pairwise sum over i<j.

    Quadratic in voxel count; intended for small oracle instances.
    """
    labels = np.asarray(labels)
    if labels.shape != vol.voxels.shape or unaries.costs.shape[1:] != vol.voxels.shape:
        raise DimsMismatch(
            f"labels {labels.shape}, unaries {unaries.costs.shape[1:]}, volume {vol.voxels.shape}"
        )
    flat_labels = labels.ravel().astype(np.int64)
    n = flat_labels.size

    unary = float(np.take_along_axis(unaries.costs.reshape(2, -1), flat_labels[None, :], axis=0).sum())

    pos = _positions(vol.voxels.shape, vol.spacing, params.spacing_scaled)
    inten = vol.voxels.ravel().astype(np.float64)
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=-1)
    di2 = (inten[:, None] - inten[None, :]) ** 2
    kern = params.w_pos * np.exp(-d2 / (2.0 * params.sigma_pos**2)) + params.w_bil * np.exp(
        -d2 / (2.0 * params.sigma_bil**2) - di2 / (2.0 * params.sigma_int**2)
    )
    differ = flat_labels[:, None] != flat_labels[None, :]
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    return unary + float(kern[differ & upper].sum())


def _gather(v: np.ndarray, dzyx) -> np.ndarray:
    """out[i] = v[i + delta], zero where the neighbor falls outside."""
    out = np.zeros_like(v)
    src, dst = [], []
    for axis, d in enumerate(dzyx):
        n = v.shape[axis]
        if abs(d) >= n:
            return out
        if d >= 0:
            dst.append(slice(0, n - d))
            src.append(slice(d, n))
        else:
            dst.append(slice(-d, n))
            src.append(slice(0, n + d))
    out[tuple(dst)] = v[tuple(src)]
    return out


def _axis_pair_sum(v: np.ndarray, axis: int, d: int) -> np.ndarray:
    """Sum of the +d and -d gathers along one axis (the single gather when d == 0)."""
    if d == 0:
        return v.copy()
    dzyx = [0, 0, 0]
    dzyx[axis] = d
    plus = _gather(v, dzyx)
    dzyx[axis] = -d
    return plus + _gather(v, dzyx)


def _smooth_group_sum(v: np.ndarray, a: int, b: int, c: int) -> np.ndarray:
    """Sum of v over all sign combinations of offset (+-a, +-b, +-c), separably."""
    out = _axis_pair_sum(v, 2, a)  # x is the last array axis
    out = _axis_pair_sum(out, 1, b)
    return _axis_pair_sum(out, 0, c)


def _bil_term(q: np.ndarray, inten: np.ndarray, dzyx, inv_two_sig_int2: float) -> np.ndarray:
    shifted_i = _gather(inten, dzyx)
    shifted_q = _gather(q, dzyx)
    diff = inten - shifted_i
    return np.exp(-(diff * diff) * inv_two_sig_int2) * shifted_q


def _bil_group_sum(q, inten, a, b, c, inv_two_sig_int2):
    """Appearance-kernel gather over all sign combinations of (a, b, c).

    Nested +/- pairing per axis keeps the float accumulation exactly
    symmetric under reflections.
    """

    def over_x(sy, sz):
        if a == 0:
            return _bil_term(q, inten, (sz, sy, 0), inv_two_sig_int2)
        return _bil_term(q, inten, (sz, sy, a), inv_two_sig_int2) + _bil_term(
            q, inten, (sz, sy, -a), inv_two_sig_int2
        )

    def over_xy(sz):
        if b == 0:
            return over_x(0, sz)
        return over_x(b, sz) + over_x(-b, sz)

    if c == 0:
        return over_xy(0)
    return over_xy(c) + over_xy(-c)


def _offset_groups(shape, spacing, params: CrfParams):
    """Nonnegative offset triples (a, b, c) with per-kernel weights.

    Returns (groups, signed_count): groups is a list of
    (a, b, c, smooth_weight, bil_spatial_weight); signed_count is the number
    of distinct signed offsets covered (for the work budget).
    """
    nz, ny, nx = shape
    step = np.asarray(spacing, dtype=np.float64) if params.spacing_scaled else np.ones(3)
    r_pos = params.truncation_radius * params.sigma_pos
    r_bil = params.truncation_radius * params.sigma_bil if params.w_bil > 0 else 0.0
    r_max = max(r_pos if params.w_pos > 0 else 0.0, r_bil)

    amax = min(nx - 1, int(math.floor(r_max / step[0])))
    bmax = min(ny - 1, int(math.floor(r_max / step[1])))
    cmax = min(nz - 1, int(math.floor(r_max / step[2])))

    groups = []
    signed = 0
    for c in range(cmax + 1):
        for b in range(bmax + 1):
            for a in range(amax + 1):
                if a == b == c == 0:
                    continue
                d2 = (a * step[0]) ** 2 + (b * step[1]) ** 2 + (c * step[2]) ** 2
                d = math.sqrt(d2)
                w_s = params.w_pos * math.exp(-d2 / (2.0 * params.sigma_pos**2)) if (
                    params.w_pos > 0 and d <= r_pos
                ) else 0.0
                w_b = params.w_bil * math.exp(-d2 / (2.0 * params.sigma_bil**2)) if (
                    params.w_bil > 0 and d <= r_bil
                ) else 0.0
                if w_s == 0.0 and w_b == 0.0:
                    continue
                groups.append((a, b, c, w_s, w_b))
                signed += 2 ** sum(1 for t in (a, b, c) if t > 0)
    return groups, signed


def _softmax2(logit0: np.ndarray, logit1: np.ndarray) -> np.ndarray:
    m = np.maximum(logit0, logit1)
    e0 = np.exp(logit0 - m)
    e1 = np.exp(logit1 - m)
    z = e0 + e1
    return np.stack([e0 / z, e1 / z])


def mean_field_refine(
    prob: np.ndarray,
    vol: Volume3D,
    params: CrfParams,
    pair_budget: int = 2_000_000_000,
    iteration_callback=None,
):
    """Refine a soft foreground prediction against the intensity volume.

    Returns (labels, marginals): the argmax mask (ties go to background)
    and the final foreground marginals.  iteration_callback, when given, is
    called with the (2, nz, ny, nx) marginals after every update.

    Raises VolumeTooLarge when voxel count x truncated neighborhood size
    exceeds pair_budget.
    """
    prob = np.asarray(prob, dtype=np.float64)
    if prob.shape != vol.voxels.shape:
        raise DimsMismatch(f"prob {prob.shape} vs volume {vol.voxels.shape}")

    unary = unary_from_probability(prob)
    groups, signed_count = _offset_groups(vol.voxels.shape, vol.spacing, params)
    work = prob.size * signed_count
    if work > pair_budget:
        raise VolumeTooLarge(
            f"{prob.size} voxels x {signed_count} neighbors = {work} exceeds budget {pair_budget}"
        )

    inten = vol.voxels.astype(np.float64)
    inv_two_sig_int2 = 1.0 / (2.0 * params.sigma_int**2)

    q = _softmax2(-unary.costs[0], -unary.costs[1])
    for _ in range(params.iterations):
        msg = np.zeros_like(q)
        for a, b, c, w_s, w_b in groups:
            contrib0 = np.zeros_like(inten)
            contrib1 = np.zeros_like(inten)
            if w_s > 0.0:
                # message for label l gathers the neighbors' mass on the other label
                contrib0 += w_s * _smooth_group_sum(q[1], a, b, c)
                contrib1 += w_s * _smooth_group_sum(q[0], a, b, c)
            if w_b > 0.0:
                contrib0 += w_b * _bil_group_sum(q[1], inten, a, b, c, inv_two_sig_int2)
                contrib1 += w_b * _bil_group_sum(q[0], inten, a, b, c, inv_two_sig_int2)
            msg[0] += contrib0
            msg[1] += contrib1
        q = _softmax2(-(unary.costs[0] + msg[0]), -(unary.costs[1] + msg[1]))
        if iteration_callback is not None:
            iteration_callback(q)

    labels = (q[1] > q[0]).astype(np.uint8)
    return labels, q[1]


def brute_force_map(unaries: UnaryField, vol: Volume3D, params: CrfParams) -> np.ndarray:
    """Exhaustive minimum-energy labeling; exponential, oracle use only."""
    n = vol.voxels.size
    if n > 20:
        raise VolumeTooLarge(f"{n} voxels is too many for 2^{n} labelings")
    best, best_energy = None, math.inf
    for code in range(2**n):
        labels = np.array([(code >> i) & 1 for i in range(n)], dtype=np.uint8).reshape(
            vol.voxels.shape
        )
        e = crf_energy(labels, unaries, vol, params)
        if e < best_energy:
            best, best_energy = labels, e
    return best
