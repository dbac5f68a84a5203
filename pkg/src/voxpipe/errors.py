"""Exception and warning types shared across the pipeline."""


class VoxpipeError(Exception):
    """Base class for all pipeline errors."""


# --- volume I/O ---

class BadMagic(VoxpipeError):
    """File does not carry the expected format magic."""


class UnsupportedScalarType(VoxpipeError):
    """Scalar type other than i16/u8/f32."""


class TruncatedData(VoxpipeError):
    """Fewer data bytes than the header promises."""


class InvalidDims(VoxpipeError):
    """Dimension fields are out of range or inconsistent."""


class SidecarMismatch(VoxpipeError):
    """Raw file byte length disagrees with the sidecar's dims and scalar size."""


class DegenerateRange(VoxpipeError):
    """Intensity range with lo >= hi."""


class IndexOutOfRange(VoxpipeError):
    """Slice or voxel index outside the volume."""


# --- metrics ---

class DimsMismatch(VoxpipeError):
    """Two grids that must share dims do not."""


class NoPositiveImages(VoxpipeError):
    """Balancing weights undefined: no image in the set contains a positive voxel."""


class EmptySequence(VoxpipeError):
    """An aggregate over an empty sequence."""


# --- clustering / CRF ---

class KTooLarge(VoxpipeError):
    """More clusters requested than distinct intensities available."""


class EmptyClusterCollapsed(UserWarning):
    """An empty cluster was re-seeded during Lloyd iteration (not fatal)."""


class VolumeTooLarge(VoxpipeError):
    """Voxel count times neighborhood size exceeds the configured budget."""


# --- ROI / detector ---

class EmptyMask(VoxpipeError):
    """Operation requires at least one positive voxel."""


class SliceTooSmall(VoxpipeError):
    """Slice smaller than the detector window."""


# --- streaming ---

class UnsupportedVersion(VoxpipeError):
    """Frame packet version not understood."""


class LengthMismatch(VoxpipeError):
    """Packet payload length disagrees with the header."""


class NoVolumeLoaded(VoxpipeError):
    """Scene operation requires a loaded volume."""


class UnknownVolumeId(VoxpipeError):
    """Volume id not present in the catalog."""


class InvalidArgs(VoxpipeError):
    """Control message arguments violate scene invariants."""


# --- orchestrator ---

class MissingProbabilitySibling(VoxpipeError):
    """Import segmentation path found no .prob.raw/.json next to the scan."""
