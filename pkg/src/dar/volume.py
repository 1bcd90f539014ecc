"""Volume I/O, isotropic resampling, cropping, tri-planar patches, augmentation.

Volumes are scalar fields on an ``(nx, ny, nz)`` voxel grid with per-axis
spacing in millimeters.  The serialized form is the little-endian NVOL
container::

    bytes 0-3   magic "NVOL"
    u16         version (1)
    u16         reserved (0)
    u32[3]      dims nx, ny, nz
    f32[3]      spacing sx, sy, sz  [mm/voxel]
    f32[nx*ny*nz]  voxels, x fastest: index = x + nx*(y + ny*z)

All interpolation in this module is order-1 (bilinear / trilinear).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError, ShapeError, VolumeFormatError

NVOL_MAGIC = b"NVOL"
NVOL_VERSION = 1
_NVOL_HEADER_FMT = "<4sHH3I3f"
NVOL_HEADER_SIZE = struct.calcsize(_NVOL_HEADER_FMT)

# Clip windows for intensity normalization: CT lung window, and the identity
# window for data already in [0, 1].
LUNG_WINDOW = (-1000.0, 400.0)
UNIT_WINDOW = (0.0, 1.0)


@dataclass
class Volume:
    """Voxel grid indexed ``voxels[x, y, z]`` plus mm spacing per axis."""

    voxels: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise ShapeError(f"volume must be 3-D, got shape {self.voxels.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise DataError(f"spacing must be three positive reals, got {self.spacing}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass
class PatchTriplet:
    """Axial/sagittal/coronal views of one sample, identical square shape."""

    axial: np.ndarray
    sagittal: np.ndarray
    coronal: np.ndarray

    def __post_init__(self):
        shapes = {self.axial.shape, self.sagittal.shape, self.coronal.shape}
        if len(shapes) != 1:
            raise ShapeError(f"views differ in shape: {shapes}")
        s = self.axial.shape
        if len(s) != 2 or s[0] != s[1]:
            raise ShapeError(f"views must be square 2-D arrays, got {s}")

    @property
    def views(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.axial, self.sagittal, self.coronal)

    def stack(self) -> np.ndarray:
        """Views as one ``(3, S, S)`` array in axial/sagittal/coronal order."""
        return np.stack(self.views)


def write_volume(volume: Volume, path) -> None:
    """Serialize to NVOL; the voxel payload round-trips bit-exactly."""
    nx, ny, nz = volume.dims
    header = struct.pack(
        _NVOL_HEADER_FMT,
        NVOL_MAGIC,
        NVOL_VERSION,
        0,
        nx,
        ny,
        nz,
        *volume.spacing,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(volume.voxels.astype("<f4", copy=False).tobytes(order="F"))


def read_volume(path) -> Volume:
    """Parse an NVOL file, validating magic, version and payload size."""
    with open(path, "rb") as fh:
        head = fh.read(NVOL_HEADER_SIZE)
        if len(head) < NVOL_HEADER_SIZE:
            raise VolumeFormatError(f"{path}: truncated header")
        magic, version, _reserved, nx, ny, nz, sx, sy, sz = struct.unpack(
            _NVOL_HEADER_FMT, head
        )
        if magic != NVOL_MAGIC:
            raise VolumeFormatError(f"{path}: bad magic {magic!r}")
        if version != NVOL_VERSION:
            raise VolumeFormatError(f"{path}: unsupported version {version}")
        count = nx * ny * nz
        if count <= 0 or count > 2**31:
            raise VolumeFormatError(f"{path}: implausible dims ({nx}, {ny}, {nz})")
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise VolumeFormatError(
                f"{path}: truncated payload, expected {count} voxels, "
                f"got {len(payload) // 4}"
            )
        voxels = np.frombuffer(payload, dtype="<f4").reshape((nx, ny, nz), order="F")
    return Volume(voxels.copy(), (sx, sy, sz))


def resample_isotropic(volume: Volume) -> Volume:
    """Resample to 1 mm isotropic spacing with trilinear interpolation.

    Output dims are ``round(dim * spacing)`` per axis (at least 1); output
    voxel ``j`` samples the source at voxel coordinate ``j / spacing``.
    """
    src = volume.voxels
    out_dims = tuple(
        max(1, int(round(n * s))) for n, s in zip(volume.dims, volume.spacing)
    )
    if volume.spacing == (1.0, 1.0, 1.0) and out_dims == volume.dims:
        return Volume(src.copy(), (1.0, 1.0, 1.0))
    grids = [
        np.arange(d, dtype=np.float64) / s if s != 1.0 else np.arange(d, dtype=np.float64)
        for d, s in zip(out_dims, volume.spacing)
    ]
    coords = np.meshgrid(*grids, indexing="ij")
    out = ndimage.map_coordinates(src, coords, order=1, mode="nearest")
    return Volume(out.astype(np.float32), (1.0, 1.0, 1.0))


def crop_cube(volume: Volume, center, side: int = 64, fill: float = 0.0) -> Volume:
    """Extract a ``side**3`` cube centered on a voxel, padding with ``fill``.

    The center must lie inside the volume; the cube may extend past it, in
    which case out-of-volume voxels take the fill value (air-equivalent for CT,
    background level for synthetic data).
    """
    cx, cy, cz = (int(c) for c in center)
    nx, ny, nz = volume.dims
    if not (0 <= cx < nx and 0 <= cy < ny and 0 <= cz < nz):
        raise DataError(f"center {center} outside volume dims {volume.dims}")
    half = side // 2
    lo = (cx - half, cy - half, cz - half)
    out = np.full((side, side, side), fill, dtype=np.float32)
    src_lo = [max(0, l) for l in lo]
    src_hi = [min(n, l + side) for l, n in zip(lo, volume.dims)]
    dst_lo = [s - l for s, l in zip(src_lo, lo)]
    dst_hi = [d + (h - s) for d, s, h in zip(dst_lo, src_lo, src_hi)]
    out[dst_lo[0]:dst_hi[0], dst_lo[1]:dst_hi[1], dst_lo[2]:dst_hi[2]] = volume.voxels[
        src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]
    ]
    return Volume(out, volume.spacing)


def extract_triplanar(cube: Volume) -> PatchTriplet:
    """Central slices of a cubic volume on the three orthographic planes."""
    nx, ny, nz = cube.dims
    if not nx == ny == nz:
        raise ShapeError(f"tri-planar extraction needs a cube, got dims {cube.dims}")
    mid = nx // 2
    axial = cube.voxels[:, :, mid]
    sagittal = cube.voxels[mid, :, :]
    coronal = cube.voxels[:, mid, :]
    return PatchTriplet(axial.copy(), sagittal.copy(), coronal.copy())


def resize_patch(patch: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize of a square patch to ``target x target``.

    Uses corner-aligned sampling, so resizing to the original size is the
    identity and constant patches stay constant.
    """
    patch = np.asarray(patch)
    if patch.ndim != 2 or patch.shape[0] != patch.shape[1]:
        raise ShapeError(f"resize_patch needs a square 2-D patch, got {patch.shape}")
    s = patch.shape[0]
    if target == s:
        return patch.copy()
    if target > 1:
        axis = np.arange(target, dtype=np.float64) * (s - 1) / (target - 1)
    else:
        axis = np.array([(s - 1) / 2.0])
    rows, cols = np.meshgrid(axis, axis, indexing="ij")
    return ndimage.map_coordinates(patch, [rows, cols], order=1, mode="nearest")


def normalize_intensity(patch: np.ndarray, lo: float = LUNG_WINDOW[0],
                        hi: float = LUNG_WINDOW[1]) -> np.ndarray:
    """Clip to the window ``[lo, hi]`` and map it affinely onto ``[0, 1]``."""
    if lo >= hi:
        raise DataError(f"window must satisfy lo < hi, got [{lo}, {hi}]")
    arr = np.asarray(patch)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return (np.clip(arr, lo, hi) - lo) / (hi - lo)


@dataclass(frozen=True)
class AugmentParams:
    """One sampled augmentation transform, shared by all views of a sample."""

    hflip: bool
    vflip: bool
    angle_deg: float


def draw_augment_params(rng: np.random.Generator) -> AugmentParams:
    """Sample flips (p=0.5 each) and a rotation angle uniform in [-90, 90]."""
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)
    angle = float(rng.uniform(-90.0, 90.0))
    return AugmentParams(hflip, vflip, angle)


_centered_grid_cache: dict = {}


def _centered_grid(h: int, w: int):
    key = (h, w)
    if key not in _centered_grid_cache:
        rows, cols = np.meshgrid(
            np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
            indexing="ij",
        )
        _centered_grid_cache[key] = (rows - (h - 1) / 2.0, cols - (w - 1) / 2.0)
    return _centered_grid_cache[key]


def rotate_patch(patch: np.ndarray, angle_deg: float, fill: float = 0.0) -> np.ndarray:
    """Rotate counterclockwise about the patch center, bilinear, fill outside.

    At +90 degrees the index map coincides with ``np.rot90(patch, 1)``.
    """
    if angle_deg == 0.0:
        return patch.copy()
    h, w = patch.shape
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    dr, dc = _centered_grid(h, w)
    src_r = cr + cos_t * dr + sin_t * dc
    src_c = cc - sin_t * dr + cos_t * dc
    return ndimage.map_coordinates(
        patch, [src_r, src_c], order=1, mode="grid-constant", cval=fill
    )


def apply_augment_patch(patch: np.ndarray, params: AugmentParams,
                        fill: float = 0.0) -> np.ndarray:
    """Apply one transform to a single 2-D patch (flip columns, flip rows, rotate)."""
    out = patch
    if params.hflip:
        out = out[:, ::-1]
    if params.vflip:
        out = out[::-1, :]
    return rotate_patch(np.ascontiguousarray(out), params.angle_deg, fill=fill)


def apply_augment(triplet: PatchTriplet, params: AugmentParams,
                  fill: float = 0.0) -> PatchTriplet:
    """Apply the same transform to all three views of one sample."""
    return PatchTriplet(*(apply_augment_patch(v, params, fill) for v in triplet.views))


def augment(triplet: PatchTriplet, rng: np.random.Generator,
            fill: float = 0.0) -> PatchTriplet:
    """Draw a random transform and apply it to the triplet; deterministic per rng."""
    return apply_augment(triplet, draw_augment_params(rng), fill=fill)
