"""Dense 3D volumes, view masks, block extraction and the raw+json file format.

A volume is a float64 ``numpy`` array indexed ``vol[i, j, k]`` with axes
(u: detector column, v: detector row / slice, theta: view).  On disk the
samples are stored u-fastest, i.e. ``vol.ravel(order="F")``.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

from ._validation import check_volume

FORMAT_DTYPE = "f32"
FORMAT_ORDER = "u-fastest"
FORMAT_ENDIANNESS = "little"


class VolumeFormatError(ValueError):
    """Malformed or unsupported volume file."""


@nb.njit(cache=True)
def reflect_index(idx, n):
    """Mirror `idx` into ``[0, n)`` without repeating the edge sample."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    idx = idx % period
    if idx < 0:
        idx += period
    if idx >= n:
        idx = period - idx
    return idx


@dataclass(frozen=True)
class BlockSpec:
    """Half-widths of a block; the block spans ``2 * r + 1`` samples per axis."""

    r_u: int = 2
    r_v: int = 2
    r_theta: int = 2

    def __post_init__(self):
        for name in ("r_u", "r_v", "r_theta"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")

    @classmethod
    def cube(cls, radius):
        return cls(radius, radius, radius)

    @property
    def radii(self):
        return (int(self.r_u), int(self.r_v), int(self.r_theta))

    @property
    def shape(self):
        return tuple(2 * r + 1 for r in self.radii)

    @property
    def size(self):
        su, sv, st = self.shape
        return su * sv * st

    def check_fits(self, dims):
        # Reflection needs the block to be no longer than one mirror period.
        for r, n, axis in zip(self.radii, dims, "uvt"):
            if n > 1 and r > n - 1:
                raise ValueError(f"block radius {r} along {axis} exceeds volume extent {n}")


class ViewMask:
    """Which of the ``n_theta`` projection views were actually measured."""

    def __init__(self, measured):
        measured = np.asarray(measured)
        if measured.ndim != 1 or measured.size == 0:
            raise ValueError("measured must be a non-empty 1D sequence")
        if measured.dtype != bool:
            if not np.all(np.isin(measured, (0, 1))):
                raise ValueError("measured entries must be 0/1 or booleans")
            measured = measured.astype(bool)
        if not measured.any():
            raise ValueError("at least one view must be measured")
        self.measured = measured.copy()
        self.measured.flags.writeable = False

    @classmethod
    def full(cls, n_theta):
        return cls(np.ones(n_theta, dtype=bool))

    @classmethod
    def alternate(cls, n_theta):
        measured = np.zeros(n_theta, dtype=bool)
        measured[::2] = True
        return cls(measured)

    @classmethod
    def from_indices(cls, indices, n_theta):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size == 0:
            raise ValueError("empty keep-set")
        if indices.min() < 0 or indices.max() >= n_theta:
            raise ValueError(f"view indices must lie in [0, {n_theta})")
        measured = np.zeros(n_theta, dtype=bool)
        measured[indices] = True
        return cls(measured)

    @property
    def n_theta(self):
        return int(self.measured.size)

    @property
    def n_measured(self):
        return int(self.measured.sum())

    @property
    def indices(self):
        return np.flatnonzero(self.measured)

    def check_measured(self, measured_sino):
        if measured_sino.shape[2] != self.n_measured:
            raise ValueError(
                f"measured sinogram has {measured_sino.shape[2]} views but the mask marks {self.n_measured}"
            )

    def embed(self, measured_sino, fill=0.0):
        """Place measured views at their positions in a full-view volume."""
        self.check_measured(measured_sino)
        n_u, n_v, _ = measured_sino.shape
        full = np.full((n_u, n_v, self.n_theta), fill, dtype=np.float64)
        full[:, :, self.measured] = measured_sino
        return full

    def restrict(self, full_sino):
        if full_sino.shape[2] != self.n_theta:
            raise ValueError(f"expected {self.n_theta} views, got {full_sino.shape[2]}")
        return full_sino[:, :, self.measured].copy()

    def to_dict(self):
        return {"n_theta": self.n_theta, "measured": [int(m) for m in self.measured]}

    @classmethod
    def from_dict(cls, payload):
        try:
            n_theta = int(payload["n_theta"])
            measured = payload["measured"]
        except (KeyError, TypeError) as exc:
            raise VolumeFormatError(f"malformed view mask: {exc}") from exc
        if len(measured) != n_theta:
            raise VolumeFormatError("view mask length does not match n_theta")
        return cls(np.asarray(measured, dtype=np.int64))

    def __eq__(self, other):
        return isinstance(other, ViewMask) and np.array_equal(self.measured, other.measured)

    def __repr__(self):
        return f"ViewMask(n_theta={self.n_theta}, n_measured={self.n_measured})"


def extract_block(vol, center, spec):
    """Return the block around `center` as a flat array, u fastest.

    Out-of-range coordinates are mirrored with `reflect_index`.
    """
    vol = np.asarray(vol)
    dims = vol.shape
    center = tuple(int(c) for c in center)
    if len(center) != 3 or any(c < 0 or c >= n for c, n in zip(center, dims)):
        raise IndexError(f"center {center} outside volume of shape {dims}")
    idx = []
    for c, r, n in zip(center, spec.radii, dims):
        idx.append(np.array([reflect_index(c + d, n) for d in range(-r, r + 1)]))
    block = vol[np.ix_(*idx)]
    return block.ravel(order="F")


def _split_path(path):
    path = Path(path)
    if path.suffix in (".json", ".raw"):
        path = path.with_suffix("")
    return path.with_suffix(".json"), path.with_suffix(".raw")


def save_volume(vol, path):
    """Write `vol` as ``<path>.json`` + ``<path>.raw`` (little-endian float32)."""
    vol = check_volume(vol)
    data = vol.astype("<f4")
    if not np.all(np.isfinite(data)):
        raise ValueError("volume values overflow float32")
    json_path, raw_path = _split_path(path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "dims": [int(n) for n in vol.shape],
        "dtype": FORMAT_DTYPE,
        "order": FORMAT_ORDER,
        "endianness": FORMAT_ENDIANNESS,
    }
    json_path.write_text(json.dumps(header) + "\n")
    raw_path.write_bytes(data.ravel(order="F").tobytes())
    return json_path, raw_path


def load_volume(path):
    json_path, raw_path = _split_path(path)
    try:
        header = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"{json_path}: malformed header ({exc})") from exc
    if not isinstance(header, dict):
        raise VolumeFormatError(f"{json_path}: header must be a JSON object")
    dims = header.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(n, int) and not isinstance(n, bool) and n > 0 for n in dims)
    ):
        raise VolumeFormatError(f"{json_path}: dims must be three positive integers, got {dims!r}")
    if header.get("dtype") != FORMAT_DTYPE:
        raise VolumeFormatError(f"{json_path}: unsupported dtype {header.get('dtype')!r}")
    if header.get("order", FORMAT_ORDER) != FORMAT_ORDER:
        raise VolumeFormatError(f"{json_path}: unsupported order {header.get('order')!r}")
    if header.get("endianness", FORMAT_ENDIANNESS) != FORMAT_ENDIANNESS:
        raise VolumeFormatError(f"{json_path}: unsupported endianness {header.get('endianness')!r}")
    payload = raw_path.read_bytes()
    expected = dims[0] * dims[1] * dims[2]
    if len(payload) != 4 * expected:
        raise VolumeFormatError(
            f"{raw_path}: payload holds {len(payload) / 4:g} values, header dims need {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4")
    if not np.all(np.isfinite(data)):
        raise VolumeFormatError(f"{raw_path}: non-finite values in payload")
    return data.astype(np.float64).reshape(dims, order="F")


def save_mask(mask, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(mask.to_dict()) + "\n")
    return path


def load_mask(path):
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"{path}: malformed view mask ({exc})") from exc
    return ViewMask.from_dict(payload)
