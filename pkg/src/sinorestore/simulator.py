"""Ellipse phantoms, parallel-beam projection and the low-dose noise model."""
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from ._validation import check_volume
from .volume import ViewMask

#: Named dose settings: incident photons per ray and electronic noise std (counts).
NOISE_PRESETS = {
    "low-noise": {"N0": 1.0e6, "sigma_e": 40.0},
    "high-noise": {"N0": 5.0e4, "sigma_e": 40.0},
}


@dataclass(frozen=True)
class Ellipse:
    """Ellipse in the unit field of view; `angle` is in degrees."""

    center: tuple
    axes: tuple
    angle: float
    value: float
    slices: tuple = None  # half-open [first, last) slice range; None = every slice

    def contains(self, x, y):
        cx, cy = self.center
        a, b = self.axes
        phi = np.deg2rad(self.angle)
        c, s = np.cos(phi), np.sin(phi)
        dx, dy = x - cx, y - cy
        xr = c * dx + s * dy
        yr = -s * dx + c * dy
        return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple
    ellipses: tuple = field(default_factory=tuple)

    @classmethod
    def from_dict(cls, payload):
        ellipses = tuple(
            Ellipse(
                center=tuple(e["center"]),
                axes=tuple(e["axes"]),
                angle=float(e.get("angle", 0.0)),
                value=float(e["value"]),
                slices=None if e.get("slices") is None else tuple(e["slices"]),
            )
            for e in payload.get("ellipses", [])
        )
        return cls(dims=tuple(int(n) for n in payload["dims"]), ellipses=ellipses)


class InvalidSpecError(ValueError):
    pass


def make_phantom(spec):
    """Render `spec` on its voxel grid; each voxel sums the ellipses containing its center."""
    n_x, n_y, n_s = spec.dims
    if min(n_x, n_y, n_s) < 1:
        raise InvalidSpecError(f"phantom dims must be positive, got {spec.dims}")
    xs = -1.0 + (np.arange(n_x) + 0.5) * (2.0 / n_x)
    ys = -1.0 + (np.arange(n_y) + 0.5) * (2.0 / n_y)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    img = np.zeros((n_x, n_y, n_s))
    for e in spec.ellipses:
        a, b = e.axes
        if a <= 0 or b <= 0:
            raise InvalidSpecError(f"ellipse semi-axes must be positive: {e}")
        if np.hypot(*e.center) + max(a, b) > 1.0 + 1e-12:
            raise InvalidSpecError(f"ellipse leaves the unit field of view: {e}")
        lo, hi = (0, n_s) if e.slices is None else e.slices
        if not 0 <= lo < hi <= n_s:
            raise InvalidSpecError(f"slice range {e.slices} outside [0, {n_s})")
        inside = e.contains(gx, gy)
        img[:, :, lo:hi] += np.where(inside, e.value, 0.0)[:, :, None]
    if img.min() < -1e-12:
        raise InvalidSpecError("ellipse composition produces negative attenuation")
    return np.maximum(img, 0.0)


@dataclass(frozen=True)
class ScanGeometry:
    """Parallel-beam geometry; one sinogram row per image slice."""

    n_theta: int
    n_u: int
    angles: np.ndarray = None
    pitch: float = None

    def __post_init__(self):
        if self.n_theta < 2 or self.n_u < 2:
            raise InvalidSpecError("n_theta and n_u must be >= 2")
        if self.angles is None:
            object.__setattr__(self, "angles", np.arange(self.n_theta) * (np.pi / self.n_theta))
        else:
            angles = np.asarray(self.angles, dtype=np.float64)
            if angles.shape != (self.n_theta,) or np.any(np.diff(angles) <= 0):
                raise InvalidSpecError("angles must be n_theta strictly increasing values")
            object.__setattr__(self, "angles", angles)
        if self.pitch is None:
            object.__setattr__(self, "pitch", 2.0 / self.n_u)

    @property
    def detector_positions(self):
        return (np.arange(self.n_u) - 0.5 * (self.n_u - 1)) * self.pitch

    def subset(self, mask):
        """Geometry restricted to the measured views of `mask`."""
        return ScanGeometry(mask.n_measured, self.n_u, self.angles[mask.measured], self.pitch)


@nb.njit(cache=True)
def _bilinear(img, s, fx, fy):
    n_x, n_y = img.shape[0], img.shape[1]
    i0 = int(np.floor(fx))
    j0 = int(np.floor(fy))
    tx = fx - i0
    ty = fy - j0
    acc = 0.0
    for di in range(2):
        i = i0 + di
        if i < 0 or i >= n_x:
            continue
        wx = tx if di == 1 else 1.0 - tx
        for dj in range(2):
            j = j0 + dj
            if j < 0 or j >= n_y:
                continue
            wy = ty if dj == 1 else 1.0 - ty
            acc += wx * wy * img[i, j, s]
    return acc


@nb.njit(cache=True)
def _project(img, angles, det, out):
    n_x, n_y, n_s = img.shape
    dx = 2.0 / n_x
    dy = 2.0 / n_y
    dt = 0.5 * min(dx, dy)
    half = np.sqrt(2.0)
    n_t = int(np.ceil(2.0 * half / dt))
    dt = 2.0 * half / n_t
    for k in range(angles.shape[0]):
        c = np.cos(angles[k])
        s_ = np.sin(angles[k])
        for i in range(det.shape[0]):
            u = det[i]
            for m in range(n_t):
                t = -half + (m + 0.5) * dt
                x = u * c - t * s_
                y = u * s_ + t * c
                fx = (x + 1.0) / dx - 0.5
                fy = (y + 1.0) / dy - 0.5
                if fx <= -1.0 or fy <= -1.0 or fx >= n_x or fy >= n_y:
                    continue
                for sl in range(n_s):
                    out[i, sl, k] += _bilinear(img, sl, fx, fy) * dt


def forward_project(image, geom):
    """Line integrals through each slice by ray marching (half-voxel steps, bilinear)."""
    image = check_volume(image, "image")
    out = np.zeros((geom.n_u, image.shape[2], geom.n_theta))
    _project(np.ascontiguousarray(image), geom.angles, geom.detector_positions, out)
    return out


@dataclass(frozen=True)
class NoiseSpec:
    N0: float
    sigma_e: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.N0) or self.N0 <= 0:
            raise InvalidSpecError(f"N0 must be > 0, got {self.N0}")
        if not np.isfinite(self.sigma_e) or self.sigma_e < 0:
            raise InvalidSpecError(f"sigma_e must be >= 0, got {self.sigma_e}")

    @classmethod
    def preset(cls, name, seed=0):
        try:
            return cls(seed=seed, **NOISE_PRESETS[name])
        except KeyError:
            raise InvalidSpecError(f"unknown noise preset {name!r}; choose from {sorted(NOISE_PRESETS)}") from None


def add_noise(y_t, noise):
    """Poisson photon counts plus Gaussian electronic noise, back to log domain.

    Counts are clamped at 1 before the logarithm.
    """
    y_t = check_volume(y_t, "y_t")
    if np.any(y_t < 0):
        raise InvalidSpecError("line integrals must be non-negative")
    rng = np.random.Generator(np.random.Philox(noise.seed))
    counts = rng.poisson(noise.N0 * np.exp(-y_t)).astype(np.float64)
    if noise.sigma_e > 0:
        counts += rng.normal(0.0, noise.sigma_e, size=y_t.shape)
    counts = np.maximum(counts, 1.0)
    return np.log(noise.N0 / counts)


def subsample_views(y, pattern="alternate"):
    """Keep a subset of views; returns ``(measured, mask)``.

    `pattern` is ``"alternate"`` (even-indexed views) or a list of view indices.
    """
    y = check_volume(y, "y")
    n_theta = y.shape[2]
    if isinstance(pattern, str):
        if pattern != "alternate":
            raise ValueError(f"unknown subsampling pattern {pattern!r}")
        mask = ViewMask.alternate(n_theta)
    else:
        mask = ViewMask.from_indices(pattern, n_theta)
    return mask.restrict(y), mask


def compute_weights(y_measured):
    """Inverse-variance weights ``exp(-y)``, scaled so the largest is 1."""
    y_measured = check_volume(y_measured, "y_measured")
    return np.exp(-(y_measured - y_measured.min()))


# Stand-ins for two different heads: a skull shell of 2.4 around brain matter
# of 1.2 and a few low-contrast inclusions, some confined to a slice range.
# The sibling shares the skull up to a small anisotropic scale and a
# 3 degree rotation but has its own interior structures, like a second subject
# registered into the same space.
_HEAD = [
    {"center": [0.0, 0.0], "axes": [0.72, 0.92], "angle": 0.0, "value": 2.4},
    {"center": [0.0, -0.015], "axes": [0.67, 0.87], "angle": 0.0, "value": -1.2},
    {"center": [0.2, 0.05], "axes": [0.1, 0.3], "angle": -18.0, "value": -0.2},
    {"center": [-0.2, 0.05], "axes": [0.14, 0.38], "angle": 18.0, "value": -0.2},
    {"center": [0.0, 0.35], "axes": [0.2, 0.24], "angle": 0.0, "value": 0.15},
    {"center": [0.0, -0.1], "axes": [0.046, 0.046], "angle": 0.0, "value": 0.2},
    {"center": [-0.08, -0.6], "axes": [0.046, 0.023], "angle": 0.0, "value": 0.2, "slices": [2, 6]},
    {"center": [0.06, -0.6], "axes": [0.023, 0.046], "angle": 90.0, "value": 0.2, "slices": [0, 5]},
    {"center": [0.3, -0.35], "axes": [0.09, 0.06], "angle": 30.0, "value": 0.2, "slices": [3, 8]},
]

_HEAD_SIBLING = [
    {"center": [0.0, 0.0], "axes": [0.72 * 1.03, 0.92 * 0.98], "angle": 3.0, "value": 2.4},
    {"center": [0.0, -0.015], "axes": [0.67 * 1.03, 0.87 * 0.98], "angle": 3.0, "value": -1.2},
    {"center": [0.22, -0.05], "axes": [0.12, 0.26], "angle": -10.0, "value": -0.2},
    {"center": [-0.24, 0.08], "axes": [0.1, 0.32], "angle": 25.0, "value": -0.2},
    {"center": [0.05, 0.42], "axes": [0.16, 0.2], "angle": 10.0, "value": 0.15},
    {"center": [-0.3, -0.4], "axes": [0.08, 0.08], "angle": 0.0, "value": 0.2},
    {"center": [0.1, -0.15], "axes": [0.06, 0.04], "angle": 45.0, "value": 0.2, "slices": [1, 7]},
    {"center": [0.35, 0.3], "axes": [0.05, 0.09], "angle": 0.0, "value": 0.2, "slices": [0, 4]},
]

PHANTOM_PRESETS = {"head": _HEAD, "head-sibling": _HEAD_SIBLING}


def phantom_preset(name, dims):
    try:
        ellipses = PHANTOM_PRESETS[name]
    except KeyError:
        raise InvalidSpecError(f"unknown phantom preset {name!r}; choose from {sorted(PHANTOM_PRESETS)}") from None
    n_s = dims[2]
    scaled = []
    for e in ellipses:
        e = dict(e)
        if "slices" in e:
            # Presets are authored for 8 slices.
            lo, hi = e["slices"]
            lo, hi = (lo * n_s) // 8, max((hi * n_s) // 8, (lo * n_s) // 8 + 1)
            e["slices"] = [min(lo, n_s - 1), min(hi, n_s)]
        scaled.append(e)
    return PhantomSpec.from_dict({"dims": list(dims), "ellipses": scaled})


__all__ = [
    "Ellipse",
    "InvalidSpecError",
    "NOISE_PRESETS",
    "NoiseSpec",
    "PHANTOM_PRESETS",
    "PhantomSpec",
    "ScanGeometry",
    "add_noise",
    "compute_weights",
    "forward_project",
    "make_phantom",
    "phantom_preset",
    "subsample_views",
]
