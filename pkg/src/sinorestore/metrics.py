"""Parallel-beam filtered backprojection and image-quality metrics."""
import csv
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy import ndimage

from ._validation import check_same_shape, check_volume

REPORT_COLUMNS = ("image_label", "rmse", "ssim", "cnr")


def ramp_kernel(n, pitch):
    """Band-limited (Ram-Lak) ramp kernel sampled at ``-n+1 .. n-1``."""
    m = np.arange(-(n - 1), n)
    h = np.zeros(m.size)
    h[m == 0] = 1.0 / (4.0 * pitch**2)
    odd = m % 2 == 1
    h[odd] = -1.0 / (np.pi * m[odd] * pitch) ** 2
    return h


def ramp_filter(sino, pitch):
    """Convolve every view (axis 0) with the ramp kernel via zero-padded FFTs."""
    n_u = sino.shape[0]
    # kernel support is 2 n_u - 1, so any length >= 2 n_u avoids wrap-around
    size = 1 << int(np.ceil(np.log2(2 * n_u)))
    h = ramp_kernel(n_u, pitch)
    # kernel index m sits at position (m mod size) for a circular convolution
    kernel = np.zeros(size)
    m = np.arange(-(n_u - 1), n_u)
    kernel[m % size] = h
    spectrum = np.fft.rfft(kernel)
    padded = np.fft.rfft(sino, n=size, axis=0)
    filtered = np.fft.irfft(padded * spectrum.reshape((-1,) + (1,) * (sino.ndim - 1)), n=size, axis=0)
    return pitch * filtered[:n_u]


@nb.njit(cache=True)
def _backproject(filtered, angles, det0, pitch, n_x, n_y, out):
    n_u, n_s, n_t = filtered.shape
    dx = 2.0 / n_x
    dy = 2.0 / n_y
    for k in range(n_t):
        c = np.cos(angles[k])
        s_ = np.sin(angles[k])
        for i in range(n_x):
            x = -1.0 + (i + 0.5) * dx
            for j in range(n_y):
                y = -1.0 + (j + 0.5) * dy
                fu = (x * c + y * s_ - det0) / pitch
                u0 = int(np.floor(fu))
                if u0 < -1 or u0 >= n_u:
                    continue
                t = fu - u0
                for sl in range(n_s):
                    v = 0.0
                    if u0 >= 0:
                        v += (1.0 - t) * filtered[u0, sl, k]
                    if u0 + 1 < n_u:
                        v += t * filtered[u0 + 1, sl, k]
                    out[i, j, sl] += v


def fbp_reconstruct(sino, geom, image_dims):
    """Filtered backprojection of each sinogram row onto an ``(n_x, n_y)`` grid.

    `image_dims` is ``(n_x, n_y)`` or ``(n_x, n_y, n_slices)``; the slice count
    must equal the sinogram's v extent.
    """
    sino = check_volume(sino, "sino")
    if geom.n_theta < 2:
        raise ValueError("filtered backprojection needs at least 2 views")
    if sino.shape[0] != geom.n_u or sino.shape[2] != geom.n_theta:
        raise ValueError(f"sinogram {sino.shape} does not match geometry (n_u={geom.n_u}, n_theta={geom.n_theta})")
    n_x, n_y = int(image_dims[0]), int(image_dims[1])
    if len(image_dims) > 2 and int(image_dims[2]) != sino.shape[1]:
        raise ValueError(f"image has {image_dims[2]} slices, sinogram has {sino.shape[1]} rows")
    filtered = np.ascontiguousarray(ramp_filter(sino, geom.pitch))
    out = np.zeros((n_x, n_y, sino.shape[1]))
    det0 = float(geom.detector_positions[0])
    _backproject(filtered, geom.angles, det0, float(geom.pitch), n_x, n_y, out)
    return out * (np.pi / geom.n_theta)


def rmse(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(a, b, dynamic_range, window=None):
    """Local SSIM of two 2D images (reflect padding)."""
    window = _gaussian_window() if window is None else window
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2

    def smooth(img):
        return ndimage.correlate(img, window, mode="reflect")

    mu_a, mu_b = smooth(a), smooth(b)
    var_a = smooth(a * a) - mu_a**2
    var_b = smooth(b * b) - mu_b**2
    cov = smooth(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, dynamic_range):
    """Mean SSIM over slices (axis 2), 11x11 Gaussian window with sigma 1.5.

    Each slice's map is averaged after discarding the 5-pixel border where
    the window overhangs the image.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if not dynamic_range > 0:
        raise ValueError(f"dynamic_range must be > 0, got {dynamic_range}")
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ValueError("images must be at least 11x11 for SSIM")
    pad = 5
    values = []
    for s in range(a.shape[2]):
        m = ssim_map(a[:, :, s], b[:, :, s], dynamic_range)
        values.append(m[pad:-pad, pad:-pad].mean())
    return float(np.mean(values))


class UndefinedCNR(ValueError):
    pass


@dataclass(frozen=True)
class RoiSpec:
    """Foreground/background voxel sets as boolean masks over the image."""

    foreground: np.ndarray
    background: np.ndarray

    def __post_init__(self):
        if self.foreground.shape != self.background.shape:
            raise ValueError("ROI masks must share a shape")
        if not self.foreground.any() or not self.background.any():
            raise ValueError("ROI regions must be non-empty")
        if np.any(self.foreground & self.background):
            raise ValueError("foreground and background ROIs overlap")

    @classmethod
    def from_dict(cls, payload, shape):
        return cls(_region(payload["foreground"], shape), _region(payload["background"], shape))


def _region(spec, shape):
    """Boolean mask from ``{"box": [[x0, x1], [y0, y1], [s0, s1]]}`` or ``{"indices": [[x, y, s], ...]}``."""
    mask = np.zeros(shape, dtype=bool)
    if "box" in spec:
        box = spec["box"]
        if len(box) != 3:
            raise ValueError("ROI box needs three [start, stop) ranges")
        for (lo, hi), n in zip(box, shape):
            if not 0 <= lo < hi <= n:
                raise ValueError(f"ROI box range [{lo}, {hi}) outside [0, {n})")
        mask[tuple(slice(lo, hi) for lo, hi in box)] = True
    elif "indices" in spec:
        idx = np.asarray(spec["indices"], dtype=np.int64)
        if idx.ndim != 2 or idx.shape[1] != 3:
            raise ValueError("ROI indices must be a list of [x, y, slice] triples")
        if np.any(idx < 0) or np.any(idx >= np.array(shape)):
            raise ValueError("ROI index out of bounds")
        mask[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    else:
        raise ValueError("ROI region needs 'box' or 'indices'")
    return mask


def cnr(img, roi):
    """Contrast-to-noise ratio ``|mean_fg - mean_bg| / std_bg``."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape != roi.foreground.shape:
        raise ValueError(f"image {img.shape} does not match ROI {roi.foreground.shape}")
    fg = img[roi.foreground]
    bg = img[roi.background]
    sd = bg.std()
    if sd == 0:
        raise UndefinedCNR("background standard deviation is zero")
    return float(abs(fg.mean() - bg.mean()) / sd)


def write_report(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([row["image_label"]] + [repr(float(row[k])) for k in REPORT_COLUMNS[1:]])


def read_report(path):
    with open(path, newline="") as fh:
        return [
            {k: (v if k == "image_label" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]
