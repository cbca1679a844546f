import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from sinorestore.metrics import (
    RoiSpec,
    UndefinedCNR,
    cnr,
    fbp_reconstruct,
    ramp_kernel,
    read_report,
    rmse,
    ssim,
    write_report,
)
from sinorestore.simulator import PhantomSpec, ScanGeometry, forward_project, make_phantom
from sinorestore.volume import ViewMask


def analytic_disk_sinogram(r, mu, geom, n_slices=1):
    t = geom.detector_positions
    chord = 2 * mu * np.sqrt(np.clip(r * r - t * t, 0, None))
    return np.broadcast_to(chord[:, None, None], (geom.n_u, n_slices, geom.n_theta)).copy()


def disk_image(r, mu, n):
    xs = -1 + (np.arange(n) + 0.5) * 2 / n
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    return np.where(gx**2 + gy**2 <= r * r, mu, 0.0)


def test_ramp_kernel_values():
    h = ramp_kernel(4, 0.5)
    # offsets -3..3
    np.testing.assert_allclose(h[3], 1.0)
    np.testing.assert_allclose(h[[2, 4]], -1 / (np.pi * 0.5) ** 2)
    np.testing.assert_array_equal(h[[1, 5]], 0.0)
    np.testing.assert_allclose(h[[0, 6]], -1 / (3 * np.pi * 0.5) ** 2)


def test_fbp_recovers_disk():
    n = 128
    g = ScanGeometry(180, n)
    img = fbp_reconstruct(analytic_disk_sinogram(0.5, 1.0, g), g, (n, n))
    truth = disk_image(0.5, 1.0, n)
    fov = disk_image(0.95, 1.0, n) > 0
    assert rmse(img[:, :, 0][fov], truth[fov]) < 0.05
    # flat interior away from the edge
    inner = disk_image(0.35, 1.0, n) > 0
    assert abs(img[:, :, 0][inner].mean() - 1.0) < 0.02


def test_fbp_of_projected_phantom():
    spec = PhantomSpec.from_dict({"dims": [64, 64, 2], "ellipses": [
        {"center": [0.1, -0.1], "axes": [0.4, 0.25], "angle": 20, "value": 1.0}]})
    phantom = make_phantom(spec)
    g = ScanGeometry(90, 64)
    img = fbp_reconstruct(forward_project(phantom, g), g, (64, 64, 2))
    assert img.shape == (64, 64, 2)
    assert rmse(img, phantom) < 0.15


@settings(max_examples=10, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 2**16))
def test_fbp_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.normal(size=(2, 16, 2, 10))
    g = ScanGeometry(10, 16)
    lhs = fbp_reconstruct(a * p + b * q, g, (12, 12))
    rhs = a * fbp_reconstruct(p, g, (12, 12)) + b * fbp_reconstruct(q, g, (12, 12))
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_fbp_zero_and_errors():
    g = ScanGeometry(6, 8)
    assert np.all(fbp_reconstruct(np.zeros((8, 1, 6)), g, (8, 8)) == 0)
    with pytest.raises(ValueError):
        fbp_reconstruct(np.zeros((8, 1, 5)), g, (8, 8))
    with pytest.raises(ValueError):
        fbp_reconstruct(np.zeros((8, 2, 6)), g, (8, 8, 3))


def test_fbp_half_views_uses_measured_angles():
    n = 96
    g = ScanGeometry(60, n)
    sino = analytic_disk_sinogram(0.4, 1.0, g)
    sub = g.subset(ViewMask.alternate(60))
    half = fbp_reconstruct(sino[:, :, ::2], sub, (n, n))
    full = fbp_reconstruct(sino, g, (n, n))
    inner = disk_image(0.3, 1.0, n) > 0
    # same scale: the angular weight is pi over the number of views used
    assert half[:, :, 0][inner].mean() == pytest.approx(full[:, :, 0][inner].mean(), rel=0.01)


def test_rmse_properties():
    rng = np.random.default_rng(0)
    a, b, c = rng.normal(size=(3, 5, 5, 2))
    assert rmse(a, a) == 0
    assert rmse(a, b) == pytest.approx(rmse(b, a))
    assert rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-15
    assert rmse(np.zeros(4), np.full(4, 2.0)) == 2.0
    with pytest.raises(ValueError):
        rmse(np.zeros(3), np.zeros(4))


def sk_ssim(a, b, L):
    return structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=L)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ssim_matches_reference_implementation(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(40, 48))
    b = a + rng.normal(scale=0.1 * (seed + 1), size=a.shape)
    assert ssim(a, b, 1.0) == pytest.approx(sk_ssim(a, b, 1.0), abs=1e-6)


def test_ssim_volume_is_mean_of_slices():
    rng = np.random.default_rng(3)
    a = rng.uniform(size=(32, 32, 3))
    b = a + rng.normal(scale=0.2, size=a.shape)
    expected = np.mean([sk_ssim(a[:, :, s], b[:, :, s], 2.0) for s in range(3)])
    assert ssim(a, b, 2.0) == pytest.approx(expected, abs=1e-6)


def test_ssim_identity_symmetry_and_anticorrelation():
    rng = np.random.default_rng(4)
    a = rng.uniform(size=(24, 24))
    b = rng.uniform(size=(24, 24))
    assert ssim(a, a, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, b, 1.0) == pytest.approx(ssim(b, a, 1.0), abs=1e-15)
    assert ssim(a, 1.0 - a, 1.0) < 0
    with pytest.raises(ValueError):
        ssim(a, b, 0.0)
    with pytest.raises(ValueError):
        ssim(a[:5, :5], b[:5, :5], 1.0)


def roi_pair(shape):
    return RoiSpec.from_dict(
        {"foreground": {"box": [[0, 2], [0, 2], [0, 1]]}, "background": {"box": [[2, 4], [0, 4], [0, 1]]}}, shape
    )


def test_cnr_examples():
    img = np.zeros((4, 4, 1))
    img[:2, :2] = 5.0
    img[2:, :, 0] = [[1, 2, 1, 2], [2, 1, 2, 1]]
    roi = roi_pair(img.shape)
    assert cnr(img, roi) == pytest.approx(abs(5 - 1.5) / 0.5)
    flat = np.zeros((4, 4, 1))
    with pytest.raises(UndefinedCNR):
        cnr(flat, roi)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10), st.floats(-10, 10), st.integers(0, 2**16))
def test_cnr_affine_invariant(a, b, seed):
    img = np.random.default_rng(seed).normal(size=(4, 4, 1))
    roi = roi_pair(img.shape)
    assert cnr(a * img + b, roi) == pytest.approx(cnr(img, roi), rel=1e-9)
    assert cnr(-img, roi) == pytest.approx(cnr(img, roi), rel=1e-12)


def test_roi_validation():
    shape = (4, 4, 1)
    with pytest.raises(ValueError, match="overlap"):
        RoiSpec.from_dict({"foreground": {"box": [[0, 3], [0, 3], [0, 1]]},
                           "background": {"box": [[2, 4], [2, 4], [0, 1]]}}, shape)
    with pytest.raises(ValueError):
        RoiSpec.from_dict({"foreground": {"box": [[0, 5], [0, 1], [0, 1]]},
                           "background": {"box": [[2, 4], [2, 4], [0, 1]]}}, shape)
    roi = RoiSpec.from_dict({"foreground": {"indices": [[0, 0, 0], [1, 1, 0]]},
                             "background": {"box": [[2, 4], [2, 4], [0, 1]]}}, shape)
    assert roi.foreground.sum() == 2


def test_report_round_trip(tmp_path):
    rows = [{"image_label": "x_full", "rmse": 0.1, "ssim": 0.9, "cnr": 3.0},
            {"image_label": "x_half", "rmse": 0.2, "ssim": 0.5, "cnr": float("nan")}]
    write_report(rows, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        assert next(csv.reader(fh)) == ["image_label", "rmse", "ssim", "cnr"]
    back = read_report(tmp_path / "r.csv")
    assert back[0] == rows[0]
    assert np.isnan(back[1]["cnr"])
