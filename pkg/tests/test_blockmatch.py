import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from sinorestore.blockmatch import (
    MatchField,
    MatchParams,
    block_distance,
    compute_nlm_target,
    estimate_bandwidth,
    nlm_weights,
    patchmatch_knn,
)
from sinorestore.volume import BlockSpec, ViewMask, load_volume, reflect_index


def smooth_noise(shape, seed, sigma=1.5):
    noise = np.random.default_rng(seed).normal(size=shape)
    return ndimage.gaussian_filter(noise, sigma, mode="wrap")


def masked_distance_oracle(y, I, z, J, r, measured):
    """Loop over block offsets, skipping samples whose y-view is unmeasured."""
    total, count = 0.0, 0
    for du in range(-r[0], r[0] + 1):
        for dv in range(-r[1], r[1] + 1):
            for dt in range(-r[2], r[2] + 1):
                ky = reflect_index(I[2] + dt, y.shape[2])
                if not measured[ky]:
                    continue
                a = y[reflect_index(I[0] + du, y.shape[0]), reflect_index(I[1] + dv, y.shape[1]), ky]
                b = z[reflect_index(J[0] + du, z.shape[0]), reflect_index(J[1] + dv, z.shape[1]),
                      reflect_index(J[2] + dt, z.shape[2])]
                total += (a - b) ** 2
                count += 1
    return np.inf if count == 0 else total / count


def test_block_distance_examples():
    rng = np.random.default_rng(0)
    y = rng.normal(size=(8, 8, 8))
    spec = BlockSpec.cube(2)
    assert block_distance(y, (3, 4, 5), y, (3, 4, 5), spec) == 0.0
    assert block_distance(y, (3, 4, 5), y + 0.3, (3, 4, 5), spec) == pytest.approx(0.09, rel=1e-12)


def test_block_distance_masked_matches_oracle():
    rng = np.random.default_rng(1)
    y = rng.normal(size=(7, 6, 10))
    z = rng.normal(size=(9, 5, 8))
    mask = ViewMask.alternate(10)
    spec = BlockSpec(2, 1, 2)
    for _ in range(30):
        I = tuple(int(rng.integers(n)) for n in y.shape)
        J = tuple(int(rng.integers(n)) for n in z.shape)
        got = block_distance(y, I, z, J, spec, mask)
        assert got == pytest.approx(masked_distance_oracle(y, I, z, J, spec.radii, mask.measured), rel=1e-12)


def test_block_distance_no_measured_views_is_inf():
    y = np.zeros((5, 5, 10))
    mask = ViewMask.from_indices([9], 10)
    assert block_distance(y, (2, 2, 2), y, (2, 2, 2), BlockSpec(1, 1, 1), mask) == np.inf


def test_block_distance_bounds_checks():
    y = np.zeros((5, 5, 5))
    with pytest.raises(IndexError):
        block_distance(y, (5, 0, 0), y, (0, 0, 0), BlockSpec.cube(1))
    with pytest.raises(ValueError):
        block_distance(y, (0, 0, 0), np.zeros((2, 5, 5)), (0, 0, 0), BlockSpec.cube(2))


def check_field_invariants(field, z_shape):
    d = field.distances
    assert np.all(np.diff(d, axis=-1) >= 0)
    p = field.positions
    assert np.all(p >= 0) and np.all(p < np.array(z_shape))
    flat = p.reshape(-1, field.k, 3)
    for entries in flat[:: max(1, flat.shape[0] // 500)]:
        assert len({tuple(e) for e in entries}) == field.k


def test_field_invariants_and_monotone_sweeps():
    y = smooth_noise((16, 12, 14), 2)
    z = smooth_noise((14, 12, 16), 3)
    mask = ViewMask.alternate(14)
    field = patchmatch_knn(y, z, mask, MatchParams(block=BlockSpec(1, 1, 1), k=4, iterations=4))
    check_field_invariants(field, z.shape)
    assert len(field.history) == 5
    for before, after in zip(field.history, field.history[1:]):
        assert np.all(after <= before)
    np.testing.assert_array_equal(field.history[-1], field.best_distance)


def test_self_match_k1_improves_on_random_init():
    y = smooth_noise((16, 16, 16), 4)
    field = patchmatch_knn(y, y, None, MatchParams(block=BlockSpec.cube(1), k=1, iterations=3))
    for before, after in zip(field.history, field.history[1:]):
        assert np.all(after <= before)
    assert field.best_distance.mean() <= field.initial_distances.mean()
    # most voxels find themselves
    assert np.mean(field.best_distance == 0) > 0.9


def test_identity_offset_kept_as_rank_one():
    y = np.random.default_rng(5).normal(size=(4, 4, 3))
    # K equal to the number of reference positions puts every offset in play
    field = patchmatch_knn(y, y, None, MatchParams(block=BlockSpec.cube(1), k=y.size, iterations=1))
    idx = np.stack(np.meshgrid(*(np.arange(n) for n in y.shape), indexing="ij"), axis=-1)
    np.testing.assert_array_equal(field.positions[..., 0, :], idx)
    assert np.all(field.best_distance == 0)


def test_constant_volumes_degenerate_ties():
    y = np.full((6, 6, 6), 1.5)
    field = patchmatch_knn(y, y.copy(), None, MatchParams(block=BlockSpec.cube(1), k=5, iterations=2))
    assert np.all(field.distances == 0)
    check_field_invariants(field, y.shape)


def test_exact_copy_reaches_near_floor_matches():
    y = smooth_noise((32, 32, 32), 6)
    z = np.roll(y, (5, -7, 11), axis=(0, 1, 2))
    spec = BlockSpec.cube(2)
    field = patchmatch_knn(y, z, None, MatchParams(block=spec, iterations=5, seed=1))
    threshold = np.percentile(field.initial_distances, 5)
    assert np.mean(field.best_distance <= threshold) >= 0.9

    # brute-force nearest neighbour on a voxel sample gives the attainable floor
    r = spec.radii
    padded = np.pad(z, [(ri, ri) for ri in r], mode="reflect")
    windows = sliding_window_view(padded, spec.shape)
    ypad = np.pad(y, [(ri, ri) for ri in r], mode="reflect")
    rng = np.random.default_rng(0)
    floor_hits = 0
    for _ in range(40):
        I = tuple(int(rng.integers(32)) for _ in range(3))
        block = ypad[I[0]:I[0] + 5, I[1]:I[1] + 5, I[2]:I[2] + 5]
        exact = np.mean((windows - block) ** 2, axis=(3, 4, 5)).min()
        assert field.best_distance[I] >= exact - 1e-12
        floor_hits += exact <= threshold
    assert floor_hits == 40


def test_patchmatch_deterministic_per_seed():
    y = smooth_noise((10, 8, 12), 7)
    z = smooth_noise((10, 8, 12), 8)
    params = MatchParams(block=BlockSpec.cube(1), k=3, iterations=2, seed=11)
    a = patchmatch_knn(y, z, None, params)
    b = patchmatch_knn(y, z, None, params)
    c = patchmatch_knn(y, z, None, MatchParams(block=BlockSpec.cube(1), k=3, iterations=2, seed=12))
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.distances, b.distances)
    assert not np.array_equal(a.positions, c.positions)


def test_match_params_validation():
    for bad in ({"k": 0}, {"iterations": 0}, {"alpha": 1.0}, {"alpha": 0.0}, {"bandwidth": -1.0}, {"bandwidth": "wide"}):
        with pytest.raises((ValueError, TypeError)):
            MatchParams(**bad)
    with pytest.raises(ValueError):
        patchmatch_knn(np.zeros((3, 3, 3)), np.zeros((3, 3, 3)), None, MatchParams(block=BlockSpec.cube(1), k=28))


def field_of(distances, positions=None):
    distances = np.asarray(distances, dtype=float)
    if positions is None:
        positions = np.zeros(distances.shape + (3,), dtype=np.int64)
    return MatchField(np.asarray(positions, dtype=np.int64), distances)


def test_bandwidth_examples():
    assert estimate_bandwidth(field_of(np.zeros((2, 2, 2, 3)))) ** 2 == pytest.approx(1e-12)
    assert estimate_bandwidth(field_of(np.full((2, 3, 2, 4), 0.25))) == pytest.approx(0.5)
    rng = np.random.default_rng(9)
    d = np.sort(rng.uniform(size=(3, 5, 4, 6)), axis=-1)
    kth = sorted(d[..., -1].ravel())
    n = len(kth)
    median = kth[n // 2] if n % 2 else 0.5 * (kth[n // 2 - 1] + kth[n // 2])
    assert estimate_bandwidth(field_of(d)) ** 2 == pytest.approx(median, rel=1e-12)


def test_nlm_examples():
    a = 0.3
    z = np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1)
    pos = np.zeros((1, 1, 1, 3, 3), dtype=np.int64)
    pos[0, 0, 0, :, 0] = [0, 1, 2]
    three = field_of([[[[0.0, a * a, 4 * a * a]]]], pos)
    expected = (1 + 2 * np.exp(-1) + 3 * np.exp(-4)) / (1 + np.exp(-1) + np.exp(-4))
    assert compute_nlm_target(three, z, a)[0, 0, 0] == pytest.approx(expected, rel=1e-14)

    two = field_of([[[[0.7, 0.7]]]], pos[..., :2, :])
    assert compute_nlm_target(two, z, a)[0, 0, 0] == pytest.approx(1.5, rel=1e-15)

    one = field_of([[[[5.0]]]], pos[..., 2:, :])
    for bw in (1e-6, 1.0, 1e6):
        assert compute_nlm_target(one, z, bw)[0, 0, 0] == 3.0


def test_nlm_underflow_and_all_inf_fallbacks():
    w = nlm_weights(np.array([[1e300, 2e300, 3e300]]), 1e-6)
    np.testing.assert_array_equal(w, [[1.0, 0.0, 0.0]])
    w = nlm_weights(np.array([[np.inf, np.inf]]), 1.0)
    np.testing.assert_array_equal(w, [[1.0, 0.0]])
    with pytest.raises(ValueError):
        nlm_weights(np.zeros((1, 2)), 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.floats(1e-4, 1e3), st.integers(0, 2**16))
def test_nlm_weights_normalised(k, bandwidth, seed):
    rng = np.random.default_rng(seed)
    d = rng.exponential(scale=rng.uniform(1e-6, 1e3), size=(4, 3, 2, k))
    w = nlm_weights(d, bandwidth)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)


def test_target_is_convex_combination():
    y = smooth_noise((12, 8, 10), 10)
    z = smooth_noise((12, 8, 10), 11) * 3 + 1
    field = patchmatch_knn(y, z, ViewMask.alternate(10), MatchParams(block=BlockSpec.cube(1), k=4, iterations=2))
    for bw in (estimate_bandwidth(field), 1e-4, 10.0):
        target = compute_nlm_target(field, z, bw)
        assert target.shape == y.shape
        assert z.min() - 1e-12 <= target.min() and target.max() <= z.max() + 1e-12


def test_field_dump(tmp_path):
    y = smooth_noise((6, 5, 4), 12)
    mask = ViewMask.from_indices([0], 4)
    field = patchmatch_knn(y, y, mask, MatchParams(block=BlockSpec(1, 1, 0), k=2, iterations=1))
    field.dump(tmp_path / "match")
    dist = load_volume(tmp_path / "match_dist")
    assert dist.shape == (6, 5, 8)
    expected = np.where(np.isfinite(field.distances), field.distances, -1.0)
    np.testing.assert_allclose(dist[:, :, :4], expected[..., 0], rtol=1e-6)
    # views 1..3 see no measured sample with a zero theta radius
    assert np.all(dist[:, :, 1:4] == -1)
    offsets = json.loads((tmp_path / "match_offsets.json").read_text())
    assert offsets["k"] == 2
    assert np.array_equal(np.array(offsets["positions"]), field.positions)
