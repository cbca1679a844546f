"""k-nearest block matching against a reference scan and the non-local target.

For every voxel of the query sinogram we keep the K blocks of the reference
scan with the smallest masked mean-squared difference.  The search is
PatchMatch: random initialisation followed by sweeps of propagation from the
causal neighbours and a random search whose window shrinks geometrically.
Only samples whose view (in the query frame) has been measured take part in
a distance.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from ._validation import check_int, check_volume
from .volume import BlockSpec, ViewMask, reflect_index, save_volume

BANDWIDTH_FLOOR = 1e-12


@dataclass(frozen=True)
class MatchParams:
    block: BlockSpec = field(default_factory=lambda: BlockSpec(2, 2, 2))
    k: int = 8
    iterations: int = 5
    alpha: float = 0.5
    seed: int = 0
    bandwidth: object = "auto"

    def __post_init__(self):
        check_int(self.k, "k", minimum=1)
        check_int(self.iterations, "iterations", minimum=1)
        check_int(self.seed, "seed", minimum=0)
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.bandwidth != "auto":
            if isinstance(self.bandwidth, str) or not float(self.bandwidth) > 0:
                raise ValueError(f"bandwidth must be 'auto' or > 0, got {self.bandwidth!r}")


@dataclass
class MatchField:
    """K candidate reference positions per voxel, sorted by distance.

    `positions` has shape ``dims + (K, 3)`` and holds absolute (i', j', k')
    coordinates in the reference scan; `distances` has shape ``dims + (K,)``.
    """

    positions: np.ndarray
    distances: np.ndarray
    history: list = field(default_factory=list)
    initial_distances: np.ndarray = None

    @property
    def dims(self):
        return self.distances.shape[:3]

    @property
    def k(self):
        return self.distances.shape[3]

    @property
    def best_distance(self):
        return self.distances[..., 0]

    def dump(self, path):
        """Write distances as a volume (ranks stacked along theta) plus offsets as JSON.

        Infinite distances are stored as -1.
        """
        path = Path(path)
        n_u, n_v, n_t = self.dims
        dist = np.where(np.isfinite(self.distances), self.distances, -1.0)
        stacked = np.concatenate([dist[..., r] for r in range(self.k)], axis=2)
        save_volume(stacked, path.with_name(path.name + "_dist"))
        offsets = {
            "dims": [n_u, n_v, n_t],
            "k": self.k,
            "layout": "positions[i][j][k][rank] = [i', j', k']",
            "positions": self.positions.tolist(),
        }
        path.with_name(path.name + "_offsets.json").write_text(json.dumps(offsets))


@nb.njit(cache=True)
def _measured_counts(meas, n_theta, r_t, plane):
    counts = np.empty(n_theta, dtype=np.int64)
    for k in range(n_theta):
        c = 0
        for dt in range(-r_t, r_t + 1):
            if meas[reflect_index(k + dt, n_theta)]:
                c += 1
        counts[k] = c * plane
    return counts


@nb.njit(cache=True)
def _reflect_table(n, r):
    """``table[x + r] == reflect_index(x, n)`` for ``x`` in ``[-r, n + r)``."""
    table = np.empty(n + 2 * r, dtype=np.int64)
    for x in range(-r, n + r):
        table[x + r] = reflect_index(x, n)
    return table


@nb.njit(cache=True)
def _block_dist(y, i, j, k, z, p, q, r, tabs, radii, meas, n_meas, bound):
    """Masked mean-squared block difference; stops early once it exceeds `bound`.

    `tabs` holds reflection tables (y_u, y_v, y_t, z_u, z_v, z_t), each offset
    by the block radius of its axis.
    """
    if n_meas == 0:
        return np.inf
    ru, rv, rt = radii[0], radii[1], radii[2]
    yu, yv, yt, zu, zv, zt = tabs
    limit = bound * n_meas
    acc = 0.0
    for dt in range(-rt, rt + 1):
        ky = yt[k + dt + rt]
        if not meas[ky]:
            continue
        kz = zt[r + dt + rt]
        for dv in range(-rv, rv + 1):
            jy = yv[j + dv + rv]
            jz = zv[q + dv + rv]
            for du in range(-ru, ru + 1):
                d = y[yu[i + du + ru], jy, ky] - z[zu[p + du + ru], jz, kz]
                acc += d * d
            if acc > limit:
                return acc / n_meas
    return acc / n_meas


@nb.njit(cache=True)
def _sift_down(hd, hp, pos):
    n = hd.shape[0]
    while True:
        child = 2 * pos + 1
        if child >= n:
            break
        if child + 1 < n and hd[child + 1] > hd[child]:
            child += 1
        if hd[child] <= hd[pos]:
            break
        hd[pos], hd[child] = hd[child], hd[pos]
        for c in range(3):
            hp[pos, c], hp[child, c] = hp[child, c], hp[pos, c]
        pos = child


@nb.njit(cache=True)
def _contains(hp, p, q, r):
    for m in range(hp.shape[0]):
        if hp[m, 0] == p and hp[m, 1] == q and hp[m, 2] == r:
            return True
    return False


@nb.njit(cache=True)
def _try_candidate(y, i, j, k, z, p, q, r, tabs, radii, meas, n_meas, hd, hp):
    if _contains(hp, p, q, r):
        return
    d = _block_dist(y, i, j, k, z, p, q, r, tabs, radii, meas, n_meas, hd[0])
    if d < hd[0]:
        hd[0] = d
        hp[0, 0] = p
        hp[0, 1] = q
        hp[0, 2] = r
        _sift_down(hd, hp, 0)


@nb.njit(cache=True)
def _init_field(y, z, meas, counts, tabs, radii, pos, dist, seed):
    np.random.seed(seed)
    nu, nv, nt = y.shape
    zu, zv, zt = z.shape
    K = dist.shape[3]
    for k in range(nt):
        for j in range(nv):
            for i in range(nu):
                hp = pos[i, j, k]
                hd = dist[i, j, k]
                for m in range(K):
                    hp[m, 0] = -1
                    hp[m, 1] = -1
                    hp[m, 2] = -1
                for m in range(K):
                    while True:
                        p = np.random.randint(0, zu)
                        q = np.random.randint(0, zv)
                        r = np.random.randint(0, zt)
                        if not _contains(hp, p, q, r):
                            break
                    hp[m, 0] = p
                    hp[m, 1] = q
                    hp[m, 2] = r
                    hd[m] = _block_dist(y, i, j, k, z, p, q, r, tabs, radii, meas, counts[k], np.inf)
                for m in range(K // 2 - 1, -1, -1):
                    _sift_down(hd, hp, m)


@nb.njit(cache=True)
def _sweep(y, z, meas, counts, tabs, radii, pos, dist, reverse, alpha, seed):
    np.random.seed(seed)
    nu, nv, nt = y.shape
    zdims = np.array(z.shape)
    dims = np.array(y.shape)
    K = dist.shape[3]
    step = -1 if reverse else 1
    cur = np.empty(3, dtype=np.int64)
    cand = np.empty(3, dtype=np.int64)
    for kk in range(nt):
        k = nt - 1 - kk if reverse else kk
        for jj in range(nv):
            j = nv - 1 - jj if reverse else jj
            for ii in range(nu):
                i = nu - 1 - ii if reverse else ii
                hp = pos[i, j, k]
                hd = dist[i, j, k]
                n_meas = counts[k]
                cur[0] = i
                cur[1] = j
                cur[2] = k
                # propagation from the already-visited neighbour along each axis
                for a in range(3):
                    na = cur[a] - step
                    if na < 0 or na >= dims[a]:
                        continue
                    ni, nj, nk = i, j, k
                    if a == 0:
                        ni = na
                    elif a == 1:
                        nj = na
                    else:
                        nk = na
                    nb_pos = pos[ni, nj, nk]
                    for m in range(K):
                        for c in range(3):
                            cand[c] = nb_pos[m, c]
                        cand[a] += step
                        if cand[a] < 0 or cand[a] >= zdims[a]:
                            continue
                        _try_candidate(y, i, j, k, z, cand[0], cand[1], cand[2],
                                       tabs, radii, meas, n_meas, hd, hp)
                # random search around the current best
                best = 0
                for m in range(1, K):
                    if hd[m] < hd[best]:
                        best = m
                c0 = hp[best, 0]
                c1 = hp[best, 1]
                c2 = hp[best, 2]
                scale = 1.0
                while True:
                    r0 = int(zdims[0] * scale)
                    r1 = int(zdims[1] * scale)
                    r2 = int(zdims[2] * scale)
                    if r0 < 1 and r1 < 1 and r2 < 1:
                        break
                    p = min(max(c0 + np.random.randint(-r0, r0 + 1), 0), zdims[0] - 1)
                    q = min(max(c1 + np.random.randint(-r1, r1 + 1), 0), zdims[1] - 1)
                    r = min(max(c2 + np.random.randint(-r2, r2 + 1), 0), zdims[2] - 1)
                    _try_candidate(y, i, j, k, z, p, q, r, tabs, radii, meas, n_meas, hd, hp)
                    scale *= alpha


def check_block_fits(spec, y_dims, z_dims):
    """Raise ValueError unless blocks of `spec` are usable on both volumes."""
    for n_z, width in zip(z_dims, spec.shape):
        if n_z < width and n_z > 1:
            raise ValueError(f"reference scan {tuple(z_dims)} is smaller than the block {spec.shape}")
    spec.check_fits(y_dims)
    spec.check_fits(z_dims)


def _prepare(y, z, mask, spec):
    y = check_volume(y, "y")
    z = check_volume(z, "z")
    if mask is None:
        mask = ViewMask.full(y.shape[2])
    if mask.n_theta != y.shape[2]:
        raise ValueError(f"mask has {mask.n_theta} views, y has {y.shape[2]}")
    check_block_fits(spec, y.shape, z.shape)
    ru, rv, rt = spec.radii
    counts = _measured_counts(mask.measured, y.shape[2], rt, (2 * ru + 1) * (2 * rv + 1))
    tabs = tuple(_reflect_table(n, r) for n, r in zip(y.shape + z.shape, spec.radii * 2))
    radii = np.array(spec.radii, dtype=np.int64)
    # u-contiguous layout keeps the innermost block loop on adjacent samples
    return np.asfortranarray(y), np.asfortranarray(z), mask, counts, tabs, radii


def block_distance(y, I, z, I_ref, spec, mask=None):
    """Mean squared difference between the block of `y` at `I` and of `z` at `I_ref`.

    Only samples from measured views of `y` count; returns ``inf`` if none do.
    """
    y, z, mask, counts, tabs, radii = _prepare(y, z, mask, spec)
    i, j, k = (int(c) for c in I)
    p, q, r = (int(c) for c in I_ref)
    if not all(0 <= c < n for c, n in zip((i, j, k), y.shape)):
        raise IndexError(f"{I} outside {y.shape}")
    if not all(0 <= c < n for c, n in zip((p, q, r), z.shape)):
        raise IndexError(f"{I_ref} outside {z.shape}")
    return float(_block_dist(y, i, j, k, z, p, q, r, tabs, radii, mask.measured, counts[k], np.inf))


def _sort_field(pos, dist):
    order = np.argsort(dist, axis=-1, kind="stable")
    dist = np.take_along_axis(dist, order, axis=-1)
    pos = np.take_along_axis(pos, order[..., None], axis=-2)
    return pos, dist


def patchmatch_knn(y, z, mask=None, params=None):
    """K nearest reference blocks for every voxel of `y`.

    ``field.history`` holds the per-voxel best distance after initialisation
    and after every sweep.
    """
    params = params or MatchParams()
    y, z, mask, counts, tabs, radii = _prepare(y, z, mask, params.block)
    K = params.k
    if K > z.size:
        raise ValueError(f"k={K} exceeds the {z.size} positions of the reference scan")
    pos = np.empty(y.shape + (K, 3), dtype=np.int64)
    dist = np.empty(y.shape + (K,), dtype=np.float64)
    seeds = np.random.SeedSequence(params.seed).generate_state(params.iterations + 1)
    seeds = [int(s) for s in seeds]
    _init_field(y, z, mask.measured, counts, tabs, radii, pos, dist, seeds[0])
    history = [dist.min(axis=-1)]
    initial = dist.copy()
    for sweep in range(params.iterations):
        _sweep(y, z, mask.measured, counts, tabs, radii, pos, dist,
               sweep % 2 == 1, params.alpha, seeds[sweep + 1])
        history.append(dist.min(axis=-1))
    # Early exit only ever truncates rejected candidates, so retained
    # distances are exact.
    pos, dist = _sort_field(pos, dist)
    return MatchField(pos, dist, history, initial)


def estimate_bandwidth(field):
    """Kernel bandwidth `a` with ``a**2`` = median K-th best distance (floored)."""
    kth = np.asarray(field.distances)[..., -1]
    kth = kth[np.isfinite(kth)]
    if kth.size == 0:
        return float(np.sqrt(BANDWIDTH_FLOOR))
    a2 = max(float(np.median(kth)), BANDWIDTH_FLOOR)
    return float(np.sqrt(a2))


def nlm_weights(distances, bandwidth):
    """Normalised kernel weights ``exp(-d / a**2)`` over the candidate axis."""
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    d = np.asarray(distances, dtype=np.float64)
    dmin = d.min(axis=-1, keepdims=True)
    finite = np.isfinite(dmin)
    with np.errstate(invalid="ignore", over="ignore"):
        w = np.where(np.isfinite(d), np.exp(-(d - np.where(finite, dmin, 0.0)) / bandwidth**2), 0.0)
    total = w.sum(axis=-1, keepdims=True)
    dead = total[..., 0] <= 0
    if np.any(dead):
        # nothing usable: put all weight on the nearest candidate
        w[dead] = 0.0
        first = np.argmin(d[dead], axis=-1)
        w[dead, first] = 1.0
        total = w.sum(axis=-1, keepdims=True)
    return w / total


def compute_nlm_target(field, z, bandwidth):
    """Non-local target: kernel-weighted average of reference values at the matches."""
    z = check_volume(z, "z")
    w = nlm_weights(field.distances, bandwidth)
    p = field.positions
    values = z[p[..., 0], p[..., 1], p[..., 2]]
    return np.sum(w * values, axis=-1)
