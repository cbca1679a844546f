"""Split Bregman restoration of an undersampled, noisy sinogram.

Minimises

    sum W (M y - y_n)^2 + lambda_s |y - y*|^2 + lambda_h R_h(y)

by splitting ``f = y`` and ``g_p = H_p y`` for the three plane Hessians
``H_p`` and alternating closed-form updates of f, soft-thresholding of g,
Gauss-Seidel sweeps for y and Bregman updates of b1..b4.
"""
import csv
import logging
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np

from ._validation import NumericalFailure, check_finite_result, check_int, check_volume
from .blockmatch import MatchParams, compute_nlm_target, estimate_bandwidth, patchmatch_knn
from .operators import (
    PLANES,
    cost_J,
    hessian_adjoint,
    hessian_planes,
    plane_hessian,
    triple_add,
    triple_sqnorm,
    triple_zeros,
    vector_shrink,
)
from .volume import ViewMask

logger = logging.getLogger(__name__)

DIAGNOSTIC_COLUMNS = ("iter", "dy_sq", "res_yf", "res_g1", "res_g2", "res_g3", "J")


@dataclass(frozen=True)
class RestoreParams:
    lambda_s: float = 1.0
    lambda_h: float = 1e-4
    mu1: float = 1e-3
    mu2: float = 1e-3
    epsilon: float = 1e-8
    max_iters: int = 100
    gs_sweeps: int = 2
    match: MatchParams = field(default_factory=MatchParams)

    def __post_init__(self):
        # lambda_s = 0 or lambda_h = 0 are legal reductions of the model.
        for name in ("lambda_s", "lambda_h"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("mu1", "mu2", "epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        check_int(self.max_iters, "max_iters", minimum=1)
        check_int(self.gs_sweeps, "gs_sweeps", minimum=1)


@dataclass
class SolverState:
    y: np.ndarray
    f: np.ndarray
    g: list
    b1: np.ndarray
    b: list
    iteration: int = 0
    diagnostics: list = field(default_factory=list)

    def copy(self):
        return SolverState(
            self.y.copy(),
            self.f.copy(),
            [t._replace(aa=t.aa.copy(), ab=t.ab.copy(), bb=t.bb.copy()) for t in self.g],
            self.b1.copy(),
            [t._replace(aa=t.aa.copy(), ab=t.ab.copy(), bb=t.bb.copy()) for t in self.b],
            self.iteration,
            list(self.diagnostics),
        )


def interpolate_views(y_n, mask):
    """Full-view sinogram with missing views linearly interpolated along theta.

    Neighbours are searched cyclically, so views before the first or after the
    last measured one interpolate across the angular boundary.
    """
    y_n = check_volume(y_n, "y_n")
    mask.check_measured(y_n)
    full = mask.embed(y_n)
    n = mask.n_theta
    measured = mask.indices
    if measured.size == n:
        return full
    if measured.size == 1:
        full[:] = y_n[:, :, :1]
        return full
    for k in np.flatnonzero(~mask.measured):
        pos = np.searchsorted(measured, k)
        prev = measured[pos - 1]  # wraps to the last view when pos == 0
        nxt = measured[pos % measured.size]
        d_prev = (k - prev) % n
        d_next = (nxt - k) % n
        t = d_prev / (d_prev + d_next)
        full[:, :, k] = (1.0 - t) * full[:, :, prev] + t * full[:, :, nxt]
    return full


def initialize_state(y_n, mask):
    y0 = interpolate_views(y_n, mask)
    return SolverState(
        y=y0,
        f=y0.copy(),
        g=list(hessian_planes(y0)),
        b1=np.zeros_like(y0),
        b=[triple_zeros(y0.shape) for _ in PLANES],
    )


def solve_f(state, y_n, weights, mask, y_star, params):
    """Pointwise minimiser of the data, self-similarity and coupling terms."""
    w_full = mask.embed(np.asarray(weights, dtype=np.float64))
    yn_full = mask.embed(np.asarray(y_n, dtype=np.float64))
    half_mu = 0.5 * params.mu1
    num = w_full * yn_full + params.lambda_s * y_star + half_mu * (state.y + state.b1)
    return num / (w_full + params.lambda_s + half_mu)


def solve_g(plane_hess, b, params):
    return vector_shrink(triple_add(plane_hess, b), params.lambda_h / params.mu2)


def normal_operator(y, mu1, mu2):
    """``(mu1 I + mu2 sum_p H_p^T H_p) y`` for the y-subproblem."""
    out = mu1 * np.asarray(y, dtype=np.float64)
    for plane in PLANES:
        out = out + mu2 * hessian_adjoint(plane_hessian(y, plane), plane)
    return out


def normal_rhs(state, mu1, mu2):
    rhs = mu1 * (state.f - state.b1)
    for plane, g, b in zip(PLANES, state.g, state.b):
        rhs = rhs + mu2 * hessian_adjoint(triple_add(g, b, -1.0), plane)
    return rhs


@nb.njit(cache=True)
def _gs_sweeps(y, rhs, nu, nv, nt, mu1, w_pure, w_mix, sweeps):
    """Lexicographic Gauss-Seidel on the composite normal-equation stencil.

    `y` and `rhs` are flat and u-fastest.  ``w_pure`` / ``w_mix`` are the
    total weights of ``D_aa^T D_aa`` and ``D_ab^T D_ab`` in the operator.
    """
    dims = np.array([nu, nv, nt])
    strides = np.array([1, nu, nu * nv])
    coord = np.empty(3, dtype=np.int64)
    for _ in range(sweeps):
        for k in range(nt):
            for j in range(nv):
                for i in range(nu):
                    coord[0] = i
                    coord[1] = j
                    coord[2] = k
                    p = i + nu * (j + nv * k)
                    acc = mu1 * y[p]
                    diag = mu1
                    for a in range(3):
                        na = dims[a]
                        sa = strides[a]
                        ca = coord[a]
                        if na >= 3:
                            for t in range(-1, 2):
                                qa = ca + t
                                if qa < 1 or qa > na - 2:
                                    continue
                                q = p + t * sa
                                c = -2.0 if t == 0 else 1.0
                                acc += w_pure * c * (y[q + sa] - 2.0 * y[q] + y[q - sa])
                                diag += w_pure * c * c
                        for b in range(a + 1, 3):
                            nb_ = dims[b]
                            if na < 2 or nb_ < 2:
                                continue
                            sb = strides[b]
                            cb = coord[b]
                            for ta in range(2):
                                qa = ca - ta
                                if qa < 0 or qa > na - 2:
                                    continue
                                for tb in range(2):
                                    qb = cb - tb
                                    if qb < 0 or qb > nb_ - 2:
                                        continue
                                    q = p - ta * sa - tb * sb
                                    c = 1.0 if ta == tb else -1.0
                                    acc += w_mix * c * (y[q + sa + sb] - y[q + sa] - y[q + sb] + y[q])
                                    diag += w_mix
                    y[p] += (rhs[p] - acc) / diag


def gauss_seidel(y, rhs, mu1, mu2, sweeps):
    """Run `sweeps` in-place Gauss-Seidel sweeps on a copy of `y` for the y-subproblem."""
    nu, nv, nt = y.shape
    flat = np.array(y, dtype=np.float64).ravel(order="F")
    rhs_flat = np.asarray(rhs, dtype=np.float64).ravel(order="F")
    # Each D_aa sits in two planes; each D_ab in one, with iso weight 2.
    _gs_sweeps(flat, rhs_flat, nu, nv, nt, float(mu1), 2.0 * mu2, 2.0 * mu2, int(sweeps))
    return flat.reshape(y.shape, order="F")


def solve_y(state, params):
    rhs = normal_rhs(state, params.mu1, params.mu2)
    return gauss_seidel(state.y, rhs, params.mu1, params.mu2, params.gs_sweeps)


def update_bregman(state, hess=None):
    state.b1 = state.b1 + (state.y - state.f)
    hess = hessian_planes(state.y) if hess is None else hess
    state.b = [triple_add(b, triple_add(h, g, -1.0)) for b, h, g in zip(state.b, hess, state.g)]
    return state


def constraint_residuals(state, hess=None):
    """Mean squared violations of ``y = f`` and ``H_p y = g_p``."""
    n = state.y.size
    hess = hessian_planes(state.y) if hess is None else hess
    res = [float(np.sum((state.y - state.f) ** 2)) / n]
    for h, g in zip(hess, state.g):
        res.append(triple_sqnorm(triple_add(h, g, -1.0)) / n)
    return res


def compute_target(y0, z, mask, match_params):
    """Block-match `y0` against `z` and return ``(y_star, field, bandwidth)``."""
    field_ = patchmatch_knn(y0, z, mask, match_params)
    if match_params.bandwidth == "auto":
        bandwidth = estimate_bandwidth(field_)
    else:
        bandwidth = float(match_params.bandwidth)
    return compute_nlm_target(field_, z, bandwidth), field_, bandwidth


def bregman_iterations(state, y_n, mask, weights, y_star, params, callback=None):
    """Iterate from `state` until the mean squared update drops below epsilon."""
    n = state.y.size
    # the Hessians of the current y serve the g-step, the Bregman update,
    # the residuals and the objective
    hess = hessian_planes(state.y)
    while state.iteration < params.max_iters:
        y_prev = state.y
        it = state.iteration + 1
        state.f = check_finite_result(solve_f(state, y_n, weights, mask, y_star, params), "f", it)
        state.g = [solve_g(h, b, params) for h, b in zip(hess, state.b)]
        state.y = check_finite_result(solve_y(state, params), "y", it)
        hess = hessian_planes(state.y)
        update_bregman(state, hess)
        check_finite_result(state.b1, "b1", it)
        state.iteration = it
        dy_sq = float(np.sum((state.y - y_prev) ** 2))
        res = constraint_residuals(state, hess)
        J = cost_J(state.y, y_n, mask, weights, y_star, params.lambda_s, params.lambda_h, hess)
        if not np.isfinite(J):
            raise NumericalFailure(f"non-finite objective at iteration {state.iteration}", state.iteration)
        row = dict(zip(DIAGNOSTIC_COLUMNS, [state.iteration, dy_sq, *res, J]))
        state.diagnostics.append(row)
        logger.debug("iter %d dy_sq=%.3e J=%.6e", state.iteration, dy_sq, J)
        if callback is not None:
            callback(state)
        if dy_sq <= params.epsilon * n:
            break
    return state


def run(y_n, mask, weights, z, params=None, y_star=None):
    """Interpolate and denoise the measured sinogram `y_n`.

    Returns ``(y_hat, diagnostics)`` where `diagnostics` is a list of dicts
    keyed by `DIAGNOSTIC_COLUMNS`, one per iteration.  A precomputed `y_star`
    skips block matching.
    """
    params = params or RestoreParams()
    y_n = check_volume(y_n, "y_n")
    if not isinstance(mask, ViewMask):
        raise TypeError("mask must be a ViewMask")
    mask.check_measured(y_n)
    weights = check_volume(weights, "weights")
    if weights.shape != y_n.shape:
        raise ValueError(f"weights shape {weights.shape} != measured sinogram shape {y_n.shape}")
    state = initialize_state(y_n, mask)
    if y_star is None:
        z = check_volume(z, "z")
        y_star, _, _ = compute_target(state.y, z, mask, params.match)
    else:
        y_star = check_volume(y_star, "y_star")
    state = bregman_iterations(state, y_n, mask, weights, y_star, params)
    return state.y, state.diagnostics


def write_diagnostics(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=DIAGNOSTIC_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(float(v)) if k != "iter" else int(v)) for k, v in row.items()})


def with_match(params, **changes):
    """Copy of `params` with fields of its `MatchParams` replaced."""
    return replace(params, match=replace(params.match, **changes))
