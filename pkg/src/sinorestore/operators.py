"""Second-order difference operators and the cost terms built on them.

Stencils:

* pure:  ``D_aa y(I) = y(I+e_a) - 2 y(I) + y(I-e_a)``
* mixed: ``D_ab y(I) = y(I+e_a+e_b) - y(I+e_a) - y(I+e_b) + y(I)``

A stencil is evaluated only where all of its samples lie inside the volume;
elsewhere the difference is defined as zero.  This keeps every operator
exactly zero on affine data, boundary included.

Hessian triples are stored as ``(t_aa, t_ab, t_bb)``.  Their magnitude is
``sqrt(t_aa**2 + 2 t_ab**2 + t_bb**2)`` and the matching inner product
weights the cross component by 2 (see `hessian_adjoint`).
"""
from collections import namedtuple

import numpy as np

from ._validation import check_same_shape, check_volume

U, V, THETA = 0, 1, 2

#: (a, b) axes of the three orthogonal planes: uv, v-theta, theta-u.
PLANES = ((U, V), (V, THETA), (THETA, U))
PLANE_NAMES = ("uv", "vt", "tu")

HessianTriple = namedtuple("HessianTriple", ["aa", "ab", "bb"])


def _slab(axis, start, stop, ndim=3):
    sl = [slice(None)] * ndim
    sl[axis] = slice(start, stop)
    return tuple(sl)


def _slab2(a, sa, b, sb, ndim=3):
    sl = [slice(None)] * ndim
    sl[a] = sa
    sl[b] = sb
    return tuple(sl)


def second_diff(y, axes):
    """Second difference of `y` along ``axes = (a, b)``; ``a == b`` gives D_aa."""
    y = np.asarray(y, dtype=np.float64)
    a, b = axes
    out = np.zeros_like(y)
    if a == b:
        n = y.shape[a]
        if n >= 3:
            out[_slab(a, 1, n - 1)] = (
                y[_slab(a, 2, n)] - 2.0 * y[_slab(a, 1, n - 1)] + y[_slab(a, 0, n - 2)]
            )
        return out
    na, nb = y.shape[a], y.shape[b]
    if na >= 2 and nb >= 2:
        lo, hi = slice(0, -1), slice(1, None)
        out[_slab2(a, lo, b, lo)] = (
            y[_slab2(a, hi, b, hi)]
            - y[_slab2(a, hi, b, lo)]
            - y[_slab2(a, lo, b, hi)]
            + y[_slab2(a, lo, b, lo)]
        )
    return out


def second_diff_adjoint(v, axes):
    """Exact adjoint of `second_diff` under the plain Euclidean inner product."""
    v = np.asarray(v, dtype=np.float64)
    a, b = axes
    out = np.zeros_like(v)
    if a == b:
        n = v.shape[a]
        if n >= 3:
            core = v[_slab(a, 1, n - 1)]
            out[_slab(a, 2, n)] += core
            out[_slab(a, 1, n - 1)] -= 2.0 * core
            out[_slab(a, 0, n - 2)] += core
        return out
    na, nb = v.shape[a], v.shape[b]
    if na >= 2 and nb >= 2:
        lo, hi = slice(0, -1), slice(1, None)
        core = v[_slab2(a, lo, b, lo)]
        out[_slab2(a, hi, b, hi)] += core
        out[_slab2(a, hi, b, lo)] -= core
        out[_slab2(a, lo, b, hi)] -= core
        out[_slab2(a, lo, b, lo)] += core
    return out


def plane_hessian(y, plane):
    a, b = plane
    return HessianTriple(second_diff(y, (a, a)), second_diff(y, (a, b)), second_diff(y, (b, b)))


def hessian_planes(y):
    """The three plane Hessians (uv, v-theta, theta-u) of `y`."""
    y = check_volume(y, "y")
    return tuple(plane_hessian(y, plane) for plane in PLANES)


def hessian_adjoint(triple, plane):
    """Adjoint of `plane_hessian` for the iso-weighted triple inner product."""
    a, b = plane
    return (
        second_diff_adjoint(triple.aa, (a, a))
        + 2.0 * second_diff_adjoint(triple.ab, (a, b))
        + second_diff_adjoint(triple.bb, (b, b))
    )


def hessian_magnitude(triple):
    aa, ab, bb = (np.asarray(t, dtype=np.float64) for t in triple)
    return np.sqrt(aa * aa + 2.0 * ab * ab + bb * bb)


def vector_shrink(triple, t):
    """Isotropic soft-thresholding of a Hessian triple by `t`.

    Exact minimiser of ``t |g| + 1/2 |g - v|^2`` per voxel, both norms taken
    with the cross component weighted by 2.
    """
    if t < 0:
        raise ValueError(f"threshold must be >= 0, got {t}")
    mag = hessian_magnitude(triple)
    scale = np.zeros_like(mag)
    nz = mag > 0
    scale[nz] = np.maximum(mag[nz] - t, 0.0) / mag[nz]
    return HessianTriple(*(np.asarray(c, dtype=np.float64) * scale for c in triple))


def triple_add(p, q, sign=1.0):
    return HessianTriple(p.aa + sign * q.aa, p.ab + sign * q.ab, p.bb + sign * q.bb)


def triple_zeros(shape):
    return HessianTriple(np.zeros(shape), np.zeros(shape), np.zeros(shape))


def triple_sqnorm(triple):
    """Iso-weighted squared norm summed over voxels."""
    return float(np.sum(triple.aa**2) + 2.0 * np.sum(triple.ab**2) + np.sum(triple.bb**2))


def r_h(y, hess=None):
    """Sum over voxels of the three plane Hessian magnitudes.

    `hess` may carry ``hessian_planes(y)`` when the caller already has it.
    """
    hess = hessian_planes(y) if hess is None else hess
    return float(sum(hessian_magnitude(h).sum() for h in hess))


def r_s(y, y_star):
    y = check_volume(y, "y")
    y_star = check_volume(y_star, "y_star")
    check_same_shape(y, y_star, ("y", "y_star"))
    return float(np.sum((y - y_star) ** 2))


def data_term(y, y_n, mask, weights):
    """Weighted squared misfit on the measured views."""
    y = check_volume(y, "y")
    resid = mask.restrict(y) - np.asarray(y_n, dtype=np.float64)
    return float(np.sum(np.asarray(weights, dtype=np.float64) * resid * resid))


def cost_J(y, y_n, mask, weights, y_star, lambda_s, lambda_h, hess=None):
    """Full objective: weighted data term + lambda_s R_s + lambda_h R_h."""
    return data_term(y, y_n, mask, weights) + lambda_s * r_s(y, y_star) + lambda_h * r_h(y, hess)
