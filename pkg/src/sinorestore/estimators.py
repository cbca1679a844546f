"""Estimator-style wrappers around the restoration and reconstruction steps."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_volume
from .blockmatch import MatchParams
from .metrics import fbp_reconstruct
from .simulator import ScanGeometry, compute_weights
from .solver import RestoreParams, bregman_iterations, compute_target, initialize_state
from .volume import BlockSpec, ViewMask


class SinogramInterpolator(TransformerMixin, BaseEstimator):
    """Fill in missing views of a noisy sinogram using a reference scan.

    `fit` stores the reference scan `z`.  `transform` block-matches the
    linearly interpolated input against it and runs the split Bregman solver.

    Parameters
    ----------
    lambda_s, lambda_h : float
        Weights of the self-similarity and Hessian penalties.
    mu1, mu2 : float
        Splitting penalties for ``f = y`` and ``g_p = H_p y``.
    epsilon, max_iters, gs_sweeps :
        Stopping tolerance, iteration cap and inner Gauss-Seidel sweeps.
    block_radius : tuple of int
        Block half-widths along (u, v, theta).
    k, match_iterations, alpha, seed, bandwidth :
        Block-matching settings.

    Attributes
    ----------
    reference_ : ndarray
        The reference scan passed to `fit`.
    target_ : ndarray
        Non-local target from the last `transform`.
    bandwidth_ : float
        Bandwidth used for that target.
    diagnostics_ : list of dict
        Per-iteration solver diagnostics from the last `transform`.
    """

    def __init__(
        self,
        lambda_s=1.0,
        lambda_h=1e-4,
        mu1=1e-3,
        mu2=1e-3,
        epsilon=1e-8,
        max_iters=100,
        gs_sweeps=2,
        block_radius=(2, 2, 2),
        k=8,
        match_iterations=5,
        alpha=0.5,
        seed=0,
        bandwidth="auto",
    ):
        self.lambda_s = lambda_s
        self.lambda_h = lambda_h
        self.mu1 = mu1
        self.mu2 = mu2
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.gs_sweeps = gs_sweeps
        self.block_radius = block_radius
        self.k = k
        self.match_iterations = match_iterations
        self.alpha = alpha
        self.seed = seed
        self.bandwidth = bandwidth

    def restore_params(self):
        match = MatchParams(
            block=BlockSpec(*self.block_radius),
            k=self.k,
            iterations=self.match_iterations,
            alpha=self.alpha,
            seed=self.seed,
            bandwidth=self.bandwidth,
        )
        return RestoreParams(
            lambda_s=self.lambda_s,
            lambda_h=self.lambda_h,
            mu1=self.mu1,
            mu2=self.mu2,
            epsilon=self.epsilon,
            max_iters=self.max_iters,
            gs_sweeps=self.gs_sweeps,
            match=match,
        )

    def fit(self, z, y=None):
        self.restore_params()
        self.reference_ = check_volume(z, "z", copy=True)
        return self

    def transform(self, X, mask=None, weights=None):
        """Restore the measured views `X`, shape ``(n_u, n_v, n_measured)``.

        `mask` defaults to alternate views over ``2 * n_measured`` angles;
        `weights` default to `compute_weights` of `X`.
        """
        check_is_fitted(self, "reference_")
        X = check_volume(X, "X")
        if mask is None:
            mask = ViewMask.alternate(2 * X.shape[2])
        mask.check_measured(X)
        weights = compute_weights(X) if weights is None else check_volume(weights, "weights")
        if weights.shape != X.shape:
            raise ValueError(f"weights shape {weights.shape} != measured sinogram shape {X.shape}")
        params = self.restore_params()
        state = initialize_state(X, mask)
        self.target_, _, self.bandwidth_ = compute_target(state.y, self.reference_, mask, params.match)
        state = bregman_iterations(state, X, mask, weights, self.target_, params)
        self.diagnostics_ = state.diagnostics
        self.n_iter_ = state.iteration
        return state.y

    def fit_transform(self, X, y=None, z=None, mask=None, weights=None):
        # the reference scan, not X, is what gets fitted
        if z is None:
            raise TypeError("fit_transform needs the reference scan as z")
        return self.fit(z).transform(X, mask=mask, weights=weights)


class FBPReconstructor(TransformerMixin, BaseEstimator):
    """Filtered backprojection onto an ``n_x`` by ``n_y`` grid.

    `angles` defaults to ``n_theta`` equispaced views over ``[0, pi)`` taken
    from the sinogram passed to `transform`.
    """

    def __init__(self, n_x=256, n_y=256, angles=None, pitch=None):
        self.n_x = n_x
        self.n_y = n_y
        self.angles = angles
        self.pitch = pitch

    def fit(self, X=None, y=None):
        self.is_fitted_ = True
        return self

    def transform(self, X):
        X = check_volume(X, "X")
        angles = None if self.angles is None else np.asarray(self.angles, dtype=np.float64)
        geom = ScanGeometry(X.shape[2], X.shape[0], angles, self.pitch)
        return fbp_reconstruct(X, geom, (self.n_x, self.n_y))
