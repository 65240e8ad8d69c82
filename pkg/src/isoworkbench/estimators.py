"""scikit-learn style wrappers for the packing and the perimeter estimator.

Only the pieces with a natural fit/transform shape are wrapped: the packing
is "fitted" once and then maps points to their signed distances from each
ball, and the Crofton estimator maps a batch of rasters to perimeters.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .construction import SearchParams, build_packing, verify_separation
from .perimeter import DEFAULT_DIRECTIONS, as_raster, perimeter_raster
from .torus import torus_distance


class GreedyBallPacking(BaseEstimator, TransformerMixin):
    """Greedy farthest-point packing of the dyadic balls ``r_i = 2^-(i+2)``.

    ``fit`` ignores its input; ``transform`` maps points of shape ``(m, 2)``
    to signed distances ``d(p, x_i) - r_i`` of shape ``(m, n_balls)``.
    """

    def __init__(self, n_balls: int = 20, x1=(0.0, 0.0), grid_pitch: float = 1.0 / 256,
                 certify: bool = True):
        self.n_balls = n_balls
        self.x1 = x1
        self.grid_pitch = grid_pitch
        self.certify = certify

    def fit(self, X=None, y=None):
        self.balls_ = build_packing(self.n_balls, self.x1, SearchParams(self.grid_pitch), self.certify)
        self.centers_ = self.balls_.centers
        self.radii_ = self.balls_.radii
        self.separation_ = verify_separation(self.balls_)
        return self

    def transform(self, X):
        check_is_fitted(self, "balls_")
        P = np.asarray(X, dtype=float).reshape(-1, 2)
        return np.stack([torus_distance(P, c) - r for c, r in zip(self.centers_, self.radii_)], axis=1)

    def predict(self, X):
        """1-based index of the ball containing each point, 0 outside all balls."""
        D = self.transform(X)
        inside = D < 0
        return np.where(inside.any(axis=1), np.argmax(inside, axis=1) + 1, 0)


class CroftonPerimeter(BaseEstimator, TransformerMixin):
    """Crofton perimeter of each raster in a batch: rows ``(value, error_bound)``."""

    def __init__(self, directions=DEFAULT_DIRECTIONS, W=None):
        self.directions = directions
        self.W = W

    def fit(self, X=None, y=None):
        self.n_directions_ = len(self.directions)
        return self

    def transform(self, X):
        check_is_fitted(self, "n_directions_")
        rows = []
        for E in X:
            est = perimeter_raster(as_raster(E), W=self.W, directions=self.directions)
            rows.append((est.value, est.error_bound))
        return np.array(rows, dtype=float).reshape(-1, 2)
