"""Power-law cost model fitting with a scikit-learn style interface."""

from __future__ import annotations

import numpy as np
from sklearn.linear_model import LinearRegression

from .types import ValidationError


class PowerLawFitter:
    """Fits cost = coefficient * size ** exponent by log-log least squares.

    Exposes fit / predict / score like an sklearn regressor so it can slot
    into model-selection tooling; attributes follow the trailing-underscore
    convention for fitted state.
    """

    def __init__(self):
        self._model = LinearRegression()

    def fit(self, sizes, costs) -> "PowerLawFitter":
        sizes = np.asarray(list(sizes), dtype=np.float64)
        costs = np.asarray(list(costs), dtype=np.float64)
        if sizes.size < 3:
            raise ValidationError("need at least 3 sizes to fit a power law")
        if np.any(sizes <= 0) or np.any(costs <= 0):
            raise ValidationError("sizes and costs must be positive")
        self._model.fit(np.log(sizes)[:, None], np.log(costs))
        self.exponent_ = float(self._model.coef_[0])
        self.coefficient_ = float(np.exp(self._model.intercept_))
        return self

    def predict(self, sizes) -> np.ndarray:
        self._check_fitted()
        sizes = np.asarray(list(sizes), dtype=np.float64)
        return self.coefficient_ * sizes ** self.exponent_

    def score(self, sizes, costs) -> float:
        """R^2 in log space, matching the space the fit minimizes."""
        self._check_fitted()
        sizes = np.asarray(list(sizes), dtype=np.float64)
        costs = np.asarray(list(costs), dtype=np.float64)
        return float(self._model.score(np.log(sizes)[:, None], np.log(costs)))

    def _check_fitted(self):
        if not hasattr(self, "exponent_"):
            raise ValidationError("fit must be called before predict/score")
