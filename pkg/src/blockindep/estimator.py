"""scikit-learn style front end for the block independence test."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .asymptotics import lss_params, run_test
from .blockstat import DataMatrix, data_spectrum, lss

_LSS_FUN = {"schott": "square", "wilks": "log"}


class BlockIndependenceTest(TransformerMixin, BaseEstimator):
    """Test mutual independence of column blocks of ``X`` (observations as rows).

    ``statistic`` is ``"schott"``, ``"wilks"`` or a sequence of polynomial
    coefficients.  After ``fit`` the test outcome is in ``statistic_``,
    ``mean_``, ``variance_``, ``z_score_``, ``p_value_`` and ``reject_``.
    ``transform`` whitens each block with the fitted block covariance, so the
    diagonal blocks of the transformed sample covariance are identities.
    """

    def __init__(self, blocks, statistic="schott", mean="unknown", method="closed", alpha=0.05):
        self.blocks = blocks
        self.statistic = statistic
        self.mean = mean
        self.method = method
        self.alpha = alpha

    def _check_params(self, n_features):
        if self.mean not in ("known", "unknown"):
            raise ValueError(f"mean must be 'known' or 'unknown', got {self.mean!r}")
        if self.method not in ("closed", "contour", "mp"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        blocks = [int(b) for b in self.blocks]
        if sum(blocks) != n_features:
            raise ValueError(f"blocks sum to {sum(blocks)} but X has {n_features} features")
        return blocks

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        blocks = self._check_params(X.shape[1])
        mean_known = self.mean == "known"
        data = DataMatrix.from_observations(X, blocks, mean_known)
        if isinstance(self.statistic, str):
            f, key = _LSS_FUN.get(self.statistic, self.statistic), self.statistic
        else:
            f = key = [float(c) for c in self.statistic]
        spec = data_spectrum(data)
        params = lss_params(data.layout, key, mean_known=mean_known, method=self.method)
        report = run_test(lss(spec, f), params)

        self.n_features_in_ = X.shape[1]
        self.eigenvalues_ = spec.eigenvalues
        self.statistic_ = report.statistic
        self.mean_ = report.mean
        self.variance_ = report.variance
        self.z_score_ = report.z_score
        self.p_value_ = report.p_value
        self.reject_ = bool(report.p_value < self.alpha)
        self.report_ = report

        self.location_ = X.mean(axis=0) if not mean_known else np.zeros(X.shape[1])
        n_eff = data.layout.N_eff
        Xc = X - self.location_
        self.whiteners_ = []
        for s in data.layout.slices():
            w, V = np.linalg.eigh(Xc[:, s].T @ Xc[:, s] / n_eff)
            self.whiteners_.append((V / np.sqrt(w)) @ V.T)
        return self

    def transform(self, X):
        check_is_fitted(self, "whiteners_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        Xc = X - self.location_
        cuts = np.cumsum([0] + [int(b) for b in self.blocks])
        return np.hstack([Xc[:, a:b] @ W for a, b, W in zip(cuts[:-1], cuts[1:], self.whiteners_)])
