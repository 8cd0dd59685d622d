"""Rank transform of bivariate data to pseudo-observations."""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_bivariate


@dataclass(frozen=True)
class PseudoSample:
    """Column-wise rank uniforms ``rank / (T + 1)``."""

    u: np.ndarray

    @property
    def t_len(self):
        return self.u.shape[0]

    def __len__(self):
        return self.u.shape[0]

    def window(self, start, end, rerank=True):
        """Sub-sample of rows ``[start, end)``, re-ranked by default."""
        part = self.u[start:end]
        return pseudo_observations(part) if rerank else PseudoSample(part)


def pseudo_observations(data):
    """Pseudo-observations of a ``(T, 2)`` sample.

    Average ranks are used for ties, and the scaling is ``1 / (T + 1)`` so that
    no value reaches 1.

    Examples
    --------
    >>> pseudo_observations([[1, 5], [2, 5], [3, 1]]).u
    array([[0.25 , 0.625],
           [0.5  , 0.625],
           [0.75 , 0.25 ]])
    """
    data = check_bivariate(data, min_rows=2, name="data")
    t_len = data.shape[0]
    u = rankdata(data, method="average", axis=0) / (t_len + 1.0)
    return PseudoSample(u)


class RankTransformer(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping each column to its rank uniforms.

    The ranks of a new sample are computed within that sample, so ``fit`` only
    validates the input.
    """

    def fit(self, X, y=None):
        X = check_bivariate(X, name="X")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        return pseudo_observations(X).u

    def __sklearn_is_fitted__(self):
        return True
