"""scikit-learn style wrappers for the fit/transform-shaped pieces.

Only the parts with a natural estimator shape are wrapped: a scattering solve is a
fit on a potential, dressing / LP projection / marginal extraction are transforms.
The underlying functions stay the primary API.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import estimates, manybody, scattering


class ZeroEnergyScattering(BaseEstimator):
    """fit(V) solves the screened zero-energy problem; predict(r) returns w0(r)."""

    def __init__(self, N=1, beta=1.0, tol=1e-10):
        self.N = N
        self.beta = beta
        self.tol = tol

    def fit(self, V, y=None):
        self.solution_ = scattering.solve_zero_energy(V, self.N, self.beta, self.tol)
        self.a0_ = self.solution_.a0
        self.residual_ = self.solution_.residual
        return self

    def predict(self, r):
        check_is_fitted(self, "solution_")
        return self.solution_.w0_at(np.asarray(r, dtype=float))

    def coupling(self):
        check_is_fitted(self, "solution_")
        return 8.0 * np.pi * self.a0_


class CorrelationDressing(TransformerMixin, BaseEstimator):
    """gamma^(k) -> alpha^(k) = gamma / (G G'), and back."""

    def __init__(self, potential=None, N=10, beta=0.5, d=1):
        self.potential = potential
        self.N = N
        self.beta = beta
        self.d = d

    def fit(self, X=None, y=None):
        V = self.potential if self.potential is not None else scattering.RadialPotential.zero()
        self.sp_ = scattering.ScaledPotential(V, self.N, self.beta, d=self.d)
        self.gap_ = manybody.dressing_gap(self.sp_)
        return self

    def transform(self, X):
        check_is_fitted(self, "sp_")
        return manybody.dress(X, self.sp_)

    def inverse_transform(self, X):
        check_is_fitted(self, "sp_")
        return X.undress()


class LittlewoodPaleyProjector(TransformerMixin, BaseEstimator):
    """Sharp dyadic cutoff on the listed variables of a SpaceTimeDensity."""

    def __init__(self, M=1, mode="leq", axes=None):
        self.M = M
        self.mode = mode
        self.axes = axes

    def fit(self, X=None, y=None):
        self.is_fitted_ = True
        return self

    def transform(self, X):
        return estimates.lp_project(X, self.M, self.mode, self.axes)


class MarginalExtractor(TransformerMixin, BaseEstimator):
    """WaveFunction -> order-k MarginalKernel."""

    def __init__(self, k=1):
        self.k = k

    def fit(self, X=None, y=None):
        self.is_fitted_ = True
        return self

    def transform(self, X):
        return manybody.marginal(X, self.k)
