import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gphl.estimates import SpaceTimeDensity, band_limited, lp_project
from gphl.estimators import (
    CorrelationDressing,
    LittlewoodPaleyProjector,
    MarginalExtractor,
    ZeroEnergyScattering,
)
from gphl.manybody import LatticeGrid, init_product_state, marginal
from gphl.scattering import RadialPotential


def test_scattering_estimator():
    est = ZeroEnergyScattering(N=1, beta=1.0).fit(RadialPotential.square_barrier(2, 1))
    assert est.a0_ == pytest.approx(1 - math.tanh(1), rel=1e-8)
    assert est.predict([5.0])[0] == pytest.approx(est.a0_ / 5.0, rel=1e-8)
    assert est.coupling() == pytest.approx(8 * math.pi * est.a0_)
    assert clone(est).get_params() == est.get_params()


def test_not_fitted():
    with pytest.raises(NotFittedError):
        ZeroEnergyScattering().predict([1.0])


def test_dressing_roundtrip():
    g = LatticeGrid(1, 8, 2 * math.pi)
    phi = np.exp(1j * np.cos(g.x)) / math.sqrt(2 * math.pi)
    gam = marginal(init_product_state(phi, 3, g), 2)
    est = CorrelationDressing(RadialPotential.square_barrier(2, 1), N=10, beta=0.5).fit()
    back = est.inverse_transform(est.transform(gam))
    assert np.max(np.abs(back.kernel - gam.kernel)) < 1e-14
    assert float(est.gap_) > 0


def test_lp_and_marginal_transformers():
    g = LatticeGrid(1, 16, 2 * math.pi)
    a = SpaceTimeDensity(g, band_limited(g, 2, np.random.default_rng(0), 3), 2)
    out = LittlewoodPaleyProjector(M=2).fit_transform(a)
    assert np.array_equal(out.data, lp_project(a, 2).data)
    phi = np.ones(16) / math.sqrt(2 * math.pi)
    gam = MarginalExtractor(k=1).fit_transform(init_product_state(phi, 2, g))
    assert gam.trace().real == pytest.approx(1.0)
