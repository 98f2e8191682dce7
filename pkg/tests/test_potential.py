import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xelliptic.errors import ConfigurationError, MisuseError
from xelliptic.fields import euclidean, grushin, structure_coefficients
from xelliptic.geometry import BoundingBox, make_domain
from xelliptic.metric import control_distance
from xelliptic.potential import (annulus_capacity, assemble_barrier, barrier_radii, capacity,
                                 capmeasure_pairing, extrapolate_limit, green_band, green_column,
                                 limit_estimate, sample_steps, volume_integral)
from xelliptic.solver import assemble

H = 1 / 32
BOX = BoundingBox.cube(-1.0625, 1.0625, H, 2)
DOM = make_domain(BOX, {"ball": {"center": [0, 0], "radius": 1.0}},
                  {"ball": {"center": [0, 0], "radius": 0.85}})
FORM = assemble(DOM, structure_coefficients(euclidean(2)))
R2 = np.hypot(*BOX.coordinates())


def test_annulus_closed_forms():
    assert annulus_capacity(2, 0.25, 1.0) == pytest.approx(2 * math.pi / math.log(4))
    assert annulus_capacity(3, 0.25, 1.0) == pytest.approx(4 * math.pi / 3)
    with pytest.raises(ConfigurationError):
        annulus_capacity(2, 1.0, 0.5)


def test_disk_capacity_coarse():
    res = capacity(FORM, R2 <= 0.25)
    # first-order boundary error is about 5% at h = 1/32
    assert res.capacity == pytest.approx(annulus_capacity(2, 0.25, 1.0), rel=0.06)
    assert res.identity_defect < 1e-10
    assert res.negative_measure == 0
    assert res.max_excess <= 1e-9 and res.u.min() >= -1e-9
    assert res.residual < 1e-8


@settings(max_examples=10, deadline=None)
@given(r1=st.floats(0.1, 0.6), dr=st.floats(0.0, 0.3))
def test_capacity_monotone(r1, dr):
    small = capacity(FORM, R2 <= r1).capacity
    large = capacity(FORM, R2 <= r1 + dr).capacity
    assert small <= large * (1 + 1e-9)


def test_capacity_scales_with_coefficients():
    form2 = assemble(DOM, structure_coefficients(euclidean(2), 2.0))
    K = R2 <= 0.3
    assert capacity(form2, K).capacity == pytest.approx(2 * capacity(FORM, K).capacity, rel=1e-8)


def test_mirror_capacity_matches_full():
    half = BoundingBox((0.0, -1.0625), (1.0625, 1.0625), (34, 68), (0,))
    dom = make_domain(half, {"ball": {"center": [0, 0], "radius": 1.0}},
                      {"ball": {"center": [0, 0], "radius": 0.85}})
    form = assemble(dom, structure_coefficients(grushin(1.0)))
    full = assemble(DOM, structure_coefficients(grushin(1.0)))
    Kf = (np.abs(BOX.coordinates()[0] - 0.0) <= 0.3) & (np.abs(BOX.coordinates()[1]) <= 0.2)
    Kh = (half.coordinates()[0] <= 0.3) & (np.abs(half.coordinates()[1]) <= 0.2)
    a, b = capacity(full, Kf), capacity(form, Kh)
    assert b.capacity == pytest.approx(a.capacity, rel=1e-7)
    assert b.total_measure == pytest.approx(a.total_measure, rel=1e-7)


@settings(max_examples=50, deadline=None)
@given(L=st.floats(0.0, 1.0), c=st.floats(0.01, 0.5), r=st.floats(1.2, 5.0))
def test_extrapolation_exact_on_geometric_samples(L, c, r):
    est, ok = extrapolate_limit(L - c, L - c * r, L - c * r * r)
    assert ok
    assert est == pytest.approx(L, abs=1e-9)


def test_extrapolation_fallback():
    assert extrapolate_limit(0.5, 0.5, 0.5) == (0.5, False)
    assert extrapolate_limit(0.5, 0.4, 0.35) == (0.5, False)


def test_sample_steps():
    assert sample_steps(1.0, 0.1) == (2, 4, 8)
    assert sample_steps(0.4, 0.1) == (1, 2, 4)


def test_limit_estimate_at_disk_obstacle():
    # the potential of a disk is continuous up to its boundary, so the limit is 1
    res = capacity(FORM, R2 <= 0.5)
    annulus = make_domain(BOX, {"ball": {"center": [0, 0], "radius": 1.0}},
                          {"intersection": [{"ball": {"center": [0, 0], "radius": 0.85}},
                                            {"complement": {"ball": {"center": [0, 0], "radius": 0.5}}}]})
    est, _ = limit_estimate(res.u, annulus, BOX.nearest_node((0.5, 0.0)), steps=(1, 2, 4))
    assert est > 0.97


def test_volume_integral_matches_quadrature():
    dist = control_distance(euclidean(2), (0, 0), BOX)
    upper = 0.6
    d = np.array([0.1, 0.2, 0.35, 0.6, 0.7])
    got = volume_integral(dist, d, upper)
    for di, gi in zip(d, got):
        if di >= upper:
            assert gi == 0.0
            continue
        s = np.linspace(di, upper, 20001)[1:]
        vol = np.array([np.count_nonzero(dist.values < v) for v in s]) * BOX.h**2
        ref = np.sum(s / vol) * (s[1] - s[0])
        assert gi == pytest.approx(ref, rel=2e-3)


def test_green_symmetry_and_band():
    x, y = BOX.nearest_node((0.1, 0.0)), BOX.nearest_node((-0.2, 0.3))
    gx, gy = green_column(FORM, x), green_column(FORM, y)
    assert gx(y) == pytest.approx(gy(x), rel=1e-7)
    assert gx.values[DOM.interior_D].min() >= -1e-12
    # 4h exceeds dist/8 on this coarse grid, so the lower cut is relaxed to 2h
    band = green_band(FORM, gx, control_distance(euclidean(2), x, BOX), lower=2 * H)
    assert band.ratios.size > 0 and band.C < 10
    with pytest.raises(MisuseError):
        green_band(FORM, gx, control_distance(euclidean(2), y, BOX))


def test_barrier_and_pairing():
    assert barrier_radii(0.4, 0.025) == pytest.approx([0.2, 0.4 / 3, 0.1])
    caps = [capacity(FORM, R2 <= r) for r in (0.4, 0.2, 0.1)]
    bar = assemble_barrier(caps)
    assert bar.n_terms == 3 and bar.values.max() <= 0.5 + 1e-12
    with pytest.raises(ConfigurationError):
        assemble_barrier(caps[:2])
    p = capmeasure_pairing(caps[1], caps[0], caps[2])
    assert p.lemma_i_ok and p.mu_rho_on_Kr <= p.cap_r
    with pytest.raises(MisuseError):
        capmeasure_pairing(caps[0], caps[1])
