"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` (add ``-m "not slow"`` to
skip the 3D classification and invariance runs).
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from xelliptic.fields import (diagonal, euclidean, grushin, sandwich_coefficients,
                              structure_coefficients)
from xelliptic.geometry import BoundingBox, make_domain
from xelliptic.metric import control_distance, volume_profile
from xelliptic.potential import (annulus_capacity, capacity, capmeasure_pairing, green_band,
                                 green_column)
from xelliptic.scenario import load_scenario, random_trig, run
from xelliptic.solver import (assemble, caccioppoli_ratio, maximum_principle_excess,
                              solve_in_omega)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
DISK = {"ball": {"center": [0, 0], "radius": 0.95}}
INNER = {"ball": {"center": [0, 0], "radius": 0.85}}


def report(capsys, n, ok, detail, t0):
    with capsys.disabled():
        print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}  ({time.time() - t0:.1f} s)")
    assert ok, detail


def disk_capacity(h):
    n = round(1.03125 / h)
    box = BoundingBox.cube(-n * h, n * h, h, 2)
    dom = make_domain(box, {"ball": {"center": [0, 0], "radius": 1.0}},
                      {"ball": {"center": [0, 0], "radius": 0.9}})
    form = assemble(dom, structure_coefficients(euclidean(2)))
    return capacity(form, np.hypot(*box.coordinates()) <= 0.25).capacity


def test_c01_disk_capacity(capsys):
    t0 = time.time()
    ref = 2 * math.pi / math.log(4)
    e128 = disk_capacity(1 / 128) / ref - 1
    e256 = disk_capacity(1 / 256) / ref - 1
    halving = abs(e128) / abs(e256)
    elapsed = time.time() - t0
    ok = abs(e256) < 0.03 and 2 / 1.3 <= halving <= 2 / 0.7 and elapsed < 30
    report(capsys, 1, ok, f"err(1/256)={e256:+.3%} err(1/128)/err(1/256)={halving:.2f}", t0)


def test_c02_ball_capacity(capsys):
    t0 = time.time()
    h, n = 1 / 96, 100
    # one octant with mirror planes on all three coordinate faces
    box = BoundingBox((0, 0, 0), (n * h,) * 3, (n, n, n), (0, 1, 2))
    dom = make_domain(box, {"ball": {"center": [0, 0, 0], "radius": 1.0}},
                      {"ball": {"center": [0, 0, 0], "radius": 0.9}})
    form = assemble(dom, structure_coefficients(euclidean(3)))
    r = np.sqrt(np.sum(box.coordinates() ** 2, axis=0))
    err = capacity(form, r <= 0.25).capacity / annulus_capacity(3, 0.25, 1.0) - 1
    ok = abs(err) < 0.05 and time.time() - t0 < 300
    report(capsys, 2, ok, f"err={err:+.3%}", t0)


def test_c03_doubling_dimension(capsys):
    t0 = time.time()
    radii = [0.1, 0.15, 0.2, 0.3, 0.4]
    box = BoundingBox((-1, -0.5), (1, 0.5), (512, 256))
    q_gru = volume_profile(control_distance(grushin(1.0), (0.0, 0.0), box), radii).Q_est
    box = BoundingBox.cube(-1, 1, 1 / 128, 2)
    q_euc = volume_profile(control_distance(euclidean(2), (0.0, 0.0), box), radii).Q_est
    ok = abs(q_gru - 3) <= 0.15 and abs(q_euc - 2) <= 0.1
    report(capsys, 3, ok, f"Q grushin={q_gru:.3f} euclidean={q_euc:.3f}", t0)


def test_c04_vertical_exponent(capsys):
    t0 = time.time()
    box = BoundingBox.cube(-1, 1, 1 / 128, 2)
    d = control_distance(grushin(1.0), (0.0, 0.0), box)
    b = np.array([0.05, 0.1, 0.2, 0.4])
    slope = np.polyfit(np.log(b), np.log([d.at((0.0, v)) for v in b]), 1)[0]
    report(capsys, 4, abs(slope - 0.5) <= 0.05, f"exponent={slope:.4f}", t0)


def mixed_excess(h, trials, seed=0):
    box = BoundingBox.cube(-1, 1, h, 2)
    dom = make_domain(box, DISK, INNER)
    R = np.array([[0.0, 1.0], [1.0, 0.0]])
    form = assemble(dom, sandwich_coefficients(euclidean(2), R, 1.25, 0.75, 1.0))
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(trials):
        g = random_trig(box, rng)
        osc = np.ptp(g[dom.boundary])
        for s in (1.0, -1.0):
            worst = max(worst, maximum_principle_excess(solve_in_omega(form, s * g), dom) / osc)
    return worst


def test_c05_maximum_principle(capsys):
    t0 = time.time()
    box = BoundingBox.cube(-1, 1, 1 / 64, 2)
    dom = make_domain(box, DISK, INNER)
    fam = diagonal({"delta": 0.8, "center": [0.3, 0.0], "width": 0.5},
                   {"delta": 0.8, "center": [-0.3, 0.2], "width": 0.5})
    form = assemble(dom, structure_coefficients(fam))
    rng = np.random.default_rng(0)
    diag = max(maximum_principle_excess(solve_in_omega(form, rng.standard_normal(box.shape)), dom)
               for _ in range(100))
    series = [mixed_excess(1 / 64, 100), mixed_excess(1 / 128, 100), mixed_excess(1 / 256, 10)]
    positive = [max(e, 0.0) for e in series]
    ok = (diag <= 1e-8 and series[1] <= 5e-3
          and all(b <= a for a, b in zip(positive, positive[1:])))
    detail = f"diagonal={diag:.3g} mixed/osc=" + ", ".join(f"{e:.3g}" for e in series)
    report(capsys, 5, ok, detail, t0)


def caccioppoli_bound(family, h, trials=20):
    box = BoundingBox.cube(-1, 1, h, 2)
    dom = make_domain(box, DISK, INNER)
    form = assemble(dom, structure_coefficients(family))
    K = np.hypot(*box.coordinates()) <= 0.4
    rng = np.random.default_rng(1)
    return max(caccioppoli_ratio(form, solve_in_omega(form, random_trig(box, rng)), K, family)
               for _ in range(trials))


def test_c06_caccioppoli(capsys):
    t0 = time.time()
    parts, ok = [], True
    for fam in (euclidean(2), grushin(1.0)):
        c1, c2 = caccioppoli_bound(fam, 1 / 64), caccioppoli_bound(fam, 1 / 128)
        change = abs(c2 / c1 - 1)
        ok &= change < 0.1
        parts.append(f"{fam.name} C={c1:.4f}->{c2:.4f} ({change:.1%})")
    report(capsys, 6, ok, "; ".join(parts), t0)


# (center, r, rho): K_t is the lower half of the closed disk of radius t
NESTED = [((0, 0), 0.1, 0.3), ((0.2, 0.1), 0.05, 0.25), ((-0.3, 0.2), 0.15, 0.4),
          ((0, 0.3), 0.08, 0.2), ((0.1, -0.2), 0.2, 0.5), ((0, 0), 0.05, 0.4),
          ((0.25, 0), 0.12, 0.24), ((-0.1, -0.1), 0.3, 0.6), ((0.3, 0.3), 0.1, 0.15),
          ((0, -0.4), 0.1, 0.3)]


def test_c07_measure_bounded_by_capacity(capsys):
    t0 = time.time()
    box = BoundingBox.cube(-1.03125, 1.03125, 1 / 128, 2)
    dom = make_domain(box, {"ball": {"center": [0, 0], "radius": 1.0}},
                      {"ball": {"center": [0, 0], "radius": 0.9}})
    x = box.coordinates()
    worst, ok = {}, True
    for fam in (euclidean(2), grushin(1.0)):
        form = assemble(dom, structure_coefficients(fam))
        gaps = []
        for c, r, rho in NESTED:
            d = np.hypot(x[0] - c[0], x[1] - c[1])
            lower = x[1] <= c[1]
            p = capmeasure_pairing(capacity(form, (d <= r) & lower),
                                   capacity(form, (d <= rho) & lower))
            ok &= p.lemma_i_ok
            gaps.append(p.mu_rho_on_Kr - p.cap_r)
        worst[fam.name] = max(gaps)
    report(capsys, 7, ok, " ".join(f"{k}: max(mu-cap)={v:.4f}" for k, v in worst.items()), t0)


def test_c08_green_band(capsys):
    t0 = time.time()
    box = BoundingBox.cube(-1.03125, 1.03125, 1 / 256, 2)
    dom = make_domain(box, {"ball": {"center": [0, 0], "radius": 1.0}},
                      {"ball": {"center": [0, 0], "radius": 0.9}})
    ratios = []
    for fam in (euclidean(2), grushin(1.0)):
        form = assemble(dom, structure_coefficients(fam))
        for pole in ((0.0, 0.0), (0.3, 0.2)):
            p = box.nearest_node(pole)
            band = green_band(form, green_column(form, p), control_distance(fam, p, box))
            ratios.append(band.ratios)
    r = np.concatenate(ratios)
    C = max(r.max(), 1 / r.min())
    report(capsys, 8, r.size > 0 and C < 10, f"C={C:.3f} over {r.size} pairs", t0)


def scenario_report(name, command):
    return run(command, load_scenario(SCENARIOS / name))


@pytest.mark.slow
def test_c09_classification_separation(capsys):
    t0 = time.time()
    flat = scenario_report("halfspace_3d.yaml", "classify")["results"][0]
    spine = scenario_report("spine_3d.yaml", "classify")["results"][0]
    gap = flat["term_slope"] - spine["term_slope"]
    ok = (flat["verdict"] == "regular" and spine["verdict"] == "irregular" and gap >= 0.4
          and time.time() - t0 < 900)
    detail = f"half-space={flat['verdict']} spine={spine['verdict']} term-slope gap={gap:.3f}"
    report(capsys, 9, ok, detail, t0)


def test_c10_cone(capsys):
    t0 = time.time()
    cone = scenario_report("cone_2d.yaml", "cone")["results"][0]
    verdict = scenario_report("cone_2d.yaml", "classify")["results"][0]["verdict"]
    theta = np.array(cone["theta"])
    ok = cone["pass"] and np.all(np.abs(theta - 0.125) <= 0.03) and verdict == "regular"
    report(capsys, 10, ok, f"theta={np.round(theta, 4).tolist()} verdict={verdict}", t0)


@pytest.mark.slow
def test_c11_coefficient_invariance(capsys):
    t0 = time.time()
    parts, ok = [], True
    for name in ("invariance_halfspace_3d.yaml", "invariance_spine_3d.yaml"):
        rep = scenario_report(name, "invariance")
        verdicts = [v["verdict"] for r in rep["results"] for v in r["verdicts"]]
        ok &= rep["agree"] and rep["comparable"]
        parts.append(f"{name.split('_', 1)[1].split('.')[0]}: {'/'.join(verdicts)}"
                     f" comparable={rep['comparable']}")
    report(capsys, 11, ok, "; ".join(parts), t0)


def test_c12_point_capacity(capsys):
    t0 = time.time()
    hs = np.array([1 / 64, 1 / 128, 1 / 256])
    caps = []
    for h in hs:
        n = round(1.0625 / h)
        box = BoundingBox.cube(-n * h, n * h, h, 2)
        dom = make_domain(box, {"ball": {"center": [0, 0], "radius": 1.0}},
                          {"ball": {"center": [0, 0], "radius": 0.9}})
        K = np.zeros(box.shape, dtype=bool)
        K[box.nearest_node((0.0, 0.0))] = True
        caps.append(capacity(assemble(dom, structure_coefficients(euclidean(2))), K).capacity)
    caps = np.array(caps)
    basis = 1 / np.log(1 / hs)
    c = np.sum(caps * basis) / np.sum(basis**2)
    dev = np.max(np.abs(caps / (c * basis) - 1))
    ok = bool(np.all(np.diff(caps) < 0)) and dev <= 0.15
    report(capsys, 12, ok, f"cap={np.round(caps, 4).tolist()} c={c:.3f} max dev={dev:.1%}", t0)
