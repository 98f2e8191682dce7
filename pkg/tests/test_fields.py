import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from xelliptic.errors import ConfigurationError, XEllipticityViolation
from xelliptic.fields import (CoefficientMatrix, check_x_ellipticity, coefficients_from_config,
                              constant_coefficients, diagonal, euclidean, family_from_config,
                              grushin, heisenberg, random_symmetric, sampled_lipschitz,
                              sandwich_coefficients, structure_coefficients, structure_matrix)
from xelliptic.geometry import BoundingBox


def test_grushin_structure_matrix():
    A = structure_matrix(grushin(1.0), [0.5, 2.0])
    np.testing.assert_allclose(A, [[1.0, 0.0], [0.0, 0.25]])
    A = structure_matrix(grushin(2.0, dim=3), [0.3, 0.4, 9.0])
    np.testing.assert_allclose(np.diag(A), [1.0, 1.0, 0.0625])


def test_heisenberg_structure_matrix():
    x, y = 0.5, -0.25
    A = structure_matrix(heisenberg(), [x, y, 3.0])
    # hand-expanded X1 X1^T + X2 X2^T with X1 = (1, 0, 2y), X2 = (0, 1, -2x)
    expected = [[1, 0, 2 * y], [0, 1, -2 * x], [2 * y, -2 * x, 4 * y * y + 4 * x * x]]
    np.testing.assert_allclose(A, expected)
    assert np.linalg.matrix_rank(A) == 2


def test_diagonal_bump_and_const():
    fam = diagonal({"delta": 0.1, "center": [0, 0], "width": 0.5}, 2.0)
    X = fam.evaluate(np.array([[0.0, 1.0], [0.0, 0.0]]))
    np.testing.assert_allclose(X[0, 0], [0.1, 1.0])
    np.testing.assert_allclose(X[1, 1], [2.0, 2.0])


def test_family_config_errors():
    with pytest.raises(ConfigurationError):
        family_from_config({"name": "grushin", "alpha": 0.5})
    with pytest.raises(ConfigurationError):
        family_from_config({"name": "kepler"})
    with pytest.raises(ConfigurationError):
        family_from_config({"name": "euclidean", "dims": 2})
    assert family_from_config("heisenberg").count == 2


def test_structure_band_is_exact():
    fam = grushin(1.0)
    pts = np.random.default_rng(1).uniform(-1, 1, (2, 200))
    rep = check_x_ellipticity(structure_coefficients(fam, 2.0), fam, pts)
    assert rep.passes
    assert rep.min_ratio == pytest.approx(2.0) and rep.max_ratio == pytest.approx(2.0)


def test_constant_band_is_eigenvalue_range():
    B = constant_coefficients([[2.0, 1.0], [1.0, 2.0]])
    assert (B.lam, B.Lam) == pytest.approx((1.0, 3.0))
    assert not B.diagonal
    with pytest.raises(ConfigurationError):
        constant_coefficients([[1.0, 2.0], [0.0, 1.0]])


def test_violation_outside_span_is_caught():
    fam = grushin(1.0)
    bad = CoefficientMatrix(lambda x: np.broadcast_to(np.eye(2)[:, :, None], (2, 2, x.shape[1])),
                            0.5, 2.0)
    with pytest.raises(XEllipticityViolation):
        check_x_ellipticity(bad, fam, np.array([[0.0, 0.5], [0.1, 0.1]]))


def test_violation_of_band_reported():
    fam = euclidean(2)
    B = constant_coefficients(np.diag([1.0, 4.0]))
    lie = CoefficientMatrix(B.evaluator, 1.0, 2.0)
    rep = check_x_ellipticity(lie, fam, np.zeros((2, 5)), samples=64)
    assert not rep.passes


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), c2=st.floats(-0.9, 0.9))
def test_sandwich_is_x_elliptic(seed, c2):
    rng = np.random.default_rng(seed)
    fam = grushin(1.0)
    R = random_symmetric(2, rng)
    B = sandwich_coefficients(fam, R, 1.0, c2, amax=1.0)
    pts = rng.uniform(-1, 1, (2, 64))
    rep = check_x_ellipticity(B, fam, pts, rng=rng)
    assert rep.passes


@settings(max_examples=25, deadline=None)
@given(R=arrays(float, (3, 3), elements=st.floats(-1, 1)))
def test_random_symmetric_norm(R):
    rng = np.random.default_rng(int(abs(R.sum()) * 1e6) % 2**31)
    S = random_symmetric(3, rng, norm=0.7)
    assert np.array_equal(S, S.T)
    assert np.max(np.abs(np.linalg.eigvalsh(S))) == pytest.approx(0.7)


def test_coefficients_from_config():
    fam = euclidean(3)
    box = BoundingBox.cube(-1, 1, 0.5, 3)
    B = coefficients_from_config({"type": "sandwich", "c1": 1.25, "c2": 0.75, "amax": 1.0,
                                  "R": [[0, 0, 0], [0, 0, 1], [0, 1, 0]]}, fam, box)
    assert (B.lam, B.Lam) == pytest.approx((0.5, 2.0))
    assert coefficients_from_config({"type": "structure", "scale": 2}, fam).label == "2A"
    with pytest.raises(ConfigurationError):
        coefficients_from_config({"type": "constant", "matrix": np.eye(2)}, grushin())
    with pytest.raises(ConfigurationError):
        coefficients_from_config({"kind": "structure"}, fam)


def test_lipschitz_declared_bound_dominates_sample():
    box = BoundingBox.cube(-1, 1, 0.05, 2)
    for fam in (grushin(1.0), grushin(2.0), diagonal({"delta": 0.2, "center": [0, 0], "width": 0.5}, 1.0)):
        assert sampled_lipschitz(fam, box) <= fam.lipschitz_bound(box) * (1 + 1e-9)
