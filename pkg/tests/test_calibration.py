import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crgate.calibration import (
    ConditioningError,
    CrosstalkWarning,
    ResponseMatrix,
    apply_correction,
    invert_response,
    load_response_csv,
    printed_correction_matrix,
    save_response_csv,
)


def test_bundled_matrix_shape():
    m = printed_correction_matrix()
    assert m.size == 12
    assert m.labels[:3] == ("Q1", "C1", "Q2") and m.labels[-1] == "C6"
    assert m.is_diagonally_dominant()


def test_double_inversion_recovers_fixture():
    m = printed_correction_matrix()
    with warnings.catch_warnings():
        warnings.simplefilter("error", CrosstalkWarning)
        back = invert_response(invert_response(m))
    assert np.max(np.abs(back.matrix - m.matrix)) < 1e-3


@given(st.integers(0, 2**31 - 1), st.integers(2, 12), st.floats(0.0, 0.05))
def test_double_inversion_random(seed, n, scale):
    rng = np.random.default_rng(seed)
    off = rng.uniform(-scale, scale, size=(n, n))
    m = ResponseMatrix(np.eye(n) + off - np.diag(np.diag(off)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CrosstalkWarning)
        back = invert_response(invert_response(m))
    np.testing.assert_allclose(back.matrix, m.matrix, atol=1e-10)


def test_singular_matrix_rejected():
    with pytest.raises(ConditioningError):
        invert_response(ResponseMatrix(np.array([[1.0, 1.0], [1.0, 1.0]])))
    with pytest.raises(np.linalg.LinAlgError):
        invert_response(ResponseMatrix(np.diag([1.0, 1e-8])))


def test_strong_crosstalk_warns():
    with pytest.warns(CrosstalkWarning):
        invert_response(ResponseMatrix(np.array([[1.0, 0.3], [0.0, 1.0]])))


def test_apply_correction():
    corr = invert_response(ResponseMatrix(np.array([[1.0, 0.02], [-0.01, 1.0]])))
    np.testing.assert_array_equal(apply_correction(corr, [0.0, 0.0]), [0.0, 0.0])
    np.testing.assert_allclose(apply_correction(corr, [1.0, 0.0]), corr.matrix[:, 0])
    with pytest.raises(ValueError):
        apply_correction(corr, [1.0, 2.0, 3.0])


def test_csv_round_trip(tmp_path):
    m = printed_correction_matrix()
    save_response_csv(m, tmp_path / "m.csv")
    back = load_response_csv(tmp_path / "m.csv")
    assert back.labels == m.labels
    np.testing.assert_array_equal(back.matrix, m.matrix)


def test_shape_validation():
    with pytest.raises(ValueError):
        ResponseMatrix(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ResponseMatrix(np.eye(2), ("a",))
