import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from massfuse import CovariateMatrix, DesignSpec, NonProbSample, ProbSample, validate_pair
from massfuse.errors import InvalidProbability, MismatchedColumns, NonFiniteValue, ShapeMismatch, ValidationError


def _pair(pi=(0.5, 0.25), names=("x1", "x2"), y=(1.0, 2.0, 3.0)):
    donors = NonProbSample(CovariateMatrix(np.arange(6.0).reshape(3, 2), names), np.array(y))
    recipients = ProbSample(CovariateMatrix(np.ones((len(pi), 2)), ("x1", "x2")), np.array(pi))
    return donors, recipients


def test_valid_pair_is_returned_unchanged():
    a, b = _pair()
    a2, b2 = validate_pair(a, b)
    assert a2 is a and b2 is b


def test_zero_probability_names_row_two():
    a, b = _pair(pi=(0.5, 0.0))
    with pytest.raises(ValidationError) as info:
        validate_pair(a, b)
    (v,) = info.value.violations
    assert isinstance(v, InvalidProbability) and v.row == 2


def test_swapped_column_order_is_mismatch():
    a, b = _pair(names=("x2", "x1"))
    with pytest.raises(ValidationError) as info:
        validate_pair(a, b)
    assert any(isinstance(v, MismatchedColumns) for v in info.value.violations)
    # name lists differ exactly when the pair is rejected
    assert a.x.column_names != b.x.column_names


def test_non_finite_outcome_reported():
    a, b = _pair(y=(1.0, np.nan, 3.0))
    with pytest.raises(ValidationError) as info:
        validate_pair(a, b)
    (v,) = info.value.violations
    assert isinstance(v, NonFiniteValue) and v.row == 2 and v.column == "y"


def test_validate_is_idempotent():
    a, b = _pair()
    assert validate_pair(*validate_pair(a, b)) == (a, b)


def test_covariate_matrix_shape_checks():
    with pytest.raises(ShapeMismatch):
        CovariateMatrix(np.ones((3, 2)), ("a",))
    with pytest.raises(ShapeMismatch):
        CovariateMatrix(np.ones((3, 2)), ("a", "a"))


def test_samples_are_immutable():
    a, _ = _pair()
    with pytest.raises(ValueError):
        a.y[0] = 5.0


def test_explicit_design_rejects_asymmetric_joint():
    from massfuse.errors import DataError

    with pytest.raises(DataError):
        DesignSpec.explicit(np.array([[0.5, 0.1], [0.2, 0.5]]))


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 6),
    bad_pi=st.sampled_from([0.0, -0.1, 1.5, np.nan, np.inf]),
    bad_x=st.sampled_from([np.nan, np.inf, -np.inf]),
    where=st.integers(0, 5),
    kind=st.sampled_from(["pi", "x", "y", "none"]),
)
def test_accepted_pairs_satisfy_invariants(n, bad_pi, bad_x, where, kind):
    rng = np.random.default_rng(n * 31 + where)
    Xa = rng.normal(size=(n, 2))
    ya = rng.normal(size=n)
    Xb = rng.normal(size=(n, 2))
    pi = rng.uniform(0.01, 1.0, n)
    i = where % n
    if kind == "pi":
        pi[i] = bad_pi
    elif kind == "x":
        Xb[i, 1] = bad_x
    elif kind == "y":
        ya[i] = bad_x
    a = NonProbSample(CovariateMatrix(Xa, ("x1", "x2")), ya)
    b = ProbSample(CovariateMatrix(Xb, ("x1", "x2")), pi)
    try:
        validate_pair(a, b)
    except ValidationError as exc:
        assert kind != "none"
        assert all(getattr(v, "row", None) == i + 1 for v in exc.violations)
        return
    assert kind == "none"
    assert np.all(np.isfinite(a.x.values)) and np.all(np.isfinite(b.x.values)) and np.all(np.isfinite(a.y))
    assert np.all((b.pi > 0) & (b.pi <= 1))
