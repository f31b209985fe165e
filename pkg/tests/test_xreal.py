import pytest

from morseflow.xreal import NEG_INF, POS_INF, XReal, finite


def test_ordering():
    assert NEG_INF < finite(-1e300) < finite(0.0) < finite(1e300) < POS_INF
    assert max(finite(2.0), finite(3.0)) == finite(3.0)
    assert min(NEG_INF, finite(-5.0)) == NEG_INF


def test_shift_keeps_infinities():
    assert finite(1.0).shift(2.5) == finite(3.5)
    assert POS_INF.shift(-10.0) == POS_INF
    assert NEG_INF.shift(10.0) == NEG_INF


def test_negation():
    assert -POS_INF == NEG_INF
    assert -finite(2.0) == finite(-2.0)


def test_json_encoding():
    assert POS_INF.to_json() == "inf"
    assert NEG_INF.to_json() == "-inf"
    assert finite(0.5).to_json() == 0.5


def test_finite_value_guard():
    assert finite(4.0).finite_value() == 4.0
    with pytest.raises(ValueError):
        POS_INF.finite_value()
    assert finite(4.0).is_finite and not NEG_INF.is_finite
