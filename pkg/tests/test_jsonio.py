import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from benchtop.jsonio import canonical_dumps, quantize


def test_keys_sorted_and_compact():
    assert canonical_dumps({"b": 1, "a": 2}) == '{"a":2,"b":1}'


def test_floats_fixed_six_decimals():
    assert canonical_dumps(0.5) == "0.500000"
    assert canonical_dumps([1.0, -0.25]) == "[1.000000,-0.250000]"


def test_bool_is_not_an_int():
    assert canonical_dumps(True) == "true"
    assert canonical_dumps({"flag": False, "n": 0}) == '{"flag":false,"n":0}'


def test_none_and_strings():
    assert canonical_dumps(None) == "null"
    assert canonical_dumps("a\"b") == '"a\\"b"'


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        canonical_dumps(float("nan"))
    with pytest.raises(ValueError):
        canonical_dumps([math.inf])


def test_unsupported_type_rejected():
    with pytest.raises(ValueError):
        canonical_dumps({"x": object()})


def test_quantize_six_decimals():
    assert quantize(0.1234564) == 0.123456
    assert quantize(0.1234565) == pytest.approx(0.123456, abs=1e-9)
    assert quantize(1.9999999) == 2.0


def test_quantize_negative_zero_normalized():
    q = quantize(-1e-9)
    assert q == 0.0
    assert math.copysign(1.0, q) == 1.0
    assert canonical_dumps(q) == "0.000000"


_scalars = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(min_value=-(10**12), max_value=10**12),
    st.floats(min_value=-1e6, max_value=1e6, allow_nan=False).map(quantize),
    st.text(max_size=20),
)
_values = st.recursive(
    _scalars,
    lambda inner: st.one_of(
        st.lists(inner, max_size=4),
        st.dictionaries(st.text(max_size=8), inner, max_size=4),
    ),
    max_leaves=20,
)


@given(_values)
def test_canonical_form_is_a_fixed_point(value):
    """Parsing canonical output and re-emitting it changes nothing."""
    first = canonical_dumps(value)
    assert canonical_dumps(json.loads(first)) == first


@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
def test_quantize_idempotent(x):
    assert quantize(quantize(x)) == quantize(x)
