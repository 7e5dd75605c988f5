import pytest
from hypothesis import given, strategies as st

from macrodimer.units import SUPPORTED_UNITS, units_convert

pairs = [(a, b) for group in SUPPORTED_UNITS.values() for a in group for b in group]


def test_temperature_equivalent_of_100_mhz():
    assert units_convert(100, "h*MHz", "mK") == pytest.approx(4.8, rel=0.02)


def test_force_slope_in_piconewton():
    assert units_convert(0.08, "h*GHz/um", "pN") == pytest.approx(5.3e-8, rel=0.01)


@pytest.mark.parametrize("a,b", pairs)
def test_zero_maps_to_zero(a, b):
    assert units_convert(0.0, a, b) == 0.0


@pytest.mark.parametrize("a,b", pairs)
@given(x=st.floats(min_value=-1e12, max_value=1e12, allow_nan=False).filter(lambda v: abs(v) > 1e-12))
def test_round_trip(a, b, x):
    assert units_convert(units_convert(x, a, b), b, a) == pytest.approx(x, rel=1e-12)


def test_aliases():
    assert units_convert(1, "h·GHz/μm", "h*MHz/um") == pytest.approx(1000)


def test_unsupported_pair_lists_groups():
    with pytest.raises(ValueError, match="energy: .*force: "):
        units_convert(1, "mK", "pN")
    with pytest.raises(ValueError):
        units_convert(1, "furlong", "mK")
