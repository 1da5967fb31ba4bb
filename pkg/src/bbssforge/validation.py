"""Small argument-checking helpers shared by the pipeline stages."""

from numbers import Integral, Real


def check_int(value, name, minimum=None):
    """Return ``value`` as an int, rejecting bools, floats and anything below ``minimum``."""
    if isinstance(value, bool) or not isinstance(value, Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_positive(value, name):
    if isinstance(value, bool) or not isinstance(value, Real):
        raise TypeError(f"{name} must be a number, got {value!r}")
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value


def check_coordinates(latitude, longitude):
    if not -90.0 <= latitude <= 90.0:
        raise ValueError(f"latitude out of range: {latitude}")
    if not -180.0 <= longitude <= 180.0:
        raise ValueError(f"longitude out of range: {longitude}")


def check_bounds(low, high, capacity, names=("min_s", "max_s", "capacity")):
    """Require integers with 0 <= low <= high <= capacity."""
    for value, name in zip((low, high, capacity), names):
        check_int(value, name)
    if not 0 <= low <= high <= capacity:
        raise ValueError(
            f"need 0 <= {names[0]} <= {names[1]} <= {names[2]}, "
            f"got {low}, {high}, {capacity}"
        )


def parse_sizes(text):
    """Parse a comma separated list of positive sizes such as ``"40,80,120"``."""
    try:
        sizes = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValueError(f"invalid size list: {text!r}") from None
    if not sizes or any(size < 1 for size in sizes):
        raise ValueError(f"sizes must be positive integers: {text!r}")
    return sizes
