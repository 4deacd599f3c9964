"""attrs validators and converters shared by the configuration classes.

Converters accept the string form used in manifest files, so every config
class can be built directly from ``key = value`` entries. Validators raise
``ConfigurationError`` naming the offending field.
"""

from typing import Any, Iterable, Optional, Tuple, Union

from tied_mixer.errors import ConfigurationError


def to_int(value: Any) -> int:
    """
    >>> to_int("12"), to_int(3.0)
    (12, 3)
    """
    if isinstance(value, bool):
        raise ConfigurationError(f"expected an integer, got {value!r}")
    if isinstance(value, float):
        if not value.is_integer():
            raise ConfigurationError(f"expected an integer, got {value!r}")
        return int(value)
    try:
        return int(str(value).strip())
    except ValueError:
        raise ConfigurationError(f"expected an integer, got {value!r}") from None


def to_float(value: Any) -> float:
    try:
        return float(str(value).strip()) if isinstance(value, str) else float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"expected a number, got {value!r}") from None


def to_optional_int(value: Any) -> Optional[int]:
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
        return None
    return to_int(value)


def to_optional_float(value: Any) -> Optional[float]:
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
        return None
    return to_float(value)


def to_bool(value: Any) -> bool:
    """
    >>> to_bool("yes"), to_bool("False"), to_bool(1)
    (True, False, True)
    """
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {value!r}")


def _split(value: Union[str, Iterable]) -> list:
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return list(value)


def to_int_tuple(value: Union[str, Iterable]) -> Tuple[int, ...]:
    """
    >>> to_int_tuple("2, 4,8")
    (2, 4, 8)
    """
    return tuple(to_int(v) for v in _split(value))


def to_float_tuple(value: Union[str, Iterable]) -> Tuple[float, ...]:
    return tuple(to_float(v) for v in _split(value))


def to_str_tuple(value: Union[str, Iterable]) -> Tuple[str, ...]:
    return tuple(str(v) for v in _split(value))


def positive(instance, attribute, value):
    if value is None or value <= 0:
        raise ConfigurationError(f"must be > 0, got {value!r}", field=attribute.name)


def non_negative(instance, attribute, value):
    if value is None or value < 0:
        raise ConfigurationError(f"must be >= 0, got {value!r}", field=attribute.name)


def optional_positive(instance, attribute, value):
    if value is not None:
        positive(instance, attribute, value)


def in_range(low: float, high: float, include_high: bool = True):
    def validator(instance, attribute, value):
        ok = low <= value <= high if include_high else low <= value < high
        if not ok:
            closing = "]" if include_high else ")"
            raise ConfigurationError(
                f"must lie in [{low}, {high}{closing}, got {value!r}", field=attribute.name
            )

    return validator


def one_of(choices: Iterable[str]):
    allowed = tuple(choices)

    def validator(instance, attribute, value):
        if value not in allowed:
            raise ConfigurationError(
                f"must be one of {', '.join(allowed)}; got {value!r}", field=attribute.name
            )

    return validator


def all_one_of(choices: Iterable[str]):
    check = one_of(choices)

    def validator(instance, attribute, values):
        if not values:
            raise ConfigurationError("must not be empty", field=attribute.name)
        for value in values:
            check(instance, attribute, value)

    return validator


def non_empty_positive(instance, attribute, values):
    if not values:
        raise ConfigurationError("must not be empty", field=attribute.name)
    for value in values:
        if value <= 0:
            raise ConfigurationError(f"entries must be > 0, got {value!r}", field=attribute.name)


def ordered_pair(positive_low: bool = True):
    def validator(instance, attribute, value):
        if len(value) != 2 or value[0] > value[1] or (positive_low and value[0] <= 0):
            raise ConfigurationError(
                f"expected 'low, high' with 0 < low <= high, got {value!r}", field=attribute.name
            )

    return validator
