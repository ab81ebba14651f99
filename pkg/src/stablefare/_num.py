"""Number helpers shared by the solvers.

All instance data is held as :class:`fractions.Fraction`; solvers convert to
``float`` only when running in floating mode.
"""

from __future__ import annotations

from decimal import Decimal
from fractions import Fraction
from typing import Union

Number = Union[int, float, Fraction, Decimal, str]


def frac(value: Number) -> Fraction:
    """Convert to an exact fraction.

    Floats go through their shortest ``repr`` so that ``0.4`` becomes ``2/5``
    rather than the binary expansion.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise ValueError(f"non-finite value {value!r}")
        return Fraction(repr(value))
    if isinstance(value, (Decimal, str)):
        return Fraction(value)
    raise TypeError(f"cannot convert {type(value).__name__} to Fraction")


def money(value: Fraction | float, places: int = 6) -> str:
    """Fixed-point decimal string used in every emitted file."""
    q = Decimal(1).scaleb(-places)
    if isinstance(value, Fraction):
        d = Decimal(value.numerator) / Decimal(value.denominator)
    else:
        d = Decimal(repr(float(value)))
    out = d.quantize(q)
    if out == 0:
        out = abs(out)
    return f"{out:.{places}f}"
