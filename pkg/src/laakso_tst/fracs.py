"""Exact rational helpers.

All metric quantities in this package are `fractions.Fraction` values.  The
helpers here cover the serialization contract: rationals travel as
"num/den" strings, and human-facing output gets an extra decimal rendering
that is never parsed back.
"""

from __future__ import annotations

from fractions import Fraction

from .errors import ParseError


def parse_fraction(text) -> Fraction:
    """Parse "num/den" (or a bare integer string, or an int) exactly."""
    if isinstance(text, Fraction):
        return text
    if isinstance(text, int):
        return Fraction(text)
    if not isinstance(text, str):
        raise ParseError(f"expected rational string, got {type(text).__name__}")
    s = text.strip()
    try:
        if "/" in s:
            num, den = s.split("/", 1)
            return Fraction(int(num.strip()), int(den.strip()))
        return Fraction(int(s))
    except (ValueError, ZeroDivisionError) as exc:
        raise ParseError(f"bad rational {text!r}: {exc}") from None


def format_fraction(q: Fraction) -> str:
    """Canonical "num/den" form; integers render without a denominator."""
    q = Fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def decimal_str(q: Fraction, places: int = 12) -> str:
    """Fixed-point decimal rendering for humans; round-half-even free.

    Truncates toward zero after `places` digits, which keeps the rendering
    deterministic and avoids implying more precision than we have.
    """
    q = Fraction(q)
    sign = "-" if q < 0 else ""
    q = abs(q)
    whole = q.numerator // q.denominator
    rem = q.numerator - whole * q.denominator
    digits = []
    for _ in range(places):
        rem *= 10
        d = rem // q.denominator
        digits.append(str(d))
        rem -= d * q.denominator
        if rem == 0:
            break
    frac_part = "".join(digits).rstrip("0")
    if not frac_part:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{frac_part}"
