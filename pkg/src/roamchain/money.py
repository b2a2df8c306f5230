"""Fixed-point money: all monetary amounts are integers in 1e-4 minor units.

Fiat and cryptocurrency amounts share the representation so that ledger
conservation audits are exact integer sums.
"""

from __future__ import annotations

SCALE = 10_000  # minor units per whole unit (4 decimal places)


def to_minor(amount: float | int | str) -> int:
    """Convert a decimal amount to integer minor units (round half away handled by round())."""
    value = round(float(amount) * SCALE)
    return int(value)


def from_minor(minor: int) -> float:
    return minor / SCALE


def fmt_minor(minor: int) -> str:
    """Render minor units as a fixed 4-decimal string, e.g. 12.5 -> '12.5000'."""
    sign = "-" if minor < 0 else ""
    whole, frac = divmod(abs(minor), SCALE)
    return f"{sign}{whole}.{frac:04d}"


def convert_minor(crypto_minor: int, rate: float) -> int:
    """Apply a fiat-per-crypto conversion rate to an amount in minor units."""
    if rate <= 0:
        raise ValueError("conversion rate must be positive")
    return round(crypto_minor * rate)
