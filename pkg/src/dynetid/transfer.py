"""Scalar discrete-time transfer functions in the delay operator.

A transfer function is stored as two coefficient tuples ``num`` and ``den``,
where index ``k`` holds the coefficient of the k-step delay ``q^-k``.  The
denominator is kept monic in the delay operator (``den[0] == 1``), so every
representable transfer function is proper by construction and the direct
feedthrough is simply ``num[0]``.

All arithmetic is exact polynomial arithmetic on the coefficient lists,
followed by trimming of negligible trailing coefficients.  No pole/zero
cancellation is attempted; equality of dynamics is checked by frequency
response, not by coefficient comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .errors import DegreeCapExceeded, ImproperResult, PoleAtPoint

__all__ = [
    "TransferFunction",
    "add",
    "sub",
    "mul",
    "inv",
    "feedback",
    "evaluate",
    "ZERO",
    "ONE",
    "DELAY",
]

#: Maximum polynomial degree allowed to come out of an arithmetic operation.
DEGREE_CAP = 64

#: Coefficients with magnitude below this are trimmed after arithmetic.
COEFF_TRIM = 1e-12

#: A pole is declared stable when its magnitude is below 1 minus this margin.
STABILITY_MARGIN = 1e-9

TFLike = Union["TransferFunction", int, float]


def _trim(coeffs: Iterable[float]) -> tuple[float, ...]:
    """Drop trailing coefficients below the trim threshold."""
    c = list(float(x) for x in coeffs)
    while len(c) > 1 and abs(c[-1]) < COEFF_TRIM:
        c.pop()
    if not c:
        c = [0.0]
    return tuple(c)


def _conv(a: tuple[float, ...], b: tuple[float, ...]) -> tuple[float, ...]:
    return tuple(np.convolve(np.asarray(a), np.asarray(b)))


def _padded_sum(a: tuple[float, ...], b: tuple[float, ...], sign: float) -> tuple[float, ...]:
    n = max(len(a), len(b))
    out = np.zeros(n)
    out[: len(a)] += a
    out[: len(b)] += sign * np.asarray(b)
    return tuple(out)


@dataclass(frozen=True)
class TransferFunction:
    """Proper rational transfer function in the delay operator.

    Parameters
    ----------
    num, den : sequence of float
        Coefficient lists in ``q^-1``; ``den`` must have a nonzero leading
        coefficient (common leading zeros of ``num`` and ``den`` are
        cancelled first).  Both are rescaled so that ``den[0] == 1``.
    """

    num: tuple[float, ...]
    den: tuple[float, ...] = (1.0,)

    def __post_init__(self) -> None:
        num = [float(x) for x in (self.num if not np.isscalar(self.num) else [self.num])]
        den = [float(x) for x in self.den]
        if not num:
            num = [0.0]
        if not den or not any(abs(d) >= COEFF_TRIM for d in den):
            raise ValueError("denominator must be a nonzero polynomial")
        # cancel a common q^-k factor
        while len(den) > 1 and abs(den[0]) < COEFF_TRIM and num and abs(num[0]) < COEFF_TRIM:
            den.pop(0)
            if len(num) > 1:
                num.pop(0)
        if abs(den[0]) < COEFF_TRIM:
            raise ImproperResult("denominator has zero leading coefficient")
        scale = den[0]
        num = [c / scale for c in num]
        den = [c / scale for c in den]
        object.__setattr__(self, "num", _trim(num))
        object.__setattr__(self, "den", _trim(den))
        if len(self.num) - 1 > DEGREE_CAP or len(self.den) - 1 > DEGREE_CAP:
            raise DegreeCapExceeded(
                f"degree {max(len(self.num), len(self.den)) - 1} exceeds cap {DEGREE_CAP}"
            )

    # -- structure ---------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return all(abs(c) < COEFF_TRIM for c in self.num)

    @property
    def feedthrough(self) -> float:
        """Instantaneous gain (value at z = infinity)."""
        return self.num[0]

    @property
    def has_delay(self) -> bool:
        """True when the response starts at least one sample after the input."""
        return abs(self.num[0]) < COEFF_TRIM

    @property
    def degree(self) -> int:
        return max(len(self.num), len(self.den)) - 1

    def poles(self) -> np.ndarray:
        """Poles in the z-plane (roots of ``z^n * den(z^-1)``)."""
        if len(self.den) == 1:
            return np.zeros(0, dtype=complex)
        return np.roots(np.asarray(self.den))

    def zeros(self) -> np.ndarray:
        if len(self.num) == 1:
            return np.zeros(0, dtype=complex)
        return np.roots(np.asarray(self.num))

    @property
    def is_stable(self) -> bool:
        p = self.poles()
        return bool(p.size == 0 or np.max(np.abs(p)) < 1.0 - STABILITY_MARGIN)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def constant(c: float) -> "TransferFunction":
        return TransferFunction((float(c),), (1.0,))

    @staticmethod
    def delay(k: int = 1) -> "TransferFunction":
        if k < 0:
            raise ImproperResult("negative delay is not representable")
        return TransferFunction((0.0,) * k + (1.0,), (1.0,))

    @staticmethod
    def first_order(gain: float, pole: float = 0.0, delay: int = 1) -> "TransferFunction":
        """``gain * q^-delay / (1 - pole * q^-1)``, the desk-scale workhorse."""
        return TransferFunction((0.0,) * delay + (gain,), (1.0, -float(pole)))

    # -- evaluation --------------------------------------------------------

    def __call__(self, z: complex) -> complex:
        return evaluate(self, z)

    # -- arithmetic sugar ---------------------------------------------------

    def __add__(self, other: TFLike) -> "TransferFunction":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: TFLike) -> "TransferFunction":
        return sub(self, other)

    def __rsub__(self, other: TFLike) -> "TransferFunction":
        return sub(other, self)

    def __mul__(self, other: TFLike) -> "TransferFunction":
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "TransferFunction":
        return mul(self, -1.0)


ZERO = TransferFunction((0.0,))
ONE = TransferFunction((1.0,))
DELAY = TransferFunction.delay(1)


def _coerce(x: TFLike) -> TransferFunction:
    if isinstance(x, TransferFunction):
        return x
    return TransferFunction.constant(float(x))


def add(a: TFLike, b: TFLike) -> TransferFunction:
    """Exact sum ``a + b``."""
    a, b = _coerce(a), _coerce(b)
    if a.is_zero:
        return b
    if b.is_zero:
        return a
    num = _padded_sum(_conv(a.num, b.den), _conv(b.num, a.den), +1.0)
    return TransferFunction(num, _conv(a.den, b.den))


def sub(a: TFLike, b: TFLike) -> TransferFunction:
    """Exact difference ``a - b``."""
    a, b = _coerce(a), _coerce(b)
    if b.is_zero:
        return a
    num = _padded_sum(_conv(a.num, b.den), _conv(b.num, a.den), -1.0)
    return TransferFunction(num, _conv(a.den, b.den))


def mul(a: TFLike, b: TFLike) -> TransferFunction:
    """Exact product ``a * b``."""
    a, b = _coerce(a), _coerce(b)
    if a.is_zero or b.is_zero:
        return ZERO
    return TransferFunction(_conv(a.num, b.num), _conv(a.den, b.den))


def inv(a: TFLike) -> TransferFunction:
    """Exact inverse ``1 / a``.

    Raises
    ------
    ImproperResult
        If ``a`` has zero feedthrough: the inverse of a strictly delayed
        transfer function is acausal.
    """
    a = _coerce(a)
    if abs(a.num[0]) < COEFF_TRIM:
        raise ImproperResult("cannot invert a strictly delayed transfer function")
    return TransferFunction(a.den, a.num)


def feedback(a: TFLike, b: TFLike) -> TransferFunction:
    """Closed-loop map ``a / (1 - a*b)`` of the loop with forward path ``a``."""
    a, b = _coerce(a), _coerce(b)
    d = sub(1.0, mul(a, b))
    return mul(a, inv(d))


def evaluate(tf: TransferFunction, z: complex) -> complex:
    """Frequency-response value ``num(z^-1) / den(z^-1)``.

    Raises
    ------
    PoleAtPoint
        If the denominator magnitude at the point falls below 1e-12.
    """
    z = complex(z)
    if z == 0:
        raise ValueError("evaluation point z must be nonzero")
    x = 1.0 / z
    powers = x ** np.arange(max(len(tf.num), len(tf.den)))
    den_val = np.dot(tf.den, powers[: len(tf.den)])
    if abs(den_val) < 1e-12:
        raise PoleAtPoint(f"denominator magnitude {abs(den_val):.2e} at z={z}")
    num_val = np.dot(tf.num, powers[: len(tf.num)])
    return complex(num_val / den_val)
