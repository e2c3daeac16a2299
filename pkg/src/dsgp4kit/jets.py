"""Forward-mode scalar automatic differentiation.

A Jet carries a float value plus a tuple of K partial derivatives and
overloads arithmetic so that derivative bookkeeping rides along with the
ordinary float computation.  Code written against plain floats runs
unchanged on Jets as long as it sticks to the operators and the math
helpers below; comparisons and branches see only the value, so control
flow is identical to the float run.
"""

import math

__all__ = [
    "Jet",
    "lift",
    "seed",
    "value_of",
    "partials_of",
    "sin",
    "cos",
    "sqrt",
    "atan2",
    "fabs",
    "exp",
    "log",
]

_REAL = (int, float)


class Jet:
    """A truncated first-order Taylor scalar: value + K partials."""

    __slots__ = ("value", "partials")

    def __init__(self, value, partials):
        self.value = value
        self.partials = tuple(partials)

    def __repr__(self):
        return "Jet(%r, %r)" % (self.value, self.partials)

    @property
    def width(self):
        return len(self.partials)

    def _check(self, other):
        if len(other.partials) != len(self.partials):
            raise ValueError(
                "jet width mismatch: %d vs %d"
                % (len(self.partials), len(other.partials))
            )

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Jet):
            self._check(other)
            return Jet(
                self.value + other.value,
                tuple(a + b for a, b in zip(self.partials, other.partials)),
            )
        if isinstance(other, _REAL):
            return Jet(self.value + other, self.partials)
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Jet):
            self._check(other)
            return Jet(
                self.value - other.value,
                tuple(a - b for a, b in zip(self.partials, other.partials)),
            )
        if isinstance(other, _REAL):
            return Jet(self.value - other, self.partials)
        return NotImplemented

    def __rsub__(self, other):
        if isinstance(other, _REAL):
            return Jet(other - self.value, tuple(-a for a in self.partials))
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, Jet):
            self._check(other)
            u, v = self.value, other.value
            return Jet(
                u * v,
                tuple(a * v + u * b for a, b in zip(self.partials, other.partials)),
            )
        if isinstance(other, _REAL):
            return Jet(self.value * other, tuple(a * other for a in self.partials))
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            self._check(other)
            u, v = self.value, other.value
            q = u / v
            return Jet(
                q,
                tuple((a - q * b) / v for a, b in zip(self.partials, other.partials)),
            )
        if isinstance(other, _REAL):
            return Jet(self.value / other, tuple(a / other for a in self.partials))
        return NotImplemented

    def __rtruediv__(self, other):
        if isinstance(other, _REAL):
            v = self.value
            q = other / v
            return Jet(q, tuple(-q * a / v for a in self.partials))
        return NotImplemented

    def __pow__(self, exponent):
        if not isinstance(exponent, _REAL):
            return NotImplemented
        v = self.value
        w = v ** exponent
        coeff = exponent * v ** (exponent - 1.0)
        return Jet(w, tuple(coeff * a for a in self.partials))

    def __mod__(self, modulus):
        # Angle reduction: locally an identity shift, so partials pass
        # through unchanged (right-sided derivative at the wrap points).
        if isinstance(modulus, _REAL):
            return Jet(self.value % modulus, self.partials)
        return NotImplemented

    def __neg__(self):
        return Jet(-self.value, tuple(-a for a in self.partials))

    def __pos__(self):
        return self

    def __abs__(self):
        if self.value < 0.0:
            return -self
        return self

    # -- comparisons see the value only -------------------------------

    def _val(self, other):
        if isinstance(other, Jet):
            return other.value
        if isinstance(other, _REAL):
            return other
        return None

    def __lt__(self, other):
        v = self._val(other)
        return NotImplemented if v is None else self.value < v

    def __le__(self, other):
        v = self._val(other)
        return NotImplemented if v is None else self.value <= v

    def __gt__(self, other):
        v = self._val(other)
        return NotImplemented if v is None else self.value > v

    def __ge__(self, other):
        v = self._val(other)
        return NotImplemented if v is None else self.value >= v

    def __eq__(self, other):
        v = self._val(other)
        return NotImplemented if v is None else self.value == v

    def __ne__(self, other):
        v = self._val(other)
        return NotImplemented if v is None else self.value != v

    __hash__ = None


def lift(x, width):
    """Wrap a float as a Jet with all partials zero."""
    return Jet(float(x), (0.0,) * width)


def seed(x, index, width):
    """Wrap a float as the independent variable in slot *index*."""
    p = [0.0] * width
    p[index] = 1.0
    return Jet(float(x), tuple(p))


def value_of(x):
    """The float value of a Jet, or the float itself."""
    return x.value if isinstance(x, Jet) else x


def partials_of(x, width):
    """The partials tuple of a Jet, or zeros for a plain float."""
    return x.partials if isinstance(x, Jet) else (0.0,) * width


# -- math functions that accept floats or Jets ------------------------
#
# Each helper computes the value with the exact same libm call a plain
# float run would make, so values stay bitwise identical either way.


def sin(x):
    if isinstance(x, Jet):
        c = math.cos(x.value)
        return Jet(math.sin(x.value), tuple(c * a for a in x.partials))
    return math.sin(x)


def cos(x):
    if isinstance(x, Jet):
        s = -math.sin(x.value)
        return Jet(math.cos(x.value), tuple(s * a for a in x.partials))
    return math.cos(x)


def sqrt(x):
    if isinstance(x, Jet):
        r = math.sqrt(x.value)
        inv = 0.5 / r
        return Jet(r, tuple(inv * a for a in x.partials))
    return math.sqrt(x)


def atan2(y, x):
    yj = isinstance(y, Jet)
    xj = isinstance(x, Jet)
    if not (yj or xj):
        return math.atan2(y, x)
    if yj and xj:
        y._check(x)
        width = len(y.partials)
    else:
        width = len(y.partials) if yj else len(x.partials)
    yv = y.value if yj else y
    xv = x.value if xj else x
    dy = y.partials if yj else (0.0,) * width
    dx = x.partials if xj else (0.0,) * width
    denom = xv * xv + yv * yv
    return Jet(
        math.atan2(yv, xv),
        tuple((xv * b - yv * a) / denom for a, b in zip(dx, dy)),
    )


def fabs(x):
    if isinstance(x, Jet):
        return abs(x)
    return math.fabs(x)


def exp(x):
    if isinstance(x, Jet):
        e = math.exp(x.value)
        return Jet(e, tuple(e * a for a in x.partials))
    return math.exp(x)


def log(x):
    if isinstance(x, Jet):
        v = x.value
        return Jet(math.log(v), tuple(a / v for a in x.partials))
    return math.log(x)
