"""Expression trees for smooth maps R^n -> R with exact gradients and Hessians.

Nodes evaluate vectorised over a batch: inputs have shape ``(batch, n)`` and a
jet of order 2 returns the value ``(batch,)``, gradient ``(batch, n)`` and
Hessian ``(batch, n, n)``.

Besides the usual primitives there is the clamped power
``cp_a(x) = (0 ∨ x ∧ 1)^a`` and its almost-everywhere derivative
``cpd_a(x) = a x^(a-1) 1_(0,1)(x)``. Derivatives at the kinks ``x ∈ {0, 1}``
are set to 0 and counted (see :func:`kink_hits`).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np

_kink_lock = threading.Lock()
_kink_hits = 0


def kink_hits() -> int:
    """Number of derivative evaluations that landed exactly on a cp/cpd kink."""
    return _kink_hits


def reset_kink_hits() -> None:
    global _kink_hits
    with _kink_lock:
        _kink_hits = 0


def _count_kinks(x: np.ndarray) -> None:
    hits = int(np.count_nonzero((x == 0.0) | (x == 1.0)))
    if hits:
        global _kink_hits
        with _kink_lock:
            _kink_hits += hits


class Node:
    """Base expression node. Subclasses implement ``jet``."""

    def jet(self, x: np.ndarray, order: int):
        raise NotImplementedError

    def shifted(self, offset: int) -> "Node":
        return self

    def max_var(self) -> int:
        return -1

    def singular(self, order: int) -> bool:
        """True if a derivative of order ``<= order`` can blow up at a finite point."""
        return False

    def __add__(self, other):
        return Add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Add(self, Mul(Const(-1.0), _lift(other)))

    def __rsub__(self, other):
        return Add(_lift(other), Mul(Const(-1.0), self))

    def __mul__(self, other):
        return Mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Mul(Const(-1.0), self)

    def __pow__(self, k):
        return Pow(self, float(k))


def _lift(value) -> Node:
    if isinstance(value, Node):
        return value
    return Const(float(value))


def _zeros(x, order):
    b, n = x.shape
    g = np.zeros((b, n)) if order >= 1 else None
    h = np.zeros((b, n, n)) if order >= 2 else None
    return g, h


@dataclass(frozen=True, eq=False)
class Const(Node):
    c: float

    def jet(self, x, order):
        g, h = _zeros(x, order)
        return np.full(x.shape[0], self.c), g, h

    def __repr__(self):
        return repr(self.c)


@dataclass(frozen=True, eq=False)
class Var(Node):
    index: int

    def jet(self, x, order):
        g, h = _zeros(x, order)
        if g is not None:
            g[:, self.index] = 1.0
        return x[:, self.index].copy(), g, h

    def shifted(self, offset):
        return Var(self.index + offset)

    def max_var(self):
        return self.index

    def __repr__(self):
        return f"x{self.index}"


@dataclass(frozen=True, eq=False)
class Add(Node):
    a: Node
    b: Node

    def jet(self, x, order):
        va, ga, ha = self.a.jet(x, order)
        vb, gb, hb = self.b.jet(x, order)
        g = ga + gb if order >= 1 else None
        h = ha + hb if order >= 2 else None
        return va + vb, g, h

    def shifted(self, offset):
        return Add(self.a.shifted(offset), self.b.shifted(offset))

    def singular(self, order):
        return self.a.singular(order) or self.b.singular(order)

    def max_var(self):
        return max(self.a.max_var(), self.b.max_var())

    def __repr__(self):
        return f"({self.a!r} + {self.b!r})"


@dataclass(frozen=True, eq=False)
class Mul(Node):
    a: Node
    b: Node

    def jet(self, x, order):
        va, ga, ha = self.a.jet(x, order)
        vb, gb, hb = self.b.jet(x, order)
        g = h = None
        if order >= 1:
            g = ga * vb[:, None] + gb * va[:, None]
        if order >= 2:
            cross = ga[:, :, None] * gb[:, None, :]
            # grouping the cross terms keeps the Hessian exactly symmetric
            h = (ha * vb[:, None, None] + hb * va[:, None, None]) + (cross + np.swapaxes(cross, 1, 2))
        return va * vb, g, h

    def shifted(self, offset):
        return Mul(self.a.shifted(offset), self.b.shifted(offset))

    def singular(self, order):
        return self.a.singular(order) or self.b.singular(order)

    def max_var(self):
        return max(self.a.max_var(), self.b.max_var())

    def __repr__(self):
        return f"({self.a!r} * {self.b!r})"


def _chain(inner: Node, f: Callable, df: Callable, d2f: Callable, x, order):
    v, g, h = inner.jet(x, order)
    out_g = out_h = None
    if order >= 1:
        d1 = df(v)
        out_g = d1[:, None] * g
    if order >= 2:
        d2 = d2f(v)
        out_h = d2[:, None, None] * (g[:, :, None] * g[:, None, :]) + d1[:, None, None] * h
    return f(v), out_g, out_h


@dataclass(frozen=True, eq=False)
class Pow(Node):
    """``a ** k`` for a constant exponent; non-integer ``k`` needs ``a > 0``."""

    a: Node
    k: float

    def jet(self, x, order):
        k = self.k
        return _chain(
            self.a,
            lambda v: v**k,
            lambda v: k * v ** (k - 1) if k != 0 else np.zeros_like(v),
            lambda v: k * (k - 1) * v ** (k - 2) if k not in (0, 1) else np.zeros_like(v),
            x, order,
        )

    def shifted(self, offset):
        return Pow(self.a.shifted(offset), self.k)

    def singular(self, order):
        integer = float(self.k).is_integer() and self.k >= 0
        return self.a.singular(order) or (not integer and self.k < order)

    def max_var(self):
        return self.a.max_var()

    def __repr__(self):
        return f"{self.a!r}**{self.k:g}"


_UNARY = {
    "exp": (np.exp, np.exp, np.exp),
    "sin": (np.sin, np.cos, lambda v: -np.sin(v)),
    "cos": (np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v)),
    "tanh": (
        np.tanh,
        lambda v: 1.0 - np.tanh(v) ** 2,
        lambda v: -2.0 * np.tanh(v) * (1.0 - np.tanh(v) ** 2),
    ),
}


@dataclass(frozen=True, eq=False)
class Unary(Node):
    name: str
    a: Node

    def jet(self, x, order):
        f, df, d2f = _UNARY[self.name]
        return _chain(self.a, f, df, d2f, x, order)

    def shifted(self, offset):
        return Unary(self.name, self.a.shifted(offset))

    def singular(self, order):
        return self.a.singular(order)

    def max_var(self):
        return self.a.max_var()

    def __repr__(self):
        return f"{self.name}({self.a!r})"


def _interior_power(v, coef, k):
    inside = (v > 0.0) & (v < 1.0)
    out = np.zeros_like(v)
    out[inside] = coef * v[inside] ** k
    return out


@dataclass(frozen=True, eq=False)
class ClampedPow(Node):
    """``cp_a(x) = (0 ∨ x ∧ 1)^a``."""

    a: Node
    power: float

    def jet(self, x, order):
        p = self.power

        def d1(v):
            _count_kinks(v)
            return _interior_power(v, p, p - 1)

        return _chain(
            self.a,
            lambda v: np.clip(v, 0.0, 1.0) ** p,
            d1,
            lambda v: _interior_power(v, p * (p - 1), p - 2),
            x, order,
        )

    def shifted(self, offset):
        return ClampedPow(self.a.shifted(offset), self.power)

    def singular(self, order):
        return self.a.singular(order) or self.power < order

    def max_var(self):
        return self.a.max_var()

    def __repr__(self):
        return f"cp[{self.power:g}]({self.a!r})"


@dataclass(frozen=True, eq=False)
class ClampedPowPrime(Node):
    """``cpd_a(x) = a x^(a-1)`` on (0, 1), zero elsewhere."""

    a: Node
    power: float

    def jet(self, x, order):
        p = self.power

        def value(v):
            _count_kinks(v)
            return _interior_power(v, p, p - 1)

        return _chain(
            self.a,
            value,
            lambda v: _interior_power(v, p * (p - 1), p - 2),
            lambda v: _interior_power(v, p * (p - 1) * (p - 2), p - 3),
            x, order,
        )

    def shifted(self, offset):
        return ClampedPowPrime(self.a.shifted(offset), self.power)

    def singular(self, order):
        return self.a.singular(order) or self.power < 1 + order

    def max_var(self):
        return self.a.max_var()

    def __repr__(self):
        return f"cpd[{self.power:g}]({self.a!r})"


def exp(a) -> Node:
    return Unary("exp", _lift(a))


def sin(a) -> Node:
    return Unary("sin", _lift(a))


def cos(a) -> Node:
    return Unary("cos", _lift(a))


def tanh(a) -> Node:
    return Unary("tanh", _lift(a))


def clamped_pow(a, power: float) -> Node:
    return ClampedPow(_lift(a), float(power))


def clamped_pow_prime(a, power: float) -> Node:
    return ClampedPowPrime(_lift(a), float(power))


class SmoothMap:
    """A map of ``arity`` real inputs given by an expression tree."""

    def __init__(self, expr: Node, arity: int | None = None):
        expr = _lift(expr)
        needed = expr.max_var() + 1
        self.arity = needed if arity is None else int(arity)
        if self.arity < needed:
            raise ValueError(f"expression uses {needed} inputs but arity is {self.arity}")
        self.expr = expr

    def __repr__(self):
        return f"SmoothMap({self.expr!r}, arity={self.arity})"

    def _inputs(self, x) -> tuple[np.ndarray, tuple[int, ...]]:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] == (self.arity,):
            batch = x.shape[:-1]
        elif self.arity == 1:
            batch = x.shape
            x = x[..., None]
        else:
            raise ValueError(f"expected inputs with trailing size {self.arity}, got {x.shape}")
        rows = int(np.prod(batch, dtype=int))
        return x.reshape(rows, self.arity), batch

    def jet(self, x, order: int = 2):
        flat, batch = self._inputs(x)
        v, g, h = self.expr.jet(flat, order)
        v = v.reshape(batch)
        if g is not None:
            g = g.reshape(batch + (self.arity,))
        if h is not None:
            h = h.reshape(batch + (self.arity, self.arity))
        return v, g, h

    def __call__(self, x):
        return self.jet(x, 0)[0]

    def grad(self, x):
        return self.jet(x, 1)[1]

    def hessian(self, x):
        return self.jet(x, 2)[2]

    def singular(self, order: int = 0) -> bool:
        """Whether the jet up to ``order`` may be unbounded near a finite input.

        Maps built from polynomials, exp, sin, cos and tanh are never singular,
        so every moment of them under Gaussian inputs is finite.
        """
        return self.expr.singular(order)

    def shifted(self, offset: int, arity: int) -> "SmoothMap":
        """Same map reading its inputs from positions ``offset ..``."""
        return SmoothMap(self.expr.shifted(offset), arity)


def variables(n: int) -> list[Var]:
    return [Var(i) for i in range(n)]


def poly(coefficients) -> SmoothMap:
    """``Σ c_k x^k`` in one variable."""
    x = Var(0)
    expr: Node = Const(0.0)
    for k, c in enumerate(coefficients):
        if c == 0:
            continue
        term = Const(float(c)) if k == 0 else Const(float(c)) * Pow(x, k)
        expr = term if isinstance(expr, Const) and expr.c == 0 else expr + term
    return SmoothMap(expr, arity=1)


def _unary_map(fn) -> Callable[[], SmoothMap]:
    return lambda: SmoothMap(fn(Var(0)), arity=1)


REGISTRY: dict[str, Callable[[], SmoothMap]] = {
    "identity": lambda: SmoothMap(Var(0), arity=1),
    "square": lambda: SmoothMap(Var(0) * Var(0), arity=1),
    "exp": _unary_map(exp),
    "sin": _unary_map(sin),
    "cos": _unary_map(cos),
    "tanh": _unary_map(tanh),
    "thm1_f": lambda: SmoothMap(clamped_pow(Var(0), 0.75), arity=1),
    "thm1_fprime": lambda: SmoothMap(clamped_pow_prime(Var(0), 0.75), arity=1),
}


def from_name(name: str) -> SmoothMap:
    """Look up a map by identifier; ``poly:c0,c1,...`` builds a polynomial."""
    if name.startswith("poly:"):
        coefs = [float(c) for c in name[5:].split(",") if c.strip()]
        if not coefs:
            raise ValueError("poly needs at least one coefficient")
        return poly(coefs)
    try:
        return REGISTRY[name]()
    except KeyError:
        valid = ", ".join(sorted(REGISTRY) + ["poly:<c0,c1,...>"])
        raise ValueError(f"unknown map {name!r}; valid: {valid}") from None
