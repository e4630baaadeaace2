"""Scalar tower shared by all dynamics code.

Every numeric routine in the package is written against plain Python
arithmetic plus :func:`sin`, :func:`cos`, :func:`sqrt` and :func:`exp` from
this module, so the same source runs on three scalar types:

* ``float`` -- ordinary evaluation,
* :class:`Dual` -- forward mode, one tangent direction per sweep,
* :class:`Var` -- reverse mode, every operation recorded on a :class:`Tape`.
"""

from __future__ import annotations

import enum
import math

import numpy as np

from ._jit import njit

__all__ = [
    "ScalarTag",
    "Dual",
    "Var",
    "Tape",
    "TapeOverflowError",
    "sin",
    "cos",
    "sqrt",
    "exp",
    "value",
    "tangent",
]


class ScalarTag(enum.Enum):
    FLOAT = "float"
    DUAL = "dual"
    TAPE = "tape"


class TapeOverflowError(MemoryError):
    """Raised when a tape grows past its variable budget."""


class Dual:
    """Dual number ``val + der*eps`` with ``eps**2 == 0``."""

    __slots__ = ("val", "der")

    def __init__(self, val, der=0.0):
        self.val = val
        self.der = der

    def __repr__(self):
        return f"Dual({self.val!r}, {self.der!r})"

    def __add__(self, o):
        if type(o) is Dual:
            return Dual(self.val + o.val, self.der + o.der)
        if o == 0.0:
            return self
        return Dual(self.val + o, self.der)

    __radd__ = __add__

    def __sub__(self, o):
        if type(o) is Dual:
            return Dual(self.val - o.val, self.der - o.der)
        return Dual(self.val - o, self.der)

    def __rsub__(self, o):
        return Dual(o - self.val, -self.der)

    def __mul__(self, o):
        if type(o) is Dual:
            return Dual(self.val * o.val, self.der * o.val + self.val * o.der)
        if o == 0.0:
            return 0.0
        return Dual(self.val * o, self.der * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if type(o) is Dual:
            inv = 1.0 / o.val
            q = self.val * inv
            return Dual(q, (self.der - q * o.der) * inv)
        return Dual(self.val / o, self.der / o)

    def __rtruediv__(self, o):
        q = o / self.val
        return Dual(q, -q * self.der / self.val)

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __pos__(self):
        return self

    def __pow__(self, n):
        if type(n) is Dual:
            raise TypeError("dual exponent not supported")
        return Dual(self.val**n, n * self.val ** (n - 1) * self.der)

    def __abs__(self):
        return -self if self.val < 0 else self

    def __lt__(self, o):
        return self.val < value(o)

    def __le__(self, o):
        return self.val <= value(o)

    def __gt__(self, o):
        return self.val > value(o)

    def __ge__(self, o):
        return self.val >= value(o)

    def sin(self):
        return Dual(math.sin(self.val), math.cos(self.val) * self.der)

    def cos(self):
        return Dual(math.cos(self.val), -math.sin(self.val) * self.der)

    def sqrt(self):
        r = math.sqrt(self.val)
        return Dual(r, 0.5 * self.der / r)

    def exp(self):
        e = math.exp(self.val)
        return Dual(e, e * self.der)


class Tape:
    """Wengert list of scalar operations.

    Each node stores up to two parents with their local partial
    derivatives.  Leaves have no parents.  ``limit`` caps the number of
    recorded nodes.
    """

    def __init__(self, limit: int = 50_000_000):
        self.nodes: list[tuple[int, float, int, float]] = []
        self.limit = limit
        self.peak = 0
        self._frozen = None

    def __len__(self):
        return len(self.nodes)

    def var(self, x: float) -> Var:
        return self._push(float(x), -1, 0.0, -1, 0.0)

    def vars(self, xs) -> list[Var]:
        return [self.var(x) for x in xs]

    def _push(self, v, i, wi, j, wj):
        nodes = self.nodes
        n = len(nodes)
        if n >= self.limit:
            raise TapeOverflowError(f"tape exceeded {self.limit} variables")
        nodes.append((i, wi, j, wj))
        return Var(self, n, v)

    def _arrays(self):
        n = len(self.nodes)
        if self._frozen is None or self._frozen[0] != n:
            arr = np.array(self.nodes, dtype=np.float64).reshape(n, 4)
            self._frozen = (n, arr[:, 0].astype(np.int64), arr[:, 1].copy(),
                            arr[:, 2].astype(np.int64), arr[:, 3].copy())
        return self._frozen[1:]

    def adjoints(self, seeds: dict[int, float]) -> np.ndarray:
        """Reverse sweep; returns the adjoint of every node."""
        p1, w1, p2, w2 = self._arrays()
        adj = np.zeros(len(p1))
        for k, s in seeds.items():
            adj[k] += s
        _sweep(p1, w1, p2, w2, adj)
        self.peak = max(self.peak, len(p1))
        return adj

    def gradient(self, output, wrt) -> np.ndarray:
        """d output / d wrt for a scalar output."""
        if type(output) is not Var:
            return np.zeros(len(wrt))
        adj = self.adjoints({output.idx: 1.0})
        return np.array([adj[w.idx] for w in wrt])

    def jacobian(self, outputs, wrt) -> np.ndarray:
        """One reverse sweep per output."""
        return np.array([self.gradient(o, wrt) for o in outputs]).reshape(len(outputs), len(wrt))


@njit(cache=True)
def _sweep(p1, w1, p2, w2, adj):
    for k in range(len(p1) - 1, -1, -1):
        a = adj[k]
        if a == 0.0:
            continue
        i = p1[k]
        if i >= 0:
            adj[i] += w1[k] * a
        j = p2[k]
        if j >= 0:
            adj[j] += w2[k] * a


class Var:
    """Reverse-mode scalar; a handle onto one node of a :class:`Tape`."""

    __slots__ = ("tape", "idx", "val")

    def __init__(self, tape, idx, val):
        self.tape = tape
        self.idx = idx
        self.val = val

    def __repr__(self):
        return f"Var({self.val!r}, idx={self.idx})"

    def __add__(self, o):
        if type(o) is Var:
            return self.tape._push(self.val + o.val, self.idx, 1.0, o.idx, 1.0)
        if o == 0.0:
            return self
        return self.tape._push(self.val + o, self.idx, 1.0, -1, 0.0)

    __radd__ = __add__

    def __sub__(self, o):
        if type(o) is Var:
            return self.tape._push(self.val - o.val, self.idx, 1.0, o.idx, -1.0)
        if o == 0.0:
            return self
        return self.tape._push(self.val - o, self.idx, 1.0, -1, 0.0)

    def __rsub__(self, o):
        if o == 0.0:
            return -self
        return self.tape._push(o - self.val, self.idx, -1.0, -1, 0.0)

    def __mul__(self, o):
        if type(o) is Var:
            return self.tape._push(self.val * o.val, self.idx, o.val, o.idx, self.val)
        # exact structural zeros keep the tape short
        if o == 0.0:
            return 0.0
        if o == 1.0:
            return self
        return self.tape._push(self.val * o, self.idx, o, -1, 0.0)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if type(o) is Var:
            inv = 1.0 / o.val
            q = self.val * inv
            return self.tape._push(q, self.idx, inv, o.idx, -q * inv)
        return self.tape._push(self.val / o, self.idx, 1.0 / o, -1, 0.0)

    def __rtruediv__(self, o):
        q = o / self.val
        return self.tape._push(q, self.idx, -q / self.val, -1, 0.0)

    def __neg__(self):
        return self.tape._push(-self.val, self.idx, -1.0, -1, 0.0)

    def __pos__(self):
        return self

    def __pow__(self, n):
        if type(n) is Var:
            raise TypeError("tape exponent not supported")
        return self.tape._push(self.val**n, self.idx, n * self.val ** (n - 1), -1, 0.0)

    def __abs__(self):
        return -self if self.val < 0 else self

    def __lt__(self, o):
        return self.val < value(o)

    def __le__(self, o):
        return self.val <= value(o)

    def __gt__(self, o):
        return self.val > value(o)

    def __ge__(self, o):
        return self.val >= value(o)

    def sin(self):
        return self.tape._push(math.sin(self.val), self.idx, math.cos(self.val), -1, 0.0)

    def cos(self):
        return self.tape._push(math.cos(self.val), self.idx, -math.sin(self.val), -1, 0.0)

    def sqrt(self):
        r = math.sqrt(self.val)
        return self.tape._push(r, self.idx, 0.5 / r, -1, 0.0)

    def exp(self):
        e = math.exp(self.val)
        return self.tape._push(e, self.idx, e, -1, 0.0)


def sin(x):
    try:
        return math.sin(x)
    except TypeError:
        return x.sin()


def cos(x):
    try:
        return math.cos(x)
    except TypeError:
        return x.cos()


def sqrt(x):
    try:
        return math.sqrt(x)
    except TypeError:
        return x.sqrt()


def exp(x):
    try:
        return math.exp(x)
    except TypeError:
        return x.exp()


def value(x) -> float:
    """Primal part of any scalar in the tower."""
    t = type(x)
    if t is Dual or t is Var:
        return x.val
    return float(x)


def tangent(x) -> float:
    return x.der if type(x) is Dual else 0.0
