"""Covariance-function expression trees for GP regression.

Leaves are RBF or Matern (nu in {1/2, 3/2, 5/2}) with unit value at zero
distance; Sum, Product, and Scaled nodes compose them. Hyperparameters are
held in log space so optimization is unconstrained. Every node evaluates on
a matrix of Euclidean distances and reports analytic derivatives with
respect to each log-hyperparameter.

Closed forms:
    RBF:         exp(-d^2 / (2 l^2))
    Matern 1/2:  exp(-d/l)
    Matern 3/2:  (1 + s) exp(-s),              s = sqrt(3) d / l
    Matern 5/2:  (1 + s + s^2/3) exp(-s),      s = sqrt(5) d / l
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigurationError, KernelParseError

HALF_INTEGER_NUS = (0.5, 1.5, 2.5)


class Kernel(ABC):
    """A node in the covariance expression tree."""

    @abstractmethod
    def value(self, d: np.ndarray) -> np.ndarray:
        """Evaluate on an array of pairwise distances."""

    @abstractmethod
    def grad_log_params(self, d: np.ndarray) -> list[np.ndarray]:
        """d value / d log(theta) for each hyperparameter, in param order."""

    @abstractmethod
    def get_log_params(self) -> list[float]:
        ...

    @abstractmethod
    def set_log_params(self, values: list[float]) -> None:
        """Consumes len(param_names()) leading entries of `values`."""

    @abstractmethod
    def param_names(self) -> list[str]:
        ...

    @abstractmethod
    def spec(self) -> str:
        """Round-trippable spec-string form of the tree."""

    @property
    def n_params(self) -> int:
        return len(self.param_names())

    def __add__(self, other: "Kernel") -> "Sum":
        return Sum(self, other)

    def __mul__(self, other: "Kernel") -> "Product":
        return Product(self, other)

    def __repr__(self) -> str:
        return self.spec()

    def clone(self) -> "Kernel":
        return parse_kernel(self.spec())


def _check_lengthscale(l: float) -> float:
    if not (l > 0 and math.isfinite(l)):
        raise ConfigurationError(f"lengthscale must be positive and finite, got {l}")
    return float(l)


class RBF(Kernel):
    def __init__(self, lengthscale: float = 1.0):
        self.log_l = math.log(_check_lengthscale(lengthscale))

    @property
    def lengthscale(self) -> float:
        return math.exp(self.log_l)

    def value(self, d):
        d = np.asarray(d, dtype=float)
        l = self.lengthscale
        return np.exp(-(d * d) / (2.0 * l * l))

    def grad_log_params(self, d):
        d = np.asarray(d, dtype=float)
        l = self.lengthscale
        return [self.value(d) * (d * d) / (l * l)]

    def get_log_params(self):
        return [self.log_l]

    def set_log_params(self, values):
        self.log_l = float(values[0])

    def param_names(self):
        return ["rbf.l"]

    def spec(self):
        return f"rbf(l={self.lengthscale:.12g})"


class Matern(Kernel):
    def __init__(self, nu: float, lengthscale: float = 1.0):
        if nu not in HALF_INTEGER_NUS:
            raise ConfigurationError(
                f"nu must be one of {HALF_INTEGER_NUS}, got {nu}"
            )
        self.nu = float(nu)
        self.log_l = math.log(_check_lengthscale(lengthscale))

    @property
    def lengthscale(self) -> float:
        return math.exp(self.log_l)

    def _scaled(self, d: np.ndarray) -> np.ndarray:
        return math.sqrt(2.0 * self.nu) * np.asarray(d, dtype=float) / self.lengthscale

    def value(self, d):
        s = self._scaled(d)
        if self.nu == 0.5:
            return np.exp(-s)
        if self.nu == 1.5:
            return (1.0 + s) * np.exp(-s)
        return (1.0 + s + s * s / 3.0) * np.exp(-s)

    def grad_log_params(self, d):
        # chain rule through s = sqrt(2 nu) d / l with ds/dlog l = -s
        s = self._scaled(d)
        e = np.exp(-s)
        if self.nu == 0.5:
            g = s * e
        elif self.nu == 1.5:
            g = s * s * e
        else:
            g = (s * s / 3.0) * (1.0 + s) * e
        return [g]

    def get_log_params(self):
        return [self.log_l]

    def set_log_params(self, values):
        self.log_l = float(values[0])

    def param_names(self):
        return [f"matern{self.nu:g}.l"]

    def spec(self):
        return f"matern(nu={self.nu:g},l={self.lengthscale:.12g})"


class Scaled(Kernel):
    """variance * child; the only node that changes the value at d = 0."""

    def __init__(self, variance: float, child: Kernel):
        if not (variance > 0 and math.isfinite(variance)):
            raise ConfigurationError(f"variance must be positive, got {variance}")
        self.log_v = math.log(variance)
        self.child = child

    @property
    def variance(self) -> float:
        return math.exp(self.log_v)

    def value(self, d):
        return self.variance * self.child.value(d)

    def grad_log_params(self, d):
        v = self.variance
        return [self.value(d)] + [v * g for g in self.child.grad_log_params(d)]

    def get_log_params(self):
        return [self.log_v] + self.child.get_log_params()

    def set_log_params(self, values):
        self.log_v = float(values[0])
        self.child.set_log_params(values[1:])

    def param_names(self):
        return ["scale.v"] + self.child.param_names()

    def spec(self):
        return f"scale(v={self.variance:.12g},{self.child.spec()})"


class _Binary(Kernel):
    def __init__(self, left: Kernel, right: Kernel):
        self.left = left
        self.right = right

    def get_log_params(self):
        return self.left.get_log_params() + self.right.get_log_params()

    def set_log_params(self, values):
        n = self.left.n_params
        self.left.set_log_params(values[:n])
        self.right.set_log_params(values[n:])

    def param_names(self):
        return self.left.param_names() + self.right.param_names()


class Sum(_Binary):
    def value(self, d):
        return self.left.value(d) + self.right.value(d)

    def grad_log_params(self, d):
        return self.left.grad_log_params(d) + self.right.grad_log_params(d)

    def spec(self):
        return f"{self.left.spec()}+{self.right.spec()}"


class Product(_Binary):
    def value(self, d):
        return self.left.value(d) * self.right.value(d)

    def grad_log_params(self, d):
        lv = self.left.value(d)
        rv = self.right.value(d)
        return [g * rv for g in self.left.grad_log_params(d)] + [
            lv * g for g in self.right.grad_log_params(d)
        ]

    def spec(self):
        lhs = f"({self.left.spec()})" if isinstance(self.left, Sum) else self.left.spec()
        rhs = f"({self.right.spec()})" if isinstance(self.right, Sum) else self.right.spec()
        return f"{lhs}*{rhs}"


def kernel_eval(kernel: Kernel, x, y) -> float:
    """Covariance between two points."""
    d = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))
    return float(kernel.value(np.array(d)))


def gram_matrix(kernel: Kernel, X: np.ndarray, X2: np.ndarray | None = None) -> np.ndarray:
    """Covariance matrix between two point sets (n x m)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = X if X2 is None else np.atleast_2d(np.asarray(X2, dtype=float))
    return kernel.value(cdist(X, X2))


# ---------------------------------------------------------------------------
# Spec-string parser. Grammar:
#   expr    := term ('+' term)*
#   term    := factor ('*' factor)*
#   factor  := call | '(' expr ')'
#   call    := 'rbf(l=NUM)' | 'matern(nu=NUM,l=NUM)' | 'scale(v=NUM, expr)'
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, msg: str):
        raise KernelParseError(f"{msg} in kernel spec '{self.text}'", self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            self.error(f"expected '{ch}'")
        self.pos += 1

    def ident(self) -> str:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (
            self.text[self.pos].isalnum() or self.text[self.pos] == "_"
        ):
            self.pos += 1
        if self.pos == start:
            self.error("expected a kernel name")
        return self.text[start:self.pos]

    def number(self) -> float:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in "+-.0123456789eE":
            self.pos += 1
        try:
            return float(self.text[start:self.pos])
        except ValueError:
            self.pos = start
            self.error("expected a number")

    def named_number(self, name: str) -> float:
        got = self.ident()
        if got != name:
            self.error(f"expected '{name}='")
        self.expect("=")
        return self.number()

    def expr(self) -> Kernel:
        node = self.term()
        while self.peek() == "+":
            self.pos += 1
            node = Sum(node, self.term())
        return node

    def term(self) -> Kernel:
        node = self.factor()
        while self.peek() == "*":
            self.pos += 1
            node = Product(node, self.factor())
        return node

    def factor(self) -> Kernel:
        if self.peek() == "(":
            self.pos += 1
            node = self.expr()
            self.expect(")")
            return node
        name = self.ident().lower()
        self.expect("(")
        try:
            if name == "rbf":
                node = RBF(self.named_number("l"))
            elif name == "matern":
                nu = self.named_number("nu")
                self.expect(",")
                node = Matern(nu, self.named_number("l"))
            elif name == "scale":
                v = self.named_number("v")
                self.expect(",")
                node = Scaled(v, self.expr())
            else:
                self.error(f"unknown kernel '{name}'")
        except ConfigurationError as exc:
            if isinstance(exc, KernelParseError):
                raise
            raise KernelParseError(str(exc), self.pos)
        self.expect(")")
        return node


def parse_kernel(text: str) -> Kernel:
    """Parse a kernel spec string like 'scale(v=2,rbf(l=1.0))*matern(nu=1.5,l=2)'."""
    p = _Parser(text)
    node = p.expr()
    p.skip_ws()
    if p.pos != len(text):
        p.error("unexpected trailing input")
    return node
