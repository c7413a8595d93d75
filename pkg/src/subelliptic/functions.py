"""Scalar test functions carrying value/gradient/Hessian evaluators.

Probes and jets accept any object with ``value``/``gradient``/``hessian``
methods, or a bare callable (derivatives then come from central
differences).  Closed forms are supplied wherever the tests need tight
residuals, notably for powers of the Heisenberg gauge.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

GRAD_FD_STEP = 1e-5
HESS_FD_STEP = 1e-4


class SmoothFunction:
    """Callable with gradient/hessian; subclasses override with closed forms."""

    def value(self, x) -> float:
        raise NotImplementedError

    def __call__(self, x) -> float:
        return self.value(x)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.size)
        for b in range(x.size):
            e = np.zeros(x.size)
            e[b] = GRAD_FD_STEP
            g[b] = (self.value(x + e) - self.value(x - e)) / (2 * GRAD_FD_STEP)
        return g

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = x.size
        s = HESS_FD_STEP
        H = np.zeros((n, n))
        f0 = self.value(x)
        for a in range(n):
            ea = np.zeros(n)
            ea[a] = s
            H[a, a] = (self.value(x + ea) - 2 * f0 + self.value(x - ea)) / s**2
            for b in range(a + 1, n):
                eb = np.zeros(n)
                eb[b] = s
                H[a, b] = (self.value(x + ea + eb) - self.value(x + ea - eb)
                           - self.value(x - ea + eb) + self.value(x - ea - eb)) / (4 * s**2)
                H[b, a] = H[a, b]
        return H


@dataclass
class Wrapped(SmoothFunction):
    """Adapter for a bare callable, with optional supplied derivatives."""

    fn: Callable
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None

    def value(self, x):
        return float(self.fn(np.asarray(x, dtype=float)))

    def gradient(self, x):
        if self.grad is None:
            return super().gradient(x)
        return np.asarray(self.grad(np.asarray(x, dtype=float)), dtype=float)

    def hessian(self, x):
        if self.hess is None:
            return super().hessian(x)
        return np.asarray(self.hess(np.asarray(x, dtype=float)), dtype=float)


def as_smooth(u) -> SmoothFunction:
    if isinstance(u, SmoothFunction):
        return u
    if callable(u):
        return Wrapped(u)
    raise TypeError(f"not a smooth function: {u!r}")


@dataclass
class Quadratic(SmoothFunction):
    """c + <b, x> + x^T Q x / 2 with symmetric Q."""

    Q: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.Q = 0.5 * (self.Q + self.Q.T)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(self.c + self.b @ x + 0.5 * x @ self.Q @ x)

    def gradient(self, x):
        return self.b + self.Q @ np.asarray(x, dtype=float)

    def hessian(self, x):
        return self.Q.copy()


@dataclass
class LinearTilt(SmoothFunction):
    """w(x) + <p, x>: the gradient shifts by p, the Hessian is unchanged."""

    base: SmoothFunction
    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)

    def value(self, x):
        return self.base.value(x) + float(self.p @ np.asarray(x, dtype=float))

    def gradient(self, x):
        return self.base.gradient(x) + self.p

    def hessian(self, x):
        return self.base.hessian(x)


class ScalarProfile:
    """C^2 profile on the reals; composition helper for chain-rule probes."""

    def h(self, u: float) -> float:
        raise NotImplementedError

    def dh(self, u: float) -> float:
        raise NotImplementedError

    def d2h(self, u: float) -> float:
        raise NotImplementedError


@dataclass
class IdentityProfile(ScalarProfile):
    def h(self, u):
        return u

    def dh(self, u):
        return 1.0

    def d2h(self, u):
        return 0.0


@dataclass
class ShiftedSquareProfile(ScalarProfile):
    """h(u) = u + lam * (u - u0)^2; h' >= 1 and h'' >= 0 hold for u >= u0."""

    lam: float
    u0: float = 0.0

    def h(self, u):
        return u + self.lam * (u - self.u0) ** 2

    def dh(self, u):
        return 1.0 + 2.0 * self.lam * (u - self.u0)

    def d2h(self, u):
        return 2.0 * self.lam


@dataclass
class ExpProfile(ScalarProfile):
    """h(u) = u + (lam/beta) * exp(beta u); h' >= 1, h'' >= 0 for lam, beta > 0."""

    lam: float
    beta: float = 1.0

    def h(self, u):
        return u + (self.lam / self.beta) * np.exp(self.beta * u)

    def dh(self, u):
        return 1.0 + self.lam * np.exp(self.beta * u)

    def d2h(self, u):
        return self.lam * self.beta * np.exp(self.beta * u)


@dataclass
class Composition(SmoothFunction):
    """h(omega(x)) with exact chain-rule derivatives."""

    profile: ScalarProfile
    omega: SmoothFunction

    def value(self, x):
        return float(self.profile.h(self.omega.value(x)))

    def gradient(self, x):
        return self.profile.dh(self.omega.value(x)) * self.omega.gradient(x)

    def hessian(self, x):
        w = self.omega.value(x)
        g = self.omega.gradient(x)
        return self.profile.dh(w) * self.omega.hessian(x) \
            + self.profile.d2h(w) * np.outer(g, g)


@dataclass
class GaugePower(SmoothFunction):
    """N(x,y,t)^a for the Heisenberg gauge N = ((x^2+y^2)^2 + 16 t^2)^{1/4}.

    Derivatives are closed forms through w = N^4 (a polynomial), so the
    fundamental-solution identity for a = -2 is reproduced to rounding.
    Only defined away from the gauge origin.
    """

    a: float

    @staticmethod
    def _w(x):
        r2 = x[0] ** 2 + x[1] ** 2
        return r2 ** 2 + 16.0 * x[2] ** 2

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(self._w(x) ** (self.a / 4.0))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        w = self._w(x)
        r2 = x[0] ** 2 + x[1] ** 2
        gw = np.array([4.0 * x[0] * r2, 4.0 * x[1] * r2, 32.0 * x[2]])
        return (self.a / 4.0) * w ** (self.a / 4.0 - 1.0) * gw

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        w = self._w(x)
        r2 = x[0] ** 2 + x[1] ** 2
        gw = np.array([4.0 * x[0] * r2, 4.0 * x[1] * r2, 32.0 * x[2]])
        Hw = np.array([
            [4.0 * r2 + 8.0 * x[0] ** 2, 8.0 * x[0] * x[1], 0.0],
            [8.0 * x[0] * x[1], 4.0 * r2 + 8.0 * x[1] ** 2, 0.0],
            [0.0, 0.0, 32.0],
        ])
        q = self.a / 4.0
        return q * (q - 1.0) * w ** (q - 2.0) * np.outer(gw, gw) + q * w ** (q - 1.0) * Hw


# ---------------------------------------------------------------------------
# polynomial tables (scenario-file coefficient format)
# ---------------------------------------------------------------------------

@dataclass
class Polynomial:
    """Multivariate polynomial as [[coeff, [e_1, ..., e_k]], ...]."""

    terms: list
    nvars: int

    @classmethod
    def from_table(cls, table, nvars: int) -> "Polynomial":
        terms = []
        for coeff, exps in table:
            exps = [int(e) for e in exps]
            if len(exps) != nvars:
                raise ValueError(f"term exponents {exps} do not match {nvars} variables")
            terms.append((float(coeff), tuple(exps)))
        return cls(terms, nvars)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
        for coeff, exps in self.terms:
            term = coeff * np.ones_like(total) if x.ndim > 1 else coeff
            for v, e in enumerate(exps):
                if e:
                    term = term * x[..., v] ** e
            total = total + term
        return total

    def derivative(self, var: int) -> "Polynomial":
        terms = []
        for coeff, exps in self.terms:
            if exps[var] == 0:
                continue
            new = list(exps)
            new[var] -= 1
            terms.append((coeff * exps[var], tuple(new)))
        return Polynomial(terms, self.nvars)


@dataclass
class PolynomialFunction(SmoothFunction):
    """SmoothFunction view of a Polynomial with exact derivatives."""

    poly: Polynomial

    def __post_init__(self):
        n = self.poly.nvars
        self._grad = [self.poly.derivative(v) for v in range(n)]
        self._hess = [[self._grad[a].derivative(b) for b in range(n)] for a in range(n)]

    def value(self, x):
        return float(self.poly(np.asarray(x, dtype=float)))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([g(x) for g in self._grad], dtype=float)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        n = self.poly.nvars
        return np.array([[self._hess[a][b](x) for b in range(n)] for a in range(n)],
                        dtype=float)
