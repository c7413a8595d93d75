"""The quasilinear operator family -Tr(A(Xu) X*Xu) + H(Xu) and its probes.

An operator is the triple (A, H, phi): the diffusion-matrix map on
horizontal gradients, the drift, and the scaling profile entering the
structure conditions.  Everything here is pointwise; grid discretizations
live in the solver module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ProbeAssertionError, ZeroGradientError
from .functions import LinearTilt, ScalarProfile, Composition, SmoothFunction, as_smooth
from .geometry import VectorFieldSystem
from .grids import GridFunction

ZERO_GRAD_TOL = 1e-12
DA_FD_STEP = 1e-6


@dataclass(eq=False)
class QuasilinearOperator:
    """Triple (A, H, phi) with the conventions used at vanishing gradient.

    ``zero_gradient_rule`` is 'evaluate' (call A at 0) or 'degenerate'
    (the A-term is taken to vanish at gradient 0 and the point is treated
    as degenerate).  ``a_form``/``h_form`` are optional vectorized hooks
    Tr(A(xi) K) and H(xi) over stacked inputs, used by the grid solver;
    ``dA``/``dH`` are optional closed-form derivatives in xi.
    """

    m: int
    A: Callable
    H: Callable
    phi: Callable
    name: str = "custom"
    zero_gradient_rule: str = "evaluate"
    kind: str = "custom"
    p: Optional[float] = None
    smooth_at_zero: bool = True
    a_form: Optional[Callable] = None
    h_form: Optional[Callable] = None
    dA: Optional[Callable] = None
    dH: Optional[Callable] = None

    def a_at(self, xi) -> np.ndarray:
        return np.asarray(self.A(np.asarray(xi, dtype=float)), dtype=float)

    def h_at(self, xi) -> float:
        return float(self.H(np.asarray(xi, dtype=float)))

    def ellipticity(self, xi) -> float:
        """E(xi) = <A(xi) xi, xi>."""
        xi = np.asarray(xi, dtype=float)
        return float(xi @ self.a_at(xi) @ xi)

    def da_at(self, xi) -> np.ndarray:
        """dA/dxi as an (m, m, m) stack, [k] = dA/dxi_k."""
        xi = np.asarray(xi, dtype=float)
        if self.dA is not None:
            return np.asarray(self.dA(xi), dtype=float)
        out = np.zeros((self.m, self.m, self.m))
        for k in range(self.m):
            e = np.zeros(self.m)
            e[k] = DA_FD_STEP
            out[k] = (self.a_at(xi + e) - self.a_at(xi - e)) / (2 * DA_FD_STEP)
        return out

    def dh_at(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if self.dH is not None:
            return np.asarray(self.dH(xi), dtype=float)
        out = np.zeros(self.m)
        for k in range(self.m):
            e = np.zeros(self.m)
            e[k] = DA_FD_STEP
            out[k] = (self.h_at(xi + e) - self.h_at(xi - e)) / (2 * DA_FD_STEP)
        return out


def power_profile(k: float) -> Callable:
    def phi(s):
        return s ** k

    phi.profile_name = f"power:{k:g}"
    return phi


def sublaplacian_operator(m: int = 2) -> QuasilinearOperator:
    eye = np.eye(m)
    return QuasilinearOperator(
        m=m,
        A=lambda xi: eye.copy(),
        H=lambda xi: 0.0,
        phi=power_profile(1),
        name="sublaplacian",
        kind="sublaplacian",
        a_form=lambda xi, K, reg=0.0: np.einsum("...ii->...", K),
        h_form=lambda xi: np.zeros(np.asarray(xi).shape[:-1]),
        dA=lambda xi: np.zeros((m, m, m)),
        dH=lambda xi: np.zeros(m),
    )


def infinity_operator(m: int = 2) -> QuasilinearOperator:
    def dA(xi):
        out = np.zeros((m, m, m))
        for k in range(m):
            out[k, k, :] += xi
            out[k, :, k] += xi
        return out

    return QuasilinearOperator(
        m=m,
        A=lambda xi: np.outer(xi, xi),
        H=lambda xi: 0.0,
        phi=power_profile(3),
        name="infinity",
        kind="infinity",
        zero_gradient_rule="degenerate",
        smooth_at_zero=False,
        a_form=lambda xi, K, reg=0.0: np.einsum("...i,...ij,...j->...", xi, K, xi),
        h_form=lambda xi: np.zeros(np.asarray(xi).shape[:-1]),
        dA=dA,
        dH=lambda xi: np.zeros(m),
    )


def pnorm_operator(p: float, m: int = 2) -> QuasilinearOperator:
    """Normalized p-Laplacian diffusion A = I + (p-2) xi (x) xi / |xi|^2."""
    if not 1.0 < p < np.inf:
        raise ValueError("p must lie in (1, inf)")
    eye = np.eye(m)

    def A(xi):
        n2 = float(xi @ xi)
        if n2 <= ZERO_GRAD_TOL ** 2:
            raise ZeroGradientError("normalized p-diffusion undefined at xi = 0")
        return eye + (p - 2.0) * np.outer(xi, xi) / n2

    def a_form(xi, K, reg=0.0):
        n2 = np.einsum("...i,...i->...", xi, xi) + reg ** 2
        quad = np.einsum("...i,...ij,...j->...", xi, K, xi)
        return np.einsum("...ii->...", K) + (p - 2.0) * quad / n2

    def dA(xi):
        n2 = float(xi @ xi)
        if n2 <= ZERO_GRAD_TOL ** 2:
            raise ZeroGradientError("normalized p-diffusion undefined at xi = 0")
        out = np.zeros((m, m, m))
        outer = np.outer(xi, xi)
        for k in range(m):
            sym = np.zeros((m, m))
            sym[k, :] += xi
            sym[:, k] += xi
            out[k] = (p - 2.0) * (sym / n2 - 2.0 * xi[k] * outer / n2 ** 2)
        return out

    return QuasilinearOperator(
        m=m,
        A=A,
        H=lambda xi: 0.0,
        phi=power_profile(1),
        name=f"pnorm:{p:g}",
        kind="pnorm",
        p=p,
        zero_gradient_rule="degenerate",
        smooth_at_zero=False,
        a_form=a_form,
        h_form=lambda xi: np.zeros(np.asarray(xi).shape[:-1]),
        dA=dA,
        dH=lambda xi: np.zeros(m),
    )


def make_operator(name: str, m: int = 2) -> QuasilinearOperator:
    if name == "sublaplacian":
        return sublaplacian_operator(m)
    if name == "infinity":
        return infinity_operator(m)
    if name.startswith("pnorm:"):
        return pnorm_operator(float(name.split(":", 1)[1]), m)
    raise KeyError(f"unknown operator preset {name!r}")


def make_profile(name: str) -> Callable:
    if name.startswith("power:"):
        return power_profile(float(name.split(":", 1)[1]))
    raise KeyError(f"unknown scaling profile {name!r}")


# ---------------------------------------------------------------------------
# horizontal jets
# ---------------------------------------------------------------------------

@dataclass
class HorizontalJet:
    """Horizontal gradient and symmetrized horizontal Hessian at a base point."""

    grad: np.ndarray
    hess: np.ndarray
    base: np.ndarray


def correction_matrix(sys: VectorFieldSystem, x, grad_u) -> np.ndarray:
    """M(x, grad u): first-order part of the symmetrized horizontal Hessian.

    M_ij = (  <Dsigma^j sigma^i, grad u> + <Dsigma^i sigma^j, grad u> ) / 2.
    """
    sig = sys.field_matrix(x)
    ds = np.asarray(sys.dsigma(x), dtype=float)
    grad_u = np.asarray(grad_u, dtype=float)
    # w[j, i] = <Dsigma^j sigma^i, grad u>
    w = np.einsum("jab,bi,a->ji", ds, sig, grad_u)
    return 0.5 * (w + w.T)


def _grid_derivatives(gf: GridFunction, x):
    grid = gf.grid
    idx = grid.node_index(x)
    shape = np.asarray(grid.shape)
    if np.any(np.asarray(idx) < 1) or np.any(np.asarray(idx) >= shape - 1):
        from .grids import BoundaryStencilError

        raise BoundaryStencilError(f"node {idx} lacks a full central stencil")
    h = grid.spacing
    u = gf.values
    n = grid.n
    grad = np.zeros(n)
    hess = np.zeros((n, n))

    def at(offset):
        return u[tuple(np.asarray(idx) + np.asarray(offset))]

    for a in range(n):
        ea = np.zeros(n, dtype=int)
        ea[a] = 1
        grad[a] = (at(ea) - at(-ea)) / (2 * h[a])
        hess[a, a] = (at(ea) - 2 * at(np.zeros(n, dtype=int)) + at(-ea)) / h[a] ** 2
        for b in range(a + 1, n):
            eb = np.zeros(n, dtype=int)
            eb[b] = 1
            hess[a, b] = (at(ea + eb) - at(ea - eb) - at(-ea + eb) + at(-ea - eb)) \
                / (4 * h[a] * h[b])
            hess[b, a] = hess[a, b]
    return grad, hess


def horizontal_jet(sys: VectorFieldSystem, u, x) -> HorizontalJet:
    """Horizontal gradient sigma^T grad u and Hessian sigma^T D2u sigma + M at x.

    ``u`` may be a SmoothFunction (or bare callable, derivatives then by
    central differences) or a GridFunction, in which case x must be an
    interior node with a full second-order stencil.
    """
    x = np.asarray(x, dtype=float)
    if isinstance(u, GridFunction):
        grad_full, hess_full = _grid_derivatives(u, x)
    else:
        su = as_smooth(u)
        grad_full = np.asarray(su.gradient(x), dtype=float)
        hess_full = np.asarray(su.hessian(x), dtype=float)
    sig = sys.field_matrix(x)
    grad_h = sig.T @ grad_full
    K = sig.T @ hess_full @ sig + correction_matrix(sys, x, grad_full)
    K = 0.5 * (K + K.T)
    return HorizontalJet(grad=grad_h, hess=K, base=x)


def operator_value(op: QuasilinearOperator, jet: HorizontalJet) -> float:
    """-Tr(A(grad) hess) + H(grad), honoring the zero-gradient convention."""
    xi = jet.grad
    if np.linalg.norm(xi) <= ZERO_GRAD_TOL:
        if op.zero_gradient_rule == "degenerate":
            return op.h_at(np.zeros(op.m))
        xi = np.zeros(op.m)
    return float(-np.trace(op.a_at(xi) @ jet.hess) + op.h_at(xi))


def evaluate_operator(op: QuasilinearOperator, sys: VectorFieldSystem, u, x) -> float:
    return operator_value(op, horizontal_jet(sys, u, x))


# ---------------------------------------------------------------------------
# linearization
# ---------------------------------------------------------------------------

@dataclass
class Linearization:
    """Coefficients of the operator linearized at a base field and point.

    Applies as v -> -Tr(second_order X*Xv) + <first_order, Xv>.
    """

    second_order: np.ndarray
    first_order: np.ndarray
    base_gradient: np.ndarray
    base_point: np.ndarray

    def apply(self, sys: VectorFieldSystem, v, x=None) -> float:
        jet = horizontal_jet(sys, v, self.base_point if x is None else x)
        return float(-np.trace(self.second_order @ jet.hess)
                     + self.first_order @ jet.grad)


def linearize_at(op: QuasilinearOperator, sys: VectorFieldSystem, u, x) -> Linearization:
    """Freeze coefficients of the derivative of the operator at (u, x).

    Requires a nonvanishing horizontal gradient for the presets that are
    not smooth at 0; A and H derivatives fall back to central differences
    with step 1e-6 when no closed form is attached.
    """
    jet = horizontal_jet(sys, u, x)
    xi = jet.grad
    if np.linalg.norm(xi) <= ZERO_GRAD_TOL and not op.smooth_at_zero:
        raise ZeroGradientError(
            f"{op.name} is not differentiable at vanishing gradient")
    dA = op.da_at(xi)
    b = -np.einsum("kij,ij->k", dA, jet.hess) + op.dh_at(xi)
    return Linearization(op.a_at(xi), b, xi.copy(), np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# structure conditions and growth
# ---------------------------------------------------------------------------

@dataclass
class StructureReport:
    operator: str
    samples: int
    violations: list
    worst_margins: dict

    @property
    def passed(self) -> bool:
        return not self.violations


def check_structure(op: QuasilinearOperator, samples: int,
                    t_range=(1.0, 8.0), xi_range=(0.05, 10.0),
                    seed: int = 0, tol: float = 1e-9) -> StructureReport:
    """Sample the ellipticity, PSD/symmetry, and scaling inequalities.

    Draws (t, xi, X) with t >= 1, xi != 0, X symmetric; every violated
    inequality is recorded with its margin.  An empty violation list is a
    pass; margins land in ``worst_margins`` either way.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    rng = np.random.default_rng(seed)
    m = op.m
    checks = ("symmetry", "psd", "ellipticity", "trace_scaling", "drift_scaling")
    worst = {c: -np.inf for c in checks}
    violations = []

    def record(check, i, margin):
        worst[check] = max(worst[check], margin)
        if margin > tol:
            violations.append((check, i, float(margin)))

    for i in range(samples):
        direction = rng.normal(size=m)
        direction /= max(np.linalg.norm(direction), 1e-300)
        xi = direction * np.exp(rng.uniform(np.log(xi_range[0]), np.log(xi_range[1])))
        t = rng.uniform(*t_range)
        G = rng.normal(size=(m, m))
        X = 0.5 * (G + G.T)

        A = op.a_at(xi)
        scaleA = max(1.0, np.max(np.abs(A)))
        record("symmetry", i, np.max(np.abs(A - A.T)) / scaleA)
        record("psd", i, -np.min(np.linalg.eigvalsh(0.5 * (A + A.T))) - 1e-10)
        record("ellipticity", i, -op.ellipticity(xi))

        denom = t * op.phi(1.0 / t)
        lhs = -np.trace(op.a_at(t * xi) @ X)
        rhs = -np.trace(A @ X) / denom
        record("trace_scaling", i, (lhs - rhs) / max(1.0, abs(lhs), abs(rhs)))

        lhs_h = op.h_at(t * xi)
        rhs_h = op.h_at(xi) / op.phi(1.0 / t)
        record("drift_scaling", i, (lhs_h - rhs_h) / max(1.0, abs(lhs_h), abs(rhs_h)))

    return StructureReport(op.name, samples, violations,
                           {k: float(v) for k, v in worst.items()})


@dataclass
class GrowthReport:
    theta: float
    a_theta: float
    worst_margin: float
    margins: np.ndarray
    rejected: list


def growth_lower_bound(op: QuasilinearOperator, theta: float, xi_samples,
                       sphere_samples: int = 4096, seed: int = 0) -> GrowthReport:
    """Margins of E(xi) >= |xi| a_theta / (theta phi(theta/|xi|)).

    a_theta is the minimum of E over a dense sample of the sphere
    |zeta| = theta.  Samples with |xi| < theta violate the precondition and
    are reported in ``rejected`` instead of contributing margins.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    rng = np.random.default_rng(seed)
    m = op.m
    if m == 2:
        angles = np.linspace(0.0, 2 * np.pi, sphere_samples, endpoint=False)
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    else:
        dirs = rng.normal(size=(sphere_samples, m))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        dirs = np.concatenate([dirs, np.eye(m), -np.eye(m)])
    a_theta = min(op.ellipticity(theta * d) for d in dirs)

    margins, rejected = [], []
    for i, xi in enumerate(np.atleast_2d(np.asarray(xi_samples, dtype=float))):
        norm = np.linalg.norm(xi)
        if norm < theta:
            rejected.append(i)
            continue
        bound = norm * a_theta / (theta * op.phi(theta / norm))
        margins.append(op.ellipticity(xi) - bound)
    margins = np.asarray(margins)
    worst = float(margins.min()) if margins.size else np.nan
    return GrowthReport(theta, float(a_theta), worst, margins, rejected)


# ---------------------------------------------------------------------------
# inequality probes
# ---------------------------------------------------------------------------

@dataclass
class ProbeResult:
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


def chain_rule_bound_probe(op: QuasilinearOperator, sys: VectorFieldSystem,
                           omega, profile: ScalarProfile, x0,
                           tol: float = 1e-9) -> ProbeResult:
    """Composition bound: L(h o omega) against the scaled dissipation.

    Checks L(h(omega))(x0) <= [L omega(x0) - (h''/h') E(X omega(x0))]
    / phi(1/h'(omega(x0))) for a C^2 profile with h' >= 1, h'' >= 0.
    """
    omega = as_smooth(omega)
    x0 = np.asarray(x0, dtype=float)
    w0 = omega.value(x0)
    dh = profile.dh(w0)
    d2h = profile.d2h(w0)
    if dh < 1.0 - 1e-12:
        raise ValueError("profile must have h' >= 1")
    if d2h < -1e-12:
        raise ValueError("profile must have h'' >= 0")

    lhs = evaluate_operator(op, sys, Composition(profile, omega), x0)
    jet = horizontal_jet(sys, omega, x0)
    lw = operator_value(op, jet)
    energy = op.ellipticity(jet.grad)
    rhs = (lw - (d2h / dh) * energy) / op.phi(1.0 / dh)
    if lhs > rhs + tol:
        raise ProbeAssertionError(
            f"composition bound violated: lhs={lhs:.12g} > rhs={rhs:.12g}")
    return ProbeResult(lhs, rhs)


def _sigma_norms(sys: VectorFieldSystem, around, radius: float = 0.5,
                 samples: int = 64, seed: int = 0):
    rng = np.random.default_rng(seed)
    pts = np.asarray(around, dtype=float) + rng.uniform(-radius, radius,
                                                        size=(samples, sys.n))
    snorm = max(np.linalg.norm(sys.field_matrix(p)) for p in pts)
    dnorm = max(np.max([np.linalg.norm(J) for J in np.asarray(sys.dsigma(p))])
                for p in pts)
    return snorm, dnorm


def linear_perturbation_bound_probe(op: QuasilinearOperator,
                                    sys: VectorFieldSystem, w, p, x,
                                    modulus_samples: int = 1000,
                                    seed: int = 0,
                                    safety: float = 1.5) -> ProbeResult:
    """Perturbation bound |L(w + <p,.>) - L w| at x against sampled moduli.

    The moduli of continuity of A and H are estimated as the sampled maxima
    over pairs at gradient distance <= |p| near X w(x), times a safety
    factor; the structural constant is assembled from measured sup norms of
    sigma and Dsigma.
    """
    w = as_smooth(w)
    p = np.asarray(p, dtype=float)
    if np.linalg.norm(p) > 1.0 + 1e-12:
        raise ValueError("|p| must be at most 1")
    x = np.asarray(x, dtype=float)

    jet = horizontal_jet(sys, w, x)
    jet_p = horizontal_jet(sys, LinearTilt(w, p), x)
    deviation = abs(operator_value(op, jet_p) - operator_value(op, jet))

    s = float(np.linalg.norm(p))
    snorm, dnorm = _sigma_norms(sys, x, seed=seed)
    if s == 0.0:
        return ProbeResult(deviation, 0.0)

    rng = np.random.default_rng(seed + 1)
    omega_a = 0.0
    omega_h = 0.0
    for _ in range(modulus_samples):
        base = jet.grad + rng.uniform(-snorm * s, snorm * s, size=op.m)
        delta = rng.normal(size=op.m)
        delta *= s * rng.uniform(0, 1) / max(np.linalg.norm(delta), 1e-300)
        try:
            omega_a = max(omega_a, np.linalg.norm(op.a_at(base + delta) - op.a_at(base)))
            omega_h = max(omega_h, abs(op.h_at(base + delta) - op.h_at(base)))
        except ZeroGradientError:
            continue
    omega_a *= safety
    omega_h *= safety

    c = (1.0 + np.ceil(snorm)) * max(1.0, snorm, op.m * snorm * dnorm)
    bound = c * (omega_a * (np.linalg.norm(jet.hess) + s)
                 + np.linalg.norm(op.a_at(jet.grad)) * s + omega_h)
    if deviation > bound + 1e-12:
        raise ProbeAssertionError(
            f"perturbation bound violated: dev={deviation:.12g} > bound={bound:.12g}")
    return ProbeResult(deviation, bound)
