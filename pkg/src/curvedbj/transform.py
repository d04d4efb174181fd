"""Interface-flattening coordinate change and its differential calculus.

The fluid/porous interface is the graph x2 = g(x1) of an L-periodic curve.
The map psi(z) = (z1, z2 + g(z1)) flattens it to z2 = 0 and has Jacobian

    F = [[1, 0], [g'(z1), 1]],   det F = 1.

Conventions (used everywhere in the package): the gradient of a vector field
is taken column-wise, (grad j)[i, k] = d_i j_k, and the divergence of a matrix
field acts on columns, (div M)[k] = sum_i d_i M[i, k].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import jets
from .jets import Jet


@dataclass(frozen=True)
class CurveSpec:
    """Truncated Fourier series g(z1) = sum_k a_k cos(2 pi k z1/L) + b_k sin(2 pi k z1/L).

    Mode numbers start at k = 1; the first list entry multiplies the
    fundamental. A constant shift of the interface does not change F, so no
    k = 0 term is carried.
    """

    period_L: float = 1.0
    fourier_cos: tuple[float, ...] = ()
    fourier_sin: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.period_L > 0:
            raise ValueError("period_L must be positive")
        object.__setattr__(self, "fourier_cos", tuple(float(a) for a in self.fourier_cos))
        object.__setattr__(self, "fourier_sin", tuple(float(b) for b in self.fourier_sin))

    @property
    def is_flat(self) -> bool:
        return not any(self.fourier_cos) and not any(self.fourier_sin)

    def derivative(self, z1, order: int = 0) -> np.ndarray:
        """Closed-form g^(order)(z1)."""
        z1 = np.mod(np.asarray(z1, dtype=float), self.period_L)
        out = np.zeros_like(z1)
        for terms, base in ((self.fourier_cos, 0), (self.fourier_sin, 3)):
            for k, amp in enumerate(terms, start=1):
                if amp == 0.0:
                    continue
                w = 2.0 * np.pi * k / self.period_L
                # d^n/dx^n of cos(wx) cycles cos, -sin, -cos, sin; sin starts three steps in
                phase = (base + order) % 4
                trig = (np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t), np.sin)[phase]
                out = out + amp * w**order * trig(w * z1)
        return out

    def g(self, z1) -> np.ndarray:
        return self.derivative(z1, 0)

    def dg(self, z1) -> np.ndarray:
        return self.derivative(z1, 1)

    def d2g(self, z1) -> np.ndarray:
        return self.derivative(z1, 2)

    def to_dict(self) -> dict:
        return {"L": self.period_L, "cos": list(self.fourier_cos), "sin": list(self.fourier_sin)}

    @classmethod
    def from_dict(cls, data: dict) -> "CurveSpec":
        return cls(float(data.get("L", 1.0)), tuple(data.get("cos", ())), tuple(data.get("sin", ())))


def metric_eigenvalues(slope) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigenvalues (lo, hi) of F^{-1}F^{-T} for g' = slope."""
    s2 = np.asarray(slope, dtype=float) ** 2
    hi = 1.0 + 0.5 * s2 + np.sqrt(s2 + 0.25 * s2 * s2)
    return 1.0 / hi, hi


@dataclass(frozen=True)
class JacobianSample:
    F: np.ndarray
    F_inv: np.ndarray
    F_invT: np.ndarray
    metric: np.ndarray
    eig_lo: float
    eig_hi: float

    @classmethod
    def from_slope(cls, s: float) -> "JacobianSample":
        s = float(s)
        F = np.array([[1.0, 0.0], [s, 1.0]])
        F_inv = np.array([[1.0, 0.0], [-s, 1.0]])
        metric = np.array([[1.0, -s], [-s, 1.0 + s * s]])
        lo, hi = metric_eigenvalues(s)
        return cls(F, F_inv, F_inv.T.copy(), metric, float(lo), float(hi))


def jacobian(spec: CurveSpec, z1: float, z2: float | None = None) -> JacobianSample:
    """Jacobian of psi at (z1, z2); z2 is accepted but has no influence."""
    return JacobianSample.from_slope(spec.dg(z1))


def map_point(spec: CurveSpec, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    x = z.copy()
    x[..., 1] = z[..., 1] + spec.g(z[..., 0])
    return x


def unmap_point(spec: CurveSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    z = x.copy()
    z[..., 1] = x[..., 1] - spec.g(x[..., 0])
    return z


def transform_vectors(spec: CurveSpec, x1: float, nu) -> tuple[np.ndarray, np.ndarray]:
    """Unit normal and tangent of the image of a flat boundary with normal ``nu``.

    The normal transforms with F^{-T} and the tangent with F.
    """
    nu = np.asarray(nu, dtype=float)
    if abs(np.linalg.norm(nu) - 1.0) > 1e-12:
        raise ValueError("nu must be a unit vector")
    jac = jacobian(spec, x1)
    tau = np.array([-nu[1], nu[0]])
    n = jac.F_invT @ nu
    t = jac.F @ tau
    return n / np.linalg.norm(n), t / np.linalg.norm(t)


# ---------------------------------------------------------------------------
# Operator calculus on callable fields.
#
# A scalar field is a callable Z -> value where Z = (Z1, Z2) holds either jets
# (analytic derivatives) or plain arrays (finite differences). Vector fields
# return 2-tuples, matrix fields nested 2x2 tuples.


def _memo(f):
    """Single-entry cache keyed on the identity of the evaluation point.

    Operator trees evaluate shared subfields many times at the same point;
    without this the cost grows exponentially with derivative depth.
    """
    last = [None, None]

    def wrapped(Z):
        if last[0] is not Z:
            last[0], last[1] = Z, f(Z)
        return last[1]

    return wrapped


def _tmap(fn, obj):
    if isinstance(obj, tuple):
        return tuple(_tmap(fn, o) for o in obj)
    return fn(obj)


def _tzip(fn, a, b):
    if isinstance(a, tuple):
        return tuple(_tzip(fn, x, y) for x, y in zip(a, b))
    return fn(a, b)


class Calculus:
    """Differential operators for a given slope function g'.

    ``slope(Z1)`` must accept jets or arrays. With ``fd_step`` set, partial
    derivatives are central differences instead of exact jet derivatives.
    """

    def __init__(self, slope: Callable, fd_step: float | None = None):
        self.slope = slope
        self.fd_step = fd_step

    def d(self, f, axis: int):
        f = _memo(f)
        if self.fd_step is None:
            return _memo(lambda Z: _tmap(lambda u: u.diff(axis), f(Z)))
        h = self.fd_step

        def shifted(Z, sign):
            Zs = list(Z)
            Zs[axis] = Zs[axis] + sign * h
            return f(tuple(Zs))

        return _memo(lambda Z: _tzip(lambda a, b: (a - b) / (2.0 * h), shifted(Z, 1), shifted(Z, -1)))

    # metric coefficients as fields
    def F(self, Z):
        s = self.slope(Z[0])
        return ((1.0, 0.0), (s, 1.0))

    def Finv(self, Z):
        s = self.slope(Z[0])
        return ((1.0, 0.0), (-s, 1.0))

    def FinvT(self, Z):
        s = self.slope(Z[0])
        return ((1.0, -s), (0.0, 1.0))

    def G(self, Z):
        s = self.slope(Z[0])
        return ((1.0, -s), (-s, 1.0 + s * s))

    # classical operators
    def grad(self, c):
        d0, d1 = self.d(c, 0), self.d(c, 1)
        return _memo(lambda Z: (d0(Z), d1(Z)))

    def grad_vec(self, j):
        d0, d1 = self.d(j, 0), self.d(j, 1)

        def out(Z):
            a, b = d0(Z), d1(Z)
            return ((a[0], a[1]), (b[0], b[1]))

        return _memo(out)

    def div(self, j):
        d0, d1 = self.d(j, 0), self.d(j, 1)
        return _memo(lambda Z: d0(Z)[0] + d1(Z)[1])

    def div_mat(self, M):
        d0, d1 = self.d(M, 0), self.d(M, 1)

        def out(Z):
            a, b = d0(Z), d1(Z)
            return (a[0][0] + b[1][0], a[0][1] + b[1][1])

        return _memo(out)

    def curl_scalar(self, c):
        """Curl c = R grad c with R the rotation by +90 degrees."""
        g = self.grad(c)

        def out(Z):
            a = g(Z)
            return (-a[1], a[0])

        return _memo(out)

    def curl(self, j):
        d0, d1 = self.d(j, 0), self.d(j, 1)
        return _memo(lambda Z: d0(Z)[1] - d1(Z)[0])

    # transformed operators
    def tgrad(self, c):
        """F^{-T} grad c."""
        return matvec(self.FinvT, self.grad(c))

    def tlaplace(self, u):
        """div(G grad u) for scalar or vector u."""
        probe = None

        def out(Z):
            nonlocal probe
            if probe is None:
                probe = isinstance(u(Z), tuple)
            if probe:
                return self.div_mat(matmul(self.G, self.grad_vec(u)))(Z)
            return self.div(matvec(self.G, self.grad(u)))(Z)

        return _memo(out)

    def tdiv(self, j):
        """div(F^{-1} j)."""
        return self.div(matvec(self.Finv, j))

    def tdiv_mat(self, M):
        return self.div_mat(matmul(self.Finv, M))

    def tcurl_scalar(self, c):
        """R F^{-T} grad c, which equals F Curl c."""
        g = self.tgrad(c)

        def out(Z):
            a = g(Z)
            return (-a[1], a[0])

        return _memo(out)

    def tcurl(self, j):
        """curl(F^T j)."""
        FT = lambda Z: transpose(self.F(Z))
        return self.curl(matvec(FT, j))


def transpose(M):
    return ((M[0][0], M[1][0]), (M[0][1], M[1][1]))


def matvec(M, v):
    def out(Z):
        m, w = M(Z), v(Z)
        return (m[0][0] * w[0] + m[0][1] * w[1], m[1][0] * w[0] + m[1][1] * w[1])

    return _memo(out)


def matmul(A, B):
    def out(Z):
        a, b = A(Z), B(Z)
        return tuple(
            tuple(a[i][0] * b[0][k] + a[i][1] * b[1][k] for k in range(2)) for i in range(2)
        )

    return _memo(out)


def scale(c, M):
    """Pointwise scalar times matrix (or vector)."""
    return _memo(lambda Z: _tmap(lambda m: c(Z) * m, M(Z)))


# ---------------------------------------------------------------------------
# Manufactured fields and identity verification

_TWO_PI = 2.0 * np.pi


def _manufactured(L: float):
    k = _TWO_PI / L

    def c(Z):
        z1, z2 = Z
        return jets.sin(k * z1) * jets.cos(_TWO_PI * z2) + 0.3 * jets.cos(k * z1 + 0.5) * jets.sin(
            _TWO_PI * z2 + 0.2
        )

    def j(Z):
        z1, z2 = Z
        return (
            jets.cos(k * z1) * jets.sin(_TWO_PI * z2) + 0.4 * jets.sin(k * z1 - 0.7) * 1.0,
            jets.sin(k * z1 + 0.3) * jets.cos(_TWO_PI * z2 + 0.7) - 0.2 * jets.cos(_TWO_PI * z2),
        )

    def M(Z):
        a, b = j(Z)
        return ((a, b * c(Z)), (c(Z), a * b))

    return c, j, M


def _physical_manufactured(L: float):
    """Fields written in x-coordinates, used for the chain-rule references."""
    k = _TWO_PI / L

    def ct(X):
        x1, x2 = X
        return jets.cos(k * x1) * jets.sin(_TWO_PI * x2 + 0.1) + 0.5 * jets.sin(k * x1 + _TWO_PI * x2)

    def jt(X):
        x1, x2 = X
        return (jets.sin(k * x1) * jets.cos(_TWO_PI * x2), jets.cos(k * x1 - 0.4) * jets.sin(_TWO_PI * x2))

    def Mt(X):
        a, b = jt(X)
        return ((a, ct(X)), (b * b, a + b))

    return ct, jt, Mt


def _slope_field(spec: CurveSpec):
    return lambda z1: jets.apply_univariate(z1, lambda x, k: spec.derivative(x, k + 1))


def _g_field(spec: CurveSpec):
    return lambda z1: jets.apply_univariate(z1, lambda x, k: spec.derivative(x, k))


@dataclass
class IdentityReport:
    residuals: dict[str, float] = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())

    def passed(self, tol: float) -> bool:
        return self.max_residual < tol


def _maxdiff(a, b) -> float:
    out = 0.0

    def acc(x, y):
        nonlocal out
        out = max(out, float(np.max(np.abs(jets.value(x) - jets.value(y)))))
        return None

    _tzip(acc, a, b)
    return out


def verify_identities(
    spec: CurveSpec,
    resolution: int = 64,
    fd_step: float | None = None,
    order: int = 4,
) -> IdentityReport:
    """Max-norm residuals of the transformed-operator identities on a uniform grid.

    With ``fd_step=None`` every derivative is exact (jets); otherwise central
    differences with that step are used, so residuals measure the FD error.
    """
    L = spec.period_L
    s = np.arange(resolution) / resolution
    z1, z2 = np.meshgrid(L * s, s, indexing="ij")
    if fd_step is None:
        Z = Jet.variables(z1, z2, order)
        fresh = lambda a, b: Jet.variables(a, b, order)
    else:
        Z = (z1, z2)
        fresh = lambda a, b: (a, b)

    cz = Calculus(_slope_field(spec), fd_step)
    cx = Calculus(lambda x1: 0.0 * x1, fd_step)
    c, j, M = _manufactured(L)
    zero = lambda Z: 0.0 * jets.value(Z[0])
    rep = IdentityReport()
    R = lambda v: (lambda Z: (v(Z)[1], -v(Z)[0]))

    # (1) div(F^{-1} c) = F^{-T} grad c
    rep.residuals["div_Finv_scalar"] = _maxdiff(cz.div_mat(scale(c, cz.Finv))(Z), cz.tgrad(c)(Z))
    # (2) div(G grad(div(F^{-1} j))) = div(F^{-1} div(G grad j))
    rep.residuals["laplace_commutes_div"] = _maxdiff(
        cz.tlaplace(cz.tdiv(j))(Z), cz.tdiv(cz.tlaplace(j))(Z)
    )
    # (3) transformed curl is transformed-divergence free
    rep.residuals["div_of_curl"] = _maxdiff(cz.tdiv(cz.tcurl_scalar(c))(Z), zero(Z))
    # (4) product rule
    cj = lambda Z: (c(Z) * j(Z)[0], c(Z) * j(Z)[1])
    rhs4 = lambda Z: c(Z) * cz.tdiv(j)(Z) + (cz.tgrad(c)(Z)[0] * j(Z)[0] + cz.tgrad(c)(Z)[1] * j(Z)[1])
    rep.residuals["product_rule"] = _maxdiff(cz.tdiv(cj)(Z), rhs4(Z))
    # (5) curl of gradient
    rep.residuals["curl_of_grad"] = _maxdiff(cz.tcurl(cz.tgrad(c))(Z), zero(Z))
    # (6) curl commutes with the transformed Laplacian
    rep.residuals["laplace_commutes_curl"] = _maxdiff(
        cz.tcurl(cz.tlaplace(j))(Z), cz.tlaplace(cz.tcurl(j))(Z)
    )
    # (7) for divergence-free w = F Curl c: F^{-T} grad(curl w) = -R div(G grad w).
    # The rotation is R^T = -R; already for F = I, grad(curl w)_1 = lap(w_2).
    w = cz.tcurl_scalar(c)
    rep.residuals["rotated_divergence"] = _maxdiff(cz.tgrad(cz.tcurl(w))(Z), R(cz.tlaplace(w))(Z))
    # (8) gradient commutes with the transformed Laplacian
    rep.residuals["laplace_commutes_grad"] = _maxdiff(
        cz.tgrad(cz.tlaplace(c))(Z), cz.tlaplace(cz.tgrad(c))(Z)
    )

    # operators in z against the same operators in x at psi(z)
    ct, jt, Mt = _physical_manufactured(L)
    gz = _g_field(spec)
    psi = lambda Zz: (Zz[0], Zz[1] + gz(Zz[0]))
    pull = lambda f: (lambda Zz: f(psi(Zz)))
    X = fresh(z1, z2 + spec.g(z1))
    pairs = {
        "laplace_scalar": (cz.tlaplace(pull(ct)), cx.div(cx.grad(ct))),
        "laplace_vector": (cz.tlaplace(pull(jt)), cx.div_mat(cx.grad_vec(jt))),
        "div_vector": (cz.tdiv(pull(jt)), cx.div(jt)),
        "div_matrix": (cz.tdiv_mat(pull(Mt)), cx.div_mat(Mt)),
        "grad_scalar": (cz.tgrad(pull(ct)), cx.grad(ct)),
        "curl_vector": (cz.tcurl(pull(jt)), cx.curl(jt)),
    }
    for name, (lhs, ref) in pairs.items():
        rep.residuals["chain_" + name] = _maxdiff(lhs(Z), ref(X))
    return rep
