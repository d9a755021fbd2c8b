"""Coefficient fields of differential forms on a coordinate box.

A 2-form is stored as the full skew matrix ``Omega`` with
``sigma(u, v) = u^T Omega v``, i.e. ``sigma = sum_{i<j} Omega_ij dx^i ^ dx^j``.
All evaluation rules are vectorized: they take points of shape ``(P, d)``
and return ``(P, d, d)`` (2-forms), ``(P, d)`` (1-forms, vector fields) or
``(P,)`` (scalars).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator

from .epsnum import EpsLadder, make_ladder
from .errors import DomainError, ValidationError
from .symplin import dx_dxi, is_skew, j_can

_CHUNK = 2_000_000


@dataclass(frozen=True)
class BoxDomain:
    lo: tuple
    hi: tuple
    grid: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.ravel(self.lo))
        hi = tuple(float(v) for v in np.ravel(self.hi))
        grid = tuple(int(g) for g in np.ravel(self.grid))
        if len(grid) == 1 and len(lo) > 1:
            grid = grid * len(lo)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "grid", grid)
        if not (len(lo) == len(hi) == len(grid)) or not lo:
            raise ValidationError("lo, hi and grid must have the same positive length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValidationError(f"need lo < hi componentwise, got {lo} and {hi}")
        if any(g < 3 for g in grid):
            raise ValidationError(f"need at least 3 grid points per axis, got {grid}")

    @classmethod
    def cube(cls, dim, half=1.0, grid=None, center=None):
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        if grid is None:
            grid = 101 if dim <= 2 else 21
        return cls(tuple(c - half), tuple(c + half), (grid,) * dim)

    @property
    def dim(self):
        return len(self.lo)

    @property
    def lo_arr(self):
        return np.asarray(self.lo)

    @property
    def hi_arr(self):
        return np.asarray(self.hi)

    @property
    def spacing(self):
        return (self.hi_arr - self.lo_arr) / (np.asarray(self.grid) - 1)

    def axes(self):
        return [np.linspace(a, b, g) for a, b, g in zip(self.lo, self.hi, self.grid)]

    def points(self):
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def contains(self, pts, tol=0.0):
        pts = np.atleast_2d(pts)
        return np.all((pts >= self.lo_arr - tol) & (pts <= self.hi_arr + tol), axis=-1)

    def covers(self, other, tol=1e-12):
        return bool(np.all(self.lo_arr <= other.lo_arr + tol) and np.all(self.hi_arr >= other.hi_arr - tol))

    def distance_to_boundary(self, q):
        q = np.asarray(q, dtype=float)
        return float(np.min(np.minimum(q - self.lo_arr, self.hi_arr - q)))

    def enlarged(self, margin):
        m = np.broadcast_to(np.asarray(margin, dtype=float), (self.dim,))
        return BoxDomain(tuple(self.lo_arr - m), tuple(self.hi_arr + m), self.grid)

    def shifted(self, offset):
        o = np.asarray(offset, dtype=float)
        return BoxDomain(tuple(self.lo_arr + o), tuple(self.hi_arr + o), self.grid)

    def with_grid(self, grid):
        return BoxDomain(self.lo, self.hi, grid)

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi), "grid": list(self.grid)}


def _as_points(q):
    q = np.asarray(q, dtype=float)
    return q.ndim == 1, np.atleast_2d(q)


class _Field:
    """Shared evaluation plumbing for all field types."""

    def __init__(self, domain, rule, name=None):
        self.domain = domain
        self.rule = rule
        self.name = name

    def __call__(self, q):
        single, pts = _as_points(q)
        out = np.asarray(self.rule(pts), dtype=float)
        return out[0] if single else out

    def sample(self, points=None):
        return self(self.domain.points() if points is None else points)

    def __repr__(self):
        return f"{type(self).__name__}({self.name or 'anonymous'}, dim={self.domain.dim})"


class TwoFormField(_Field):
    @classmethod
    def constant(cls, domain, matrix, name=None):
        M = np.array(matrix, dtype=float)
        return cls(domain, lambda p: np.broadcast_to(M, (len(p),) + M.shape).copy(), name)

    @classmethod
    def from_grid(cls, domain, values, method="linear", name=None):
        """Grid-backed field, interpolated componentwise (multilinear by default)."""
        values = np.asarray(values, dtype=float)
        d = domain.dim
        if values.shape != tuple(domain.grid) + (d, d):
            raise ValidationError(
                f"grid values have shape {values.shape}, expected {tuple(domain.grid) + (d, d)}")
        interp = RegularGridInterpolator(domain.axes(), values, method=method,
                                         bounds_error=False, fill_value=None)
        return cls(domain, interp, name)

    def shifted(self, p):
        """The same form in coordinates centred at ``p``: ``z -> Omega(p + z)``."""
        p = np.asarray(p, dtype=float)
        return TwoFormField(self.domain.shifted(-p), lambda z: self.rule(z + p), self.name)


class OneFormField(_Field):
    pass


class ScalarRule(_Field):
    pass


class VectorFieldT:
    """Time-dependent vector field ``(t, points) -> vectors``."""

    def __init__(self, domain, rule, name=None):
        self.domain = domain
        self.rule = rule
        self.name = name

    def __call__(self, t, q):
        single, pts = _as_points(q)
        out = np.asarray(self.rule(t, pts), dtype=float)
        return out[0] if single else out

    @classmethod
    def autonomous(cls, domain, rule, name=None):
        return cls(domain, lambda t, p: rule(p), name)


@dataclass
class GenTwoForm:
    """An eps-family of 2-form fields on a common domain."""

    ladder: EpsLadder
    members: list
    name: str = "custom"
    source: object = None
    metric: object = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.members) != len(self.ladder):
            raise ValidationError("one member per ladder value required")
        doms = {m.domain for m in self.members}
        if len(doms) != 1:
            raise ValidationError("members must share one domain")

    @property
    def domain(self):
        return self.members[0].domain

    def __len__(self):
        return len(self.members)

    def __getitem__(self, k):
        return self.members[k]

    def __iter__(self):
        return iter(zip(self.ladder.values, self.members))

    def map(self, fn):
        return GenTwoForm(self.ladder, [fn(m) for m in self.members], self.name,
                          self.source, self.metric, dict(self.params))


def skew_symmetrize(field):
    """Pointwise ``(Omega - Omega^T) / 2``."""
    rule = field.rule
    return TwoFormField(field.domain,
                        lambda p: 0.5 * (lambda O: O - np.swapaxes(O, -1, -2))(rule(p)),
                        field.name)


# ---------------------------------------------------------------- mollifiers

def _bump_profile(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def _gauss_profile(s):
    # truncated at 6 standard deviations, i.e. sd = 1/6 on the unit support
    s = np.asarray(s, dtype=float)
    return np.where(np.abs(s) <= 1.0, np.exp(-18.0 * s * s), 0.0)


_PROFILES = {"bump": _bump_profile, "gaussian_truncated": _gauss_profile}


@lru_cache(maxsize=None)
def _profile_mass(kernel):
    val, _ = integrate.quad(_PROFILES[kernel], -1.0, 1.0, epsabs=1e-14, epsrel=1e-14, limit=200)
    return val


@dataclass(frozen=True)
class MollifierSpec:
    """Product kernel ``prod_a rho(z_a / (radius eps)) / (radius eps)``.

    ``nodes`` is the number of quadrature intervals across the kernel
    support ``[-radius eps, radius eps]`` along each convolved axis.
    """

    kernel: str = "bump"
    nodes: int = 64
    radius: float = 1.0

    def __post_init__(self):
        if self.kernel not in _PROFILES:
            raise ValidationError(f"unknown kernel {self.kernel!r}; use one of {sorted(_PROFILES)}")
        if self.nodes < 32:
            raise ValidationError("the kernel must be resolved by at least 32 nodes")
        if self.radius <= 0:
            raise ValidationError("kernel radius must be positive")

    def density(self, s):
        """Normalized 1-D kernel on the unit support."""
        return _PROFILES[self.kernel](s) / _profile_mass(self.kernel)

    def density_eps(self, z, eps):
        w = self.radius * eps
        return self.density(np.asarray(z) / w) / w

    def cdf_eps(self, z, eps):
        """Mollified Heaviside ``(H * rho_eps)(z)`` by adaptive quadrature (reference values)."""
        w = self.radius * eps
        s = float(np.clip(z / w, -1.0, 1.0))
        if s <= -1.0:
            return 0.0
        val, _ = integrate.quad(self.density, -1.0, s, epsabs=1e-13, epsrel=1e-12, limit=200)
        return min(val, 1.0)

    def margin(self, eps):
        """Extra raw data needed beyond the domain along each convolved axis."""
        h = 2 * self.radius * eps / self.nodes
        return self.radius * eps + 2 * h

    def to_dict(self):
        return {"kernel": self.kernel, "nodes": self.nodes, "radius": self.radius}


@dataclass
class RawRule:
    """A possibly discontinuous coefficient rule and the box it is supplied on.

    ``depends_on`` lists the coordinate axes the rule actually varies along;
    convolution with a product kernel only has to run along those.
    """

    rule: Callable
    box: BoxDomain
    depends_on: tuple | None = None

    def axes(self):
        return tuple(range(self.box.dim)) if self.depends_on is None else tuple(self.depends_on)


def mollified_rule(raw, spec, eps):
    """Vectorized rule for ``raw * rho_eps`` (componentwise, product kernel).

    The integral is a trapezoid sum over a fixed node lattice ``j h``
    anchored at the origin, normalized by the discrete kernel mass, so
    constants are reproduced exactly and the result is smooth in the
    evaluation point even when ``raw`` jumps.
    """
    axes = raw.axes()
    width = spec.radius * eps
    h = 2.0 * width / spec.nodes
    m = int(math.ceil(width / h)) + 1
    offs = np.arange(-m, m + 2)
    M = len(offs)
    k = len(axes)

    def rule(pts):
        pts = np.asarray(pts, dtype=float)
        P = len(pts)
        if k == 0:
            return raw.rule(pts)
        out = None
        step = max(1, _CHUNK // (M ** k))
        for a0 in range(0, P, step):
            chunk = pts[a0:a0 + step]
            Q = len(chunk)
            weights = np.ones((Q, 1))
            Z = np.repeat(chunk[:, None, :], 1, axis=1)
            for ax in axes:
                idx = np.floor(chunk[:, ax] / h)[:, None] + offs[None, :]
                y = idx * h
                w = spec.density((chunk[:, ax][:, None] - y) / width)
                w /= w.sum(axis=1, keepdims=True)
                weights = (weights[:, :, None] * w[:, None, :]).reshape(Q, -1)
                Z = np.repeat(Z, M, axis=1)
                Z[:, :, ax] = np.tile(y, (1, Z.shape[1] // M))
            vals = np.asarray(raw.rule(Z.reshape(-1, pts.shape[1])), dtype=float)
            vals = vals.reshape((Q, Z.shape[1]) + vals.shape[1:])
            res = np.einsum("qn,qn...->q...", weights, vals)
            if out is None:
                out = np.empty((P,) + res.shape[1:])
            out[a0:a0 + step] = res
        return out

    return rule


def _check_margin(raw, domain_lo, domain_hi, spec, eps_max, what="domain"):
    need = spec.margin(eps_max)
    lo = np.asarray(domain_lo, dtype=float)
    hi = np.asarray(domain_hi, dtype=float)
    conv = set(raw.axes())
    problems = []
    for a in range(len(lo)):
        mg = need if a in conv else 0.0
        if raw.box.lo[a] > lo[a] - mg + 1e-12 * max(1.0, abs(lo[a])) or \
                raw.box.hi[a] < hi[a] + mg - 1e-12 * max(1.0, abs(hi[a])):
            problems.append(a)
    if problems:
        raise ValidationError(
            f"raw data must cover the {what} enlarged by a margin of {need:.6g} "
            f"(kernel radius {spec.radius} * eps_max {eps_max} plus two quadrature steps) "
            f"along axes {problems}; supplied box lo={raw.box.lo}, hi={raw.box.hi}")


def mollify(raw, spec, ladder, domain, name="mollified"):
    """The eps-family of convolutions of ``raw`` with the scaled kernel."""
    if raw.box.dim != domain.dim:
        raise ValidationError("raw rule and domain dimensions differ")
    _check_margin(raw, domain.lo, domain.hi, spec, ladder.values[0])
    members = [TwoFormField(domain, mollified_rule(raw, spec, e), f"{name}[eps={e:g}]")
               for e in ladder.values]
    return GenTwoForm(ladder, members, name, source=raw)


# ---------------------------------------------------------- exterior calculus

def _check_interior(domain, q, h):
    q = np.atleast_2d(q)
    if np.any(q - h < domain.lo_arr - 1e-15) or np.any(q + h > domain.hi_arr + 1e-15):
        raise DomainError(f"point(s) closer than h={h:g} to the domain boundary")


def _partials(field, q, h):
    """Central differences: array ``D[a] = d/dx_a field`` at the points ``q``."""
    q = np.atleast_2d(q)
    P, d = q.shape
    eye = np.eye(d) * h
    shifted = np.concatenate([q[None] + eye[:, None, :], q[None] - eye[:, None, :]], axis=0)
    vals = field.rule(shifted.reshape(-1, d))
    vals = np.asarray(vals).reshape((2, d, P) + np.shape(vals)[1:])
    return (vals[0] - vals[1]) / (2 * h)          # (d, P, ...)


def three_form_indices(d):
    return [(i, j, k) for i in range(d) for j in range(i + 1, d) for k in range(j + 1, d)]


def exterior_derivative(form, q, h):
    """Central-difference exterior derivative at ``q``.

    For a :class:`OneFormField` returns the skew matrix of ``d alpha``; for
    a :class:`TwoFormField` returns the components ``(d sigma)_{ijk}``,
    ``i < j < k``, in the order of :func:`three_form_indices`.
    """
    single = np.ndim(q) == 1
    q = np.atleast_2d(np.asarray(q, dtype=float))
    _check_interior(form.domain, q, h)
    D = _partials(form, q, h)
    if isinstance(form, OneFormField):
        # (d alpha)_ij = d_i alpha_j - d_j alpha_i
        G = np.moveaxis(D, 0, 1)                 # (P, i, j) = d_i alpha_j
        out = G - np.swapaxes(G, -1, -2)
    elif isinstance(form, TwoFormField):
        d = q.shape[1]
        idx = three_form_indices(d)
        out = np.empty((len(q), len(idx)))
        for c, (i, j, k) in enumerate(idx):
            out[:, c] = D[i][:, j, k] + D[j][:, k, i] + D[k][:, i, j]
    else:
        raise ValidationError("exterior_derivative needs a 1-form or 2-form field")
    return out[0] if single else out


def vol_density(sigma, q):
    """``sqrt(|det Omega(q)|)``."""
    return np.sqrt(np.abs(np.linalg.det(sigma(q))))


def pfaffian(A):
    """Pfaffian of a real skew matrix by skew LTL^T elimination with pivoting."""
    A = np.array(A, dtype=float)
    d = A.shape[0]
    if d % 2:
        return 0.0
    pf = 1.0
    for k in range(0, d - 1, 2):
        kp = k + 1 + int(np.argmax(np.abs(A[k + 1:, k])))
        if kp != k + 1:
            A[[k + 1, kp], :] = A[[kp, k + 1], :]
            A[:, [k + 1, kp]] = A[:, [kp, k + 1]]
            pf = -pf
        if A[k + 1, k] == 0.0:
            return 0.0
        pf *= A[k, k + 1]
        if k + 2 < d:
            tau = A[k, k + 2:] / A[k, k + 1]
            col = A[k + 2:, k + 1].copy()
            A[k + 2:, k + 2:] += np.outer(tau, col) - np.outer(col, tau)
    return pf


def wedge_top_power(sigma, q):
    """Coefficient of ``sigma^n`` against ``dx^1 ^ ... ^ dx^2n``: ``n! Pf(Omega)``."""
    Om = sigma(q)
    if not is_skew(Om):
        raise ValidationError("wedge_top_power needs a skew coefficient matrix")
    d = Om.shape[-1]
    if Om.ndim == 2:
        return math.factorial(d // 2) * pfaffian(Om)
    return np.array([math.factorial(d // 2) * pfaffian(M) for M in Om])


# ----------------------------------------------------------- maps, pullbacks

def _cd4_jacobian(f, q, h):
    q = np.atleast_2d(q)
    P, d = q.shape
    cols = []
    for a in range(d):
        e = np.zeros(d)
        e[a] = h
        cols.append((-f(q + 2 * e) + 8 * f(q + e) - 8 * f(q - e) + f(q - 2 * e)) / (12 * h))
    return np.stack(cols, axis=-1)


class NumericDiffeo:
    """An invertible map with a Jacobian field.

    ``forward``/``jacobian``/``inverse`` are vectorized callables on
    ``(P, d)`` arrays.  Without an explicit Jacobian a fourth-order central
    difference with step ``fd_step`` is used.  ``samples`` optionally holds
    ``(points, values, jacobians)`` recorded when the map was built.
    """

    def __init__(self, forward, jacobian=None, inverse=None, domain=None, range=None,
                 fd_step=1e-4, name=None, samples=None):
        self.forward = forward
        self._jacobian = jacobian
        self.inverse = inverse
        self.domain = domain
        self.range = range
        self.fd_step = fd_step
        self.name = name
        self.samples = samples

    def __call__(self, q):
        single, pts = _as_points(q)
        out = np.asarray(self.forward(pts), dtype=float)
        return out[0] if single else out

    def jac(self, q):
        single, pts = _as_points(q)
        if self._jacobian is not None:
            out = np.asarray(self._jacobian(pts), dtype=float)
        else:
            out = _cd4_jacobian(self.forward, pts, self.fd_step)
        return out[0] if single else out

    def inv(self, y):
        if self.inverse is None:
            raise NotImplementedError(f"{self.name or 'map'} has no inverse")
        single, pts = _as_points(y)
        out = np.asarray(self.inverse(pts), dtype=float)
        return out[0] if single else out

    def compose(self, inner):
        """``self o inner`` with the chain-rule Jacobian."""
        outer = self

        def fwd(p):
            return outer.forward(inner.forward(p))

        def jac(p):
            return outer.jac(inner.forward(p)) @ inner.jac(p)

        inv = None
        if outer.inverse is not None and inner.inverse is not None:
            def inv(y):
                return inner.inverse(outer.inverse(y))
        return NumericDiffeo(fwd, jac, inv, inner.domain, outer.range)

    @classmethod
    def identity(cls, d, domain=None):
        return cls(lambda p: p.copy(), lambda p: np.broadcast_to(np.eye(d), (len(p), d, d)).copy(),
                   lambda y: y.copy(), domain, domain, name="identity")

    @classmethod
    def linear(cls, A, b=None, domain=None, range=None):
        A = np.array(A, dtype=float)
        b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)
        Ainv = np.linalg.inv(A)
        return cls(lambda p: p @ A.T + b,
                   lambda p: np.broadcast_to(A, (len(p),) + A.shape).copy(),
                   lambda y: (y - b) @ Ainv.T, domain, range, name="linear")


def pullback(phi, sigma, tol=1e-12):
    """``(phi^* sigma)(q) = D phi(q)^T Omega(phi(q)) D phi(q)``."""
    dom = phi.domain if phi.domain is not None else sigma.domain

    def rule(q):
        y = np.atleast_2d(phi(q))
        inside = sigma.domain.contains(y, tol)
        if not np.all(inside):
            bad = int(np.flatnonzero(~inside)[0])
            raise DomainError(
                f"map leaves the form's domain: q={q[bad].tolist()} -> {y[bad].tolist()}")
        Dp = np.atleast_3d(phi.jac(q)) if np.ndim(q) > 1 else phi.jac(q)
        Om = sigma.rule(y)
        return np.swapaxes(Dp, -1, -2) @ Om @ Dp

    return TwoFormField(dom, rule, f"pullback({sigma.name})")


# --------------------------------------------------------------- metrics

class MetricFamily:
    """Mollified Riemannian metrics ``g_eps`` on a base box in R^n."""

    def __init__(self, ladder, raw, spec, base, fd_step=1e-5):
        self.ladder = ladder
        self.raw = raw
        self.spec = spec
        self.base = base
        self.fd_step = fd_step
        self.n = base.dim
        _check_margin(raw, base.lo, base.hi, spec, ladder.values[0], "base box")
        self._rules = [mollified_rule(raw, spec, e) for e in ladder.values]

    def metric(self, k, x):
        return np.asarray(self._rules[k](np.atleast_2d(x)), dtype=float)

    def gradient(self, k, x):
        """``(P, a, i, j) = d_a g_ij`` by central differences."""
        x = np.atleast_2d(x)
        return np.moveaxis(_partials(ScalarRule(self.base, self._rules[k]), x, self.fd_step), 0, 1)


def _tm_rule(family, k):
    n = family.n

    def rule(pts):
        x, v = pts[:, :n], pts[:, n:]
        g = family.metric(k, x)
        dg = family.gradient(k, x)
        c = np.einsum("pi,pkij->pjk", v, dg)     # c_jk = sum_i v_i d_k g_ij
        Om = np.zeros((len(pts), 2 * n, 2 * n))
        Om[:, :n, n:] = g
        Om[:, n:, :n] = -np.swapaxes(g, -1, -2)
        Om[:, :n, :n] = c - np.swapaxes(c, -1, -2)
        return Om

    return rule


def tm_form(family, domain=None, vmax=1.0):
    """``sum g_ij dx_i ^ dv_j + sum d_k g_ij v_i dx_j ^ dx_k`` on (x, v) space."""
    n = family.n
    if domain is None:
        domain = BoxDomain(family.base.lo + (-vmax,) * n, family.base.hi + (vmax,) * n,
                           family.base.grid + family.base.grid)
    members = [TwoFormField(domain, _tm_rule(family, k), f"tm_metric[eps={e:g}]")
               for k, e in enumerate(family.ladder.values)]
    return GenTwoForm(family.ladder, members, "tm_metric", source=family.raw, metric=family)


# ----------------------------------------------------------------- corpus

def heaviside(x):
    return np.heaviside(x, 0.5)


def heaviside_raw(n, box):
    """``(1 + H(x_1)) dx_1 ^ dxi_1 + sum_{i>1} dx_i ^ dxi_i`` as a raw rule."""
    base = dx_dxi(n)

    def rule(p):
        out = np.broadcast_to(base, (len(p), 2 * n, 2 * n)).copy()
        a = 1.0 + heaviside(p[:, 0])
        out[:, 0, n] = a
        out[:, n, 0] = -a
        return out

    return RawRule(rule, box, depends_on=(0,))


def heaviside_metric_raw(n, box):
    def rule(x):
        g = np.broadcast_to(np.eye(n), (len(x), n, n)).copy()
        g[:, 0, 0] = 1.0 + heaviside(x[:, 0])
        return g

    return RawRule(rule, box, depends_on=(0,))


def flat_metric_raw(n, box):
    return RawRule(lambda x: np.broadcast_to(np.eye(n), (len(x), n, n)).copy(), box, depends_on=())


CORPUS_NAMES = ("canonical", "scaled_eps", "scaled_inv_eps", "heaviside", "tm_metric")


def corpus(name, ladder=None, n=1, domain=None, mollifier=None, **params):
    """Built-in families.

    ``canonical`` (param ``scale``): constant ``scale * j_can(n)``.
    ``scaled_eps`` / ``scaled_inv_eps``: ``eps dx^dxi`` and ``eps^-1 dx^dxi``.
    ``heaviside``: mollified ``(1 + H(x_1)) dx_1 ^ dxi_1`` (+ canonical pairs).
    ``tm_metric`` (params ``metric`` in {flat, heaviside} or a RawRule,
    ``vmax``, ``fd_step``): the 2-form on TM induced by a mollified metric.
    """
    if name not in CORPUS_NAMES:
        raise ValidationError(f"unknown corpus entry {name!r}; choose from {CORPUS_NAMES}")
    ladder = ladder if ladder is not None else make_ladder(0.4, 0.05, 4)
    spec = mollifier if mollifier is not None else MollifierSpec()
    d = 2 * n
    if name == "tm_metric":
        base = BoxDomain.cube(n) if domain is None else BoxDomain(domain.lo[:n], domain.hi[:n], domain.grid[:n])
        raw_box = base.enlarged(2 * spec.margin(ladder.values[0]))
        metric = params.get("metric", "flat")
        if isinstance(metric, RawRule):
            raw = metric
        elif metric == "flat":
            raw = flat_metric_raw(n, raw_box)
        elif metric == "heaviside":
            raw = heaviside_metric_raw(n, raw_box)
        else:
            raise ValidationError(f"unknown metric {metric!r}")
        fam = MetricFamily(ladder, raw, spec, base, params.get("fd_step", 1e-5))
        out = tm_form(fam, domain, params.get("vmax", 1.0))
        out.params = {"n": n, "metric": metric if isinstance(metric, str) else "custom"}
        return out

    domain = BoxDomain.cube(d) if domain is None else domain
    if domain.dim != d:
        raise ValidationError(f"domain has dimension {domain.dim}, expected {d}")
    if name == "canonical":
        scale = float(params.get("scale", 1.0))
        M = scale * j_can(n)
        members = [TwoFormField.constant(domain, M, f"canonical[eps={e:g}]") for e in ladder]
        return GenTwoForm(ladder, members, name, params={"n": n, "scale": scale})
    if name in ("scaled_eps", "scaled_inv_eps"):
        power = 1.0 if name == "scaled_eps" else -1.0
        members = [TwoFormField.constant(domain, e ** power * dx_dxi(n), f"{name}[eps={e:g}]")
                   for e in ladder]
        return GenTwoForm(ladder, members, name, params={"n": n})
    raw = heaviside_raw(n, domain.enlarged(2 * spec.margin(ladder.values[0])))
    out = mollify(raw, spec, ladder, domain, name)
    out.params = {"n": n, "mollifier": spec.to_dict()}
    return out
