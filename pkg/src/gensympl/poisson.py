"""Hamiltonian vector fields, Poisson brackets and geodesic sprays.

Sign convention: ``H_f`` is defined by ``df(v) = sigma(H_f, v)`` for all
``v``, i.e. ``Omega^T H_f = grad f``, and ``{f, g} = sigma(H_f, H_g)``.
For the canonical matrix ``[[0, -I], [I, 0]]`` this gives
``H_{x_i} = d/dxi_i``, ``H_{xi_i} = -d/dx_i`` and ``{x_i, xi_j} = -delta_ij``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericalError, ValidationError
from .forms import BoxDomain, TwoFormField, VectorFieldT, exterior_derivative
from .moser import flow

SINGULAR_DET = 1e-300
CLOSED_TOL = 1e-6


def _pts(q):
    q = np.asarray(q, dtype=float)
    return q.ndim == 1, np.atleast_2d(q)


class ScalarField:
    """A scalar function on a box, with an optional analytic gradient.

    Sums and products carry analytic gradients through when both operands
    have them; otherwise gradients fall back to fourth-order central
    differences with step ``fd_step`` (default: the domain grid spacing).
    """

    def __init__(self, domain, rule, gradient=None, name=None, fd_step=None):
        self.domain = domain
        self.rule = rule
        self.gradient = gradient
        self.name = name
        self.fd_step = fd_step

    def __call__(self, q):
        single, pts = _pts(q)
        out = np.asarray(self.rule(pts), dtype=float)
        return out[0] if single else out

    def step(self):
        if self.fd_step is not None:
            return np.broadcast_to(np.asarray(self.fd_step, dtype=float), (self.domain.dim,))
        return self.domain.spacing

    def grad(self, q):
        single, pts = _pts(q)
        if self.gradient is not None:
            out = np.asarray(self.gradient(pts), dtype=float)
        else:
            # fourth-order central stencil
            h = self.step()
            reach = 2 * h
            if np.any(pts - reach < self.domain.lo_arr - 1e-12) or \
                    np.any(pts + reach > self.domain.hi_arr + 1e-12):
                raise DomainError(f"finite differences of {self.name or 'field'} need points "
                                  f"at least {reach.tolist()} inside the domain")
            d = pts.shape[1]
            cols = []
            for a in range(d):
                e = np.zeros(d)
                e[a] = h[a]
                f = self.rule
                cols.append((8 * (f(pts + e) - f(pts - e)) - (f(pts + 2 * e) - f(pts - 2 * e)))
                            / (12 * h[a]))
            out = np.stack(cols, axis=-1)
        return out[0] if single else out

    # arithmetic ---------------------------------------------------------
    def _lift(self, other):
        if isinstance(other, ScalarField):
            return other
        c = float(other)
        return ScalarField(self.domain, lambda p: np.full(len(p), c),
                           lambda p: np.zeros_like(p), repr(c), self.fd_step)

    def __add__(self, other):
        o = self._lift(other)
        grad = None
        if self.gradient is not None and o.gradient is not None:
            grad = lambda p: self.gradient(p) + o.gradient(p)
        return ScalarField(self.domain, lambda p: self.rule(p) + o.rule(p), grad,
                           f"({self.name}+{o.name})", self.fd_step)

    __radd__ = __add__

    def __neg__(self):
        grad = None if self.gradient is None else (lambda p: -self.gradient(p))
        return ScalarField(self.domain, lambda p: -self.rule(p), grad, f"-{self.name}", self.fd_step)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        o = self._lift(other)
        grad = None
        if self.gradient is not None and o.gradient is not None:
            grad = lambda p: (self.gradient(p) * o.rule(p)[:, None]
                              + o.gradient(p) * self.rule(p)[:, None])
        return ScalarField(self.domain, lambda p: self.rule(p) * o.rule(p), grad,
                           f"{self.name}*{o.name}", self.fd_step)

    __rmul__ = __mul__

    @classmethod
    def coordinate(cls, domain, i, fd_step=None):
        d = domain.dim

        def grad(p):
            g = np.zeros((len(p), d))
            g[:, i] = 1.0
            return g

        return cls(domain, lambda p: p[:, i].copy(), grad, f"z{i + 1}", fd_step)

    @classmethod
    def constant(cls, domain, c, fd_step=None):
        return cls(domain, lambda p: np.full(len(p), float(c)), lambda p: np.zeros_like(p),
                   repr(float(c)), fd_step)

    @classmethod
    def quadratic(cls, domain, Q, b=None, c=0.0, fd_step=None):
        """``z^T Q z / 2 + b . z + c`` with ``Q`` symmetrized."""
        Q = 0.5 * (np.asarray(Q, dtype=float) + np.asarray(Q, dtype=float).T)
        b = np.zeros(domain.dim) if b is None else np.asarray(b, dtype=float)
        return cls(domain, lambda p: 0.5 * np.einsum("pi,ij,pj->p", p, Q, p) + p @ b + c,
                   lambda p: p @ Q + b, "quadratic", fd_step)

    def without_gradient(self):
        return ScalarField(self.domain, self.rule, None, self.name, self.fd_step)


def flat(member, X, q):
    """Covector ``v -> sigma(X, v) = X^T Omega(q) v``."""
    single, pts = _pts(q)
    X = np.broadcast_to(np.asarray(X, dtype=float), pts.shape)
    out = np.einsum("pi,pij->pj", X, member(pts).reshape(len(pts), pts.shape[1], -1))
    return out[0] if single else out


def sharp(member, alpha, q):
    """Vector ``X`` with ``flat(X) = alpha``."""
    single, pts = _pts(q)
    Om = np.asarray(member(pts)).reshape(len(pts), pts.shape[1], -1)
    a = np.broadcast_to(np.asarray(alpha, dtype=float), pts.shape)
    det = np.linalg.det(Om)
    if np.any(np.abs(det) <= SINGULAR_DET) or not np.all(np.isfinite(det)):
        bad = int(np.argmin(np.abs(det)))
        raise NumericalError("form is singular; sharp undefined",
                             {"det": float(det[bad]), "point": pts[bad].tolist()})
    out = np.linalg.solve(np.swapaxes(Om, -1, -2), a[..., None])[..., 0]
    return out[0] if single else out


@dataclass
class HamiltonianField:
    sigma: TwoFormField
    f: ScalarField
    field: VectorFieldT

    def __call__(self, q):
        return self.field(0.0, q)


def hamiltonian_field(member, f, fd_step=None):
    """``H_f = sharp(df)``; ``fd_step`` overrides the step used when ``f`` has no gradient."""
    if fd_step is not None:
        f = ScalarField(f.domain, f.rule, f.gradient, f.name, fd_step)

    def rule(t, q):
        return sharp(member, f.grad(q), q)

    return HamiltonianField(member, f, VectorFieldT(member.domain, rule, f"H[{f.name}]"))


def poisson_bracket(member, f, g, fd_step=None):
    """``{f, g} = sigma(H_f, H_g)`` as a new (gradient-free) scalar field."""
    Hf = hamiltonian_field(member, f, fd_step)
    Hg = hamiltonian_field(member, g, fd_step)

    def rule(q):
        Om = member(q).reshape(len(q), q.shape[1], -1)
        return np.einsum("pi,pij,pj->p", Hf(q), Om, Hg(q))

    step = fd_step if fd_step is not None else f.fd_step
    return ScalarField(member.domain, rule, None, f"{{{f.name},{g.name}}}", step)


def jacobi_residual(member, f, g, h, points, fd_step=None, closed_tol=CLOSED_TOL):
    """Sup over ``points`` of ``|{f,{g,h}} + {g,{h,f}} + {h,{f,g}}|``.

    Warns when the form is not closed at the sample points, in which case
    the Jacobi identity is not expected to hold.
    """
    points = np.atleast_2d(points)
    d = points.shape[1]
    if d >= 3:
        step = float(np.min(f.step() if fd_step is None else np.atleast_1d(fd_step)))
        try:
            dsig = exterior_derivative(member, points, step)
            worst = float(np.max(np.abs(dsig))) if dsig.size else 0.0
        except DomainError:
            worst = 0.0
        if worst > closed_tol:
            warnings.warn(f"form is not closed (|d sigma| up to {worst:.3g}); "
                          "the Jacobi identity need not hold", RuntimeWarning, stacklevel=2)
    pb = lambda a, b: poisson_bracket(member, a, b, fd_step)
    total = pb(f, pb(g, h))(points) + pb(g, pb(h, f))(points) + pb(h, pb(f, g))(points)
    return float(np.max(np.abs(total)))


# ---------------------------------------------------------------- geodesics

@dataclass
class GeodesicProblem:
    """Geodesics of an eps-family of mollified metrics on ``base x [-vmax, vmax]^n``."""

    metric: object          # forms.MetricFamily
    vmax: float = 1.0
    floor: float = 1e-8
    min_eig: list = field(default_factory=list)

    def __post_init__(self):
        self.n = self.metric.n
        base = self.metric.base
        self.phase = BoxDomain(base.lo + (-self.vmax,) * self.n, base.hi + (self.vmax,) * self.n,
                               base.grid + base.grid)

    @property
    def ladder(self):
        return self.metric.ladder

    def _index(self, eps_or_index):
        if isinstance(eps_or_index, (int, np.integer)):
            return int(eps_or_index)
        return self.ladder.index_of(float(eps_or_index))

    def metric_at(self, k, x):
        g = self.metric.metric(k, x)
        if not np.allclose(g, np.swapaxes(g, -1, -2), rtol=1e-12, atol=1e-14):
            raise ValidationError("metric is not symmetric")
        lam = np.linalg.eigvalsh(g)[:, 0]
        if np.any(lam < self.floor):
            raise NumericalError("metric degenerates", {"min_eig": float(lam.min())})
        return g

    def christoffel(self, k, x):
        """``Gamma[p, j, k, l]`` from central differences of the mollified metric."""
        x = np.atleast_2d(x)
        g = self.metric_at(k, x)
        dg = self.metric.gradient(k, x)                   # (P, a, i, j) = d_a g_ij
        ginv = np.linalg.inv(g)
        # lower[m, k, l] = d_k g_ml + d_l g_mk - d_m g_kl
        lower = (np.einsum("pkml->pmkl", dg) + np.einsum("plmk->pmkl", dg)
                 - np.einsum("pmkl->pmkl", dg))
        return 0.5 * np.einsum("pjm,pmkl->pjkl", ginv, lower)

    def spray(self, k, state):
        single, z = _pts(state)
        n = self.n
        x, v = z[:, :n], z[:, n:]
        gam = self.christoffel(k, x)
        acc = -np.einsum("pjkl,pk,pl->pj", gam, v, v)
        out = np.concatenate([v, acc], axis=1)
        return out[0] if single else out

    def energy(self, k, state):
        single, z = _pts(state)
        n = self.n
        g = self.metric_at(k, z[:, :n])
        v = z[:, n:]
        out = 0.5 * np.einsum("pi,pij,pj->p", v, g, v)
        return out[0] if single else out

    def energy_field(self, k):
        """``E = v^T g v / 2`` with its gradient from the same metric differences."""
        n = self.n

        def grad(z):
            x, v = z[:, :n], z[:, n:]
            g = self.metric_at(k, x)
            dg = self.metric.gradient(k, x)
            gx = 0.5 * np.einsum("pi,paij,pj->pa", v, dg, v)
            return np.concatenate([gx, np.einsum("pij,pj->pi", g, v)], axis=1)

        return ScalarField(self.phase, lambda z: self.energy(k, z), grad, "energy")


def geodesic_spray(prob, eps, state):
    """``G = v . d_x - Gamma^j_kl v_k v_l d_v_j`` for the member at ``eps`` (value or index)."""
    return prob.spray(prob._index(eps), state)


@dataclass
class GeodesicTable:
    times: np.ndarray
    eps: list
    trajectories: list          # per eps: (T, S, 2n)
    energy_drift: list          # per eps: max relative drift over states
    stopped: list               # per eps: bool per state
    cross_eps: list             # sup distance between consecutive eps members

    def to_dict(self):
        return {
            "times": self.times.tolist(),
            "eps": list(self.eps),
            "energy_drift": [float(x) for x in self.energy_drift],
            "stopped": [s.tolist() for s in self.stopped],
            "cross_eps_sup_distance": [float(x) for x in self.cross_eps],
        }


def geodesic_flow_compare(prob, states, t_end, step=1e-3, samples=21, tol=1e-8, indices=None):
    """Integrate the spray per eps and tabulate trajectories and cross-eps differences.

    Trajectories that leave the phase box are frozen and flagged.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if not np.all(prob.phase.contains(states)):
        raise ValidationError("initial states must lie in the phase box")
    times = np.linspace(0.0, t_end, samples)
    idx = range(len(prob.ladder)) if indices is None else indices
    trajs, drifts, stopped, eps = [], [], [], []
    for k in idx:
        Y = VectorFieldT(prob.phase, lambda t, z, k=k: prob.spray(k, z), "spray")
        fr = flow(Y, states, 0.0, t_end, step, jacobian=False, tol=tol, snapshots=tuple(times),
                  stop_outside=prob.phase)
        keys = sorted(fr.snapshots)
        traj = np.stack([fr.snapshots[t][0] for t in keys])
        E0 = prob.energy(k, states)
        E = np.stack([prob.energy(k, traj[i]) for i in range(len(keys))])
        scale = np.where(np.abs(E0) > 0, np.abs(E0), 1.0)
        drifts.append(float(np.max(np.abs(E - E0) / scale)))
        trajs.append(traj)
        stopped.append(fr.stopped)
        eps.append(prob.ladder.values[k])
    cross = [float(np.max(np.abs(a - b))) for a, b in zip(trajs, trajs[1:])]
    return GeodesicTable(times, eps, trajs, drifts, stopped, cross)
