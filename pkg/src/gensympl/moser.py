"""Certification of eps-families of 2-forms and Darboux charts by the Moser isotopy.

All fields here are written in coordinates centred at the chart centre ``p``
(``z = q - p``).  For one member ``sigma`` with ``beta = sigma(p)``:

* ``mu_t = sigma + t (beta - sigma)``
* ``alpha(z) . v = int_0^1 s z^T (beta - sigma)(s z) v ds`` so that ``d alpha = beta - sigma``
* ``mu_t(X_t, .) = -alpha`` and ``Y_t = plateau * X_t``
* ``theta_{1,0}`` is the time-one flow of ``Y``; then ``theta^* beta = sigma``
* ``Phi(q) = L^{-1} theta_{1,0}(q - p)`` with ``L^T beta L = j_can``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np
from numba import njit
from scipy import ndimage

from .epsnum import EpsLadder, EpsScalarFamily, estimate_order
from .errors import CertificationError, DomainError, NumericalError, ValidationError
from .forms import (BoxDomain, NumericDiffeo, OneFormField, TwoFormField, VectorFieldT,
                    exterior_derivative, heaviside)
from .symplin import eig_magnitudes, is_skew, j_can, opnorm, symplectic_basis

log = logging.getLogger(__name__)

SAFETY = 0.99
# eigen-bounds whose power-law exponent on the small-eps half of the ladder
# exceeds this in magnitude are treated as degenerating
DRIFT_EXPONENT = 0.25
DEGENERACY_RATIO = 1e-10


# ------------------------------------------------------------- norms

def norm_and_inv_norm(M):
    """Batched ``(||M||_op, ||M^-1||_op)``; ``inf`` for singular matrices."""
    M = np.asarray(M, dtype=float)
    if M.shape[-2:] == (2, 2):
        smax = opnorm(M)
        det = np.abs(M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0])
        smin = np.divide(det, smax, out=np.zeros_like(det), where=smax > 0)
    else:
        s = np.linalg.svd(M, compute_uv=False)
        smax, smin = s[..., 0], s[..., -1]
    with np.errstate(divide="ignore"):
        inv = np.where(smin > 0, 1.0 / np.where(smin > 0, smin, 1.0), np.inf)
    return smax, inv


def _eig_range(Om):
    """Per-point (min, max) of A(Om) for skew matrices (singular values)."""
    if Om.shape[-2:] == (2, 2):
        a = np.abs(Om[..., 0, 1])
        return a, a
    s = np.linalg.svd(Om, compute_uv=False)
    return s[..., -1], s[..., 0]


# -------------------------------------------------------- certification

@dataclass
class StarCertificate:
    """Two-sided eigen-magnitude bounds and a sampled modulus of continuity.

    ``deltas``/``modulus`` tabulate the running sup of ``||Omega(p) - Omega(q)||``
    over grid pairs with ``|p - q| <= delta`` and all members with eps <= eta.
    """

    K: BoxDomain
    C1: float
    C2: float
    eta: float
    deltas: np.ndarray
    modulus: np.ndarray
    per_eps_min: list
    per_eps_max: list
    per_eps_modulus: list
    eps: list

    def modulus_at(self, delta):
        k = np.searchsorted(self.deltas, delta, side="right") - 1
        return 0.0 if k < 0 else float(self.modulus[k])

    def to_dict(self):
        return {
            "K": self.K.to_dict(),
            "C1": self.C1,
            "C2": self.C2,
            "eta": self.eta,
            "eps": list(self.eps),
            "per_eps_min": list(self.per_eps_min),
            "per_eps_max": list(self.per_eps_max),
            "modulus": {"delta": self.deltas.tolist(), "value": self.modulus.tolist()},
        }


def _shift_directions(d):
    dirs = [tuple(int(i == a) for i in range(d)) for a in range(d)]
    for a in range(d):
        for b in range(a + 1, d):
            for sb in (1, -1):
                v = [0] * d
                v[a], v[b] = 1, sb
                dirs.append(tuple(v))
    return dirs


def _shift_slices(shape, vec):
    src, dst = [], []
    for n, s in zip(shape, vec):
        if s >= 0:
            src.append(slice(0, n - s))
            dst.append(slice(s, n))
        else:
            src.append(slice(-s, n))
            dst.append(slice(0, n + s))
    return tuple(src), tuple(dst)


def _modulus_table(values, spacing, shifts):
    """Sup of ||Om[i + s] - Om[i]|| for each shift vector; returns (deltas, sups)."""
    shape = values.shape[:-2]
    deltas, sups = [], []
    for k in shifts:
        for direc in _shift_directions(len(shape)):
            vec = [k * c for c in direc]
            if any(abs(v) >= n for v, n in zip(vec, shape)):
                continue
            src, dst = _shift_slices(shape, vec)
            diff = values[dst] - values[src]
            sups.append(float(np.max(opnorm(diff))) if diff.size else 0.0)
            deltas.append(float(np.linalg.norm(np.asarray(vec) * spacing)))
    order = np.argsort(deltas, kind="stable")
    deltas = np.asarray(deltas)[order]
    sups = np.maximum.accumulate(np.asarray(sups)[order])
    # mirrored directions share a length; keep one entry (the running max) per delta
    last = np.r_[np.diff(deltas) > 1e-12 * deltas[-1], True]
    return deltas[last], sups[last]


def check_star(sigma, K=None, k_points=None, shift_count=48):
    """Certify the two-sided bound on A(Omega^eps) and tabulate equicontinuity.

    Raises :class:`CertificationError` when the per-eps minima decay or the
    maxima blow up along the ladder (tail-half log-log slope beyond
    +-DRIFT_EXPONENT), or when a member is numerically degenerate on ``K``.
    """
    K = sigma.domain if K is None else K
    if k_points is not None:
        K = K.with_grid((k_points,) * K.dim)
    elif K is sigma.domain and K.dim == 2 and max(K.grid) < 201:
        K = K.with_grid((201, 201))
    pts = K.points()
    shape = tuple(K.grid)
    n_max_shift = max(shape) - 1
    shifts = np.unique(np.round(np.geomspace(1, n_max_shift, shift_count)).astype(int))

    mins, maxs, mods = [], [], []
    table = None
    for e, member in sigma:
        Om = member(pts)
        if not is_skew(Om):
            raise ValidationError(f"member eps={e:g} is not skew on K; run skew_symmetrize first")
        lo, hi = _eig_range(Om)
        mins.append(float(lo.min()))
        maxs.append(float(hi.max()))
        if mins[-1] <= 0:
            raise CertificationError(f"member eps={e:g} is singular on K",
                                     {"eps": e, "per_eps_min": mins})
        deltas, sups = _modulus_table(Om.reshape(shape + Om.shape[-2:]), K.spacing, shifts)
        mods.append(sups)
        table = sups if table is None else np.maximum(table, sups)

    ladder = sigma.ladder
    details = {"eps": list(ladder.values), "per_eps_min": mins, "per_eps_max": maxs}
    n = len(ladder)
    tail = slice(n - max(2, (n + 1) // 2), n)
    le = np.log(ladder.array[tail])
    emin = float(np.polyfit(le, np.log(np.asarray(mins)[tail]), 1)[0])
    emax = float(np.polyfit(le, np.log(np.asarray(maxs)[tail]), 1)[0])
    details["min_exponent"] = emin
    details["max_exponent"] = emax
    if emin > DRIFT_EXPONENT:
        raise CertificationError("min A(Omega^eps) decays along the ladder; no uniform C1", details)
    if emax < -DRIFT_EXPONENT:
        raise CertificationError("max A(Omega^eps) grows along the ladder; no uniform C2", details)
    if min(mins) < DEGENERACY_RATIO * max(maxs):
        raise CertificationError("form is numerically degenerate on K", details)

    return StarCertificate(K, SAFETY * min(mins), max(maxs) / SAFETY, float(ladder.values[0]),
                           deltas, table, mins, maxs, mods, list(ladder.values))


@dataclass
class StarStarConstants:
    R: float
    eps0: float
    D: float
    sweep_max_inv: float
    sweep_max_norm: float
    sweep_shape: tuple

    def to_dict(self):
        return asdict(self)


def _ball_grid(radius, d, per_axis, max_total=200_000):
    per_axis = int(per_axis)
    if per_axis ** d > max_total:
        per_axis = max(3, int(max_total ** (1.0 / d)))
    if per_axis % 2 == 0:
        per_axis += 1
    ax = np.linspace(-radius, radius, per_axis)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    keep = np.linalg.norm(pts, axis=1) <= radius * (1 + 1e-12)
    return pts[keep], per_axis


def derive_starstar(cert, sigma, center, t_nodes=11, sweep_points=41):
    """Radius ``R`` and bound ``D = max(2 C2, 2 / C1)`` for the interpolants.

    ``R`` is the largest tabulated delta whose modulus stays within C1/2,
    capped by the distance from ``center`` to the boundary of K.  The
    bounds on ``mu_t`` and its inverse are then re-checked on a sweep.
    """
    p = np.asarray(center, dtype=float)
    if not np.all(cert.K.contains(p)):
        raise ValidationError("centre lies outside the certified box")
    ok = cert.modulus <= cert.C1 / 2
    if not ok[0]:
        raise CertificationError(
            "modulus exceeds C1/2 at the smallest sampled delta; refine the K grid or shrink K",
            {"delta_min": float(cert.deltas[0]), "modulus": float(cert.modulus[0]), "C1": cert.C1})
    last = int(np.argmin(ok)) - 1 if not ok.all() else len(ok) - 1
    R = min(float(cert.deltas[last]), cert.K.distance_to_boundary(p))
    if R <= 0:
        raise CertificationError("centre lies on the boundary of K", {"R": R})
    D = max(2 * cert.C2, 2 / cert.C1)

    pts, per_axis = _ball_grid(R, cert.K.dim, sweep_points)
    ts = np.linspace(0.0, 1.0, t_nodes)
    max_inv = max_norm = 0.0
    for e, member in sigma:
        if e > cert.eta:
            continue
        Om = member(p + pts)
        beta = member(p)
        for t in ts:
            nrm, inv = norm_and_inv_norm(Om + t * (beta - Om))
            max_inv = max(max_inv, float(inv.max()))
            max_norm = max(max_norm, float(nrm.max()))
    if max_inv > D or max_norm > D:
        raise CertificationError("sweep violates the derived bound D",
                                 {"D": D, "max_inv": max_inv, "max_norm": max_norm, "R": R})
    return StarStarConstants(R, cert.eta, D, max_inv, max_norm, (t_nodes, len(pts), len(sigma)))


# ---------------------------------------------------- Moser ingredients

def interpolant(member, beta, t):
    """``mu_t = (1 - t) sigma + t beta`` (``beta`` a constant matrix)."""
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"t={t} outside [0, 1]")
    beta = np.asarray(beta, dtype=float)
    return TwoFormField(member.domain, lambda q: (1.0 - t) * member.rule(q) + t * beta,
                        f"mu_{t:g}")


def gauss_legendre01(order):
    x, w = np.polynomial.legendre.leggauss(int(order))
    return 0.5 * (x + 1.0), 0.5 * w


def poincare_primitive(delta_form, q, quad_order=16):
    """Covector ``alpha(q)`` with ``alpha(q) . v = int_0^1 s q^T delta(s q) v ds``.

    ``delta_form`` must be defined on the segment from 0 to ``q``.
    """
    single = np.ndim(q) == 1
    q = np.atleast_2d(np.asarray(q, dtype=float))
    nodes, weights = gauss_legendre01(quad_order)
    seg = (nodes[:, None, None] * q[None]).reshape(-1, q.shape[1])
    if not np.all(delta_form.domain.contains(seg, 1e-12)):
        raise DomainError("segment to the origin leaves the domain of the form")
    vals = np.asarray(delta_form.rule(seg)).reshape(len(nodes), len(q), q.shape[1], q.shape[1])
    out = np.einsum("k,kpij,pi->pj", weights * nodes, vals, q)
    return out[0] if single else out


def primitive_field(delta_form, quad_order=16):
    return OneFormField(delta_form.domain, lambda q: poincare_primitive(delta_form, q, quad_order),
                        "alpha")


def _solve_transposed(Om, rhs):
    """Solve ``Om^T X = rhs`` pointwise (closed form for 2x2)."""
    if Om.shape[-2:] == (2, 2):
        a, b = Om[:, 0, 0], Om[:, 1, 0]     # rows of Om^T
        c, d = Om[:, 0, 1], Om[:, 1, 1]
        det = a * d - b * c
        return np.stack([(d * rhs[:, 0] - b * rhs[:, 1]) / det,
                         (-c * rhs[:, 0] + a * rhs[:, 1]) / det], axis=-1)
    return np.linalg.solve(np.swapaxes(Om, -1, -2), rhs[..., None])[..., 0]


def moser_field(mu, alpha, q, rtol=1e-12):
    """``X`` with ``mu(X, .) = -alpha`` at ``q``.

    Raises :class:`NumericalError` (carrying ``||mu^-1||``) when the solve
    fails or its residual exceeds ``rtol * ||alpha||``.
    """
    single = np.ndim(q) == 1
    q = np.atleast_2d(np.asarray(q, dtype=float))
    Om = np.asarray(mu.rule(q))
    a = np.asarray(alpha.rule(q)) if hasattr(alpha, "rule") else np.atleast_2d(alpha)
    _, inv = norm_and_inv_norm(Om)
    try:
        X = np.linalg.solve(np.swapaxes(Om, -1, -2), -a[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NumericalError("mu_t is singular", {"inv_norm": float(np.max(inv))}) from exc
    res = np.linalg.norm(np.einsum("pij,pi->pj", Om, X) + a, axis=-1)
    scale = np.linalg.norm(a, axis=-1)
    if not np.all(np.isfinite(X)) or np.any(res > rtol * np.maximum(scale, 1e-300) + 1e-300):
        raise NumericalError("Moser solve inaccurate", {"inv_norm": float(np.max(inv)),
                                                        "residual": float(np.max(res))})
    return X[0] if single else X


def _smoothstep7(s):
    # C^3 transition from 1 at s=0 to 0 at s=1
    s = np.clip(s, 0.0, 1.0)
    return 1.0 - s ** 4 * (35.0 - 84.0 * s + 70.0 * s ** 2 - 20.0 * s ** 3)


class Plateau:
    """Radial cutoff: 1 on ``B_inner``, 0 outside ``B_{(inner+outer)/2}``."""

    def __init__(self, inner, outer):
        if not 0 < inner < outer:
            raise ValidationError(f"plateau needs 0 < inner < outer, got {inner}, {outer}")
        self.inner = float(inner)
        self.outer = float(outer)
        self.cut = 0.5 * (inner + outer)

    def __call__(self, q):
        r = np.linalg.norm(np.atleast_1d(np.asarray(q, dtype=float)), axis=-1)
        return _smoothstep7((r - self.inner) / (self.cut - self.inner))


def plateau(inner, outer):
    return Plateau(inner, outer)


# ----------------------------------------------------------------- flow

@dataclass
class FlowResult:
    times: np.ndarray
    points: np.ndarray
    jacobian: np.ndarray | None
    snapshots: dict
    max_radius: float
    step: float
    halvings: int
    stopped: np.ndarray
    stop_time: np.ndarray
    monitor_error: float


def _joint_rhs(Y, t, z, J, fd):
    joint = getattr(Y, "joint", None)
    if joint is not None:
        return joint(t, z, J)
    P, d = z.shape
    if J is None:
        return Y(t, z), None
    eye = np.eye(d) * fd
    pts = np.concatenate([z[None], z[None] + eye[:, None, :], z[None] - eye[:, None, :]], axis=0)
    vals = np.asarray(Y.rule(t, pts.reshape(-1, d))).reshape(2 * d + 1, P, d)
    DY = np.moveaxis((vals[1:d + 1] - vals[d + 1:]) / (2 * fd), 0, -1)  # (P, i, a) = d_a Y_i
    return vals[0], DY @ J


def _rk4(Y, t, z, J, h, fd):
    k1, l1 = _joint_rhs(Y, t, z, J, fd)
    k2, l2 = _joint_rhs(Y, t + h / 2, z + h / 2 * k1, None if J is None else J + h / 2 * l1, fd)
    k3, l3 = _joint_rhs(Y, t + h / 2, z + h / 2 * k2, None if J is None else J + h / 2 * l2, fd)
    k4, l4 = _joint_rhs(Y, t + h, z + h * k3, None if J is None else J + h * l3, fd)
    zn = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    Jn = None if J is None else J + h / 6 * (l1 + 2 * l2 + 2 * l3 + l4)
    return zn, Jn


def _rk4_plain(Y, t, z, h):
    return _rk4(Y, t, z, None, h, None)[0]


def flow(Y, q0, s=0.0, t_end=1.0, step=1e-3, *, jacobian=True, fd_step=1e-6, tol=1e-8,
         monitor_every=10, monitor_points=256, snapshots=(), stop_outside=None,
         max_halvings=20):
    """Fixed-step RK4 for ``dz/dt = Y(t, z)``, ``z(s) = q0``, optionally with ``dJ/dt = DY J``.

    Every ``monitor_every`` steps a step-doubling estimate on a subsample of
    at most ``monitor_points`` trajectories is compared with ``tol``; on
    failure the whole integration restarts with half the step (at most
    ``max_halvings`` times).  ``snapshots`` lists times at which states are
    stored (rounded to the step grid).  With ``stop_outside`` (a BoxDomain)
    trajectories are frozen at the first step that leaves the box.
    """
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    if step <= 0:
        raise ValidationError("flow step must be positive")
    span = float(t_end) - float(s)
    for halvings in range(max_halvings + 1):
        h_nom = step / 2 ** halvings
        n = max(1, int(math.ceil(abs(span) / h_nom - 1e-9))) if span != 0 else 0
        h = span / n if n else 0.0
        snap_idx = {}
        for ts in snapshots:
            if (ts - s) * (ts - t_end) > 1e-14:
                continue
            snap_idx.setdefault(int(round((ts - s) / h)) if h else 0, []).append(ts)
        result = _integrate(Y, q0, s, h, n, jacobian, fd_step, tol, monitor_every,
                            monitor_points, snap_idx, stop_outside)
        if result is not None:
            z, J, snaps, rmax, stopped, stop_time, merr = result
            return FlowResult(np.array([s + h * n]), z, J, snaps, rmax, abs(h), halvings,
                              stopped, stop_time, merr)
        log.info("flow: step-doubling estimate above %.3g, halving step to %.3g", tol, h_nom / 2)
    raise NumericalError("flow step rejected after repeated halving",
                         {"halvings": max_halvings, "tol": tol})


def _integrate(Y, q0, s, h, n, jacobian, fd, tol, monitor_every, monitor_points, snap_idx,
               stop_outside):
    P, d = q0.shape
    z = q0.copy()
    J = np.broadcast_to(np.eye(d), (P, d, d)).copy() if jacobian else None
    active = np.ones(P, dtype=bool)
    stop_time = np.full(P, np.nan)
    sub = np.unique(np.linspace(0, P - 1, min(P, monitor_points)).astype(int))
    snaps = {}
    rmax = float(np.max(np.linalg.norm(z, axis=1))) if P else 0.0
    merr = 0.0

    def record(k):
        # keyed by the grid time actually reached
        if k in snap_idx:
            snaps[s + k * h] = (z.copy(), None if J is None else J.copy())

    record(0)
    for k in range(n):
        t = s + k * h
        if monitor_every and k % monitor_every == 0 and h != 0:
            zs = z[sub][active[sub]]
            if len(zs):
                big = _rk4_plain(Y, t, zs, 2 * h)
                half = _rk4_plain(Y, t + h, _rk4_plain(Y, t, zs, h), h)
                err = float(np.max(np.abs(big - half))) / 15.0
                merr = max(merr, err)
                if err > tol:
                    return None
        if active.all():
            z, J = _rk4(Y, t, z, J, h, fd)
        else:
            idx = np.flatnonzero(active)
            zn, Jn = _rk4(Y, t, z[idx], None if J is None else J[idx], h, fd)
            z[idx] = zn
            if J is not None:
                J[idx] = Jn
        if stop_outside is not None:
            out = active & ~stop_outside.contains(z)
            if out.any():
                stop_time[out] = t + h
                active &= ~out
        rmax = max(rmax, float(np.max(np.linalg.norm(z, axis=1))))
        record(k + 1)
        if not active.any():
            break
    for k in snap_idx:
        # trajectories frozen after an early stop keep their last state
        snaps.setdefault(s + k * h, (z.copy(), None if J is None else J.copy()))
    return z, J, snaps, rmax, ~active, stop_time, merr


# ------------------------------------------------ tabulated evaluation

@njit(cache=True, error_model="numpy")
def _bspline_weights(u, n):
    if u < 0.0:
        u = 0.0
    elif u > n - 1:
        u = float(n - 1)
    i = int(math.floor(u))
    if i > n - 2:
        i = n - 2
    f = u - i
    f2 = f * f
    f3 = f2 * f
    w0 = (1.0 - f) ** 3 / 6.0
    w1 = (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0
    w2 = (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0
    w3 = f3 / 6.0
    return i, w0, w1, w2, w3


@njit(cache=True, error_model="numpy")
def _mirror(i, n):
    if i < 0:
        return -i
    if i > n - 1:
        return 2 * (n - 1) - i
    return i


@njit(cache=True, error_model="numpy")
def _bspline2d(coef, lo0, lo1, h0, h1, pts, out):
    C, N0, N1 = coef.shape
    wa = np.empty(4)
    wb = np.empty(4)
    ia = np.empty(4, dtype=np.int64)
    ib = np.empty(4, dtype=np.int64)
    for p in range(pts.shape[0]):
        i, wa[0], wa[1], wa[2], wa[3] = _bspline_weights((pts[p, 0] - lo0) / h0, N0)
        j, wb[0], wb[1], wb[2], wb[3] = _bspline_weights((pts[p, 1] - lo1) / h1, N1)
        for a in range(4):
            ia[a] = _mirror(i - 1 + a, N0)
            ib[a] = _mirror(j - 1 + a, N1)
        for c in range(C):
            acc = 0.0
            for a in range(4):
                row = 0.0
                for b in range(4):
                    row += wb[b] * coef[c, ia[a], ib[b]]
                acc += wa[a] * row
            out[p, c] = acc


@njit(cache=True, error_model="numpy")
def _moser_point(coef, lo0, lo1, h0, h1, b01, t, r_in, r_cut, x, y, out, k):
    # Y = plateau * X with mu^T X = -alpha, mu = [[0, m], [-m, 0]]
    r = math.sqrt(x * x + y * y)
    if r >= r_cut:
        out[k, 0] = 0.0
        out[k, 1] = 0.0
        return
    s = (r - r_in) / (r_cut - r_in)
    phi = 1.0
    if s > 0.0:
        phi = 1.0 - s ** 4 * (35.0 - 84.0 * s + 70.0 * s * s - 20.0 * s ** 3)
    N0 = coef.shape[1]
    N1 = coef.shape[2]
    i, a0, a1, a2, a3 = _bspline_weights((x - lo0) / h0, N0)
    j, c0, c1, c2, c3 = _bspline_weights((y - lo1) / h1, N1)
    wa = (a0, a1, a2, a3)
    wb = (c0, c1, c2, c3)
    v0 = 0.0
    v1 = 0.0
    v2 = 0.0
    for a in range(4):
        ia = _mirror(i - 1 + a, N0)
        r0 = 0.0
        r1 = 0.0
        r2 = 0.0
        for b in range(4):
            jb = _mirror(j - 1 + b, N1)
            r0 += wb[b] * coef[0, ia, jb]
            r1 += wb[b] * coef[1, ia, jb]
            r2 += wb[b] * coef[2, ia, jb]
        v0 += wa[a] * r0
        v1 += wa[a] * r1
        v2 += wa[a] * r2
    m = v0 + t * (b01 - v0)
    out[k, 0] = -phi * v2 / m
    out[k, 1] = phi * v1 / m


@njit(cache=True, error_model="numpy")
def _moser_rhs2d(coef, lo0, lo1, h0, h1, b01, t, r_in, r_cut, fd, z, J, want_jac, outY, outJ):
    st = np.empty((5, 2))
    for p in range(z.shape[0]):
        x = z[p, 0]
        y = z[p, 1]
        _moser_point(coef, lo0, lo1, h0, h1, b01, t, r_in, r_cut, x, y, outY, p)
        if not want_jac:
            continue
        _moser_point(coef, lo0, lo1, h0, h1, b01, t, r_in, r_cut, x + fd, y, st, 1)
        _moser_point(coef, lo0, lo1, h0, h1, b01, t, r_in, r_cut, x - fd, y, st, 2)
        _moser_point(coef, lo0, lo1, h0, h1, b01, t, r_in, r_cut, x, y + fd, st, 3)
        _moser_point(coef, lo0, lo1, h0, h1, b01, t, r_in, r_cut, x, y - fd, st, 4)
        for i in range(2):
            dx = (st[1, i] - st[2, i]) / (2.0 * fd)
            dy = (st[3, i] - st[4, i]) / (2.0 * fd)
            for c in range(2):
                outJ[p, i, c] = dx * J[p, 0, c] + dy * J[p, 1, c]


class SplineTable2D:
    """Cubic B-spline interpolant of several scalar components on a 2-D grid.

    Points outside the box are clamped to it.
    """

    def __init__(self, box, values):
        # values: (N0, N1, C)
        self.box = box
        self.lo = box.lo_arr
        self.h = box.spacing
        comps = np.moveaxis(np.asarray(values, dtype=float), -1, 0)
        self.coef = np.ascontiguousarray(
            np.stack([ndimage.spline_filter(c, order=3, mode="mirror") for c in comps]))

    def __call__(self, pts):
        pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=float)
        out = np.empty((len(pts), self.coef.shape[0]))
        _bspline2d(self.coef, self.lo[0], self.lo[1], self.h[0], self.h[1], pts, out)
        return out


def _upper(d):
    return np.triu_indices(d, 1)


def _from_upper(vals, d):
    iu = _upper(d)
    Om = np.zeros((len(vals), d, d))
    Om[:, iu[0], iu[1]] = vals
    Om[:, iu[1], iu[0]] = -vals
    return Om


class CentredMember:
    """Member and primitive in centred coordinates, evaluated directly or from a table."""

    def __init__(self, member, center, R, quad_order, mode="direct", table_points=129):
        self.member = member
        self.p = np.asarray(center, dtype=float)
        self.d = len(self.p)
        self.beta = np.asarray(member(self.p), dtype=float)
        self.quad_order = quad_order
        box = BoxDomain(tuple(-R * np.ones(self.d)), tuple(R * np.ones(self.d)), (table_points,) * self.d)
        self.box = box
        sig = TwoFormField(member.domain.shifted(-self.p), lambda z: member.rule(z + self.p))
        beta = self.beta
        self.delta = TwoFormField(sig.domain, lambda z: beta - sig.rule(z), "beta-sigma")
        self.sig = sig
        self.mode = mode
        self.table = None
        if mode == "table":
            if self.d != 2:
                raise ValidationError("tabulated evaluation is implemented for d = 2")
            pts = box.points()
            iu = _upper(self.d)
            comp = sig.rule(pts)[:, iu[0], iu[1]]
            alpha = poincare_primitive(self.delta, pts, quad_order)
            vals = np.concatenate([comp, alpha], axis=1).reshape(tuple(box.grid) + (-1,))
            self.table = SplineTable2D(box, vals)
            self.ncomp = comp.shape[1]

    def sigma_alpha(self, z):
        if self.table is not None:
            v = self.table(z)
            return _from_upper(v[:, :self.ncomp], self.d), v[:, self.ncomp:]
        return self.sig.rule(z), poincare_primitive(self.delta, z, self.quad_order)

    def alpha(self, z):
        return self.sigma_alpha(z)[1]

    def fused(self, cutoff, fd):
        """Compiled ``(t, z, J) -> (Y, DY J)`` for the tabulated 2-D case, else None."""
        if self.table is None or self.d != 2:
            return None
        tab = self.table
        b01 = float(self.beta[0, 1])

        def joint(t, z, J):
            z = np.ascontiguousarray(z)
            outY = np.empty_like(z)
            want = J is not None
            Jc = np.ascontiguousarray(J) if want else np.zeros((1, 2, 2))
            outJ = np.empty_like(Jc)
            _moser_rhs2d(tab.coef, tab.lo[0], tab.lo[1], tab.h[0], tab.h[1], b01, float(t),
                         cutoff.inner, cutoff.cut, fd, z, Jc, want, outY, outJ)
            return outY, (outJ if want else None)

        return joint

    def moser_rule(self, cutoff):
        beta = self.beta

        def rule(t, z):
            z = np.atleast_2d(z)
            phi = cutoff(z)
            out = np.zeros_like(z)
            live = phi > 0
            if not live.any():
                return out
            sig, al = self.sigma_alpha(z[live])
            mu = sig + t * (beta - sig)
            out[live] = phi[live, None] * _solve_transposed(mu, -al)
            return out

        return rule


# --------------------------------------------------------- pipeline

@dataclass
class DarbouxConfig:
    step: float = 1e-3
    quad_order: int = 16
    flow_tol: float = 1e-8
    quad_tol: float = 1e-6
    interp_tol: float = 1e-10
    verify_points: int = 101
    uniform_L: bool = False
    mode: str = "auto"
    table_points: int = 129
    fd_rel: float = 1e-4
    monitor_every: int = 10
    max_shrink: int = 5
    k_points: int | None = None
    sweep_points: int = 41
    t_nodes: int = 11
    inverse_points: int = 200
    conservation_times: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    conservation_dt: float = 0.01
    eps_indices: tuple | None = None

    def __post_init__(self):
        bad = [k for k in ("step", "flow_tol", "quad_tol", "interp_tol", "fd_rel", "conservation_dt")
               if not getattr(self, k) > 0]
        if self.quad_order < 1:
            bad.append("quad_order")
        if self.verify_points < 3:
            bad.append("verify_points")
        if self.mode not in ("auto", "table", "direct"):
            bad.append("mode")
        if bad:
            raise ValidationError(f"invalid pipeline settings: {bad}", [f"{k}: invalid" for k in bad])

    def to_dict(self):
        d = asdict(self)
        d["conservation_times"] = list(self.conservation_times)
        d["eps_indices"] = None if self.eps_indices is None else list(self.eps_indices)
        return d


@dataclass
class PullbackCheck:
    sup_error: float
    residual: np.ndarray
    points: np.ndarray


def verify_pullback(phi, member, points, target=None):
    """Sup over ``points`` of ``||(Phi^* target)(q) - sigma(q)||_op`` (target defaults to j_can)."""
    points = np.atleast_2d(points)
    d = points.shape[1]
    target = j_can(d // 2) if target is None else np.asarray(target)
    if phi.samples is not None and phi.samples[0].shape == points.shape and \
            np.array_equal(phi.samples[0], points):
        Dphi = phi.samples[2]
    else:
        Dphi = phi.jac(points)
    pulled = np.swapaxes(Dphi, -1, -2) @ target @ Dphi
    res = opnorm(pulled - member(points))
    return PullbackCheck(float(np.max(res)) if len(res) else 0.0, res, points)


@dataclass
class EpsRun:
    eps: float
    pullback_error: float
    R_inner: float
    shrinks: int
    step: float
    halvings: int
    max_radius: float
    inverse_error: float
    min_det: float
    conservation: float
    conservation_bound: float
    poincare_defect: float
    origin_drift: float
    alpha_origin: float
    monitor_error: float
    points: int
    seconds: float

    def to_dict(self):
        return asdict(self)


@dataclass
class DarbouxReport:
    constants: dict
    runs: list
    error_verdict: object
    config: dict
    fixture: dict | None = None

    @property
    def errors(self):
        return [r.pullback_error for r in self.runs]

    def to_dict(self):
        return {
            "constants": self.constants,
            "per_eps": [r.to_dict() for r in self.runs],
            "error_order": None if self.error_verdict is None else self.error_verdict.to_dict(),
            "config": self.config,
            "fixture": self.fixture,
        }


@dataclass
class DarbouxResult:
    maps: list
    report: DarbouxReport
    certificate: StarCertificate
    starstar: StarStarConstants
    samples: list = field(default_factory=list)


def _phi_map(cm, Y, Linv, config, R_outer, fd):
    p = cm.p

    def run(q, t0, t1):
        return flow(Y, q, t0, t1, config.step, fd_step=fd, tol=config.flow_tol,
                    monitor_every=config.monitor_every)

    def forward(q):
        return run(np.atleast_2d(q) - p, 0.0, 1.0).points @ Linv.T

    def jac(q):
        return Linv @ run(np.atleast_2d(q) - p, 0.0, 1.0).jacobian

    def inverse(y):
        L = np.linalg.inv(Linv)
        return run(np.atleast_2d(y) @ L.T, 1.0, 0.0).points + p

    dom = BoxDomain(tuple(p - R_outer), tuple(p + R_outer), (3,) * len(p))
    return NumericDiffeo(forward, jac, inverse, dom, None, name="darboux")


def _conservation(cm, fr, pts, config):
    """Max finite-difference t-derivative of ``theta_t^* mu_t`` over the requested nodes."""
    beta = cm.beta
    dt = max(config.conservation_dt, config.step)

    def pulled(t):
        z, J = fr.snapshots[t]
        sig = cm.sig.rule(z)
        mu = sig + t * (beta - sig)
        return np.swapaxes(J, -1, -2) @ mu @ J

    worst = 0.0
    for t in config.conservation_times:
        lo = _snap_key(fr, max(0.0, t - dt))
        hi = _snap_key(fr, min(1.0, t + dt))
        if hi <= lo:
            raise NumericalError("conservation stencil collapsed; increase conservation_dt",
                                 {"t": t, "dt": dt, "step": fr.step})
        deriv = (pulled(hi) - pulled(lo)) / (hi - lo)
        worst = max(worst, float(np.max(opnorm(deriv))))
    return worst


def _snap_key(fr, t):
    return min(fr.snapshots, key=lambda k: abs(k - t))


def _snapshot_times(config):
    dt = max(config.conservation_dt, config.step)
    ts = set()
    for t in config.conservation_times:
        ts.update({t, max(0.0, t - dt), min(1.0, t + dt)})
    return sorted(ts)


def _poincare_defect(cm, R, quad_order, count=5):
    """Max ``||d alpha - (beta - sigma)||`` on a few interior points of B_R/2."""
    h = 1e-3 * R
    ax = np.linspace(-0.35 * R, 0.35 * R, count)
    pts = np.stack(np.meshgrid(*([ax] * cm.d), indexing="ij"), -1).reshape(-1, cm.d)
    if len(pts) > 81:
        pts = pts[np.linspace(0, len(pts) - 1, 81).astype(int)]
    alpha = OneFormField(cm.sig.domain, lambda z: poincare_primitive(cm.delta, z, quad_order))
    da = exterior_derivative(alpha, pts, h)
    return float(np.max(opnorm(da - cm.delta.rule(pts))))


def darboux_pipeline(sigma, center, config=None, cert=None, starstar=None):
    """Per-eps Darboux maps ``Phi_eps`` with ``Phi_eps^* j_can ~= sigma_eps`` near ``center``."""
    config = config or DarbouxConfig()
    p = np.asarray(center, dtype=float)
    d = len(p)
    if d != sigma.domain.dim:
        raise ValidationError(f"centre has dimension {d}, form has {sigma.domain.dim}")
    if cert is None:
        cert = check_star(sigma, k_points=config.k_points)
    if starstar is None:
        starstar = derive_starstar(cert, sigma, p, config.t_nodes, config.sweep_points)
    R = starstar.R
    R_outer = 0.9 * R
    mode = config.mode
    if mode == "auto":
        mode = "table" if d == 2 else "direct"
    fd = config.fd_rel * R
    ladder = sigma.ladder
    indices = range(len(ladder)) if config.eps_indices is None else config.eps_indices
    L_uniform = None
    if config.uniform_L:
        L_uniform = symplectic_basis(sigma[len(ladder) - 1](p)).matrix

    maps, runs, samples = [], [], []
    for k in indices:
        e = ladder.values[k]
        tic = time.perf_counter()
        member = sigma[k]
        cm = CentredMember(member, p, R, config.quad_order, mode, config.table_points)
        L = L_uniform if L_uniform is not None else symplectic_basis(cm.beta).matrix
        Linv = np.linalg.inv(L)
        cutoff = Plateau(R_outer, R)
        Y = VectorFieldT(cm.box, cm.moser_rule(cutoff), "Y")
        Y.joint = cm.fused(cutoff, fd)

        R_inner = 0.5 * R_outer
        for shrinks in range(config.max_shrink + 1):
            z0, _ = _ball_grid(R_inner, d, config.verify_points)
            fr = flow(Y, z0, 0.0, 1.0, config.step, fd_step=fd, tol=config.flow_tol,
                      monitor_every=config.monitor_every, snapshots=_snapshot_times(config))
            if fr.max_radius <= R_outer:
                break
            log.info("eps=%g: trajectories leave B_%g (max radius %g); shrinking", e, R_outer,
                     fr.max_radius)
            R_inner *= 0.5
        else:
            raise NumericalError("trajectories keep leaving the plateau region",
                                 {"eps": e, "R_outer": R_outer, "max_radius": fr.max_radius})

        q = z0 + p
        values = fr.points @ Linv.T
        jacs = Linv @ fr.jacobian
        phi = _phi_map(cm, Y, Linv, config, R_outer, fd)
        phi.samples = (q, values, jacs)
        check = verify_pullback(phi, member, q)

        sub = np.unique(np.linspace(0, len(z0) - 1, min(len(z0), config.inverse_points)).astype(int))
        back = flow(Y, fr.points[sub], 1.0, 0.0, config.step, jacobian=False, fd_step=fd,
                    tol=config.flow_tol, monitor_every=config.monitor_every)
        inv_err = float(np.max(np.linalg.norm(back.points - z0[sub], axis=1)))
        origin = int(np.argmin(np.linalg.norm(z0, axis=1)))
        runs.append(EpsRun(
            eps=e,
            pullback_error=check.sup_error,
            R_inner=R_inner,
            shrinks=shrinks,
            step=fr.step,
            halvings=fr.halvings,
            max_radius=fr.max_radius,
            inverse_error=inv_err,
            min_det=float(np.min(np.linalg.det(fr.jacobian))),
            conservation=_conservation(cm, fr, z0, config),
            conservation_bound=10 * (config.flow_tol + config.quad_tol),
            poincare_defect=_poincare_defect(cm, R, config.quad_order),
            origin_drift=float(np.linalg.norm(fr.points[origin] - z0[origin])),
            alpha_origin=float(np.linalg.norm(poincare_primitive(cm.delta, np.zeros(d),
                                                                 config.quad_order))),
            monitor_error=fr.monitor_error,
            points=len(z0),
            seconds=time.perf_counter() - tic,
        ))
        maps.append(phi)
        samples.append({"points": q, "values": values, "jacobians": jacs,
                        "residual": check.residual, "L": L})
        log.info("eps=%g: pullback error %.3g in %.1fs", e, check.sup_error, runs[-1].seconds)

    verdict = None
    if len(runs) >= 4:
        verdict = estimate_order(EpsScalarFamily(EpsLadder(tuple(r.eps for r in runs)),
                                                 [r.pullback_error for r in runs]))
    constants = {"C1": cert.C1, "C2": cert.C2, "eta": cert.eta, "R": R, "R_prime": R_outer,
                 "R_double_prime": min(r.R_inner for r in runs) if runs else 0.5 * R_outer,
                 "D": starstar.D, "eps0": starstar.eps0, "mode": mode}
    report = DarbouxReport(constants, runs, verdict, config.to_dict())
    return DarbouxResult(maps, report, cert, starstar, samples)


# ------------------------------------------ explicit jump-coordinate fixture

def jump_chart(y):
    """``(y, eta) -> (y - y_+/2, eta)`` and its Jacobian (one degree of freedom)."""
    y = np.atleast_2d(y)
    out = y.copy()
    out[:, 0] = y[:, 0] - 0.5 * np.maximum(y[:, 0], 0.0)
    J = np.broadcast_to(np.eye(2), (len(y), 2, 2)).copy()
    J[:, 0, 0] = 1.0 - 0.5 * heaviside(y[:, 0])
    return out, J


def jump_chart_inverse(x):
    x = np.atleast_2d(x)
    out = x.copy()
    out[:, 0] = np.where(x[:, 0] > 0, 2.0 * x[:, 0], x[:, 0])
    J = np.broadcast_to(np.eye(2), (len(x), 2, 2)).copy()
    J[:, 0, 0] = 1.0 + heaviside(x[:, 0])
    return out, J


def jump_fixture(member, eps, kernel_radius, domain, target):
    """Pull ``member`` back by the jump chart and compare with ``target`` off the band.

    Both directions are evaluated: the pullback ``Psi^* sigma`` and the
    pushforward ``(Psi^-1)^* sigma``.  Returns sup errors outside the band
    ``-w <= y <= 2 w`` with ``w = kernel_radius * eps`` (plus one grid cell).
    """
    pts = domain.points()
    h = float(np.max(domain.spacing))
    w = kernel_radius * eps + h
    y = pts[:, 0]
    off = (y < -w) | (y > 2 * w)
    x, J = jump_chart(pts)
    inside = member.domain.contains(x)
    pull = np.swapaxes(J, -1, -2) @ member(x) @ J
    keep = off & inside
    pull_err = opnorm(pull - target)[keep]
    xi, Ji = jump_chart_inverse(pts)
    ok_i = member.domain.contains(xi) & off
    push = np.swapaxes(Ji[ok_i], -1, -2) @ member(xi[ok_i]) @ Ji[ok_i]
    push_err = opnorm(push - target)
    return {
        "band": [-w, 2 * w],
        "pullback_error": float(np.max(pull_err)) if len(pull_err) else 0.0,
        "pushforward_error": float(np.max(push_err)) if len(push_err) else 0.0,
        "points": int(keep.sum()),
    }
