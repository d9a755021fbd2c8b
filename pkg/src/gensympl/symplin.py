"""Symplectic linear algebra on R^(2n).

Coordinates are ordered ``(x_1..x_n, xi_1..xi_n)`` and a bilinear form is
stored as the matrix ``B`` with ``B(u, v) = u^T B v``.  The canonical form
``omega((x, xi), (y, eta)) = <y, xi> - <x, eta>`` therefore has matrix
``[[0, -I], [I, 0]]`` and pairs ``B(f_j, e_l) = delta_jl``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError

SKEW_RTOL = 1e-12
PAIRING_TOL = 1e-10
DEGENERACY_RTOL = 1e-10
_TIE_RTOL = 1e-12


class DegenerateFormError(NumericalError):
    pass


class PairingError(ValidationError):
    pass


def j_can(n):
    """Matrix of the canonical symplectic form on T*(R^n)."""
    eye = np.eye(n)
    z = np.zeros((n, n))
    return np.block([[z, -eye], [eye, z]])


def dx_dxi(n):
    """Matrix of ``sum_i dx_i ^ dxi_i`` (the negative of :func:`j_can`)."""
    return -j_can(n)


def is_skew(B, rtol=SKEW_RTOL):
    B = np.asarray(B, dtype=float)
    scale = np.linalg.norm(B, axis=(-2, -1))
    defect = np.linalg.norm(B + np.swapaxes(B, -1, -2), axis=(-2, -1))
    return bool(np.all(defect <= rtol * scale))


def _require_skew(B, what="matrix"):
    if not is_skew(B):
        raise ValidationError(f"{what} is not skew-symmetric")


def opnorm(A):
    """Spectral norm, batched over leading axes."""
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] == (2, 2):
        fro2 = np.sum(A * A, axis=(-2, -1))
        det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
        disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * det * det, 0.0))
        return np.sqrt(0.5 * (fro2 + disc))
    return np.linalg.norm(A, ord=2, axis=(-2, -1))


def eig_magnitudes(B):
    """Absolute values of the eigenvalues of a skew matrix, ascending.

    For normal matrices these coincide with the singular values, which are
    computed more stably than complex eigenvalues.
    """
    B = np.asarray(B, dtype=float)
    _require_skew(B)
    return np.sort(np.linalg.svd(B, compute_uv=False), axis=-1)


def inv_opnorm(B):
    """``||B^{-1}||_op`` as the reciprocal smallest singular value (inf if singular)."""
    s = np.linalg.svd(np.asarray(B, dtype=float), compute_uv=False)
    smin = s[..., -1]
    with np.errstate(divide="ignore"):
        return np.where(smin > 0, 1.0 / np.where(smin > 0, smin, 1.0), np.inf)


@dataclass(frozen=True)
class SymplecticBasis:
    """Columns ``e_1..e_n, f_1..f_n`` of ``matrix`` with ``L^T B L = j_can(n)``."""

    matrix: np.ndarray

    @property
    def n(self):
        return self.matrix.shape[0] // 2

    @property
    def e(self):
        return self.matrix[:, : self.n]

    @property
    def f(self):
        return self.matrix[:, self.n:]

    def defect(self, B):
        L = self.matrix
        return float(opnorm(L.T @ B @ L - j_can(self.n)))


def _pair(B, u, v):
    return float(u @ B @ v)


def _check_partial(B, E, F, tol):
    vecs = list(E.items()), list(F.items())
    for a, (i, u) in enumerate(vecs[0]):
        for k, w in vecs[0][a + 1:]:
            if abs(_pair(B, u, w)) > tol:
                raise PairingError(f"B(e_{i + 1}, e_{k + 1}) = {_pair(B, u, w):.3g}, expected 0")
    for a, (j, u) in enumerate(vecs[1]):
        for l, w in vecs[1][a + 1:]:
            if abs(_pair(B, u, w)) > tol:
                raise PairingError(f"B(f_{j + 1}, f_{l + 1}) = {_pair(B, u, w):.3g}, expected 0")
    for j, u in vecs[1]:
        for i, w in vecs[0]:
            want = 1.0 if i == j else 0.0
            got = _pair(B, u, w)
            if abs(got - want) > tol:
                raise PairingError(
                    f"B(f_{j + 1}, e_{i + 1}) = {got:.12g}, expected {want:g}")


def _complement_projection(B, v, E, F):
    # v + B(v, f) e - B(v, e) f for each completed pair
    for k in E:
        e, f = E[k], F[k]
        v = v + _pair(B, v, f) * e - _pair(B, v, e) * f
    return v


def extend_partial_basis(B, e_partial=None, f_partial=None, tol=PAIRING_TOL,
                         rel_floor=DEGENERACY_RTOL):
    """Extend a partial symplectic basis of ``(R^2n, B)`` to a full one.

    ``e_partial`` and ``f_partial`` map zero-based indices to vectors.  The
    supplied vectors are copied into the result unchanged.
    """
    B = np.asarray(B, dtype=float)
    _require_skew(B)
    d = B.shape[0]
    if d % 2:
        raise ValidationError(f"odd dimension {d}")
    n = d // 2
    mags = eig_magnitudes(B)
    if mags[0] <= rel_floor * max(mags[-1], np.finfo(float).tiny):
        raise DegenerateFormError("form is numerically degenerate",
                                  {"min_abs_eig": float(mags[0]), "max_abs_eig": float(mags[-1])})

    E = {int(k): np.array(v, dtype=float) for k, v in (e_partial or {}).items()}
    F = {int(k): np.array(v, dtype=float) for k, v in (f_partial or {}).items()}
    for k in list(E) + list(F):
        if not 0 <= k < n:
            raise ValidationError(f"partial basis index {k} outside 0..{n - 1}")
    _check_partial(B, E, F, tol)

    # complete half pairs by minimum-norm solutions of the pairing constraints
    for i in sorted(set(E) - set(F)):
        rows = [B @ E[k] for k in E] + [B @ F[l] for l in F]
        rhs = [1.0 if k == i else 0.0 for k in E] + [0.0] * len(F)
        F[i] = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)[0]
    for j in sorted(set(F) - set(E)):
        rows = [B.T @ F[l] for l in F] + [B.T @ E[k] for k in E]
        rhs = [1.0 if l == j else 0.0 for l in F] + [0.0] * len(E)
        E[j] = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)[0]

    cands = [_complement_projection(B, np.eye(d)[k], E, F) for k in range(d)]
    for idx in (k for k in range(n) if k not in E):
        norms = np.array([np.linalg.norm(B @ c) for c in cands])
        best = norms.max()
        if best <= 0:
            raise DegenerateFormError("ran out of directions", {"min_abs_eig": float(mags[0])})
        pick = int(np.flatnonzero(norms >= best * (1 - _TIE_RTOL))[0])
        e = cands[pick] / np.linalg.norm(cands[pick])

        rank = d - 2 * len(E)
        U = np.linalg.svd(np.column_stack(cands), full_matrices=False)[0][:, :rank]
        w = U @ (U.T @ (B @ e))
        pairing = float(w @ B @ e)
        if pairing <= 0:
            raise DegenerateFormError("no partner direction", {"min_abs_eig": float(mags[0])})
        f = w / pairing
        s = np.sqrt(np.linalg.norm(f))
        E[idx], F[idx] = e * s, f / s
        cands = [_complement_projection(B, c, {idx: E[idx]}, {idx: F[idx]}) for c in cands]

    L = np.column_stack([E[k] for k in range(n)] + [F[k] for k in range(n)])
    return SymplecticBasis(L)


def symplectic_basis(B, rel_floor=DEGENERACY_RTOL):
    """Symplectic Gram-Schmidt: ``L`` with ``L^T B L = j_can(n)``.

    Each step takes the remaining direction with the largest ``||B v||``
    (lowest index on ties), pairs it with the normalized projection of
    ``B e`` onto the remaining subspace, balances the pair's lengths and
    projects the remaining candidates onto the B-complement.
    """
    return extend_partial_basis(B, rel_floor=rel_floor)


@dataclass(frozen=True)
class SymplecticMapCheck:
    ok: bool
    defect: float
    injective: bool | None

    def __bool__(self):
        return self.ok


def check_symplectic_map(F, B1, B2, tol=PAIRING_TOL):
    """Does ``F`` carry ``B1`` to ``B2``, i.e. ``F^T B2 F == B1``?"""
    F = np.asarray(F, dtype=float)
    B1 = np.asarray(B1, dtype=float)
    B2 = np.asarray(B2, dtype=float)
    if F.shape != (B2.shape[0], B1.shape[0]):
        raise ValidationError(f"shape mismatch: F {F.shape}, B1 {B1.shape}, B2 {B2.shape}")
    defect = float(opnorm(F.T @ B2 @ F - B1))
    ok = defect <= tol
    injective = None
    if ok and F.shape[0] == F.shape[1]:
        injective = bool(np.linalg.svd(F, compute_uv=False)[-1] > 0)
    return SymplecticMapCheck(ok, defect, injective)
