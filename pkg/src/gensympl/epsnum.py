"""Generalized numbers sampled on a finite ladder of epsilon values.

A net ``(r_eps)`` indexed by ``]0, 1]`` is represented by its samples on a
strictly decreasing ladder.  Asymptotic notions (moderate, negligible,
strictly nonzero) cannot be decided from finitely many samples, so
:func:`estimate_order` fits a power law in log-log space and reports the
fit quality next to the classification.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

LOG_FLOOR = 1e-300
MIN_LADDER = 4

# default thresholds for estimate_order
FIT_TOL = 0.1
N_MAX = 20
M_TARGET = 10
STRICT_EXTRA_ORDERS = 2
# slack used when rounding fitted exponents to integer orders
_EXPONENT_SLACK = 1e-3
# relative slack for monotonicity of eps-ratios on the tail
_MONO_SLACK = 1e-9


@dataclass(frozen=True)
class EpsLadder:
    values: tuple
    spacing: str = "custom"

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < MIN_LADDER:
            raise ValidationError(
                f"ladder needs at least {MIN_LADDER} values, got {len(vals)}")
        if any(not (0.0 < v <= 1.0) for v in vals):
            raise ValidationError("ladder values must lie in ]0, 1]")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValidationError("ladder values must be strictly decreasing")
        if self.spacing not in ("geometric", "custom"):
            raise ValidationError(f"unknown ladder spacing {self.spacing!r}")

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, k):
        return self.values[k]

    @property
    def array(self):
        return np.asarray(self.values)

    def index_of(self, eps, rtol=1e-12):
        for k, v in enumerate(self.values):
            if abs(v - eps) <= rtol * v:
                return k
        raise KeyError(eps)

    def to_dict(self):
        return {"values": list(self.values), "spacing": self.spacing}


def make_ladder(eps_max, eps_min, count):
    """Geometric ladder from ``eps_max`` down to ``eps_min`` with ``count`` points."""
    if not (0.0 < eps_min < eps_max <= 1.0):
        raise ValidationError(
            f"need 0 < eps_min < eps_max <= 1, got eps_min={eps_min}, eps_max={eps_max}")
    if int(count) != count or count < MIN_LADDER:
        raise ValidationError(f"count must be an integer >= {MIN_LADDER}, got {count}")
    vals = np.geomspace(eps_max, eps_min, int(count))
    vals[0], vals[-1] = eps_max, eps_min
    return EpsLadder(tuple(vals), "geometric")


@dataclass(frozen=True)
class EpsScalarFamily:
    ladder: EpsLadder
    samples: tuple

    def __post_init__(self):
        s = tuple(float(v) for v in np.ravel(self.samples))
        object.__setattr__(self, "samples", s)
        if len(s) != len(self.ladder):
            raise ValidationError(
                f"{len(s)} samples for a ladder of length {len(self.ladder)}")
        if not all(math.isfinite(v) for v in s):
            raise ValidationError("family samples must be finite")

    @classmethod
    def from_function(cls, ladder, fn):
        return cls(ladder, tuple(fn(e) for e in ladder))

    @property
    def array(self):
        return np.asarray(self.samples)

    def scaled(self, c):
        return EpsScalarFamily(self.ladder, tuple(c * v for v in self.samples))

    def __mul__(self, other):
        if isinstance(other, EpsScalarFamily):
            if other.ladder != self.ladder:
                raise ValidationError("families live on different ladders")
            return EpsScalarFamily(self.ladder, tuple(self.array * other.array))
        return self.scaled(float(other))

    __rmul__ = __mul__


@dataclass(frozen=True)
class OrderVerdict:
    """Result of a power-law fit ``|r_eps| ~ C eps^p``.

    ``classification`` is one of ``moderate``, ``negligible_up_to``,
    ``strictly_nonzero`` or ``inconclusive``; ``order`` carries N or m.
    ``holds_from`` is the largest ladder value from which the reported
    inequality held for every smaller ladder value.
    """

    fitted_exponent: float
    residual: float
    classification: str
    order: int | None = None
    holds_from: float | None = None
    thresholds: dict = field(default_factory=dict)

    @property
    def label(self):
        if self.order is None:
            return self.classification
        return f"{self.classification}({self.order})"

    def to_dict(self):
        exp = self.fitted_exponent
        return {
            "fitted_exponent": exp if math.isfinite(exp) else ("inf" if exp > 0 else "-inf"),
            "residual": self.residual,
            "classification": self.label,
            "holds_from": self.holds_from,
            "thresholds": dict(self.thresholds),
        }


def _tail(n):
    return slice(n - max(2, (n + 1) // 2), n)


def _nonincreasing(log_vals):
    # log_vals ordered along the ladder (decreasing eps); -inf allowed
    for a, b in zip(log_vals, log_vals[1:]):
        if b == -np.inf:
            continue
        if a == -np.inf or b > a + _MONO_SLACK * max(1.0, abs(a)):
            return False
    return True


def _holds_from(ok, eps):
    """Largest eps such that ``ok`` is true at it and at every smaller ladder value."""
    start = None
    for k in range(len(ok) - 1, -1, -1):
        if not ok[k]:
            break
        start = k
    return None if start is None else float(eps[start])


def estimate_order(family, m_target=M_TARGET, n_max=N_MAX, fit_tol=FIT_TOL):
    """Classify a sampled net by its asymptotic order in eps.

    Precedence: negligible (the ratio ``|r_eps| / eps^m_target`` is
    nonincreasing on the small-eps half of the ladder), then inconclusive
    when the log-log fit residual exceeds ``fit_tol``, then strictly nonzero
    for nonnegative exponents and moderate for growing families.
    """
    eps = family.ladder.array
    r = np.abs(family.array)
    thresholds = {"m_target": m_target, "n_max": n_max, "fit_tol": fit_tol}
    if not np.any(r > 0):
        return OrderVerdict(math.inf, 0.0, "negligible_up_to", int(m_target),
                            float(eps[0]), thresholds)

    le = np.log(eps)
    lr = np.log(np.maximum(r, LOG_FLOOR))
    slope, intercept = np.polyfit(le, lr, 1)
    residual = float(np.sqrt(np.mean((lr - (slope * le + intercept)) ** 2)))
    slope = float(slope)

    tail = _tail(len(eps))
    with np.errstate(divide="ignore"):
        log_ratio = np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), -np.inf) - m_target * le
    if _nonincreasing(list(log_ratio[tail])):
        # extend the monotone stretch as far up the ladder as it goes
        k = tail.start
        while k > 0 and _nonincreasing(list(log_ratio[k - 1:])):
            k -= 1
        return OrderVerdict(slope, residual, "negligible_up_to", int(m_target),
                            float(eps[k]), thresholds)

    if residual > fit_tol:
        return OrderVerdict(slope, residual, "inconclusive", None, None, thresholds)

    if slope < 0:
        n = max(0, math.ceil(-slope - _EXPONENT_SLACK))
        if n > n_max:
            return OrderVerdict(slope, residual, "inconclusive", None, None, thresholds)
        ok = r <= np.exp(-n * le) * np.exp(intercept + 2 * fit_tol)
        return OrderVerdict(slope, residual, "moderate", n, _holds_from(ok, eps), thresholds)

    # small prefactors push the crossover below the ladder tail; allow a few extra orders
    m0 = math.floor(slope + _EXPONENT_SLACK) + 1
    for m in range(m0, m0 + STRICT_EXTRA_ORDERS + 1):
        ok = r >= eps ** m
        if np.all(ok[tail]):
            return OrderVerdict(slope, residual, "strictly_nonzero", m, _holds_from(ok, eps),
                                thresholds)
    return OrderVerdict(slope, residual, "moderate", 0, None, thresholds)
