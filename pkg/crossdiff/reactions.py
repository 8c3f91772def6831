"""
Reaction terms of the form f_i(u) = u_i g_i(u) and the checks that keep
the triangle invariant under them: g_i must be nonpositive in a band
1 - eps < u1 + u2 < 1 below the capacity line.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from crossdiff_project import settings
from .coeff_conditions import ConditionReport, Criterion, barycentric_grid
from .entropy_geometry import (
    ENTROPY_OFFSET, Membership, StatePoint, as_state_point, classify,
    density_values, gradient_values,
)
from .exceptions import DomainError, InvalidStateError

logger = logging.getLogger(__name__)

APPROACH_DISTANCES = tuple(10.0 ** -k for k in range(2, 9))
APPROACH_FRACTIONS = np.linspace(0.05, 0.95, 19)
BAND_SAMPLES = 10_000


class ReactionKind(str, Enum):
    NONE = 'none'
    LOTKA_VOLTERRA = 'lotka_volterra'
    CUSTOM = 'custom'


class ReactionSpec:
    """Base class; subclasses provide the per-capita growth g(u)"""
    kind = None

    def growth(self, u1, u2):
        raise NotImplementedError

    def rates(self, u1, u2):
        g1, g2 = self.growth(u1, u2)
        return np.asarray(u1) * g1, np.asarray(u2) * g2

    def jacobian(self, u1, u2):
        """Entries (j11, j12, j21, j22) of df/du with u1, u2 independent"""
        raise NotImplementedError

    @property
    def is_trivial(self):
        return False


@dataclass(frozen=True)
class NoReaction(ReactionSpec):
    kind = ReactionKind.NONE

    def growth(self, u1, u2):
        zero = np.zeros_like(np.asarray(u1, dtype=float) + np.asarray(u2, dtype=float))
        return zero, zero

    def jacobian(self, u1, u2):
        zero = np.zeros_like(np.asarray(u1, dtype=float) + np.asarray(u2, dtype=float))
        return zero, zero, zero, zero

    @property
    def is_trivial(self):
        return True

    def to_dict(self):
        return {'kind': self.kind.value}


@dataclass(frozen=True)
class LotkaVolterra(ReactionSpec):
    """g_i(u) = b_i0 - b_i1 u1 - b_i2 u2"""
    b10: float
    b11: float
    b12: float
    b20: float
    b21: float
    b22: float
    kind = ReactionKind.LOTKA_VOLTERRA

    def __post_init__(self):
        for name in ('b10', 'b11', 'b12', 'b20', 'b21', 'b22'):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise InvalidStateError(f"{name} must be finite and nonnegative, got {value!r}")
            object.__setattr__(self, name, value)

    @classmethod
    def from_rows(cls, rows):
        (b10, b11, b12), (b20, b21, b22) = rows
        return cls(b10, b11, b12, b20, b21, b22)

    @classmethod
    def from_skt(cls, s):
        return cls.from_rows(s.growth_rates)

    @property
    def rows(self):
        return ((self.b10, self.b11, self.b12), (self.b20, self.b21, self.b22))

    def growth(self, u1, u2):
        u1 = np.asarray(u1, dtype=float)
        u2 = np.asarray(u2, dtype=float)
        return (self.b10 - self.b11 * u1 - self.b12 * u2,
                self.b20 - self.b21 * u1 - self.b22 * u2)

    def jacobian(self, u1, u2):
        u1 = np.asarray(u1, dtype=float)
        u2 = np.asarray(u2, dtype=float)
        g1, g2 = self.growth(u1, u2)
        return (g1 - self.b11 * u1, -self.b12 * u1, -self.b21 * u2, g2 - self.b22 * u2)

    def to_dict(self):
        return {'kind': self.kind.value, 'b': [list(row) for row in self.rows]}


@dataclass(frozen=True)
class CustomReaction(ReactionSpec):
    """User-supplied g1, g2, vectorised over numpy arrays of (u1, u2)"""
    g1: Callable
    g2: Callable
    eps_band: float
    kind = ReactionKind.CUSTOM
    fd_step = 1e-7

    def __post_init__(self):
        if not 0.0 < self.eps_band < 1.0:
            raise ValueError(f"eps_band must lie in (0, 1), got {self.eps_band!r}")

    def growth(self, u1, u2):
        u1 = np.asarray(u1, dtype=float)
        u2 = np.asarray(u2, dtype=float)
        shape = np.broadcast(u1, u2).shape
        return (np.broadcast_to(np.asarray(self.g1(u1, u2), dtype=float), shape),
                np.broadcast_to(np.asarray(self.g2(u1, u2), dtype=float), shape))

    def jacobian(self, u1, u2):
        u1 = np.asarray(u1, dtype=float)
        u2 = np.asarray(u2, dtype=float)
        step = self.fd_step
        f_plus1 = self.rates(u1 + step, u2)
        f_minus1 = self.rates(u1 - step, u2)
        f_plus2 = self.rates(u1, u2 + step)
        f_minus2 = self.rates(u1, u2 - step)
        return ((f_plus1[0] - f_minus1[0]) / (2 * step), (f_plus2[0] - f_minus2[0]) / (2 * step),
                (f_plus1[1] - f_minus1[1]) / (2 * step), (f_plus2[1] - f_minus2[1]) / (2 * step))

    def to_dict(self):
        raise TypeError("custom reactions cannot be serialised")


def eval_reaction(r, u):
    point = as_state_point(u)
    if classify(point) is Membership.OUTSIDE:
        raise DomainError(f"eval_reaction needs a point in the closed triangle, got ({point.u1!r}, {point.u2!r})")
    f1, f2 = r.rates(point.u1, point.u2)
    return np.array([float(f1), float(f2)])


def lv_band(r, tol=settings.CONDITION_TOL):
    """Width of the band below u1 + u2 = 1 where both growth rates are nonpositive"""
    eps_parts = []
    flags = []
    margins = {}
    for index, (b0, b1, b2) in enumerate(r.rows, start=1):
        floor = min(b1, b2)
        margins[f'b{index}0_slack'] = floor - b0
        if b0 == 0.0:
            eps_parts.append(1.0)
        elif floor == 0.0:
            flags.append('infinite_growth')
            eps_parts.append(-math.inf)
        else:
            eps_parts.append(1.0 - b0 / floor)
    passed = 'infinite_growth' not in flags and all(value >= -tol for value in margins.values())
    eps = max(0.0, min(eps_parts))
    if passed and eps <= tol:
        flags.append('degenerate')
        logger.info("Lotka-Volterra growth equals the competition floor; band width is zero")
    report = ConditionReport(label=Criterion.LV_BAND, passed=passed, margins=margins, flags=tuple(flags),
                             details={'eps1': max(eps_parts[0], -1.0), 'eps2': max(eps_parts[1], -1.0), 'eps': eps})
    return eps, report


def verify_band(r, eps_band=None, samples=BAND_SAMPLES, seed=0):
    """Sample the band {1 - eps < u1 + u2 < 1} and report the largest growth rate found there"""
    eps_band = r.eps_band if eps_band is None else eps_band
    rng = np.random.default_rng(seed)
    total = 1.0 - eps_band * rng.random(samples)
    split = rng.random(samples)
    u1, u2 = total * split, total * (1.0 - split)
    g1, g2 = r.growth(u1, u2)
    margins = {'g1_band': -float(np.max(g1)), 'g2_band': -float(np.max(g2))}
    passed = all(value >= 0 for value in margins.values())
    witness = None
    if not passed:
        k = int(np.argmax(np.maximum(g1, g2)))
        witness = StatePoint(u1[k], u2[k], 1.0 - total[k])
    return ConditionReport(label=Criterion.LV_BAND, passed=passed, margins=margins, witness=witness,
                           details={'eps_band': eps_band, 'samples': samples})


def _h3_quotient(r, u1, u2, u3):
    f1, f2 = r.rates(u1, u2)
    w1, w2 = gradient_values(u1, u2, u3)
    normalized = density_values(u1, u2, u3) + ENTROPY_OFFSET
    return (f1 * w1 + f2 * w2) / (1.0 + normalized)


@dataclass(frozen=True)
class H3Scan:
    c_f: float
    report: ConditionReport
    approach: tuple


def h3_bound_scan(r, n=64):
    """Estimate c_f in f(u).Dh(u) <= c_f (1 + h(u)) on a grid plus points approaching u1 + u2 = 1"""
    if n < 16:
        raise ValueError("h3 scan resolution must be at least 16")
    grid = barycentric_grid(n, margin=1.0 / (4 * n))
    interior = _h3_quotient(r, *grid)
    best = float(np.max(interior))
    approach = []
    witness = None
    for distance in APPROACH_DISTANCES:
        u1 = (1.0 - distance) * APPROACH_FRACTIONS
        u2 = (1.0 - distance) * (1.0 - APPROACH_FRACTIONS)
        u3 = np.full_like(u1, distance)
        values = _h3_quotient(r, u1, u2, u3)
        k = int(np.argmax(values))
        approach.append((distance, float(values[k])))
        witness = StatePoint(u1[k], u2[k], distance)
        best = max(best, float(values[k]))
    maxima = np.array([value for _, value in approach])
    increments = np.diff(maxima)
    scale = max(1.0, float(np.max(np.abs(maxima))))
    slack = 1e-6 * scale - float(np.min(increments[-3:]))
    diverging = slack < 0 or not math.isfinite(best)
    margins = {'divergence_slack': slack}
    flags = ('divergent',) if diverging else ()
    if diverging:
        logger.warning("reaction entropy production grows without bound towards u1 + u2 = 1")
    report = ConditionReport(label=Criterion.H3_BOUND, passed=not diverging, margins=margins,
                             witness=witness if diverging else None, flags=flags,
                             details={'c_f': max(best, 0.0), 'path': approach})
    return H3Scan(c_f=max(best, 0.0), report=report, approach=tuple(approach))
