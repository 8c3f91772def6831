"""
The triangle D = {u1 > 0, u2 > 0, u1 + u2 < 1}, the entropy density

    h(u) = u1 (log u1 - 1) + u2 (log u2 - 1) + u3 (log u3 - 1),  u3 = 1 - u1 - u2,

its gradient w = Dh(u), Hessian D^2h(u) and the inverse map (Dh)^-1.

Scalar functions take and return the small value types below; the
``*_values`` kernels work elementwise on numpy arrays and are what the
solver and the oracle call in their inner loops.
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import softmax, xlogy

from crossdiff_project import settings
from .exceptions import DomainError, InvalidStateError

# h + ENTROPY_OFFSET is nonnegative on the closure of D, zero at the barycenter
ENTROPY_OFFSET = 1.0 + math.log(3.0)


class Membership(str, Enum):
    INTERIOR = 'interior'
    BOUNDARY = 'boundary'
    OUTSIDE = 'outside'


@dataclass(frozen=True)
class StatePoint:
    """A density pair with its third barycentric coordinate u3 = 1 - u1 - u2"""
    u1: float
    u2: float
    u3: float = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, 'u1', float(self.u1))
        object.__setattr__(self, 'u2', float(self.u2))
        if self.u3 is None:
            object.__setattr__(self, 'u3', 1.0 - self.u1 - self.u2)
        else:
            object.__setattr__(self, 'u3', float(self.u3))

    def __iter__(self):
        return iter((self.u1, self.u2))

    def membership(self, tol=settings.MEMBERSHIP_TOL):
        return classify(self, tol)

    def to_dict(self):
        return {'u1': self.u1, 'u2': self.u2, 'u3': self.u3}


@dataclass(frozen=True)
class EntropyValue:
    raw: float
    normalized: float


@dataclass(frozen=True)
class EntropyVariable:
    w1: float
    w2: float

    def __iter__(self):
        return iter((self.w1, self.w2))


def as_state_point(u):
    if isinstance(u, StatePoint):
        point = u
    else:
        u1, u2 = u
        point = StatePoint(u1, u2)
    if not all(math.isfinite(x) for x in (point.u1, point.u2, point.u3)):
        raise InvalidStateError(f"non-finite state {point.u1!r}, {point.u2!r}")
    return point


def classify(u, tol=settings.MEMBERSHIP_TOL):
    """Place u relative to the triangle: Interior, Boundary (within tol) or Outside"""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    point = as_state_point(u)
    smallest = min(point.u1, point.u2, point.u3)
    if smallest > tol:
        return Membership.INTERIOR
    if smallest >= -tol:
        return Membership.BOUNDARY
    return Membership.OUTSIDE


def _require(u, allowed, operation):
    point = as_state_point(u)
    where = classify(point)
    if where not in allowed:
        raise DomainError(
            f"{operation} needs a point in the {' or '.join(m.value for m in allowed)} "
            f"of the triangle, got ({point.u1!r}, {point.u2!r}) which is {where.value}"
        )
    return point


# Array kernels

def complement(u1, u2):
    return 1.0 - np.asarray(u1, dtype=float) - np.asarray(u2, dtype=float)


def density_values(u1, u2, u3):
    """Raw entropy density; 0 log 0 is taken as 0"""
    total = 0.0
    for x in (u1, u2, u3):
        x = np.asarray(x, dtype=float)
        total = total + xlogy(x, x) - x
    return total


def gradient_values(u1, u2, u3):
    log3 = np.log(u3)
    return np.log(u1) - log3, np.log(u2) - log3


def hessian_values(u1, u2, u3):
    """Entries (h11, h12, h22) of D^2h"""
    inv3 = 1.0 / np.asarray(u3, dtype=float)
    return 1.0 / np.asarray(u1, dtype=float) + inv3, inv3, 1.0 / np.asarray(u2, dtype=float) + inv3


def inverse_hessian_values(u1, u2, u3):
    """Entries (m11, m12, m22) of (D^2h)^-1, written so no entry loses u3 to cancellation"""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    u3 = np.asarray(u3, dtype=float)
    return u1 * (u2 + u3), -u1 * u2, u2 * (u1 + u3)


def inverse_gradient_values(w1, w2):
    """(Dh)^-1 in max-shifted form; returns all three barycentric coordinates"""
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    stacked = np.stack(np.broadcast_arrays(np.zeros_like(w1 + w2), w1, w2), axis=-1)
    weights = softmax(stacked, axis=-1)
    return weights[..., 1], weights[..., 2], weights[..., 0]


# Scalar operations

def entropy_density(u):
    point = _require(u, (Membership.INTERIOR, Membership.BOUNDARY), 'entropy_density')
    # clamp round-off on the boundary so xlogy never sees a tiny negative
    parts = [max(x, 0.0) for x in (point.u1, point.u2, point.u3)]
    raw = float(density_values(*parts))
    return EntropyValue(raw=raw, normalized=raw + ENTROPY_OFFSET)


def entropy_gradient(u):
    point = _require(u, (Membership.INTERIOR,), 'entropy_gradient')
    w1, w2 = gradient_values(point.u1, point.u2, point.u3)
    return EntropyVariable(float(w1), float(w2))


def entropy_hessian(u):
    point = _require(u, (Membership.INTERIOR,), 'entropy_hessian')
    h11, h12, h22 = hessian_values(point.u1, point.u2, point.u3)
    return np.array([[h11, h12], [h12, h22]], dtype=float)


def entropy_hessian_inverse(u):
    point = _require(u, (Membership.INTERIOR,), 'entropy_hessian_inverse')
    m11, m12, m22 = inverse_hessian_values(point.u1, point.u2, point.u3)
    return np.array([[m11, m12], [m12, m22]], dtype=float)


def entropy_gradient_inverse(w):
    w1, w2 = w
    if not (math.isfinite(w1) and math.isfinite(w2)):
        raise InvalidStateError(f"non-finite entropy variable {w1!r}, {w2!r}")
    u1, u2, u3 = inverse_gradient_values(w1, w2)
    return StatePoint(float(u1), float(u2), float(u3))
