"""
The linear diffusion family A_ij(u) = alpha_ij + beta_ij u1 + gamma_ij u2,
the Shigesada-Kawasaki-Teramoto special case, and the algebraic criteria
deciding when D^2h(u) A(u) is symmetric and positive semidefinite on the
triangle.

Only the symmetric family is parametrised by the five numbers
(alpha11, alpha22, beta11, beta12, gamma22); every other coefficient then
follows from

    alpha12 = alpha21 = beta21 = gamma12 = 0,
    beta22 = beta11 - gamma21, gamma11 = gamma22 - beta12,
    gamma21 = alpha22 - alpha11 + beta12.

Besides the closed-form criteria this module carries the certificates the
criteria rest on (vertex limits, boundary determinants, the Hessian of
det A, the diagonal polynomials f1/f2) and a brute-force spectral scan used
as an independent oracle.
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from crossdiff_project import settings
from .entropy_geometry import Membership, StatePoint, as_state_point, classify
from .exceptions import DomainError, InvalidStateError, PreconditionError

SEGREGATION_BETA_SHIFT = np.array([[1.0, 1.0], [0.0, 0.0]])
SEGREGATION_GAMMA_SHIFT = np.array([[0.0, 0.0], [1.0, 1.0]])

# s values of the vertex-approach paths sampled by the oracle
PATH_SCALES = tuple(10.0 ** -k for k in range(1, 9))

ORACLE_MARGIN = 1e-3


class Criterion(str, Enum):
    SYMMETRY = 'symmetry'
    PSD_IFF = 'psd_iff'
    THEOREM_STRICT = 'theorem_strict'
    REMARK_CASE = 'remark_case'
    SKT_COROLLARY = 'skt_corollary'
    LV_BAND = 'lv_band'
    H3_BOUND = 'h3_bound'


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of one criterion, with a slack value per inequality checked"""
    label: Criterion
    passed: bool
    margins: dict
    witness: StatePoint = None
    flags: tuple = ()
    details: dict = field(default_factory=dict)

    def failing(self):
        return [name for name, value in self.margins.items() if value < 0]

    def to_dict(self):
        return {
            'label': self.label.value,
            'passed': bool(self.passed),
            'margins': [{'name': name, 'value': float(value)} for name, value in self.margins.items()],
            'witness': self.witness.to_dict() if self.witness is not None else None,
            'flags': list(self.flags),
            'details': {key: _plain(value) for key, value in self.details.items()},
        }


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _matrix(value, name):
    matrix = np.array(value, dtype=float).reshape(2, 2)
    if not np.all(np.isfinite(matrix)):
        raise InvalidStateError(f"{name} has non-finite entries")
    matrix.flags.writeable = False
    return matrix


@dataclass(frozen=True, eq=False)
class CoeffSet:
    """The twelve coefficients of the linear diffusion matrix"""
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        for name in ('alpha', 'beta', 'gamma'):
            object.__setattr__(self, name, _matrix(getattr(self, name), name))

    def __eq__(self, other):
        if not isinstance(other, CoeffSet):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ('alpha', 'beta', 'gamma'))

    __hash__ = None

    def __repr__(self):
        return (f"CoeffSet(alpha={self.alpha.tolist()}, beta={self.beta.tolist()}, "
                f"gamma={self.gamma.tolist()})")

    @classmethod
    def symmetric(cls, alpha11, alpha22, beta11, beta12, gamma22):
        """Complete five free parameters into a set satisfying the symmetry relations"""
        gamma21 = alpha22 - alpha11 + beta12
        beta22 = beta11 - gamma21
        gamma11 = gamma22 - beta12
        return cls(
            alpha=[[alpha11, 0.0], [0.0, alpha22]],
            beta=[[beta11, beta12], [0.0, beta22]],
            gamma=[[gamma11, 0.0], [gamma21, gamma22]],
        )

    @classmethod
    def zero(cls):
        return cls(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))

    @property
    def free_parameters(self):
        """(alpha11, alpha22, beta11, beta12, gamma22)"""
        return (float(self.alpha[0, 0]), float(self.alpha[1, 1]), float(self.beta[0, 0]),
                float(self.beta[0, 1]), float(self.gamma[1, 1]))

    def to_dict(self):
        return {'alpha': self.alpha.tolist(), 'beta': self.beta.tolist(), 'gamma': self.gamma.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(alpha=data['alpha'], beta=data['beta'], gamma=data['gamma'])


SKT_DIFFUSION_FIELDS = ('a10', 'a20', 'a11', 'a12', 'a21', 'a22')
SKT_REACTION_FIELDS = ('b10', 'b11', 'b12', 'b20', 'b21', 'b22')


@dataclass(frozen=True)
class SktParams:
    """Shigesada-Kawasaki-Teramoto diffusion constants and Lotka-Volterra rates"""
    a10: float = 0.0
    a20: float = 0.0
    a11: float = 0.0
    a12: float = 0.0
    a21: float = 0.0
    a22: float = 0.0
    b10: float = 0.0
    b11: float = 0.0
    b12: float = 0.0
    b20: float = 0.0
    b21: float = 0.0
    b22: float = 0.0

    def __post_init__(self):
        for name in SKT_DIFFUSION_FIELDS + SKT_REACTION_FIELDS:
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise InvalidStateError(f"{name} must be finite and nonnegative, got {value!r}")
            object.__setattr__(self, name, value)

    @property
    def growth_rates(self):
        return ((self.b10, self.b11, self.b12), (self.b20, self.b21, self.b22))

    def to_dict(self):
        return {name: getattr(self, name) for name in SKT_DIFFUSION_FIELDS + SKT_REACTION_FIELDS}


def segregation_matrix():
    """P(u) = [[1 - u1, -u1], [-u2, 1 - u2]], the matrix with D^2h P = diag(1/u1, 1/u2)"""
    return CoeffSet(alpha=np.eye(2), beta=-SEGREGATION_BETA_SHIFT, gamma=-SEGREGATION_GAMMA_SHIFT)


def diffusion_values(c, u1, u2):
    """Entries (A11, A12, A21, A22) at arrays of points"""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    return tuple(c.alpha[i, j] + c.beta[i, j] * u1 + c.gamma[i, j] * u2
                 for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))


def det_A_values(c, u1, u2):
    a11, a12, a21, a22 = diffusion_values(c, u1, u2)
    return a11 * a22 - a12 * a21


def _closure_point(u, operation):
    point = as_state_point(u)
    if classify(point) is Membership.OUTSIDE:
        raise DomainError(f"{operation} needs a point in the closed triangle, got ({point.u1!r}, {point.u2!r})")
    return point


def eval_diffusion_matrix(c, u):
    point = _closure_point(u, 'eval_diffusion_matrix')
    return c.alpha + c.beta * point.u1 + c.gamma * point.u2


def det_A(c, u):
    point = _closure_point(u, 'det_A')
    return float(det_A_values(c, point.u1, point.u2))


def from_skt(s):
    return CoeffSet(
        alpha=[[s.a10, 0.0], [0.0, s.a20]],
        beta=[[2.0 * s.a11, s.a12], [0.0, s.a21]],
        gamma=[[s.a12, 0.0], [s.a21, 2.0 * s.a22]],
    )


# Criteria

def check_symmetry(c, tol=settings.CONDITION_TOL):
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    alpha, beta, gamma = c.alpha, c.beta, c.gamma
    residuals = {
        'alpha12': alpha[0, 1],
        'alpha21': alpha[1, 0],
        'beta21': beta[1, 0],
        'gamma12': gamma[0, 1],
        'beta22': beta[1, 1] - (beta[0, 0] - gamma[1, 0]),
        'gamma11': gamma[0, 0] - (gamma[1, 1] - beta[0, 1]),
        'gamma21': gamma[1, 0] - (alpha[1, 1] - alpha[0, 0] + beta[0, 1]),
    }
    residuals = {name: float(value) for name, value in residuals.items()}
    passed = all(abs(value) <= tol for value in residuals.values())
    return ConditionReport(label=Criterion.SYMMETRY, passed=passed, margins=residuals)


def _require_symmetric(c, tol, operation):
    report = check_symmetry(c, tol)
    if not report.passed:
        raise PreconditionError(f"{operation} is only valid for the symmetric family", report)
    return report


def psd_margins(alpha11, alpha22, beta11, beta12, gamma22):
    """Slacks of the five inequalities characterising positive semidefiniteness"""
    return {
        'alpha11': float(alpha11),
        'alpha22': float(alpha22),
        'beta12_slack': float(alpha11 + min(beta11, gamma22) - beta12),
        'alpha11_plus_beta11': float(alpha11 + beta11),
        'alpha22_plus_gamma22': float(alpha22 + gamma22),
    }


def check_psd_iff(c, tol=settings.CONDITION_TOL):
    _require_symmetric(c, tol, 'check_psd_iff')
    margins = psd_margins(*c.free_parameters)
    passed = all(value >= -tol for value in margins.values())
    witness = None if passed else psd_witness(c)
    flags = ('degenerate',) if passed and min(margins.values()) <= tol else ()
    return ConditionReport(label=Criterion.PSD_IFF, passed=passed, margins=margins,
                           witness=witness, flags=flags)


def check_theorem_conditions(c, tol=settings.CONDITION_TOL):
    _require_symmetric(c, tol, 'check_theorem_conditions')
    margins = psd_margins(*c.free_parameters)
    passed = (margins['alpha11'] > tol and margins['alpha22'] > tol and margins['beta12_slack'] > tol
              and margins['alpha11_plus_beta11'] >= -tol and margins['alpha22_plus_gamma22'] >= -tol)
    return ConditionReport(label=Criterion.THEOREM_STRICT, passed=passed, margins=margins)


def check_remark_case(c, tol=settings.CONDITION_TOL):
    """Vanishing constant part with strictly positive beta11, gamma22: uniformly elliptic regime"""
    _require_symmetric(c, tol, 'check_remark_case')
    alpha11, alpha22, beta11, _, gamma22 = c.free_parameters
    eps = min(beta11, gamma22)
    shifted = psd_margins(*remark_shift(c, eps).free_parameters)
    margins = {
        'alpha11_zero': -abs(alpha11),
        'alpha22_zero': -abs(alpha22),
        'beta11': beta11,
        'gamma22': gamma22,
    }
    margins.update({f'shifted_{name}': value for name, value in shifted.items()})
    passed = (abs(alpha11) <= tol and abs(alpha22) <= tol and beta11 > tol and gamma22 > tol
              and all(value >= -tol for value in shifted.values()))
    return ConditionReport(label=Criterion.REMARK_CASE, passed=passed, margins=margins,
                           details={'epsilon': eps if passed else 0.0})


def shift_coefficients(c, eps):
    """A - eps P: the set whose D^2h-product is D^2h A - eps diag(1/u1, 1/u2)"""
    return CoeffSet(alpha=c.alpha - eps * np.eye(2),
                    beta=c.beta + eps * SEGREGATION_BETA_SHIFT,
                    gamma=c.gamma + eps * SEGREGATION_GAMMA_SHIFT)


def remark_shift(c, eps):
    """beta11, beta12, gamma22 (and gamma21) lowered by eps; D^2h times the removed part is eps/u3 [[1,1],[1,1]]"""
    return CoeffSet(alpha=c.alpha,
                    beta=c.beta - eps * SEGREGATION_BETA_SHIFT,
                    gamma=c.gamma - eps * SEGREGATION_GAMMA_SHIFT)


def epsilon_max(c, tol=settings.CONDITION_TOL):
    """Largest eps with z.(D^2h A)z >= eps (z1^2/u1 + z2^2/u2) on the triangle"""
    report = check_psd_iff(c, tol)
    if not report.passed:
        raise PreconditionError("epsilon_max needs a positive semidefinite set", report)
    margins = report.margins
    return max(0.0, min(margins['alpha11'], margins['alpha22'], margins['beta12_slack']))


def check_skt_corollary(s, tol=settings.CONDITION_TOL):
    margins = {
        'a21_minus_a11': s.a21 - s.a11,
        'a22_minus_a12': s.a22 - s.a12,
        'a20_minus_a10_balance': (s.a20 - s.a10) - (s.a11 - s.a22),
        'a20_minus_a10': s.a20 - s.a10,
        'a10': s.a10,
        'a20': s.a20,
        'b10_slack': min(s.b11, s.b12) - s.b10,
        'b20_slack': min(s.b21, s.b22) - s.b20,
    }
    passed = (abs(margins['a21_minus_a11']) <= tol
              and abs(margins['a22_minus_a12']) <= tol
              and abs(margins['a20_minus_a10_balance']) <= tol
              and margins['a20_minus_a10'] >= -tol
              and margins['a10'] > tol
              and margins['a20'] > tol
              and margins['b10_slack'] >= -tol
              and margins['b20_slack'] >= -tol)
    return ConditionReport(label=Criterion.SKT_COROLLARY, passed=passed, margins=margins)


# Certificates

def vertex_limits(c):
    """Limits of s D^2h A as the point approaches each vertex of the triangle"""
    alpha11, alpha22, beta11, beta12, gamma22 = c.free_parameters
    a = alpha11 + beta11
    g = alpha22 + gamma22
    f1 = np.array([[alpha11, 0.0], [0.0, alpha22]])
    f2 = np.array([[a, a], [a, 2.0 * a - beta12]])
    f3 = np.array([[alpha11 + alpha22 + 2.0 * gamma22 - beta12, g], [g, g]])
    return f1, f2, f3


def vertex_path_points(s):
    """Barycentric triples (u1, u2, u3) on the three vertex-approach paths"""
    s = np.asarray(s, dtype=float)
    rest = 1.0 - 2.0 * s
    return ((s, s, rest), (rest, s, s), (s, rest, s))


def ha_values(c, u1, u2, u3):
    """Entries of D^2h A at barycentric points"""
    a11, a12, a21, a22 = diffusion_values(c, u1, u2)
    inv1 = 1.0 / np.asarray(u1, dtype=float)
    inv2 = 1.0 / np.asarray(u2, dtype=float)
    inv3 = 1.0 / np.asarray(u3, dtype=float)
    return ((inv1 + inv3) * a11 + inv3 * a21,
            (inv1 + inv3) * a12 + inv3 * a22,
            inv3 * a11 + (inv2 + inv3) * a21,
            inv3 * a12 + (inv2 + inv3) * a22)


def vertex_path_products(c, s):
    """s D^2h A on the three paths, with the factor s folded into the Hessian"""
    products = []
    for u1, u2, u3 in vertex_path_points(s):
        a11, a12, a21, a22 = diffusion_values(c, u1, u2)
        h11 = s / u1 + s / u3
        h12 = s / u3
        h22 = s / u2 + s / u3
        products.append(np.array([[h11 * a11 + h12 * a21, h11 * a12 + h12 * a22],
                                  [h12 * a11 + h22 * a21, h12 * a12 + h22 * a22]]))
    return tuple(products)


def boundary_det_A(c, edge, t):
    """
    det A on an edge of the triangle in factored form.

    edge 'u1=0' is parametrised by t = u2, edge 'u2=0' by t = u1 and the
    hypotenuse 'u3=0' by t = u1.
    """
    alpha11, alpha22, beta11, beta12, gamma22 = c.free_parameters
    t = np.asarray(t, dtype=float)
    if edge == 'u1=0':
        return (alpha22 + gamma22 * t) * (alpha11 + (gamma22 - beta12) * t)
    if edge == 'u2=0':
        return (alpha11 + beta11 * t) * (alpha22 * (1.0 - t) + (alpha11 + beta11 - beta12) * t)
    if edge == 'u3=0':
        return (((alpha22 + gamma22) * (1.0 - t) + (alpha11 + beta11) * t)
                * (alpha11 - beta12 + gamma22 + (beta11 - gamma22) * t))
    raise ValueError(f"unknown edge {edge!r}")


def hessian_det_A(c):
    """The constant Hessian of the quadratic polynomial det A(u)"""
    g11 = np.array([c.beta[0, 0], c.gamma[0, 0]])
    g12 = np.array([c.beta[0, 1], c.gamma[0, 1]])
    g21 = np.array([c.beta[1, 0], c.gamma[1, 0]])
    g22 = np.array([c.beta[1, 1], c.gamma[1, 1]])
    return (np.outer(g11, g22) + np.outer(g22, g11)) - (np.outer(g12, g21) + np.outer(g21, g12))


def det_hessian_certificate(c, tol=settings.CONDITION_TOL):
    _require_symmetric(c, tol, 'det_hessian_certificate')
    alpha11, alpha22, beta11, beta12, gamma22 = c.free_parameters
    return -(beta11 * beta12 + gamma22 * (alpha11 - alpha22 - beta12)) ** 2


def diagonal_polynomials(c, u1, u2, u3):
    """f1 = u1 u3 (D^2h A)_11 and f2 = u2 u3 (D^2h A)_22, both polynomial in u"""
    a11, a12, a21, a22 = diffusion_values(c, u1, u2)
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    u3 = np.asarray(u3, dtype=float)
    return (u1 + u3) * a11 + u1 * a21, u2 * a12 + (u2 + u3) * a22


def f1_polynomial(c, u2, u3):
    """f1 in its own coordinates (u2, u3), u1 = 1 - u2 - u3"""
    u1 = 1.0 - np.asarray(u2, dtype=float) - np.asarray(u3, dtype=float)
    return diagonal_polynomials(c, u1, u2, u3)[0]


def f2_polynomial(c, u1, u3):
    """f2 in its own coordinates (u1, u3), u2 = 1 - u1 - u3"""
    u2 = 1.0 - np.asarray(u1, dtype=float) - np.asarray(u3, dtype=float)
    return diagonal_polynomials(c, u1, u2, u3)[1]


def boundary_polynomials(c, edge, t):
    """
    Closed forms of f1 and f2 on the edges of their coordinate triangles.

    f1 lives in (u2, u3): 'f1:u1=0' (t = u2), 'f1:u2=0' (t = u3), 'f1:u3=0' (t = u2).
    f2 lives in (u1, u3): 'f2:u2=0' (t = u1), 'f2:u1=0' (t = u3), 'f2:u3=0' (t = u1).
    """
    alpha11, alpha22, beta11, beta12, gamma22 = c.free_parameters
    t = np.asarray(t, dtype=float)
    forms = {
        'f1:u1=0': lambda: (1.0 - t) * (alpha11 + (gamma22 - beta12) * t),
        'f1:u2=0': lambda: alpha11 + beta11 * (1.0 - t),
        'f1:u3=0': lambda: (1.0 - t) * ((alpha11 + beta11) * (1.0 - t) + (alpha22 + gamma22) * t),
        'f2:u1=0': lambda: alpha22 + gamma22 * (1.0 - t),
        'f2:u2=0': lambda: (1.0 - t) * (alpha22 * (1.0 - t) + (alpha11 + beta11 - beta12) * t),
        'f2:u3=0': lambda: (1.0 - t) * ((alpha22 + gamma22) * (1.0 - t) + (alpha11 + beta11) * t),
    }
    if edge not in forms:
        raise ValueError(f"unknown edge {edge!r}")
    return forms[edge]()


def laplacian_identity(c):
    """Laplacian of f1 in (u2, u3); the Laplacian of f2 in (u1, u3) is its negative"""
    alpha11, alpha22, beta11, _, gamma22 = c.free_parameters
    return 2.0 * (alpha11 - alpha22 + beta11 - gamma22)


# Spectral oracle

def symmetric_min_eigenvalue(m11, m12, m21, m22, det):
    """
    Smallest eigenvalue of the symmetric part of [[m11, m12], [m21, m22]].

    det is the determinant of the full matrix, supplied from an accurate
    closed form; the small eigenvalue is then det_sym / lambda_max, which
    keeps its accuracy when the entries are large.
    """
    half_trace = 0.5 * (m11 + m22)
    radius = np.hypot(0.5 * (m11 - m22), 0.5 * (m12 + m21))
    largest = half_trace + radius
    det_sym = det - (0.5 * (m12 - m21)) ** 2
    with np.errstate(divide='ignore', invalid='ignore'):
        stable = det_sym / largest
    return np.where(largest > 0, stable, half_trace - radius)


def ha_min_eigenvalues(c, u1, u2, u3, weighted=False):
    """lambda_min of sym(D^2h A), or of sym(L^-1/2 D^2h A L^-1/2) with L = diag(1/u1, 1/u2)"""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    u3 = np.asarray(u3, dtype=float)
    m11, m12, m21, m22 = ha_values(c, u1, u2, u3)
    det = det_A_values(c, u1, u2) * (u1 + u2 + u3) / (u1 * u2 * u3)
    if weighted:
        r1, r2 = np.sqrt(u1), np.sqrt(u2)
        m11, m12, m21, m22 = m11 * u1, m12 * r1 * r2, m21 * r1 * r2, m22 * u2
        det = det * u1 * u2
    return symmetric_min_eigenvalue(m11, m12, m21, m22, det)


def barycentric_grid(n, margin=ORACLE_MARGIN):
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing='ij')
    keep = i + j <= n
    i, j = i[keep].astype(float), j[keep].astype(float)
    k = n - i - j
    scale = (1.0 - 3.0 * margin) / n
    return margin + scale * i, margin + scale * j, margin + scale * k


def oracle_points(n, scales=PATH_SCALES):
    u1, u2, u3 = barycentric_grid(n)
    parts = [(u1, u2, u3)]
    for path in vertex_path_points(np.asarray(scales)):
        parts.append(path)
    return tuple(np.concatenate([np.atleast_1d(p[k]) for p in parts]) for k in range(3))


@dataclass(frozen=True)
class OracleScan:
    n: int
    unweighted_min: float
    unweighted_witness: StatePoint
    weighted_min: float
    weighted_witness: StatePoint
    points: int

    def to_dict(self):
        return {
            'n': self.n,
            'points': self.points,
            'unweighted_min': self.unweighted_min,
            'unweighted_witness': self.unweighted_witness.to_dict(),
            'weighted_min': self.weighted_min,
            'weighted_witness': self.weighted_witness.to_dict(),
        }


def spectral_oracle_scan(c, n=64):
    """Brute-force minimum of the quadratic form over a grid of the triangle plus the vertex paths"""
    if n < 8:
        raise ValueError("oracle resolution must be at least 8")
    u1, u2, u3 = oracle_points(n)
    results = []
    for weighted in (False, True):
        values = ha_min_eigenvalues(c, u1, u2, u3, weighted=weighted)
        k = int(np.argmin(values))
        results.append((float(values[k]), StatePoint(u1[k], u2[k], u3[k])))
    (plain_min, plain_at), (weighted_min, weighted_at) = results
    return OracleScan(n=n, unweighted_min=plain_min, unweighted_witness=plain_at,
                      weighted_min=weighted_min, weighted_witness=weighted_at, points=int(u1.size))


def psd_witness(c, scales=tuple(10.0 ** -k for k in range(1, 13))):
    """A point where D^2h A has a negative eigenvalue, searched along the vertex paths"""
    s = np.asarray(scales)
    best = None
    for u1, u2, u3 in vertex_path_points(s):
        values = ha_min_eigenvalues(c, u1, u2, u3)
        k = int(np.argmin(values))
        if values[k] < 0 and (best is None or values[k] < best[0]):
            best = (values[k], StatePoint(u1[k], u2[k], u3[k]))
    return best[1] if best is not None else None
