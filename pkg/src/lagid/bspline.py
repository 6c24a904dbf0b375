"""Clamped cubic B-spline basis evaluation with analytic derivatives.

A clamped cubic spline on [t0, t1] has boundary knots of multiplicity 4, so
the curve interpolates its first and last control points.  Basis values are
computed with the Cox-de Boor recursion; first derivatives use the standard
degree-lowering formula and second derivatives the four-term expansion in
terms of degree-1 basis functions.  Any fraction whose knot span has zero
width contributes 0 (the usual NURBS convention for repeated knots).

All objects here are immutable after construction and safe to share between
threads or processes.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

DEGREE = 3  # only cubic splines are supported by the public API


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, order="C")  # copy so we never freeze caller arrays
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class KnotVector:
    """Clamped knot vector for a degree-p spline.

    len(knots) = s + p + 2 where s + 1 is the number of basis functions.
    Boundary knots are repeated exactly p + 1 times; interior knots are
    strictly increasing.
    """

    knots: np.ndarray
    degree: int = DEGREE

    def __post_init__(self):
        object.__setattr__(self, "knots", _frozen(np.asarray(self.knots)))
        k, p = self.knots, self.degree
        if k.ndim != 1 or not np.all(np.isfinite(k)):
            raise DomainError("knot vector must be a finite 1-D sequence")
        if len(k) < 2 * (p + 1):
            raise DomainError("knot vector too short for degree %d" % p)
        if np.any(np.diff(k) < 0):
            raise DomainError("knots must be non-decreasing")
        if not (np.all(k[: p + 1] == k[0]) and np.all(k[-(p + 1):] == k[-1])):
            raise DomainError("boundary knots must have multiplicity %d" % (p + 1))
        if len(k) > 2 * (p + 1) and k[p + 1] == k[p]:
            raise DomainError("boundary multiplicity exceeds %d" % (p + 1))
        interior = k[p + 1: len(k) - p - 1]
        if interior.size and np.any(np.diff(np.concatenate([[k[p]], interior, [k[-1]]])) <= 0):
            raise DomainError("interior knots must be strictly increasing")

    @property
    def n_basis(self) -> int:
        """Number of basis functions (= number of control points per DOF)."""
        return len(self.knots) - self.degree - 1

    @property
    def t_start(self) -> float:
        return float(self.knots[0])

    @property
    def t_end(self) -> float:
        return float(self.knots[-1])


@dataclass(frozen=True)
class SplineModel:
    """Control points for one curve per degree of freedom.

    ``control`` has shape (s+1, n): column i holds the control points of
    DOF i.  The clamped curve interpolates the first and last rows.
    """

    knots: KnotVector
    control: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.control, dtype=float)
        if c.ndim != 2:
            raise ShapeError("control points must be a 2-D (s+1, n) array")
        if c.shape[0] != self.knots.n_basis:
            raise ShapeError(
                "control rows (%d) != basis count (%d)" % (c.shape[0], self.knots.n_basis)
            )
        object.__setattr__(self, "control", _frozen(c))

    @property
    def dof(self) -> int:
        return self.control.shape[1]


@dataclass(frozen=True)
class BasisMatrices:
    """Dense basis matrices N, dN, ddN evaluated at a set of parameters.

    Each row has at most degree+1 nonzero entries (local support); the dense
    layout is a convenience, not a contract.
    """

    N: np.ndarray
    dN: np.ndarray
    ddN: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        for name in ("N", "dN", "ddN", "times"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


@dataclass(frozen=True)
class LocalBasis:
    """Banded view of the basis at given parameters.

    Row t of the dense matrices is zero except at columns
    spans[t]-degree .. spans[t]; ``n``, ``dn``, ``ddn`` hold those
    degree+1 values.  This is the representation the optimizer consumes.
    """

    spans: np.ndarray
    n: np.ndarray
    dn: np.ndarray
    ddn: np.ndarray
    times: np.ndarray
    n_basis: int

    def __post_init__(self):
        for name in ("n", "dn", "ddn", "times"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        s = np.array(self.spans, dtype=np.int64)
        s.flags.writeable = False
        object.__setattr__(self, "spans", s)

    def dense(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = len(self.times)
        cols = self.spans[:, None] - DEGREE + np.arange(DEGREE + 1)[None, :]
        rows = np.repeat(np.arange(m)[:, None], DEGREE + 1, axis=1)
        out = []
        for band in (self.n, self.dn, self.ddn):
            dense = np.zeros((m, self.n_basis))
            dense[rows, cols] = band
            out.append(dense)
        return tuple(out)


def build_clamped_knots(t_start: float, t_end: float, n_interior: int) -> KnotVector:
    """Clamped cubic knot vector with uniformly spaced interior knots.

    Produces n_interior + 4 basis functions on [t_start, t_end].
    """
    if not (np.isfinite(t_start) and np.isfinite(t_end)):
        raise DomainError("knot bounds must be finite")
    if t_end <= t_start:
        raise DomainError("t_end must exceed t_start")
    if n_interior < 0:
        raise DomainError("n_interior must be >= 0")
    interior = np.linspace(t_start, t_end, n_interior + 2)[1:-1]
    knots = np.concatenate([[t_start] * (DEGREE + 1), interior, [t_end] * (DEGREE + 1)])
    return KnotVector(knots)


def _check_in_domain(kv: KnotVector, u: np.ndarray) -> None:
    bad = (u < kv.t_start) | (u > kv.t_end) | ~np.isfinite(u)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise DomainError(
            "parameter %r (index %d) outside knot range [%g, %g]"
            % (float(u.flat[idx]) if np.isfinite(u.flat[idx]) else u.flat[idx],
               idx, kv.t_start, kv.t_end)
        )


def find_spans(kv: KnotVector, u: np.ndarray) -> np.ndarray:
    """Knot span index j with knots[j] <= u < knots[j+1] for each parameter.

    The right endpoint is assigned to the last non-empty span so that the
    final basis function evaluates to 1 there.
    """
    k, p = kv.knots, kv.degree
    spans = np.searchsorted(k, u, side="right") - 1
    return np.clip(spans, p, len(k) - p - 2)


def _triangle(kv: KnotVector, spans: np.ndarray, u: np.ndarray) -> list[np.ndarray]:
    """Cox-de Boor triangle: tri[d][:, r] = N_{span-d+r, d}(u) for d = 0..p.

    Denominators are widths of non-empty spans and never vanish for valid
    span indices, so no guard is needed here.
    """
    k, p = kv.knots, kv.degree
    m = len(u)
    tri = [np.ones((m, 1))]
    left = np.empty((m, p))
    right = np.empty((m, p))
    for d in range(1, p + 1):
        left[:, d - 1] = u - k[spans - d + 1]
        right[:, d - 1] = k[spans + d] - u
        prev = tri[-1]
        cur = np.empty((m, d + 1))
        saved = np.zeros(m)
        for r in range(d):
            temp = prev[:, r] / (right[:, r] + left[:, d - 1 - r])
            cur[:, r] = saved + right[:, r] * temp
            saved = left[:, d - 1 - r] * temp
        cur[:, d] = saved
        tri.append(cur)
    return tri


def _safe_inv(width: np.ndarray) -> np.ndarray:
    # zero-width spans contribute 0 to the derivative formulas
    return np.where(width > 0.0, 1.0 / np.where(width > 0.0, width, 1.0), 0.0)


def _local_d1(kv: KnotVector, spans: np.ndarray, tri: list[np.ndarray]) -> np.ndarray:
    """First-derivative band: N'_{i,3} = 3 (N_{i,2}/(u_{i+3}-u_i) - N_{i+1,2}/(u_{i+4}-u_{i+1}))."""
    k = kv.knots
    m = len(spans)
    n2 = np.concatenate([np.zeros((m, 1)), tri[2], np.zeros((m, 1))], axis=1)
    i = spans[:, None] - DEGREE + np.arange(DEGREE + 1)[None, :]
    inv_a = _safe_inv(k[i + 3] - k[i])
    inv_b = _safe_inv(k[i + 4] - k[i + 1])
    return DEGREE * (n2[:, :DEGREE + 1] * inv_a - n2[:, 1:] * inv_b)


def _local_d2(kv: KnotVector, spans: np.ndarray, tri: list[np.ndarray]) -> np.ndarray:
    """Second-derivative band via the four-term p(p-1) expansion over N_{i,1}."""
    k = kv.knots
    m = len(spans)
    pp = DEGREE * (DEGREE - 1)
    n1 = np.concatenate(
        [np.zeros((m, 2)), tri[1], np.zeros((m, 2))], axis=1
    )  # columns r: N_{span-3+r, 1}, r = 0..5
    i = spans[:, None] - DEGREE + np.arange(DEGREE + 1)[None, :]
    w30 = k[i + 3] - k[i]
    w20 = k[i + 2] - k[i]
    w31 = k[i + 3] - k[i + 1]
    w41 = k[i + 4] - k[i + 1]
    w42 = k[i + 4] - k[i + 2]
    t1 = pp * _safe_inv(w30) * _safe_inv(w20) * n1[:, 0:4]
    t2 = pp * _safe_inv(w30) * _safe_inv(w31) * n1[:, 1:5]
    t3 = pp * _safe_inv(w41) * _safe_inv(w31) * n1[:, 1:5]
    t4 = pp * _safe_inv(w41) * _safe_inv(w42) * n1[:, 2:6]
    return t1 - t2 - t3 + t4


def local_basis(kv: KnotVector, times) -> LocalBasis:
    """Evaluate the degree-3 band of N, N', N'' at each time."""
    u = np.atleast_1d(np.asarray(times, dtype=float))
    _check_in_domain(kv, u)
    spans = find_spans(kv, u)
    tri = _triangle(kv, spans, u)
    return LocalBasis(
        spans=spans,
        n=tri[DEGREE],
        dn=_local_d1(kv, spans, tri),
        ddn=_local_d2(kv, spans, tri),
        times=u,
        n_basis=kv.n_basis,
    )


def _scatter_row(kv: KnotVector, span: int, band: np.ndarray) -> np.ndarray:
    out = np.zeros(kv.n_basis)
    out[span - DEGREE: span + 1] = band
    return out


def eval_basis(kv: KnotVector, u: float) -> np.ndarray:
    """All s+1 basis values at parameter u (at most 4 are nonzero)."""
    lb = local_basis(kv, [u])
    return _scatter_row(kv, int(lb.spans[0]), lb.n[0])


def eval_basis_d1(kv: KnotVector, u: float) -> np.ndarray:
    """All s+1 first-derivative values at parameter u."""
    lb = local_basis(kv, [u])
    return _scatter_row(kv, int(lb.spans[0]), lb.dn[0])


def eval_basis_d2(kv: KnotVector, u: float) -> np.ndarray:
    """All s+1 second-derivative values at parameter u."""
    lb = local_basis(kv, [u])
    return _scatter_row(kv, int(lb.spans[0]), lb.ddn[0])


def assemble_matrices(kv: KnotVector, times) -> BasisMatrices:
    """Dense N, dN, ddN with one row per requested time."""
    lb = local_basis(kv, times)
    N, dN, ddN = lb.dense()
    return BasisMatrices(N=N, dN=dN, ddN=ddN, times=lb.times)


def eval_curve(model: SplineModel, B: BasisMatrices):
    """Curve and derivatives from control points: q = N P, qd = dN P, qdd = ddN P."""
    if B.N.shape[1] != model.control.shape[0]:
        raise ShapeError(
            "basis columns (%d) != control rows (%d)"
            % (B.N.shape[1], model.control.shape[0])
        )
    return B.N @ model.control, B.dN @ model.control, B.ddN @ model.control


def greville_abscissae(kv: KnotVector) -> np.ndarray:
    """Greville points: averaging the knots recovers affine curves exactly."""
    k, p = kv.knots, kv.degree
    return np.array([k[i + 1: i + p + 1].mean() for i in range(kv.n_basis)])


def default_control_count(n_meas: int) -> int:
    """Default control-point count: one per 2 measurement samples, floor 16.

    Knot spacing at the default 100 Hz measurement rate is then 20 ms,
    enough to track the fastest benchmark accelerations; halving the
    resolution visibly attenuates identified coefficients on the faster
    systems.
    """
    return max(16, n_meas // 2)
