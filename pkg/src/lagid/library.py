"""Candidate-function library for Lagrangian identification.

A candidate term is a product of scalar factors in the generalized
coordinates q and velocities qd: monomials q_i^a and qd_i^b, sines/cosines
of one angle or of an angle difference (optionally raised to a power), and
smoothed inverse-distance wells used for magnet attraction.  For each term
we need not just the value but the specific partial derivatives entering
the expanded Euler-Lagrange operator:

    EL(phi) = (d2 phi/dqd dqd) qdd + (d2 phi/dqd dq) qd - dphi/dq

so a term evaluation produces a jet (value, grad_q, grad_qd, velocity
Hessian, mixed velocity/position partial).  Jets are assembled from
per-factor analytic rules with leave-one-out products, which keeps them
exact and free of divisions by possibly-zero factor values.

Everything is written against a pluggable array namespace ``xp`` so the
same code runs under numpy (reference path, tests) and jax.numpy (inside
the jitted optimizer).
"""

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

QVar = tuple[str, int]  # ('q', i) or ('qd', i)


# ---------------------------------------------------------------------------
# factors

@dataclass(frozen=True)
class PolyFactor:
    """x^power where x is one coordinate ('q') or velocity ('qd')."""

    kind: str
    index: int
    power: int = 1

    def __post_init__(self):
        if self.kind not in ("q", "qd"):
            raise ConfigError("poly factor kind must be 'q' or 'qd'")
        if self.index < 0 or self.power < 1:
            raise ConfigError("poly factor needs index >= 0 and power >= 1")

    def variables(self) -> tuple[QVar, ...]:
        return ((self.kind, self.index),)

    def _x(self, q, qd):
        return (q if self.kind == "q" else qd)[:, self.index]

    def value(self, q, qd, xp):
        return self._x(q, qd) ** self.power

    def partial(self, q, qd, xp, var):
        if var != (self.kind, self.index):
            return None
        x = self._x(q, qd)
        if self.power == 1:
            return xp.ones_like(x)
        return float(self.power) * x ** (self.power - 1)

    def partial2(self, q, qd, xp, va, vb):
        mine = (self.kind, self.index)
        if va != mine or vb != mine or self.power < 2:
            return None
        x = self._x(q, qd)
        c = float(self.power * (self.power - 1))
        if self.power == 2:
            return c * xp.ones_like(x)
        return c * x ** (self.power - 2)

    def label(self) -> str:
        base = "%s%d" % (self.kind, self.index)
        return base if self.power == 1 else "%s^%d" % (base, self.power)


@dataclass(frozen=True)
class TrigFactor:
    """sin/cos of q_i (or q_i - q_j when index2 is set), raised to a power."""

    fn: str
    index: int
    index2: int | None = None
    power: int = 1

    def __post_init__(self):
        if self.fn not in ("sin", "cos"):
            raise ConfigError("trig factor fn must be 'sin' or 'cos'")
        if self.index < 0 or self.power < 1:
            raise ConfigError("trig factor needs index >= 0 and power >= 1")
        if self.index2 is not None and self.index2 == self.index:
            raise ConfigError("trig difference needs two distinct coordinates")

    def variables(self) -> tuple[QVar, ...]:
        if self.index2 is None:
            return (("q", self.index),)
        return (("q", self.index), ("q", self.index2))

    def _sign(self, var) -> float:
        return 1.0 if var == ("q", self.index) else -1.0

    def _g_dg(self, q, xp):
        arg = q[:, self.index]
        if self.index2 is not None:
            arg = arg - q[:, self.index2]
        if self.fn == "sin":
            return xp.sin(arg), xp.cos(arg)
        s = xp.sin(arg)
        return xp.cos(arg), -s

    def value(self, q, qd, xp):
        g, _ = self._g_dg(q, xp)
        return g ** self.power

    def partial(self, q, qd, xp, var):
        if var not in self.variables():
            return None
        g, dg = self._g_dg(q, xp)
        p = self.power
        out = dg if p == 1 else float(p) * g ** (p - 1) * dg
        return self._sign(var) * out

    def partial2(self, q, qd, xp, va, vb):
        if va not in self.variables() or vb not in self.variables():
            return None
        g, dg = self._g_dg(q, xp)
        p = self.power
        if p == 1:
            core = -g  # (sin)'' = -sin, (cos)'' = -cos
        else:
            core = float(p * (p - 1)) * g ** (p - 2) * dg**2 - float(p) * g**p
        return self._sign(va) * self._sign(vb) * core

    def label(self) -> str:
        arg = "q%d" % self.index
        if self.index2 is not None:
            arg += "-q%d" % self.index2
        base = "%s(%s)" % (self.fn, arg)
        return base if self.power == 1 else "%s^%d" % (base, self.power)


@dataclass(frozen=True)
class WellFactor:
    """((q_ix - ax)^2 + (q_iy - ay)^2 + h^2)^(-1/2), a smoothed point well.

    h > 0 keeps the radicand positive everywhere, so the factor is smooth
    on all of configuration space.
    """

    ix: int
    iy: int
    ax: float
    ay: float
    h: float

    def __post_init__(self):
        if self.ix == self.iy or self.ix < 0 or self.iy < 0:
            raise ConfigError("well factor needs two distinct coordinate indices")
        if not self.h > 0.0:
            raise DomainError("well factor needs h > 0 (radicand must stay positive)")

    def variables(self) -> tuple[QVar, ...]:
        return (("q", self.ix), ("q", self.iy))

    def _parts(self, q, xp):
        dx = q[:, self.ix] - self.ax
        dy = q[:, self.iy] - self.ay
        w = 1.0 / xp.sqrt(dx * dx + dy * dy + self.h * self.h)
        return dx, dy, w

    def value(self, q, qd, xp):
        _, _, w = self._parts(q, xp)
        return w

    def partial(self, q, qd, xp, var):
        if var not in self.variables():
            return None
        dx, dy, w = self._parts(q, xp)
        d = dx if var == ("q", self.ix) else dy
        return -d * w**3

    def partial2(self, q, qd, xp, va, vb):
        if va not in self.variables() or vb not in self.variables():
            return None
        dx, dy, w = self._parts(q, xp)
        da = dx if va == ("q", self.ix) else dy
        db = dx if vb == ("q", self.ix) else dy
        out = 3.0 * da * db * w**5
        if va == vb:
            out = out - w**3
        return out

    def label(self) -> str:
        return "well(q%d,q%d;%r,%r,%r)" % (self.ix, self.iy, self.ax, self.ay, self.h)


# ---------------------------------------------------------------------------
# terms and libraries

@dataclass(frozen=True)
class CandidateTerm:
    """Product of factors; its name is the canonical factor-string form."""

    factors: tuple

    def __post_init__(self):
        if not self.factors:
            raise ConfigError("candidate term needs at least one factor")
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def name(self) -> str:
        return "*".join(f.label() for f in self.factors)

    def max_index(self) -> int:
        return max(i for f in self.factors for _, i in f.variables())


@dataclass(frozen=True)
class CandidateLibrary:
    """Ordered candidate terms over n degrees of freedom.

    Order is load-bearing: coefficient vectors index into it.  Builders
    keep the library minimally complete (no affinely dependent pairs such
    as sin^2 and cos^2 of the same angle alongside each other).
    """

    terms: tuple
    dof: int

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ConfigError("library needs at least one term")
        if self.dof < 1:
            raise ConfigError("library dof must be >= 1")
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ConfigError("duplicate library terms: %s" % ", ".join(dup))
        too_big = [t.name for t in self.terms if t.max_index() >= self.dof]
        if too_big:
            raise ConfigError(
                "terms reference coordinates beyond dof=%d: %s"
                % (self.dof, ", ".join(too_big))
            )

    @property
    def size(self) -> int:
        return len(self.terms)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.terms)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError("library has no term named %r" % name) from None

    def to_lines(self) -> list[str]:
        return [t.name for t in self.terms]

    @classmethod
    def from_lines(cls, lines, dof: int) -> "CandidateLibrary":
        terms = tuple(parse_term(s) for s in lines if s.strip())
        return cls(terms=terms, dof=dof)


@dataclass
class TermJet:
    """One term's value and EL-relevant partials at a single (q, qd) point.

    mixed_q_qd[a, b] = d2(phi) / (dqd_a dq_b), the orientation that
    multiplies qd on the right in the expanded Euler-Lagrange operator.
    """

    value: float
    grad_q: np.ndarray
    grad_qd: np.ndarray
    hess_qd_qd: np.ndarray
    mixed_q_qd: np.ndarray


@dataclass
class LibraryJet:
    """Batched jets: leading axis is the term, second the sample point."""

    values: object        # (K, N)
    grad_q: object        # (K, N, n)
    grad_qd: object       # (K, N, n)
    hess_qd_qd: object    # (K, N, n, n)
    mixed_q_qd: object    # (K, N, n, n)
    names: tuple[str, ...] = field(default=())

    def jet_at(self, k: int, t: int) -> TermJet:
        return TermJet(
            value=float(self.values[k, t]),
            grad_q=np.asarray(self.grad_q[k, t]),
            grad_qd=np.asarray(self.grad_qd[k, t]),
            hess_qd_qd=np.asarray(self.hess_qd_qd[k, t]),
            mixed_q_qd=np.asarray(self.mixed_q_qd[k, t]),
        )


# ---------------------------------------------------------------------------
# jet assembly

def _prod_excluding(vals, skip, template, xp):
    out = None
    for i, v in enumerate(vals):
        if i in skip:
            continue
        out = v if out is None else out * v
    if out is None:
        return xp.ones_like(template)
    return out


def _term_jet_batch(term: CandidateTerm, q, qd, xp):
    """Value, grads and second partials of a factor product over a batch.

    Product rule with leave-one/two-out partial products; factors that do
    not depend on a variable are skipped rather than multiplied by zero.
    """
    n = q.shape[1]
    factors = term.factors
    template = q[:, 0]
    vals = [f.value(q, qd, xp) for f in factors]
    loo = [_prod_excluding(vals, {m}, template, xp) for m in range(len(factors))]
    value = vals[0] * loo[0]
    zero = xp.zeros_like(template)

    d1 = []  # per factor: {var: partial}
    for m, f in enumerate(factors):
        d1.append({v: f.partial(q, qd, xp, v) for v in f.variables()})

    def first(var):
        acc = zero
        for m, f in enumerate(factors):
            p = d1[m].get(var)
            if p is not None:
                acc = acc + p * loo[m]
        return acc

    def second(va, vb):
        acc = zero
        for m, f in enumerate(factors):
            p2 = f.partial2(q, qd, xp, va, vb)
            if p2 is not None:
                acc = acc + p2 * loo[m]
        for m in range(len(factors)):
            pa = d1[m].get(va)
            if pa is None:
                continue
            for mm in range(len(factors)):
                if mm == m:
                    continue
                pb = d1[mm].get(vb)
                if pb is None:
                    continue
                acc = acc + pa * pb * _prod_excluding(vals, {m, mm}, template, xp)
        return acc

    grad_q = xp.stack([first(("q", b)) for b in range(n)], axis=-1)
    grad_qd = xp.stack([first(("qd", b)) for b in range(n)], axis=-1)
    hess = xp.stack(
        [xp.stack([second(("qd", a), ("qd", b)) for b in range(n)], axis=-1)
         for a in range(n)],
        axis=-2,
    )
    mixed = xp.stack(
        [xp.stack([second(("qd", a), ("q", b)) for b in range(n)], axis=-1)
         for a in range(n)],
        axis=-2,
    )
    return value, grad_q, grad_qd, hess, mixed


def _check_batch(q, qd, dof=None):
    q = np.asarray(q) if not hasattr(q, "shape") else q
    if q.ndim != 2 or qd.ndim != 2 or q.shape != qd.shape:
        raise ShapeError("q and qd must both have shape (N, n)")
    if dof is not None and q.shape[1] != dof:
        raise ShapeError("batch has %d coordinates, library has %d" % (q.shape[1], dof))


def eval_jet(term: CandidateTerm, q, qdot) -> TermJet:
    """Jet of one term at a single point; q and qdot are n-vectors."""
    q1 = np.asarray(q, dtype=float)[None, :]
    qd1 = np.asarray(qdot, dtype=float)[None, :]
    if q1.shape != qd1.shape or q1.ndim != 2:
        raise ShapeError("q and qdot must be n-vectors of equal length")
    if term.max_index() >= q1.shape[1]:
        raise ShapeError("term %r references coordinates beyond n=%d" % (term.name, q1.shape[1]))
    value, gq, gqd, hess, mixed = _term_jet_batch(term, q1, qd1, np)
    return TermJet(
        value=float(value[0]),
        grad_q=gq[0],
        grad_qd=gqd[0],
        hess_qd_qd=hess[0],
        mixed_q_qd=mixed[0],
    )


def eval_library(lib: CandidateLibrary, q, qdot, xp=np) -> LibraryJet:
    """Jets of every library term over a batch of (q, qd) rows."""
    if xp is np:
        q = np.asarray(q, dtype=float)
        qdot = np.asarray(qdot, dtype=float)
    _check_batch(q, qdot, lib.dof)
    parts = [_term_jet_batch(t, q, qdot, xp) for t in lib.terms]
    return LibraryJet(
        values=xp.stack([p[0] for p in parts]),
        grad_q=xp.stack([p[1] for p in parts]),
        grad_qd=xp.stack([p[2] for p in parts]),
        hess_qd_qd=xp.stack([p[3] for p in parts]),
        mixed_q_qd=xp.stack([p[4] for p in parts]),
        names=lib.names,
    )


# ---------------------------------------------------------------------------
# term-string grammar

_POLY_RE = re.compile(r"^(qd?)(\d+)(?:\^(\d+))?$")
_TRIG_RE = re.compile(r"^(sin|cos)\(q(\d+)(?:-q(\d+))?\)(?:\^(\d+))?$")
_WELL_RE = re.compile(
    r"^well\(q(\d+),q(\d+);([^,;]+),([^,;]+),([^,;)]+)\)$"
)

_FLOAT_RE = r"[-+0-9.eE]+"


def parse_factor(s: str):
    s = s.strip()
    m = _POLY_RE.match(s)
    if m:
        kind, idx, pw = m.group(1), int(m.group(2)), m.group(3)
        return PolyFactor(kind=kind, index=idx, power=int(pw) if pw else 1)
    m = _TRIG_RE.match(s)
    if m:
        fn, i, j, pw = m.group(1), int(m.group(2)), m.group(3), m.group(4)
        return TrigFactor(
            fn=fn, index=i, index2=int(j) if j is not None else None,
            power=int(pw) if pw else 1,
        )
    m = _WELL_RE.match(s)
    if m:
        try:
            ax, ay, h = (float(m.group(g)) for g in (3, 4, 5))
        except ValueError:
            raise ConfigError("bad well parameters in factor %r" % s) from None
        return WellFactor(ix=int(m.group(1)), iy=int(m.group(2)), ax=ax, ay=ay, h=h)
    raise ConfigError("cannot parse factor %r" % s)


def parse_term(s: str) -> CandidateTerm:
    chunks = _split_factors(s)
    return CandidateTerm(factors=tuple(parse_factor(c) for c in chunks))


def _split_factors(s: str) -> list[str]:
    # '*' only separates factors at paren depth 0 (well params contain none,
    # but guard anyway)
    out, depth, cur = [], 0, []
    for ch in s.strip():
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "*" and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    if any(not c.strip() for c in out):
        raise ConfigError("empty factor in term %r" % s)
    return out


def format_term(term: CandidateTerm) -> str:
    return term.name


# ---------------------------------------------------------------------------
# per-system libraries

def default_magnet_positions() -> np.ndarray:
    """Three magnets on the unit circle at the corners of an equilateral triangle."""
    r3 = np.sqrt(3.0) / 2.0
    return np.array([[1.0, 0.0], [-0.5, r3], [-0.5, -r3]])


def _terms(names) -> tuple:
    return tuple(parse_term(s) for s in names)


def _magnet_term_names(positions, height) -> list[str]:
    return [
        WellFactor(ix=0, iy=1, ax=float(x), ay=float(y), h=float(height)).label()
        for x, y in positions
    ]


def build_system_library(system, params: dict | None = None) -> CandidateLibrary:
    """Candidate library for one of the benchmark systems.

    ``system`` is a system id string or any object with ``id`` and
    ``params`` attributes.  Libraries contain every term of the true
    Lagrangian plus a few distractors of the same factor families, with
    affinely dependent pairs excluded (e.g. no spring terms (x-d)^2 next to
    {x^2, x}, and never sin^2 and cos^2 of the same angle together).
    """
    if hasattr(system, "id"):
        params = dict(getattr(system, "params", {}) or {})
        system = system.id
    params = params or {}

    if system == "single_pendulum":
        names = ["qd0^2", "cos(q0)", "sin(q0)", "q0^2", "qd0^2*cos(q0)", "sin(q0)*qd0"]
        return CandidateLibrary(terms=_terms(names), dof=1)
    if system == "double_pendulum":
        names = [
            "qd0^2", "qd1^2", "qd0*qd1*cos(q0-q1)", "cos(q0)", "cos(q1)",
            "cos(q0-q1)", "qd0*qd1", "sin(q0-q1)",
        ]
        return CandidateLibrary(terms=_terms(names), dof=2)
    if system == "spherical_pendulum":
        names = [
            "qd0^2", "sin(q0)^2*qd1^2", "cos(q0)",
            "qd1^2", "sin(q0)", "sin(q0)*qd1^2", "qd0*qd1",
        ]
        return CandidateLibrary(terms=_terms(names), dof=2)
    if system == "chaos_pendulum":
        names = [
            "qd0^2", "qd1^2", "qd0*qd1*cos(q0-q1)", "cos(q0)", "cos(q1)",
            "cos(q0-q1)", "qd0*qd1", "sin(q1)",
        ]
        return CandidateLibrary(terms=_terms(names), dof=2)
    if system == "cart_spring_pendulum":
        names = [
            "qd0^2", "qd1^2", "qd0*qd1*cos(q1)", "cos(q1)", "q0^2", "q0",
            "sin(q1)", "q0*qd0",
        ]
        return CandidateLibrary(terms=_terms(names), dof=2)
    if system == "spherical_spring_pendulum":
        names = [
            "qd0^2", "q0^2*qd1^2", "q0^2*sin(q1)^2*qd2^2", "q0*cos(q1)",
            "q0^2", "q0", "cos(q1)", "qd1^2",
        ]
        return CandidateLibrary(terms=_terms(names), dof=3)
    if system == "magnetic_pendulum":
        positions = np.asarray(params.get("magnet_positions", default_magnet_positions()))
        height = float(params.get("plane_distance", 0.3))
        names = (
            ["qd0^2", "qd1^2"]
            + _magnet_term_names(positions, height)
            + ["q0^2", "q1^2", "q0", "q1"]
        )
        return CandidateLibrary(terms=_terms(names), dof=2)
    raise ConfigError("unknown system id %r" % system)
