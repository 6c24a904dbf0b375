"""Candidate-term jets: analytic partials vs. finite differences.

Second partials are checked against central differences of the analytic
first partials, so the product-rule assembly is exercised independently of
the per-factor rules.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lagid.errors import ConfigError, DomainError, ShapeError
from lagid.library import (
    CandidateLibrary,
    CandidateTerm,
    PolyFactor,
    TrigFactor,
    WellFactor,
    build_system_library,
    default_magnet_positions,
    eval_jet,
    eval_library,
    format_term,
    parse_term,
)

ALL_SYSTEMS = [
    "single_pendulum",
    "double_pendulum",
    "spherical_pendulum",
    "chaos_pendulum",
    "cart_spring_pendulum",
    "spherical_spring_pendulum",
    "magnetic_pendulum",
]


def fd_jet(term, q, qd, h=1e-6):
    """Finite-difference surrogate for every jet component."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    n = len(q)

    def value(q_, qd_):
        return eval_jet(term, q_, qd_).value

    def bump(x, i, s):
        y = x.copy()
        y[i] += s
        return y

    grad_q = np.array([(value(bump(q, b, h), qd) - value(bump(q, b, -h), qd)) / (2 * h)
                       for b in range(n)])
    grad_qd = np.array([(value(q, bump(qd, a, h)) - value(q, bump(qd, a, -h))) / (2 * h)
                        for a in range(n)])
    hess = np.empty((n, n))
    mixed = np.empty((n, n))
    for b in range(n):
        gp = eval_jet(term, q, bump(qd, b, h)).grad_qd
        gm = eval_jet(term, q, bump(qd, b, -h)).grad_qd
        hess[:, b] = (gp - gm) / (2 * h)
        gp = eval_jet(term, bump(q, b, h), qd).grad_qd
        gm = eval_jet(term, bump(q, b, -h), qd).grad_qd
        mixed[:, b] = (gp - gm) / (2 * h)
    return grad_q, grad_qd, hess, mixed


def assert_jet_matches_fd(term, q, qd):
    jet = eval_jet(term, q, qd)
    grad_q, grad_qd, hess, mixed = fd_jet(term, q, qd)
    kw = dict(rtol=1e-6, atol=2e-6)
    np.testing.assert_allclose(jet.grad_q, grad_q, **kw)
    np.testing.assert_allclose(jet.grad_qd, grad_qd, **kw)
    np.testing.assert_allclose(jet.hess_qd_qd, hess, **kw)
    np.testing.assert_allclose(jet.mixed_q_qd, mixed, **kw)


# --- closed-form spot checks ---

def test_quadratic_velocity_term():
    jet = eval_jet(parse_term("qd0^2"), [0.3], [2.0])
    assert jet.value == pytest.approx(4.0)
    assert jet.grad_qd[0] == pytest.approx(4.0)
    assert jet.hess_qd_qd[0, 0] == pytest.approx(2.0)
    assert jet.grad_q[0] == 0.0
    assert jet.mixed_q_qd[0, 0] == 0.0


def test_cosine_term():
    term = parse_term("cos(q0)")
    jet = eval_jet(term, [0.0], [0.0])
    assert jet.value == pytest.approx(1.0)
    assert jet.grad_q[0] == pytest.approx(0.0)
    jet = eval_jet(term, [np.pi / 2], [0.0])
    assert jet.grad_q[0] == pytest.approx(-1.0)


def test_coupled_velocity_angle_term():
    # phi = qd0*qd1*cos(q0-q1): the double-pendulum coupling term
    term = parse_term("qd0*qd1*cos(q0-q1)")
    q = np.array([0.7, -0.4])
    qd = np.array([1.3, -0.8])
    jet = eval_jet(term, q, qd)
    c, s = np.cos(q[0] - q[1]), np.sin(q[0] - q[1])
    assert jet.value == pytest.approx(qd[0] * qd[1] * c)
    np.testing.assert_allclose(jet.hess_qd_qd, [[0, c], [c, 0]], atol=1e-14)
    np.testing.assert_allclose(
        jet.mixed_q_qd,
        [[-qd[1] * s, qd[1] * s], [-qd[0] * s, qd[0] * s]],
        atol=1e-14,
    )
    assert_jet_matches_fd(term, q, qd)


def test_well_term_against_closed_form():
    term = CandidateTerm(factors=(WellFactor(ix=0, iy=1, ax=0.5, ay=-0.2, h=0.3),))
    q = np.array([0.1, 0.4])
    jet = eval_jet(term, q, [0.0, 0.0])
    r2 = (q[0] - 0.5) ** 2 + (q[1] + 0.2) ** 2 + 0.09
    assert jet.value == pytest.approx(r2 ** -0.5)
    np.testing.assert_allclose(
        jet.grad_q, [-(q[0] - 0.5) * r2**-1.5, -(q[1] + 0.2) * r2**-1.5]
    )
    assert np.all(jet.grad_qd == 0) and np.all(jet.hess_qd_qd == 0)


# --- finite-difference sweep over every benchmark library ---

@pytest.mark.parametrize("system", ALL_SYSTEMS)
def test_all_library_terms_match_fd(system):
    lib = build_system_library(system)
    rng = np.random.default_rng(hash(system) % 2**32)
    for term in lib.terms:
        for _ in range(6):
            q = rng.uniform(-1.5, 1.5, size=lib.dof)
            qd = rng.uniform(-1.5, 1.5, size=lib.dof)
            assert_jet_matches_fd(term, q, qd)


# --- random term composition ---

_factor = st.one_of(
    st.builds(PolyFactor,
              kind=st.sampled_from(["q", "qd"]),
              index=st.integers(0, 1),
              power=st.integers(1, 3)),
    st.builds(TrigFactor,
              fn=st.sampled_from(["sin", "cos"]),
              index=st.just(0),
              index2=st.sampled_from([None, 1]),
              power=st.integers(1, 2)),
    st.builds(WellFactor,
              ix=st.just(0), iy=st.just(1),
              ax=st.floats(-1.0, 1.0), ay=st.floats(-1.0, 1.0),
              h=st.floats(0.25, 1.0)),
)


@given(st.lists(_factor, min_size=1, max_size=3),
       st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4))
@settings(max_examples=150, deadline=None)
def test_random_products_match_fd(factors, point):
    term = CandidateTerm(factors=tuple(factors))
    q, qd = np.array(point[:2]), np.array(point[2:])
    assert_jet_matches_fd(term, q, qd)
    jet = eval_jet(term, q, qd)
    np.testing.assert_allclose(jet.hess_qd_qd, jet.hess_qd_qd.T, atol=1e-12)
    # canonical string round-trips to the same term
    assert parse_term(format_term(term)) == term


# --- batched evaluation ---

def test_batch_matches_pointwise_loop():
    lib = build_system_library("double_pendulum")
    rng = np.random.default_rng(7)
    Q = rng.uniform(-2, 2, size=(11, 2))
    Qd = rng.uniform(-2, 2, size=(11, 2))
    batch = eval_library(lib, Q, Qd)
    assert batch.values.shape == (lib.size, 11)
    for k, term in enumerate(lib.terms):
        for t in range(11):
            one = eval_jet(term, Q[t], Qd[t])
            got = batch.jet_at(k, t)
            np.testing.assert_array_equal(got.value, one.value)
            np.testing.assert_array_equal(got.grad_q, one.grad_q)
            np.testing.assert_array_equal(got.hess_qd_qd, one.hess_qd_qd)
            np.testing.assert_array_equal(got.mixed_q_qd, one.mixed_q_qd)


def test_empty_batch():
    lib = build_system_library("single_pendulum")
    batch = eval_library(lib, np.zeros((0, 1)), np.zeros((0, 1)))
    assert batch.values.shape == (lib.size, 0)


def test_single_pendulum_library_values():
    lib = build_system_library("single_pendulum")
    batch = eval_library(lib, np.array([[0.0]]), np.array([[1.0]]))
    vals = {name: batch.values[k, 0] for k, name in enumerate(lib.names)}
    assert vals["qd0^2"] == pytest.approx(1.0)
    assert vals["cos(q0)"] == pytest.approx(1.0)


def test_weighted_sum_is_linear_in_coefficients():
    lib = build_system_library("chaos_pendulum")
    rng = np.random.default_rng(3)
    Q, Qd = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    lam = rng.normal(size=lib.size)
    jets = eval_library(lib, Q, Qd)
    combined = np.einsum("k,kna->na", lam, jets.grad_q)
    manual = sum(lam[k] * jets.grad_q[k] for k in range(lib.size))
    np.testing.assert_allclose(combined, manual, rtol=1e-13)


def test_batch_shape_errors():
    lib = build_system_library("single_pendulum")
    with pytest.raises(ShapeError):
        eval_library(lib, np.zeros((4, 2)), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        eval_library(lib, np.zeros((4, 1)), np.zeros((3, 1)))
    with pytest.raises(ShapeError):
        eval_jet(parse_term("q2^2"), [0.0], [0.0])


# --- library construction ---

def test_benchmark_library_contents():
    single = build_system_library("single_pendulum")
    assert single.size >= 6 and single.dof == 1
    assert {"qd0^2", "cos(q0)"} <= set(single.names)

    double = build_system_library("double_pendulum")
    assert {"qd0^2", "qd1^2", "qd0*qd1*cos(q0-q1)", "cos(q0)", "cos(q1)"} <= set(double.names)

    mag = build_system_library("magnetic_pendulum")
    assert {"qd0^2", "qd1^2", "q0^2", "q1^2"} <= set(mag.names)
    assert sum(n.startswith("well(") for n in mag.names) == 3


def test_no_redundant_trig_pairs():
    # minimal-completeness exclusion: no sin^2/cos^2 of one angle together
    for system in ALL_SYSTEMS:
        names = build_system_library(system).names
        for n in range(3):
            both = {"sin(q%d)^2" % n, "cos(q%d)^2" % n}
            assert not all(any(b in name for name in names) for b in both)


def test_magnet_library_uses_configured_geometry():
    pos = [[0.0, 2.0], [2.0, 0.0], [-2.0, 0.0]]
    lib = build_system_library(
        "magnetic_pendulum", {"magnet_positions": pos, "plane_distance": 0.5}
    )
    wells = [t for t in lib.terms for f in t.factors if isinstance(f, WellFactor)]
    assert len(wells) == 3
    assert wells[0].factors[0].ay == 2.0 and wells[0].factors[0].h == 0.5


def test_library_round_trips_through_text():
    for system in ALL_SYSTEMS:
        lib = build_system_library(system)
        again = CandidateLibrary.from_lines(lib.to_lines(), dof=lib.dof)
        assert again.names == lib.names
        assert again == lib


def test_default_magnet_positions_are_equilateral():
    pos = default_magnet_positions()
    d01 = np.linalg.norm(pos[0] - pos[1])
    d12 = np.linalg.norm(pos[1] - pos[2])
    d20 = np.linalg.norm(pos[2] - pos[0])
    np.testing.assert_allclose([d01, d12], [d12, d20], rtol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(pos, axis=1), 1.0, rtol=1e-12)


def test_validation_errors():
    with pytest.raises(ConfigError):
        build_system_library("triple_pendulum")
    with pytest.raises(ConfigError):
        parse_term("q0**2")
    with pytest.raises(ConfigError):
        parse_term("tan(q0)")
    with pytest.raises(ConfigError):
        parse_term("qd0*")
    with pytest.raises(ConfigError):  # duplicate names
        CandidateLibrary(terms=_two_same(), dof=1)
    with pytest.raises(ConfigError):  # coordinate beyond dof
        CandidateLibrary(terms=(parse_term("q1^2"),), dof=1)
    with pytest.raises(DomainError):
        WellFactor(ix=0, iy=1, ax=0.0, ay=0.0, h=0.0)
    with pytest.raises(ConfigError):
        TrigFactor(fn="sin", index=0, index2=0)


def _two_same():
    return (parse_term("qd0^2"), parse_term("qd0^2"))
