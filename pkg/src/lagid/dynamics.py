"""Benchmark mechanical systems and trajectory data generation.

Seven second-order systems with known sparse Lagrangians: three driven by
recorded external forces (single, double, spherical pendulum) and four
conservative ones where one kinetic term is treated as known and its
coefficient normalized to 1 (chaotic double pendulum with offset pivots,
cart with spring and pendulum, spherical spring pendulum, magnetic
pendulum).  Trajectories come from fixed-step RK4 on the state (q, qd);
the right-hand side solves M(q) qdd = f - gyro + grad_q L with M and the
gyroscopic term assembled from library jets, so simulation and
identification share one Euler-Lagrange code path.

The integrator core is jit-compiled (jax) and batched; the public API is
numpy in, numpy out.  Randomness is seed-threaded through per-purpose
SeedSequence streams so datasets regenerate byte-identically.
"""

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import (
    BlowUpError,
    ConfigError,
    DegenerateMassMatrixError,
    ShapeError,
)
from .library import CandidateLibrary, build_system_library, eval_library

ACTIVE_SYSTEMS = ("single_pendulum", "double_pendulum", "spherical_pendulum")
PASSIVE_SYSTEMS = (
    "chaos_pendulum",
    "cart_spring_pendulum",
    "spherical_spring_pendulum",
    "magnetic_pendulum",
)
ALL_SYSTEMS = ACTIVE_SYSTEMS + PASSIVE_SYSTEMS

KNOWN_TERM = "qd0^2"  # normalized kinetic term for every passive system

# seed stream purposes; keep stable, sidecars depend on them
_SEED_IC = 0
_SEED_FORCE = 1
_SEED_COLLOC = 2
_SEED_NOISE = 3
_SEED_MISSING = 4

_COND_LIMIT = 1e12


def _rng(seed: int, purpose: int, extra: int | None = None) -> np.random.Generator:
    if seed < 0:
        raise ConfigError("seeds must be non-negative")
    entropy = [int(seed), int(purpose)]
    if extra is not None:
        entropy.append(int(extra))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ForcingSpec:
    """Per-DOF sinusoidal drive f_i(t) = amp_i * sin(omega_i t + phase_i)."""

    amp: np.ndarray
    omega: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        for name in ("amp", "omega", "phase"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    def __call__(self, times) -> np.ndarray:
        t = np.atleast_1d(np.asarray(times, dtype=float))[:, None]
        return self.amp * np.sin(self.omega * t + self.phase)


@dataclass(frozen=True)
class SystemSpec:
    """One benchmark system: library, ground-truth coefficients, drive."""

    id: str
    mode: str
    dof: int
    params: dict
    lib: CandidateLibrary
    true_coeffs: np.ndarray
    known_name: str | None = None
    force: ForcingSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "true_coeffs", _frozen(self.true_coeffs))
        if len(self.true_coeffs) != self.lib.size:
            raise ShapeError("true_coeffs must align with the library order")

    @property
    def known_index(self) -> int | None:
        if self.known_name is None:
            return None
        return self.lib.index_of(self.known_name)

    def f_ext(self, times) -> np.ndarray:
        """External force rows at the given times; zero when undriven."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        if self.force is None:
            return np.zeros((len(t), self.dof))
        return self.force(t)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        for name in ("times", "q", "qd"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.q.shape != self.qd.shape or len(self.times) != len(self.q):
            raise ShapeError("trajectory arrays disagree on shape")


@dataclass(frozen=True)
class Dataset:
    """Measurements plus collocation bookkeeping for one identification run.

    Missing q entries hold NaN and are marked absent in present_mask; the
    collocation times and force samples are regenerated from the seed, so
    serialized datasets stay small and reruns are byte-identical.
    """

    t_meas: np.ndarray
    q_meas: np.ndarray
    present_mask: np.ndarray
    t_colloc: np.ndarray
    f_ext_samples: np.ndarray
    noise_level: float
    missing_frac: float
    seed: int

    def __post_init__(self):
        for name in ("t_meas", "q_meas", "t_colloc", "f_ext_samples"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        mask = np.array(self.present_mask, dtype=bool)
        mask.flags.writeable = False
        object.__setattr__(self, "present_mask", mask)
        if self.q_meas.shape != self.present_mask.shape:
            raise ShapeError("q_meas and present_mask must have equal shape")
        if np.any(~np.isfinite(self.q_meas[self.present_mask])):
            raise ShapeError("present measurements must be finite")

    @property
    def dof(self) -> int:
        return self.q_meas.shape[1]


_DEFAULT_PARAMS = {
    "single_pendulum": {"m": 1.0, "l": 1.0, "g": 9.81},
    "double_pendulum": {"m1": 1.0, "m2": 1.0, "l1": 1.0, "l2": 1.0, "g": 9.81},
    "spherical_pendulum": {"m": 1.0, "l": 1.0, "g": 9.81},
    "chaos_pendulum": {"m1": 1.0, "m2": 1.0, "l1": 1.0, "l2": 1.0, "g": 9.81},
    "cart_spring_pendulum": {"M": 1.0, "m": 1.0, "l": 1.0, "k": 10.0, "d": 1.0, "g": 9.81},
    "spherical_spring_pendulum": {"m": 1.0, "k": 10.0, "d": 1.0, "g": 9.81},
    "magnetic_pendulum": {
        "m": 1.0,
        "C": 1.0,
        "C_strengths": (1.0, 1.0, 1.0),
        "magnet_positions": ((1.0, 0.0), (-0.5, 0.8660254037844386), (-0.5, -0.8660254037844386)),
        "plane_distance": 0.3,
    },
}


def _true_coeff_map(system_id: str, params: dict, lib: CandidateLibrary) -> dict:
    p = params
    if system_id == "single_pendulum":
        return {"qd0^2": 0.5 * p["m"] * p["l"] ** 2, "cos(q0)": p["m"] * p["g"] * p["l"]}
    if system_id == "double_pendulum":
        return {
            "qd0^2": 0.5 * (p["m1"] + p["m2"]) * p["l1"] ** 2,
            "qd1^2": 0.5 * p["m2"] * p["l2"] ** 2,
            "qd0*qd1*cos(q0-q1)": p["m2"] * p["l1"] * p["l2"],
            "cos(q0)": (p["m1"] + p["m2"]) * p["g"] * p["l1"],
            "cos(q1)": p["m2"] * p["g"] * p["l2"],
        }
    if system_id == "spherical_pendulum":
        ml2 = p["m"] * p["l"] ** 2
        return {
            "qd0^2": 0.5 * ml2,
            "sin(q0)^2*qd1^2": 0.5 * ml2,
            "cos(q0)": p["m"] * p["g"] * p["l"],
        }
    if system_id == "chaos_pendulum":
        # offset pivots: first rod hinged at 1/2 of its length, second at 1/3
        return {
            "qd0^2": p["m1"] * p["l1"] ** 2 / 24.0 + p["m2"] * p["l1"] ** 2 / 8.0,
            "qd1^2": p["m2"] * p["l2"] ** 2 / 18.0,
            "qd0*qd1*cos(q0-q1)": p["m2"] * p["l1"] * p["l2"] / 12.0,
            "cos(q0)": 0.5 * p["m2"] * p["g"] * p["l1"],
            "cos(q1)": p["m2"] * p["g"] * p["l2"] / 6.0,
        }
    if system_id == "cart_spring_pendulum":
        return {
            "qd0^2": 0.5 * (p["M"] + p["m"]),
            "qd1^2": 0.5 * p["m"] * p["l"] ** 2,
            "qd0*qd1*cos(q1)": p["m"] * p["l"],
            "cos(q1)": p["m"] * p["g"] * p["l"],
            "q0^2": -0.5 * p["k"],
            "q0": p["k"] * p["d"],
        }
    if system_id == "spherical_spring_pendulum":
        return {
            "qd0^2": 0.5 * p["m"],
            "q0^2*qd1^2": 0.5 * p["m"],
            "q0^2*sin(q1)^2*qd2^2": 0.5 * p["m"],
            "q0*cos(q1)": p["m"] * p["g"],
            "q0^2": -0.5 * p["k"],
            "q0": p["k"] * p["d"],
        }
    if system_id == "magnetic_pendulum":
        out = {"qd0^2": 0.5 * p["m"], "qd1^2": 0.5 * p["m"],
               "q0^2": -0.5 * p["C"], "q1^2": -0.5 * p["C"]}
        well_names = [n for n in lib.names if n.startswith("well(")]
        strengths = p["C_strengths"]
        if len(strengths) != len(well_names):
            raise ConfigError("need one magnet strength per well term")
        for name, c in zip(well_names, strengths):
            out[name] = float(c)
        return out
    raise ConfigError("unknown system id %r" % system_id)


def make_system(system_id: str, params: dict | None = None) -> SystemSpec:
    """Benchmark system with default physical constants, overridable."""
    if system_id not in ALL_SYSTEMS:
        raise ConfigError("unknown system id %r" % system_id)
    merged = dict(_DEFAULT_PARAMS[system_id])
    for key, val in (params or {}).items():
        if key not in merged:
            raise ConfigError("unknown parameter %r for %s" % (key, system_id))
        merged[key] = val
    if system_id == "magnetic_pendulum":
        merged["magnet_positions"] = tuple(
            (float(x), float(y)) for x, y in merged["magnet_positions"]
        )
        merged["C_strengths"] = tuple(float(c) for c in merged["C_strengths"])
    lib = build_system_library(system_id, merged)
    coeff_map = _true_coeff_map(system_id, merged, lib)
    mode = "active" if system_id in ACTIVE_SYSTEMS else "passive"
    coeffs = np.array([coeff_map.get(name, 0.0) for name in lib.names])
    known = None
    if mode == "passive":
        known = KNOWN_TERM
        scale = coeff_map[known]
        if scale == 0.0:
            raise ConfigError("known term has zero true coefficient")
        coeffs = coeffs / scale
    return SystemSpec(
        id=system_id, mode=mode, dof=lib.dof, params=merged, lib=lib,
        true_coeffs=coeffs, known_name=known,
    )


# the spherical pendulum's azimuth must be driven: left alone its angular
# momentum is conserved, the azimuth rate collapses onto a function of the
# polar angle, and the centrifugal term becomes indistinguishable from
# position-only candidates under measurement noise.  The drive must also
# stay weak: azimuth momentum changes only through it, so its running
# integral (bounded by 2 amp / omega ~ 0.16) must never cancel the initial
# momentum, or the centrifugal barrier collapses and the trajectory hits
# the coordinate pole.  Initial conditions guarantee momentum >= 0.3.
_AMP_RANGES = {"spherical_pendulum": ((0.5, 2.0), (0.01, 0.04))}


def attach_forcing(system: SystemSpec, seed: int,
                   amp_range=None, omega_range=(0.5, 2.0),
                   _attempt: int = 0) -> SystemSpec:
    """Draw a sinusoidal per-DOF drive; only driven systems accept one."""
    if system.mode != "active":
        raise ConfigError("%s is conservative; it takes no external drive" % system.id)
    if amp_range is None:
        amp_range = _AMP_RANGES.get(system.id, (0.5, 2.0))
    rng = _rng(seed, _SEED_FORCE, _attempt if _attempt else None)
    n = system.dof
    bounds = np.asarray(amp_range, dtype=float)
    if bounds.ndim == 1:  # one (lo, hi) shared by every coordinate
        bounds = np.tile(bounds, (n, 1))
    force = ForcingSpec(
        amp=rng.uniform(bounds[:, 0], bounds[:, 1]),
        omega=rng.uniform(*omega_range, size=n),
        phase=rng.uniform(0.0, 2.0 * np.pi, size=n),
    )
    return replace(system, force=force)


# ---------------------------------------------------------------------------
# Euler-Lagrange right-hand side

def _rhs_terms(lib, coeffs, q, qd, xp):
    """Mass matrix, gyroscopic force, and grad_q L over a batch."""
    jets = eval_library(lib, q, qd, xp=xp)
    M = xp.einsum("k,knab->nab", coeffs, jets.hess_qd_qd)
    gyro = xp.einsum("k,knab,nb->na", coeffs, jets.mixed_q_qd, qd)
    grad = xp.einsum("k,kna->na", coeffs, jets.grad_q)
    return M, gyro, grad


def euler_lagrange_rhs(system: SystemSpec, q, qdot, t: float = 0.0,
                       coeffs=None) -> np.ndarray:
    """Acceleration from M(q) qdd = f_ext + grad_q L - gyro at one state."""
    q1 = np.asarray(q, dtype=float)[None, :]
    qd1 = np.asarray(qdot, dtype=float)[None, :]
    if q1.shape[1] != system.dof or qd1.shape != q1.shape:
        raise ShapeError("state vectors must have length %d" % system.dof)
    c = system.true_coeffs if coeffs is None else np.asarray(coeffs, dtype=float)
    M, gyro, grad = _rhs_terms(system.lib, c, q1, qd1, np)
    if np.linalg.cond(M[0]) > _COND_LIMIT:
        raise DegenerateMassMatrixError(
            "mass matrix is numerically singular at q=%s" % np.array2string(q1[0])
        )
    f = system.f_ext(t)
    rhs = f + grad - gyro
    return np.linalg.solve(M[0], rhs[0])


def trajectory_accelerations(system: SystemSpec, traj: Trajectory,
                             coeffs=None) -> np.ndarray:
    """Batched accelerations along a trajectory (for truth curves)."""
    c = system.true_coeffs if coeffs is None else np.asarray(coeffs, dtype=float)
    M, gyro, grad = _rhs_terms(system.lib, c, traj.q, traj.qd, np)
    f = system.f_ext(traj.times)
    rhs = f + grad - gyro
    return np.linalg.solve(M, rhs[..., None])[..., 0]


# ---------------------------------------------------------------------------
# RK4 integration (jit-compiled, batched)

@lru_cache(maxsize=64)
def _compiled_rk4(lib: CandidateLibrary, dt: float, n_rec: int, record_every: int):
    import jax
    jax.config.update("jax_enable_x64", True)
    import jax.numpy as jnp

    n = lib.dof

    def rhs(t, y, coeffs, famp, fomega, fphase, damping):
        q, qd = y[:, :n], y[:, n:]
        M, gyro, grad = _rhs_terms(lib, coeffs, q, qd, jnp)
        f = famp * jnp.sin(fomega * t + fphase)
        rhs_vec = f + grad - gyro - damping * qd
        qdd = jnp.linalg.solve(M, rhs_vec[..., None])[..., 0]
        return jnp.concatenate([qd, qdd], axis=1)

    def run(y0, t0, coeffs, famp, fomega, fphase, damping):
        args = (coeffs, famp, fomega, fphase, damping)

        def rk4_step(y, t):
            k1 = rhs(t, y, *args)
            k2 = rhs(t + dt / 2, y + (dt / 2) * k1, *args)
            k3 = rhs(t + dt / 2, y + (dt / 2) * k2, *args)
            k4 = rhs(t + dt, y + dt * k3, *args)
            return y + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)

        def outer(y, i):
            t_base = t0 + i * (record_every * dt)

            def inner(j, yy):
                return rk4_step(yy, t_base + j * dt)

            y2 = jax.lax.fori_loop(0, record_every, inner, y)
            return y2, y2

        _, ys = jax.lax.scan(outer, y0, jnp.arange(n_rec))
        return jnp.concatenate([y0[None], ys], axis=0)

    return jax.jit(run)


def _integrate(system, y0_batch, t0, dt, n_steps, record_every, coeffs, damping):
    if n_steps % record_every != 0:
        raise ConfigError("step count %d not divisible by record_every %d"
                          % (n_steps, record_every))
    run = _compiled_rk4(system.lib, float(dt), n_steps // record_every, int(record_every))
    if system.force is not None:
        famp, fomega, fphase = system.force.amp, system.force.omega, system.force.phase
    else:
        famp = fomega = fphase = np.zeros(system.dof)
    ys = run(y0_batch, float(t0), coeffs, famp, fomega, fphase, float(damping))
    return np.asarray(ys)  # (n_rec+1, B, 2n)


def rk4_simulate(system: SystemSpec, q0, qdot0, t_span=(0.0, 20.0), dt=1e-3,
                 record_every: int = 1, coeffs=None, damping: float = 0.0) -> Trajectory:
    """Fixed-step RK4 trajectory; records every ``record_every``-th state."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    if dt <= 0 or t1 <= t0:
        raise ConfigError("need dt > 0 and t_end > t_start")
    n_steps = int(round((t1 - t0) / dt))
    if abs(t0 + n_steps * dt - t1) > 1e-9 * max(1.0, abs(t1)):
        raise ConfigError("(t_end - t_start) must be an integer multiple of dt")
    q0 = np.asarray(q0, dtype=float)
    qd0 = np.asarray(qdot0, dtype=float)
    if q0.shape != (system.dof,) or qd0.shape != (system.dof,):
        raise ShapeError("initial state must have length %d" % system.dof)
    c = system.true_coeffs if coeffs is None else np.asarray(coeffs, dtype=float)
    y0 = np.concatenate([q0, qd0])[None, :]
    ys = _integrate(system, y0, t0, dt, n_steps, record_every, c, damping)[:, 0, :]
    bad = ~np.all(np.isfinite(ys), axis=1)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise BlowUpError(
            "integration of %s blew up" % system.id,
            time=t0 + idx * record_every * dt,
        )
    times = t0 + np.arange(ys.shape[0]) * (record_every * dt)
    return Trajectory(times=times, q=ys[:, : system.dof], qd=ys[:, system.dof:])


def energy(system: SystemSpec, q, qd, coeffs=None) -> np.ndarray:
    """E = qd . grad_qd(L) - L along a batch of states."""
    Q = np.atleast_2d(np.asarray(q, dtype=float))
    Qd = np.atleast_2d(np.asarray(qd, dtype=float))
    c = system.true_coeffs if coeffs is None else np.asarray(coeffs, dtype=float)
    jets = eval_library(system.lib, Q, Qd, xp=np)
    lagr = np.einsum("k,kn->n", c, jets.values)
    momentum_rate = np.einsum("k,kna,na->n", c, jets.grad_qd, Qd)
    return momentum_rate - lagr


# ---------------------------------------------------------------------------
# initial conditions and corruption

def sample_initial_conditions(system: SystemSpec, seed: int, _attempt: int = 0):
    """Uniform draws in per-system ranges; see ranges in the code below.

    The spring pendulum's spherical coordinates resample until the polar
    angle clears the |theta| < 0.1 singular zone where the azimuth
    equation degenerates, and until the azimuth rate clears 0.2 so its
    angular momentum holds the trajectory off the pole.  The driven
    spherical pendulum draws from a narrower high-momentum band instead;
    see the comment at its branch.
    """
    rng = _rng(seed, _SEED_IC, _attempt if _attempt else None)
    sid, d = system.id, system.dof
    qd0 = rng.uniform(-1.0, 1.0, size=d)

    def polar(lo=-np.pi / 2, hi=np.pi / 2):
        while True:
            th = rng.uniform(lo, hi)
            if abs(th) >= 0.1:
                return th

    def azimuth_rate():
        while True:
            w = rng.uniform(-1.0, 1.0)
            if abs(w) >= 0.2:
                return w

    if sid == "single_pendulum":
        # large-amplitude starts only: small swings cannot separate cos(q)
        # from a quadratic well once measurements carry noise
        mag = rng.uniform(2.0, np.pi)
        q0 = np.array([mag if rng.random() < 0.5 else -mag])
    elif sid in ("double_pendulum", "chaos_pendulum"):
        q0 = rng.uniform(-np.pi, np.pi, size=2)
    elif sid == "spherical_pendulum":
        # the polar band and azimuth rate jointly keep initial azimuth
        # momentum sin(th)^2 phidot >= 0.32, twice what the weak azimuth
        # drive can drain, so the centrifugal barrier never collapses
        sign = np.where(rng.random(2) < 0.5, -1.0, 1.0)
        q0 = np.array([sign[0] * rng.uniform(0.6, 1.2), rng.uniform(-np.pi, np.pi)])
        qd0[1] = sign[1] * rng.uniform(1.0, 1.8)
    elif sid == "cart_spring_pendulum":
        q0 = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-np.pi / 2, np.pi / 2)])
    elif sid == "spherical_spring_pendulum":
        d_eq = system.params["d"]
        q0 = np.array([rng.uniform(d_eq - 0.3, d_eq + 0.3), polar(),
                       rng.uniform(-np.pi, np.pi)])
        qd0[2] = azimuth_rate()
    elif sid == "magnetic_pendulum":
        q0 = rng.uniform(-1.2, 1.2, size=2)
    else:
        raise ConfigError("unknown system id %r" % sid)
    return q0, qd0


def corrupt(traj: Trajectory, noise_level: float, missing_frac: float, seed: int,
            system: SystemSpec | None = None, n_colloc: int | None = None) -> Dataset:
    """Measurement noise, missing-entry mask, and collocation bookkeeping.

    Noise std per DOF is noise_level times that DOF's clean signal std, so
    levels transfer across angles and lengths.  Collocation times are
    uniform over the measured span; the drive is sampled there cleanly.
    """
    if noise_level < 0:
        raise ConfigError("noise_level must be >= 0")
    if not 0.0 <= missing_frac < 1.0:
        raise ConfigError("missing_frac must lie in [0, 1)")
    n_m, n = traj.q.shape
    if n_colloc is None:
        n_colloc = 5 * n_m

    q_meas = traj.q.copy()
    if noise_level > 0:
        sigma = noise_level * traj.q.std(axis=0)
        q_meas = q_meas + _rng(seed, _SEED_NOISE).normal(size=(n_m, n)) * sigma

    present = np.ones((n_m, n), dtype=bool)
    if missing_frac > 0:
        present = _rng(seed, _SEED_MISSING).random((n_m, n)) >= missing_frac
    q_meas = np.where(present, q_meas, np.nan)

    t0, t1 = float(traj.times[0]), float(traj.times[-1])
    t_colloc = np.sort(_rng(seed, _SEED_COLLOC).uniform(t0, t1, size=n_colloc))
    if system is not None:
        f_samples = system.f_ext(t_colloc)
    else:
        f_samples = np.zeros((n_colloc, n))
    return Dataset(
        t_meas=traj.times, q_meas=q_meas, present_mask=present,
        t_colloc=t_colloc, f_ext_samples=f_samples,
        noise_level=float(noise_level), missing_frac=float(missing_frac),
        seed=int(seed),
    )


def make_dataset(system: SystemSpec, seed: int, noise_level: float = 0.0,
                 missing_frac: float = 0.0, duration: float = 20.0,
                 dt: float = 1e-3, meas_every: int = 10,
                 n_colloc: int | None = None, max_attempts: int = 8,
                 max_abs_accel: float = 500.0):
    """Simulate, subsample, corrupt.  Returns (dataset, driven system, clean traj).

    Initial conditions are redrawn (derived seed stream) if an integration
    blows up or the trajectory develops accelerations too fast for the
    measurement grid to resolve; forced spherical systems do both when
    they graze the coordinate pole.
    """
    redraw_force = system.mode == "active" and system.force is None
    last_err = None
    for attempt in range(max_attempts):
        if redraw_force:
            system = attach_forcing(system, seed, _attempt=attempt)
        q0, qd0 = sample_initial_conditions(system, seed, _attempt=attempt)
        try:
            traj = rk4_simulate(system, q0, qd0, t_span=(0.0, duration), dt=dt)
        except (BlowUpError, DegenerateMassMatrixError) as err:
            last_err = err
            continue
        peak = np.abs(trajectory_accelerations(system, traj)).max()
        if peak <= max_abs_accel:
            break
        last_err = BlowUpError(
            "trajectory peak acceleration %.3g exceeds %.3g" % (peak, max_abs_accel),
            time=0.0,
        )
    else:
        raise BlowUpError(
            "no usable trajectory for %s after %d initial conditions"
            % (system.id, max_attempts),
            time=getattr(last_err, "time", 0.0),
        )
    meas = Trajectory(
        times=traj.times[::meas_every], q=traj.q[::meas_every], qd=traj.qd[::meas_every]
    )
    ds = corrupt(meas, noise_level, missing_frac, seed, system=system, n_colloc=n_colloc)
    return ds, system, traj


# ---------------------------------------------------------------------------
# serialization

def _fmt(x: float) -> str:
    return repr(float(x))


def save_dataset(ds: Dataset, system: SystemSpec, csv_path) -> None:
    """CSV of measurements plus a JSON sidecar describing the experiment."""
    csv_path = Path(csv_path)
    n = ds.dof
    f_meas = system.f_ext(ds.t_meas)
    header = (
        ["t"] + ["q_%d" % (i + 1) for i in range(n)]
        + ["mask_%d" % (i + 1) for i in range(n)]
        + ["f_%d" % (i + 1) for i in range(n)]
    )
    lines = [",".join(header)]
    for r in range(len(ds.t_meas)):
        cells = [_fmt(ds.t_meas[r])]
        cells += [_fmt(v) for v in ds.q_meas[r]]
        cells += [str(int(v)) for v in ds.present_mask[r]]
        cells += [_fmt(v) for v in f_meas[r]]
        lines.append(",".join(cells))
    csv_path.write_text("\n".join(lines) + "\n")

    sidecar = {
        "system": system.id,
        "mode": system.mode,
        "dof": system.dof,
        "params": {k: (list(map(list, v)) if k == "magnet_positions" else
                       (list(v) if isinstance(v, tuple) else v))
                   for k, v in system.params.items()},
        "known_term": system.known_name,
        "library": list(system.lib.names),
        "true_coeffs": {name: float(c)
                        for name, c in zip(system.lib.names, system.true_coeffs)},
        "force": None if system.force is None else {
            "amp": list(map(float, system.force.amp)),
            "omega": list(map(float, system.force.omega)),
            "phase": list(map(float, system.force.phase)),
        },
        "noise_level": ds.noise_level,
        "missing_frac": ds.missing_frac,
        "seed": ds.seed,
        "n_colloc": int(len(ds.t_colloc)),
    }
    csv_path.with_suffix(".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )


def load_dataset(csv_path):
    """Rebuild (Dataset, SystemSpec) from a CSV + sidecar pair."""
    csv_path = Path(csv_path)
    meta = json.loads(csv_path.with_suffix(".json").read_text())
    system = make_system(meta["system"], meta["params"])
    if meta["force"] is not None:
        system = replace(system, force=ForcingSpec(**{
            k: np.array(v) for k, v in meta["force"].items()
        }))
    if list(system.lib.names) != meta["library"]:
        raise ConfigError("sidecar library does not match the built-in one")

    raw = np.genfromtxt(csv_path, delimiter=",", names=True)
    n = meta["dof"]
    t_meas = np.atleast_1d(raw["t"])
    q_meas = np.column_stack([np.atleast_1d(raw["q_%d" % (i + 1)]) for i in range(n)])
    mask = np.column_stack(
        [np.atleast_1d(raw["mask_%d" % (i + 1)]) for i in range(n)]
    ).astype(bool)

    seed = int(meta["seed"])
    t_colloc = np.sort(
        _rng(seed, _SEED_COLLOC).uniform(t_meas[0], t_meas[-1], size=int(meta["n_colloc"]))
    )
    ds = Dataset(
        t_meas=t_meas, q_meas=q_meas, present_mask=mask,
        t_colloc=t_colloc, f_ext_samples=system.f_ext(t_colloc),
        noise_level=float(meta["noise_level"]),
        missing_frac=float(meta["missing_frac"]), seed=seed,
    )
    return ds, system


# ---------------------------------------------------------------------------
# basin of attraction

def _settle_labels(snaps: np.ndarray, magnets: np.ndarray, n_dwell: int,
                   v_thresh: float, r_thresh: float) -> np.ndarray:
    """Magnet labels (1-based) from the trailing snapshot window; 0 = unsettled."""
    window = snaps[-n_dwell:]                      # (n_dwell, B, 4)
    pos, vel = window[:, :, :2], window[:, :, 2:]
    speed_ok = np.all(np.linalg.norm(vel, axis=2) < v_thresh, axis=0)
    dists = np.linalg.norm(pos[:, :, None, :] - magnets[None, None], axis=3)
    final_choice = np.argmin(dists[-1], axis=1)    # (B,)
    chosen = np.take_along_axis(dists, final_choice[None, :, None], axis=2)[:, :, 0]
    near_ok = np.all(chosen < r_thresh, axis=0)
    settled = speed_ok & near_ok & np.all(np.isfinite(snaps[-1]), axis=1)
    return np.where(settled, final_choice + 1, 0)


def basin_of_attraction(system: SystemSpec, coeffs=None, extent=1.5,
                        resolution: int = 64, damping: float = 0.3,
                        dt: float = 5e-3, t_max: float = 150.0,
                        v_thresh: float = 0.08, r_thresh: float = 0.45,
                        t_dwell: float = 2.0, points=None) -> np.ndarray:
    """Label grid of magnet capture for the damped magnetic pendulum.

    Cells start at rest on a regular grid over [-extent, extent]^2.  A cell
    gets label i+1 when the state stays within r_thresh of magnet i at
    speed below v_thresh for the final t_dwell seconds; 0 marks cells that
    have not settled by t_max (data, not an error).  Passing explicit
    starting ``points`` (B x 2) skips the grid and returns flat labels.
    """
    if system.id != "magnetic_pendulum":
        raise ConfigError("basin experiment is defined for the magnetic pendulum")
    if damping <= 0:
        raise ConfigError("basin integration needs positive damping")
    c = system.true_coeffs if coeffs is None else np.asarray(coeffs, dtype=float)
    magnets = np.asarray(system.params["magnet_positions"], dtype=float)

    if points is None:
        xs = np.linspace(-extent, extent, resolution)
        gx, gy = np.meshgrid(xs, xs, indexing="xy")
        q0 = np.column_stack([gx.ravel(), gy.ravel()])
    else:
        q0 = np.atleast_2d(np.asarray(points, dtype=float))
    y0 = np.concatenate([q0, np.zeros_like(q0)], axis=1)

    n_steps = int(round(t_max / dt))
    record_every = max(1, int(round(0.25 / dt)))
    n_steps -= n_steps % record_every
    snaps = _integrate(system, y0, 0.0, dt, n_steps, record_every, c, damping)

    n_dwell = max(1, int(round(t_dwell / (record_every * dt))))
    labels = _settle_labels(snaps, magnets, n_dwell, v_thresh, r_thresh)
    if points is not None:
        return labels
    return labels.reshape(resolution, resolution)
