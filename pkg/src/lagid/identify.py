"""Joint spline-and-coefficient identification with sequential thresholding.

A clamped cubic spline per coordinate (control matrix P) and a sparse
coefficient vector over the candidate library are fit together by
first-order gradient descent on

    J = J_data + J_physics + J_curvature + J_sparsity,

where the physics term enforces the expanded Euler-Lagrange residual at
random collocation points, the curvature term penalizes the spline's
second derivative there, and the sparsity term is an L1 penalty on the
coefficients.  Every ``interval`` iterations candidate terms whose
contribution falls below a threshold are pruned and frozen at zero.

The iteration core is jit-compiled (jax) and cached per library so
repeated fits of the same system recompile nothing; the public API is
numpy in, numpy out.
"""

import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .bspline import (
    KnotVector,
    SplineModel,
    build_clamped_knots,
    default_control_count,
    local_basis,
)
from .errors import (
    ConfigError,
    DivergenceError,
    EmptyModelError,
    InitializationError,
    NonFiniteLossError,
    ShapeError,
)
from .library import CandidateLibrary, eval_library

_TRACE_KEYS = ("total", "data", "physics", "curvature", "sparsity")


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class LossWeights:
    """Weights for the loss components; the physics term is the reference
    scale and stays at 1 unless deliberately overridden."""

    alpha: float = 1.0
    beta: float = 1e-4
    gamma: float = 1e-3
    phys: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "phys"):
            if not np.isfinite(getattr(self, name)) or getattr(self, name) < 0:
                raise ConfigError("loss weight %s must be finite and >= 0" % name)


@dataclass(frozen=True)
class OptimizerConfig:
    """First-order settings for the joint (P, coefficients) descent.

    Control points see the physics loss through the spline's second
    derivative, whose basis rows scale like 6/h^2 for knot spacing h, so
    they get their own much smaller step: lr * control_scale.  The L1
    penalty is applied as a decoupled shrink (its constant subgradient
    must not pass through adaptive-moment normalization, which would
    blow it up to full-size steps).
    """

    lr: float = 1e-2
    control_scale: float = 1e-3   # multiplies lr for control-point updates
    max_iters: int = 20_000
    loss_tol: float = 1e-8
    method: str = "adam"          # or "sgd"
    lr_decay: float = 0.5         # applied when a round makes no progress
    lr_min: float = 1e-6
    plateau_tol: float = 5e-3     # relative per-round improvement counting as progress
    patience_tol: float = 5e-5    # per-round gain considered stagnant
    patience_rounds: int = 2      # stagnant no-prune rounds before stopping
    divergence_factor: float = 10.0
    init_coeffs: str = "zeros"    # or "lstsq" warm start
    init_ridge: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.max_iters < 1 or self.loss_tol <= 0:
            raise ConfigError("lr, max_iters, loss_tol must be positive")
        if self.control_scale <= 0:
            raise ConfigError("control_scale must be positive")
        if self.method not in ("adam", "sgd"):
            raise ConfigError("unknown optimizer method %r" % self.method)
        if self.init_coeffs not in ("zeros", "lstsq"):
            raise ConfigError("init_coeffs must be 'zeros' or 'lstsq'")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must be in (0, 1]")


@dataclass(frozen=True)
class StlsConfig:
    """Thresholded pruning applied every ``interval`` iterations.

    mode 'value' prunes on |coeff| relative to the largest active
    coefficient.  mode 'contribution' (default) scales each coefficient
    by the rms of its Euler-Lagrange column first, so terms whose
    residual footprint is small get pruned rather than terms whose raw
    coefficient happens to be small; libraries mixing gravity-scale and
    unit-scale terms need this.  mode 'absolute' compares |coeff|
    against threshold_abs directly.

    cleanup_rel drives an extra elimination pass after the optimizer
    stops.  A term whose deletion barely moves the loss at the final
    state (under cleanup_rel times the largest removal impact) is a
    suspect; each suspect is then dropped for real and the remaining
    parameters re-optimized for cleanup_iters steps.  The drop sticks
    only when the re-optimized loss recovers to within cleanup_accept
    times the baseline.  Slack absorbers recover (the spline bends to
    cover for them), structural terms leave a loss gap no spline can
    close, and the re-optimization makes that distinction independent
    of how the run happened to terminate.
    """

    interval: int = 500
    threshold_rel: float = 0.05
    mode: str = "contribution"    # 'contribution' | 'value' | 'absolute'
    threshold_abs: float | None = None
    cleanup_rel: float | None = 0.05   # suspect test vs. largest removal impact
    cleanup_iters: int = 10000         # re-optimization budget per suspect
    cleanup_accept: float = 1.5        # keep drop when J_new <= accept * J_base

    def __post_init__(self):
        if self.interval < 1:
            raise ConfigError("stls interval must be >= 1")
        if self.mode not in ("contribution", "value", "absolute"):
            raise ConfigError("unknown stls mode %r" % self.mode)
        if self.mode == "absolute":
            if self.threshold_abs is None or self.threshold_abs < 0:
                raise ConfigError("absolute mode needs threshold_abs >= 0")
        elif not 0 <= self.threshold_rel < 1:
            raise ConfigError("threshold_rel must be in [0, 1)")
        if self.cleanup_rel is not None and not 0 <= self.cleanup_rel < 1:
            raise ConfigError("cleanup_rel must be in [0, 1) or None")
        if self.cleanup_iters < 1:
            raise ConfigError("cleanup_iters must be >= 1")
        if self.cleanup_accept < 1:
            raise ConfigError("cleanup_accept must be >= 1")


@dataclass(frozen=True)
class CoefficientVector:
    """Sparse coefficients over a library.

    ``values`` is full library length with zeros at inactive slots.  In
    passive mode the known term is excluded from values/mask entirely;
    its coefficient is the constant 1 and shows up only via full().
    """

    values: np.ndarray
    active_mask: np.ndarray
    known_index: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.active_mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 1:
            raise ShapeError("values and active_mask must be equal-length vectors")
        if np.any(values[~mask] != 0.0):
            raise ConfigError("inactive coefficients must be exactly 0")
        if self.known_index is not None:
            k = int(self.known_index)
            if not 0 <= k < len(values):
                raise ConfigError("known_index out of range")
            if mask[k] or values[k] != 0.0:
                raise ConfigError("known term must be excluded from values/mask")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "active_mask", mask)

    @classmethod
    def from_full(cls, values, known_index=None):
        """Build from a plain vector; support = exact nonzeros."""
        values = np.array(values, dtype=float)
        if known_index is not None:
            values[known_index] = 0.0
        return cls(values, values != 0.0, known_index)

    def full(self) -> np.ndarray:
        """Coefficients with the known term restored at 1."""
        out = self.values.copy()
        if self.known_index is not None:
            out[self.known_index] = 1.0
        return out


@dataclass(frozen=True)
class FitReport:
    coeffs: CoefficientVector
    model: SplineModel
    loss_trace: dict                      # name -> per-iteration array
    prune_history: tuple                  # ((iteration, (term names, ...)), ...)
    converged: bool
    n_iters: int
    wall_time: float
    expression: str
    term_names: tuple

    def to_dict(self) -> dict:
        full = self.coeffs.full()
        return {
            "coefficients": {n: float(c) for n, c in zip(self.term_names, full)},
            "active_terms": [n for n, a in zip(self.term_names, self.coeffs.active_mask) if a],
            "known_index": self.coeffs.known_index,
            "expression": self.expression,
            "converged": self.converged,
            "n_iters": self.n_iters,
            "wall_time": self.wall_time,
            "prune_history": [[it, list(names)] for it, names in self.prune_history],
            "loss_trace": {k: np.asarray(v).tolist() for k, v in self.loss_trace.items()},
            "knots": self.model.knots.knots.tolist(),
            "control_points": self.model.control.tolist(),
        }


def render_expression(lib: CandidateLibrary, coeffs, known_index=None) -> str:
    """Human-readable sparse Lagrangian, e.g. '0.5*qd0^2 + 9.81*cos(q0)'."""
    coeffs = np.asarray(coeffs, dtype=float)
    parts = []
    for k, (name, c) in enumerate(zip(lib.names, coeffs)):
        if known_index is not None and k == known_index:
            c = 1.0
        if c == 0.0:
            continue
        mag = "%.6g" % abs(c)
        piece = "%s*%s" % (mag, name)
        if not parts:
            parts.append(piece if c > 0 else "-" + piece)
        else:
            parts.append(("+ " if c > 0 else "- ") + piece)
    return " ".join(parts) if parts else "0"


# ---------------------------------------------------------------------------
# loss pieces (xp-generic: numpy for inspection, jax inside the fit loop)

def _window_indices(spans: np.ndarray) -> np.ndarray:
    return spans[:, None] - 3 + np.arange(4)[None, :]


def _gather_curve(band, widx, P, xp):
    # band (N,4), widx (N,4) int, P (S,n) -> (N,n)
    return xp.einsum("mj,mjn->mn", band, P[widx])


def el_columns(lib: CandidateLibrary, q, qd, qdd, xp=np):
    """Per-term Euler-Lagrange values, shape (K, N, n)."""
    jets = eval_library(lib, q, qd, xp=xp)
    return (
        xp.einsum("kcab,cb->kca", jets.hess_qd_qd, qdd)
        + xp.einsum("kcab,cb->kca", jets.mixed_q_qd, qd)
        - jets.grad_q
    )


def physics_residual(lib, coeffs, q, qd, qdd, f_ext=None, known_index=None, xp=np):
    """Expanded Euler-Lagrange residual, shape (N, n).

    Active mode (known_index None): sum_k c_k EL(phi_k) - f_ext.
    Passive: EL(phi_known) + sum_{k != known} c_k EL(phi_k); the entry of
    ``coeffs`` at known_index is ignored.
    """
    coeffs = xp.asarray(coeffs, dtype=float)
    cols = el_columns(lib, xp.asarray(q, dtype=float), xp.asarray(qd, dtype=float),
                      xp.asarray(qdd, dtype=float), xp=xp)
    if known_index is not None:
        onehot = xp.asarray(np.arange(lib.size) == known_index, dtype=float)
        coeffs = xp.where(onehot > 0, 1.0, coeffs)
    res = xp.einsum("k,kca->ca", coeffs, cols)
    if f_ext is not None:
        res = res - xp.asarray(f_ext, dtype=float)
    return res


def _loss_core(xp, lib, P, lam, mask, onehot, ctx, alpha, beta, gamma, phys):
    """Shared loss: returns (J, (J_d, J_phy, J_reg, J_sp))."""
    q_m = _gather_curve(ctx["nm"], ctx["wm"], P, xp)
    d = (q_m - ctx["y"]) * ctx["present"]
    j_data = alpha * xp.sum(d * d) / ctx["n_present"]

    q_c = _gather_curve(ctx["nc"], ctx["wc"], P, xp)
    qd_c = _gather_curve(ctx["dnc"], ctx["wc"], P, xp)
    qdd_c = _gather_curve(ctx["ddnc"], ctx["wc"], P, xp)

    cols = el_columns(lib, q_c, qd_c, qdd_c, xp=xp)
    c_eff = onehot + lam * mask
    res = xp.einsum("k,kca->ca", c_eff, cols) - ctx["f"]
    j_phy = phys * xp.mean(res * res)

    n_colloc = ctx["f"].shape[0]
    j_reg = beta * xp.sum(qdd_c * qdd_c) / n_colloc
    j_sp = gamma * xp.sum(xp.abs(lam) * mask)
    total = j_data + j_phy + j_reg + j_sp
    return total, (j_data, j_phy, j_reg, j_sp)


def _make_context(lib, kv, dataset):
    bm = local_basis(kv, dataset.t_meas)
    bc = local_basis(kv, dataset.t_colloc)
    present = dataset.present_mask.astype(float)
    return {
        "nm": bm.n,
        "wm": _window_indices(bm.spans),
        "y": np.where(dataset.present_mask, dataset.q_meas, 0.0),
        "present": present,
        "n_present": float(present.sum()),
        "nc": bc.n,
        "dnc": bc.dn,
        "ddnc": bc.ddn,
        "wc": _window_indices(bc.spans),
        "f": dataset.f_ext_samples,
    }


def total_loss(model: SplineModel, coeffs, dataset, lib, weights=None,
               known_index=None, active_mask=None):
    """Loss of a given spline model + coefficient vector on a dataset.

    Returns (J, components dict).  Pure numpy; the fit loop uses the same
    arithmetic under jax.
    """
    weights = weights or LossWeights()
    lam = np.asarray(coeffs, dtype=float)
    if lam.shape != (lib.size,):
        raise ShapeError("expected %d coefficients, got %s" % (lib.size, lam.shape))
    mask = np.ones(lib.size) if active_mask is None else np.asarray(active_mask, dtype=float)
    onehot = np.zeros(lib.size)
    if known_index is not None:
        onehot[known_index] = 1.0
        mask = mask.copy()
        mask[known_index] = 0.0
    ctx = _make_context(lib, model.knots, dataset)
    total, parts = _loss_core(np, lib, model.control, lam, mask, onehot, ctx,
                              weights.alpha, weights.beta, weights.gamma, weights.phys)
    if not np.isfinite(total):
        raise NonFiniteLossError(
            "non-finite loss", dict(zip(_TRACE_KEYS[1:], map(float, parts)))
        )
    comps = dict(zip(_TRACE_KEYS[1:], map(float, parts)))
    return float(total), comps


# ---------------------------------------------------------------------------
# initialization

def init_control_points(dataset, kv: KnotVector, ridge: float = 1e-8) -> np.ndarray:
    """Per-coordinate ridge least squares of the present measurements."""
    basis = local_basis(kv, dataset.t_meas)
    dense = basis.dense()[0]  # (N_m, S) value rows
    n_basis = kv.n_basis
    n_dof = dataset.q_meas.shape[1]
    control = np.empty((n_basis, n_dof))
    for i in range(n_dof):
        keep = dataset.present_mask[:, i]
        if keep.sum() < n_basis:
            raise InitializationError(
                "coordinate %d has %d present samples for %d control points; "
                "reduce the control-point count" % (i, int(keep.sum()), n_basis)
            )
        A = dense[keep]
        if np.linalg.matrix_rank(A) < n_basis:
            raise InitializationError(
                "basis matrix rank-deficient for coordinate %d; "
                "reduce the control-point count" % i
            )
        gram = A.T @ A + ridge * np.eye(n_basis)
        control[:, i] = np.linalg.solve(gram, A.T @ dataset.q_meas[keep, i])
    return control


def _penalized_control_init(dataset, kv: KnotVector, weights: LossWeights,
                            ridge: float) -> np.ndarray:
    """Minimizer of the data + curvature loss terms at zero coefficients.

    The plain data fit answers noise with second derivatives of order
    sigma/h^2, which poisons the coefficient warm start; keeping the
    curvature penalty in the init solve matches the objective the
    optimizer actually descends and starts the spline in its basin.
    """
    bm = local_basis(kv, dataset.t_meas).dense()[0]
    ddc = local_basis(kv, dataset.t_colloc).dense()[2]
    n_basis = kv.n_basis
    n_dof = dataset.q_meas.shape[1]
    data_scale = weights.alpha / float(dataset.present_mask.sum())
    pen = (weights.beta / len(dataset.t_colloc)) * (ddc.T @ ddc)
    control = np.empty((n_basis, n_dof))
    for i in range(n_dof):
        keep = dataset.present_mask[:, i]
        if keep.sum() < n_basis:
            raise InitializationError(
                "coordinate %d has %d present samples for %d control points; "
                "reduce the control-point count" % (i, int(keep.sum()), n_basis)
            )
        A = bm[keep]
        # ridge rides on the data block so beta = 0 reproduces the plain fit
        gram = data_scale * (A.T @ A + ridge * np.eye(n_basis)) + pen
        control[:, i] = np.linalg.solve(gram, data_scale * A.T @ dataset.q_meas[keep, i])
    return control


def _lstsq_coeffs(lib, kv, control, dataset, known_index):
    """Warm start: least squares of the EL system at the initial spline."""
    ctx = _make_context(lib, kv, dataset)
    q = _gather_curve(ctx["nc"], ctx["wc"], control, np)
    qd = _gather_curve(ctx["dnc"], ctx["wc"], control, np)
    qdd = _gather_curve(ctx["ddnc"], ctx["wc"], control, np)
    cols = el_columns(lib, q, qd, qdd)             # (K, N, n)
    X = cols.reshape(lib.size, -1).T
    if known_index is None:
        target = ctx["f"].ravel()
        free = np.arange(lib.size)
    else:
        target = -cols[known_index].ravel()
        free = np.array([k for k in range(lib.size) if k != known_index])
    sol, *_ = np.linalg.lstsq(X[:, free], target, rcond=None)
    lam = np.zeros(lib.size)
    lam[free] = sol
    return lam


# ---------------------------------------------------------------------------
# jit-compiled optimization chunk

@lru_cache(maxsize=32)
def _compiled_chunk(lib: CandidateLibrary, chunk_len: int, method: str):
    import jax
    jax.config.update("jax_enable_x64", True)
    import jax.numpy as jnp

    def smooth_fn(P, lam, mask, onehot, ctx, w):
        # gradient flows through the smooth terms only; L1 handled in the update
        total, parts = _loss_core(jnp, lib, P, lam, mask, onehot, ctx, *w)
        return total - parts[3], parts

    grad_fn = jax.value_and_grad(smooth_fn, argnums=(0, 1), has_aux=True)

    def soft(x, tau):
        return jnp.sign(x) * jnp.maximum(jnp.abs(x) - tau, 0.0)

    def chunk(P, lam, opt_state, mask, onehot, lr, lr_p, step0, ctx, w):
        gamma = w[2]

        def body(carry, i):
            P, lam, (mP, vP, mL, vL) = carry
            (smooth, parts), (gP, gL) = grad_fn(P, lam, mask, onehot, ctx, w)
            gL = gL * mask
            if method == "adam":
                t = step0 + i + 1.0
                b1, b2, eps = 0.9, 0.999, 1e-8
                mP = b1 * mP + (1 - b1) * gP
                vP = b2 * vP + (1 - b2) * gP * gP
                mL = b1 * mL + (1 - b1) * gL
                vL = b2 * vL + (1 - b2) * gL * gL
                c1, c2 = 1 - b1 ** t, 1 - b2 ** t
                P = P - lr_p * (mP / c1) / (jnp.sqrt(vP / c2) + eps)
                # L1 as a flat soft threshold at lr*gamma per step; feeding
                # the constant subgradient through the moment normalizer
                # would amplify it to full-size steps near stationarity
                lam = soft(lam - lr * (mL / c1) / (jnp.sqrt(vL / c2) + eps),
                           gamma * lr)
            else:
                P = P - lr_p * gP
                lam = soft(lam - lr * gL, gamma * lr)
            lam = lam * mask
            trace = jnp.stack([smooth + parts[3], *parts])
            return (P, lam, (mP, vP, mL, vL)), trace

        (P, lam, opt_state), traces = jax.lax.scan(
            body, (P, lam, opt_state), jnp.arange(chunk_len)
        )
        return P, lam, opt_state, traces

    return jax.jit(chunk), jnp


def _stls_prune(lam, mask, lib, control, ctx, cfg: StlsConfig):
    """Indices of active terms falling below the threshold."""
    active = np.flatnonzero(mask > 0)
    if active.size == 0:
        return np.array([], dtype=int)
    if cfg.mode == "absolute":
        scores = np.abs(lam[active])
        eps = cfg.threshold_abs
    else:
        scores = np.abs(lam[active])
        if cfg.mode == "contribution":
            q = _gather_curve(ctx["nc"], ctx["wc"], control, np)
            qd = _gather_curve(ctx["dnc"], ctx["wc"], control, np)
            qdd = _gather_curve(ctx["ddnc"], ctx["wc"], control, np)
            cols = el_columns(lib, q, qd, qdd)
            rms = np.sqrt(np.mean(cols[active] ** 2, axis=(1, 2)))
            scores = scores * rms
        eps = cfg.threshold_rel * scores.max()
    return active[scores < eps]


def _cleanup_descent(lib, control, lam, mask, onehot, ctx, w, optimizer, stls,
                     j_bail=None):
    """Re-optimize (control, lam) after a trial deletion.

    Fresh Adam state, full starting lr, fixed iteration budget; returns
    the best end-of-chunk state seen, so a transiently unstable restart
    cannot make a needed term look disposable.  When j_bail is given the
    descent stops early once a fifth of the budget is spent with the
    best loss still above it; a structural term leaves a gap an order
    of magnitude past the accept line from the first chunks, while a
    disposable one closes most of it immediately.
    """
    chunk = min(stls.interval, stls.cleanup_iters)
    chunk_fn, jnp = _compiled_chunk(lib, chunk, optimizer.method)
    ctx_j = {k: jnp.asarray(v) for k, v in ctx.items()}
    mask_j = jnp.asarray(mask)
    onehot_j = jnp.asarray(onehot)
    P_j = jnp.asarray(control)
    lam_j = jnp.asarray(lam)
    opt_state = (jnp.zeros_like(P_j), jnp.zeros_like(P_j),
                 jnp.zeros_like(lam_j), jnp.zeros_like(lam_j))
    best = (np.inf, control, lam)
    for start in range(0, stls.cleanup_iters, chunk):
        P_j, lam_j, opt_state, tr = chunk_fn(
            P_j, lam_j, opt_state, mask_j, onehot_j,
            optimizer.lr, optimizer.lr * optimizer.control_scale,
            float(start), ctx_j, w
        )
        end = float(np.asarray(tr)[-1, 0])
        if not np.isfinite(end):
            break
        if end < best[0]:
            best = (end, np.array(P_j), np.array(lam_j))
        if (j_bail is not None and best[0] > j_bail
                and start + chunk >= stls.cleanup_iters // 5):
            break
    return best[1], best[2], best[0]


def _termination_cleanup(lib, control, lam, mask, onehot, ctx, w, optimizer,
                         stls):
    """Backward elimination of terms that survive only as slack.

    A term whose deletion barely moves the loss at the current state is
    a suspect, but that score depends on where the optimizer stopped, so
    each suspect is deleted for real and the rest re-optimized; the drop
    sticks only when the loss recovers to near the baseline.  Returns
    the (possibly re-optimized) state plus the dropped names.
    """
    cleared: set[int] = set()
    dropped_names = []
    while mask.sum() > 1:
        J_base = float(_loss_core(np, lib, control, lam, mask, onehot,
                                  ctx, *w)[0])
        impact = {}
        for k in np.flatnonzero(mask):
            trial = mask.copy()
            trial[k] = 0.0
            J_k = _loss_core(np, lib, control, lam * trial, trial,
                             onehot, ctx, *w)[0]
            impact[int(k)] = float(J_k) - J_base
        cutoff = stls.cleanup_rel * max(impact.values())
        suspects = [k for k in sorted(impact, key=impact.get)
                    if impact[k] < cutoff and k not in cleared]
        accepted = False
        for k in suspects:
            trial = mask.copy()
            trial[k] = 0.0
            P_t, lam_t, J_t = _cleanup_descent(
                lib, control, lam * trial, trial, onehot, ctx, w,
                optimizer, stls, j_bail=10.0 * J_base)
            if J_t <= stls.cleanup_accept * J_base:
                control, lam, mask = P_t, lam_t * trial, trial
                dropped_names.append(lib.names[k])
                accepted = True
                break
            cleared.add(k)
        if not accepted:
            break
    return control, lam, mask, dropped_names


def fit(dataset, lib: CandidateLibrary, mode: str = "active", known_index=None,
        weights: LossWeights | None = None,
        optimizer: OptimizerConfig | None = None,
        stls: StlsConfig | None = None,
        n_control: int | None = None) -> FitReport:
    """Joint optimization of spline control points and sparse coefficients.

    Gradient steps on (P, lam) with pruning every ``stls.interval``
    iterations; pruned terms are frozen at zero for the rest of the run.
    Stops on loss tolerance at a round boundary, on a patience window of
    stable no-prune rounds, or at max_iters.
    """
    t_start = time.perf_counter()
    weights = weights or LossWeights()
    optimizer = optimizer or OptimizerConfig()
    stls = stls or StlsConfig()

    if mode not in ("active", "passive"):
        raise ConfigError("mode must be 'active' or 'passive'")
    if mode == "passive":
        if known_index is None or not 0 <= known_index < lib.size:
            raise ConfigError("passive mode needs a known_index into the library")
    elif known_index is not None:
        raise ConfigError("known_index only applies to passive mode")

    n_meas = len(dataset.t_meas)
    S = n_control if n_control is not None else default_control_count(n_meas)
    if S < 8:
        raise ConfigError("need at least 8 control points")
    kv = build_clamped_knots(dataset.t_meas[0], dataset.t_meas[-1], S - 4)

    mask = np.ones(lib.size)
    onehot = np.zeros(lib.size)
    if known_index is not None:
        onehot[known_index] = 1.0
        mask[known_index] = 0.0

    ctx = _make_context(lib, kv, dataset)

    # two starting splines: the plain data fit (exact derivatives on clean
    # data) and the curvature-penalized fit (sane derivatives on noisy
    # data); keep whichever scores lower on the actual objective
    inits = [init_control_points(dataset, kv, ridge=optimizer.init_ridge)]
    if weights.beta > 0:
        inits.append(_penalized_control_init(dataset, kv, weights,
                                             optimizer.init_ridge))
    control = lam = None
    best = np.inf
    for cand in inits:
        if optimizer.init_coeffs == "lstsq":
            lam_c = _lstsq_coeffs(lib, kv, cand, dataset, known_index)
        else:
            lam_c = np.zeros(lib.size)
        if known_index is not None:
            lam_c[known_index] = 0.0
        J_c = _loss_core(np, lib, cand, lam_c, mask, onehot, ctx,
                         weights.alpha, weights.beta, weights.gamma,
                         weights.phys)[0]
        if J_c < best:
            best, control, lam = float(J_c), cand, lam_c
    chunk_fn, jnp = _compiled_chunk(lib, stls.interval, optimizer.method)
    ctx_j = {k: jnp.asarray(v) for k, v in ctx.items()}
    w = (weights.alpha, weights.beta, weights.gamma, weights.phys)

    P_j = jnp.asarray(control)
    lam_j = jnp.asarray(lam)
    opt_state = (jnp.zeros_like(P_j), jnp.zeros_like(P_j),
                 jnp.zeros_like(lam_j), jnp.zeros_like(lam_j))

    lr = optimizer.lr
    traces = []
    prune_history = []
    converged = False
    best_end = np.inf
    first_end = None
    prev_end = None
    stable_rounds = 0
    it = 0

    while it < optimizer.max_iters:
        n_steps = min(stls.interval, optimizer.max_iters - it)
        if n_steps != stls.interval:
            chunk_fn, _ = _compiled_chunk(lib, n_steps, optimizer.method)
        P_j, lam_j, opt_state, tr = chunk_fn(
            P_j, lam_j, opt_state, jnp.asarray(mask), jnp.asarray(onehot),
            lr, lr * optimizer.control_scale, float(it), ctx_j, w
        )
        tr = np.asarray(tr)
        traces.append(tr)
        it += n_steps

        totals = tr[:, 0]
        if not np.all(np.isfinite(tr)):
            bad = np.argmax(~np.isfinite(totals)) if not np.all(np.isfinite(totals)) else -1
            raise NonFiniteLossError(
                "loss became non-finite at iteration %d" % (it - n_steps + int(bad)),
                dict(zip(_TRACE_KEYS[1:], map(float, tr[int(bad)][1:]))),
            )
        end = float(totals[-1])
        if first_end is None:
            first_end = end
        # round-end loss both well above its best and above where the run
        # started: runaway growth, not transient chatter near an optimum
        elif end > optimizer.divergence_factor * best_end and end > first_end:
            raise DivergenceError(
                "loss rose %gx above its best; lowering lr may help"
                % optimizer.divergence_factor,
                np.concatenate([t[:, 0] for t in traces]),
            )
        best_end = min(best_end, end)

        control = np.array(P_j)
        lam = np.array(lam_j)

        pruned = _stls_prune(lam, mask, lib, control, ctx, stls)
        if pruned.size:
            mask[pruned] = 0.0
            lam[pruned] = 0.0
            lam_j = jnp.asarray(lam)
            prune_history.append((it, tuple(lib.names[k] for k in pruned)))
            if mask.sum() == 0:
                raise EmptyModelError(
                    "every candidate term was pruned; threshold too aggressive"
                )

        if prev_end is not None:
            delta = abs(prev_end - end)
            rel_gain = (prev_end - end) / max(abs(prev_end), 1e-30)
            if delta < optimizer.loss_tol * max(1.0, abs(prev_end)) and not pruned.size:
                converged = True
            else:
                if rel_gain < optimizer.plateau_tol:
                    lr = max(lr * optimizer.lr_decay, optimizer.lr_min)
                if pruned.size or rel_gain >= optimizer.patience_tol:
                    stable_rounds = 0
                else:
                    stable_rounds += 1
                    if stable_rounds >= optimizer.patience_rounds:
                        converged = True
        prev_end = end
        if converged:
            break

    lam = lam * mask

    # backward elimination at termination; only sound from a converged
    # state, since against a crude baseline any re-optimization looks
    # like a justified drop
    if stls.cleanup_rel is not None and converged and mask.sum() > 1:
        control, lam, mask, dropped_names = _termination_cleanup(
            lib, control, lam, mask, onehot, ctx, w, optimizer, stls)
        if dropped_names:
            prune_history.append((it, tuple(dropped_names)))

    trace_arr = np.concatenate(traces)
    loss_trace = {k: trace_arr[:, i].copy() for i, k in enumerate(_TRACE_KEYS)}
    coeffs = CoefficientVector(lam, mask.astype(bool), known_index)
    expression = render_expression(lib, lam, known_index)
    return FitReport(
        coeffs=coeffs,
        model=SplineModel(kv, control),
        loss_trace=loss_trace,
        prune_history=tuple(prune_history),
        converged=converged,
        n_iters=it,
        wall_time=time.perf_counter() - t_start,
        expression=expression,
        term_names=lib.names,
    )


def loss_and_grad(model: SplineModel, coeffs, dataset, lib, weights=None,
                  known_index=None):
    """Loss plus analytic gradients w.r.t. control points and coefficients.

    Used for gradient verification; returns (J, components, dJ/dP, dJ/dlam).
    """
    import jax
    jax.config.update("jax_enable_x64", True)
    import jax.numpy as jnp

    weights = weights or LossWeights()
    lam = np.asarray(coeffs, dtype=float)
    mask = np.ones(lib.size)
    onehot = np.zeros(lib.size)
    if known_index is not None:
        onehot[known_index] = 1.0
        mask[known_index] = 0.0
    ctx = {k: jnp.asarray(v) for k, v in _make_context(lib, model.knots, dataset).items()}
    w = (weights.alpha, weights.beta, weights.gamma, weights.phys)

    def f(P, lam):
        return _loss_core(jnp, lib, P, lam, jnp.asarray(mask), jnp.asarray(onehot),
                          ctx, *w)

    (total, parts), (gP, gL) = jax.value_and_grad(f, argnums=(0, 1), has_aux=True)(
        jnp.asarray(model.control), jnp.asarray(lam)
    )
    comps = dict(zip(_TRACE_KEYS[1:], map(float, parts)))
    return float(total), comps, np.asarray(gP), np.asarray(gL) * mask
