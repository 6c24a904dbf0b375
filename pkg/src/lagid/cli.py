"""Batch experiment harness.

Subcommands
    generate   write measurement CSVs + JSON sidecars per (noise, seed)
    identify   run the joint fit per cell, write one report JSON each
    evaluate   read reports, write ledger.csv and a summary table
    ablate     full-data vs. missing-data vs. unregularized comparison
    basin      magnetic-pendulum basin grids, true vs. identified

Artifact layout under the output directory:
    data/{system}_n{noise}_s{seed}.csv(.json)   measurements + sidecar
    reports/{system}_n{noise}_s{seed}.json      fit report per cell
    ledger.csv                                  one row per evaluated cell
    summary.txt                                 per-noise averages
    meta.json                                   config echo + timestamp
    ablation/, basin/                           per-experiment outputs

Everything except the meta.json timestamp is a pure function of the
config, so reruns produce byte-identical data files and ledgers.  Cell
failures are caught, recorded in the report slot, and skipped by
evaluate; the exit code is 0 only when every cell succeeded, 2 when some
cells failed, 1 on configuration errors.

Config precedence: built-in defaults < JSON config file < CLI flags.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .dynamics import (
    basin_of_attraction,
    make_dataset,
    make_system,
    save_dataset,
    trajectory_accelerations,
)
from .errors import ConfigError, LagidError
from .identify import (
    CoefficientVector,
    FitReport,
    LossWeights,
    OptimizerConfig,
    StlsConfig,
    fit,
)
from .bspline import assemble_matrices, eval_curve
from .metrics import evaluate


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment grid: a system crossed with noise levels and seeds.

    Each seed is one independent trial (its own initial conditions,
    forcing draw, noise, and collocation points).  duration None picks a
    per-system default: chaotic systems get a short window because a
    spline surrogate over many Lyapunov times helps nobody.
    """

    system: str = "single_pendulum"
    params: dict | None = None        # physical-parameter overrides
    mode: str | None = None           # force 'active'/'passive' handling
    noise_levels: tuple = (0.0,)
    seeds: tuple = (0, 1, 2, 3, 4)
    duration: float | None = None
    meas_every: int = 10
    missing_frac: float = 0.0
    n_control: int | None = None
    n_colloc: int | None = None
    weights: LossWeights = LossWeights()
    optimizer: OptimizerConfig = OptimizerConfig(init_coeffs="lstsq")
    stls: StlsConfig = StlsConfig()
    basin_resolution: int = 64
    basin_extent: float = 1.5
    basin_damping: float = 0.3
    workers: int = 1
    out_dir: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "noise_levels",
                           tuple(float(n) for n in self.noise_levels))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("seeds list must be non-empty")
        if not self.noise_levels:
            raise ConfigError("noise_levels list must be non-empty")
        if any(n < 0 for n in self.noise_levels):
            raise ConfigError("noise levels must be >= 0")
        if self.duration is not None and self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.meas_every < 1:
            raise ConfigError("meas_every must be >= 1")
        if not 0 <= self.missing_frac < 1:
            raise ConfigError("missing_frac must be in [0, 1)")
        if self.mode not in (None, "active", "passive"):
            raise ConfigError("mode override must be 'active' or 'passive'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.basin_resolution < 2:
            raise ConfigError("basin_resolution must be >= 2")


_NESTED = {"weights": LossWeights, "optimizer": OptimizerConfig,
           "stls": StlsConfig}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a config from parsed JSON; unknown keys are errors."""
    known = {f.name for f in fields(ExperimentConfig)}
    extra = set(raw) - known
    if extra:
        raise ConfigError("unknown config keys: %s" % ", ".join(sorted(extra)))
    kw = dict(raw)
    for name, cls in _NESTED.items():
        if name in kw and not isinstance(kw[name], cls):
            sub = kw[name]
            sub_known = {f.name for f in fields(cls)}
            sub_extra = set(sub) - sub_known
            if sub_extra:
                raise ConfigError("unknown %s keys: %s"
                                  % (name, ", ".join(sorted(sub_extra))))
            kw[name] = cls(**sub)
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as err:
        raise ConfigError("cannot read config %s: %s" % (path, err)) from err
    except json.JSONDecodeError as err:
        raise ConfigError("config %s is not valid JSON: %s" % (path, err)) from err
    return config_from_dict(raw)


def _cell_duration(cfg: ExperimentConfig) -> float:
    if cfg.duration is not None:
        return cfg.duration
    return 4.0 if cfg.system == "chaos_pendulum" else 20.0


def _noise_tag(noise: float) -> str:
    return "%g" % noise


def _cell_name(cfg: ExperimentConfig, noise: float, seed: int) -> str:
    return "%s_n%s_s%d" % (cfg.system, _noise_tag(noise), seed)


def _effective_mode(cfg: ExperimentConfig, system):
    mode = cfg.mode or system.mode
    if mode == "passive" and system.known_index is None:
        raise ConfigError(
            "passive handling needs a system with a known library term")
    return mode, system.known_index if mode == "passive" else None


def _run_cell(cfg: ExperimentConfig, noise: float, seed: int,
              weights: LossWeights | None = None,
              missing_frac: float | None = None):
    """Dataset + fit for one (noise, seed) cell; returns all pieces."""
    system = make_system(cfg.system, cfg.params)
    ds, system, traj = make_dataset(
        system, seed, noise_level=noise,
        missing_frac=cfg.missing_frac if missing_frac is None else missing_frac,
        duration=_cell_duration(cfg), meas_every=cfg.meas_every,
        n_colloc=cfg.n_colloc,
    )
    mode, known_index = _effective_mode(cfg, system)
    report = fit(ds, system.lib, mode=mode, known_index=known_index,
                 weights=weights or cfg.weights, optimizer=cfg.optimizer,
                 stls=cfg.stls, n_control=cfg.n_control)
    return system, ds, traj, report


def _report_payload(cfg, noise, seed, system, report: FitReport) -> dict:
    body = report.to_dict()
    trace = body.pop("loss_trace")
    body["loss_final"] = {k: v[-1] for k, v in trace.items()}
    body.pop("control_points")
    body.pop("knots")
    return {
        "cell": {
            "system": cfg.system,
            "params": system.params,
            "noise": noise,
            "seed": seed,
            "missing_frac": cfg.missing_frac,
            "mode": cfg.mode or system.mode,
        },
        "truth": {name: float(c)
                  for name, c in zip(system.lib.names, system.true_coeffs)},
        "known_term": system.known_name,
        "report": body,
    }


def _for_each_cell(cfg: ExperimentConfig, work):
    """Run work(noise, seed) per cell on a bounded pool; order-stable.

    Failures are converted to error strings so one bad cell cannot take
    down its neighbours.  Returns [(noise, seed, result | None, error)].
    """
    cells = [(n, s) for n in cfg.noise_levels for s in cfg.seeds]

    def guarded(cell):
        try:
            return work(*cell), None
        except Exception as err:  # crash isolation is the contract here
            return None, "%s: %s" % (type(err).__name__, err)

    if cfg.workers == 1:
        outs = [guarded(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outs = list(pool.map(guarded, cells))
    return [(n, s, res, err) for (n, s), (res, err) in zip(cells, outs)]


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _validate_grid(cfg: ExperimentConfig) -> None:
    # fail fast on bad system id / params / mode before touching cells
    _effective_mode(cfg, make_system(cfg.system, cfg.params))


def cmd_generate(cfg: ExperimentConfig) -> int:
    _validate_grid(cfg)
    out = Path(cfg.out_dir) / "data"
    out.mkdir(parents=True, exist_ok=True)

    def work(noise, seed):
        system = make_system(cfg.system, cfg.params)
        ds, system, _ = make_dataset(
            system, seed, noise_level=noise, missing_frac=cfg.missing_frac,
            duration=_cell_duration(cfg), meas_every=cfg.meas_every,
            n_colloc=cfg.n_colloc,
        )
        path = out / (_cell_name(cfg, noise, seed) + ".csv")
        save_dataset(ds, system, path)
        return path

    results = _for_each_cell(cfg, work)
    failures = 0
    for noise, seed, path, err in results:
        if err:
            failures += 1
            print("FAIL %s: %s" % (_cell_name(cfg, noise, seed), err))
        else:
            print("wrote %s" % path)
    return 2 if failures else 0


def cmd_identify(cfg: ExperimentConfig) -> int:
    _validate_grid(cfg)
    out = Path(cfg.out_dir) / "reports"
    out.mkdir(parents=True, exist_ok=True)

    def work(noise, seed):
        system, _, _, report = _run_cell(cfg, noise, seed)
        return _report_payload(cfg, noise, seed, system, report)

    results = _for_each_cell(cfg, work)
    failures = 0
    for noise, seed, payload, err in results:
        name = _cell_name(cfg, noise, seed)
        if err:
            failures += 1
            payload = {"cell": {"system": cfg.system, "noise": noise,
                                "seed": seed}, "error": err}
            print("FAIL %s: %s" % (name, err))
        else:
            print("%s: %s" % (name, payload["report"]["expression"]))
        _write_json(out / (name + ".json"), payload)
    _write_json(Path(cfg.out_dir) / "meta.json",
                {"config": _config_echo(cfg), "timestamp": time.strftime(
                    "%Y-%m-%dT%H:%M:%S")})
    return 2 if failures else 0


def _config_echo(cfg: ExperimentConfig) -> dict:
    echo = asdict(cfg)
    echo["noise_levels"] = list(cfg.noise_levels)
    echo["seeds"] = list(cfg.seeds)
    return echo


def _metrics_from_payload(payload: dict):
    system = make_system(payload["cell"]["system"], payload["cell"]["params"])
    known = payload["known_term"]
    known_index = system.lib.index_of(known) if known else None
    names = list(system.lib.names)
    got = np.array([payload["report"]["coefficients"][n] for n in names])
    if known_index is not None:
        got[known_index] = 0.0
    active = np.zeros(len(names), dtype=bool)
    for n in payload["report"]["active_terms"]:
        active[names.index(n)] = True
    identified = CoefficientVector(got * active, active, known_index)
    truth = CoefficientVector.from_full(
        [payload["truth"][n] for n in names], known_index)
    return evaluate(identified, truth, system.lib)


_LEDGER_COLS = ("system", "noise", "seed", "missing_frac", "l2_rel", "l2_raw",
                "precision", "recall", "n_active", "converged", "n_iters")


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    rep_dir = Path(cfg.out_dir) / "reports"
    rows, missing = [], []
    for noise in cfg.noise_levels:
        for seed in cfg.seeds:
            name = _cell_name(cfg, noise, seed)
            path = rep_dir / (name + ".json")
            if not path.exists():
                missing.append(name + " (no report)")
                continue
            payload = json.loads(path.read_text())
            if "error" in payload:
                missing.append(name + ": " + payload["error"])
                continue
            try:
                res = _metrics_from_payload(payload)
            except LagidError as err:
                missing.append("%s: %s: %s" % (name, type(err).__name__, err))
                continue
            rows.append({
                "system": cfg.system, "noise": noise, "seed": seed,
                "missing_frac": payload["cell"]["missing_frac"],
                "l2_rel": res.l2_rel, "l2_raw": res.l2_raw,
                "precision": res.precision, "recall": res.recall,
                "n_active": len(payload["report"]["active_terms"]),
                "converged": payload["report"]["converged"],
                "n_iters": payload["report"]["n_iters"],
            })

    ledger = Path(cfg.out_dir) / "ledger.csv"
    lines = [",".join(_LEDGER_COLS)]
    for r in sorted(rows, key=lambda r: (r["noise"], r["seed"])):
        lines.append(",".join(_ledger_cell(r[c]) for c in _LEDGER_COLS))
    ledger.write_text("\n".join(lines) + "\n")

    table = _summary_table(cfg, rows)
    (Path(cfg.out_dir) / "summary.txt").write_text(table)
    print(table, end="")
    for entry in missing:
        print("missing: %s" % entry)
    return 2 if missing else 0


def _ledger_cell(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _summary_table(cfg: ExperimentConfig, rows, label="noise") -> str:
    """Per-noise averages over seeds in a fixed-width table."""
    out = ["%-28s %8s %10s %8s %8s %8s"
           % ("system", label, "l2x100", "P%", "R%", "trials")]
    for noise in cfg.noise_levels:
        cell = [r for r in rows if r["noise"] == noise]
        if not cell:
            continue
        out.append("%-28s %8s %10.3f %8.1f %8.1f %5d/%d" % (
            cfg.system, _noise_tag(noise),
            100.0 * float(np.mean([r["l2_rel"] for r in cell])),
            100.0 * float(np.mean([r["precision"] for r in cell])),
            100.0 * float(np.mean([r["recall"] for r in cell])),
            len(cell), len(cfg.seeds),
        ))
    return "\n".join(out) + "\n"


_GROUPS = (
    ("A", "full data, curvature regularized"),
    ("B", "5% missing data"),
    ("C", "no curvature regularization"),
)


def cmd_ablate(cfg: ExperimentConfig) -> int:
    """Groups: A full data, B 5% missing, C beta = 0; curves for seed 0."""
    _validate_grid(cfg)
    out = Path(cfg.out_dir) / "ablation"
    out.mkdir(parents=True, exist_ok=True)
    curve_seed = cfg.seeds[0]
    variants = {
        "A": dict(),
        "B": dict(missing_frac=0.05),
        "C": dict(weights=replace(cfg.weights, beta=0.0)),
    }

    failures = 0
    table_rows = {}
    for group, kw in variants.items():
        def work(noise, seed, kw=kw, group=group):
            system, ds, traj, report = _run_cell(cfg, noise, seed, **kw)
            truth = CoefficientVector.from_full(
                system.true_coeffs,
                system.known_index if (cfg.mode or system.mode) == "passive"
                else None)
            res = evaluate(report.coeffs, truth, system.lib)
            if seed == curve_seed:
                _write_curves(out, "%s_%s" % (_cell_name(cfg, noise, seed),
                                              group), system, ds, traj, report)
            return res

        results = _for_each_cell(cfg, work)
        rows = []
        for noise, seed, res, err in results:
            if err:
                failures += 1
                print("FAIL %s group %s: %s"
                      % (_cell_name(cfg, noise, seed), group, err))
                continue
            rows.append({"noise": noise, "l2_rel": res.l2_rel,
                         "precision": res.precision, "recall": res.recall})
        table_rows[group] = rows

    lines = []
    for group, desc in _GROUPS:
        rows = table_rows.get(group, [])
        if rows:
            lines.append("group %s (%s)" % (group, desc))
            lines.append(_summary_table(cfg, rows))
    table = "\n".join(lines)
    (out / "table.txt").write_text(table)
    print(table, end="")
    return 2 if failures else 0


def _write_curves(out_dir: Path, stem: str, system, ds, traj, report) -> None:
    """Fit-vs-truth curves on the measurement grid, one CSV per DOF."""
    step = max(1, round((ds.t_meas[1] - ds.t_meas[0]) /
                        (traj.times[1] - traj.times[0])))
    qdd_true = trajectory_accelerations(system, traj)[::step]
    q_true, qd_true = traj.q[::step], traj.qd[::step]
    q_fit, qd_fit, qdd_fit = eval_curve(
        report.model, assemble_matrices(report.model.knots, ds.t_meas))
    header = "t,q_true,q_fit,qd_true,qd_fit,qdd_true,qdd_fit"
    for i in range(ds.dof):
        cols = np.column_stack([ds.t_meas, q_true[:, i], q_fit[:, i],
                                qd_true[:, i], qd_fit[:, i],
                                qdd_true[:, i], qdd_fit[:, i]])
        np.savetxt(out_dir / ("%s_dof%d.csv" % (stem, i)), cols,
                   delimiter=",", header=header, comments="")


def cmd_basin(cfg: ExperimentConfig) -> int:
    """Identify the magnetic pendulum, then compare basin grids."""
    if cfg.system != "magnetic_pendulum":
        raise ConfigError("basin experiment runs on system=magnetic_pendulum")
    out = Path(cfg.out_dir) / "basin"
    out.mkdir(parents=True, exist_ok=True)

    noise, seed = cfg.noise_levels[0], cfg.seeds[0]
    system, _, _, report = _run_cell(cfg, noise, seed)
    identified = report.coeffs.full()

    kw = dict(extent=cfg.basin_extent, resolution=cfg.basin_resolution,
              damping=cfg.basin_damping)
    grid_true = basin_of_attraction(system, **kw)
    grid_id = basin_of_attraction(system, coeffs=identified, **kw)
    agreement = float(np.mean(grid_true == grid_id))

    np.savetxt(out / "true_grid.csv", grid_true, fmt="%d", delimiter=",")
    np.savetxt(out / "identified_grid.csv", grid_id, fmt="%d", delimiter=",")
    _write_json(out / "result.json", {
        "agreement": agreement,
        "resolution": cfg.basin_resolution,
        "extent": cfg.basin_extent,
        "damping": cfg.basin_damping,
        "noise": noise,
        "seed": seed,
        "expression": report.expression,
    })
    print("basin agreement: %.4f (%dx%d grid)"
          % (agreement, cfg.basin_resolution, cfg.basin_resolution))
    return 0


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; the contract reserves 2 for partial
    cell failures and 1 for configuration problems."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write("error: %s\n" % message)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="lagid",
                description="Sparse Lagrangian identification experiments")
    p.add_argument("command",
                   choices=["generate", "identify", "evaluate", "ablate",
                            "basin"])
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--system", help="system id, e.g. double_pendulum")
    p.add_argument("--noise", help="comma list of noise levels, e.g. 0,0.01")
    p.add_argument("--seeds", help="comma list of seeds, e.g. 0,1,2,3,4")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="parallel cells")
    p.add_argument("--no-reg", action="store_true",
                   help="disable curvature regularization (beta = 0)")
    return p


def _apply_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    over = {}
    if args.system:
        over["system"] = args.system
    if args.noise:
        over["noise_levels"] = tuple(float(x) for x in args.noise.split(","))
    if args.seeds:
        over["seeds"] = tuple(int(x) for x in args.seeds.split(","))
    if args.out:
        over["out_dir"] = args.out
    if args.workers is not None:
        over["workers"] = args.workers
    if args.no_reg:
        over["weights"] = replace(cfg.weights, beta=0.0)
    return replace(cfg, **over) if over else cfg


_COMMANDS = {"generate": cmd_generate, "identify": cmd_identify,
             "evaluate": cmd_evaluate, "ablate": cmd_ablate,
             "basin": cmd_basin}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = _apply_flags(cfg, args)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, ValueError) as err:
        print("configuration error: %s" % err, file=sys.stderr)
        return 1
    except LagidError as err:
        print("error: %s" % err, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
