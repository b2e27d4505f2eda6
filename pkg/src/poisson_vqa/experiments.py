"""Experiment configs, the solve / sample-study / noise-bench / plan-audit runners
and their file outputs.

A config is one JSON document; every report echoes the fully resolved config
so that a report alone is enough to rerun it. Wall-clock times go to a
separate ``timings.json`` so reports stay bitwise reproducible.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .ansatz import AnsatzSpec
from .cost import VQAProblem
from .measure import Exact, Noisy, Shots, plan_expectation, plan_expectation_squared_dirichlet
from .noise_bench import DEFAULT_P1, DEFAULT_P2_GRID, DEFAULT_TRIALS, noise_sweep
from .optimizer import OptimizerConfig, RunTrace, minimize, multistart
from .poisson import (
    BoundaryCondition,
    Device,
    Explicit,
    PoissonSpec,
    SingularSystemError,
    StepFunction,
    UnsupportedSpecError,
    grid_csv,
    solve_exact,
)
from .poisson import metrics as solution_metrics
from .qsim import MAX_DENSITY_QUBITS

SCHEMA = 1


class ConfigError(ValueError):
    """Malformed or inconsistent experiment config (exit code 2)."""


class BudgetError(RuntimeError):
    """The requested run exceeds the simulator budget (exit code 4)."""


class NumericalError(ArithmeticError):
    """The optimization ended on a non-finite cost (exit code 3)."""


DEFAULTS: dict = {
    "problem": {"n": 4, "boundary": "ND", "rhs": {"kind": "step"}},
    "depth": 3,
    "mode": {"kind": "exact"},
    "seed": 0,
    "optimizer": {},
    "out": "out",
    "shot_grid": [2**17, 2**18],
    "noise_bench": {"n": 4, "p1": DEFAULT_P1, "p2_grid": list(DEFAULT_P2_GRID), "trials": DEFAULT_TRIALS, "depth": 3},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "rhs":
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    problem: dict
    depth: int
    mode: dict
    seed: int
    optimizer: OptimizerConfig
    out: str
    shot_grid: list
    noise_bench: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - set(DEFAULTS) - {"schema"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = _merge(DEFAULTS, {k: v for k, v in raw.items() if k != "schema"})
        opt = dict(d["optimizer"])
        opt.setdefault("seed", d["seed"])
        try:
            optimizer = OptimizerConfig(**opt)
        except TypeError as exc:
            raise ConfigError(f"bad optimizer section: {exc}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        mode = dict(d["mode"])
        kind = mode.get("kind")
        if kind == "shots":
            mode.setdefault("count", 2**18)
            mode.setdefault("seed", d["seed"])
            mode.setdefault("policy", "iteration")
        elif kind == "noisy":
            mode.setdefault("p1", 0.0)
            mode.setdefault("p2", 0.0)
            mode.setdefault("seed", d["seed"])
        elif kind != "exact":
            raise ConfigError(f"mode.kind must be exact, shots or noisy, got {kind!r}")
        d["mode"] = mode
        cfg = cls(d["problem"], d["depth"], mode, d["seed"], optimizer, d["out"], d["shot_grid"],
                  d["noise_bench"])
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}
        out["optimizer"] = asdict(self.optimizer)
        return out

    # ------------------------------------------------------------ derived objects
    def spec(self) -> PoissonSpec:
        p = self.problem
        try:
            bcs = p["boundary"]
            return PoissonSpec(len(bcs), int(p["n"]), tuple(bcs))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad problem section: {exc}") from None
        except UnsupportedSpecError as exc:
            if "exceeds" in str(exc):
                raise BudgetError(str(exc)) from None
            raise ConfigError(str(exc)) from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def rhs(self):
        r = self.problem.get("rhs", {})
        kind = r.get("kind")
        spec = self.spec()
        if kind == "step":
            return StepFunction(spec.d, spec.n)
        if kind == "device":
            if spec.d != 2:
                raise ConfigError("the device RHS is two-dimensional")
            return Device(spec.n, float(r.get("vg", 0.5)))
        if kind == "explicit":
            return Explicit(r["vector"])
        raise ConfigError(f"rhs.kind must be step, device or explicit, got {kind!r}")

    def estimation_mode(self):
        m = self.mode
        if m["kind"] == "shots":
            return Shots(int(m["count"]), int(m["seed"]))
        if m["kind"] == "noisy":
            return Noisy(float(m["p1"]), float(m["p2"]), int(m["seed"]))
        return Exact()

    def validate(self) -> None:
        if not isinstance(self.depth, int) or self.depth < 0:
            raise ConfigError("depth must be a non-negative integer")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        spec = self.spec()
        self.rhs()
        if self.mode["kind"] == "shots" and int(self.mode["count"]) < 1:
            raise ConfigError("shot count must be >= 1")
        if self.mode["kind"] == "noisy":
            try:
                self.estimation_mode()
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            ancillas = 1 if self.problem["rhs"].get("kind") == "device" else 0
            if spec.num_qubits + 1 + ancillas > MAX_DENSITY_QUBITS:
                raise BudgetError(
                    f"noisy mode needs {spec.num_qubits + 1 + ancillas} qubits, budget is {MAX_DENSITY_QUBITS}")
        if not self.shot_grid:
            raise ConfigError("shot_grid must be non-empty")
        for s in self.shot_grid:
            if _shots_value(s) is not None and _shots_value(s) < 1:
                raise ConfigError(f"bad shot count {s!r}")


def _shots_value(s) -> int | None:
    """Shot-grid entry as an int, or ``None`` for the infinite-shot sentinel."""
    if s is None or (isinstance(s, str) and s.lower() in ("inf", "infinity", "exact")):
        return None
    if isinstance(s, float) and math.isinf(s):
        return None
    try:
        return int(s)
    except (TypeError, ValueError):
        raise ConfigError(f"bad shot count {s!r}") from None


# ---------------------------------------------------------------- output helpers

def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def trace_jsonl(trace: RunTrace) -> str:
    return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in trace.records)


# ---------------------------------------------------------------- solve

@dataclass
class SolveReport:
    config: dict
    theta_opt: list[float]
    e_min: float
    r: float
    fidelity: float | None
    norm_rel_error: float | None
    circuits_per_cost: int
    total_shots: int
    best_restart: int
    termination: str
    physical_rhs: bool = True
    traces: list[dict] = field(default_factory=list)
    wall_time: float = field(default=0.0, repr=False)

    def to_dict(self) -> dict:
        out = {
            "schema": SCHEMA,
            "config": self.config,
            "theta_opt": self.theta_opt,
            "E_min": self.e_min,
            "r": self.r,
            "circuits_per_cost": self.circuits_per_cost,
            "total_shots": self.total_shots,
            "best_restart": self.best_restart,
            "termination": self.termination,
            "physical_rhs": self.physical_rhs,
            "traces": self.traces,
        }
        if self.fidelity is not None:
            out["fidelity"] = self.fidelity
            out["norm_rel_error"] = self.norm_rel_error
        return out


@dataclass
class _SolveRun:
    report: SolveReport
    field: np.ndarray
    best: RunTrace


class _Restart:
    """One optimizer run on a fresh problem instance (picklable for process pools)."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg

    def problem(self) -> VQAProblem:
        cfg = self.cfg
        spec = cfg.spec()
        try:
            return VQAProblem(spec, cfg.rhs(), AnsatzSpec(spec.num_qubits, cfg.depth),
                              cfg.estimation_mode(), seed_policy=cfg.mode.get("policy", "iteration"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def __call__(self, theta0) -> RunTrace:
        problem = self.problem()
        return minimize(lambda t: problem.cost(t).value, problem.gradient, theta0, self.cfg.optimizer,
                        noisy=isinstance(problem.mode, Shots), on_iteration=problem.advance,
                        shots_fn=lambda: problem.counter.shots)


def run_solve(cfg: ExperimentConfig) -> _SolveRun:
    start = time.perf_counter()
    spec = cfg.spec()
    runner = _Restart(cfg)
    problem = runner.problem()
    result = multistart(runner, problem.ansatz.num_params, cfg.optimizer)
    best = result.best
    if best.reason == "non-finite" or not math.isfinite(best.value):
        raise NumericalError(f"optimization ended on a non-finite cost ({best.reason})")
    theta = best.theta_opt
    # the reported state, norm and field come from the final parameters; the
    # norm factor is re-estimated in the run's own mode
    final = problem.cost(theta)
    psi = problem.state(theta)
    b = problem.rhs_vector.vector
    fid = nre = None
    try:
        exact = solve_exact(spec, b)
    except SingularSystemError:
        exact = None
    if exact is not None:
        m = solution_metrics(psi, final.r, b, exact)
        fid, nre = m.fidelity, m.norm_rel_error
    report = SolveReport(
        config=cfg.to_dict(),
        theta_opt=[float(t) for t in theta],
        e_min=float(best.value),
        r=float(final.r),
        fidelity=fid,
        norm_rel_error=nre,
        circuits_per_cost=final.circuits_used,
        total_shots=int(sum(r.records[-1].shots for r in result.runs if r.records)),
        best_restart=result.best_index,
        termination=best.reason,
        physical_rhs=bool(problem.prep.physical),
        traces=[{k: v for k, v in r.to_dict().items() if k != "records"} for r in result.runs],
    )
    report.wall_time = time.perf_counter() - start
    return _SolveRun(report, final.r * np.linalg.norm(b) * psi, best)


def _write_solve(run: _SolveRun, spec: PoissonSpec, out: Path) -> list[Path]:
    paths = [out / "report.json", out / "solution.csv", out / "trace.jsonl", out / "timings.json"]
    write_atomic(paths[0], dumps(run.report.to_dict()))
    write_atomic(paths[1], grid_csv(run.field, spec))
    write_atomic(paths[2], trace_jsonl(run.best))
    write_atomic(paths[3], dumps({"wall_time_s": run.report.wall_time}))
    return paths


def cmd_solve(cfg: ExperimentConfig) -> SolveReport:
    run = run_solve(cfg)
    _write_solve(run, cfg.spec(), Path(cfg.out))
    return run.report


# ---------------------------------------------------------------- sample study

def _with_shots(cfg: ExperimentConfig, shots: int | None) -> ExperimentConfig:
    raw = cfg.to_dict()
    if shots is None:
        raw["mode"] = {"kind": "exact"}
    else:
        policy = cfg.mode.get("policy", "iteration") if cfg.mode["kind"] == "shots" else "iteration"
        raw["mode"] = {"kind": "shots", "count": shots, "seed": cfg.mode.get("seed", cfg.seed), "policy": policy}
    return ExperimentConfig.from_dict(raw)


def cmd_sample_study(cfg: ExperimentConfig, shot_grid=None) -> list[SolveReport]:
    """One solve per shot count (``"inf"`` runs exact mode); writes a comparison CSV."""
    grid = list(shot_grid if shot_grid is not None else cfg.shot_grid)
    if not grid:
        raise ConfigError("shot grid is empty")
    out = Path(cfg.out)
    reports = []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["shots", "fidelity", "norm_rel_error", "E_min", "total_shots"])
    for entry in grid:
        shots = _shots_value(entry)
        sub = _with_shots(cfg, shots)
        label = "inf" if shots is None else str(shots)
        run = run_solve(sub)
        _write_solve(run, sub.spec(), out / f"shots_{label}")
        rep = run.report
        reports.append(rep)
        w.writerow([label, repr(rep.fidelity), repr(rep.norm_rel_error), repr(rep.e_min), rep.total_shots])
    write_atomic(out / "sample_study.csv", buf.getvalue())
    return reports


# ---------------------------------------------------------------- noise bench and plan audit

def cmd_noise_bench(cfg: ExperimentConfig):
    nb = cfg.noise_bench
    try:
        n = int(nb["n"])
        if 2 * n + (n >= 4) > MAX_DENSITY_QUBITS:
            raise BudgetError(f"noise bench at n={n} exceeds the density budget")
        result = noise_sweep(n, float(nb["p1"]), [float(p) for p in nb["p2_grid"]], int(nb["trials"]),
                             cfg.seed, int(nb.get("depth", 3)))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad noise_bench section: {exc}") from None
    except UnsupportedSpecError as exc:
        raise BudgetError(str(exc)) from None
    out = Path(cfg.out)
    write_atomic(out / "noise_sweep.csv", result.to_csv())
    write_atomic(out / "noise_report.json", dumps({
        "schema": SCHEMA,
        "config": cfg.to_dict(),
        "p1": result.p1,
        "p2_grid": result.p2_grid,
        "trials": result.trials,
        "seed": result.seed,
        "mean_rel_error": result.mean,
        "stderr": result.stderr,
    }))
    return result


def plan_audit(spec: PoissonSpec) -> dict:
    plan = plan_expectation(spec)
    counts: dict = {"E": plan.circuit_count}
    out = {"spec": {"d": spec.d, "n": spec.n, "boundary": spec.label()}, "E": plan.to_dict()}
    if spec.d == 2 and all(bc is BoundaryCondition.DIRICHLET for bc in spec.bc):
        sq = plan_expectation_squared_dirichlet(spec)
        counts["E_tilde_A2"] = sq.circuit_count
        out["E_tilde_A2"] = sq.plan.to_dict()
    out["counts"] = counts
    return out


def cmd_plan_audit(cfg: ExperimentConfig) -> dict:
    audit = plan_audit(cfg.spec())
    write_atomic(Path(cfg.out) / "plan_audit.json", dumps({"schema": SCHEMA, "config": cfg.to_dict(), **audit}))
    return audit
