"""Limited-memory BFGS with a strong-Wolfe line search, plus seeded multistart."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class OptimizerConfig:
    memory: int = 10
    max_iters: int = 2000
    grad_tol: float = 1e-7
    f_tol: float = 1e-12
    restarts: int = 8
    seed: int = 0
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 30
    patience: int = 10

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if not (self.grad_tol > 0 and self.f_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass
class IterationRecord:
    iteration: int
    value: float
    grad_inf: float
    step: float
    shots: int = 0


@dataclass
class RunTrace:
    records: list[IterationRecord] = field(default_factory=list)
    theta_opt: np.ndarray | None = None
    value: float = math.nan
    reason: str = ""
    evaluations: int = 0
    gradients: int = 0

    @property
    def iterations(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {
            "theta_opt": [float(t) for t in self.theta_opt],
            "value": self.value,
            "reason": self.reason,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "gradients": self.gradients,
            "records": [asdict(r) for r in self.records],
        }


def two_loop(grad: np.ndarray, s_hist: list[np.ndarray], y_hist: list[np.ndarray]) -> np.ndarray:
    """Search direction ``-H grad`` from the stored curvature pairs (newest last)."""
    q = np.array(grad, dtype=float)
    if not s_hist:
        return -q
    rho = [1.0 / float(y @ s) for s, y in zip(s_hist, y_hist)]
    alpha = [0.0] * len(s_hist)
    for j in reversed(range(len(s_hist))):
        alpha[j] = rho[j] * float(s_hist[j] @ q)
        q -= alpha[j] * y_hist[j]
    s, y = s_hist[-1], y_hist[-1]
    q *= float(s @ y) / float(y @ y)
    for j in range(len(s_hist)):
        beta = rho[j] * float(y_hist[j] @ q)
        q += (alpha[j] - beta) * s_hist[j]
    return -q


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db), or None."""
    if not all(math.isfinite(v) for v in (a, fa, da, b, fb, db)) or a == b:
        return None
    d1 = da + db - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2 * d2
    if denom == 0 or not math.isfinite(denom):
        return None
    out = b - (b - a) * (db + d2 - d1) / denom
    return out if math.isfinite(out) else None


@dataclass
class LineSearchResult:
    alpha: float
    value: float
    grad: np.ndarray | None
    success: bool


def strong_wolfe(phi: Callable[[float], float], dphi: Callable[[float], tuple[float, np.ndarray]],
                 f0: float, d0: float, alpha1: float, c1: float, c2: float,
                 max_iter: int = 30, alpha_max: float = 1e3) -> LineSearchResult:
    """Bracketing + zoom line search for the strong Wolfe conditions.

    ``phi(a)`` is the objective along the ray, ``dphi(a)`` returns the
    directional derivative and the full gradient at that point. Non-finite
    objective values count as a failed sufficient-decrease test.
    """
    evals = 0

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        nonlocal evals
        while evals < max_iter:
            a = None
            if d_hi is not None and math.isfinite(f_hi):
                a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            width = abs(hi - lo)
            if a is None or not (min(lo, hi) + 0.1 * width <= a <= max(lo, hi) - 0.1 * width):
                a = 0.5 * (lo + hi)
            f_a = phi(a)
            evals += 1
            if not math.isfinite(f_a) or f_a > f0 + c1 * a * d0 or f_a >= f_lo:
                hi, f_hi, d_hi = a, f_a, None
                continue
            d_a, g_a = dphi(a)
            if abs(d_a) <= -c2 * d0:
                return LineSearchResult(a, f_a, g_a, True)
            if d_a * (hi - lo) >= 0:
                hi, f_hi, d_hi = lo, f_lo, d_lo
            lo, f_lo, d_lo = a, f_a, d_a
        return LineSearchResult(lo, f_lo, None, False)

    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = alpha1
    while evals < max_iter:
        f_a = phi(a)
        evals += 1
        if not math.isfinite(f_a) or f_a > f0 + c1 * a * d0 or (a_prev > 0 and f_a >= f_prev):
            return zoom(a_prev, f_prev, d_prev, a, f_a, None)
        d_a, g_a = dphi(a)
        if abs(d_a) <= -c2 * d0:
            return LineSearchResult(a, f_a, g_a, True)
        if d_a >= 0:
            return zoom(a, f_a, d_a, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev = a, f_a, d_a
        a = min(2 * a, alpha_max)
    return LineSearchResult(a_prev, f_prev, None, False)


def _safe(fn, *args):
    try:
        val = fn(*args)
    except ArithmeticError:
        return None
    return val


def minimize(cost_fn: Callable[[np.ndarray], float], grad_fn: Callable[[np.ndarray], np.ndarray],
             theta0, config: OptimizerConfig = OptimizerConfig(), noisy: bool = False,
             on_iteration: Callable[[int], None] | None = None,
             shots_fn: Callable[[], int] | None = None) -> RunTrace:
    """Minimize ``cost_fn``; returns the trace with ``theta_opt`` and the stop reason.

    ``noisy`` (shot-sampled objectives) re-evaluates value and gradient at the
    start of every iteration after ``on_iteration`` has reset the seed stream,
    and adds a patience stop. ``ArithmeticError`` from the callbacks is treated
    as a rejected trial point.
    """
    x = np.array(theta0, dtype=float)
    trace = RunTrace()

    def f(z):
        trace.evaluations += 1
        v = _safe(cost_fn, z)
        return math.inf if v is None else float(v)

    def g(z):
        trace.gradients += 1
        v = _safe(grad_fn, z)
        return None if v is None else np.asarray(v, dtype=float)

    if on_iteration:
        on_iteration(0)
    fx, gx = f(x), g(x)
    if not math.isfinite(fx) or gx is None or not np.all(np.isfinite(gx)):
        trace.theta_opt, trace.value, trace.reason = x, fx, "non-finite"
        return trace
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    stale, failures = 0, 0
    reason = "max_iters"
    for it in range(1, config.max_iters + 1):
        if np.max(np.abs(gx)) < config.grad_tol:
            reason = "grad_tol"
            break
        if noisy and on_iteration:
            on_iteration(it)
            fx, gx = f(x), g(x)
            if gx is None or not math.isfinite(fx):
                reason = "non-finite"
                break
        p = two_loop(gx, s_hist, y_hist)
        d0 = float(p @ gx)
        if d0 >= 0:
            s_hist.clear(), y_hist.clear()
            p, d0 = -gx, -float(gx @ gx)
        # without curvature information the first trial step has unit length
        alpha1 = 1.0 if s_hist else 1.0 / max(np.linalg.norm(gx), 1e-300)
        if not noisy and on_iteration:
            on_iteration(it)
        def dphi(a):
            ga = g(x + a * p)
            if ga is None:
                return math.inf, None
            return float(ga @ p), ga

        ls = strong_wolfe(lambda a: f(x + a * p), dphi, fx, d0, alpha1, config.c1, config.c2,
                          config.max_line_search, alpha_max=1e3 * alpha1)
        if not ls.success:
            failures += 1
            if noisy:
                # a fresh sample stream next iteration may well succeed
                s_hist.clear(), y_hist.clear()
                stale += 1
                if stale >= config.patience:
                    reason = "patience"
                    break
                continue
            if s_hist and failures < 2:
                s_hist.clear(), y_hist.clear()
                continue
            reason = "line_search_failed"
            break
        failures = 0
        x_new = x + ls.alpha * p
        g_new = ls.grad
        if not noisy:
            assert ls.value <= fx + config.c1 * ls.alpha * d0, "sufficient decrease violated"
            assert abs(float(g_new @ p)) <= config.c2 * abs(d0), "curvature condition violated"
        s, y = x_new - x, g_new - gx
        if float(s @ y) > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s), y_hist.append(y)
            if len(s_hist) > config.memory:
                s_hist.pop(0), y_hist.pop(0)
        delta = fx - ls.value
        x, fx, gx = x_new, ls.value, g_new
        trace.records.append(IterationRecord(it, fx, float(np.max(np.abs(gx))), float(ls.alpha),
                                             shots_fn() if shots_fn else 0))
        if not noisy and abs(delta) < config.f_tol * (1 + abs(fx)):
            reason = "f_tol"
            break
        if noisy:
            # the decrease is measured within one seed stream, so it is not
            # swamped by the sample-to-sample spread of the estimates
            if delta > config.f_tol * (1 + abs(fx)):
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    reason = "patience"
                    break
    trace.theta_opt, trace.value, trace.reason = x, fx, reason
    return trace


# ---------------------------------------------------------------- multistart

def _thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("POISSON_VQA_THREADS", "1")))
    except ValueError:
        return 1


def initial_points(num_params: int, config: OptimizerConfig) -> list[np.ndarray]:
    seqs = np.random.SeedSequence(config.seed).spawn(config.restarts)
    return [np.random.default_rng(s).uniform(0.0, 2 * math.pi, num_params) for s in seqs]


@dataclass
class MultistartResult:
    best: RunTrace
    best_index: int
    runs: list[RunTrace]


def multistart(run_one: Callable[[np.ndarray], RunTrace], num_params: int,
               config: OptimizerConfig = OptimizerConfig()) -> MultistartResult:
    """Run ``run_one`` from ``config.restarts`` seeded starting points; keep the lowest final value.

    ``run_one`` must be picklable when ``POISSON_VQA_THREADS`` > 1 (runs then
    go to a process pool). Ties resolve to the earliest restart.
    """
    starts = initial_points(num_params, config)
    workers = min(_thread_cap(), len(starts))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run_one, starts))
    else:
        runs = [run_one(t0) for t0 in starts]
    values = [r.value if math.isfinite(r.value) else math.inf for r in runs]
    idx = int(np.argmin(values))
    return MultistartResult(runs[idx], idx, runs)
