"""Experiment harness: wires configs to sessions and produces metrics.

Everything here is deterministic given the config seed; the replay command
relies on that to byte-compare a re-run against an existing CSV.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .metrics import MetricsRow, render_csv
from .runner import GenerationReport, SimSession
from .safeguards import Action, SafeguardPolicy
from .transport import Completion


class DivergenceError(Exception):
    pass


class HaltError(Exception):
    pass


def oracle_allreduce(buckets: list[np.ndarray]) -> np.ndarray:
    """Reference mean: float64 accumulation over node order."""
    lens = {len(b) for b in buckets}
    if len(lens) != 1:
        raise ValueError("bucket length mismatch")
    acc = np.zeros(lens.pop(), dtype=np.float64)
    for b in buckets:
        acc += np.asarray(b, dtype=np.float64)
    return acc / len(buckets)


def build_session(cfg: ExperimentConfig) -> SimSession:
    return SimSession(
        n=cfg.n,
        latency=cfg.latency_model(),
        faults=cfg.fault_plan(),
        seed=cfg.seed,
        variant=cfg.variant,
        transport=cfg.transport,
        ht=cfg.ht,
        incast=cfg.incast_value(),
        group_size=cfg.group_size,
        server=cfg.server,
        t_b=cfg.t_b,
        alpha=cfg.alpha,
        x_pct=cfg.x_pct,
        link_rate=cfg.link_rate_gbit * 1e9 / 8,
        max_payload=cfg.max_payload,
        calibration_iterations=cfg.calibration_iterations,
        policy=SafeguardPolicy(
            skip_threshold=cfg.skip_threshold,
            halt_threshold=cfg.halt_threshold,
            window=cfg.halt_window,
        ),
    )


def _bucket_rng(cfg: ExperimentConfig) -> np.random.Generator:
    # separate stream from the session's network rng
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([cfg.seed, 0x6275636B]))
    )


def rows_for_report(
    cfg: ExperimentConfig, report: GenerationReport, oracle: np.ndarray
) -> list[MetricsRow]:
    rows = []
    for node, (st, res) in enumerate(zip(report.stats, report.results)):
        comps = [o.completion for _k, _knd, o in st.outcomes]
        mse = float(np.mean((np.asarray(res, dtype=np.float64) - oracle) ** 2))
        rows.append(
            MetricsRow(
                generation=report.generation,
                node=node,
                variant=cfg.variant,
                incast=report.incast_used,
                ht=int(report.ht_used),
                completion_early=comps.count(Completion.EARLY_TIMEOUT),
                completion_hard=comps.count(Completion.HARD_TIMEOUT),
                completion_on_time=comps.count(Completion.ON_TIME),
                loss_rate=st.loss_rate,
                bytes_sent=st.bytes_sent,
                bytes_received=st.bytes_received,
                wall=report.wall,
                mse=mse,
                action=report.action.name,
            )
        )
    return rows


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    reports: list = field(default_factory=list)

    def csv(self) -> str:
        return render_csv(self.rows)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Random-bucket generations; the generic path behind most commands."""
    session = build_session(cfg)
    rng = _bucket_rng(cfg)
    result = ExperimentResult()
    for _ in range(cfg.generations):
        buckets = [
            rng.standard_normal(cfg.bucket_len).astype(np.float32)
            for _ in range(cfg.n)
        ]
        oracle = oracle_allreduce(buckets)
        report = session.run_generation(buckets)
        result.rows.extend(rows_for_report(cfg, report, oracle))
        result.reports.append(report)
    return result


def run_calibration(cfg: ExperimentConfig) -> float:
    session = build_session(cfg)
    session.ensure_calibrated(cfg.bucket_len)
    return session.controllers[0].timeouts.t_b


# -- MSE benchmark -----------------------------------------------------------


def run_mse_benchmark(
    cfg: ExperimentConfig, seeds: list[int], variants=("tar", "ps", "ring")
) -> dict[str, list[float]]:
    """Per-variant mean MSE against the lossless oracle, one value per seed.

    Each variant sees the same scenario and seed; only the traffic pattern
    differs. HT stays off so the comparison isolates the collective itself.
    """
    table: dict[str, list[float]] = {v: [] for v in variants}
    for seed in seeds:
        for variant in variants:
            c = dataclasses.replace(
                cfg, variant=variant, seed=seed, ht="off", generations=1
            )
            res = run_experiment(c)
            table[variant].append(
                float(np.mean([r.mse for r in res.rows]))
            )
    return table


# -- incast benchmark ---------------------------------------------------------


def run_incast_benchmark(cfg: ExperimentConfig) -> dict[str, float]:
    """Total wall time for dynamic incast vs. unit incast, same scenario."""
    out = {}
    for label, incast in (("dynamic", "dynamic"), ("unit", "1")):
        c = dataclasses.replace(cfg, incast=incast)
        res = run_experiment(c)
        out[label] = float(sum(rep.wall for rep in res.reports))
    return out


# -- SGD workload --------------------------------------------------------------


@dataclass(frozen=True)
class LeastSquaresProblem:
    """Distributed least squares with a known optimum.

    min_w  f(w) = ||A w - b||^2 / (2 m).  Rows are sharded across nodes;
    singular values of A are kept in a narrow band so plain gradient descent
    with lr=1 contracts quickly.
    """

    parts_a: tuple  # per-node row blocks
    parts_b: tuple
    w0: np.ndarray
    f_opt: float
    lr: float

    @property
    def dim(self) -> int:
        return len(self.w0)

    def full(self):
        return np.vstack(self.parts_a), np.concatenate(self.parts_b)

    def loss(self, w: np.ndarray) -> float:
        a, b = self.full()
        r = a @ w - b
        return float(r @ r / (2 * len(b)))

    def node_gradient(self, node: int, w: np.ndarray) -> np.ndarray:
        a = self.parts_a[node]
        b = self.parts_b[node]
        m_total = sum(len(p) for p in self.parts_b)
        # scaled so the mean over nodes equals the full-batch gradient
        return (a.T @ (a @ w - b)) * (len(self.parts_a) / m_total)


def make_problem(
    dim: int, rows: int, n: int, noise: float, seed: int, lr: float = 0.0
) -> LeastSquaresProblem:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x736764])))
    # column-scaled Gaussian design: a hot block of coordinates carries most
    # of the gradient energy (mimicking real gradient buckets), and the
    # scales keep A^T A / m well conditioned for plain gradient descent
    scales = np.full(dim, 0.5)
    scales[: max(1, dim // 8)] = 1.0
    a = rng.standard_normal((rows, dim)) * scales
    w_star = rng.standard_normal(dim)
    b = a @ w_star + noise * rng.standard_normal(rows)
    per = rows // n
    parts_a = tuple(a[i * per : (i + 1) * per] for i in range(n - 1)) + (
        a[(n - 1) * per :],
    )
    parts_b = tuple(b[i * per : (i + 1) * per] for i in range(n - 1)) + (
        b[(n - 1) * per :],
    )
    w_opt, *_ = np.linalg.lstsq(a, b, rcond=None)
    r = a @ w_opt - b
    f_opt = float(r @ r / (2 * rows))
    return LeastSquaresProblem(
        parts_a=parts_a,
        parts_b=parts_b,
        w0=np.zeros(dim),
        f_opt=f_opt,
        lr=lr if lr > 0 else 1.0,
    )


@dataclass
class SgdTrace:
    losses: list = field(default_factory=list)
    walls: list = field(default_factory=list)  # simulated seconds per step
    halted: bool = False
    diverged: bool = False

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def time_to_loss(self, target: float) -> float:
        """Cumulative simulated time until the loss first reaches target."""
        t = 0.0
        for wall, f in zip(self.walls, self.losses[1:]):
            t += wall
            if f <= target:
                return t
        return math.inf


def run_sgd(
    cfg: ExperimentConfig,
    problem: LeastSquaresProblem | None = None,
    generations: int | None = None,
) -> SgdTrace:
    """Synchronous distributed gradient descent over the configured session.

    Each node holds its own copy of the weights updated with the (possibly
    lossy) AllReduced mean gradient, so copies can drift under loss. The
    reported loss uses the node-averaged weights (parameter averaging), the
    quantity a synchronous deployment would checkpoint.
    """
    if problem is None:
        problem = make_problem(
            cfg.sgd_dim, cfg.sgd_rows, cfg.n, cfg.sgd_noise, cfg.seed, cfg.sgd_lr
        )
    gens = generations if generations is not None else cfg.generations
    session = build_session(cfg)
    weights = [problem.w0.copy() for _ in range(cfg.n)]
    trace = SgdTrace()
    f0 = problem.loss(np.mean(weights, axis=0))
    trace.losses.append(f0)
    for _ in range(gens):
        grads = [problem.node_gradient(i, weights[i]) for i in range(cfg.n)]
        report = session.run_generation(
            [g.astype(np.float32) for g in grads]
        )
        trace.walls.append(report.wall)
        if report.action is Action.HALT:
            trace.halted = True
            break
        if report.action is not Action.SKIP_UPDATE:
            for i in range(cfg.n):
                weights[i] = weights[i] - problem.lr * np.asarray(
                    report.results[i], dtype=np.float64
                )
        f = problem.loss(np.mean(weights, axis=0))
        trace.losses.append(f)
        if not np.isfinite(f) or f > 10 * max(f0, 1e-12):
            trace.diverged = True
            break
    return trace
