"""Running experiments, writing metrics CSVs, sweeps and the built-in equivalence checks."""
from __future__ import annotations

import csv
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, SPEED_PRESETS
from .model import Batch, MlpConfig, ParamVector, backward, finite_diff_grad
from .optim import (DelayedNesterovState, NesterovState, delayed_nesterov, outer_nesterov,
                    sequential_nesterov_closed_form)
from .sim import MetricsLog, run_async, run_experiment, run_sync

CSV_HEADER = "server_update,local_updates,sim_time_s,eval_loss,eval_ppl,eval_acc"
SUMMARY_HEADER = "axis,value,status," + CSV_HEADER

STRATEGY_PRESETS = {
    "vanilla_nesterov": dict(outer__strategy="vanilla", outer__optimizer="nesterov"),
    "vanilla_sgd": dict(outer__strategy="vanilla", outer__optimizer="sgd"),
    "poly": dict(outer__strategy="poly", outer__optimizer="nesterov"),
    "polythres": dict(outer__strategy="polythres", outer__optimizer="nesterov"),
    "delay_comp": dict(outer__strategy="delay_comp", outer__optimizer="nesterov"),
    "async_buffer": dict(outer__strategy="async_buffer", outer__optimizer="nesterov"),
    "dn": dict(outer__strategy="delayed_nesterov"),
    "dn_dylu": dict(outer__strategy="delayed_nesterov", sched__dylu=True),
    "sync_diloco": dict(sched__mode="sync", outer__strategy="vanilla", outer__optimizer="nesterov"),
    "sync_sgd": dict(sched__mode="sync", outer__strategy="vanilla", outer__optimizer="sgd"),
}

AXES = ("heterogeneity", "workers", "c_value", "strategy")


def _fmt(row) -> list[str]:
    return [str(row.server_update), str(row.local_updates), repr(float(row.sim_time_s)),
            repr(float(row.eval_loss)), repr(float(row.eval_ppl)), repr(float(row.eval_acc))]


def metrics_csv(log: MetricsLog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER.split(","))
    for row in log.rows:
        w.writerow(_fmt(row))
    return buf.getvalue()


def write_metrics(log: MetricsLog, path) -> None:
    path = Path(path)
    try:
        path.write_text(metrics_csv(log))
    except OSError as e:
        raise OSError(f"cannot write metrics to {path}: {e.strerror or e}") from e


def run(cfg: ExperimentConfig, out_path, quiet: bool = False) -> int:
    """Run one experiment, write its CSV and print the final row. Returns an exit status."""
    log = run_experiment(cfg)
    write_metrics(log, out_path)
    if not quiet:
        print(CSV_HEADER)
        print(",".join(_fmt(log.final)))
    return 0


# ------------------------------------------------------------------- sweeps


def axis_overrides(axis: str, value) -> dict:
    if axis == "heterogeneity":
        if value not in SPEED_PRESETS:
            raise ConfigError(f"heterogeneity value must be one of {sorted(SPEED_PRESETS)}")
        return dict(sched__profile=value, sched__speeds=())
    if axis == "workers":
        return dict(sched__workers=int(value), sched__speeds=())
    if axis == "c_value":
        return dict(outer__c=float(value))
    if axis == "strategy":
        if value not in STRATEGY_PRESETS:
            raise ConfigError(f"strategy value must be one of {sorted(STRATEGY_PRESETS)}")
        return STRATEGY_PRESETS[value]
    raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {AXES}")


@dataclass
class SweepCell:
    axis: str
    value: str
    status: str
    row: object = None
    path: Path | None = None


def _run_cell(base: ExperimentConfig, axis: str, value, out_dir: Path) -> SweepCell:
    path = out_dir / f"{axis}={value}.csv"
    try:
        cfg = base.with_values(**axis_overrides(axis, value))
        log = run_experiment(cfg)
        write_metrics(log, path)
        return SweepCell(axis, str(value), "ok", log.final, path)
    except Exception as e:  # a failed cell must not stop the sweep
        return SweepCell(axis, str(value), f"failed: {e}")


def sweep(base: ExperimentConfig, axis: str, values, out_dir, jobs: int = 1) -> list[SweepCell]:
    """One CSV per value plus ``summary.csv`` with each cell's final metrics."""
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    values = list(values)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            cells = list(pool.map(_run_cell, [base] * len(values), [axis] * len(values),
                                  values, [out_dir] * len(values)))
    else:
        cells = [_run_cell(base, axis, v, out_dir) for v in values]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER.split(","))
    for c in cells:
        tail = _fmt(c.row) if c.row is not None else [""] * 6
        w.writerow([c.axis, c.value, c.status, *tail])
    (out_dir / "summary.csv").write_text(buf.getvalue())
    return cells


# --------------------------------------------------------------- equivalences


@dataclass
class Check:
    name: str
    max_dev: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_dev <= self.tol)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name:<28} max deviation {self.max_dev:.3e} (tol {self.tol:g})"


def sync_via_async_deviation(t_max: int = 20000, beta_perturbation: float = 0.0,
                             base: ExperimentConfig | None = None) -> float:
    """Max |theta| gap between sync rounds and async DN(N=k) cohorts on homogeneous workers."""
    base = (base or ExperimentConfig()).with_values(
        data__shard_mode="iid", sched__profile="no", sched__speeds=(), sched__t_max=t_max,
        outer__optimizer="nesterov", outer__c=0.0)
    k = base.sched.workers
    sync = run_sync(base.with_values(sched__mode="sync", outer__strategy="vanilla"),
                    record_params=True)
    async_cfg = base.with_values(sched__mode="async", outer__strategy="delayed_nesterov",
                                 outer__N=k, outer__beta=base.outer.beta + beta_perturbation)
    asyn = run_async(async_cfg, record_params=True)
    by_version = dict(asyn.trajectory)
    devs = [np.abs(theta - by_version[k * v]).max() for v, theta in sync.trajectory
            if k * v in by_version]
    if len(devs) != len(sync.trajectory):
        return float("inf")
    return float(max(devs))


def dn_vs_nesterov_deviation(c: float, steps: int = 100, seed: int = 0, n: int = 16,
                             beta: float = 0.9, lr: float = 0.5) -> float:
    """Delayed Nesterov with N=1 against plain Nesterov on a random gradient stream."""
    rng = np.random.default_rng(seed)
    grads = rng.standard_normal((steps, n))
    theta_a = theta_b = rng.standard_normal(n)
    dn = DelayedNesterovState(np.zeros(n), np.zeros(n), 0, 1, c, beta)
    nest = NesterovState(np.zeros(n), beta)
    worst = 0.0
    for g in grads:
        dn, theta_a = delayed_nesterov(dn, theta_a, g, lr)
        nest, theta_b = outer_nesterov(nest, theta_b, g, lr)
        worst = max(worst, float(np.abs(theta_a - theta_b).max()))
    return worst


def closed_form_deviation(beta: float, seed: int = 0, n: int = 16) -> float:
    """Four sequential Nesterov steps with one g against the four-step expansion."""
    rng = np.random.default_rng(seed)
    m0, g, theta0 = rng.standard_normal((3, n))
    lr = 1.0
    state, theta = NesterovState(m0, beta), theta0
    for _ in range(4):
        state, theta = outer_nesterov(state, theta, g, lr)
    m4, step = sequential_nesterov_closed_form(m0, g, beta, 4)
    return float(max(np.abs(state.m - m4).max(), np.abs((theta0 - theta) / lr - step).max()))


def max_rel_grad_error(params: ParamVector, batch: Batch, h: float = 1e-5) -> float:
    _, g = backward(params, batch)
    f = finite_diff_grad(params, batch, h)
    scale = max(np.abs(g.values).max(), np.abs(f.values).max())
    if scale == 0:
        return 0.0
    return float(np.abs(g.values - f.values).max() / scale)


def gradient_check(draws: int = 100, seed: int = 0, config: MlpConfig | None = None,
                   bound: float = 10.0, batch_size: int = 8) -> float:
    """Worst relative error of backprop vs central differences over random draws in +-bound."""
    config = config or MlpConfig()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        p = ParamVector(rng.uniform(-bound, bound, config.num_params), config)
        b = Batch(rng.uniform(-bound, bound, (batch_size, config.input_dim)),
                  rng.integers(config.num_classes, size=batch_size))
        worst = max(worst, max_rel_grad_error(p, b))
    return worst


def validate_equivalences(beta_perturbation: float = 0.0, out=None) -> list[Check]:
    out = out or sys.stdout
    checks = [Check("sync-via-async (DN, N=k)",
                    sync_via_async_deviation(beta_perturbation=beta_perturbation), 1e-9)]
    checks += [Check(f"DN(N=1) == Nesterov, c={c:g}", dn_vs_nesterov_deviation(c), 1e-12)
               for c in (0.0, 0.1, 1.0)]
    checks += [Check(f"4-step closed form, beta={b:g}", closed_form_deviation(b), 1e-12)
               for b in (0.1, 0.5, 0.9)]
    checks.append(Check("gradient check (rel.)", gradient_check(), 1e-5))
    for c in checks:
        print(c.line(), file=out)
    return checks
