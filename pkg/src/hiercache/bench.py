"""Scheme comparisons, parameter sweeps and threshold tables as CSV.

Sweep points are evaluated in worker processes (``HIERCACHE_THREADS`` caps
the count); rows are sorted by (value, scheme) before they are written so
the output does not depend on scheduling.
"""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from . import analytics
from .errors import ConfigError, DegenerateWarning, WorstCaseInfeasibleWarning
from .model import NetworkConfig, cyclic_demand, validate_config, worst_case_demand
from .placement import centralized_fixture, decentralized_place, fractional_place
from .delivery import build_schedule, build_schedule_hcc, build_schedule_proposed, makespan
from .delivery.schemes import placement_split

SCHEMES = ("proposed", "proposed-opt", "hcc-a", "hcc-b", "hcc-c", "pipeline",
           "hcc-a-fixture", "proposed-fixture")
FIXTURE_SCHEMES = ("hcc-a-fixture", "proposed-fixture")
SWEEP_VARS = ("m1", "m2", "k1", "k2", "n")
MODES = ("fractional", "bits")

# Schedules enumerate every user subset; past this many users simulation is skipped.
SIM_MAX_USERS = 12

SWEEP_COLUMNS = ["value", "scheme", "analytic_delay", "sim_delay", "lower_bound"]
COMPARE_COLUMNS = ["scheme", "analytic_delay", "sim_delay", "lower_bound",
                   "regime", "guaranteed_gap", "achieved_gap"]


@dataclass
class SchemeResult:
    scheme: str
    analytic_delay: float | None
    sim_delay: float | None
    lower_bound: float
    gap: analytics.GapReport | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def delay(self) -> float | None:
        return self.analytic_delay if self.analytic_delay is not None else self.sim_delay


@dataclass
class SweepSpec:
    base: NetworkConfig
    variable: str
    values: list
    schemes: list[str]
    mode: str = "fractional"
    seed: int = 0
    grid_steps: int = 101

    def __post_init__(self):
        if self.variable not in SWEEP_VARS:
            raise ConfigError([f"unknown sweep variable {self.variable!r}; pick one of {SWEEP_VARS}"])
        if self.mode not in MODES:
            raise ConfigError([f"unknown mode {self.mode!r}"])
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad:
            raise ConfigError([f"unknown scheme {s!r}" for s in bad])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", WorstCaseInfeasibleWarning)
            for v in self.values:
                validate_config(self.config_at(v))

    def config_at(self, value) -> NetworkConfig:
        field_name = {"m1": "relay_mem", "m2": "user_mem", "k1": "n_relays",
                      "k2": "users_per_relay", "n": "n_files"}[self.variable]
        return self.base.replace(**{field_name: value})


def analytic_delay(scheme: str, cfg: NetworkConfig, grid_steps: int = 101) -> float | None:
    if scheme == "proposed":
        return analytics.propose_delay(cfg)
    if scheme == "proposed-opt":
        return analytics.optimize_propose(cfg, grid_steps)[2]
    if scheme == "hcc-a":
        return analytics.hcc_a_rates(cfg).sequential
    if scheme == "hcc-b":
        return analytics.hcc_b_rates(cfg).sequential
    if scheme == "hcc-c":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateWarning)
            return analytics.hcc_c_delay(cfg)
    if scheme == "pipeline":
        return analytics.pipeline_delay(cfg)
    if scheme in FIXTURE_SCHEMES:
        return None
    raise ConfigError([f"unknown scheme {scheme!r}"])


def simulate(scheme: str, cfg: NetworkConfig, mode: str = "fractional", seed: int = 0,
             grid_steps: int = 101, decode: bool = False):
    """Build and time one scheme's schedule.

    Returns ``(schedule, placement, demand, report)``.  Fixture schemes
    ignore ``cfg`` and run the two-relay centralized example.
    """
    if scheme in FIXTURE_SCHEMES:
        _, placement, fcfg = centralized_fixture(seed=seed)
        demand = worst_case_demand(fcfg)
        if scheme == "hcc-a-fixture":
            sched = build_schedule_hcc("A", fcfg, placement, demand)
        else:
            sched = build_schedule_proposed(fcfg, placement, demand, startup_fill=True)
        sched.scheme = scheme
    else:
        if scheme == "proposed-opt":
            alpha, beta, _ = analytics.optimize_propose(cfg, grid_steps)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateWarning)
                alpha, beta = placement_split(scheme, cfg)
        run_cfg = cfg.replace(alpha=alpha, beta=beta)
        if mode == "bits":
            placement = decentralized_place(run_cfg, seed)
        else:
            placement = fractional_place(run_cfg)
        demand = worst_case_demand(cfg) if cfg.n_files >= cfg.n_users else cyclic_demand(cfg)
        sched = build_schedule(scheme, run_cfg, placement, demand)
        sched.scheme = scheme
    report = makespan(sched)
    if scheme in ("proposed", "proposed-opt"):
        # the second server component under both library-size conventions
        comp = analytics.propose_components(run_cfg)
        report.diagnostics["formula:rs2"] = comp.rs2
        report.diagnostics["formula:rs2_full_library"] = comp.rs2_full_library
    if decode:
        from .delivery import decode_all

        decode_all(sched, placement, demand)
    return sched, placement, demand, report


def sim_delay(scheme: str, cfg: NetworkConfig, mode: str = "fractional", seed: int = 0,
              grid_steps: int = 101) -> float | None:
    if scheme not in FIXTURE_SCHEMES and cfg.n_users > SIM_MAX_USERS:
        return None
    return simulate(scheme, cfg, mode, seed, grid_steps)[3].makespan


def run_compare(cfg: NetworkConfig, schemes, mode: str = "fractional", seed: int = 0,
                grid_steps: int = 101) -> list[SchemeResult]:
    validate_config(cfg)
    lb = analytics.lower_bound(cfg)
    gap = analytics.gap_report(cfg)
    out = []
    for s in schemes:
        a = analytic_delay(s, cfg, grid_steps)
        sim = sim_delay(s, cfg, mode, seed, grid_steps)
        out.append(SchemeResult(s, a, sim, lb, gap if s == "hcc-c" else None))
    return out


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def compare_csv(results: list[SchemeResult], cfg: NetworkConfig) -> str:
    gap = analytics.gap_report(cfg)
    rows = [(r.scheme, r.analytic_delay, r.sim_delay, r.lower_bound, gap.regime,
             gap.guaranteed_gap, gap.achieved_gap) for r in results]
    return _csv(COMPARE_COLUMNS, rows)


def _point(args):
    spec, value, scheme = args
    cfg = spec.config_at(value)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WorstCaseInfeasibleWarning)
        a = analytic_delay(scheme, cfg, spec.grid_steps)
        sim = sim_delay(scheme, cfg, spec.mode, spec.seed, spec.grid_steps)
    return value, scheme, a, sim, analytics.lower_bound(cfg)


def worker_count() -> int:
    n = os.cpu_count() or 1
    cap = os.environ.get("HIERCACHE_THREADS")
    if cap:
        try:
            n = min(n, max(int(cap), 1))
        except ValueError:
            raise ConfigError([f"HIERCACHE_THREADS={cap!r} is not an integer"]) from None
    return n


def run_sweep(spec: SweepSpec, workers: int | None = None) -> str:
    """One CSV row per (value, scheme)."""
    jobs = [(spec, v, s) for v in spec.values for s in spec.schemes]
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        rows = [_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(_point, jobs))
    rows.sort(key=lambda r: (r[0], r[1]))
    return _csv(SWEEP_COLUMNS, rows)


def emit_threshold_table(m2_values, k2: int = 2) -> str:
    """Relay cache fraction beyond which the two-relay delay stops improving."""
    rows = [(float(m), analytics.m1_threshold(float(m), 2, k2)) for m in m2_values]
    return _csv(["m2", "threshold"], rows)


def parse_values(text: str, integer: bool = False) -> list:
    """``"a,b,c"`` or an inclusive range ``"start:stop:step"``."""
    conv = int if integer else float
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError([f"range {text!r} must be start:stop:step"])
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ConfigError([f"range step must be positive, got {step!r}"])
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        vals = [start + k * step for k in range(max(count, 0))]
    else:
        vals = [float(p) for p in text.split(",") if p.strip()]
    if integer:
        if any(v != int(v) for v in vals):
            raise ConfigError([f"values {text!r} must be integers"])
        return [int(v) for v in vals]
    return [conv(v) for v in vals]
