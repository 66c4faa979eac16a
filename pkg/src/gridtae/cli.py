"""Config-driven experiment harness.

Five subcommands cover the pipeline end to end: ``simulate`` writes noisy
measurement panels, ``crlb`` evaluates the precision floors at the true
state, ``init`` runs the measurement-only seeding pipeline, ``estimate``
performs one full estimation, and ``experiment`` repeats the estimation over
replicate noise draws and aggregates the error statistics.

Configs are flat JSON files; bundled ones live under ``gridtae/configs`` and
can be referenced by name.  Replicate seeds derive as base seed + replicate
index, so reruns of the same config are reproducible file-for-file (timing
sidecars excepted, which is why wall-clock data never goes into
``report.json``).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .cps import CpsConfig, cps_estimate
from .crlb import full_report_at, report_to_json, write_bounds_csv
from .initval import InitConfig, make_initial_state
from .mlmodel import StateVector, make_layout, state_from_truth
from .netmodel import (CandidateSet, CaseError, NetworkCase, candidate_set,
                       load_bundled_case, load_case)
from .powerflow import (MeasurementPlan, MeasurementTensor, NoiseModel,
                        PowerFlowError, full_plan, generate_load_profile,
                        simulate_measurements, write_measurement_csv)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "load_config",
    "cmd_simulate",
    "cmd_crlb",
    "cmd_init",
    "cmd_estimate",
    "cmd_experiment",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_TIMEOUT = 4


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

_QUANTITIES = ("P", "Q", "V", "TH")

# With "auto" the power and angle channels get their stds from the temporal
# variation of the series (they vary with the loads), while the voltage
# magnitudes — nearly constant around 1 pu — use the RMS level instead.
_AUTO_MODE = {"P": "deviation", "Q": "deviation", "TH": "deviation",
              "V": "rms"}


@dataclass
class ExperimentConfig:
    """One experiment: a case, a metering setup, and estimator settings."""

    case: str
    T: int
    quantities: tuple = _QUANTITIES
    spread: float = 0.5
    noise_pct: float = 0.1
    noise_mode: str = "auto"
    noise: dict | None = None
    prior_topology: bool = False
    prune: bool = True
    x0: str = "auto"
    seed: int = 0
    replicates: int = 1
    jobs: int = 1
    out: str = "out"
    max_seconds_per_replicate: float | None = None
    cps: dict = field(default_factory=dict)
    init: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.replicates < 1:
            raise ConfigError("replicate count must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        self.quantities = tuple(self.quantities)
        bad = set(self.quantities) - set(_QUANTITIES)
        if bad or not self.quantities:
            raise ConfigError(f"unknown quantities {sorted(bad)}")
        if self.noise_mode not in ("auto", "rms", "deviation", "absolute"):
            raise ConfigError(f"unknown noise mode {self.noise_mode!r}")
        if self.x0 not in ("auto", "flat"):
            raise ConfigError(f"unknown x0 policy {self.x0!r}")
        if not 0.0 <= self.spread < 1.0:
            raise ConfigError("spread must be in [0, 1)")
        try:
            self.cps_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad cps overrides: {exc}") from exc
        try:
            self.init_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad init overrides: {exc}") from exc

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "case" not in raw or "T" not in raw:
            raise ConfigError("config requires at least 'case' and 'T'")
        return cls(**raw)

    def noise_models(self) -> dict:
        if self.noise is not None:
            out = {}
            for q, spec in self.noise.items():
                if q not in _QUANTITIES:
                    raise ConfigError(f"noise map references {q!r}")
                out[q] = NoiseModel(float(spec["pct"]),
                                    spec.get("mode", "rms"))
            return out
        mode = self.noise_mode
        return {q: NoiseModel(self.noise_pct,
                              _AUTO_MODE[q] if mode == "auto" else mode)
                for q in self.quantities}

    def cps_config(self) -> CpsConfig:
        overrides = dict(self.cps)
        if not self.prune:
            overrides.setdefault("tau_abs", 0.0)
            overrides.setdefault("tau_rel", 0.0)
        return CpsConfig(**overrides)

    def init_config(self) -> InitConfig:
        raw = dict(self.init)
        if "night_window" in raw and raw["night_window"] is not None:
            lo, hi = raw["night_window"]
            raw["night_window"] = slice(int(lo), int(hi))
        return InitConfig(**raw)

    def echo(self) -> dict:
        d = asdict(self)
        d["quantities"] = list(self.quantities)
        return d


def load_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file; bare names fall back to the bundled configs."""
    text = None
    p = Path(path)
    if p.is_file():
        text = p.read_text(encoding="utf-8")
    elif p.name == path:                      # bare name, no directory part
        name = path if path.endswith(".json") else path + ".json"
        res = resources.files("gridtae.configs").joinpath(name)
        if res.is_file():
            text = res.read_text(encoding="utf-8")
    if text is None:
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config JSON error at line {exc.lineno}: "
                          f"{exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    raw.update(overrides or {})
    return ExperimentConfig.from_dict(raw)


def _resolve_case(cfg: ExperimentConfig) -> NetworkCase:
    src = cfg.case
    if Path(src).is_file():
        return load_case(src)
    try:
        return load_bundled_case(src)
    except CaseError:
        raise ConfigError(f"case {src!r} is neither a file nor a bundled "
                          f"case name") from None


def _build_plan(cfg: ExperimentConfig, case: NetworkCase,
                rng_seed: int) -> MeasurementPlan:
    return full_plan(case, cfg.T, seed=rng_seed, noise=cfg.noise_models(),
                     quantities=cfg.quantities)


def _candidates(cfg: ExperimentConfig, case: NetworkCase) -> CandidateSet:
    if cfg.prior_topology:
        return candidate_set(case.bus_count,
                             prior=[br.pair for br in case.branches])
    return candidate_set(case.bus_count)


def _initial_state(cfg: ExperimentConfig, z: MeasurementTensor,
                   cset: CandidateSet, case: NetworkCase) -> StateVector:
    if cfg.x0 == "auto" and z.plan.bus_set("V"):
        return make_initial_state(
            z, cfg=cfg.init_config(),
            cset=cset if cfg.prior_topology else None,
            slack_bus=case.slack_bus, n_bus=case.bus_count)
    layout = make_layout(case.bus_count, cset, cfg.T, case.slack_bus)
    n = len(cset)
    V = np.ones((cfg.T, case.bus_count))
    if z.plan.bus_set("V"):
        V = z.unstack()["V"].copy()
    return StateVector(layout, np.ones(n), np.full(n, -3.0), V,
                       np.zeros((cfg.T, case.bus_count)))


def _simulate(cfg: ExperimentConfig, rng_seed: int | None = None):
    case = _resolve_case(cfg)
    prof = generate_load_profile(case, cfg.T, seed=cfg.seed,
                                 spread=cfg.spread)
    plan = _build_plan(cfg, case, cfg.seed if rng_seed is None else rng_seed)
    z, truth = simulate_measurements(case, prof, plan)
    return case, plan, z, truth


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def cmd_simulate(cfg: ExperimentConfig) -> int:
    """Write measurements.csv and truth.json for one noise draw."""
    case, plan, z, truth = _simulate(cfg)
    out = _outdir(cfg)
    write_measurement_csv(str(out / "measurements.csv"), z)
    sig = {}
    for (q, bus), s in sorted(truth.sigma.items()):
        sig.setdefault(q, {})[str(bus)] = float(s)
    _write_json(out / "truth.json", {
        "case": cfg.case,
        "bus_count": case.bus_count,
        "base_mva": case.base_mva,
        "slack_bus": case.slack_bus,
        "branches": [{"from": br.from_bus, "to": br.to_bus,
                      "g": br.g, "b": br.b} for br in case.branches],
        "V": truth.V.tolist(),
        "theta": truth.theta.tolist(),
        "P": truth.P.tolist(),
        "Q": truth.Q.tolist(),
        "sigma": sig,
    })
    return EXIT_OK


def cmd_crlb(cfg: ExperimentConfig) -> int:
    """Precision floors at the true state: report.json and bounds.csv."""
    case, plan, z, truth = _simulate(cfg)
    cset = _candidates(cfg, case)
    x = state_from_truth(truth, cset)
    report = full_report_at(x, plan, case, cset, sigma_vec=z.sigma_vec)
    out = _outdir(cfg)
    with open(out / "report.json", "w") as f:
        f.write(report_to_json(report))
        f.write("\n")
    write_bounds_csv(str(out / "bounds.csv"), case, cset, report.sigma_cr)
    return EXIT_OK


def cmd_init(cfg: ExperimentConfig) -> int:
    """Run the seeding pipeline and write the initial state as x0.json."""
    case, plan, z, truth = _simulate(cfg)
    cset = _candidates(cfg, case)
    x0 = _initial_state(cfg, z, cset, case)
    _write_json(_outdir(cfg) / "x0.json", {
        "branches": [list(p) for p in x0.layout.cset.pairs],
        "g": x0.g.tolist(),
        "b": x0.b.tolist(),
        "V": x0.V.tolist(),
        "theta": x0.theta.tolist(),
    })
    return EXIT_OK


def _estimate_once(cfg: ExperimentConfig, rng_seed: int):
    case, plan, z, truth = _simulate(cfg, rng_seed)
    cset = _candidates(cfg, case)
    x0 = _initial_state(cfg, z, cset, case)
    t0 = time.perf_counter()
    res = cps_estimate(z, plan, cset, x0, cfg.cps_config(), truth)
    elapsed = time.perf_counter() - t0
    budget = cfg.max_seconds_per_replicate
    timed_out = budget is not None and elapsed > budget
    return case, res, elapsed, timed_out


def cmd_estimate(cfg: ExperimentConfig) -> int:
    """One full estimation run: report.json plus the line-search trace."""
    case, res, elapsed, timed_out = _estimate_once(cfg, cfg.seed)
    out = _outdir(cfg)
    payload = json.loads(res.to_json())
    payload["timed_out"] = timed_out
    _write_json(out / "report.json", payload)
    res.write_trace_csv(str(out / "trace.csv"))
    _write_json(out / "timing.json", {"seconds": elapsed})
    if res.diverged or not np.isfinite(res.final_loss):
        return EXIT_NUMERICAL
    if timed_out:
        return EXIT_TIMEOUT
    return EXIT_OK


# --------------------------------------------------------------------------
# replicated experiments
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentReport:
    """Replicate-level records plus their plain means."""

    config: dict
    crlb: dict
    replicates: list
    aggregate: dict

    def to_payload(self) -> dict:
        return {"config": self.config, "crlb": self.crlb,
                "replicates": self.replicates, "aggregate": self.aggregate}


def _replicate_record(cfg: ExperimentConfig, index: int):
    """One replicate: estimation under noise draw ``seed + index``."""
    try:
        case, res, elapsed, timed_out = _estimate_once(cfg, cfg.seed + index)
    except (PowerFlowError, np.linalg.LinAlgError, FloatingPointError) as exc:
        record = {"replicate": index, "seed": cfg.seed + index,
                  "failed": True, "error": str(exc)}
        return record, None, 0.0
    m = res.metrics or {}
    record = {
        "replicate": index,
        "seed": cfg.seed + index,
        "failed": False,
        "timed_out": timed_out,
        "converged": res.converged,
        "stalled": res.stalled,
        "final_loss": float(res.final_loss),
        "inner_iterations": res.inner_iterations,
        "outer_rounds": res.outer_rounds,
        "topology_error_pct": m.get("topology_error_pct"),
        "admittance_error_pct": m.get("admittance_error_pct"),
        "admittance_error_conditional_pct":
            m.get("admittance_error_conditional_pct"),
        "loss_history": [float(v) for v in res.loss_history],
    }
    est = {p: (g, b) for p, g, b in zip(res.cset.pairs, res.g, res.b)}
    hist = []
    for br in case.branches:
        got = est.get(br.pair, (0.0, 0.0))
        hist.append((br.from_bus, br.to_bus,
                     abs(float(got[0]) - br.g), abs(float(got[1]) - br.b)))
    return record, hist, elapsed


def _worker(args):
    cfg, index = args
    return _replicate_record(cfg, index)


def cmd_experiment(cfg: ExperimentConfig) -> int:
    """Replicated estimation: report.json, hist_g.csv, hist_b.csv."""
    case, plan, z, truth = _simulate(cfg)
    cset = _candidates(cfg, case)
    x = state_from_truth(truth, cset)
    bound = full_report_at(x, plan, case, cset, sigma_vec=z.sigma_vec)

    tasks = [(cfg, i) for i in range(cfg.replicates)]
    if cfg.jobs > 1:
        import multiprocessing as mp
        with mp.Pool(cfg.jobs) as pool:
            results = pool.map(_worker, tasks)
    else:
        results = [_worker(t) for t in tasks]

    records = [rec for rec, _, _ in results]
    ok = [rec for rec in records if not rec["failed"]]
    agg_keys = ("topology_error_pct", "admittance_error_pct",
                "admittance_error_conditional_pct", "final_loss",
                "inner_iterations")
    aggregate = {k: (float(np.mean([rec[k] for rec in ok])) if ok else None)
                 for k in agg_keys}
    aggregate["replicates_succeeded"] = len(ok)
    aggregate["replicates_failed"] = len(records) - len(ok)
    aggregate["replicates_timed_out"] = sum(
        1 for rec in ok if rec.get("timed_out"))

    report = ExperimentReport(
        config=cfg.echo(),
        crlb={"topology_limit_pct": bound.topology_limit_pct,
              "admittance_limit_pct": bound.admittance_limit_pct},
        replicates=records,
        aggregate=aggregate)

    out = _outdir(cfg)
    _write_json(out / "report.json", report.to_payload())
    for name, col in (("hist_g.csv", 2), ("hist_b.csv", 3)):
        with open(out / name, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["branch_from", "branch_to", "abs_error",
                         "replicate"])
            for rec, hist, _ in results:
                if hist is None:
                    continue
                for row in hist:
                    wr.writerow([row[0], row[1], repr(row[col]),
                                 rec["replicate"]])
    _write_json(out / "timing.json", {
        "replicate_seconds": [el for _, _, el in results],
        "total_seconds": sum(el for _, _, el in results)})

    if not ok:
        return EXIT_NUMERICAL
    if all(rec.get("timed_out") for rec in ok):
        return EXIT_TIMEOUT
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

_COMMANDS = {
    "simulate": cmd_simulate,
    "crlb": cmd_crlb,
    "init": cmd_init,
    "estimate": cmd_estimate,
    "experiment": cmd_experiment,
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gridtae",
        description="distribution-grid topology / admittance estimation")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True,
                       help="config file path or bundled config name")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--replicates", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None)
    return ap


def main(argv: list | None = None) -> int:
    args = _parser().parse_args(argv)
    overrides = {k: v for k, v in (
        ("seed", args.seed), ("out", args.out),
        ("replicates", args.replicates), ("jobs", args.jobs))
        if v is not None}
    try:
        cfg = load_config(args.config, overrides)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PowerFlowError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
