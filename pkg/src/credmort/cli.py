"""Command-line front end: ``credmort {simulate,fit,forecast,msep,evaluate}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import gapc
from .config import ConfigError, RunConfig, SEED_ENV, describe, load
from .credibility import credibility_forecast, estimate_components, write_credibility_csv
from .evaluation import EvalPlan, MetricTable, fan_plot_data, run_approaches, run_replications, write_fan_csv
from .forecast import forecast_rates
from .msep import bootstrap_msep_benchmark, msep_closed_form, write_msep_csv
from .popsim import GompertzBaseline, MatrixBaseline, SimConfig, ThetaLaw, simulate
from .table import aggregate, read_csv_all

log = logging.getLogger("credmort")

COMMANDS = ("simulate", "fit", "forecast", "msep", "evaluate")


def sim_config(cfg: RunConfig, seed: int | None = None) -> SimConfig:
    s = cfg.simulate
    b = dict(s.baseline)
    kind = b.pop("kind", "gompertz")
    if kind == "gompertz":
        baseline = GompertzBaseline(**b)
    elif kind == "csv":
        baseline = MatrixBaseline.from_csv(b["path"])
    else:
        raise ConfigError([f"simulate.baseline.kind: unknown kind {kind!r}"])
    laws = {}
    for pop, law in s.theta_law.items():
        kind, *params = law
        laws[str(pop)] = ThetaLaw(kind, *[float(p) for p in params])
    return SimConfig(
        ages=tuple(s.ages), years=tuple(s.years), entry_age=s.entry_age,
        cohort_size={str(k): int(v) for k, v in s.cohort_size.items()},
        theta_law=laws, baseline=baseline, seed=cfg.seed if seed is None else seed,
    )


def gapc_spec(cfg: RunConfig) -> gapc.GAPCSpec:
    g = cfg.global_model
    return gapc.GAPCSpec(g.family, tol=g.tol, max_sweeps=g.max_sweeps)


def eval_plan(cfg: RunConfig) -> EvalPlan:
    e = cfg.evaluate
    return EvalPlan(
        t_prime=e.t_prime, h=e.h, age_groups=tuple(tuple(g) for g in e.age_groups),
        approaches=tuple(e.approaches), replications=e.replications, seed=cfg.seed,
        family=gapc_spec(cfg), mode=cfg.forecast.mode, binning=cfg.credibility.binning,
        folds=cfg.credibility.folds, frozen_orders=cfg.forecast.frozen_orders or None,
    )


def load_tables(cfg: RunConfig) -> dict:
    """Input tables with the super-population ``"0"`` present (aggregated if absent)."""
    if cfg.io.data:
        tables = read_csv_all(cfg.io.data)
        if "0" not in tables:
            tables["0"] = aggregate([tables[p] for p in sorted(tables)], population="0")
        return tables
    return simulate(sim_config(cfg)).tables


def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.io.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_simulate(cfg: RunConfig, threads: int = 1) -> None:
    out = _out(cfg)
    simulate(sim_config(cfg)).write(out)
    log.info("wrote %s and %s", out / "mortality.csv", out / "theta_true.csv")


def _fit_global(cfg, tables):
    f = gapc.fit(tables["0"], gapc_spec(cfg))
    if not f.converged:
        log.warning("global %s fit did not converge after %d sweeps", f.family.value, f.n_iter)
    return f


def cmd_fit(cfg: RunConfig, threads: int = 1) -> None:
    out = _out(cfg)
    f = _fit_global(cfg, load_tables(cfg))
    (out / "model.json").write_text(f.to_json() + "\n", encoding="utf-8")
    log.info("wrote %s (BIC %.6g)", out / "model.json", f.bic)


def cmd_forecast(cfg: RunConfig, threads: int = 1) -> None:
    out = _out(cfg)
    tables = load_tables(cfg)
    f = _fit_global(cfg, tables)
    rf, fc = forecast_rates(f, cfg.forecast.h, cfg.forecast.mode, frozen=cfg.forecast.frozen_orders or None)
    (out / "model.json").write_text(f.to_json(forecast=fc.to_dict()) + "\n", encoding="utf-8")
    with (out / "forecast.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("population", "age", "year", "mu_bar", "sigma2_bar"))
        for i, x in enumerate(rf.ages):
            for j, y in enumerate(rf.years):
                w.writerow(("0", int(x), int(y), repr(float(rf.mu_bar[i, j])), repr(float(rf.sigma2_bar[i, j]))))
    results = []
    for pop in sorted(p for p in tables if p != "0"):
        est = estimate_components(tables[pop], f.rates(), cfg.credibility.binning, cfg.credibility.folds, cfg.seed)
        results.append(credibility_forecast(est, rf.mu_bar, rf.years, cfg.credibility.binning))
    write_credibility_csv(results, out / "credibility.csv")
    log.info("wrote forecast.csv and credibility.csv to %s", out)


def cmd_msep(cfg: RunConfig, threads: int = 1) -> None:
    out = _out(cfg)
    m = cfg.msep
    tables = load_tables(cfg)
    train = {p: t.subset(years=(int(t.years[0]), m.t_prime)) for p, t in tables.items()}
    f = _fit_global(cfg, train)
    h = cfg.forecast.h
    rf, _ = forecast_rates(f, h, cfg.forecast.mode, frozen=cfg.forecast.frozen_orders or None)
    mu_hat = f.rates()
    rows = []
    subs = sorted(p for p in tables if p != "0")
    for pop in subs:
        t = train[pop]
        est = estimate_components(t, mu_hat, cfg.credibility.binning, cfg.credibility.folds, cfg.seed)
        theta, var = est.components(cfg.credibility.binning)
        z = est.weights(cfg.credibility.binning)
        for i, x in enumerate(f.ages):
            w = np.where(t.observed[i], t.exposure[i] * mu_hat[i], 0.0)
            if not w.sum() > 0:
                continue
            for j in range(h):
                d = msep_closed_form(float(rf.mu_bar[i, j]), float(rf.sigma2_bar[i, j]), float(var[i]), float(z[i]), w, m.form)
                rows.append({"population": pop, "age": int(x), "horizon": j + 1, "msep": d.msep,
                             "var_mu_theta": d.var_mu_theta, "var_theta_hat": d.var_theta_hat, "z": d.z,
                             "method": f"credibility_{m.form}"})
        try:
            sep = gapc.fit(t, gapc_spec(cfg))
        except (gapc.FitError, ValueError) as exc:
            log.warning("benchmark fit for population %s failed: %s", pop, exc)
            continue
        if not sep.converged:
            log.warning("benchmark fit for population %s did not converge; bootstrap skipped", pop)
            continue
        b = bootstrap_msep_benchmark(sep, t, h, B=m.bootstrap_b, seed=cfg.seed)
        if b.unreliable:
            log.warning("bootstrap for population %s dropped %d of %d refits", pop, b.n_dropped, m.bootstrap_b)
        for i, x in enumerate(b.ages):
            for j in range(h):
                rows.append({"population": pop, "age": int(x), "horizon": j + 1, "msep": float(b.msep[i, j]),
                             "var_mu_theta": "", "var_theta_hat": "", "z": "", "method": "bootstrap_separate"})
    write_msep_csv(rows, out / "msep.csv")
    fan = fan_plot_data(tables, m.t_prime, m.fan_h, m.fan_age, gapc_spec(cfg), cfg.forecast.mode,
                        cfg.credibility.binning, cfg.credibility.folds, cfg.seed, subs, m.form, m.pois_sims)
    write_fan_csv(fan, out / "fan.csv")
    log.info("wrote msep.csv and fan.csv to %s", out)


def cmd_evaluate(cfg: RunConfig, threads: int = 1) -> None:
    out = _out(cfg)
    plan = eval_plan(cfg)
    if cfg.io.data:
        rows, fb = run_approaches(load_tables(cfg), plan)
        table = MetricTable(tuple(rows), tuple(fb))
    else:
        table = run_replications(sim_config(cfg), plan, threads=threads)
    table.write_csv(out / "results.csv")
    for r, pop, end in table.fallbacks:
        log.info("approach C fell back to D: replication %d, population %s, window ending %d", r, pop, end)
    log.info("wrote %s", out / "results.csv")


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "msep": cmd_msep,
    "evaluate": cmd_evaluate,
}

_DESCRIPTIONS = {
    "simulate": "simulate sub-populations; writes mortality.csv and theta_true.csv",
    "fit": "fit the global model on population 0; writes model.json",
    "forecast": "forecast global rates and credibility blends; writes model.json, forecast.csv, credibility.csv",
    "msep": "closed-form and bootstrap MSEP; writes msep.csv and fan.csv",
    "evaluate": "rolling-window comparison of approaches A-D; writes results.csv",
}


def _parser() -> argparse.ArgumentParser:
    epilog = (
        "configuration keys (override any with --section.key VALUE, VALUE parsed as JSON):\n"
        + describe()
        + f"\n\n{SEED_ENV} overrides the config seed; dotted overrides win over both."
    )
    p = argparse.ArgumentParser(prog="credmort", description="Credibility forecasts of sub-population mortality.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        sp = sub.add_parser(name, help=_DESCRIPTIONS[name], description=_DESCRIPTIONS[name], epilog=epilog,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--config", "-c", help="JSON run configuration")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        sp.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    return p


def _split_overrides(argv):
    known, overrides = [], []
    i = 0
    while i < len(argv):
        a = argv[i]
        key = a.split("=", 1)[0]
        if a.startswith("--") and ("." in key or key == "--seed"):
            if "=" in a:
                k, v = a[2:].split("=", 1)
                i += 1
            else:
                if i + 1 >= len(argv):
                    raise ConfigError([f"override {a} needs a value"])
                k, v = a[2:], argv[i + 1]
                i += 2
            overrides.append((k, v))
        else:
            known.append(a)
            i += 1
    return known, overrides


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        known, overrides = _split_overrides(argv)
    except ConfigError as exc:
        print(f"credmort: error: {exc}", file=sys.stderr)
        return 2
    args = _parser().parse_args(known)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config, overrides)
        if args.threads < 1:
            raise ConfigError(["--threads must be >= 1"])
        HANDLERS[args.command](cfg, threads=args.threads)
    except ConfigError as exc:
        print(f"credmort: error: config: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"credmort: error: {args.command}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
