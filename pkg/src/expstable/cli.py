"""Command-line entry point: ``expstable <subcommand> [options]``.

Options may come from a YAML file (``--config``); flags given on the command
line override it. Exit codes: 0 success, 1 statistical rejection, 2 usage
or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import bbm, functional, normalize, sampler, stability
from .decorations import REGISTRY, make_decoration
from .errors import ExpStableError
from .measure import Window
from .rng import WORKERS_ENV, default_workers, fresh_seed

SUBCOMMANDS = ("ppp", "dppp", "cumulant", "stability", "canonicalize", "bbm", "intensity")
CONTROL = "gaussian_control"
DEFAULT_TOLERANCES = {"level": 0.001, "z": 3.0, "agreement_fraction": 0.95}

EXIT_OK, EXIT_REJECTED, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    subcommand: str
    seed: int | None = None
    fresh_seed: bool = False
    decoration: str = "dirac0"
    decoration_params: dict = field(default_factory=dict)
    window_lo: float = -4.0
    window_hi: float = math.inf
    density_coeff: float = 0.0
    replicas: int = 10**4
    workers: int | None = None
    tolerances: dict = field(default_factory=dict)
    output_dir: str | None = None
    # subcommand specific
    alpha: list = field(default_factory=lambda: [-math.log(2.0), -math.log(4.0), -0.1])
    mc_inner: int = 20000
    n_pool: int = 10**5
    m_offset: float = 0.0
    t: float = 6.0
    checkpoints: list = field(default_factory=list)
    superposition: bool = False
    area_lo: float = 0.0
    area_hi: float = 1.0
    depths: list = field(default_factory=lambda: [2.0, 4.0, 6.0])

    def validate(self) -> ExperimentConfig:
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError("subcommand", f"must be one of {', '.join(SUBCOMMANDS)}")
        if self.seed is None and not self.fresh_seed:
            raise ConfigError("seed", "a seed is required (or pass --fresh-seed explicitly)")
        if self.seed is not None and not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if self.decoration not in REGISTRY and self.decoration != CONTROL:
            raise ConfigError("decoration.name", f"unknown decoration {self.decoration!r}")
        for name in ("window_lo", "window_hi", "area_lo", "area_hi", "density_coeff", "t", "m_offset"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or math.isnan(value):
                raise ConfigError(_dotted(name), "must be a number")
        if not math.isfinite(self.window_lo):
            raise ConfigError("window.lo", "must be finite")
        if not self.window_lo < self.window_hi:
            raise ConfigError("window.lo", f"must be below window.hi ({self.window_lo} >= {self.window_hi})")
        if not self.area_lo < self.area_hi or not math.isfinite(self.area_hi):
            raise ConfigError("area", "need area.lo < area.hi, both finite")
        if not isinstance(self.replicas, int) or self.replicas < 1:
            raise ConfigError("replicas", "must be a positive integer")
        if self.density_coeff < 0:
            raise ConfigError("density_coeff", "must be non-negative")
        if self.t <= 0:
            raise ConfigError("t", "must be positive")
        if any(not -math.inf < a < 0 for a in self.alpha):
            raise ConfigError("alpha", "every alpha must be negative and finite")
        if sorted(self.checkpoints) != list(self.checkpoints) or any(c < 0 or c > self.t for c in self.checkpoints):
            raise ConfigError("checkpoints", "must be ascending within [0, t]")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers", "must be at least 1")
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigError("tolerances", f"unknown keys {sorted(unknown)}")
        return self

    @property
    def window(self) -> Window:
        return Window(float(self.window_lo), float(self.window_hi))

    def tolerance(self, key: str) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["window_hi"] = None if math.isinf(self.window_hi) else self.window_hi
        return out


def _dotted(name: str) -> str:
    return name.replace("_", ".", 1) if name.startswith(("window_", "area_")) else name


def _flatten(raw: dict) -> dict:
    """Map the nested YAML layout onto :class:`ExperimentConfig` field names."""
    out = {}
    for key, value in raw.items():
        if key in ("window", "area") and isinstance(value, dict):
            for k, v in value.items():
                if k not in ("lo", "hi"):
                    raise ConfigError(f"{key}.{k}", "unknown key")
                out[f"{key}_{k}"] = math.inf if (key == "window" and k == "hi" and v is None) else v
        elif key == "decoration" and isinstance(value, dict):
            unknown = set(value) - {"name", "params"}
            if unknown:
                raise ConfigError("decoration", f"unknown keys {sorted(unknown)}")
            if "name" in value:
                out["decoration"] = value["name"]
            out["decoration_params"] = dict(value.get("params") or {})
        else:
            out[key] = value
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in out:
        if key not in names:
            raise ConfigError(key, "unknown configuration key")
    return out


def load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", str(exc)) from exc
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError("config", f"YAML parse error at {where}: {getattr(exc, 'problem', exc)}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    return _flatten(raw)


# artifacts

def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Artifacts:
    """Collects output files; the only timestamp is ``generated_at`` in the summary."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.files: dict[str, str] = {}
        self.summary: dict = {}
        self.lines: list[str] = []

    def add_csv(self, name: str, header, rows):
        self.files[name] = _csv(header, rows)

    def add_text(self, name: str, text: str):
        self.files[name] = text

    def check(self, label: str, passed: bool, detail: str):
        self.lines.append(f"{'PASS' if passed else 'FAIL'} {label}: {detail}")
        self.summary.setdefault("checks", []).append({"label": label, "passed": bool(passed), "detail": detail})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.summary.get("checks", []))

    def write(self):
        for line in self.lines:
            print(line)
        if self.cfg.output_dir is None:
            return
        out = Path(self.cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (out / name).write_text(text)
        (out / "config.json").write_text(json.dumps(_jsonable(self.cfg.to_json()), indent=2, sort_keys=True) + "\n")
        summary = {"generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
                   **_jsonable(self.summary)}
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# subcommands

def _decoration(cfg: ExperimentConfig):
    try:
        return make_decoration(cfg.decoration, **cfg.decoration_params)
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError("decoration.params", str(exc)) from exc


def _process(cfg: ExperimentConfig, window: Window | None = None):
    window = cfg.window if window is None else window
    if cfg.decoration == CONTROL:
        return stability.GaussianIntensityPoisson(window)
    return sampler.DpppSpec(_decoration(cfg), window, cfg.density_coeff)


def run_ppp(cfg, art):
    from scipy import stats

    batch = sampler.sample_gumbel_ppp_batch(cfg.window_lo, cfg.replicas, cfg.seed)
    maxima = batch.max_positions()
    observed = maxima[np.isfinite(maxima)]
    # max <= z has probability exp(-e^{-z}) for z >= lo; an empty window has probability exp(-e^{-lo})
    ks = stats.kstest(np.where(np.isfinite(maxima), maxima, cfg.window_lo),
                      lambda z: np.exp(-np.exp(-np.maximum(z, cfg.window_lo))))
    crit = stats.kstwo.ppf(1 - cfg.tolerance("level"), cfg.replicas)
    art.add_csv("maxima.csv", ["replica", "max"], ((i, m) for i, m in enumerate(maxima)))
    art.summary.update(ks_statistic=ks.statistic, ks_pvalue=ks.pvalue, critical_value=crit,
                       nonempty=int(observed.size), mean_count=float(batch.counts.mean()))
    art.check("gumbel max", ks.statistic < crit, f"KS D={ks.statistic:.5f} < {crit:.5f}")


def run_dppp(cfg, art):
    spec = _process(cfg)
    workers = default_workers() if cfg.workers is None else cfg.workers
    batch = spec.sample_batch(cfg.replicas, cfg.seed, workers=workers) if isinstance(spec, sampler.DpppSpec) \
        else spec.sample_batch(cfg.replicas, cfg.seed)
    art.add_text("atoms.csv", batch.to_csv())
    maxima = batch.max_positions()
    art.summary.update(replicas=len(batch), mean_count=float(batch.counts.mean()),
                       mean_max=float(np.mean(maxima[np.isfinite(maxima)])) if np.isfinite(maxima).any() else None)
    art.check("sample", True, f"{len(batch)} replicas, mean atoms {batch.counts.mean():.4g}")


def run_cumulant(cfg, art):
    spec = _process(cfg)
    rows = functional.agreement_table(spec, functional.BATTERY, cfg.replicas, cfg.mc_inner, cfg.seed)
    z = cfg.tolerance("z")
    art.add_csv("cumulants.csv", ["f_id", "mc", "mc_se", "formula", "formula_se", "z"],
                ((r.f_id, r.mc.value, r.mc.std_error, r.formula.value, r.formula.std_error, r.z) for r in rows))
    frac = float(np.mean([abs(r.z) <= z for r in rows]))
    art.summary.update(rows=[r.to_json() for r in rows], fraction_within=frac)
    art.check("cumulant agreement", frac >= cfg.tolerance("agreement_fraction"),
              f"{frac:.0%} of cells within {z:g} SE")


def run_stability(cfg, art):
    proc = _process(cfg)
    reports = [stability.check_stability(proc, a, cfg.replicas, cfg.seed, level=cfg.tolerance("level"))
               for a in cfg.alpha]
    art.add_csv("stability.csv", ["alpha", "beta", "ks_pvalue_max", "min_pvalue", "verdict"],
                ((r.alpha, r.beta, r.ks_pvalue_max, r.min_pvalue, r.verdict) for r in reports))
    art.summary["reports"] = [r.to_json() for r in reports]
    for r in reports:
        art.check(f"stability alpha={r.alpha:.4g}", r.consistent, f"{r.verdict}, min p {r.min_pvalue:.3g}")


def run_canonicalize(cfg, art):
    dprime = _decoration(cfg)
    pair = normalize.canonicalize(dprime, cfg.n_pool, cfg.seed)
    report = normalize.verify_equivalence(dprime, pair, cfg.replicas, cfg.seed, cfg.window, cfg.m_offset)
    law = pair.decoration
    owners = law.pool.owners()
    art.add_csv("canonical_decoration.csv", ["configuration", "position", "mass", "weight"],
                ((int(o), p, m, law.weights[o]) for o, p, m in zip(owners, law.pool.positions, law.pool.masses)))
    art.add_text("canonical.json", pair.dumps() + "\n")
    art.summary.update(pair.to_json(include_pool=False), equivalence=report.to_json())
    art.check("canonical form", True, f"m = {pair.m:.6g} +/- {pair.m_se:.2g}, ESS {pair.ess:.0f}")
    art.check("equivalence", report.consistent, f"{report.verdict} at shift m{cfg.m_offset:+g}")


def run_bbm(cfg, art):
    params = bbm.BbmParams(cfg.t, seed=cfg.seed)
    batch = bbm.simulate_batch(params, cfg.replicas, cfg.seed)
    art.add_csv("paths.csv", ["path", "W_t", "N_t", "additive", "max"],
                ((i, w, int(n), a, m) for i, (w, n, a, m) in
                 enumerate(zip(batch.w, batch.counts, batch.additive, batch.maxima))))
    snap = bbm.simulate(params)
    discarded = float(np.mean(batch.w <= 0))
    art.add_text("snapshot.csv", snap.particles.to_csv())
    art.add_text("snapshot.json", bbm.dumps_snapshot(snap, discarded) + "\n")
    info = batch.to_json()
    art.summary.update(info)
    z = cfg.tolerance("z")
    if cfg.replicas > 1:
        za = (info["mean_additive"] - 1.0) / info["se_additive"]
        zn = (info["mean_N_t"] - math.exp(cfg.t / 2)) / info["se_N_t"]
        art.check("additive martingale mean 1", abs(za) <= z, f"z = {za:+.2f}")
        art.check("mean count e^(t/2)", abs(zn) <= z, f"z = {zn:+.2f}")
    if cfg.checkpoints:
        trace = bbm.martingale_trace(params, cfg.checkpoints)
        art.add_csv("trace.csv", ["t", "W_t", "N_t"], trace)
    if cfg.superposition:
        report = bbm.superposition_check(cfg.t, cfg.replicas, cfg.seed, level=cfg.tolerance("level"))
        art.summary["superposition"] = report.to_json()
        art.check("BBM superposition", report.consistent, f"{report.verdict}, min p {report.min_pvalue:.3g}")


def run_intensity(cfg, art):
    decoration = _decoration(cfg)
    area = Window(cfg.area_lo, cfg.area_hi)
    rows = []
    if not decoration.needs_floor:
        est = sampler.intensity_estimate(sampler.DpppSpec(decoration, area, cfg.density_coeff), area,
                                         cfg.replicas, cfg.seed)
        art.summary["estimate"] = est.to_json()
        rows.append(("area", area.lo, area.hi, est.mean, est.std_error, est.ratio, est.ratio_se))
        if est.prediction is not None:
            ok = est.ci[0] <= est.prediction <= est.ci[1]
            art.check("intensity", ok, f"{est.mean:.5g} +/- {est.std_error:.2g}, predicted {est.prediction:.5g}")
    scan = sampler.intensity_scan(decoration, tuple(cfg.depths), cfg.replicas, cfg.seed, cfg.density_coeff)
    for k, e in zip(cfg.depths, scan.estimates):
        rows.append((f"depth {k:g}", e.window.lo, e.window.hi, e.mean, e.std_error, e.ratio, e.ratio_se))
    art.add_csv("intensity.csv", ["label", "lo", "hi", "mean", "se", "ratio", "ratio_se"], rows)
    art.summary["scan"] = scan.to_json()
    regime = "finite" if scan.finite_intensity else "non-finite"
    art.check("intensity regime", True, f"{regime} (growth z = {scan.growth_z:.2f})")


RUNNERS = {"ppp": run_ppp, "dppp": run_dppp, "cumulant": run_cumulant, "stability": run_stability,
           "canonicalize": run_canonicalize, "bbm": run_bbm, "intensity": run_intensity}


def run(cfg: ExperimentConfig) -> int:
    cfg.validate()
    if cfg.seed is None:
        cfg.seed = fresh_seed()
        print(f"fresh seed {cfg.seed}", file=sys.stderr)
    art = Artifacts(cfg)
    RUNNERS[cfg.subcommand](cfg, art)
    art.write()
    return EXIT_OK if art.passed else EXIT_REJECTED


# argument parsing

def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="expstable", description=__doc__.splitlines()[0], formatter_class=fmt)
    subs = parser.add_subparsers(dest="subcommand", required=True)
    parser.subcommand_parsers = subs.choices
    defaults = ExperimentConfig("ppp")

    def common(p, replicas=defaults.replicas):
        p.add_argument("--config", help="YAML file with options; flags override it")
        p.add_argument("--seed", type=int, help="64-bit seed (required unless --fresh-seed)")
        p.add_argument("--fresh-seed", action="store_true", help="draw a fresh seed from OS entropy")
        p.add_argument("--replicas", type=int, default=replicas, help="number of replicas")
        p.add_argument("--window-lo", type=float, default=defaults.window_lo, help="lower end of the window")
        p.add_argument("--window-hi", type=float, default=defaults.window_hi, help="upper end of the window")
        p.add_argument("--output-dir", help="directory for CSV/JSON artifacts")
        p.add_argument("--workers", type=int, help=f"worker processes (default: ${WORKERS_ENV} or CPU count)")
        p.add_argument("--level", type=float, default=DEFAULT_TOLERANCES["level"], help="family-wise test level")
        p.add_argument("--z", type=float, default=DEFAULT_TOLERANCES["z"], help="z tolerance for mean checks")

    def decorated(p):
        p.add_argument("--decoration", default=defaults.decoration,
                       help=f"one of {', '.join(sorted(REGISTRY))}")
        p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                       help="decoration parameter, repeatable")
        p.add_argument("--density-coeff", type=float, default=defaults.density_coeff,
                       help="coefficient c of the c e^{-x} dx part")

    p = subs.add_parser("ppp", help="Poisson process with intensity e^{-x}: max vs Gumbel", formatter_class=fmt)
    common(p, 10**5)
    p = subs.add_parser("dppp", help="sample a decorated Poisson process", formatter_class=fmt)
    common(p)
    decorated(p)
    p = subs.add_parser("cumulant", help="cumulant battery, simulation vs formula", formatter_class=fmt)
    common(p, 10**5)
    decorated(p)
    p.add_argument("--mc-inner", type=int, default=defaults.mc_inner, help="decoration draws for the formula")
    p = subs.add_parser("stability", help="exp-stability battery", formatter_class=fmt)
    common(p)
    decorated(p)
    p.add_argument("--alpha", type=_floats, default=defaults.alpha, help="comma-separated alphas")
    p = subs.add_parser("canonicalize", help="canonical (m, D) and equivalence check", formatter_class=fmt)
    common(p)
    decorated(p)
    p.add_argument("--n-pool", type=int, default=defaults.n_pool, help="decoration pool size")
    p.add_argument("--m-offset", type=float, default=defaults.m_offset, help="perturbation added to m")
    p = subs.add_parser("bbm", help="branching Brownian motion", formatter_class=fmt)
    common(p)
    p.add_argument("--t", type=float, default=defaults.t, help="horizon")
    p.add_argument("--checkpoints", type=_floats, default=[], help="comma-separated times for one traced path")
    p.add_argument("--superposition", action="store_true", help="also run the superposition battery")
    p = subs.add_parser("intensity", help="intensity estimate and depth scan", formatter_class=fmt)
    common(p, 10**5)
    decorated(p)
    p.add_argument("--area-lo", type=float, default=defaults.area_lo, help="lower end of the area")
    p.add_argument("--area-hi", type=float, default=defaults.area_hi, help="upper end of the area")
    p.add_argument("--depths", type=_floats, default=defaults.depths, help="comma-separated scan depths")
    return parser


def _parse_param(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigError("decoration.params", f"expected KEY=VALUE, got {text!r}")
    try:
        return key, yaml.safe_load(value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"decoration.params.{key}", str(exc)) from exc


FLAG_FIELDS = ("seed", "fresh_seed", "replicas", "window_lo", "window_hi", "output_dir", "workers",
               "decoration", "density_coeff", "mc_inner", "alpha", "n_pool", "m_offset", "t",
               "checkpoints", "superposition", "area_lo", "area_hi", "depths")


def config_from_args(argv) -> ExperimentConfig:
    parser = build_parser()
    args = parser.parse_args(argv)
    values = {}
    if args.config:
        values.update(load_config_file(args.config))
    explicit = {a.dest for a in parser.subcommand_parsers[args.subcommand]._actions if _given(a, argv)}
    for name in FLAG_FIELDS:
        if hasattr(args, name) and (name in explicit or name not in values):
            values[name] = getattr(args, name)
    tol = dict(values.get("tolerances") or {})
    for key in ("level", "z"):
        if key in explicit or key not in tol:
            tol[key] = getattr(args, key)
    values["tolerances"] = tol
    if getattr(args, "param", None):
        params = dict(values.get("decoration_params") or {})
        params.update(_parse_param(t) for t in args.param)
        values["decoration_params"] = params
    values["subcommand"] = args.subcommand
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc


def _given(action, argv) -> bool:
    return any(a == opt or a.startswith(opt + "=") for a in argv for opt in action.option_strings)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = config_from_args(argv)
        return run(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExpStableError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
