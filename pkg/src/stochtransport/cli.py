"""Command line: run experiments, list the catalog, validate scenario files.

    stochtransport run exponentials --h const:1 --paths 10000 --seed 7
    stochtransport run scenario.ini --threads 2 --out results/
    stochtransport validate scenario.ini
    stochtransport list-catalog

Exit status: 0 when the experiment passes, 2 when it fails, 1 on errors and
64 on usage errors.  Scenario files are INI-style with a ``[scenario]``
section (name, experiment, seed, output_dir) and a ``[parameters]``
section; unknown sections or keys are errors.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import os
import platform
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, TransportLabError
from .experiments import EXPERIMENTS, FAIL, check_budgets, defaults, parse_value, run_experiment
from .fields import catalog_names
from .io import config_hash, write_csv, write_manifest, write_pgm
from .mollify import KERNELS
from .muskat import PRESETS
from .stochastic import exponential_family

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAIL = 2
EXIT_USAGE = 64
OUT_ENV = "STOCHTRANSPORT_OUT"
SCENARIO_KEYS = ("name", "experiment", "seed", "output_dir")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


@dataclass
class Scenario:
    name: str
    experiment: str
    parameters: dict = field(default_factory=dict)
    output_dir: str | None = None
    seed: int = 0

    def resolved(self) -> dict:
        full = defaults(self.experiment)
        full.update(self.parameters)
        return full

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        unknown = set(self.parameters) - set(EXPERIMENTS[self.experiment].params)
        if unknown:
            raise ConfigError(f"unknown parameters: {', '.join(sorted(unknown))}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        check_budgets(self.experiment, self.resolved())


def load_scenario(path: str | os.PathLike) -> Scenario:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    with open(path) as fh:
        cp.read_file(fh)
    extra = set(cp.sections()) - {"scenario", "parameters"}
    if extra:
        raise ConfigError(f"unknown sections: {', '.join(sorted(extra))}")
    if not cp.has_section("scenario"):
        raise ConfigError("missing [scenario] section")
    head = dict(cp.items("scenario"))
    unknown = set(head) - set(SCENARIO_KEYS)
    if unknown:
        raise ConfigError(f"unknown keys in [scenario]: {', '.join(sorted(unknown))}")
    if "experiment" not in head:
        raise ConfigError("[scenario] needs an experiment")
    exp = head["experiment"].strip()
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}")
    schema = EXPERIMENTS[exp].params
    params = {}
    if cp.has_section("parameters"):
        for key, text in cp.items("parameters"):
            if key not in schema:
                raise ConfigError(f"unknown parameter {key!r} for {exp}")
            try:
                params[key] = parse_value(schema[key], text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from exc
    try:
        seed = int(head.get("seed", "0"))
    except ValueError as exc:
        raise ConfigError("seed must be an integer") from exc
    sc = Scenario(head.get("name", Path(path).stem).strip(), exp, params,
                  head.get("output_dir"), seed)
    sc.validate()
    return sc


def describe_version() -> str:
    """Package version with a git-describe suffix when the source is a checkout."""
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if res.returncode == 0 and res.stdout.strip():
            return f"{__version__}-{res.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _versions() -> dict:
    import numba
    import scipy

    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "package": describe_version()}


def set_threads(spec: str | None) -> int:
    import numba

    top = numba.config.NUMBA_NUM_THREADS
    if spec is None or spec == "auto":
        n = top
    else:
        try:
            n = int(spec)
        except ValueError as exc:
            raise UsageError(f"--threads takes a positive integer or 'auto', got {spec!r}") from exc
        if n < 1:
            raise UsageError("--threads must be positive")
        if n > top:
            raise ConfigError(f"--threads {n} exceeds the {top} threads available "
                              "(raise NUMBA_NUM_THREADS)")
    numba.set_num_threads(n)
    return n


def output_dir(sc: Scenario, override: str | None) -> Path:
    if override:
        return Path(override)
    if sc.output_dir:
        return Path(sc.output_dir)
    return Path(os.environ.get(OUT_ENV, "runs")) / sc.name


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def execute(sc: Scenario, out: Path, threads: int, quiet: bool = False) -> int:
    params = sc.resolved()
    t0 = time.perf_counter()
    outcome = run_experiment(sc.experiment, sc.parameters, sc.seed)
    wall = time.perf_counter() - t0
    files = []
    for name, header, rows in outcome.tables:
        files.append(write_csv(out / name, header, rows))
    for name, values in outcome.images:
        files.append(write_pgm(values, out / name))
    config = {"experiment": sc.experiment, "parameters": params, "seed": sc.seed}
    record = {
        "scenario": sc.name, "experiment": sc.experiment, "parameters": params,
        "config_hash": config_hash(config), "master_seed": sc.seed, "status": outcome.status,
        "versions": _versions(), "threads": threads, "wallclock_s": round(wall, 3),
        "artifacts": {f.name: _sha(f) for f in files}, "summary": outcome.summary,
    }
    if outcome.extra:
        record["details"] = outcome.extra
    write_manifest(out, [record])
    if not quiet:
        for line in outcome.summary:
            print(line)
        print(f"{sc.experiment}: {outcome.status} ({wall:.1f} s, artifacts in {out})")
    if outcome.status == FAIL:
        return EXIT_FAIL
    return EXIT_OK


def catalog_listing() -> str:
    lines = []
    for d in (1, 2, 3):
        lines.append(f"drifts (d={d}): " + " ".join(sorted(catalog_names(d))))
    lines.append("kernels: " + " ".join(sorted(KERNELS)))
    for d in (1, 2):
        fam = exponential_family(_family_size(d), d)
        lines.append(f"h-family (d={d}, catalog order): " + " ".join(h.name for h in fam))
    lines.append("presets: " + " ".join(sorted(PRESETS)))
    lines.append("experiments: " + " ".join(sorted(EXPERIMENTS)))
    return "\n".join(lines)


def _family_size(d: int) -> int:
    # zero, +/- unit constants, steps, two sinusoid frequencies per axis
    return 1 + 2 * d + d + 2 * d


def _base_parser() -> _Parser:
    p = _Parser(prog="stochtransport", description="stochastic transport experiments",
                allow_abbrev=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run an experiment or a scenario file", allow_abbrev=False)
    run.add_argument("target", help="experiment name or path to a scenario file")
    run.add_argument("options", nargs=argparse.REMAINDER,
                     help="--seed, --threads, --out, --name, --quiet and experiment parameters")
    val = sub.add_parser("validate", help="parse and validate a scenario file")
    val.add_argument("scenario")
    sub.add_parser("list-catalog", help="print drifts, kernels, h-family and presets")
    return p


def _run_parser(exp: str) -> _Parser:
    """Common run flags plus one --flag per experiment parameter."""
    p = _Parser(prog=f"stochtransport run {exp}", allow_abbrev=False)
    p.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    p.add_argument("--threads", default=None, help="worker threads: a number or 'auto'")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV}/<name>)")
    p.add_argument("--name", default=None, help="scenario name for the output directory")
    p.add_argument("--quiet", action="store_true")
    group = p.add_argument_group("experiment parameters")
    for key, spec in EXPERIMENTS[exp].params.items():
        group.add_argument("--" + key.replace("_", "-"), dest="p_" + key, default=None, metavar=key.upper(),
                           help=f"{spec.help} (default {spec.default})".strip())
    return p


def _scenario_from_args(target: str, options: list[str]) -> tuple[Scenario, argparse.Namespace]:
    if target in EXPERIMENTS:
        sc = Scenario(target, target)
    elif target.endswith(".ini") or os.path.isfile(target):
        sc = load_scenario(target)
    else:
        raise UsageError(f"unknown experiment {target!r}; choose from {', '.join(sorted(EXPERIMENTS))}")
    ns = _run_parser(sc.experiment).parse_args(options)
    schema = EXPERIMENTS[sc.experiment].params
    for key in schema:
        text = getattr(ns, "p_" + key)
        if text is not None:
            try:
                sc.parameters[key] = parse_value(schema[key], text)
            except ValueError as exc:
                raise ConfigError(f"bad value for --{key.replace('_', '-')}: {exc}") from exc
    if ns.seed is not None:
        sc.seed = ns.seed
    if ns.name:
        sc.name = ns.name
    sc.validate()
    return sc, ns


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _base_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command == "list-catalog":
            print(catalog_listing())
            return EXIT_OK
        if ns.command == "validate":
            sc = load_scenario(ns.scenario)
            print(f"ok: {sc.name} ({sc.experiment}, seed {sc.seed})")
            return EXIT_OK
        sc, opts = _scenario_from_args(ns.target, ns.options)
        threads = set_threads(opts.threads)
        return execute(sc, output_dir(sc, opts.out), threads, opts.quiet)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"stochtransport: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TransportLabError, OSError, ValueError, configparser.Error) as exc:
        print(f"stochtransport: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
