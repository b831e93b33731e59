"""Command-line entry point.

Subcommands: simulate, estimate, benchmark, subgroup, check-identification
and rerun.  Configuration lives in one TOML file with a table per module
(``[dgp]``, ``[estimator]``, ``[mcmc]``, ``[mcmc.bart]``, ``[mcmc.bcf]``,
``[mcmc.propensity]``, ``[bhm]``, ``[subgroup]``, ``[identification]``);
flags override file values.  Every run writes a manifest next to its
outputs recording the argument vector, input hashes, seed, library
versions and output hashes.

Exit codes: 0 success, 1 usage error, 2 data/model/config error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bench import plot_data, run_benchmark
from .config import BART_OUTCOME, BART_PROPENSITY, BCF_DEFAULT, BhmConfig, McmcConfig
from .core import (ESTIMANDS, ConfigError, CovariateSchema, DataError, PosteriorDraws,
                   ScaleupError)
from .dgp import DgpConfig, default_schema, make_replication, replication_rng
from .estimators import (ESTIMATOR_NAMES, DiscreteDgp, EstimatorSpec, canonical_name,
                         check_identification, estimate, posterior_draws)
from .io import (atomic_write, dataset_to_csv, dump_json, read_dataset, read_matrix,
                 read_toml, schema_to_toml, write_matrix_csv)
from .subgroup import fit_the_fit, offset_probability, subgroup_uncertainty

log = logging.getLogger("scaleup")

JOBS_ENV = "SCALEUP_JOBS"
MANIFEST_SUFFIX = ".manifest.json"


class UsageError(Exception):
    pass


class ReproducibilityError(ScaleupError):
    prefix = "reproducibility error"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# configuration


def bundled(name: str) -> Path:
    """Path of a TOML file shipped in the package data directory."""
    return Path(str(resources.files("scaleup") / "data" / name))


def load_config(path) -> dict:
    return read_toml(path) if path else {}


def dgp_from_config(cfg: dict, scale: Optional[float] = None) -> DgpConfig:
    section = dict(cfg.get("dgp", {}))
    if scale is not None:
        section["scale"] = scale
    return DgpConfig.from_dict(section)


def schema_from_config(cfg: dict) -> CovariateSchema:
    if "covariates" in cfg or "schema" in cfg:
        return CovariateSchema.from_dict(cfg.get("schema", cfg))
    return default_schema()


def _mcmc(cfg: dict, role: str, preset: McmcConfig) -> McmcConfig:
    section = cfg.get("mcmc", {})
    common = {k: v for k, v in section.items() if not isinstance(v, dict)}
    return McmcConfig.from_dict({**common, **section.get(role, {})}, base=preset)


def spec_from_config(cfg: dict, name: str, estimand: str) -> EstimatorSpec:
    """EstimatorSpec for ``name`` with the file's sampler and estimator settings."""
    name = canonical_name(name)
    est = dict(cfg.get("estimator", {}))
    allowed = {"weighting", "level", "bootstrap_b", "ippw_population"}
    bad = set(est) - allowed
    if bad:
        raise ConfigError(f"unknown estimator keys: {sorted(bad)}")
    kw = dict(est)
    if name == "BART":
        kw["mcmc"] = _mcmc(cfg, "bart", BART_OUTCOME)
    elif name in ("BCF", "BCF-piS"):
        kw["mcmc"] = _mcmc(cfg, "bcf", BCF_DEFAULT)
    if name in ("BART", "BCF", "BCF-piS"):
        kw["propensity_mcmc"] = _mcmc(cfg, "propensity", BART_PROPENSITY)
    if name == "BHM":
        kw["bhm"] = BhmConfig.from_dict(cfg.get("bhm", {}))
    subgroup = cfg.get("subgroup") if estimand == "TCATT" else None
    return EstimatorSpec(name, estimand, subgroup=subgroup, **kw)


def default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        jobs = int(raw)
    except ValueError:
        raise ConfigError(f"{JOBS_ENV} must be an integer, got {raw!r}") from None
    if jobs < 1:
        raise ConfigError(f"{JOBS_ENV} must be >= 1")
    return jobs


# --------------------------------------------------------------------------
# manifest


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    with open(path, "rb") as fh:
        return _sha256_bytes(fh.read())


def _versions() -> dict:
    import numba
    import scipy

    return {"scaleup": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


class Run:
    """Collects written outputs and emits the manifest."""

    def __init__(self, command: str, argv: Sequence[str], seed, inputs: dict):
        self.command = command
        self.argv = list(argv)
        self.seed = seed
        self.inputs = {k: v for k, v in inputs.items() if v}
        self.outputs: dict = {}

    def write(self, path, text: str) -> None:
        atomic_write(path, text)
        self.outputs[str(path)] = _sha256_bytes(text.encode())

    def record(self, path) -> None:
        self.outputs[str(path)] = sha256_file(path)

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "argv": self.argv,
            "cwd": os.getcwd(),
            "seed": self.seed,
            "inputs": {k: {"path": str(p), "sha256": sha256_file(p)}
                       for k, p in self.inputs.items()},
            "versions": _versions(),
            "outputs": dict(sorted(self.outputs.items())),
        }

    def finish(self, manifest_path) -> None:
        atomic_write(manifest_path, dump_json(self.manifest()))


def _strip_jobs(argv: Sequence[str]) -> list:
    """Argument vector without ``--jobs`` (outputs do not depend on it)."""
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--jobs":
            skip = True
            continue
        if tok.startswith("--jobs="):
            continue
        out.append(tok)
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, argv) -> int:
    cfg = load_config(args.config)
    dgp = dgp_from_config(cfg, args.scale)
    out = Path(args.out)
    run = Run("simulate", argv, args.seed, {"config": args.config})
    run.write(out / "schema.toml", schema_to_toml(default_schema()))
    for rep in range(args.reps):
        replication = make_replication(dgp, replication_rng(args.seed, rep))
        run.write(out / f"rep_{rep:04d}.csv", dataset_to_csv(replication.dataset))
        truth = {"replication": rep, **replication.truth.to_dict()}
        run.write(out / f"rep_{rep:04d}_truth.json", dump_json(truth))
    run.finish(out / "manifest.json")
    print(f"wrote {args.reps} replications to {out}")
    return 0


def cmd_estimate(args, argv) -> int:
    cfg = load_config(args.config)
    schema = CovariateSchema.from_dict(_schema_section(read_toml(args.schema))) \
        if args.schema else schema_from_config(cfg)
    ds = read_dataset(args.data, schema)
    spec = spec_from_config(cfg, args.estimator, args.estimand)
    if args.level is not None:
        spec = replace(spec, level=args.level)
    spec = replace(spec, jobs=args.jobs or default_jobs())
    run = Run("estimate", _strip_jobs(argv), args.seed,
              {"data": args.data, "schema": args.schema, "config": args.config})
    for path in (args.tau_draws_out, args.w_draws_out):
        if path and str(path).endswith(".npy"):
            raise ConfigError(f"draw output is CSV; {path} has a .npy suffix")
    if spec.inference == "posterior" and (args.tau_draws_out or args.w_draws_out):
        from .core import per_draw_aggregates, summarize_draws

        draws = posterior_draws(spec, ds, args.seed)
        agg = per_draw_aggregates(draws.tau, draws.w)
        result = summarize_draws(agg, spec.estimand, spec.level, estimator=spec.name)
        if args.tau_draws_out:
            write_matrix_csv(args.tau_draws_out, draws.tau, draws.unit_ids)
            run.record(args.tau_draws_out)
        if args.w_draws_out:
            write_matrix_csv(args.w_draws_out, draws.w, draws.unit_ids)
            run.record(args.w_draws_out)
    else:
        if args.tau_draws_out or args.w_draws_out:
            raise ConfigError(f"{spec.name} has no posterior draws to write")
        result = estimate(spec, ds, args.seed)
    text = dump_json(result.to_dict())
    if args.out:
        run.write(args.out, text)
        run.finish(str(args.out) + MANIFEST_SUFFIX)
    else:
        sys.stdout.write(text)
    return 0


def _schema_section(spec: dict) -> dict:
    return spec.get("schema", spec)


def cmd_benchmark(args, argv) -> int:
    cfg = load_config(args.config)
    dgp = dgp_from_config(cfg, args.scale)
    names = [n for n in args.estimators.split(",") if n.strip()]
    estimands = [e.strip() for e in args.estimands.split(",") if e.strip()]
    for e in estimands:
        if e not in ESTIMANDS:
            raise ConfigError(f"unknown estimand {e!r}")
    specs = [spec_from_config(cfg, n, e) for n in names for e in estimands]
    jobs = args.jobs or default_jobs()
    result = run_benchmark(dgp, specs, args.reps, args.seed, jobs=jobs)
    run = Run("benchmark", _strip_jobs(argv), args.seed, {"config": args.config})
    run.write(args.out_table, result.table_csv())
    if args.out_raw:
        run.write(args.out_raw, result.raw_csv())
    if args.out_plot:
        run.write(args.out_plot, plot_data(result.raw))
    run.finish(str(args.out_table) + MANIFEST_SUFFIX)
    sys.stdout.write(result.table_csv())
    return 0


def cmd_subgroup(args, argv) -> int:
    schema = CovariateSchema.from_dict(_schema_section(read_toml(args.schema))) \
        if args.schema else default_schema()
    ds = read_dataset(args.data, schema)
    tau, ids = read_matrix(args.tau_draws)
    ids = list(ds.ids[: tau.shape[1]]) if ids is None else ids
    pos = {u: i for i, u in enumerate(ds.ids)}
    missing = [u for u in ids if u not in pos]
    if missing:
        raise DataError(f"tau draws reference unknown unit ids, e.g. {missing[0]!r}")
    rows = np.array([pos[u] for u in ids], dtype=np.int64)
    if args.w_draws:
        w, w_ids = read_matrix(args.w_draws)
        if w_ids is not None and list(w_ids) != list(ids):
            raise DataError("weight draws and tau draws list different units")
    else:
        w = np.ones_like(tau)
    draws = PosteriorDraws(tau, w, np.asarray(ids))
    target = offset_probability(tau, args.threshold)
    x = ds.x[rows]
    kinds = [c.kind for c in schema.covariates]
    levels = {c.name: list(c.levels) for c in schema.covariates if c.kind == "categorical"}
    tree = fit_the_fit(x, target, kinds, schema.names, complexity=args.complexity,
                       min_leaf=args.min_leaf, levels=levels)
    groups = []
    for rule, node in tree.leaves():
        mask = _leaf_mask(tree, node, x)
        summary = subgroup_uncertainty(draws, mask, args.threshold, args.level)
        groups.append({"rule": rule, "n_units": summary.n_units,
                       "mean_offset_probability": node.value,
                       "effect": summary.result.to_dict(),
                       "exceedance": summary.exceedance})
    out = tree.to_dict()
    out.update(threshold=args.threshold, target="share of draws below -threshold",
               subgroups=groups)
    run = Run("subgroup", argv, None, {"tau_draws": args.tau_draws, "data": args.data,
                                        "schema": args.schema, "w_draws": args.w_draws})
    text = dump_json(out)
    if args.out:
        run.write(args.out, text)
        run.finish(str(args.out) + MANIFEST_SUFFIX)
    else:
        sys.stdout.write(text)
    return 0


def _leaf_mask(tree, leaf, x) -> np.ndarray:
    mask = np.zeros(x.shape[0], bool)

    def walk(node, idx):
        if node is leaf:
            mask[idx] = True
            return
        if node.is_leaf:
            return
        left = node.goes_left(x[idx])
        walk(node.left, idx[left])
        walk(node.right, idx[~left])

    walk(tree.root, np.arange(x.shape[0]))
    return mask


def cmd_check_identification(args, argv) -> int:
    cases = []
    if args.random:
        rng = np.random.default_rng(args.seed)
        dgps = [DiscreteDgp.random(rng) for _ in range(args.random)]
    else:
        cfg = read_toml(args.config or bundled("identification.toml"))
        dgps = [DiscreteDgp.from_dict(cfg.get("identification", cfg))]
    for dgp in dgps:
        res = check_identification(dgp)
        cases.append({"direct": res.direct, "functional": res.functional, "gap": res.gap})
    out = {"cases": cases, "max_gap": max(c["gap"] for c in cases)}
    text = dump_json(out)
    if args.out:
        run = Run("check-identification", argv, args.seed, {"config": args.config})
        run.write(args.out, text)
        run.finish(str(args.out) + MANIFEST_SUFFIX)
    sys.stdout.write(text)
    return 0


def cmd_rerun(args, argv) -> int:
    try:
        with open(args.manifest) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"file not found: {args.manifest}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.manifest}: not a manifest ({exc})") from None
    if not isinstance(manifest, dict) or "argv" not in manifest:
        raise DataError(f"{args.manifest}: manifest has no argv")
    expected = manifest.get("outputs", {})
    here = os.getcwd()
    os.chdir(manifest.get("cwd", here))
    try:
        for key, item in manifest.get("inputs", {}).items():
            if sha256_file(item["path"]) != item["sha256"]:
                raise ReproducibilityError(f"input {key} ({item['path']}) changed since the run")
        code = main(list(manifest["argv"]))
        if code != 0:
            return code
        changed = [p for p, h in expected.items() if sha256_file(p) != h]
    finally:
        os.chdir(here)
    if changed:
        raise ReproducibilityError(f"outputs differ from the manifest: {changed}")
    print(f"reproduced {len(expected)} outputs")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scaleup", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"scaleup {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="log progress to standard error (repeat for debug)")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    s = sub.add_parser("simulate", help="generate replications of the synthetic study")
    s.add_argument("--config", help="TOML config; [dgp] overrides the defaults")
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", type=float, help="multiply region sizes (overrides config)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="run one estimator on a dataset CSV")
    e.add_argument("--data", required=True, help="dataset CSV")
    e.add_argument("--schema", help="schema TOML ([[covariates]]); default: simulator schema")
    e.add_argument("--estimator", required=True, help=", ".join(ESTIMATOR_NAMES))
    e.add_argument("--estimand", default="TATT", choices=list(ESTIMANDS))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--config", help="TOML with [estimator], [mcmc.*], [bhm], [subgroup]")
    e.add_argument("--level", type=float, help="interval level (default 0.90)")
    e.add_argument("--jobs", type=int, help=f"parallel workers (default ${JOBS_ENV} or 1)")
    e.add_argument("--tau-draws-out", help="write effect draws (posterior estimators)")
    e.add_argument("--w-draws-out", help="write volunteering weight draws")
    e.add_argument("--out", help="result JSON (default: standard output)")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("benchmark", help="replicate simulate+estimate and tabulate metrics")
    b.add_argument("--config", help="TOML config ([dgp], [estimator], [mcmc.*], [bhm])")
    b.add_argument("--reps", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--scale", type=float, help="multiply region sizes (overrides config)")
    b.add_argument("--estimators", default="BART,BCF,OLS,IPW,AIPW",
                   help="comma-separated estimator names")
    b.add_argument("--estimands", default="SATT,TATT", help="comma-separated estimands")
    b.add_argument("--jobs", type=int, help=f"parallel replications (default ${JOBS_ENV} or 1)")
    b.add_argument("--out-table", required=True, help="metrics table CSV")
    b.add_argument("--out-raw", help="per-replication CSV")
    b.add_argument("--out-plot", help="tidy plot-data CSV")
    b.set_defaults(func=cmd_benchmark)

    g = sub.add_parser("subgroup", help="fit-the-fit subgroup discovery on effect draws")
    g.add_argument("--tau-draws", required=True, help="effect draw matrix (CSV or .npy)")
    g.add_argument("--w-draws", help="matching weight draw matrix (default: equal weights)")
    g.add_argument("--data", required=True, help="dataset CSV holding the units' covariates")
    g.add_argument("--schema", help="schema TOML; default: simulator schema")
    g.add_argument("--threshold", type=float, default=15.0,
                   help="savings needed to offset the fee (draws below -threshold count)")
    g.add_argument("--complexity", type=float, default=0.1,
                   help="minimum SSE improvement, as a share of root SSE, to keep a split")
    g.add_argument("--min-leaf", type=int, default=50)
    g.add_argument("--level", type=float, default=0.90)
    g.add_argument("--out", help="tree JSON (default: standard output)")
    g.set_defaults(func=cmd_subgroup)

    c = sub.add_parser("check-identification",
                       help="compare the identification functional with the direct effect")
    c.add_argument("--config", help="TOML with an [identification] table (default: bundled)")
    c.add_argument("--random", type=int, default=0, help="check this many random designs")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", help="also write the JSON here")
    c.set_defaults(func=cmd_check_identification)

    r = sub.add_parser("rerun", help="repeat a run from its manifest and verify the outputs")
    r.add_argument("manifest")
    r.set_defaults(func=cmd_rerun)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("usage error: a subcommand is required", file=sys.stderr)
        return 1
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    for name in ("reps", "jobs", "random", "min_leaf"):
        val = getattr(args, name, None)
        if val is not None and val < (0 if name == "random" else 1):
            print(f"usage error: --{name.replace('_', '-')} must be positive", file=sys.stderr)
            return 1
    try:
        return args.func(args, argv)
    except ScaleupError as exc:
        print(f"{exc.prefix}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
