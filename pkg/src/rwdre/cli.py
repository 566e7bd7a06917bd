"""Command-line front end for the verification workflows.

Every subcommand resolves its configuration (flags, or a JSON config file
with flags overriding), echoes the resolved configuration with the seed,
runs library operations, and writes one CSV table plus one JSON verdict
into the output directory.  The CLI schedules replica blocks across
threads and formats results; all arithmetic happens in the library, and
replica keying by absolute index makes every output byte-identical across
runs and thread counts.

Exit codes: 0 all assertions pass, 1 at least one assertion fails,
2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import current as cur
from . import density as dens
from . import envmodel as env
from . import kernels as ker
from . import particles as par
from .rng import Stream

OUTPUT_DIR_ENV = "RWDRE_OUTPUT_DIR"


# ---------------------------------------------------------------------------
# Configuration plumbing
# ---------------------------------------------------------------------------

class ConfigError(Exception):
    """Invalid configuration; maps to exit code 2."""


def _resolve_spec(text: str) -> env.EnvSpec:
    """Accept a fixture name, an inline JSON object, or a JSON file path."""
    if text in env.FIXTURES:
        return env.FIXTURES[text]()
    if text.lstrip().startswith("{"):
        raw = text
    else:
        path = Path(text)
        if not path.exists():
            raise ConfigError(
                f"spec {text!r} is neither a fixture name "
                f"({', '.join(sorted(env.FIXTURES))}), inline JSON, nor a file")
        raw = path.read_text()
    try:
        block = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec is not valid JSON: {exc}") from exc
    try:
        return env.EnvSpec.from_json_dict(block)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _spec_seed(text: str) -> int | None:
    """Seed embedded in a JSON spec block, if any."""
    if text in env.FIXTURES or not text.lstrip().startswith("{"):
        if text in env.FIXTURES:
            return None
        path = Path(text)
        if not path.exists():
            return None
        text = path.read_text()
    try:
        block = json.loads(text)
    except json.JSONDecodeError:
        return None
    seed = block.get("seed")
    return int(seed) if seed is not None else None


def _parse_points(text: str):
    """Parse a 't:r,t:r,...' list of macroscopic observation points."""
    points = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 2:
            raise ConfigError(f"point {item!r} is not of the form t:r")
        try:
            points.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise ConfigError(f"point {item!r} has a non-numeric entry") from exc
    if not points:
        raise ConfigError("at least one observation point is required")
    return points


def _parse_lags(text: str):
    """Parse lag lists: '1..5' (inclusive range) or '1,2,3'."""
    text = text.strip()
    if ".." in text:
        lo_s, hi_s = text.split("..", 1)
        try:
            lo, hi = int(lo_s), int(hi_s)
        except ValueError as exc:
            raise ConfigError(f"lag range {text!r} is not integer..integer") from exc
        if hi < lo:
            raise ConfigError(f"lag range {text!r} is empty")
        return list(range(lo, hi + 1))
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"lag list {text!r} has a non-integer entry") from exc


def _parse_density_law(text: str):
    """Parse initial-law grammar: 'poisson:MEAN' or 'two_mass:VALUE:PROB'."""
    parts = text.split(":")
    try:
        if parts[0] == "poisson" and len(parts) == 2:
            return ("poisson", float(parts[1]))
        if parts[0] == "two_mass" and len(parts) == 3:
            return ("two_mass", int(parts[1]), float(parts[2]))
    except ValueError as exc:
        raise ConfigError(f"initial law {text!r} has a non-numeric entry") from exc
    raise ConfigError(
        f"initial law {text!r}; expected poisson:MEAN or two_mass:VALUE:PROB")


def _replica_blocks(n_rep: int, threads: int):
    """Contiguous replica-index blocks, one per worker."""
    workers = max(1, min(int(threads), int(n_rep))) if n_rep > 0 else 1
    bounds = np.linspace(0, n_rep, workers + 1).astype(np.int64)
    return [np.arange(a, b, dtype=np.int64)
            for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _run_blocks(fn, blocks, threads: int):
    """Run one call per replica block, in parallel when threads > 1."""
    if threads <= 1 or len(blocks) <= 1:
        return [fn(block) for block in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


# ---------------------------------------------------------------------------
# Output plumbing
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    """Shortest round-trip decimal form; deterministic for equal doubles."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


class Verdict:
    """Collects named assertions and serializes the pass/fail report."""

    def __init__(self, subcommand: str, config: dict):
        self.subcommand = subcommand
        self.config = config
        self.assertions: dict[str, dict] = {}

    def check(self, name: str, ok: bool, value, tolerance) -> None:
        self.assertions[name] = {
            "pass": bool(ok),
            "value": value,
            "tolerance": tolerance,
        }

    @property
    def passed(self) -> bool:
        return all(a["pass"] for a in self.assertions.values())

    def emit(self, out_dir: Path, extra: dict | None = None) -> int:
        report = {
            "subcommand": self.subcommand,
            "config": self.config,
            "assertions": self.assertions,
            "pass": self.passed,
        }
        if extra:
            report["values"] = extra
        path = out_dir / f"{self.subcommand}_verdict.json"
        path.write_text(json.dumps(report, indent=2, default=_json_default) + "\n")
        for name, a in self.assertions.items():
            print(f"[{'PASS' if a['pass'] else 'FAIL'}] {name}: "
                  f"value={a['value']} tolerance={a['tolerance']}")
        print(f"verdict: {'pass' if self.passed else 'fail'} -> {path}")
        return 0 if self.passed else 1


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def _echo_config(subcommand: str, config: dict) -> None:
    print(f"config[{subcommand}]: "
          + json.dumps(config, sort_keys=True, default=_json_default))


def _out_dir(args) -> Path:
    out = args.output_dir or os.environ.get(OUTPUT_DIR_ENV) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_beta(args) -> int:
    spec = _resolve_spec(args.spec)
    out_dir = _out_dir(args)
    config = {"spec": spec.to_json_dict(), "seed": args.seed, "tol": args.tol,
              "threads": args.threads}
    _echo_config("beta", config)

    beta_fourier = ker.beta_fourier(spec)
    beta_prob = ker.beta_from_potential(spec)
    agree = abs(beta_fourier - beta_prob) <= args.tol

    _write_csv(out_dir / "beta.csv", ["method", "beta"],
               [["fourier", beta_fourier], ["potential", beta_prob]])
    verdict = Verdict("beta", config)
    verdict.check("methods_agree", agree, abs(beta_fourier - beta_prob), args.tol)
    print(json.dumps({"beta_fourier": beta_fourier, "beta_prob": beta_prob,
                      "agree": bool(agree)}))
    return verdict.emit(out_dir, {"beta_fourier": beta_fourier,
                                  "beta_prob": beta_prob})


def _cmd_covariance(args) -> int:
    spec = _resolve_spec(args.spec)
    lags = _parse_lags(args.m)
    out_dir = _out_dir(args)
    config = {"spec": spec.to_json_dict(), "m": lags, "horizon": args.horizon,
              "tol": args.tol, "assert_null": args.assert_null,
              "seed": args.seed, "threads": args.threads}
    _echo_config("covariance", config)

    beta = ker.beta_fourier(spec)
    limit = ker.cov_limit(spec, lags)
    limit_pot = ker.cov_limit_from_potential(spec, lags, beta=beta)
    finite = ker.cov_finite(spec, args.horizon, lags)
    var_f = 1.0 / beta - 1.0

    rows = [[m, fin, lim, abs(fin - lim)]
            for m, fin, lim in zip(lags, finite, limit)]
    _write_csv(out_dir / "covariance.csv",
               ["m", "cov_exact_N", "cov_limit", "abs_diff"], rows)

    verdict = Verdict("covariance", config)
    gap = float(np.abs(limit - limit_pot).max())
    verdict.check("pipelines_agree", gap <= args.tol, gap, args.tol)
    if args.assert_null is not None:
        worst = float(np.abs(limit).max())
        verdict.check("limit_covariance_null", worst <= args.assert_null,
                      worst, args.assert_null)
    summary = {"beta": beta, "var_f": var_f, "grid_size": args.horizon,
               "tolerances": {"pipelines_agree": args.tol,
                              "limit_covariance_null": args.assert_null}}
    return verdict.emit(out_dir, summary)


def _cmd_potential(args) -> int:
    spec = _resolve_spec(args.spec)
    out_dir = _out_dir(args)
    config = {"spec": spec.to_json_dict(), "radius": args.radius,
              "tol": args.tol, "seed": args.seed, "threads": args.threads}
    _echo_config("potential", config)

    sites = dens.window_sites(np.full(spec.dim, args.radius, dtype=np.int64))
    a_series = ker.potential_kernel_series(spec, sites)
    a_fourier = ker.potential_kernel_fourier(spec, sites)
    gap = np.abs(a_series - a_fourier)

    coord_cols = [f"x{a}" for a in range(spec.dim)]
    rows = [list(site) + [s, f, g]
            for site, s, f, g in zip(sites.tolist(), a_series, a_fourier, gap)]
    _write_csv(out_dir / "potential.csv",
               coord_cols + ["abar_series", "abar_fourier", "abs_diff"], rows)

    verdict = Verdict("potential", config)
    worst = float(gap.max())
    verdict.check("methods_agree", worst <= args.tol, worst, args.tol)
    return verdict.emit(out_dir, {"max_abs_diff": worst,
                                  "n_sites": int(len(sites))})


def _cmd_density_check(args) -> int:
    spec = _resolve_spec(args.spec)
    seed = args.seed if args.seed is not None else (_spec_seed(args.spec) or 0)
    out_dir = _out_dir(args)
    config = {"spec": spec.to_json_dict(), "seed": seed, "horizon": args.horizon,
              "half": args.half, "replicas": args.replicas, "rho": args.rho,
              "z_max": args.z_max, "harmonicity_tol": args.harmonicity_tol,
              "threads": args.threads}
    _echo_config("density-check", config)

    field = env.EnvField(spec, seed)
    profile = par.quenched_profile_check(
        field, args.horizon, args.half, args.rho, args.replicas,
        Stream.from_seed(seed).child("density-check"))
    residual = dens.harmonicity_residual(field, args.horizon)
    residual_shifted = dens.harmonicity_residual(field, args.horizon,
                                                 use_shifted=True)

    rows = [[" ".join(str(c) for c in site), f, m, s]
            for site, f, m, s in zip(profile["sites"].tolist(),
                                     profile["density"],
                                     profile["empirical_mean"],
                                     profile["empirical_se"])]
    _write_csv(out_dir / "density_check.csv",
               ["site", "f_N", "empirical_mean", "SE"], rows)

    gap = np.abs(profile["empirical_mean"] - profile["density"])
    bound = args.z_max * profile["empirical_se"]
    worst = float((gap - bound).max())
    verdict = Verdict("density-check", config)
    verdict.check("per_site_means_within_z", worst <= 0.0, worst, 0.0)
    verdict.check("harmonicity_residual",
                  residual <= args.harmonicity_tol, residual,
                  args.harmonicity_tol)
    verdict.check("harmonicity_residual_shifted",
                  residual_shifted <= args.harmonicity_tol, residual_shifted,
                  args.harmonicity_tol)
    return verdict.emit(out_dir, {
        "max_gap_minus_bound": worst,
        "harmonicity_residual": residual,
        "harmonicity_residual_shifted": residual_shifted,
    })


def _cmd_couple(args) -> int:
    spec = _resolve_spec(args.spec)
    eta_law = _parse_density_law(args.eta)
    zeta_law = _parse_density_law(args.zeta)
    if abs(par.initial_mean(eta_law) - par.initial_mean(zeta_law)) > 1e-12:
        raise ConfigError("the two initial laws must have equal means")
    out_dir = _out_dir(args)
    config = {"spec": spec.to_json_dict(), "horizon": args.horizon,
              "replicas": args.replicas, "seed": args.seed,
              "eta": args.eta, "zeta": args.zeta,
              "inner_half": args.inner_half,
              "min_reduction": args.min_reduction, "z_max": args.z_max,
              "threads": args.threads}
    _echo_config("couple", config)

    stream = Stream.from_seed(args.seed)
    blocks = _replica_blocks(args.replicas, args.threads)

    def run_block(block):
        return par.coupling_decay(spec, args.horizon, 0, stream,
                                  eta_law=eta_law, zeta_law=zeta_law,
                                  inner_half=args.inner_half, reps=block)

    res = par.merge_decay_runs(_run_blocks(run_block, blocks, args.threads))

    rows = [[t, m, s] for t, m, s in
            zip(range(args.horizon + 1), res["minus_mean"], res["minus_se"])]
    _write_csv(out_dir / "couple.csv", ["t", "E_beta_minus", "SE"], rows)

    mm, ms = res["minus_mean"], res["minus_se"]
    increase = np.diff(mm) - args.z_max * np.sqrt(ms[1:] ** 2 + ms[:-1] ** 2)
    worst_increase = float(increase.max())
    ratio = float(mm[-1] / mm[0]) if mm[0] > 0 else 0.0
    verdict = Verdict("couple", config)
    verdict.check("nonincreasing_within_noise", worst_increase <= 0.0,
                  worst_increase, 0.0)
    if args.min_reduction is not None:
        verdict.check("reduction_factor",
                      ratio <= 1.0 / args.min_reduction, ratio,
                      1.0 / args.min_reduction)
    return verdict.emit(out_dir, {
        "initial": float(mm[0]), "final": float(mm[-1]), "ratio": ratio,
    })


def _cmd_current(args) -> int:
    spec = _resolve_spec(args.spec)
    points = _parse_points(args.points)
    out_dir = _out_dir(args)
    config = {"spec": spec.to_json_dict(), "n": args.n,
              "replicas": args.replicas,
              "points": [f"{t}:{r}" for t, r in points],
              "rho": args.rho, "seed": args.seed, "rel_tol": args.rel_tol,
              "z_max": args.z_max, "threads": args.threads}
    _echo_config("current", config)

    stream = Stream.from_seed(args.seed)
    blocks = _replica_blocks(args.replicas, args.threads)

    def run_block(block):
        return cur.simulate_current(spec, args.n, points, args.rho, 0,
                                    stream, reps=block)

    try:
        res = cur.merge_current_runs(_run_blocks(run_block, blocks,
                                                 args.threads))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    labels = [f"{t}:{r}" for t, r in points]
    rows = []
    worst_excess = -math.inf
    for i in range(len(points)):
        for j in range(i, len(points)):
            emp = res["gram"][i, j]
            se = res["gram_se"][i, j]
            ana = res["limit"][i, j]
            z = (emp - ana) / se if se > 0 else 0.0
            rows.append([labels[i], labels[j], emp, se, ana, z])
            allowed = max(args.rel_tol * abs(ana), args.z_max * se)
            worst_excess = max(worst_excess, abs(emp - ana) - allowed)
    _write_csv(out_dir / "current.csv",
               ["point_a", "point_b", "empirical", "SE", "analytic",
                "z_score"], rows)

    verdict = Verdict("current", config)
    verdict.check("gram_matches_limit", worst_excess <= 0.0, worst_excess, 0.0)
    return verdict.emit(out_dir, {
        "gram": res["gram"], "limit": res["limit"], "gram_se": res["gram_se"],
    })


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sub, seed_default=0):
    sub.add_argument("--spec", required=True,
                     help="environment: fixture name, inline JSON, or JSON file")
    sub.add_argument("--seed", type=int, default=seed_default,
                     help="master seed")
    sub.add_argument("--threads", type=int, default=1,
                     help="worker cap for replica blocks (results identical "
                          "for every value)")
    sub.add_argument("--output-dir", default=None,
                     help=f"output directory (default ${OUTPUT_DIR_ENV} or .)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rwdre",
        description="Verification workflows for particles in a space-time "
                    "i.i.d. random environment.")
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("beta", help="both clustering-coefficient pipelines")
    _add_common(p)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(fn=_cmd_beta)

    p = subs.add_parser("covariance",
                        help="finite-horizon vs limiting occupation covariance")
    _add_common(p)
    p.add_argument("--m", default="1..5", help="lags, e.g. 1..5 or 0,1,2")
    p.add_argument("--horizon", type=int, default=512)
    p.add_argument("--tol", type=float, default=1e-8,
                   help="Fourier-vs-potential pipeline agreement")
    p.add_argument("--assert-null", type=float, default=None,
                   help="also require |cov_limit| below this bound")
    p.set_defaults(fn=_cmd_covariance)

    p = subs.add_parser("potential", help="potential-kernel table, both methods")
    _add_common(p)
    p.add_argument("--radius", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(fn=_cmd_potential)

    p = subs.add_parser("density-check",
                        help="density window vs one-step particle means")
    _add_common(p, seed_default=None)
    p.add_argument("--horizon", type=int, default=32)
    p.add_argument("--half", type=int, default=5)
    p.add_argument("--replicas", type=int, default=4000)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--z-max", type=float, default=4.0)
    p.add_argument("--harmonicity-tol", type=float, default=1e-12)
    p.set_defaults(fn=_cmd_density_check)

    p = subs.add_parser("couple", help="coupled discrepancy decay")
    _add_common(p)
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--replicas", type=int, default=200)
    p.add_argument("--eta", default="poisson:1.0",
                   help="first initial law (poisson:MEAN or two_mass:VALUE:PROB)")
    p.add_argument("--zeta", default="two_mass:2:0.5",
                   help="second initial law")
    p.add_argument("--inner-half", type=int, default=50)
    p.add_argument("--min-reduction", type=float, default=None,
                   help="require initial/final discrepancy at least this factor")
    p.add_argument("--z-max", type=float, default=4.0)
    p.set_defaults(fn=_cmd_couple)

    p = subs.add_parser("current", help="scaled current fluctuations vs limit")
    _add_common(p)
    p.add_argument("--n", type=int, required=True, help="scaling parameter")
    p.add_argument("--replicas", type=int, default=1000)
    p.add_argument("--points", required=True, help="t:r,t:r,... observation points")
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--rel-tol", type=float, default=0.10)
    p.add_argument("--z-max", type=float, default=4.0)
    p.set_defaults(fn=_cmd_current)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
