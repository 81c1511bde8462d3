"""Command-line entry point: ``sigfilter <subcommand> [flags]``.

Exit status is 0 on success, 2 for usage errors and invalid configurations,
1 for runtime failures (unreadable or malformed input files, I/O errors).
"""
from __future__ import annotations

import argparse
import hashlib
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, reference, seeding
from .errors import DomainError, ParseError
from .filter_lab import FilterSimConfig, pii_lower_bound, power_curve, simulate_filter, true_power
from .meta_bayes import McmcConfig, MetaModelSpec, effective_sample_size, fit_meta, rhat, summarize
from .power_mc import (
    PRINTED_ROUNDED_GAMMA,
    gamma_from_moments,
    pii_distribution,
    power_distribution_from_draws,
    sample_power_distribution,
    study_power_estimate,
)
from .report import Results, dumps_json, emit_report, histogram_rows, power_curve_table
from .stat_core import EffectScenario, Family, Sidedness, TestSpec, paired_t_test, std_normal_quantile
from .studies import bundled_table_text, load_bundled_table, parse_studies_csv

SUBCOMMANDS = ("ttest", "power", "power-curve", "simulate-filter", "meta", "power-dist", "pii", "report")
_SIDED = {"one": Sidedness.GREATER, "less": Sidedness.LESS, "two": Sidedness.TWO_SIDED}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


# ---- argument groups ------------------------------------------------------

def _test_opts(p, sided="two", family="t"):
    p.add_argument("--sided", choices=sorted(_SIDED), default=sided,
                   help="one (mu > mu0), less (mu < mu0) or two")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--family", choices=("t", "z"), default=family)
    p.add_argument("--mu0", type=float, default=0.0)


def _out_opts(p):
    p.add_argument("--out", type=Path, default=None, help="directory for output files and manifest")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--workers", type=int, default=1)


def _studies_opt(p):
    p.add_argument("--studies", type=Path, default=None,
                   help="study CSV (default: bundled reconstructed case-study table)")


def _mcmc_opts(p):
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--iters", type=int, default=4000, help="iterations per chain, warmup included")
    p.add_argument("--warmup", type=int, default=None, help="default: half of --iters")
    p.add_argument("--drop-mu-i-cauchy", action="store_true",
                   help="omit the Cauchy(0, 2.5) factor on each study effect")


def _dist_opts(p, sizes):
    p.add_argument("--n", type=int, nargs="+", default=list(sizes), dest="sizes")
    p.add_argument("--draws", "--sims", type=int, default=100_000, dest="draws")
    p.add_argument("--effect-source", choices=("summary", "posterior-draws"), default="summary")
    p.add_argument("--effect-mean", type=float, default=reference.EFFECT_MEAN)
    p.add_argument("--effect-sd", type=float, default=reference.EFFECT_SD,
                   help="standard deviation (not variance) of the effect distribution")
    p.add_argument("--precision-mean", type=float, default=reference.PRECISION_MEAN)
    p.add_argument("--precision-sd", type=float, default=reference.PRECISION_SD)
    p.add_argument("--gamma-preset", choices=("moments", "paper-rounded"), default="moments",
                   help="moments: match --precision-mean/--precision-sd; paper-rounded: the one-decimal Gamma(5.3, 0.3)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sigfilter", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("ttest", help="paired t test on difference scores")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--diffs", help="comma-separated difference scores")
    g.add_argument("--diffs-file", type=Path, help="one difference score per line")
    _test_opts(p)
    _out_opts(p)

    p = sub.add_parser("power", help="exact power of a t (or z) test")
    p.add_argument("--effect", type=float, required=True)
    p.add_argument("--sd", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    _test_opts(p)
    _out_opts(p)

    p = sub.add_parser("power-curve", help="post-hoc power against observed z")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--zmin", type=float, default=0.0)
    p.add_argument("--zmax", type=float, default=5.0)
    p.add_argument("--step", type=float, default=0.01)
    _out_opts(p)

    p = sub.add_parser("simulate-filter", help="simulate publication under the significance filter")
    p.add_argument("--effect", type=float, required=True)
    p.add_argument("--sd", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sims", type=int, default=100_000)
    _test_opts(p)
    _out_opts(p)

    p = sub.add_parser("meta", help="Bayesian random-effects meta-analysis")
    _studies_opt(p)
    _mcmc_opts(p)
    _out_opts(p)

    p = sub.add_parser("power-dist", help="Monte Carlo power distributions")
    _dist_opts(p, (20, 30, 40, 50))
    _studies_opt(p)
    _mcmc_opts(p)
    p.add_argument("--alpha", type=float, default=0.05)
    _out_opts(p)

    p = sub.add_parser("pii", help="Power Inflation Index intervals per study")
    _dist_opts(p, (20, 30, 40))
    _studies_opt(p)
    _mcmc_opts(p)
    p.add_argument("--alpha", type=float, default=0.05)
    _out_opts(p)

    p = sub.add_parser("report", help="full case-study report")
    _dist_opts(p, (20, 30, 40, 50))
    p.add_argument("--pii-n", type=int, nargs="+", default=[20, 30, 40])
    _studies_opt(p)
    _mcmc_opts(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--filter-sims", type=int, default=100_000)
    _out_opts(p)
    return parser


# ---- helpers --------------------------------------------------------------

def _spec(args, family_t=Family.PAIRED_T) -> TestSpec:
    family = Family.Z if getattr(args, "family", "t") == "z" else family_t
    return TestSpec(family=family, sidedness=_SIDED[getattr(args, "sided", "two")],
                    alpha=args.alpha, mu0=getattr(args, "mu0", 0.0))


def _config(args) -> dict:
    """Result-determining inputs; excludes --out and --workers."""
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in ("out", "workers", "func"):
            continue
        if isinstance(v, Path):
            data = v.read_bytes() if v.exists() else b""
            cfg[k] = {"name": v.name, "sha256": hashlib.sha256(data).hexdigest()}
        else:
            cfg[k] = v
    if "studies" in cfg and cfg["studies"] is None:
        cfg["studies"] = {"name": "bundled:table1_reconstructed.csv",
                          "sha256": hashlib.sha256(bundled_table_text().encode()).hexdigest()}
    return cfg


def _table(args):
    return load_bundled_table() if args.studies is None else parse_studies_csv(args.studies)


def _precision(args):
    if args.gamma_preset == "paper-rounded":
        return PRINTED_ROUNDED_GAMMA
    return gamma_from_moments(args.precision_mean, args.precision_sd)


def _mcmc(args, seed):
    return McmcConfig(chains=args.chains, iterations=args.iters, warmup=args.warmup, seed=seed)


def _fit(args, table):
    seed = seeding.derive_seed(args.seed, "meta")
    spec = MetaModelSpec(mu_i_cauchy=not args.drop_mu_i_cauchy)
    return fit_meta(table.rows, spec, _mcmc(args, seed), workers=args.workers)


def _meta_summary(draws, table) -> tuple[dict, list[list]]:
    sums = summarize(draws)
    out = {"provenance": table.provenance, "chains": draws.n_chains,
           "draws_per_chain": draws.n_draws, "parameters": {}}
    hist = []
    for name, s in sums.items():
        d = s.to_dict()
        hist += histogram_rows(name, d.pop("hist_edges"), d.pop("hist_counts"))
        if draws.n_chains >= 2:
            d["rhat"] = rhat(draws, name)
        d["ess"] = effective_sample_size(draws, name)
        out["parameters"][name] = d
    out["study_ids"] = draws.study_ids
    out["acceptance"] = {b: float(np.nanmean(v)) for b, v in draws.acceptance.items()
                         if not np.all(np.isnan(v))}
    return out, hist


def _effect_draws(args, draws, total):
    pooled = draws.mu.ravel()
    rng = seeding.stream(seeding.derive_seed(args.seed, "resample"))
    return pooled[rng.integers(0, pooled.size, total)]


def _power_dists(args, spec, sizes, draws=None):
    seed = seeding.derive_seed(args.seed, "power-dist")
    precision = _precision(args)
    dists = {}
    if args.effect_source == "posterior-draws":
        effects = _effect_draws(args, draws, args.draws)
        for n in sizes:
            dists[n] = power_distribution_from_draws(effects, precision, n, spec, seed, args.workers)
    else:
        for n in sizes:
            dists[n] = sample_power_distribution(args.effect_mean, args.effect_sd, precision, n,
                                                 args.draws, spec, seed, args.workers)
    return dists, precision


def _dist_outputs(dists, precision):
    summary = {"precision_gamma": {"shape": precision.shape, "rate": precision.rate},
               "by_n": {str(n): d.to_dict() for n, d in dists.items()}}
    rows = []
    for n, d in dists.items():
        rows += histogram_rows(n, d.hist_edges, d.hist_counts)
    return summary, rows


def _pii_outputs(table, dists, spec, sizes):
    powers = {r.study_id: study_power_estimate(r, spec) for r in table.rows}
    rows, summary = [], {}
    for n in sizes:
        for r in table.rows:
            pii = pii_distribution(powers[r.study_id], dists[n], study_id=r.study_id)
            printed = reference.PRINTED_PII.get(n, {}).get(r.study_id) if table.provenance == "reconstructed_table1" else None
            rows.append([r.study_id, n, pii.study_power, pii.ci_2_5, pii.ci_97_5, pii.mean_ratio,
                         pii.n_excluded, printed[0] if printed else None, printed[1] if printed else None])
            summary.setdefault(str(n), {})[r.study_id] = {"ci_2_5": pii.ci_2_5, "ci_97_5": pii.ci_97_5,
                                                         "mean_ratio": pii.mean_ratio}
    header = ["study_id", "n", "study_power", "ci_2_5", "ci_97_5", "mean_ratio", "n_excluded",
              "printed_ci_2_5", "printed_ci_97_5"]
    return powers, summary, (header, rows)


def _curve(alpha, zmin=0.0, zmax=5.0, step=0.01):
    if not step > 0 or zmax < zmin:
        raise DomainError("need step > 0 and zmax >= zmin")
    k = int(math.floor((zmax - zmin) / step + 1e-9))
    grid = [round(zmin + i * step, 12) for i in range(k + 1)]
    z_alpha = std_normal_quantile(1.0 - alpha) if 0 < alpha < 1 else None
    if z_alpha is not None and zmin <= z_alpha <= zmax and z_alpha not in grid:
        grid = sorted(grid + [z_alpha])
    curve = power_curve(alpha, grid)
    return curve, z_alpha


# ---- subcommands ----------------------------------------------------------

def cmd_ttest(args):
    spec = _spec(args)
    if args.diffs is not None:
        try:
            diffs = [float(v) for v in args.diffs.split(",") if v.strip()]
        except ValueError:
            raise DomainError("--diffs must be comma-separated numbers") from None
    else:
        diffs = [float(line) for line in args.diffs_file.read_text().split() if line.strip()]
    res = paired_t_test(diffs, spec)
    summary = {"t": res.t_stat, "df": res.df, "effect": res.effect, "se": res.se, "sd": res.sd,
               "n": res.n, "p_value": res.p_value, "sidedness": spec.sidedness.value,
               "family": spec.family.value}
    return Results("ttest", _config(args), args.seed, summary), dumps_json(summary)


def cmd_power(args):
    spec = _spec(args, family_t=Family.ONE_SAMPLE_T)
    power = true_power(EffectScenario(args.effect, args.sd, args.n), spec)
    summary = {"power": power, "family": spec.family.value, "sidedness": spec.sidedness.value}
    return Results("power", _config(args), args.seed, summary), repr(power)


def cmd_power_curve(args):
    curve, z_alpha = _curve(args.alpha, args.zmin, args.zmax, args.step)
    summary = {"alpha": args.alpha, "z_alpha": z_alpha, "points": len(curve)}
    res = Results("power-curve", _config(args), args.seed, summary,
                  {"power_curve": power_curve_table(curve)})
    return res, dumps_json(summary)


def _filter_summary(args, effect, sd, n, sims, spec, label):
    cfg = FilterSimConfig(EffectScenario(effect, sd, n), spec, sims, seeding.derive_seed(args.seed, label))
    rep = simulate_filter(cfg, workers=args.workers).to_dict()
    rep["pii_lower_bound"] = pii_lower_bound(rep["true_power"], spec.alpha, spec)
    return rep


def cmd_simulate_filter(args):
    spec = _spec(args)
    summary = _filter_summary(args, args.effect, args.sd, args.n, args.sims, spec, "simulate-filter")
    return Results("simulate-filter", _config(args), args.seed, summary), dumps_json(summary)


def cmd_meta(args):
    table = _table(args)
    draws = _fit(args, table)
    summary, hist = _meta_summary(draws, table)
    res = Results("meta", _config(args), args.seed, summary,
                  {"posterior_hist": (["param", "bin_lo", "bin_hi", "count"], hist)})
    return res, dumps_json({k: summary["parameters"][k] for k in ("mu", "tau")})


def _maybe_fit(args):
    if args.effect_source != "posterior-draws":
        return None, None
    table = _table(args)
    return table, _fit(args, table)


def cmd_power_dist(args):
    spec = TestSpec(Family.PAIRED_T, Sidedness.TWO_SIDED, args.alpha)
    _, draws = _maybe_fit(args)
    dists, precision = _power_dists(args, spec, args.sizes, draws)
    summary, rows = _dist_outputs(dists, precision)
    res = Results("power-dist", _config(args), args.seed, summary,
                  {"power_hist": (["n", "bin_lo", "bin_hi", "count"], rows)})
    return res, dumps_json({n: {k: v for k, v in d.items() if k != "power_samples"}
                            for n, d in summary["by_n"].items()})


def cmd_pii(args):
    spec = TestSpec(Family.PAIRED_T, Sidedness.TWO_SIDED, args.alpha)
    table = _table(args)
    draws = _fit(args, table) if args.effect_source == "posterior-draws" else None
    dists, _ = _power_dists(args, spec, args.sizes, draws)
    _, summary, pii_table = _pii_outputs(table, dists, spec, args.sizes)
    res = Results("pii", _config(args), args.seed, {"pii": summary}, {"pii_intervals": pii_table})
    return res, dumps_json(summary)


def cmd_report(args):
    spec = TestSpec(Family.PAIRED_T, Sidedness.TWO_SIDED, args.alpha)
    table = _table(args)
    draws = _fit(args, table)
    meta, post_hist = _meta_summary(draws, table)
    sizes = sorted(set(args.sizes) | set(args.pii_n))
    dists, precision = _power_dists(args, spec, sizes, draws)
    dist_summary, power_hist = _dist_outputs({n: dists[n] for n in args.sizes}, precision)
    powers, pii_summary, pii_table = _pii_outputs(table, dists, spec, args.pii_n)

    reconstructed = table.provenance == "reconstructed_table1"
    t1_rows = [[r.study_id, r.t_stat, r.effect, r.n, r.se, r.sd, r.p_value, powers[r.study_id],
                reference.PRINTED_POWER.get(r.study_id) if reconstructed else None, table.provenance]
               for r in table.rows]
    t1_header = ["study_id", "t", "d", "n", "se", "s", "pval", "power", "printed_power", "provenance"]

    # the single-study scenario: true effect 0.1, sd 1, n 36, one-sided
    demo_spec = TestSpec(Family.PAIRED_T, Sidedness.GREATER, args.alpha)
    demo = _filter_summary(args, 0.1, 1.0, 36, args.filter_sims, demo_spec, "report-filter")
    curve, z_alpha = _curve(args.alpha)

    summary = {
        "provenance": table.provenance,
        "label": "reconstructed" if reconstructed else "user data",
        "meta": meta,
        "power_distributions": dist_summary,
        "pii": pii_summary,
        "study_power": powers,
        "filter_demo": demo,
        "z_alpha": z_alpha,
    }
    tables = {
        "table1": (t1_header, t1_rows),
        "posterior_hist": (["param", "bin_lo", "bin_hi", "count"], post_hist),
        "power_hist": (["n", "bin_lo", "bin_hi", "count"], power_hist),
        "pii_intervals": pii_table,
        "power_curve": power_curve_table(curve),
    }
    res = Results("report", _config(args), args.seed, summary, tables)
    mu = meta["parameters"]["mu"]
    brief = {"mu_mean": mu["mean"], "mu_ci": [mu["q2_5"], mu["q97_5"]],
             "mean_power": {n: d["mean_power"] for n, d in dist_summary["by_n"].items()}}
    return res, dumps_json(brief)


HANDLERS = {
    "ttest": cmd_ttest,
    "power": cmd_power,
    "power-curve": cmd_power_curve,
    "simulate-filter": cmd_simulate_filter,
    "meta": cmd_meta,
    "power-dist": cmd_power_dist,
    "pii": cmd_pii,
    "report": cmd_report,
}


def run_subcommand(name: str, flags: list[str]) -> int:
    return main([name, *flags])


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "workers", 1) < 1:
        print("sigfilter: error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        results, text = HANDLERS[args.subcommand](args)
        if args.out is not None:
            emit_report(results, args.out)
    except ParseError as exc:
        print(f"sigfilter: error: {exc}", file=sys.stderr)
        return 1
    except DomainError as exc:
        print(f"sigfilter: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"sigfilter: I/O error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"sigfilter: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
