"""Command-line surface: batch analyses driven by a run manifest.

Subcommands: ingest | fit | blind | inject | sweep | calibrate | synth.
Every command reads one manifest, writes its outputs into the manifest's
output directory (each file stamped with the manifest hash), and prints a
short summary. Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import anomaly, charts, scenarios
from .anomaly import McConfig, fit_width, residuals, score_counties, size_correlation
from .data_model import generate_synthetic, standardize
from .elastic_net import (
    cross_validate,
    cv_result_to_dict,
    fit,
    model_to_dict,
)
from .errors import ConfigError, DataError, NumericalError
from .ingest import (
    CleaningReport,
    assemble_dataset,
    clean_features,
    load_dataset,
    parse_election,
    parse_table,
    save_dataset,
)
from .manifest import RunManifest, load_manifest
from .scenarios import (
    BlindSpec,
    Direction,
    InjectionSpec,
    counterfactual_winner,
    prepare_blind_context,
    run_injection_experiment,
    score_eval_set,
    state_summary,
    sweep,
    sweep_summary,
    write_sweep_csv,
)


def _write_json(doc: dict, path: Path, man: RunManifest) -> None:
    doc = {"manifest_sha256": man.sha256, **doc}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _comment(man: RunManifest) -> str:
    return f"manifest_sha256={man.sha256}"


def _out_dir(man: RunManifest) -> Path:
    man.out_dir.mkdir(parents=True, exist_ok=True)
    return man.out_dir


def _load(man: RunManifest):
    return load_dataset(man.require("dataset_path", "[data] dataset = <path to dataset.csv>"))


def _blind_spec(man: RunManifest) -> BlindSpec:
    return BlindSpec(
        train_states=frozenset(man.require("train_states", "[blind] train_states")),
        eval_states=frozenset(man.require("eval_states", "[blind] eval_states")),
        cv=man.cv,
    )


def _fit_all(dataset, man: RunManifest, threads: int):
    """CV, final fit, and self-scoring over every county."""
    y = dataset.shares()
    cv = cross_validate(
        dataset.X,
        y,
        l1_grid=man.cv.l1_grid,
        k=man.cv.folds,
        seed=man.cv.seed,
        n_alphas=man.cv.n_alphas,
        eps=man.cv.eps,
        tol=man.cv.tol,
        max_iter=man.cv.max_iter,
        threads=threads,
    )
    Xs, params = standardize(dataset.X, dataset.feature_names)
    model = fit(Xs, y, cv.selected, params, tol=man.cv.tol, max_iter=man.cv.max_iter)
    return cv, model


def _write_residual_join(resid, path: Path, width, n, man: RunManifest) -> None:
    """FIPS-keyed export for choropleth tools, full precision."""
    import csv

    rows = sorted(
        zip(resid.keys, resid.residual),
        key=lambda kv: kv[0].fips,
    )
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_comment(man)}\n")
        writer = csv.writer(fh)
        writer.writerow(["fips", "residual", "local_sigma", "global_sigma"])
        for key, r in rows:
            z = anomaly.local_significance(float(r), width)
            g = anomaly.global_significance_analytic(z, n)
            writer.writerow([key.fips, repr(float(r)), repr(z), repr(g)])


def _print_top(scores, top_n: int = 10) -> None:
    rows = anomaly.rank_anomalies(scores, top_n)
    print(f"{'fips':>5}  {'county':<28} {'st':<2} {'actual':>7} {'pred':>7} {'local':>6} {'global':>6}")
    for r in rows:
        print(
            f"{r['fips']:>5}  {r['county'][:28]:<28} {r['state']:<2} "
            f"{r['actual_share']:>7} {r['predicted_share']:>7} "
            f"{r['local_sigma']:>6} {r['global_sigma']:>6}"
        )


def cmd_ingest(args) -> int:
    man = load_manifest(args.manifest, _overrides(args))
    out = _out_dir(man)
    if not man.inputs:
        raise ConfigError("manifest has no [inputs] section")
    demo_tables = []
    elections = []
    for key, path in sorted(man.inputs.items()):
        if key.startswith("dp"):
            demo_tables.append(parse_table(path, key.upper(), delimiter=man.delimiter))
        elif key.startswith("election_"):
            year = int(key.split("_", 1)[1])
            elections.append(parse_election(path, year, delimiter=man.delimiter))
        else:
            raise ConfigError(f"unrecognized input key {key!r} (want dpNN or election_YYYY)")
    if not demo_tables:
        raise ConfigError("no demographic tables among inputs")
    if not elections:
        raise ConfigError("no election files among inputs")
    features, report = clean_features(demo_tables)
    dataset, join_report = assemble_dataset(features, elections, man.target_year)
    report = report.merge(join_report)
    save_dataset(dataset, out / "dataset.csv", manifest_hash=man.sha256)
    _write_json(report.to_dict(), out / "cleaning_report.json", man)
    print(f"counties: {dataset.n}")
    print(f"features: {dataset.p}")
    print(
        "dropped columns: "
        f"{len(report.dropped_moe_columns)} margin-of-error, "
        f"{len(report.dropped_duplicate_columns)} duplicate, "
        f"{len(report.dropped_missing_columns)} missing/non-numeric"
    )
    print(f"dropped counties: {len(report.dropped_counties)}")
    print(f"wrote {out / 'dataset.csv'}")
    return 0


def cmd_synth(args) -> int:
    man = load_manifest(args.manifest, _overrides(args))
    out = _out_dir(man)
    spec = man.require("synth", "a [synth] section")
    dataset, beta = generate_synthetic(spec, target_year=man.target_year)
    save_dataset(dataset, out / "dataset.csv", manifest_hash=man.sha256)
    _write_json(
        {
            "spec": {
                "n_counties": spec.n_counties,
                "n_features": spec.n_features,
                "n_active": spec.n_active,
                "noise_sd": spec.noise_sd,
                "seed": spec.seed,
            },
            "coefficients": {
                name: float(b) for name, b in zip(dataset.feature_names, beta)
            },
        },
        out / "true_coefficients.json",
        man,
    )
    print(f"counties: {dataset.n}")
    print(f"wrote {out / 'dataset.csv'}")
    return 0


def cmd_fit(args) -> int:
    man = load_manifest(args.manifest, _overrides(args))
    out = _out_dir(man)
    dataset = _load(man)
    cv, model = _fit_all(dataset, man, args.threads)
    resid = residuals(model, dataset)
    width = fit_width(resid)
    mc = McConfig(n_counties=dataset.n, trials=man.mc_trials, seed=man.mc_seed)
    scores = score_counties(resid, width, mc=mc, threads=args.threads)

    _write_json(model_to_dict(model), out / "model.json", man)
    _write_json(cv_result_to_dict(cv), out / "cv.json", man)
    anomaly.write_ranking_csv(scores, out / "ranking.csv", comment=_comment(man))
    anomaly.write_scores_json(
        scores,
        out / "scores.json",
        meta={
            "manifest_sha256": man.sha256,
            "n_counties": dataset.n,
            "width": width.width,
            "rms_residual": resid.rms,
            "mc_trials": man.mc_trials,
            "mc_seed": man.mc_seed,
        },
    )
    _write_residual_join(resid, out / "residuals.csv", width, dataset.n, man)

    print(f"counties: {dataset.n}")
    print(f"selected: l1_ratio={cv.selected.l1_ratio} alpha={cv.selected.alpha:.6g}")
    print(f"nonzero coefficients: {model.nonzero_count} of {len(model.coefficients)}")
    print(f"rms residual: {100 * resid.rms:.2f}%")
    print(f"fitted width: {100 * width.width:.2f}%")
    try:
        corr = size_correlation(resid, dataset)
        print(f"size correlation: {corr:+.3f}")
    except NumericalError as err:
        print(f"size correlation: undefined ({err})")
    _print_top(scores)
    return 0


def cmd_blind(args) -> int:
    man = load_manifest(args.manifest, _overrides(args))
    out = _out_dir(man)
    dataset = _load(man)
    spec = _blind_spec(man)
    ctx = prepare_blind_context(dataset, spec, threads=args.threads)
    result = score_eval_set(
        ctx, dataset, mc_trials=man.mc_trials, mc_seed=man.mc_seed, threads=args.threads
    )

    _write_json(model_to_dict(result.model), out / "blind_model.json", man)
    _write_json(cv_result_to_dict(result.cv), out / "blind_cv.json", man)
    anomaly.write_ranking_csv(result.scores, out / "blind_ranking.csv", comment=_comment(man))
    anomaly.write_scores_json(
        result.scores,
        out / "blind_scores.json",
        meta={
            "manifest_sha256": man.sha256,
            "n_counties": result.residuals.n,
            "width": result.width.width,
            "rms_residual": result.residuals.rms,
            "mc_trials": man.mc_trials,
            "mc_seed": man.mc_seed,
            "train_states": sorted(spec.train_states),
            "eval_states": sorted(spec.eval_states),
        },
    )
    _write_residual_join(
        result.residuals, out / "blind_residuals.csv", result.width, result.residuals.n, man
    )

    train_resid = residuals(result.model, dataset.subset_states(spec.train_states))
    print(f"selected: l1_ratio={result.cv.selected.l1_ratio} alpha={result.cv.selected.alpha:.6g}")
    print(f"train rms residual: {100 * train_resid.rms:.2f}%")
    print(f"eval rms residual: {100 * result.residuals.rms:.2f}%")
    print(f"eval width: {100 * result.width.width:.2f}%")
    print(f"eval counties (look-elsewhere N): {result.residuals.n}")

    counterfactuals = []
    for state in sorted(spec.eval_states):
        actual = state_summary(dataset, state)
        modeled = counterfactual_winner(dataset, result.model, state)
        counterfactuals.append(
            {
                "state": state,
                "actual_winner": actual.winner,
                "actual_margin": actual.margin,
                "counterfactual_winner": modeled.winner,
                "counterfactual_margin": modeled.margin,
            }
        )
        print(
            f"counterfactual {state}: actual {actual.winner} by {actual.margin:,.0f}, "
            f"modeled {modeled.winner} by {modeled.margin:,.0f}"
        )
    _write_json({"states": counterfactuals}, out / "counterfactuals.json", man)
    _print_top(result.scores)
    return 0


def cmd_inject(args) -> int:
    man = load_manifest(args.manifest, _overrides(args))
    out = _out_dir(man)
    dataset = _load(man)
    spec = _blind_spec(man)
    inj_cfg = man.require("injection", "an [injection] section")
    inj = InjectionSpec(
        fips=inj_cfg["fips"],
        k=inj_cfg["k"],
        direction=Direction.parse(inj_cfg["direction"]),
    )
    ctx = prepare_blind_context(dataset, spec, threads=args.threads)
    baseline = score_eval_set(
        ctx, dataset, mc_trials=man.mc_trials, mc_seed=man.mc_seed, threads=args.threads
    )
    base_by_fips = {s.key.fips: (i, s) for i, s in enumerate(baseline.scores)}
    if inj.fips not in base_by_fips:
        raise ConfigError(
            f"injection county {inj.fips} is not in the evaluation set"
        )
    base_idx, base_score = base_by_fips[inj.fips]
    base_rank = base_idx + 1
    result = run_injection_experiment(
        dataset,
        spec,
        inj,
        mc_trials=man.mc_trials,
        mc_seed=man.mc_seed,
        threads=args.threads,
        context=ctx,
    )

    comparison = {
        "fips": inj.fips,
        "county": result.injected.key.name,
        "state": result.injected.key.state,
        "k": inj.k,
        "direction": inj.direction.value,
        "before": {
            "actual_share": base_score.actual,
            "residual": base_score.residual,
            "local_sigma": base_score.local_sigma,
            "global_sigma": base_score.global_sigma,
            "rank": base_rank,
        },
        "after": {
            "actual_share": result.injected.actual,
            "residual": result.injected.residual,
            "local_sigma": result.injected.local_sigma,
            "global_sigma": result.injected.global_sigma,
            "rank": result.rank,
        },
    }
    _write_json(comparison, out / "comparison.json", man)
    anomaly.write_ranking_csv(
        result.blind.scores, out / "injected_ranking.csv", comment=_comment(man)
    )
    anomaly.write_scores_json(
        result.blind.scores,
        out / "injected_scores.json",
        meta={
            "manifest_sha256": man.sha256,
            "n_counties": result.blind.residuals.n,
            "width": result.blind.width.width,
            "injection": {"fips": inj.fips, "k": inj.k, "direction": inj.direction.value},
        },
    )

    b, a = comparison["before"], comparison["after"]
    print(f"injected: {inj.k} flips {inj.direction.value} in {inj.fips} ({result.injected.key.name})")
    print(
        f"share: {100 * b['actual_share']:.1f}% -> {100 * a['actual_share']:.1f}% "
        f"(change {100 * (a['actual_share'] - b['actual_share']):+.1f} pts)"
    )
    print(f"residual: {100 * b['residual']:+.1f} -> {100 * a['residual']:+.1f} pts")
    print(f"local sigma: {b['local_sigma']:+.1f} -> {a['local_sigma']:+.1f}")
    print(f"global sigma: {b['global_sigma']:.1f} -> {a['global_sigma']:.1f}")
    print(f"rank: {b['rank']} -> {a['rank']}")
    return 0


def cmd_sweep(args) -> int:
    man = load_manifest(args.manifest, _overrides(args))
    out = _out_dir(man)
    dataset = _load(man)
    spec = _blind_spec(man)
    states = man.require("sweep_states", "[sweep] states")
    ctx = prepare_blind_context(dataset, spec, threads=args.threads)
    all_curves = []
    for state in states:
        curves = sweep(
            dataset, spec, state, k_step=man.sweep_k_step, threads=args.threads, context=ctx
        )
        if not curves:
            print(f"{state}: no county is large enough to flip the state")
            continue
        all_curves.extend(curves)
        write_sweep_csv(curves, out / f"sweep_{state}.csv", comment=_comment(man))
        charts.write_sweep_chart(curves, state, out / f"sweep_{state}.svg", comment=_comment(man))
    summary = sweep_summary(all_curves)
    _write_json({"states": summary}, out / "sweep_summary.json", man)
    for state in states:
        if state not in summary:
            continue
        entry = summary[state]
        names = ", ".join(entry["unconstrained_counties"]) or "none"
        print(
            f"{state}: margin {entry['margin']:,}, curves {len(entry['curves'])}, "
            f"unconstrained counties: {entry['unconstrained_count']} ({names})"
        )
    return 0


def cmd_calibrate(args) -> int:
    man = load_manifest(args.manifest, _overrides(args))
    out = _out_dir(man)
    rows = []
    any_disagree = False
    for n in man.calibrate_n:
        cfg = McConfig(n_counties=n, trials=man.mc_trials, seed=man.mc_seed)
        for z in man.calibrate_z:
            analytic = anomaly.global_significance_analytic(z, n)
            est = anomaly.global_significance_mc(z, cfg, threads=args.threads)
            if est.bounded:
                agrees = True  # MC can only bound; analytic value stands
            else:
                agrees = abs(est.sigma - analytic) <= 3.0 * est.sigma_stderr
            any_disagree |= not agrees
            rows.append(
                {
                    "z": z,
                    "n": n,
                    "p_local": anomaly.two_sided_p(z),
                    "analytic_sigma": analytic,
                    "mc_p_global": est.p_global,
                    "mc_sigma": est.sigma,
                    "mc_p_stderr": est.stderr,
                    "mc_sigma_stderr": est.sigma_stderr,
                    "bounded": est.bounded,
                    "agrees": agrees,
                }
            )

    import csv

    with open(out / "calibration.csv", "w", newline="") as fh:
        fh.write(f"# {_comment(man)}\n")
        writer = csv.writer(fh)
        writer.writerow(list(rows[0].keys()))
        for r in rows:
            writer.writerow(
                [repr(v) if isinstance(v, float) else str(v) for v in r.values()]
            )

    p4 = anomaly.two_sided_p(4.0)
    print(f"4 sigma global threshold: p = {p4:.3g} (about 1 in {round(1 / p4):,})")
    print(f"{'z':>5} {'N':>6} {'analytic':>9} {'mc':>9} {'stderr':>9}  flag")
    for r in rows:
        mc_txt = "bounded" if r["bounded"] else f"{r['mc_sigma']:.3f}"
        stderr_txt = "-" if r["bounded"] else f"{r['mc_sigma_stderr']:.4f}"
        flag = "ok" if r["agrees"] else "DISAGREES"
        print(
            f"{r['z']:>5.2f} {r['n']:>6} {r['analytic_sigma']:>9.3f} "
            f"{mc_txt:>9} {stderr_txt:>9}  {flag}"
        )
    if any_disagree:
        print("warning: MC and analytic conversions disagree beyond 3 standard errors")
    print(f"wrote {out / 'calibration.csv'}")
    return 0


def _overrides(args) -> dict:
    return {"trials": args.trials, "seed": args.seed, "out": args.out}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tamperscan",
        description="Detect geographically localized vote tampering in county-level results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "ingest": (cmd_ingest, "parse and clean input files into the canonical dataset"),
        "fit": (cmd_fit, "global fit: CV elastic net on all counties, score residuals"),
        "blind": (cmd_blind, "train on trusted states, score held-out states"),
        "inject": (cmd_inject, "flip votes in one county and rerun the blinded analysis"),
        "sweep": (cmd_sweep, "detection curves for every county able to flip its state"),
        "calibrate": (cmd_calibrate, "cross-check MC and analytic global significance"),
        "synth": (cmd_synth, "generate a synthetic dataset from the [synth] section"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--manifest", required=True, help="path to the run manifest (INI)")
        p.add_argument("--out", default=None, help="override the manifest output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results identical at any count)")
        p.add_argument("--trials", type=int, default=None, help="override Monte Carlo trial count")
        p.add_argument("--seed", type=int, default=None, help="override every seed in the manifest")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
