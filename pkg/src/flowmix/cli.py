"""Command-line front end: ingest | train | predict | evaluate | simulate | select-k.

Exit codes: 0 success, 2 configuration/usage error, 3 ingestion error,
4 fit error, 5 prediction error.  All randomness derives from ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifact import load_artifact, save_artifact
from .classify import classify_partial
from .config import PipelineConfig
from .dataio import (
    classification_error_csv,
    cluster_count_csv,
    method_table_csv,
    posterior_trace_csv,
    prediction_csv,
    read_curves_csv,
    write_curves_csv,
)
from .errors import (
    ConfigurationError,
    FitError,
    FlowmixError,
    IngestionError,
    PredictionError,
)
from .evaluate import average_tables, compare_methods
from .grids import SampledCurve, TimeGrid
from .pipeline import fit_mixture
from .predict import bootstrap_interval, predict_fpcp, predict_mixture
from .simulate import default_config, run_study

EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_FIT = 4
EXIT_PREDICT = 5


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as handle:
            config = PipelineConfig.from_dict(json.load(handle))
    else:
        config = PipelineConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "jobs", None) is not None:
        config.jobs = args.jobs
    return config


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_ingest(args) -> int:
    report = read_curves_csv(args.data)
    print(f"loaded {report.n_loaded} curves; rejected {len(report.rejected)} days")
    for day, reason in sorted(report.rejected.items()):
        print(f"  rejected {day}: {reason}")
    if args.out:
        out = _out_dir(args)
        write_curves_csv(out / "curves.csv", report.curves)
        print(f"wrote {out / 'curves.csv'}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    if args.k is not None:
        config.n_clusters = None if args.k == "auto" else int(args.k)
    report = read_curves_csv(args.data)
    if not report.curves:
        raise IngestionError("no curves loaded from the training data")
    pipeline = fit_mixture(report.curves, config)
    out = _out_dir(args)
    artifact_path = out / "model.json"
    save_artifact(artifact_path, pipeline.mixture,
                  metadata={"seed": config.seed, "n_curves": len(report.curves)})
    print(f"fitted {pipeline.mixture.n_clusters} clusters "
          f"({pipeline.clustering.iterations} iterations, "
          f"converged={pipeline.clustering.converged})")
    if pipeline.k_records is not None:
        (out / "cluster_count_tests.csv").write_text(
            cluster_count_csv(pipeline.k_records), encoding="utf-8")
        print(f"wrote {out / 'cluster_count_tests.csv'}")
    print(f"wrote {artifact_path}")
    return 0


def _partial_from_csv(path, mixture, tau, omega):
    report = read_curves_csv(path)
    if not report.curves:
        raise IngestionError("no curves loaded from the partial-curve data")
    if len(report.curves) > 1:
        raise ConfigurationError(
            "prediction expects exactly one day in the partial CSV"
        )
    curve = report.curves[0]
    pts = mixture.grid.points
    start = pts[0] if omega is None else max(pts[0], tau - omega)
    want = pts[(pts >= start - 1e-9) & (pts <= tau + 1e-9)]
    have = {round(float(t), 9): v for t, v in zip(curve.grid.points, curve.values)}
    missing = [t for t in want if round(float(t), 9) not in have]
    if missing:
        raise PredictionError(
            f"partial curve misses {len(missing)} grid cells before tau={tau}"
        )
    values = np.array([have[round(float(t), 9)] for t in want])
    return SampledCurve(TimeGrid(want, domain_end=mixture.grid.domain_end),
                        values, id=curve.id)


def cmd_predict(args) -> int:
    mixture = load_artifact(args.model)
    tau = args.tau
    if tau is None:
        raise ConfigurationError("--tau is required for prediction")
    partial = _partial_from_csv(args.data, mixture, tau, args.omega)
    if args.mode == "fpcp":
        prediction = predict_fpcp(partial, mixture, tau, mode="soft")
    else:
        prediction = predict_mixture(partial, mixture, tau, mode=args.mode)
    if args.bands is not None:
        if not args.train:
            raise ConfigurationError(
                "--bands needs --train (training curves are not stored in "
                "the model artifact)"
            )
        train_report = read_curves_csv(args.train)
        lower, upper = bootstrap_interval(
            partial, mixture, train_report.curves, tau,
            b=mixture.config.band_replicates, level=args.bands,
            mode="soft" if args.mode == "fpcp" else args.mode,
            seed=mixture.config.seed if args.seed is None else args.seed,
        )
        prediction.lower = lower.values
        prediction.upper = upper.values
        prediction.band_level = args.bands
    out = _out_dir(args)
    (out / "prediction.csv").write_text(prediction_csv(prediction),
                                        encoding="utf-8")
    taus = [t for t in mixture.tau_grid if t <= tau + 1e-9]
    posteriors = []
    for t in taus:
        pts = mixture.grid.points
        idx = pts <= t + 1e-9
        sub_curve_pts = partial.grid.points
        mask = sub_curve_pts <= t + 1e-9
        if np.count_nonzero(mask) < 2:
            continue
        piece = SampledCurve(
            TimeGrid(sub_curve_pts[mask], domain_end=mixture.grid.domain_end),
            partial.values[mask],
        )
        posteriors.append(classify_partial(piece, mixture, t))
    (out / "posterior_trace.csv").write_text(
        posterior_trace_csv(taus[: len(posteriors)], posteriors), encoding="utf-8")
    print(f"wrote {out / 'prediction.csv'} and {out / 'posterior_trace.csv'}")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    if args.kappa:
        config.kappas = tuple(None if k == "kappa*" else float(k)
                              for k in args.kappa.split(","))
    if args.omega:
        config.omegas = tuple(None if o == "omega*" else float(o)
                              for o in args.omega.split(","))
    train_report = read_curves_csv(args.train)
    test_report = read_curves_csv(args.data)
    pipeline = None
    if args.model:
        from .clustering import ClusteringResult, Membership
        from .grids import curve_matrix
        from .pipeline import TrainedPipeline
        from .predict import _training_assignments

        mixture = load_artifact(args.model)
        _, ymat = curve_matrix(train_report.curves)
        labels = _training_assignments(mixture, ymat)
        clustering = ClusteringResult(
            models=mixture.clusters, membership=Membership(labels),
            iterations=0, converged=True,
            distance_matrix=np.ones((ymat.shape[0], mixture.n_clusters)),
            gamma=mixture.gamma, curves=train_report.curves,
        )
        pipeline = TrainedPipeline(mixture=mixture, clustering=clustering)
    table = compare_methods(train_report.curves, test_report.curves, config,
                            pipeline=pipeline)
    out = _out_dir(args)
    (out / "method_table.csv").write_text(method_table_csv(table),
                                          encoding="utf-8")
    print(f"wrote {out / 'method_table.csv'}")
    return 0


def cmd_simulate(args) -> int:
    config = _load_config(args)
    sim = default_config(replicates=args.replicates, seed=config.seed)
    study = run_study(
        sim, config,
        evaluate_methods=not args.no_methods,
        method_omegas=list(config.omegas),
        method_kappas=list(config.kappas),
        jobs=config.jobs,
    )
    out = _out_dir(args)
    means, ses = study.classification_error_curve()
    (out / "classification_error.csv").write_text(
        classification_error_csv(study.tau_eval, means, ses), encoding="utf-8")
    written = [out / "classification_error.csv"]
    if not args.no_methods:
        tables = [o.method_table for o in study.completed if o.method_table]
        if tables:
            (out / "method_table.csv").write_text(
                method_table_csv(average_tables(tables)), encoding="utf-8")
            written.append(out / "method_table.csv")
    metadata = {
        "seed": config.seed,
        "replicates": args.replicates,
        "failures": sum(o.failed for o in study.outcomes),
        "mean_clustering_error": study.mean_clustering_error,
        "config": config.to_dict(),
    }
    (out / "run_metadata.json").write_text(
        json.dumps(metadata, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    written.append(out / "run_metadata.json")
    print(f"mean clustering error: {study.mean_clustering_error:.4f}")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_select_k(args) -> int:
    from .clustering import select_num_clusters

    config = _load_config(args)
    report = read_curves_csv(args.data)
    if not report.curves:
        raise IngestionError("no curves loaded")
    k, records = select_num_clusters(
        report.curves, args.kmax, b=args.bootstrap, level=args.level,
        seed=config.seed, fve_threshold=config.fve_threshold,
        ridge=config.ridge, folds=config.cv_folds,
    )
    out = _out_dir(args)
    (out / "cluster_count_tests.csv").write_text(cluster_count_csv(records),
                                                 encoding="utf-8")
    print(f"selected K = {k}" if k > 1 else "no significant split (K = 1)")
    print(f"wrote {out / 'cluster_count_tests.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowmix",
        description="Daily-trajectory pattern learning and dynamic prediction",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="pipeline configuration JSON")
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--jobs", type=int, help="worker count for studies")
        p.add_argument("--out", help="output directory (default: current)")

    p = sub.add_parser("ingest", help="validate a curve CSV")
    p.add_argument("data", help="CSV with day_id,time_hours,flow_rate")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit the full pipeline")
    p.add_argument("data", help="training CSV")
    p.add_argument("--k", help="cluster count or 'auto'")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict the rest of a partial day")
    p.add_argument("model", help="model artifact from train")
    p.add_argument("data", help="partial-curve CSV (one day)")
    p.add_argument("--tau", type=float, help="current time (hours)")
    p.add_argument("--omega", type=float, help="observed-window length")
    p.add_argument("--mode", choices=["soft", "hard", "fpcp"], default="soft")
    p.add_argument("--bands", type=float,
                   help="bootstrap band level, e.g. 0.95 (needs --train)")
    p.add_argument("--train", help="training CSV (for --bands)")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="method-comparison table on test data")
    p.add_argument("data", help="test CSV")
    p.add_argument("--train", required=True, help="training CSV")
    p.add_argument("--model", help="model artifact (refit from train if absent)")
    p.add_argument("--kappa", help="comma list, e.g. 1,4,8,kappa*")
    p.add_argument("--omega", help="comma list, e.g. 1,2,omega*")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="replicate study on synthetic data")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--no-methods", action="store_true",
                   help="skip the method-comparison table")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("select-k", help="forward cluster-count tests")
    p.add_argument("data", help="training CSV")
    p.add_argument("--kmax", type=int, default=4)
    p.add_argument("--bootstrap", type=int, default=200)
    p.add_argument("--level", type=float, default=0.05)
    common(p)
    p.set_defaults(func=cmd_select_k)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (PredictionError, ValueError) as exc:
        print(f"prediction error: {exc}", file=sys.stderr)
        return EXIT_PREDICT
    except FlowmixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
