"""
DriveLens Command Line
Subcommands for every pipeline stage, reading and writing re-loadable artifacts
"""

import argparse
import contextlib
import dataclasses
import json
import logging
import sys
import traceback
from typing import Dict, Iterator, List, Optional, Sequence, TextIO, Tuple

import pandas as pd
from dotenv import load_dotenv

from .causal import aggregate_by_trip, causal_study, causal_table
from .config import DriveLensConfig, load_config
from .errors import DriveLensError, ParseError, UsageError, ValidationError
from .evaluation import TripEvaluation, evaluate_corpus, ground_truth, load_ballots, load_sentences
from .explainer import ExplanationReport
from .features import CONFOUNDER
from .pipeline import (DriveLensPipeline, RunConfig, features_frame, parallel_map, read_features,
                       response_series, score_frame, train_codebook, trip_windows, write_frame)
from .scoring import FluctuationEvent, fluctuations, get_scorer, series_from_instants
from .som import load_codebook, map_dump, quantization_error, save_codebook
from .synth import (load_labels, load_script, parse_mix, synthesize, synthesize_corpus,
                    write_corpus)
from .trip_model import load_trip, preprocess_trip, save_trip

logger = logging.getLogger("ml.cli")

EXIT_OK = 0
EXIT_INTERNAL = 3


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@contextlib.contextmanager
def open_output(path: str) -> Iterator[TextIO]:
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as f:
            yield f


def read_lines(path: str) -> List[str]:
    if path == "-":
        return sys.stdin.read().splitlines()
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read().splitlines()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e


def read_reports(paths: Sequence[str]) -> List[ExplanationReport]:
    reports = []
    for path in paths:
        for lineno, line in enumerate(read_lines(path), start=1):
            if not line.strip():
                continue
            try:
                reports.append(ExplanationReport.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ParseError(f"{path}:{lineno}: not a report record: {e}") from e
    return reports


def run_config(args, config: DriveLensConfig, **overrides) -> RunConfig:
    return RunConfig(config=config, audit_log=args.audit_log, feature_set=args.feature_set,
                     jobs=args.jobs, **overrides)


def _series(group, scorer):
    windows, instants, _ = group
    return series_from_instants(instants, windows, scorer)


# ========================
# Subcommands
# ========================

def cmd_ingest(args, config: DriveLensConfig) -> int:
    rc = run_config(args, config)
    trip = load_trip(args.trip)
    DriveLensPipeline(rc).check(trip)
    if args.preprocess:
        trip = preprocess_trip(trip, config.imu_rate_hz, config.lowpass_cutoff_hz)
    save_trip(trip, args.out)
    return EXIT_OK


def cmd_synth(args, config: DriveLensConfig) -> int:
    delta = args.delta or config.delta_seconds
    if args.script:
        labeled = synthesize(load_script(args.script), delta)
        save_trip(labeled.trip, args.out)
        if args.labels:
            with open_output(args.labels) as f:
                for record in labeled.label_records():
                    f.write(json.dumps(record, sort_keys=True) + "\n")
        return EXIT_OK

    if not args.corpus or not args.mix or not args.out_dir:
        raise UsageError("synth needs --script, or --corpus with --mix and --out-dir")
    corpus = synthesize_corpus(args.corpus, parse_mix(args.mix),
                               seed=config.seed if args.seed is None else args.seed, delta=delta,
                               n_windows=args.windows, imu_sigma=args.imu_sigma,
                               det_jitter=args.det_jitter)
    write_corpus(corpus, args.out_dir)
    return EXIT_OK


def cmd_features(args, config: DriveLensConfig) -> int:
    rc = run_config(args, config, trip_paths=tuple(args.trips), delta=args.delta)
    rc.validate()
    pipeline = DriveLensPipeline(rc)
    analyses = parallel_map(lambda path: pipeline.analyze(load_trip(path)), args.trips, rc.jobs)
    frame = pd.concat([features_frame(a, rc.spec) for a in analyses], ignore_index=True)
    write_frame(frame, args.out)
    return EXIT_OK


def cmd_score(args, config: DriveLensConfig) -> int:
    rc = run_config(args, config, epsilon=args.epsilon)
    scorer = get_scorer(config.scorer, rc.spec)
    frames = []
    for trip_id, group in trip_windows(read_features(args.features), rc.spec).items():
        series = _series(group, scorer)
        frames.append(score_frame(trip_id, group[0], series, fluctuations(series, rc.epsilon)))
    write_frame(pd.concat(frames, ignore_index=True), args.out)
    return EXIT_OK


def cmd_train(args, config: DriveLensConfig) -> int:
    rc = run_config(args, config)
    som = dataclasses.replace(config.som, **{k: v for k, v in
                                             (("rows", args.rows), ("cols", args.cols)) if v is not None})
    config = dataclasses.replace(config, som=som)
    samples = [w for windows, _, _ in trip_windows(read_features(args.features), rc.spec).values()
               for w in windows]
    codebook = train_codebook(samples, config, rc.spec, args.epochs, args.seed)
    logger.info("Quantization error %.4f", quantization_error(codebook, samples))
    save_codebook(codebook, args.out)
    return EXIT_OK


def cmd_infer(args, config: DriveLensConfig) -> int:
    rc = run_config(args, config, codebook_path=args.codebook, topk=args.topk,
                    epsilon=args.epsilon, explain=False)
    rc.validate(needs_codebook=True)
    pipeline = DriveLensPipeline(rc, load_codebook(args.codebook, rc.spec))
    with open_output(args.out) as out:
        for trip_id, group in trip_windows(read_features(args.features), rc.spec).items():
            windows, _, rows = group
            series = _series(group, pipeline.scorer)
            spans = list(zip(rows["t_start"].astype(float), rows["t_end"].astype(float)))
            for report in pipeline.reports_for(trip_id, windows, fluctuations(series, rc.epsilon), spans):
                out.write(report.to_line() + "\n")
    return EXIT_OK


def cmd_explain(args, config: DriveLensConfig) -> int:
    rc = run_config(args, config, corpus_path=args.corpus, lexicon_path=args.lexicon)
    rc.validate()
    explainer = DriveLensPipeline(rc).explainer
    reports = []
    for record in read_reports([args.reports]):
        event = None
        if record.score is not None and record.baseline is not None:
            event = FluctuationEvent(record.window_index, record.score, record.baseline, record.delta)
        reports.append(explainer.explain(record.trip_id, record.window_index, record.f_gen, event,
                                         record.t_start, record.t_end))
    with open_output(args.out) as out:
        for report in reports:
            out.write(report.to_line() + "\n")
    if args.text:
        with open_output(args.text) as out:
            out.write("\n\n".join(r.to_text() for r in reports) + ("\n" if reports else ""))
    return EXIT_OK


def _mismatch_inputs(evaluations: Sequence[TripEvaluation], feature_paths: Sequence[str],
                     rc: RunConfig, scorer):
    """Per-evaluation response and feature series from the feature tables"""
    spec = rc.spec
    lookup: Dict[Tuple[str, int], Tuple[Tuple[float, ...], float]] = {}
    for trip_id, group in trip_windows(read_features(feature_paths), spec).items():
        response = response_series(_series(group, scorer))
        for w, r in zip(group[0], response):
            lookup[(trip_id, w.window_index)] = (w.values, float(r))
    missing = [(e.trip_id, e.window_index) for e in evaluations if (e.trip_id, e.window_index) not in lookup]
    if missing:
        raise ValidationError("features", f"no feature rows for evaluated windows {missing[:3]}")
    rows = [lookup[(e.trip_id, e.window_index)] for e in evaluations]
    features = {name: [values[i] for values, _ in rows] for i, name in enumerate(spec.ids)}
    covariates = {name: features[name] for name in spec.ids if spec.category_of(name) == CONFOUNDER}
    return [r for _, r in rows], features, covariates


def cmd_eval(args, config: DriveLensConfig) -> int:
    rc = run_config(args, config)
    if bool(args.ballots) == bool(args.labels):
        raise UsageError("eval needs exactly one of --ballots or --labels")
    if args.labels:
        truth = {key: frozenset(f) for key, f in load_labels(args.labels).items()}
    else:
        gt = ground_truth(load_ballots(args.ballots), config.eval.vote_threshold)
        truth = {key: g.factors for key, g in gt.items()}

    human = load_sentences(args.sentences) if args.sentences else {}

    evaluations = []
    for report in read_reports(args.reports):
        key = (report.trip_id, report.window_index)
        if key not in truth:
            logger.info("No ground truth for trip %s window %d", *key)
        evaluations.append(TripEvaluation(report.trip_id, report.window_index,
                                          truth.get(key, frozenset()), tuple(report.f_gen.ids),
                                          report.final_text, human.get(key)))

    k = args.k or config.eval.k
    if args.features:
        response, features, covariates = _mismatch_inputs(evaluations, args.features, rc,
                                                          get_scorer(config.scorer, rc.spec))
        scorecard = evaluate_corpus(evaluations, rc.spec.category_of, k, response, features, covariates)
    else:
        scorecard = evaluate_corpus(evaluations, rc.spec.category_of, k)

    write_frame(scorecard.to_frame(), args.out)
    if args.details:
        write_frame(scorecard.details, args.details)
    return EXIT_OK


def cmd_causal(args, config: DriveLensConfig) -> int:
    rc = run_config(args, config)
    spec = rc.spec
    scorer = get_scorer(config.scorer, spec)
    tables = []
    for trip_id, group in trip_windows(read_features(args.features), spec).items():
        rows = group[2][["trip_id", "window_index"] + spec.ids].copy()
        rows["response"] = response_series(_series(group, scorer))
        tables.append(rows)
    table = pd.concat(tables, ignore_index=True)
    if args.granularity == "trip":
        table = aggregate_by_trip(table, spec.ids)

    confounders = [name for name in spec.ids if spec.category_of(name) == CONFOUNDER]
    candidates = [name for name in spec.ids if name not in confounders]
    cutoff = config.causal_cutoff if args.cutoff is None else args.cutoff
    rows = causal_study(table, candidates, confounders, cutoff=cutoff, method=args.method)
    write_frame(causal_table(rows), args.out)
    return EXIT_OK


def cmd_map_dump(args, config: DriveLensConfig) -> int:
    rc = run_config(args, config)
    codebook = load_codebook(args.codebook, rc.spec)
    trips = [(trip_id, group[0]) for trip_id, group in
             trip_windows(read_features(args.features), rc.spec).items()]
    write_frame(map_dump(codebook, trips), args.out)
    return EXIT_OK


# ========================
# Parser
# ========================

def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="drivelens",
                            description="Explain driving-score fluctuations from trip sensor streams")
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--quiet", action="store_true", help="warnings and errors only")
    parser.add_argument("--jobs", type=int, default=1, help="trips processed concurrently")
    parser.add_argument("--audit-log", help="append the JSON-lines audit trail to this file")
    parser.add_argument("--feature-set", default="all", choices=["all", "maneuver", "spatial"],
                        help="feature subset for ablation runs")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("ingest", help="validate a trip file and re-emit it normalized")
    p.add_argument("trip")
    p.add_argument("--out", default="-")
    p.add_argument("--preprocess", action="store_true", help="resample and low-pass the IMU stream")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("synth", help="render a scenario script or a labeled corpus")
    p.add_argument("--script")
    p.add_argument("--out", default="-")
    p.add_argument("--labels", help="planted factors of a scripted trip")
    p.add_argument("--corpus", type=int, help="number of trips")
    p.add_argument("--mix", help="template shares, e.g. red_light_stop=0.5,weave=0.5")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--windows", type=int, default=8)
    p.add_argument("--imu-sigma", type=float, default=0.0)
    p.add_argument("--det-jitter", type=float, default=0.0)
    p.add_argument("--delta", type=float)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("features", help="trip files to a per-window feature table")
    p.add_argument("trips", nargs="+")
    p.add_argument("--out", default="-")
    p.add_argument("--delta", type=float)
    p.set_defaults(handler=cmd_features)

    p = sub.add_parser("score", help="feature table to window scores and fluctuations")
    p.add_argument("features", nargs="+")
    p.add_argument("--out", default="-")
    p.add_argument("--epsilon", type=float)
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("train", help="train a codebook on feature tables")
    p.add_argument("features", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("infer", help="generative events for fluctuation windows")
    p.add_argument("features", nargs="+")
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--topk", type=int)
    p.add_argument("--epsilon", type=float)
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("explain", help="render generative events into reports")
    p.add_argument("reports")
    p.add_argument("--out", default="-")
    p.add_argument("--text", help="also write the plain-text rendering here")
    p.add_argument("--corpus")
    p.add_argument("--lexicon")
    p.set_defaults(handler=cmd_explain)

    p = sub.add_parser("eval", help="score reports against ballots or planted labels")
    p.add_argument("reports", nargs="+")
    p.add_argument("--ballots")
    p.add_argument("--labels")
    p.add_argument("--features", nargs="+", help="feature tables for the mismatch ATE")
    p.add_argument("--sentences", help="human explanations to compare the final texts against")
    p.add_argument("--k", type=int)
    p.add_argument("--out", default="-")
    p.add_argument("--details")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("analyze", help="corpus-level analyses")
    analyses = p.add_subparsers(dest="analysis", metavar="ANALYSIS")
    c = analyses.add_parser("causal", help="rank-correlation screening and matched-pair ATE")
    c.add_argument("features", nargs="+")
    c.add_argument("--granularity", choices=["window", "trip"], default="window")
    c.add_argument("--cutoff", type=float)
    c.add_argument("--method", choices=["kendall", "spearman"], default="kendall",
                   help="rank correlation used for screening")
    c.add_argument("--out", default="-")
    c.set_defaults(handler=cmd_causal)

    p = sub.add_parser("map-dump", help="neuron assignment of every window")
    p.add_argument("features", nargs="+")
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(handler=cmd_map_dump)
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return UsageError.exit_code

    try:
        args = parser.parse_args(argv)
        if getattr(args, "handler", None) is None:
            parser.print_usage(sys.stderr)
            return UsageError.exit_code
        configure_logging(args.verbose, args.quiet)
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        return args.handler(args, load_config(args.config))
    except DriveLensError as e:
        print(f"drivelens: error: {e}", file=sys.stderr)
        return e.exit_code
    except SystemExit as e:
        return int(e.code or 0)
    except Exception as e:
        logger.debug(traceback.format_exc())
        print(f"drivelens: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
