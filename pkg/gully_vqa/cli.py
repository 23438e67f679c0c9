"""Command-line entry point: ``gully-vqa <subcommand> ...``."""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

from colorama import Fore, Style, just_fix_windows_console

from . import artifacts, evaluation, mlp, qopt
from .backend import ChatClient, DecodingParams, ResponseCache, SendPolicy, make_client
from .collage import build_collage, save_png
from .config import (
    PIPELINES,
    SPLITS,
    UNPARSEABLE_POLICIES,
    RunConfig,
    configure_logging,
    environment,
    load_config_file,
    parse_model_ref,
    resolve_config,
)
from .dataset import (
    Label,
    Split,
    counts_frame,
    dataset_to_json,
    ingest,
    read_manifest_labels,
    split_counts,
)
from .errors import GullyError, InconsistentQuestionSetsError, MissingLabelError, UsageError
from .pipeline import (
    ModelHandle,
    PipelineKind,
    PipelineOptions,
    PipelineRunner,
    UnparseablePolicy,
    llm_aggregator,
    mock_script_for,
)
from .questions import BANK, PRESETS, parse_question_set, preset
from .settings import Settings
from .synthetic import make_fixture

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ok(message: str) -> None:
    print(f"{Fore.GREEN}{message}{Style.RESET_ALL}")


def _warn(message: str) -> None:
    print(f"{Fore.YELLOW}{message}{Style.RESET_ALL}")


def _fail(message: str) -> None:
    print(f"{Fore.RED}{message}{Style.RESET_ALL}", file=sys.stderr)


# CONFIGURATION
# ///////////////////////////////////////////////////////////////
_CONFIG_FLAGS = ("pipeline", "split", "questions", "backend_url", "vlm", "llm", "temperature",
                 "seed", "max_tokens", "timeout_s", "retries", "jobs", "cache_dir",
                 "unparseable", "grid", "separator", "mock_positive_bias", "mock_negative_bias")


def _config(args: argparse.Namespace) -> RunConfig:
    file = None
    if getattr(args, "config", None):
        file = load_config_file(args.config)
        file["config_file"] = str(args.config)
    flags = {name: getattr(args, name, None) for name in _CONFIG_FLAGS}
    return resolve_config(flags, environment(), file)


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("backend")
    g.add_argument("--config", help="JSON config file")
    g.add_argument("--backend-url", dest="backend_url",
                   help=f"Default model server (env {Settings.ENV_BACKEND_URL}; "
                        f"default {Settings.BACKEND_URL}; {Settings.MOCK_URL} for the mock)")
    g.add_argument("--vlm", help=f"Vision model as model[@url] (default {Settings.VLM_MODEL})")
    g.add_argument("--llm", help=f"Aggregator model as model[@url] (default {Settings.LLM_MODEL})")
    g.add_argument("--temperature", type=float)
    g.add_argument("--seed", type=int, help=f"Decoding and mock seed (default {Settings.SEED})")
    g.add_argument("--max-tokens", dest="max_tokens", type=int)
    g.add_argument("--timeout", dest="timeout_s", type=float,
                   help=f"Per-request timeout in seconds (default {Settings.TIMEOUT_S})")
    g.add_argument("--retries", type=int, help=f"Attempts per request (default {Settings.RETRIES})")
    g.add_argument("-j", "--jobs", type=int,
                   help=f"Bound on parallel locations and upstream requests (default {Settings.JOBS})")
    g.add_argument("--cache-dir", dest="cache_dir", help=f"Response cache (env {Settings.ENV_CACHE_DIR})")
    g.add_argument("--mock-positive-bias", dest="mock_positive_bias", type=float)
    g.add_argument("--mock-negative-bias", dest="mock_negative_bias", type=float)


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True, help="Dataset root directory")
    p.add_argument("--manifest", help="Manifest CSV (default <dataset>/manifest.csv)")
    p.add_argument("--images-per-location", type=int, default=Settings.IMAGES_PER_LOCATION)


def _manifest(args) -> Path:
    return Path(args.manifest) if args.manifest else Path(args.dataset) / "manifest.csv"


def _labels(embedded: Dict[str, Label], manifest: Optional[str]) -> Dict[str, Label]:
    labels = read_manifest_labels(manifest) if manifest else embedded
    if not labels:
        raise MissingLabelError("no labels: pass --manifest or use an artifact with labels")
    return labels


def _write_text(path: str, text: str, config: dict) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    if evaluation.ReportFormat.from_path(out) is not evaluation.ReportFormat.JSON:
        artifacts.write_sidecar(out, config)


# SUBCOMMANDS
# ///////////////////////////////////////////////////////////////
def cmd_ingest(args) -> int:
    d = ingest(args.dataset, _manifest(args), args.images_per_location)
    print(counts_frame(split_counts(d)).to_string(index=False))
    if args.json:
        Path(args.json).write_text(dataset_to_json(d), encoding="utf-8")
    _ok(f"Ingested {len(d)} locations")
    return EXIT_OK


def cmd_questions(args) -> int:
    if args.preset:
        qs = parse_question_set(args.preset)
        questions = qs.questions()
        print(f"{qs.name}: {qs.label()}")
    else:
        questions = BANK
    for q in questions:
        rank = f"rank {q.expert_rank:>2}" if q.expert_rank else "unranked"
        print(f"{q.index:>2}. [{rank}] {q.text}")
    if not args.preset:
        print("Presets: " + ", ".join(f"{name}={','.join(map(str, preset(name).indices))}"
                                      for name in PRESETS))
    return EXIT_OK


def cmd_collage(args) -> int:
    config = _config(args)
    d = ingest(args.dataset, _manifest(args), args.images_per_location)
    try:
        loc = d.get(args.location)
    except KeyError:
        raise UsageError(f"unknown location {args.location!r}") from None
    c = build_collage(loc, config.grid, config.separator)
    save_png(c, args.out)
    _ok(f"Collage {c.size[0]}x{c.size[1]} written to {args.out}")
    return EXIT_OK


def _clients(config: RunConfig, locations, options: PipelineOptions):
    cache = ResponseCache(config.cache_dir)
    policy = SendPolicy(config.timeout_s, config.retries, config.jobs, config.backoff_s)
    script = None
    if config.uses_mock():
        script = mock_script_for(locations, options, config.mock_positive_bias,
                                 config.mock_negative_bias)
    clients: Dict[str, ChatClient] = {}

    def handle(model: str, url: str) -> ModelHandle:
        if url not in clients:
            clients[url] = make_client(url, policy, cache, script, config.api_token)
        return ModelHandle(clients[url], model)

    return handle(*config.vlm_ref()), handle(*config.llm_ref()), clients


def _options(config: RunConfig) -> PipelineOptions:
    return PipelineOptions(
        grid=config.grid,
        separator=config.separator,
        params=DecodingParams(config.temperature, config.seed, config.max_tokens),
        unparseable=UnparseablePolicy(config.unparseable),
    )


def cmd_run(args) -> int:
    config = _config(args)
    d = ingest(args.dataset, _manifest(args), args.images_per_location)
    locations = d.split(Split(config.split))
    options = _options(config)
    kind = PipelineKind(config.pipeline)
    if args.answers_only and kind is not PipelineKind.B:
        raise UsageError("--answers-only applies to --pipeline B")
    vlm, llm, clients = _clients(config, locations, options)
    qs = parse_question_set(config.questions) if kind is PipelineKind.B else None

    runner = PipelineRunner(kind, vlm, None if kind is PipelineKind.A else llm, qs, options,
                            jobs=config.jobs, answers_only=args.answers_only,
                            progress=not args.no_progress)
    result = runner.run(locations)
    labels = {loc.id: loc.label for loc in locations}
    provenance = config.to_dict()

    if args.answers_only:
        artifacts.write_answers(args.out, result.answers, labels, provenance)
    else:
        artifacts.write_predictions(args.out, result.predictions, labels, provenance)
        if args.answers_out and result.answers:
            artifacts.write_answers(args.answers_out, result.answers, labels, provenance)

    stats = result.stats
    upstream = sum(c.upstream_calls for c in clients.values())
    hits = sum(c.cache_hits for c in clients.values())
    _ok(f"Pipeline {kind.value}: {stats.locations}/{len(locations)} locations "
        f"in {stats.elapsed:.2f}s")
    print(f"Upstream calls: {upstream}, cache hits: {hits}")
    if stats.warnings:
        _warn(f"Unparseable verdicts resolved by policy: {stats.warnings}")
    if stats.errors:
        _fail("Errors encountered:")
        for error in stats.errors:
            _fail(f"- {error}")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _config(args)
    d = ingest(args.dataset, _manifest(args), args.images_per_location)
    locations = d.split(Split(config.split))
    labels = {loc.id: loc.label for loc in locations}
    options = _options(config)
    vlm, llm, clients = _clients(config, locations, options)

    reports = []
    for name in args.presets:
        qs = parse_question_set(name)
        runner = PipelineRunner(PipelineKind.B, vlm, llm, qs, options, jobs=config.jobs,
                                progress=not args.no_progress)
        result = runner.run(locations)
        if result.stats.errors:
            _fail(f"Questions {name}: {len(result.stats.errors)} locations failed")
            for error in result.stats.errors:
                _fail(f"- {error}")
            return EXIT_RUNTIME
        meta = {"pipeline": PipelineKind.B.value, "vlm": "@".join(config.vlm_ref()),
                "llm": "@".join(config.llm_ref()), "experiment": name}
        report = evaluation.metrics(evaluation.confusion(result.predictions, labels), meta)
        logger.info(f"Questions {name}: macro F1 {report.macro_f1:.3f}")
        reports.append(report)

    fmt = evaluation.ReportFormat.from_path(args.out)
    provenance = config.to_dict()
    provenance["presets"] = list(args.presets)
    _write_text(args.out, evaluation.emit_report(reports, fmt), provenance)
    upstream = sum(c.upstream_calls for c in clients.values())
    hits = sum(c.cache_hits for c in clients.values())
    best = max(reports, key=lambda r: r.macro_f1)
    _ok(f"{len(reports)} question sets compared in {args.out}; "
        f"best {best.meta['experiment']} (macro F1 {best.macro_f1:.3f})")
    print(f"Upstream calls: {upstream}, cache hits: {hits}")
    return EXIT_OK


def _read_training_answers(args):
    answers, embedded, _ = artifacts.read_answers(args.answers)
    labels = _labels(embedded, args.manifest)
    labeled = [av for av in answers if av.location_id in labels and labels[av.location_id].is_labeled]
    if labeled and any(av.question_indices != labeled[0].question_indices for av in labeled):
        raise InconsistentQuestionSetsError("answer vectors use different question sets")
    return labeled, labels


def cmd_train_mlp(args) -> int:
    labeled, labels = _read_training_answers(args)
    hp = mlp.HyperParams(args.hidden, args.lr, args.epochs, args.seed)
    features = [mlp.encode(av) for av in labeled]
    targets = [int(labels[av.location_id] is Label.GULLY_POSITIVE) for av in labeled]
    question_indices = labeled[0].question_indices if labeled else ()
    m = mlp.train(features, targets, hp, question_indices)
    mlp.save_model(m, args.out, {"answers": str(args.answers), "hidden": hp.hidden,
                                 "lr": hp.lr, "epochs": hp.epochs, "seed": hp.seed})
    _ok(f"MLP {m.layer_sizes} trained, final loss {m.train_meta['final_loss']:.4f}")
    return EXIT_OK


def cmd_predict_mlp(args) -> int:
    m = mlp.load_model(args.model)
    answers, labels, config = artifacts.read_answers(args.answers)
    preds = mlp.predict_answers(m, answers, args.threshold, Path(args.model).name)
    provenance = dict(config)
    provenance.update({"pipeline": PipelineKind.TL.value, "llm": Path(args.model).name,
                       "model": str(args.model),
                       "threshold": args.threshold})
    artifacts.write_predictions(args.out, preds, labels or None, provenance)
    _ok(f"{len(preds)} TL predictions written to {args.out}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    answers, embedded, answer_config = artifacts.read_answers(args.answers)
    table = qopt.AnswerTable.from_answers(answers, _labels(embedded, args.manifest))
    objective = qopt.ObjectiveName(args.objective)
    strategy = qopt.Strategy(args.strategy)
    seed = args.seed if args.seed is not None else Settings.SEED
    if strategy is qopt.Strategy.EXHAUSTIVE:
        trials = [qopt.exhaustive(table, args.max_k, objective)]
    elif strategy is qopt.Strategy.GREEDY_FORWARD:
        trials = qopt.greedy_forward(table, args.max_k, objective)
    else:
        trials = qopt.random_trials(table, args.budget, seed, objective)
    best = qopt.best_of(trials)

    doc = {
        "schema_version": Settings.SCHEMA_VERSION,
        "kind": "trials",
        "config": {"answers": str(args.answers), "strategy": strategy.value,
                   "objective": objective.value, "budget": args.budget, "seed": seed,
                   "max_k": args.max_k, "answers_config": answer_config},
        "trials": [t.to_dict() for t in trials],
        "best": best.to_dict(),
    }
    if args.rescore_llm:
        config = _config(args)
        model, url = parse_model_ref(args.rescore_llm, config.backend_url)
        client = make_client(url, SendPolicy(config.timeout_s, config.retries, config.jobs,
                                             config.backoff_s), ResponseCache(config.cache_dir),
                             bearer_token=config.api_token)
        aggregate = llm_aggregator(ModelHandle(client, model), _options(config))
        doc["rescored"] = qopt.rescore(best, table, aggregate).to_dict()
    artifacts.dump_json(doc, args.out)
    _ok(f"Best subset {best.subset.label()}: {objective.value} = {best.objective_value:.3f}")
    return EXIT_OK


def _report_for(path: str, manifest: Optional[str], experiment: Optional[str]):
    preds, embedded, config = artifacts.read_predictions(path)
    cm = evaluation.confusion(preds, _labels(embedded, manifest))
    pipeline = config.get("pipeline") or (preds[0].pipeline.value if preds else "")
    meta = {
        "pipeline": pipeline,
        "vlm": str(config.get("vlm", preds[0].vlm_id if preds else "")),
        "llm": "" if pipeline == PipelineKind.A.value else str(config.get("llm", "")),
        "experiment": experiment or (config.get("questions", "") if pipeline == "B" else ""),
    }
    return evaluation.metrics(cm, meta)


def cmd_evaluate(args) -> int:
    report = _report_for(args.predictions, args.manifest, args.experiment)
    fmt = evaluation.ReportFormat.from_path(args.out)
    _write_text(args.out, evaluation.emit_report(report, fmt),
                {"predictions": str(args.predictions), "manifest": args.manifest})
    print(evaluation.emit_report(report, evaluation.ReportFormat.MARKDOWN), end="")
    if report.cm.excluded:
        _warn(f"{report.cm.excluded} unlabeled locations excluded")
    _ok(f"Macro F1 {report.macro_f1:.3f} written to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    reports = [_report_for(p, args.manifest, None) for p in args.predictions]
    fmt = evaluation.ReportFormat.from_path(args.out)
    _write_text(args.out, evaluation.emit_report(reports, fmt),
                {"predictions": [str(p) for p in args.predictions], "manifest": args.manifest})
    _ok(f"{len(reports)} runs compared in {args.out}")
    return EXIT_OK


def cmd_histogram(args) -> int:
    answers, embedded, config = artifacts.read_answers(args.answers)
    h = evaluation.yes_histogram(answers, _labels(embedded, args.manifest))
    fmt = evaluation.ReportFormat.from_path(args.out)
    _write_text(args.out, evaluation.emit_report(h, fmt),
                {"answers": str(args.answers), "answers_config": config})
    if args.chart:
        evaluation.histogram_chart(h, args.chart)
    _ok(f"Histogram over {len(h.question_indices)} questions written to {args.out}")
    return EXIT_OK


def cmd_make_fixture(args) -> int:
    manifest = make_fixture(args.out, args.dev, args.test, args.positive_fraction,
                            args.images_per_location, args.size, args.seed)
    _ok(f"Fixture written; manifest at {manifest}")
    return EXIT_OK


# PARSER
# ///////////////////////////////////////////////////////////////
def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="gully-vqa",
                            description="Ephemeral gully detection with vision-language models")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--log-file", help="Also write the log to this file")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ingest", help="Validate a dataset and print per-split counts")
    _add_dataset_flags(p)
    p.add_argument("--json", help="Write the canonical dataset description here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("questions", help="List the question bank or a preset")
    p.add_argument("--preset", help="Preset name or comma-separated indices")
    p.set_defaults(func=cmd_questions)

    p = sub.add_parser("collage", help="Write one location's collage as PNG")
    _add_dataset_flags(p)
    p.add_argument("--location", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", help="ROWSxCOLS (default 2x3)")
    p.add_argument("--separator", type=int)
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_collage)

    p = sub.add_parser("run", help="Run pipeline A, B or C over a split")
    _add_dataset_flags(p)
    p.add_argument("--pipeline", type=str.upper, choices=PIPELINES)
    p.add_argument("--split", type=str.lower, choices=SPLITS)
    p.add_argument("--questions", help=f"Preset ({', '.join(PRESETS)}) or index list")
    p.add_argument("--unparseable", choices=UNPARSEABLE_POLICIES)
    p.add_argument("--grid", help="ROWSxCOLS (default 2x3)")
    p.add_argument("--separator", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--answers-out", help="Also write pipeline B answer vectors here")
    p.add_argument("--answers-only", action="store_true",
                   help="Pipeline B: ask the questions, skip aggregation")
    p.add_argument("--no-progress", action="store_true")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="Pipeline B over several question sets, one report")
    _add_dataset_flags(p)
    p.add_argument("--presets", nargs="+", default=list(Settings.SWEEP_PRESETS),
                   help=f"Presets or index lists (default {' '.join(Settings.SWEEP_PRESETS)})")
    p.add_argument("--split", type=str.lower, choices=SPLITS)
    p.add_argument("--unparseable", choices=UNPARSEABLE_POLICIES)
    p.add_argument("--grid", help="ROWSxCOLS (default 2x3)")
    p.add_argument("--separator", type=int)
    p.add_argument("--out", required=True, help="sweep.md, sweep.csv or sweep.json")
    p.add_argument("--no-progress", action="store_true")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train-mlp",help="Train the TL aggregator on answer vectors")
    p.add_argument("--answers", required=True)
    p.add_argument("--manifest", help="Labels (default: labels embedded in the answers file)")
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", type=int, default=Settings.MLP_HIDDEN)
    p.add_argument("--lr", type=float, default=Settings.MLP_LR)
    p.add_argument("--epochs", type=int, default=Settings.MLP_EPOCHS)
    p.add_argument("--seed", type=int, default=Settings.MLP_SEED)
    p.set_defaults(func=cmd_train_mlp)

    p = sub.add_parser("predict-mlp", help="Predict with a trained TL aggregator")
    p.add_argument("--model", required=True)
    p.add_argument("--answers", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=Settings.MLP_THRESHOLD)
    p.set_defaults(func=cmd_predict_mlp)

    p = sub.add_parser("optimize", help="Search question subsets on Dev answers")
    p.add_argument("--answers", required=True)
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=[s.value for s in qopt.Strategy],
                   default=Settings.STRATEGY)
    p.add_argument("--objective", choices=[o.value for o in qopt.ObjectiveName],
                   default=Settings.OBJECTIVE)
    p.add_argument("--budget", type=int, default=Settings.SEARCH_BUDGET)
    p.add_argument("--max-k", type=int)
    p.add_argument("--rescore-llm", help="Re-score the best subset with this model[@url]")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evaluate", help="Score a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", "--dataset", dest="manifest",
                   help="Manifest CSV with labels (default: labels embedded in predictions)")
    p.add_argument("--out", required=True, help="report.md, report.csv or report.json")
    p.add_argument("--experiment")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("histogram", help="Yes counts per question and class")
    p.add_argument("--answers", required=True)
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--chart", help="Also write a plotly bar chart (HTML)")
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("report", help="Compare several prediction files in one table")
    p.add_argument("--predictions", required=True, nargs="+")
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("make-fixture", help="Write a small synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--dev", type=int, default=10)
    p.add_argument("--test", type=int, default=11)
    p.add_argument("--positive-fraction", type=float, default=177 / 310)
    p.add_argument("--images-per-location", type=int, default=Settings.IMAGES_PER_LOCATION)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=Settings.SEED)
    p.set_defaults(func=cmd_make_fixture)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    just_fix_windows_console()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        _fail(str(e))
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return e.code if isinstance(e.code, int) else EXIT_OK

    configure_logging(logging.DEBUG if args.verbose else logging.INFO, args.log_file)
    try:
        return args.func(args)
    except UsageError as e:
        _fail(str(e))
        return EXIT_USAGE
    except (GullyError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        _fail(f"Error: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
