"""Command-line entry point: ``phishdebate classify | evaluate | scenario``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .backend import Backend, ScriptedBackend, ScriptedBackendRules
from .config import EngineConfig
from .engine import ConfigError, DebateRunner
from .evaluation import (
    CotMethod,
    DebateMethod,
    DirectMethod,
    EvaluationError,
    ExclusionSetting,
    default_settings,
    records_cost,
    render_report_table,
    render_scenario_table,
    run_benchmark,
    scenario_analysis,
    scenario_report,
    write_benchmark_outputs,
)
from .ingest import DatasetError, SampleLoadError, Skip, load_dataset_dir, load_sample

logger = logging.getLogger("phishdebate")

EXIT_OK = 0
EXIT_SAMPLE_ERROR = 2
EXIT_USAGE = 64  # EX_USAGE
EXIT_NOINPUT = 66  # EX_NOINPUT
EXIT_INTERRUPTED = 130


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (phishdebate.json)")
    parser.add_argument("--backend", default="live", help="'live' or 'scripted:<rules.json>'")
    parser.add_argument("--max-rounds", type=int, help="maximum debate rounds (1-10)")
    parser.add_argument("--tau", type=float, help="consensus confidence threshold in [0, 1]")
    parser.add_argument("--max-inflight", type=int, help="ceiling on concurrent model requests")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phishdebate", description="Multi-agent debate for phishing website detection.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("classify", help="classify one sample (URL file + HTML file)")
    p.add_argument("url_file")
    p.add_argument("html_file")
    p.add_argument("--exclude", help="comma-separated agents to leave out (url,html,content,brand)")
    _common(p)

    p = sub.add_parser("evaluate", help="benchmark a method on a labelled dataset directory")
    p.add_argument("dataset_dir")
    p.add_argument("--method", choices=["debate", "direct", "cot"], default="debate")
    p.add_argument("--exclude", help="comma-separated agents to leave out (url,html,content,brand)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--resume", action="store_true", help="reuse finished per-sample results in --out")
    _common(p)

    p = sub.add_parser("scenario", help="agent-exclusion analysis over one or more datasets")
    p.add_argument("dataset_dirs", nargs="+")
    p.add_argument("--exclude", action="append", default=[],
                   help="extra setting: comma-separated agents to exclude (repeatable)")
    p.add_argument("--no-default-settings", action="store_true",
                   help="only run the --exclude settings")
    p.add_argument("--out", help="output directory")
    p.add_argument("--resume", action="store_true")
    _common(p)
    return parser


def make_backend(spec: str, config: EngineConfig) -> Backend:
    if spec == "live":
        return config.live_backend()
    if spec.startswith("scripted:"):
        path = spec.split(":", 1)[1]
        try:
            rules = ScriptedBackendRules.from_file(path)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load scripted rules {path}: {exc}") from exc
        return ScriptedBackend(rules, max_inflight=config.max_inflight)
    raise ConfigError(f"unknown backend {spec!r}")


def resolve_config(args) -> EngineConfig:
    """Defaults, then the config file, then command-line flags."""
    config = EngineConfig.load(args.config)
    overrides = {
        "max_rounds": args.max_rounds,
        "tau": args.tau,
        "max_inflight": args.max_inflight,
        "output_dir": getattr(args, "out", None),
    }
    exclude = getattr(args, "exclude", None)
    if isinstance(exclude, str):
        overrides["exclude"] = tuple(n.strip() for n in exclude.split(",") if n.strip())
    if overrides["max_inflight"] is not None and overrides["max_inflight"] < 1:
        raise ConfigError("--max-inflight must be >= 1")
    return config.with_overrides(**overrides)


def verdict_line(transcript) -> str:
    verdict = transcript.verdict
    return (
        f"ASSESSMENT={verdict.assessment.value} CONFIDENCE={verdict.confidence!r} "
        f"ROUNDS={transcript.rounds_used} EARLY_TERMINATION={str(transcript.early_termination).lower()}"
    )


def cmd_classify(args, out=sys.stdout) -> int:
    config = resolve_config(args)
    debate = config.debate_config()
    backend = make_backend(args.backend, config)
    try:
        sample = load_sample(args.url_file, args.html_file)
    except SampleLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOINPUT
    if isinstance(sample, Skip):
        print(f"error: invalid sample: {sample.reason}", file=sys.stderr)
        return EXIT_NOINPUT
    transcript = DebateRunner(debate, backend).run(sample)
    if transcript.verdict is None:
        print(f"ERROR={transcript.error}", file=out)
        print(json.dumps(transcript.to_dict(), indent=2, ensure_ascii=False), file=out)
        return EXIT_SAMPLE_ERROR
    print(verdict_line(transcript), file=out)
    print(json.dumps(transcript.to_dict(), indent=2, ensure_ascii=False), file=out)
    return EXIT_OK


def _method(name: str, config: EngineConfig):
    if name == "debate":
        return DebateMethod(config.debate_config())
    cls = DirectMethod if name == "direct" else CotMethod
    return cls(config.budget(), config.role_model(name))


def cmd_evaluate(args, out=sys.stdout) -> int:
    config = resolve_config(args)
    method = _method(args.method, config)
    backend = make_backend(args.backend, config)
    out_dir = Path(config.output_dir)
    try:
        samples, skipped = load_dataset_dir(args.dataset_dir)
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOINPUT
    result = run_benchmark(samples, method, backend, out_dir, resume=args.resume, workers=config.max_inflight)
    extra = {}
    if config.price_table:
        cost = records_cost(result.records, config.price_table)
        extra["cost"] = {"total": cost.cost, "lower_bound": cost.lower_bound}
    write_benchmark_outputs(result, out_dir, skipped.to_list(), extra)
    out.write(render_report_table([result]))
    print(f"scored {result.n_scored}/{len(result.records)} samples "
          f"({len(result.errors)} errors, {len(skipped)} skipped); outputs in {out_dir}", file=out)
    return EXIT_OK


def cmd_scenario(args, out=sys.stdout) -> int:
    config = resolve_config(args)
    base = config.debate_config()
    settings = [] if args.no_default_settings else default_settings()
    try:
        settings += [ExclusionSetting.from_names(spec.split(",")) for spec in args.exclude]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not settings:
        raise ConfigError("no scenario settings to run")
    backend = make_backend(args.backend, config)
    datasets = []
    for directory in args.dataset_dirs:
        try:
            samples, _ = load_dataset_dir(directory)
        except DatasetError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NOINPUT
        datasets.append((Path(directory).name, samples))
    out_dir = Path(config.output_dir)
    rows = scenario_analysis(datasets, settings, base, backend, out_dir, args.resume, config.max_inflight)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "scenario.json").write_text(json.dumps(scenario_report(rows), indent=2) + "\n", encoding="utf-8")
    table = render_scenario_table(rows)
    (out_dir / "scenario.txt").write_text(table, encoding="utf-8")
    out.write(table)
    return EXIT_OK


COMMANDS = {"classify": cmd_classify, "evaluate": cmd_evaluate, "scenario": cmd_scenario}


def main(argv=None, out=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, out or sys.stdout)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SAMPLE_ERROR
    except KeyboardInterrupt:
        print("interrupted; rerun with --resume to continue", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
