"""Command-line front end.

Subcommands: ``decode`` (one constrained decode, JSON to stdout), ``eval``
(condition matrix over a dataset), ``sweep`` (penalty sweep), ``perturb``
(prompt perturbation preview), and ``report`` (SVG figures from a report CSV).

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
stderr (verbosity via the TCD_LOG environment variable); stdout carries data
only. Defaults can be pinned in an INI config file; flags override it.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .core import HARD, ConstraintSet, DecodeConfig, Penalty, Vocabulary, decode
from .errors import InvalidConfig, InvalidInput, IoError, ParseError, TcdError
from .figures import render_condition_chart, render_sweep_chart, write_svg
from .harness import (
    REPORT_COLUMNS,
    SWEEP_PENALTIES,
    EvalReport,
    ExperimentCondition,
    HarnessConfig,
    PenaltySweepResult,
    emit_report,
    load_dataset,
    report_rows,
    run_condition,
    run_matrix,
    run_penalty_sweep,
)
from .perturb import (
    DEFAULT_CONTROL_KEYWORD,
    NoiseSpec,
    PeFixSpec,
    apply_pe_fix,
    inject_option_spacing,
    inject_trailing_space,
)
from .providers import NGramModel, TableProvider

logger = logging.getLogger(__name__)

NOISE_KINDS = ("trailing_space", "option_spacing")


class UsageError(Exception):
    """Bad flags or flag values; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage -> 1
        raise UsageError(message)


def _bool_value(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _penalty_value(text: str) -> Penalty:
    try:
        return Penalty.parse(text)
    except TcdError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def parse_penalty_list(text: str) -> list[float]:
    """Accept either ``start:stop:step`` or a comma-separated list."""
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise ValueError("expected start:stop:step")
            start, stop, step = (float(p) for p in parts)
            if step <= 0:
                raise ValueError("step must be positive")
            values = []
            i = 0
            while start + i * step <= stop + 1e-9:
                values.append(round(start + i * step, 10))
                i += 1
        else:
            values = [round(float(p), 10) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad penalty list {text!r}: {exc}") from None
    if not values:
        raise argparse.ArgumentTypeError(f"penalty list {text!r} is empty")
    if any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("penalties must be nonnegative")
    return values


def _penalties_value(text: str) -> list[float]:
    return parse_penalty_list(text)


# ---------------------------------------------------------------------------
# provider construction


def split_provider_spec(spec: str) -> tuple[str, str]:
    scheme, sep, rest = spec.partition(":")
    if not sep or not rest:
        raise UsageError(f"provider spec {spec!r} must look like scheme:argument")
    if scheme not in ("ngram", "table", "external", "external-tcp"):
        raise UsageError(
            f"unknown provider scheme {scheme!r}; "
            "choose ngram:, table:, external:, or external-tcp:"
        )
    return scheme, rest


def build_provider(spec: str, *, order=None, alpha=None, tokenizer="char"):
    """Turn a ``scheme:argument`` spec into a live provider."""
    scheme, rest = split_provider_spec(spec)
    if scheme == "ngram":
        try:
            text = Path(rest).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read corpus {rest}: {exc}") from exc
        alpha = 1.0 if alpha is None else alpha
        if tokenizer == "char":
            return NGramModel.train_chars(text, order=order or 3, alpha=alpha)
        if tokenizer == "word":
            return NGramModel.train_words(text, order=order or 2, alpha=alpha)
        raise UsageError(f"tokenizer must be 'char' or 'word', got {tokenizer!r}")
    if scheme == "table":
        return _table_from_file(rest)
    from .external import ExternalProvider  # deferred: pulls in subprocess/socket

    if scheme == "external":
        return ExternalProvider.spawn(rest)
    host, sep, port = rest.rpartition(":")
    if not sep:
        raise UsageError("external-tcp spec must look like external-tcp:HOST:PORT")
    try:
        port_number = int(port)
    except ValueError:
        raise UsageError(f"bad port {port!r}") from None
    return ExternalProvider.connect(host, port_number)


def _table_from_file(path: str) -> TableProvider:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read table file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}", line=exc.lineno) from None
    for key in ("tokens", "default"):
        if key not in payload:
            raise InvalidInput(f"table file {path} is missing {key!r}")
    vocabulary = Vocabulary(tuple(payload["tokens"]))
    script = {}
    for raw_key, vector in payload.get("script", {}).items():
        ids = tuple(int(part) for part in raw_key.split(",") if part != "")
        script[ids] = vector
    return TableProvider(vocabulary, script=script, default=payload["default"])


# ---------------------------------------------------------------------------
# argument plumbing: argparse -> config file -> per-command defaults

_DEFAULTS = {
    "decode": {
        "provider": None, "prompt": None, "infile": None, "allow": None,
        "allow_ids": None, "penalty": HARD, "tau": 1.0, "steps": 1, "top": 1,
        "feedback": "constrained", "debug": False,
        "order": None, "alpha": None, "tokenizer": "char",
    },
    "eval": {
        "dataset": None, "provider": None, "condition": "all", "out": None,
        "format": "csv", "penalty": HARD, "tau": 1.0, "steps": 1,
        "baseline_steps": 3, "noise_targets": "both", "seed": 0,
        "model": None, "benchmark": None,
        "order": None, "alpha": None, "tokenizer": "char",
    },
    "sweep": {
        "dataset": None, "provider": None, "condition": "noise_tcd_pe",
        "penalties": list(SWEEP_PENALTIES), "out": None, "format": "csv",
        "tau": 1.0, "steps": 1, "seed": 0, "model": None,
        "order": None, "alpha": None, "tokenizer": "char",
    },
    "perturb": {
        "infile": None, "noise": "trailing_space", "pe_fix": False,
        "letters": None, "keyword": DEFAULT_CONTROL_KEYWORD, "seed": 0,
    },
    "report": {
        "infile": None, "fig": None, "kind": "auto", "title": None,
    },
}

_COERCERS = {
    "tau": float, "alpha": float, "seed": int, "steps": int, "top": int,
    "order": int, "baseline_steps": int,
    "penalty": Penalty.parse, "penalties": parse_penalty_list,
    "debug": _bool_value, "pe_fix": _bool_value,
}


def _add_provider_flags(sub):
    sub.add_argument("--provider", help="scheme:argument provider spec")
    sub.add_argument("--order", type=int, help="n-gram order")
    sub.add_argument("--alpha", type=float, help="n-gram smoothing constant")
    sub.add_argument("--tokenizer", choices=("char", "word"))


def _build_parser() -> _Parser:
    parser = _Parser(prog="tcd", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="INI file supplying flag defaults")
    commands = parser.add_subparsers(dest="command")

    sub = commands.add_parser("decode", help="run one constrained decode")
    _add_provider_flags(sub)
    sub.add_argument("--prompt", help="prompt text")
    sub.add_argument("--in", dest="infile", help="file containing the prompt")
    sub.add_argument("--allow", help="comma-separated allowed tokens")
    sub.add_argument("--allow-ids", dest="allow_ids", help="comma-separated allowed token ids")
    sub.add_argument("--penalty", type=_penalty_value, help="nonnegative float or 'hard'")
    sub.add_argument("--tau", type=float)
    sub.add_argument("--steps", type=int)
    sub.add_argument("--top", type=int, help="how many final candidates to report")
    sub.add_argument("--feedback", choices=("constrained", "unconstrained"))
    sub.add_argument("--debug", action="store_true", default=None)

    sub = commands.add_parser("eval", help="evaluate a dataset under conditions")
    _add_provider_flags(sub)
    sub.add_argument("--dataset", help="JSONL dataset path")
    sub.add_argument("--condition", help="condition key, or 'all' for the full matrix")
    sub.add_argument("--out", help="report path (stdout when omitted)")
    sub.add_argument("--format", choices=("csv", "json"))
    sub.add_argument("--penalty", type=_penalty_value)
    sub.add_argument("--tau", type=float)
    sub.add_argument("--steps", type=int)
    sub.add_argument("--baseline-steps", dest="baseline_steps", type=int)
    sub.add_argument("--noise-targets", dest="noise_targets", choices=("keyword", "options", "both"))
    sub.add_argument("--seed", type=int)
    sub.add_argument("--model", help="model name for report rows")
    sub.add_argument("--benchmark", help="benchmark name for report rows")

    sub = commands.add_parser("sweep", help="accuracy across a penalty range")
    _add_provider_flags(sub)
    sub.add_argument(
        "--dataset", action="append",
        help="JSONL path, or NAME=PATH; repeat for several benchmarks",
    )
    sub.add_argument("--condition", help="TCD condition key to sweep")
    sub.add_argument("--penalties", type=_penalties_value, help="start:stop:step or comma list")
    sub.add_argument("--out", help="report path (stdout when omitted)")
    sub.add_argument("--format", choices=("csv", "json"))
    sub.add_argument("--tau", type=float)
    sub.add_argument("--steps", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--model")

    sub = commands.add_parser("perturb", help="preview prompt perturbations")
    sub.add_argument("--in", dest="infile", help="prompt file ('-' for stdin)")
    sub.add_argument("--noise", help="comma list of trailing_space,option_spacing, or 'none'")
    sub.add_argument("--pe-fix", dest="pe_fix", action="store_true", default=None)
    sub.add_argument("--letters", help="comma-separated option letters for the fix")
    sub.add_argument("--keyword", help="control keyword (default 'Answer:')")
    sub.add_argument("--seed", type=int)

    sub = commands.add_parser("report", help="render figures from a report CSV")
    sub.add_argument("--in", dest="infile", help="report CSV path")
    sub.add_argument("--fig", help="output SVG path")
    sub.add_argument("--kind", choices=("auto", "sweep", "conditions"))
    sub.add_argument("--title")
    return parser


def _config_values(path: str, command: str, defaults: dict) -> dict:
    reader = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as handle:
            reader.read_file(handle)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise UsageError(f"bad config {path}: {exc}") from exc
    raw: dict[str, str] = {}
    for section in ("common", command):
        if reader.has_section(section):
            raw.update(dict(reader.items(section)))
    values = {}
    for key, text in raw.items():
        key = key.replace("-", "_")
        if key not in defaults:
            logger.warning("config key %r does not apply to %r; ignored", key, command)
            continue
        coercer = _COERCERS.get(key)
        if key == "dataset" and command == "sweep":
            values[key] = [part for part in text.replace(",", " ").split() if part]
            continue
        try:
            values[key] = coercer(text) if coercer else text
        except (ValueError, TcdError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"bad config value {key} = {text!r}: {exc}") from None
    return values


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge defaults, config-file values, and flags (flags win)."""
    command = args.command
    defaults = _DEFAULTS[command]
    merged = dict(defaults)
    if args.config:
        merged.update(_config_values(args.config, command, defaults))
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        merged[key] = value
    merged["command"] = command
    _validate_options(merged)
    return merged


def _require(options: dict, key: str, flag: str):
    if not options.get(key):
        raise UsageError(f"{flag} is required for '{options['command']}'")


def _parse_condition(name: str) -> ExperimentCondition:
    try:
        return ExperimentCondition.parse(name)
    except InvalidConfig as exc:
        raise UsageError(str(exc)) from None


def _validate_options(options: dict):
    command = options["command"]
    if "tau" in options and options["tau"] is not None and options["tau"] <= 0:
        raise UsageError("--tau must be > 0")
    for key, flag in (("steps", "--steps"), ("top", "--top"),
                      ("baseline_steps", "--baseline-steps")):
        if key in options and options[key] is not None and options[key] < 1:
            raise UsageError(f"{flag} must be >= 1")
    if command == "decode":
        _require(options, "provider", "--provider")
        if bool(options["prompt"]) == bool(options["infile"]):
            raise UsageError("give exactly one of --prompt or --in")
        if options["allow"] and options["allow_ids"]:
            raise UsageError("give at most one of --allow or --allow-ids")
    elif command == "eval":
        _require(options, "provider", "--provider")
        _require(options, "dataset", "--dataset")
        if options["condition"] != "all":
            _parse_condition(options["condition"])
    elif command == "sweep":
        _require(options, "provider", "--provider")
        _require(options, "dataset", "--dataset")
        condition = _parse_condition(options["condition"])
        if not condition.tcd:
            raise UsageError(f"--condition {condition.key} does not enable TCD")
    elif command == "perturb":
        _require(options, "infile", "--in")
        kinds = _noise_kinds(options["noise"])
        if options["pe_fix"] and not options["letters"]:
            raise UsageError("--pe-fix requires --letters")
        options["noise_kinds"] = kinds
    elif command == "report":
        _require(options, "infile", "--in")
        _require(options, "fig", "--fig")


def _noise_kinds(text: str) -> tuple[str, ...]:
    if text.strip().lower() in ("none", ""):
        return ()
    kinds = tuple(part.strip() for part in text.split(",") if part.strip())
    for kind in kinds:
        if kind not in NOISE_KINDS:
            raise UsageError(f"unknown noise kind {kind!r}; choose from {NOISE_KINDS}")
    return kinds


# ---------------------------------------------------------------------------
# command bodies


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _options_provider(options: dict):
    return build_provider(
        options["provider"],
        order=options.get("order"),
        alpha=options.get("alpha"),
        tokenizer=options.get("tokenizer") or "char",
    )


def _decode_constraint(options: dict, vocabulary: Vocabulary) -> ConstraintSet:
    if options["allow"]:
        tokens = options["allow"].split(",")
        return ConstraintSet.from_tokens(vocabulary, tokens)
    if options["allow_ids"]:
        try:
            ids = [int(part) for part in options["allow_ids"].split(",") if part.strip()]
        except ValueError:
            raise UsageError(f"bad --allow-ids value {options['allow_ids']!r}") from None
        constraint = ConstraintSet.of(ids)
        constraint.check_bounds(len(vocabulary))
        return constraint
    return ConstraintSet.full(len(vocabulary))


def _cmd_decode(options: dict) -> int:
    provider = _options_provider(options)
    text = options["prompt"] if options["prompt"] else _read_text(options["infile"])
    constraint = _decode_constraint(options, provider.vocabulary)
    config = DecodeConfig(
        constraint=constraint,
        penalty=options["penalty"],
        tau=options["tau"],
        steps=options["steps"],
        select_n=options["top"],
        debug=options["debug"],
        feedback=options["feedback"],
    )
    result = decode(provider, provider.encode(text), config)
    payload = result.to_json_dict(provider.vocabulary, constraint)
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    return 0


def _harness_config(options: dict) -> HarnessConfig:
    return HarnessConfig(
        noise_targets=options.get("noise_targets", "both"),
        seed=options["seed"],
        penalty=options.get("penalty", HARD),
        tau=options["tau"],
        tcd_steps=options["steps"],
        baseline_steps=options.get("baseline_steps", 3),
    )


def _emit(reports, fmt: str, out: str | None) -> None:
    if out and out != "-":
        path = emit_report(reports, fmt=fmt, path=out)
        logger.info("wrote %s", path)
        return
    rows = report_rows(reports)
    if fmt == "csv":
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        writer.writerows(rows)
    else:
        payload = [dict(zip(REPORT_COLUMNS, row)) for row in rows]
        sys.stdout.write(json.dumps(payload, indent=2) + "\n")


def _cmd_eval(options: dict) -> int:
    provider = _options_provider(options)
    items = load_dataset(options["dataset"])
    if not items:
        raise InvalidInput(f"dataset {options['dataset']} is empty")
    config = _harness_config(options)
    benchmark = options["benchmark"] or Path(options["dataset"]).stem
    model = options["model"]
    if options["condition"] == "all":
        reports = run_matrix(provider, items, config, model=model, benchmark=benchmark)
    else:
        condition = ExperimentCondition.parse(options["condition"])
        reports = [
            run_condition(provider, items, condition, config, model=model, benchmark=benchmark)
        ]
    _emit(reports, options["format"], options["out"])
    return 0


def _sweep_benchmarks(specs: list[str]) -> dict[str, Path]:
    benchmarks = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if sep:
            benchmarks[name] = Path(path)
        else:
            benchmarks[Path(spec).stem] = Path(spec)
    return benchmarks


def _cmd_sweep(options: dict) -> int:
    provider = _options_provider(options)
    items_by_benchmark = {}
    for name, path in _sweep_benchmarks(options["dataset"]).items():
        items = load_dataset(path)
        if not items:
            raise InvalidInput(f"dataset {path} is empty")
        items_by_benchmark[name] = items
    config = _harness_config(options)
    result = run_penalty_sweep(
        provider,
        items_by_benchmark,
        config,
        condition=ExperimentCondition.parse(options["condition"]),
        penalties=options["penalties"],
        model=options["model"],
    )
    _emit(result.reports, options["format"], options["out"])
    return 0


def _cmd_perturb(options: dict) -> int:
    prompt = _read_text(options["infile"])
    keyword = options["keyword"]
    if options["pe_fix"]:
        letters = tuple(part.strip() for part in options["letters"].split(",") if part.strip())
        fix = PeFixSpec(enabled=True, option_letters=letters)
        prompt = apply_pe_fix(prompt, fix, keyword=keyword)
    kinds = options["noise_kinds"]
    if "option_spacing" in kinds:
        spec = NoiseSpec(option_spacing_irregularity=True, seed=options["seed"])
        prompt = inject_option_spacing(prompt, spec)
    if "trailing_space" in kinds:
        prompt = inject_trailing_space(prompt, keyword)
    sys.stdout.write(prompt if prompt.endswith("\n") else prompt + "\n")
    return 0


def _load_report_csv(path: str) -> list[EvalReport]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            rows = list(reader)
    except OSError as exc:
        raise IoError(f"cannot read report {path}: {exc}") from exc
    if not rows or tuple(rows[0]) != REPORT_COLUMNS:
        raise ParseError(f"{path} is not a report CSV (bad header)", line=1)
    reports = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(REPORT_COLUMNS):
            raise ParseError(f"expected {len(REPORT_COLUMNS)} columns", line=lineno)
        model, benchmark, condition_key, penalty_cell, accuracy_cell = row
        try:
            condition = ExperimentCondition.parse(condition_key)
            penalty = None if penalty_cell == "" else Penalty.parse(penalty_cell)
            accuracy = float(accuracy_cell)
        except (TcdError, ValueError) as exc:
            raise ParseError(str(exc), line=lineno) from None
        reports.append(
            EvalReport(model, benchmark, condition, penalty, records=(), accuracy=accuracy)
        )
    if not reports:
        raise InvalidInput(f"report {path} has no rows")
    return reports


def _cmd_report(options: dict) -> int:
    reports = _load_report_csv(options["infile"])
    kind = options["kind"]
    if kind == "auto":
        finite = {r.penalty.gamma for r in reports if r.penalty is not None and not r.penalty.is_hard}
        kind = "sweep" if len(finite) >= 2 else "conditions"
    if kind == "sweep":
        swept = [r for r in reports if r.penalty is not None and not r.penalty.is_hard]
        if not swept:
            raise InvalidInput("no finite-penalty rows to plot as a sweep")
        penalties = tuple(sorted({r.penalty.gamma for r in swept}))
        result = PenaltySweepResult(penalties=penalties, reports=tuple(swept))
        svg = render_sweep_chart(result, title=options["title"] or "Accuracy vs. penalty")
    else:
        svg = render_condition_chart(reports, title=options["title"] or "Accuracy by condition")
    path = write_svg(svg, options["fig"])
    logger.info("wrote %s", path)
    return 0


_DISPATCH = {
    "decode": _cmd_decode,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "perturb": _cmd_perturb,
    "report": _cmd_report,
}


def _setup_logging():
    level_name = os.environ.get("TCD_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s"
    )


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required (decode/eval/sweep/perturb/report)")
        options = resolve_options(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _DISPATCH[options["command"]](options)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except TcdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
