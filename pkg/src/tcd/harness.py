"""Multiple-choice evaluation: datasets, the six-condition matrix, scoring,
the penalty sweep, and report emission.

Conditions cross three switches: noise injection, constrained decoding, and
the answer-range prompt fix. Predictions are scored by strict exact match
against the gold letter, which is exactly what makes a leading-space
emission count as wrong; a lenient mode exists as an analysis aid only.
"""

from __future__ import annotations

import csv
import json
import logging
import random
import zlib
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import HARD, ConstraintSet, DecodeConfig, Penalty, decode
from .errors import (
    InvalidConfig,
    InvalidInput,
    IoError,
    OptionLetterNotSingleToken,
    ParseError,
    PartialReportError,
    ProviderError,
    ValidationError,
)
from .perturb import (
    DEFAULT_PE_TEMPLATE,
    NoiseSpec,
    PeFixSpec,
    PromptTemplate,
    apply_pe_fix,
    inject_option_spacing,
    inject_trailing_space,
)

logger = logging.getLogger(__name__)

SWEEP_PENALTIES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
NOISE_TARGETS = ("keyword", "options", "both")
REPORT_COLUMNS = ("model", "benchmark", "condition", "penalty", "accuracy")


class ExperimentCondition(Enum):
    """One cell of the evaluation matrix: (noise?, tcd?, pe_fix?)."""

    CLEAN_BASELINE = ("clean_baseline", False, False, False)
    CLEAN_TCD = ("clean_tcd", False, True, False)
    NOISE_ONLY = ("noise_only", True, False, False)
    NOISE_PE_FIX = ("noise_pe", True, False, True)
    NOISE_TCD = ("noise_tcd", True, True, False)
    NOISE_TCD_PE_FIX = ("noise_tcd_pe", True, True, True)

    @property
    def key(self) -> str:
        return self.value[0]

    @property
    def noise(self) -> bool:
        return self.value[1]

    @property
    def tcd(self) -> bool:
        return self.value[2]

    @property
    def pe_fix(self) -> bool:
        return self.value[3]

    @classmethod
    def parse(cls, name: str) -> "ExperimentCondition":
        for member in cls:
            if name == member.key or name == member.name.lower():
                return member
        raise InvalidConfig(
            f"unknown condition {name!r}; choose from {[m.key for m in cls]}"
        )


@dataclass(frozen=True)
class McqaItem:
    """One benchmark question: options keyed by consecutive letters from 'A'."""

    id: str
    question: str
    options: dict[str, str]
    answer: str

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("id must be a nonempty string", str(self.id))
        if not isinstance(self.question, str):
            raise ValidationError("question must be a string", self.id)
        letters = list(self.options.keys())
        if not letters:
            raise ValidationError("options must be nonempty", self.id)
        expected = [chr(ord("A") + i) for i in range(len(letters))]
        if letters != expected:
            raise ValidationError(
                f"option letters {letters} must be consecutive from 'A'", self.id
            )
        for letter, text in self.options.items():
            if not isinstance(text, str) or not text:
                raise ValidationError(f"option {letter} text must be nonempty", self.id)
        if self.answer not in self.options:
            raise ValidationError(
                f"answer {self.answer!r} is not one of the option letters", self.id
            )

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(self.options.keys())


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    predicted: str
    gold: str
    correct: bool
    error: str | None = None


@dataclass(frozen=True)
class EvalReport:
    """Aggregate result of one (model, benchmark, condition, penalty) run."""

    model: str
    benchmark: str
    condition: ExperimentCondition
    penalty: Penalty | None  # None when decoding ran unconstrained
    records: tuple[ItemRecord, ...]
    accuracy: float  # percent

    @classmethod
    def build(cls, model, benchmark, condition, penalty, records) -> "EvalReport":
        records = tuple(records)
        correct = sum(1 for r in records if r.correct)
        accuracy = 100.0 * correct / len(records) if records else 0.0
        return cls(model, benchmark, condition, penalty, records, accuracy)


@dataclass(frozen=True)
class PenaltySweepResult:
    penalties: tuple[float, ...]
    reports: tuple[EvalReport, ...]


@dataclass(frozen=True)
class HarnessConfig:
    """Templates, noise wiring, and decode parameters for one run."""

    template: PromptTemplate = field(default_factory=PromptTemplate)
    pe_instruction_template: str = DEFAULT_PE_TEMPLATE
    noise_targets: str = "both"  # keyword | options | both
    seed: int = 0
    penalty: Penalty = HARD
    tau: float = 1.0
    tcd_steps: int = 1
    baseline_steps: int = 3
    feedback: str = "constrained"

    def __post_init__(self):
        if self.noise_targets not in NOISE_TARGETS:
            raise InvalidConfig(
                f"noise_targets must be one of {NOISE_TARGETS}, got {self.noise_targets!r}"
            )

    def noise_spec(self, item_id: str) -> NoiseSpec:
        return NoiseSpec(
            trailing_space_after_keyword=self.noise_targets in ("keyword", "both"),
            option_spacing_irregularity=self.noise_targets in ("options", "both"),
            seed=item_seed(self.seed, item_id),
        )


def item_seed(run_seed: int, item_id: str) -> int:
    """Stable per-item seed so spacing choices vary across items, not runs."""
    return zlib.crc32(f"{run_seed}:{item_id}".encode("utf-8"))


def load_dataset(path) -> list[McqaItem]:
    """Read one JSON object per line and validate each into an item."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read dataset {path}: {exc}", line=0) from exc
    items: list[McqaItem] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object", line=lineno)
        item_id = obj.get("id")
        if not isinstance(item_id, str) or not item_id:
            raise ValidationError("missing or invalid 'id'", str(item_id))
        for key in ("question", "options", "answer"):
            if key not in obj:
                raise ValidationError(f"missing field {key!r}", item_id)
        if not isinstance(obj["options"], dict):
            raise ValidationError("'options' must be an object", item_id)
        items.append(
            McqaItem(
                id=item_id,
                question=obj["question"],
                options=dict(obj["options"]),
                answer=obj["answer"],
            )
        )
    if not items:
        logger.warning("dataset %s contains no items", path)
    return items


def build_prompt(item: McqaItem, condition: ExperimentCondition, config: HarnessConfig) -> str:
    """Render the clean prompt, then the answer-range fix, then the noise."""
    prompt = config.template.render(item.question, item.options)
    if condition.pe_fix:
        fix = PeFixSpec(
            enabled=True,
            option_letters=item.letters,
            instruction_template=config.pe_instruction_template,
        )
        prompt = apply_pe_fix(prompt, fix, keyword=config.template.control_keyword)
    if condition.noise:
        spec = config.noise_spec(item.id)
        if spec.option_spacing_irregularity:
            prompt = inject_option_spacing(prompt, spec)
        if spec.trailing_space_after_keyword:
            prompt = inject_trailing_space(prompt, config.template.control_keyword)
    return prompt


def _letter_ids(provider, item: McqaItem) -> list[int]:
    ids = []
    for letter in item.letters:
        if letter not in provider.vocabulary:
            raise OptionLetterNotSingleToken(
                f"option letter {letter!r} is not a single token in the "
                f"{provider.name} vocabulary"
            )
        ids.append(provider.vocabulary.id_of(letter))
    return ids


def answer_item(provider, item: McqaItem, condition: ExperimentCondition, config: HarnessConfig) -> str:
    """Predict one item: the selected letter under constrained decoding, or
    the raw emitted text (unparsed) when decoding runs unconstrained."""
    letter_ids = _letter_ids(provider, item)
    prompt_ids = provider.encode(build_prompt(item, condition, config))
    if condition.tcd:
        decode_config = DecodeConfig(
            constraint=ConstraintSet.of(letter_ids),
            penalty=config.penalty,
            tau=config.tau,
            steps=config.tcd_steps,
            select_n=1,
            feedback=config.feedback,
        )
        result = decode(provider, prompt_ids, decode_config)
        return provider.vocabulary.token_of(result.selected[0])
    decode_config = DecodeConfig(
        constraint=ConstraintSet.full(len(provider.vocabulary)),
        penalty=Penalty.finite(0.0),
        tau=1.0,
        steps=config.baseline_steps,
        select_n=1,
        feedback=config.feedback,
    )
    result = decode(provider, prompt_ids, decode_config)
    return provider.text_of(result.emitted_context)


def score_exact_match(predicted: str, gold: str, mode: str = "strict") -> int:
    """Strict mode is byte equality; lenient trims and case-folds (analysis aid)."""
    if mode == "strict":
        return int(predicted == gold)
    if mode == "lenient":
        return int(predicted.strip().casefold() == gold.strip().casefold())
    raise InvalidConfig(f"scoring mode must be 'strict' or 'lenient', got {mode!r}")


def run_condition(
    provider,
    items: Sequence[McqaItem],
    condition: ExperimentCondition,
    config: HarnessConfig,
    model: str | None = None,
    benchmark: str = "default",
) -> EvalReport:
    """Evaluate every item under one condition with strict exact-match scoring.

    Aborts with :class:`PartialReportError` once more than 10% of items have
    failed at the provider; provider failures below that are recorded as
    incorrect answers with the error message attached.
    """
    if not items:
        raise InvalidInput("cannot evaluate an empty item list")
    model = model if model is not None else provider.name
    penalty = config.penalty if condition.tcd else None
    records: list[ItemRecord] = []
    failures = 0
    for item in items:
        try:
            predicted = answer_item(provider, item, condition, config)
        except ProviderError as exc:
            failures += 1
            records.append(
                ItemRecord(item.id, predicted="", gold=item.answer, correct=False, error=str(exc))
            )
            if failures > 0.10 * len(items):
                partial = EvalReport.build(model, benchmark, condition, penalty, records)
                raise PartialReportError(
                    f"{failures} provider failures in {len(records)} items (>10%)",
                    report=partial,
                ) from exc
            continue
        correct = bool(score_exact_match(predicted, item.answer, mode="strict"))
        records.append(ItemRecord(item.id, predicted, item.answer, correct))
    return EvalReport.build(model, benchmark, condition, penalty, records)


def run_matrix(
    provider,
    items: Sequence[McqaItem],
    config: HarnessConfig,
    conditions: Iterable[ExperimentCondition] = tuple(ExperimentCondition),
    model: str | None = None,
    benchmark: str = "default",
) -> list[EvalReport]:
    return [
        run_condition(provider, items, condition, config, model=model, benchmark=benchmark)
        for condition in conditions
    ]


def run_penalty_sweep(
    provider,
    items_by_benchmark: Mapping[str, Sequence[McqaItem]],
    config: HarnessConfig,
    condition: ExperimentCondition = ExperimentCondition.NOISE_TCD_PE_FIX,
    penalties: Sequence[float] = SWEEP_PENALTIES,
    model: str | None = None,
) -> PenaltySweepResult:
    """Evaluate one TCD condition at each finite penalty on every benchmark."""
    if not condition.tcd:
        raise InvalidConfig("the penalty sweep requires a condition with TCD enabled")
    if not items_by_benchmark:
        raise InvalidInput("no benchmarks given")
    reports = []
    for benchmark, items in items_by_benchmark.items():
        for gamma in penalties:
            swept = replace(config, penalty=Penalty.finite(gamma))
            reports.append(
                run_condition(provider, items, condition, swept, model=model, benchmark=benchmark)
            )
    return PenaltySweepResult(penalties=tuple(penalties), reports=tuple(reports))


def _penalty_cell(penalty: Penalty | None) -> str:
    return "" if penalty is None else str(penalty)


def _penalty_sort_key(penalty: Penalty | None) -> float:
    if penalty is None:
        return -1.0
    return float("inf") if penalty.is_hard else penalty.gamma


def report_rows(reports: Iterable[EvalReport]) -> list[tuple[str, str, str, str, str]]:
    """Flatten reports into stably ordered CSV-shaped rows."""
    condition_order = {member: i for i, member in enumerate(ExperimentCondition)}
    ordered = sorted(
        reports,
        key=lambda r: (
            r.model,
            r.benchmark,
            condition_order[r.condition],
            _penalty_sort_key(r.penalty),
        ),
    )
    return [
        (r.model, r.benchmark, r.condition.key, _penalty_cell(r.penalty), f"{r.accuracy:.2f}")
        for r in ordered
    ]


def emit_report(reports: Iterable[EvalReport], fmt: str = "csv", path=None) -> Path:
    """Write the aggregate table as CSV or as a JSON mirror of the same rows."""
    reports = list(reports)
    if not reports:
        raise InvalidInput("no reports to emit")
    if fmt not in ("csv", "json"):
        raise InvalidConfig(f"report format must be 'csv' or 'json', got {fmt!r}")
    if path is None:
        raise InvalidInput("an output path is required")
    path = Path(path)
    rows = report_rows(reports)
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            if fmt == "csv":
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow(REPORT_COLUMNS)
                writer.writerows(rows)
            else:
                payload = [dict(zip(REPORT_COLUMNS, row)) for row in rows]
                json.dump(payload, handle, indent=2)
                handle.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write report to {path}: {exc}") from exc
    return path


_SYNTH_WORDS = (
    "river", "stone", "cloud", "ember", "forest", "harbor", "meadow", "signal",
    "copper", "lantern", "orchid", "canyon", "breeze", "thicket", "summit", "glacier",
)


def synthesize_items(
    count: int,
    n_options: int = 5,
    seed: int = 0,
    words: Sequence[str] = _SYNTH_WORDS,
) -> list[McqaItem]:
    """Deterministic synthetic items for desk-scale runs and tests."""
    if count < 1:
        raise InvalidInput("count must be >= 1")
    if not 2 <= n_options <= 26:
        raise InvalidConfig("n_options must be between 2 and 26")
    rng = random.Random(seed)
    letters = [chr(ord("A") + i) for i in range(n_options)]
    items = []
    for i in range(count):
        prompt_words = rng.sample(list(words), 2)
        options = {letter: rng.choice(list(words)) for letter in letters}
        items.append(
            McqaItem(
                id=f"synth-{i:04d}",
                question=f"Which word belongs after {prompt_words[0]} {prompt_words[1]}?",
                options=options,
                answer=rng.choice(letters),
            )
        )
    return items
