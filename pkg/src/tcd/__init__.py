"""Token-constrained decoding with score accumulation, plus the
perturbation/evaluation harness built around it."""

from .core import (
    HARD,
    ConstraintSet,
    DecodeConfig,
    DecodeResult,
    OpCounter,
    Penalty,
    ScoreTable,
    StepTrace,
    TraceSummary,
    Vocabulary,
    accumulate,
    apply_penalty,
    decode,
    select_top_n,
    softmax,
    temperature_scale,
    trace_token_changes,
)
from .errors import (
    AmbiguousKeyword,
    InsufficientCandidates,
    InvalidConfig,
    InvalidInput,
    IoError,
    KeywordNotFound,
    NoOptionsBlock,
    OptionLetterNotSingleToken,
    ParseError,
    PartialReportError,
    ProtocolError,
    ProviderError,
    ProviderTimeout,
    TcdError,
    TraceUnavailable,
    ValidationError,
    VocabMismatch,
)
from .harness import (
    SWEEP_PENALTIES,
    EvalReport,
    ExperimentCondition,
    HarnessConfig,
    ItemRecord,
    McqaItem,
    PenaltySweepResult,
    answer_item,
    build_prompt,
    emit_report,
    load_dataset,
    run_condition,
    run_matrix,
    run_penalty_sweep,
    score_exact_match,
    synthesize_items,
)
from .perturb import (
    DEFAULT_CONTROL_KEYWORD,
    DEFAULT_PE_TEMPLATE,
    NoiseSpec,
    PeFixSpec,
    PromptTemplate,
    apply_pe_fix,
    inject_option_spacing,
    inject_trailing_space,
)
from .providers import NGramModel, Provider, ProviderDescriptor, TableProvider

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
