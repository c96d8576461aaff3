"""Cumulative constrained decoding over per-step logit vectors.

Each decode step turns a logit vector into a probability distribution,
subtracts a uniform penalty from every token outside the allowed set (or
masks it to -inf outright), divides by the temperature, and adds the result
into a running score table. After the configured number of steps the tokens
with the highest cumulative scores are selected.

Scores are extended reals: finite float64 or -inf. -inf is absorbing under
accumulation, +inf and NaN are rejected at every boundary. All tie-breaks
(per-step feedback and final selection) go to the lowest token id, which
makes every operation in this module deterministic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    InsufficientCandidates,
    InvalidConfig,
    InvalidInput,
    ProviderError,
    TraceUnavailable,
)

FEEDBACK_MODES = ("constrained", "unconstrained")


def _as_vector(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInput(f"{what} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidInput(f"{what} is empty")
    return arr


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise InvalidInput(f"{what} contains a non-finite entry")


def _require_extended(arr: np.ndarray, what: str) -> None:
    # Extended reals: finite or -inf. NaN and +inf are always rejected.
    if np.isnan(arr).any():
        raise InvalidInput(f"{what} contains NaN")
    if (arr == np.inf).any():
        raise InvalidInput(f"{what} contains +inf")


class Vocabulary:
    """Ordered token strings with dense ids ``0..V-1`` and a reverse index."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens: tuple[str, ...] = tuple(tokens)
        if not self.tokens:
            raise InvalidInput("vocabulary is empty")
        if any(not isinstance(t, str) for t in self.tokens):
            raise InvalidInput("vocabulary tokens must be strings")
        self._index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise InvalidInput("vocabulary tokens must be unique")
        self._max_token_len = max(len(t) for t in self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise InvalidInput(f"token {token!r} not in vocabulary") from None

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise InvalidInput(f"token id {token_id} out of range [0, {len(self.tokens)})")
        return self.tokens[token_id]

    def encode(self, text: str) -> list[int]:
        """Greedy longest-match tokenization of ``text`` into token ids."""
        ids: list[int] = []
        pos = 0
        while pos < len(text):
            match = None
            for length in range(min(self._max_token_len, len(text) - pos), 0, -1):
                candidate = text[pos : pos + length]
                hit = self._index.get(candidate)
                if hit is not None:
                    match = (hit, length)
                    break
            if match is None:
                raise InvalidInput(
                    f"cannot tokenize {text[pos]!r} at position {pos}: no matching token"
                )
            ids.append(match[0])
            pos += match[1]
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.token_of(i) for i in ids)

    def hash_hex(self) -> str:
        """SHA-256 of the canonical JSON array of token strings."""
        payload = json.dumps(list(self.tokens), ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ConstraintSet:
    """Set of allowed token ids. Everything outside it gets penalized."""

    allowed: frozenset[int]

    def __post_init__(self):
        if not self.allowed:
            raise InvalidInput("constraint set is empty")
        if any((not isinstance(i, (int, np.integer))) or i < 0 for i in self.allowed):
            raise InvalidInput("constraint set must contain nonnegative token ids")
        object.__setattr__(self, "allowed", frozenset(int(i) for i in self.allowed))

    @classmethod
    def of(cls, ids: Iterable[int]) -> "ConstraintSet":
        return cls(frozenset(ids))

    @classmethod
    def from_tokens(cls, vocabulary: Vocabulary, tokens: Iterable[str]) -> "ConstraintSet":
        return cls(frozenset(vocabulary.id_of(t) for t in tokens))

    @classmethod
    def full(cls, size: int) -> "ConstraintSet":
        return cls(frozenset(range(size)))

    def check_bounds(self, vocab_size: int) -> None:
        worst = max(self.allowed)
        if worst >= vocab_size:
            raise InvalidInput(f"constraint id {worst} out of range [0, {vocab_size})")

    def mask(self, vocab_size: int) -> np.ndarray:
        self.check_bounds(vocab_size)
        m = np.zeros(vocab_size, dtype=bool)
        m[list(self.allowed)] = True
        return m


@dataclass(frozen=True)
class Penalty:
    """Uniform penalty for disallowed tokens: a finite value or the hard mask.

    ``gamma=None`` represents the hard mask (the infinite-penalty limit):
    disallowed scores become exactly -inf instead of a large negative float.
    """

    gamma: float | None

    def __post_init__(self):
        if self.gamma is not None:
            g = float(self.gamma)
            if not np.isfinite(g) or g < 0:
                raise InvalidConfig(f"finite penalty must be >= 0, got {self.gamma}")
            object.__setattr__(self, "gamma", g)

    @property
    def is_hard(self) -> bool:
        return self.gamma is None

    @classmethod
    def hard(cls) -> "Penalty":
        return cls(None)

    @classmethod
    def finite(cls, gamma: float) -> "Penalty":
        if gamma is None:
            raise InvalidConfig("finite penalty requires a value")
        return cls(gamma)

    @classmethod
    def parse(cls, text: str) -> "Penalty":
        if text.strip().lower() == "hard":
            return cls.hard()
        try:
            return cls.finite(float(text))
        except ValueError:
            raise InvalidConfig(f"penalty must be a nonnegative float or 'hard', got {text!r}") from None

    def __str__(self) -> str:
        return "hard" if self.is_hard else str(self.gamma)


HARD = Penalty.hard()


@dataclass(frozen=True)
class DecodeConfig:
    """Everything a decode run needs besides the provider and the prompt.

    ``feedback`` picks which token is appended to the context between steps:
    ``constrained`` (default) feeds the argmax of the penalized, scaled step
    scores; ``unconstrained`` feeds the argmax of the raw step distribution.
    """

    constraint: ConstraintSet
    penalty: Penalty = HARD
    tau: float = 1.0
    steps: int = 1
    select_n: int = 1
    debug: bool = False
    feedback: str = "constrained"

    def validate(self, vocab_size: int) -> None:
        if not (isinstance(self.tau, (int, float)) and np.isfinite(self.tau) and self.tau > 0):
            raise InvalidConfig(f"temperature must be a positive finite number, got {self.tau}")
        if not (isinstance(self.steps, int) and self.steps >= 1):
            raise InvalidConfig(f"steps must be an integer >= 1, got {self.steps}")
        if not (isinstance(self.select_n, int) and 1 <= self.select_n <= vocab_size):
            raise InvalidConfig(
                f"select_n must be in [1, {vocab_size}], got {self.select_n}"
            )
        if self.feedback not in FEEDBACK_MODES:
            raise InvalidConfig(f"feedback must be one of {FEEDBACK_MODES}, got {self.feedback!r}")
        self.constraint.check_bounds(vocab_size)


@dataclass(frozen=True)
class ScoreTable:
    """Cumulative scores, one extended real per token, plus a step counter."""

    values: np.ndarray
    steps_done: int = 0

    def __post_init__(self):
        arr = _as_vector(self.values, "score table").copy()
        _require_extended(arr, "score table")
        if self.steps_done < 0:
            raise InvalidInput("steps_done must be >= 0")
        if self.steps_done == 0 and (arr != 0.0).any():
            raise InvalidInput("a score table with steps_done=0 must be all zeros")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls, size: int) -> "ScoreTable":
        return cls(np.zeros(size, dtype=np.float64), steps_done=0)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class StepTrace:
    """One step's token-change record for the debugging trace."""

    step: int
    unconstrained_top: int
    constrained_top: int
    changed: bool
    penalized_count: int

    def __post_init__(self):
        if self.changed != (self.unconstrained_top != self.constrained_top):
            raise InvalidInput("trace 'changed' flag inconsistent with its argmax pair")


@dataclass(frozen=True)
class TraceSummary:
    changed_steps: int
    changes: tuple[tuple[int, int, int], ...]  # (step, from_token, to_token)


@dataclass(frozen=True)
class DecodeResult:
    selected: tuple[int, ...]
    final_scores: ScoreTable
    traces: tuple[StepTrace, ...]
    emitted_context: tuple[int, ...]

    def to_json_dict(self, vocabulary: Vocabulary, constraint: ConstraintSet | None = None) -> dict:
        """Documented JSON shape: selected ids with token strings and scores,
        final scores for allowed tokens (finite entries when no constraint is
        given), the emitted context, and any step traces."""
        scores = self.final_scores.values
        if constraint is not None:
            score_ids = sorted(constraint.allowed)
        else:
            score_ids = [i for i in range(len(scores)) if np.isfinite(scores[i])]
        return {
            "selected": [
                {"id": i, "token": vocabulary.token_of(i), "score": float(scores[i])}
                for i in self.selected
            ],
            "final_scores": [
                {"id": i, "token": vocabulary.token_of(i), "score": float(scores[i])}
                for i in score_ids
            ],
            "steps": self.final_scores.steps_done,
            "emitted_ids": list(self.emitted_context),
            "emitted_text": vocabulary.decode(self.emitted_context),
            "traces": [
                {
                    "step": tr.step,
                    "unconstrained_top": tr.unconstrained_top,
                    "constrained_top": tr.constrained_top,
                    "changed": tr.changed,
                    "penalized_count": tr.penalized_count,
                }
                for tr in self.traces
            ],
        }


@dataclass
class OpCounter:
    """Counts elementary per-entry score operations, one bucket per stage.

    Each decode step contributes exactly the vocabulary size to every bucket,
    so a full decode totals 4*T*V elementary operations.
    """

    softmax_ops: int = 0
    penalty_ops: int = 0
    scale_ops: int = 0
    accumulate_ops: int = 0

    @property
    def total(self) -> int:
        return self.softmax_ops + self.penalty_ops + self.scale_ops + self.accumulate_ops


def softmax(logits) -> np.ndarray:
    """Normalize finite logits into a probability vector.

    Computed with max-subtraction, which is exact under shift invariance and
    keeps the arithmetic finite for any float64 input.
    """
    arr = _as_vector(logits, "logit vector")
    _require_finite(arr, "logit vector")
    shifted = arr - arr.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def _check_probs(probs) -> np.ndarray:
    arr = _as_vector(probs, "probability vector")
    _require_finite(arr, "probability vector")
    if (arr <= 0).any():
        raise InvalidInput("probability vector entries must be strictly positive")
    if abs(arr.sum() - 1.0) > 1e-9:
        raise InvalidInput(f"probability vector sums to {arr.sum()!r}, not 1")
    return arr


def apply_penalty(probs, constraint: ConstraintSet, penalty: Penalty) -> np.ndarray:
    """Subtract the penalty from (or hard-mask) every disallowed token.

    Allowed entries pass through untouched and nothing is re-normalized, so
    the result is a score vector, not a distribution; finite penalties can
    leave negative entries and those are carried as-is.
    """
    arr = _check_probs(probs)
    allowed_mask = constraint.mask(arr.size)
    out = arr.copy()
    if penalty.is_hard:
        out[~allowed_mask] = -np.inf
    else:
        out[~allowed_mask] -= penalty.gamma
    return out


def temperature_scale(scores, tau: float) -> np.ndarray:
    """Divide every finite score by ``tau``; -inf entries stay -inf."""
    if not (isinstance(tau, (int, float)) and np.isfinite(tau) and tau > 0):
        raise InvalidConfig(f"temperature must be a positive finite number, got {tau}")
    arr = _as_vector(scores, "step scores")
    _require_extended(arr, "step scores")
    return arr / float(tau)


def accumulate(table: ScoreTable, step_scores) -> ScoreTable:
    """Add one step's scores into the running table. -inf is absorbing."""
    arr = _as_vector(step_scores, "step scores")
    _require_extended(arr, "step scores")
    if arr.size != len(table):
        raise InvalidInput(
            f"length mismatch: table has {len(table)} entries, step scores {arr.size}"
        )
    return ScoreTable(table.values + arr, steps_done=table.steps_done + 1)


def select_top_n(table, n: int) -> list[int]:
    """Token ids with the highest final scores, descending, ties to lowest id.

    Tokens scored -inf are never selected; if fewer than ``n`` finite-scored
    tokens exist the selection fails instead of padding.
    """
    values = table.values if isinstance(table, ScoreTable) else _as_vector(table, "score table")
    _require_extended(values, "score table")
    if not (isinstance(n, int) and n >= 1):
        raise InvalidConfig(f"selection size must be an integer >= 1, got {n}")
    if n > values.size:
        raise InvalidConfig(f"selection size {n} exceeds vocabulary size {values.size}")
    finite = int(np.isfinite(values).sum())
    if finite < n:
        raise InsufficientCandidates(
            f"requested {n} tokens but only {finite} have finite scores"
        )
    ids = np.arange(values.size)
    # lexsort: last key is primary; -values ascending == values descending.
    order = np.lexsort((ids, -values))
    return [int(i) for i in order[:n]]


def decode(provider, prompt: Sequence[int], config: DecodeConfig, counter: OpCounter | None = None) -> DecodeResult:
    """Run the full constrained decode loop against a logit provider.

    Each of the ``config.steps`` steps asks the provider for logits on the
    current context, pushes them through softmax / penalty / temperature,
    accumulates the result, and feeds the per-step argmax (see
    ``config.feedback``) back into the context. Provider failures are
    re-raised as :class:`ProviderError` carrying the 1-based step index.
    """
    vocab_size = len(provider.vocabulary)
    config.validate(vocab_size)
    for tok in prompt:
        if not 0 <= int(tok) < vocab_size:
            raise InvalidInput(f"prompt token id {tok} out of range [0, {vocab_size})")

    context = [int(t) for t in prompt]
    table = ScoreTable.zeros(vocab_size)
    traces: list[StepTrace] = []
    emitted: list[int] = []
    penalized_count = vocab_size - len(config.constraint.allowed)

    for step in range(1, config.steps + 1):
        try:
            logits = np.asarray(provider.next_logits(context), dtype=np.float64)
        except ProviderError as exc:
            exc.step = step
            raise
        except Exception as exc:
            raise ProviderError(f"provider failed: {exc}", step=step) from exc
        if logits.shape != (vocab_size,) or not np.isfinite(logits).all():
            raise ProviderError(
                f"provider returned an invalid logit vector (shape {logits.shape})", step=step
            )

        probs = softmax(logits)
        step_scores = temperature_scale(
            apply_penalty(probs, config.constraint, config.penalty), config.tau
        )
        table = accumulate(table, step_scores)
        if counter is not None:
            counter.softmax_ops += vocab_size
            counter.penalty_ops += vocab_size
            counter.scale_ops += vocab_size
            counter.accumulate_ops += vocab_size

        unconstrained_top = int(np.argmax(probs))
        constrained_top = int(np.argmax(step_scores))
        if config.debug:
            traces.append(
                StepTrace(
                    step=step,
                    unconstrained_top=unconstrained_top,
                    constrained_top=constrained_top,
                    changed=unconstrained_top != constrained_top,
                    penalized_count=penalized_count,
                )
            )
        fed = constrained_top if config.feedback == "constrained" else unconstrained_top
        context.append(fed)
        emitted.append(fed)

    selected = select_top_n(table, config.select_n)
    return DecodeResult(
        selected=tuple(selected),
        final_scores=table,
        traces=tuple(traces),
        emitted_context=tuple(emitted),
    )


def trace_token_changes(result: DecodeResult) -> TraceSummary:
    """Summarize the steps where the constraint changed the argmax token."""
    if not result.traces:
        raise TraceUnavailable("decode ran with debug off; no traces recorded")
    changes = tuple(
        (tr.step, tr.unconstrained_top, tr.constrained_top)
        for tr in result.traces
        if tr.changed
    )
    return TraceSummary(changed_steps=len(changes), changes=changes)
