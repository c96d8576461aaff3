"""Logit providers: scripted tables and add-alpha smoothed n-gram models.

A provider owns a :class:`~tcd.core.Vocabulary` and maps a token-id context
to one logit vector per call. Providers here are immutable after
construction, deterministic, and safe for concurrent reads; the external
process-backed provider lives in :mod:`tcd.external`.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Vocabulary
from .errors import InvalidConfig, InvalidInput

PROMPT_SAFE_CHARS = string.printable


@dataclass(frozen=True)
class ProviderDescriptor:
    vocabulary: Vocabulary
    name: str
    deterministic: bool


class Provider:
    """Common provider surface: vocabulary, text codec, descriptor."""

    name = "provider"
    deterministic = True

    def __init__(self, vocabulary: Vocabulary):
        self.vocabulary = vocabulary

    @property
    def descriptor(self) -> ProviderDescriptor:
        return ProviderDescriptor(self.vocabulary, self.name, self.deterministic)

    def next_logits(self, context: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def encode(self, text: str) -> list[int]:
        return self.vocabulary.encode(text)

    def text_of(self, ids: Sequence[int]) -> str:
        return self.vocabulary.decode(ids)

    def _check_context(self, context: Sequence[int]) -> list[int]:
        size = len(self.vocabulary)
        out = []
        for tok in context:
            t = int(tok)
            if not 0 <= t < size:
                raise InvalidInput(f"context token id {t} out of range [0, {size})")
            out.append(t)
        return out


class TableProvider(Provider):
    """Scripted provider: context suffixes map to fixed logit vectors.

    The longest scripted suffix of the context wins; anything unmatched gets
    the default vector. Suffix keys are bounded so multi-step scripts stay
    concise.
    """

    name = "table"

    def __init__(
        self,
        vocabulary: Vocabulary,
        script: Mapping[Sequence[int], Sequence[float]] | None = None,
        default: Sequence[float] | None = None,
        max_suffix_len: int = 4,
    ):
        super().__init__(vocabulary)
        size = len(vocabulary)
        if max_suffix_len < 1:
            raise InvalidConfig(f"max_suffix_len must be >= 1, got {max_suffix_len}")
        self.max_suffix_len = max_suffix_len
        if default is None:
            default = np.zeros(size)
        self.default = self._check_vector(default, "default logit vector")
        self.script: dict[tuple[int, ...], np.ndarray] = {}
        for key, vector in (script or {}).items():
            key = tuple(int(t) for t in key)
            if not 1 <= len(key) <= max_suffix_len:
                raise InvalidInput(
                    f"script suffix {key} must have length in [1, {max_suffix_len}]"
                )
            for tok in key:
                if not 0 <= tok < size:
                    raise InvalidInput(f"script suffix token id {tok} out of range")
            self.script[key] = self._check_vector(vector, f"script vector for {key}")

    def _check_vector(self, vector, what: str) -> np.ndarray:
        arr = np.asarray(vector, dtype=np.float64)
        if arr.shape != (len(self.vocabulary),):
            raise InvalidInput(f"{what} must have length {len(self.vocabulary)}")
        if not np.isfinite(arr).all():
            raise InvalidInput(f"{what} contains a non-finite entry")
        arr = arr.copy()
        arr.setflags(write=False)
        return arr

    def next_logits(self, context: Sequence[int]) -> np.ndarray:
        ctx = self._check_context(context)
        for length in range(min(self.max_suffix_len, len(ctx)), 0, -1):
            hit = self.script.get(tuple(ctx[-length:]))
            if hit is not None:
                return hit.copy()
        return self.default.copy()


class NGramModel(Provider):
    """Add-alpha smoothed n-gram model over token ids.

    Counts every length-``order`` window of the training corpus; the
    conditional for a context is ``(count + alpha) / (total + alpha * V)``,
    so unseen contexts fall back to the uniform distribution. ``next_logits``
    returns the log of that conditional, which softmax inverts exactly.
    """

    def __init__(
        self,
        vocabulary: Vocabulary,
        order: int,
        counts: Mapping[tuple[int, ...], np.ndarray],
        alpha: float,
        mode: str = "tokens",
    ):
        super().__init__(vocabulary)
        if not (isinstance(order, int) and order >= 1):
            raise InvalidConfig(f"order must be an integer >= 1, got {order}")
        if not (np.isfinite(alpha) and alpha > 0):
            raise InvalidConfig(f"smoothing alpha must be > 0, got {alpha}")
        self.order = order
        self.alpha = float(alpha)
        self.mode = mode
        self.name = f"ngram{order}-{mode}"
        self.counts: dict[tuple[int, ...], np.ndarray] = {}
        for ctx, row in counts.items():
            arr = np.asarray(row, dtype=np.float64).copy()
            if arr.shape != (len(vocabulary),) or (arr < 0).any():
                raise InvalidInput(f"counts for context {ctx} must be {len(vocabulary)} nonnegative values")
            arr.setflags(write=False)
            self.counts[tuple(int(t) for t in ctx)] = arr

    @classmethod
    def train(
        cls,
        corpus: Iterable[Sequence[int]],
        vocabulary: Vocabulary,
        order: int = 2,
        alpha: float = 1.0,
        mode: str = "tokens",
    ) -> "NGramModel":
        if not (isinstance(order, int) and order >= 1):
            raise InvalidConfig(f"order must be an integer >= 1, got {order}")
        if not (np.isfinite(alpha) and alpha > 0):
            raise InvalidConfig(f"smoothing alpha must be > 0, got {alpha}")
        size = len(vocabulary)
        counts: dict[tuple[int, ...], np.ndarray] = {}
        sequences = 0
        for seq in corpus:
            sequences += 1
            ids = [int(t) for t in seq]
            for tok in ids:
                if not 0 <= tok < size:
                    raise InvalidInput(f"corpus token id {tok} out of range [0, {size})")
            for i in range(len(ids) - order + 1):
                ctx = tuple(ids[i : i + order - 1])
                target = ids[i + order - 1]
                row = counts.get(ctx)
                if row is None:
                    row = counts[ctx] = np.zeros(size, dtype=np.float64)
                row[target] += 1
        if sequences == 0:
            raise InvalidInput("training corpus is empty")
        return cls(vocabulary, order, counts, alpha, mode=mode)

    @classmethod
    def train_chars(
        cls,
        text: str,
        order: int = 3,
        alpha: float = 1.0,
        extra_chars: str = PROMPT_SAFE_CHARS,
    ) -> "NGramModel":
        """Character-level model; the vocabulary is the corpus characters
        plus ``extra_chars`` so arbitrary prompts stay encodable."""
        if not text:
            raise InvalidInput("training corpus is empty")
        vocab = Vocabulary(sorted(set(text) | set(extra_chars)))
        return cls.train([vocab.encode(text)], vocab, order=order, alpha=alpha, mode="char")

    @classmethod
    def train_words(cls, text: str, order: int = 2, alpha: float = 1.0) -> "NGramModel":
        """Whitespace-split word-level model."""
        words = text.split()
        if not words:
            raise InvalidInput("training corpus is empty")
        vocab = Vocabulary(sorted(set(words)))
        ids = [vocab.id_of(w) for w in words]
        return cls.train([ids], vocab, order=order, alpha=alpha, mode="word")

    def count(self, context: Sequence[int], token: int) -> float:
        row = self.counts.get(tuple(int(t) for t in context))
        return float(row[token]) if row is not None else 0.0

    def conditional(self, context: Sequence[int]) -> np.ndarray:
        """Closed-form add-alpha conditional distribution for the context."""
        ctx = self._check_context(context)
        key = tuple(ctx[-(self.order - 1):]) if self.order > 1 else ()
        if self.order > 1 and len(ctx) < self.order - 1:
            row = None
        else:
            row = self.counts.get(key)
        size = len(self.vocabulary)
        if row is None:
            row = np.zeros(size)
        return (row + self.alpha) / (row.sum() + self.alpha * size)

    def next_logits(self, context: Sequence[int]) -> np.ndarray:
        return np.log(self.conditional(context))

    def encode(self, text: str) -> list[int]:
        if self.mode == "word":
            return [self.vocabulary.id_of(w) for w in text.split()]
        return self.vocabulary.encode(text)

    def text_of(self, ids: Sequence[int]) -> str:
        if self.mode == "word":
            return " ".join(self.vocabulary.token_of(i) for i in ids)
        return self.vocabulary.decode(ids)
