"""Incremental encoder-decoder interface, a deterministic mock, and masks.

The engine only ever talks to a model through two calls: ``encode_prefix``
over the frames received so far (returning opaque encoder states plus a CTC
posterior over the source vocabulary) and ``decoder_step`` scoring the next
target token given those states and the committed target prefix.

:class:`LexiconMockModel` implements the contract with a word-for-word
dictionary so every behavior downstream -- detection, scheduling, latency,
wire transport -- has a closed-form expectation.  Synthetic utterances encode
each source word as a run of one-hot frames whose final frame is marked by a
doubled amplitude; that marker is what lets a lookahead-free encoder emit the
word id exactly at the word's last frame (and blank everywhere else) without
peeking at future frames.
"""

from __future__ import annotations

import json
import random
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (
    Convention,
    Frame,
    Hypothesis,
    SubwordToken,
    Utterance,
    default_max_target_words,
    subword_tokens,
    word_spans,
)
from .detection import CtcPosterior

#: Feature amplitude marking the final frame of a word (interior frames
#: carry amplitude 1.0; anything below the threshold reads as blank).
BOUNDARY_GAIN = 2.0
_BOUNDARY_THRESHOLD = 1.5

EOS_SURFACE = "</s>"
BLANK_SURFACE = "<blank>"

#: Hard ceiling on decoder steps per word, guarding non-terminating decoders.
MAX_TOKENS_PER_WORD = 256


class ModelInterface(ABC):
    """Contract for incremental translation models.

    Implementations must be deterministic given identical inputs and
    prefix-consistent: ``encode_prefix`` on a longer prefix must agree with
    its output on any shorter prefix, except possibly for the trailing
    ``lookahead_frames`` frames.  One evaluation thread calls a model at a
    time.
    """

    #: frames at the end of a prefix whose encoding may still change
    lookahead_frames: int = 0

    @property
    @abstractmethod
    def target_vocab(self) -> tuple[str, ...]:
        """Decoder vocabulary; positions match ``decoder_step`` scores."""

    @property
    @abstractmethod
    def eos_id(self) -> int:
        """Index of the end-of-sequence symbol in ``target_vocab``."""

    @property
    @abstractmethod
    def target_convention(self) -> Convention:
        """Boundary convention of the target subword vocabulary."""

    @abstractmethod
    def encode_prefix(
        self, frames: Sequence[Frame]
    ) -> tuple[object, CtcPosterior]:
        """Encode the source prefix received so far.

        :return: opaque encoder states plus the CTC posterior over the
            prefix (one score row per frame).
        """

    @abstractmethod
    def decoder_step(
        self, states: object, target_prefix_ids: Sequence[int]
    ) -> np.ndarray:
        """Score the next target token (EOS included) as a plain vector."""


@dataclass(frozen=True)
class _MockStates:
    n_frames: int
    visible_words: tuple[str, ...]


class LexiconMockModel(ModelInterface):
    """Deterministic word-for-word translator for tests and demos.

    Each source word maps to one or more target words; the translation of an
    utterance is the concatenation of the mapped words in source order.  The
    encoder reads the amplitude markers of synthetic frames, so the words it
    has "heard" are exactly those whose final frame arrived.  Scores are
    one-hot-like; ``eos_early`` instead puts 1.0 on EOS with the correct next
    token at 0.5, so EOS-suppression flags have an observable, deterministic
    effect.  ``compute_delay_ms`` sleeps in every model call, for
    computation-aware latency tests.

    Note one intentional limit: once every heard word is translated the model
    scores EOS highest -- just like a real system that believes it is done --
    so wait-1 with SentencePiece targets (which need the next word's opening
    token to close a word) will exercise the EOS-suppression paths.
    """

    def __init__(
        self,
        lexicon: Mapping[str, Sequence[str] | str],
        *,
        target_convention: Convention = Convention.BPE_SUFFIX,
        target_piece_len: int | None = None,
        eos_early: bool = False,
        compute_delay_ms: float = 0.0,
    ) -> None:
        if not lexicon:
            raise ValueError("lexicon must not be empty")
        self._lexicon: dict[str, tuple[str, ...]] = {}
        for source, targets in lexicon.items():
            if isinstance(targets, str):
                targets = (targets,)
            targets = tuple(targets)
            if not targets:
                raise ValueError(f"lexicon entry {source!r} maps to no words")
            self._lexicon[source] = targets
        self._target_convention = target_convention
        self._piece_len = target_piece_len
        self._eos_early = bool(eos_early)
        self._compute_delay_ms = float(compute_delay_ms)

        self._source_vocab = (BLANK_SURFACE,) + tuple(sorted(self._lexicon))
        pieces = sorted(
            {
                token.surface
                for targets in self._lexicon.values()
                for word in targets
                for token in subword_tokens(
                    [word], target_convention, target_piece_len
                )
            }
        )
        self._target_vocab = (EOS_SURFACE,) + tuple(pieces)
        self._target_index = {s: i for i, s in enumerate(self._target_vocab)}

    # -- vocabulary ------------------------------------------------------

    @property
    def target_vocab(self) -> tuple[str, ...]:
        return self._target_vocab

    @property
    def eos_id(self) -> int:
        return 0

    @property
    def target_convention(self) -> Convention:
        return self._target_convention

    @property
    def source_vocab(self) -> tuple[str, ...]:
        """CTC vocabulary: blank at index 0, then the source words."""
        return self._source_vocab

    @property
    def source_word_index(self) -> dict[str, int]:
        """Source word -> CTC index, for building matching synthetic frames."""
        return {w: i for i, w in enumerate(self._source_vocab) if i > 0}

    @property
    def source_words(self) -> tuple[str, ...]:
        return self._source_vocab[1:]

    def translate_words(self, source_words: Sequence[str]) -> list[str]:
        """Reference translation: concatenated mapped words, source order."""
        out: list[str] = []
        for word in source_words:
            if word not in self._lexicon:
                raise ValueError(f"source word {word!r} not in lexicon")
            out.extend(self._lexicon[word])
        return out

    # -- model calls -----------------------------------------------------

    def _sleep(self) -> None:
        if self._compute_delay_ms > 0:
            time.sleep(self._compute_delay_ms / 1000.0)

    def encode_prefix(
        self, frames: Sequence[Frame]
    ) -> tuple[_MockStates, CtcPosterior]:
        self._sleep()
        vocab_size = len(self._source_vocab)
        rows = np.zeros((len(frames), vocab_size))
        visible: list[str] = []
        for t, frame in enumerate(frames):
            if len(frame.features) != vocab_size:
                raise ValueError(
                    f"feature dim {len(frame.features)} does not match the "
                    f"source vocabulary size {vocab_size}"
                )
            features = np.asarray(frame.features)
            if features.size and float(features.max()) >= _BOUNDARY_THRESHOLD:
                index = int(features.argmax())
                if index == 0:
                    raise ValueError("blank channel cannot carry a word")
                rows[t, index] = 1.0
                visible.append(self._source_vocab[index])
            else:
                rows[t, 0] = 1.0
        posterior = CtcPosterior(rows, self._source_vocab, blank_id=0)
        return _MockStates(len(frames), tuple(visible)), posterior

    def _expected_ids(self, visible_words: Sequence[str]) -> list[int]:
        ids: list[int] = []
        for word in visible_words:
            for target in self._lexicon[word]:
                for token in subword_tokens(
                    [target], self._target_convention, self._piece_len
                ):
                    ids.append(self._target_index[token.surface])
        return ids

    def decoder_step(
        self, states: _MockStates, target_prefix_ids: Sequence[int]
    ) -> np.ndarray:
        self._sleep()
        expected = self._expected_ids(states.visible_words)
        scores = np.zeros(len(self._target_vocab))
        position = len(target_prefix_ids)
        if position >= len(expected):
            scores[self.eos_id] = 1.0
        elif self._eos_early:
            scores[self.eos_id] = 1.0
            scores[expected[position]] = 0.5
        else:
            scores[expected[position]] = 1.0
        return scores


def load_model_config(path: str | Path) -> LexiconMockModel:
    """Build a :class:`LexiconMockModel` from a JSON config file.

    Recognized keys: ``lexicon`` (required, word -> word or word list),
    ``target_convention`` ("bpe" or "sp"), ``target_piece_len``,
    ``eos_early``, ``compute_delay_ms``.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or "lexicon" not in data:
        raise ValueError("model config must be an object with a 'lexicon'")
    known = {
        "lexicon",
        "target_convention",
        "target_piece_len",
        "eos_early",
        "compute_delay_ms",
    }
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown model config keys: {sorted(unknown)}")
    return LexiconMockModel(
        data["lexicon"],
        target_convention=Convention(data.get("target_convention", "bpe")),
        target_piece_len=data.get("target_piece_len"),
        eos_early=bool(data.get("eos_early", False)),
        compute_delay_ms=float(data.get("compute_delay_ms", 0.0)),
    )


# ---------------------------------------------------------------------------
# Wait-k cross-attention masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttentionMask:
    """Boolean (n_target x n_frames) mask; each row is a frame prefix.

    ``no_boundaries`` flags a mask built without any word-end information
    (every row open).
    """

    allowed: np.ndarray
    no_boundaries: bool = False

    def __post_init__(self) -> None:
        allowed = np.asarray(self.allowed, dtype=bool)
        object.__setattr__(self, "allowed", allowed)
        if allowed.ndim != 2:
            raise ValueError("mask must be 2-D (targets x frames)")
        widths = allowed.sum(axis=1)
        if not np.array_equal(
            allowed, widths[:, None] > np.arange(allowed.shape[1])[None, :]
        ):
            raise ValueError("each mask row must be a contiguous frame prefix")
        if np.any(np.diff(widths) < 0):
            raise ValueError("mask rows must be nested (non-decreasing)")

    @property
    def row_widths(self) -> tuple[int, ...]:
        return tuple(int(w) for w in self.allowed.sum(axis=1))


def waitk_attention_mask(
    word_end_frames: Sequence[int],
    k: int,
    n_target: int,
    n_frames: int,
) -> AttentionMask:
    """Cross-attention mask realizing a wait-k schedule at training time.

    Target word ``i`` (0-based row) may attend to the frames up to and
    including the end of source word ``k + i`` (1-based); once the schedule
    runs past the last known word boundary the row opens to all frames.  With
    no boundaries at all every row is open and the mask is flagged.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if n_target <= 0 or n_frames <= 0:
        raise ValueError("n_target and n_frames must be positive")
    ends = tuple(int(e) for e in word_end_frames)
    if any(e < 0 or e >= n_frames for e in ends):
        raise ValueError("word end frames must lie inside the frame axis")
    if any(b <= a for a, b in zip(ends, ends[1:])):
        raise ValueError("word end frames must be strictly increasing")
    if not ends:
        return AttentionMask(
            np.ones((n_target, n_frames), dtype=bool), no_boundaries=True
        )
    allowed = np.zeros((n_target, n_frames), dtype=bool)
    for i in range(n_target):
        boundary = k + i - 1
        if boundary >= len(ends):
            allowed[i, :] = True
        else:
            allowed[i, : ends[boundary] + 1] = True
    return AttentionMask(allowed)


# ---------------------------------------------------------------------------
# Synthetic utterances
# ---------------------------------------------------------------------------


def build_synthetic_utterance(
    words: Sequence[str],
    per_word_ms: Sequence[int],
    *,
    frame_ms: int = 10,
    vocab: Mapping[str, int] | None = None,
    gaps_ms: Sequence[int] | None = None,
    reference: Sequence[str] = (),
    utt_id: str = "synthetic",
) -> Utterance:
    """Build a deterministic utterance with known word alignments.

    Each word becomes ``per_word_ms / frame_ms`` one-hot frames (final frame
    amplitude-marked); ``gaps_ms`` optionally inserts silence (all-zero
    frames) before the first word, between words, and after the last one
    (length ``len(words) + 1``).  ``vocab`` maps words to one-hot channels
    (>= 1; channel 0 is the blank) -- pass a model's ``source_word_index`` so
    the frames match its source vocabulary.  All durations must be positive
    multiples of ``frame_ms``.  The result carries the oracle word-end frame
    indices.
    """
    if len(words) != len(per_word_ms):
        raise ValueError("words and per_word_ms must have equal length")
    if gaps_ms is None:
        gaps_ms = (0,) * (len(words) + 1)
    if len(gaps_ms) != len(words) + 1:
        raise ValueError("gaps_ms must have len(words) + 1 entries")
    if vocab is None:
        vocab = {}
        for word in words:
            vocab.setdefault(word, len(vocab) + 1)
    if vocab and min(vocab.values()) < 1:
        raise ValueError("vocab channels start at 1 (0 is the blank)")
    dim = max(vocab.values(), default=0) + 1

    def check_multiple(duration: int, what: str) -> int:
        if duration % frame_ms:
            raise ValueError(
                f"{what} of {duration} ms is not a multiple of the "
                f"{frame_ms} ms frame duration"
            )
        return duration // frame_ms

    frames: list[Frame] = []
    ends: list[int] = []
    silence_row = (0.0,) * dim

    def add_silence(duration: int) -> None:
        if duration < 0:
            raise ValueError("silence durations must be non-negative")
        frames.extend(
            Frame(silence_row, frame_ms)
            for _ in range(check_multiple(duration, "a silence gap"))
        )

    add_silence(gaps_ms[0])
    for word, duration, gap in zip(words, per_word_ms, gaps_ms[1:]):
        if duration <= 0:
            raise ValueError("word durations must be positive")
        n = check_multiple(duration, f"word {word!r} duration")
        if word not in vocab:
            raise ValueError(f"word {word!r} missing from the vocab mapping")
        channel = vocab[word]
        interior = tuple(
            1.0 if j == channel else 0.0 for j in range(dim)
        )
        final = tuple(
            BOUNDARY_GAIN if j == channel else 0.0 for j in range(dim)
        )
        frames.extend([Frame(interior, frame_ms)] * (n - 1))
        frames.append(Frame(final, frame_ms))
        ends.append(len(frames) - 1)
        add_silence(gap)

    return Utterance(
        id=utt_id,
        frames=tuple(frames),
        transcript=tuple(words),
        reference=tuple(reference),
        word_end_frames=tuple(ends),
    )


def synthetic_corpus(
    model: LexiconMockModel,
    *,
    n_utts: int,
    rng: random.Random,
    min_words: int = 1,
    max_words: int = 12,
    per_word_ms: int = 280,
    frame_ms: int = 10,
    id_prefix: str = "utt",
) -> list[Utterance]:
    """Random utterances over a mock model's vocabulary, with references."""
    vocab = model.source_word_index
    source_words = sorted(vocab)
    corpus = []
    for n in range(n_utts):
        words = [
            rng.choice(source_words)
            for _ in range(rng.randint(min_words, max_words))
        ]
        corpus.append(
            build_synthetic_utterance(
                words,
                [per_word_ms] * len(words),
                frame_ms=frame_ms,
                vocab=vocab,
                reference=model.translate_words(words),
                utt_id=f"{id_prefix}-{n:04d}",
            )
        )
    return corpus


# ---------------------------------------------------------------------------
# Offline decoding
# ---------------------------------------------------------------------------


def offline_greedy_translate(
    model: ModelInterface,
    utterance: Utterance,
    *,
    max_target_words: int | None = None,
    beam: int = 1,
) -> Hypothesis:
    """Translate with the whole source visible (greedy argmax to EOS).

    Only ``beam=1`` is supported.  Every word's delay is the full source
    duration -- the offline system waits for everything before speaking.
    """
    if beam != 1:
        raise ValueError("only greedy decoding (beam=1) is supported")
    cap = max_target_words or default_max_target_words(utterance)
    states, _posterior = model.encode_prefix(utterance.frames)
    convention = model.target_convention

    ids: list[int] = []
    tokens: list[SubwordToken] = []
    truncated = False
    while True:
        scores = model.decoder_step(states, ids)
        next_id = int(np.argmax(scores))
        if next_id == model.eos_id:
            break
        ids.append(next_id)
        tokens.append(SubwordToken(model.target_vocab[next_id], convention))
        spans, _ = word_spans(tokens, convention)
        if len(spans) >= cap or len(ids) >= cap * 4 + MAX_TOKENS_PER_WORD:
            truncated = True
            # cut back to the last complete word so words == detok(tokens)
            tokens = tokens[: spans[-1][1] + 1] if spans else []
            break

    words = [w for w, _ in word_spans(tokens, convention, eos=True)[0]]
    duration = utterance.duration_ms
    return Hypothesis(
        tokens=tuple(tokens),
        words=tuple(words),
        ideal_delays_ms=(duration,) * len(words),
        wall_delays_ms=(float(duration),) * len(words),
        truncated=truncated,
    )
