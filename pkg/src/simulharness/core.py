"""Core domain types for streaming speech translation.

This module defines the vocabulary the rest of the package speaks: feature
frames and utterances, subword tokens and the two word-boundary conventions,
hypotheses, and the line-delimited JSON manifest format used to describe
evaluation corpora.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

logger = logging.getLogger(__name__)

#: Suffix marking "this token continues the current word" (BPE-style).
BPE_CONTINUATION = "@@"
#: Prefix marking "this token starts a new word" (SentencePiece-style).
SP_WORD_START = "▁"


class Convention(Enum):
    """How a subword vocabulary marks word boundaries.

    BPE_SUFFIX: a token ending in ``@@`` continues the current word; a word is
    complete as soon as a token without the suffix arrives.

    SP_PREFIX: a token starting with ``▁`` opens a new word; a word is
    complete only once the *next* word's opening token (or an explicit end of
    sequence) has been seen.
    """

    BPE_SUFFIX = "bpe"
    SP_PREFIX = "sp"


@dataclass(frozen=True)
class SubwordToken:
    """One subword unit plus the boundary convention it was produced under."""

    surface: str
    convention: Convention


@dataclass(frozen=True)
class Frame:
    """A single feature frame covering ``duration_ms`` of source signal."""

    features: tuple[float, ...]
    duration_ms: int = 10

    def __post_init__(self) -> None:
        if not isinstance(self.features, tuple):
            object.__setattr__(
                self, "features", tuple(float(x) for x in self.features)
            )
        if self.duration_ms <= 0:
            raise ValueError("frame duration_ms must be positive")


@dataclass(frozen=True)
class Utterance:
    """A source utterance: frames plus optional transcript and reference.

    ``word_end_frames`` carries oracle alignment metadata (the index of each
    source word's final frame) when the utterance was built synthetically; it
    is ``None`` for real data.
    """

    id: str
    frames: tuple[Frame, ...]
    duration_ms: int | None = None
    transcript: tuple[str, ...] | None = None
    reference: tuple[str, ...] = ()
    word_end_frames: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.transcript is not None:
            object.__setattr__(self, "transcript", tuple(self.transcript))
        object.__setattr__(self, "reference", tuple(self.reference))
        if self.word_end_frames is not None:
            object.__setattr__(
                self, "word_end_frames", tuple(self.word_end_frames)
            )
        total = sum(f.duration_ms for f in self.frames)
        if self.duration_ms is None:
            object.__setattr__(self, "duration_ms", total)
        elif self.duration_ms != total:
            raise ValueError(
                f"duration_ms={self.duration_ms} but frames sum to {total}"
            )
        if len({f.duration_ms for f in self.frames}) > 1:
            raise ValueError("all frames in an utterance must share a duration")
        if len({len(f.features) for f in self.frames}) > 1:
            raise ValueError(
                "all frames in an utterance must share a feature dimension"
            )

    @property
    def frame_ms(self) -> int | None:
        """Duration of each frame, or None for a frameless utterance."""
        return self.frames[0].duration_ms if self.frames else None

    @property
    def n_frames(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class Hypothesis:
    """A committed target-side output with per-word emission delays.

    ``ideal_delays_ms[i]`` is the amount of source (in ms) that had been read
    when word ``i`` was emitted; ``wall_delays_ms[i]`` additionally includes
    the model compute time accumulated by that point.  ``truncated`` is set
    when generation was stopped by a safety cap rather than by the model.
    """

    tokens: tuple[SubwordToken, ...]
    words: tuple[str, ...]
    ideal_delays_ms: tuple[int, ...] = ()
    wall_delays_ms: tuple[float, ...] = ()
    truncated: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "words", tuple(str(w) for w in self.words))
        object.__setattr__(
            self, "ideal_delays_ms", tuple(int(d) for d in self.ideal_delays_ms)
        )
        object.__setattr__(
            self, "wall_delays_ms", tuple(float(d) for d in self.wall_delays_ms)
        )
        if not (
            len(self.words)
            == len(self.ideal_delays_ms)
            == len(self.wall_delays_ms)
        ):
            raise ValueError("one delay pair is required per emitted word")


def default_max_target_words(utterance: Utterance) -> int:
    """Safety cap on generated words: twice the source length plus slack."""
    if utterance.transcript:
        return 2 * len(utterance.transcript) + 16
    if utterance.reference:
        return 2 * len(utterance.reference) + 16
    return 64


# ---------------------------------------------------------------------------
# Subword <-> word bookkeeping
# ---------------------------------------------------------------------------


def word_spans(
    tokens: Sequence[SubwordToken],
    convention: Convention | None = None,
    *,
    eos: bool = False,
) -> tuple[list[tuple[str, int]], bool]:
    """Group a token sequence into complete words.

    Returns ``(spans, has_trailing_partial)`` where each span is
    ``(word, last_token_index)`` for a *complete* word.  With ``eos=True`` a
    trailing in-progress word is flushed as complete (the sequence has ended,
    so nothing further can extend it).  Words that strip to the empty string
    are dropped.
    """
    if convention is None:
        if not tokens:
            raise ValueError("convention is required for an empty sequence")
        convention = tokens[0].convention
    for tok in tokens:
        if tok.convention is not convention:
            raise ValueError("mixed subword conventions in one sequence")

    spans: list[tuple[str, int]] = []

    if convention is Convention.BPE_SUFFIX:
        pieces: list[str] = []
        for i, tok in enumerate(tokens):
            surface = tok.surface
            if surface.endswith(BPE_CONTINUATION):
                pieces.append(surface[: -len(BPE_CONTINUATION)])
                continue
            pieces.append(surface)
            word = "".join(pieces)
            if word:
                spans.append((word, i))
            pieces = []
        partial = bool(pieces)
        if partial and eos:
            word = "".join(pieces)
            if word:
                spans.append((word, len(tokens) - 1))
            partial = False
        return spans, partial

    # SP_PREFIX: a word stays open until the next word-start token arrives.
    word_open = False
    pieces = []
    last_index = -1
    for i, tok in enumerate(tokens):
        surface = tok.surface
        if surface.startswith(SP_WORD_START):
            if word_open:
                word = "".join(pieces)
                if word:
                    spans.append((word, last_index))
            word_open = True
            pieces = [surface[len(SP_WORD_START) :]]
        else:
            # a leading continuation token opens a word implicitly
            word_open = True
            pieces.append(surface)
        last_index = i
    partial = word_open
    if word_open and eos:
        word = "".join(pieces)
        if word:
            spans.append((word, last_index))
        partial = False
    return spans, partial


def words_from_subwords(
    tokens: Sequence[SubwordToken],
    convention: Convention | None = None,
    *,
    eos: bool = False,
) -> tuple[list[str], bool]:
    """Detokenize subwords into ``(complete_words, has_trailing_partial)``."""
    spans, partial = word_spans(tokens, convention, eos=eos)
    return [word for word, _ in spans], partial


def subword_tokens(
    words: Sequence[str],
    convention: Convention,
    piece_len: int | None = None,
) -> list[SubwordToken]:
    """Split words into subword tokens under a boundary convention.

    ``piece_len`` bounds the characters per piece (``None`` keeps each word a
    single token).  Round-trips through :func:`words_from_subwords` (pass
    ``eos=True`` for SP_PREFIX, whose final word otherwise stays open).
    """
    if piece_len is not None and piece_len < 1:
        raise ValueError("piece_len must be at least 1")
    tokens: list[SubwordToken] = []
    for word in words:
        if not word:
            raise ValueError("cannot tokenize an empty word")
        if BPE_CONTINUATION in word or SP_WORD_START in word:
            raise ValueError(f"word {word!r} contains a boundary marker")
        size = piece_len or len(word)
        pieces = [word[i : i + size] for i in range(0, len(word), size)]
        if convention is Convention.BPE_SUFFIX:
            for j, piece in enumerate(pieces):
                if j < len(pieces) - 1:
                    piece += BPE_CONTINUATION
                tokens.append(SubwordToken(piece, convention))
        else:
            for j, piece in enumerate(pieces):
                if j == 0:
                    piece = SP_WORD_START + piece
                tokens.append(SubwordToken(piece, convention))
    return tokens


# ---------------------------------------------------------------------------
# Stream segmentation
# ---------------------------------------------------------------------------


def segment_stream(
    utterance: Utterance, step_ms: int
) -> list[tuple[Frame, ...]]:
    """Cut an utterance into read-sized chunks of ``step_ms``.

    The chunks partition the frames in order; only the last chunk may be
    shorter than the step.  ``step_ms`` must be a positive multiple of the
    frame duration.
    """
    if step_ms <= 0:
        raise ValueError("step_ms must be positive")
    frames = utterance.frames
    if not frames:
        return []
    frame_ms = frames[0].duration_ms
    if step_ms % frame_ms:
        raise ValueError(
            f"step_ms={step_ms} is not a multiple of the "
            f"{frame_ms} ms frame duration"
        )
    per_chunk = step_ms // frame_ms
    return [frames[i : i + per_chunk] for i in range(0, len(frames), per_chunk)]


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


class ManifestError(ValueError):
    """A corpus manifest could not be parsed."""


_REQUIRED_FIELDS = ("id", "frames", "frame_ms", "reference")


@dataclass(frozen=True)
class Manifest:
    """An ordered corpus of utterances with unique ids."""

    utterances: tuple[Utterance, ...]
    path: Path | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "utterances", tuple(self.utterances))
        seen: set[str] = set()
        for utt in self.utterances:
            if utt.id in seen:
                raise ManifestError(f"duplicate id {utt.id!r}")
            seen.add(utt.id)

    def __iter__(self):
        return iter(self.utterances)

    def __len__(self) -> int:
        return len(self.utterances)

    def __getitem__(self, index):
        return self.utterances[index]


def _word_list(value: object, field: str, lineno: int) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(
        isinstance(w, str) for w in value
    ):
        raise ManifestError(
            f"field {field!r} must be a list of strings at line {lineno}"
        )
    return tuple(value)


def load_manifest(path: str | Path) -> Manifest:
    """Load a line-delimited JSON manifest.

    Each line is an object with fields ``id``, ``frames`` (an inline array of
    feature rows, or a path -- relative to the manifest -- to a JSON file
    holding one), ``frame_ms``, ``reference``, and optionally ``transcript``.
    Blank lines are skipped.  Any malformed line raises
    :class:`ManifestError` naming the line number.
    """
    path = Path(path)
    utterances: list[Utterance] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(
                    f"malformed JSON at line {lineno}: {exc.msg}"
                ) from exc
            if not isinstance(record, dict):
                raise ManifestError(f"expected an object at line {lineno}")
            for key in _REQUIRED_FIELDS:
                if key not in record:
                    raise ManifestError(
                        f"missing field {key!r} at line {lineno}"
                    )
            utt_id = record["id"]
            if not isinstance(utt_id, str) or not utt_id:
                raise ManifestError(
                    f"field 'id' must be a non-empty string at line {lineno}"
                )
            if utt_id in seen:
                raise ManifestError(
                    f"duplicate id {utt_id!r} at line {lineno}"
                )
            seen.add(utt_id)
            frame_ms = record["frame_ms"]
            if not isinstance(frame_ms, int) or frame_ms <= 0:
                raise ManifestError(
                    f"field 'frame_ms' must be a positive integer "
                    f"at line {lineno}"
                )
            raw_frames = record["frames"]
            if isinstance(raw_frames, str):
                frames_path = path.parent / raw_frames
                try:
                    raw_frames = json.loads(
                        frames_path.read_text(encoding="utf-8")
                    )
                except FileNotFoundError as exc:
                    raise ManifestError(
                        f"frames file {record['frames']!r} not found "
                        f"at line {lineno}"
                    ) from exc
                except json.JSONDecodeError as exc:
                    raise ManifestError(
                        f"malformed frames file {record['frames']!r} "
                        f"at line {lineno}: {exc.msg}"
                    ) from exc
            if not isinstance(raw_frames, list):
                raise ManifestError(
                    f"field 'frames' must be an array of feature rows "
                    f"at line {lineno}"
                )
            try:
                frames = tuple(
                    Frame(tuple(float(x) for x in row), frame_ms)
                    for row in raw_frames
                )
            except (TypeError, ValueError) as exc:
                raise ManifestError(
                    f"bad frame row at line {lineno}: {exc}"
                ) from exc
            transcript = record.get("transcript")
            if transcript is not None:
                transcript = _word_list(transcript, "transcript", lineno)
            reference = _word_list(record["reference"], "reference", lineno)
            try:
                utterances.append(
                    Utterance(
                        id=utt_id,
                        frames=frames,
                        transcript=transcript,
                        reference=reference,
                    )
                )
            except ValueError as exc:
                raise ManifestError(f"{exc} at line {lineno}") from exc
    return Manifest(tuple(utterances), path=path)
