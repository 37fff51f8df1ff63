"""Source-word detection for streaming input.

Two strategies decide how many complete source words have been heard so far:

* fixed: assume a constant speaking rate and divide elapsed time by an
  average word duration;
* adaptive: greedily decode a CTC posterior over the received frames,
  collapse it into subword tokens, and count the complete words among them.

The adaptive counter is robust to silence -- appended blank frames add no
tokens -- while the fixed counter keeps ticking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .core import Convention, SubwordToken, word_spans


class DetectionKind(Enum):
    FIXED = "fixed"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class CtcPosterior:
    """Per-frame scores over a CTC vocabulary.

    ``scores`` has shape ``(n_frames, len(vocab))``; ``vocab`` maps column
    indices to token surfaces; ``blank_id`` names the blank column.
    """

    scores: np.ndarray
    vocab: tuple[str, ...]
    blank_id: int = 0

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=float)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "vocab", tuple(self.vocab))
        if scores.ndim != 2:
            raise ValueError("scores must be a 2-D (frames x vocab) array")
        if scores.shape[1] != len(self.vocab):
            raise ValueError(
                f"vocab size {len(self.vocab)} does not match "
                f"{scores.shape[1]} score columns"
            )
        if not 0 <= self.blank_id < len(self.vocab):
            raise ValueError("blank_id must index the vocabulary")

    @property
    def n_frames(self) -> int:
        return int(self.scores.shape[0])


@dataclass(frozen=True)
class DetectionResult:
    """How many complete source words are known, and where each one ended."""

    word_count: int
    word_end_frames: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "word_end_frames", tuple(int(f) for f in self.word_end_frames)
        )
        if self.word_count != len(self.word_end_frames):
            raise ValueError("word_count must match word_end_frames")
        if any(f < 0 for f in self.word_end_frames):
            raise ValueError("word_end_frames must be non-negative")
        if any(
            b <= a
            for a, b in zip(self.word_end_frames, self.word_end_frames[1:])
        ):
            raise ValueError("word_end_frames must be strictly increasing")


EMPTY_DETECTION = DetectionResult(0, ())


def fixed_word_count(
    elapsed_ms: float, avg_word_ms: int = 280, *, frame_ms: int = 10
) -> DetectionResult:
    """Count words by elapsed time at one word per ``avg_word_ms``.

    Word ``i`` (1-based) is assumed to end at time ``i * avg_word_ms``; the
    reported end frame is the frame containing that instant.
    """
    if avg_word_ms <= 0:
        raise ValueError("avg_word_ms must be positive")
    if frame_ms <= 0:
        raise ValueError("frame_ms must be positive")
    if avg_word_ms < frame_ms:
        # otherwise two assumed word ends could share one frame
        raise ValueError("avg_word_ms must be at least one frame long")
    if elapsed_ms < 0:
        raise ValueError("elapsed_ms must be non-negative")
    count = int(elapsed_ms // avg_word_ms)
    ends = tuple(
        math.ceil(avg_word_ms * (i + 1) / frame_ms) - 1 for i in range(count)
    )
    return DetectionResult(count, ends)


def ctc_greedy_collapse(
    posterior: CtcPosterior,
    convention: Convention = Convention.BPE_SUFFIX,
) -> list[tuple[SubwordToken, int]]:
    """Greedy CTC decode: per-frame argmax, collapse runs, drop blanks.

    Ties go to the lowest vocabulary index.  Each surviving token is paired
    with the index of the last frame of its collapsed run, so a duplicate
    separated by a blank stays distinct while a contiguous run merges.
    """
    if posterior.n_frames == 0:
        return []
    path = np.argmax(posterior.scores, axis=1).tolist()
    collapsed: list[tuple[SubwordToken, int]] = []
    previous: int | None = None
    for frame, index in enumerate(path):
        if index != previous:
            if previous is not None and previous != posterior.blank_id:
                collapsed.append(
                    (SubwordToken(posterior.vocab[previous], convention),
                     frame - 1)
                )
            previous = index
    if previous is not None and previous != posterior.blank_id:
        collapsed.append(
            (SubwordToken(posterior.vocab[previous], convention),
             len(path) - 1)
        )
    return collapsed


def adaptive_word_count(
    collapsed: Sequence[tuple[SubwordToken, int]],
    convention: Convention,
) -> DetectionResult:
    """Count the complete words in a collapsed CTC token stream.

    A trailing partial word does not count.  Each complete word's end frame
    is the last frame of its final token.
    """
    tokens = [token for token, _ in collapsed]
    spans, _partial = word_spans(tokens, convention) if tokens else ([], False)
    ends = tuple(collapsed[last_index][1] for _, last_index in spans)
    return DetectionResult(len(spans), ends)
