"""Wait-k READ/WRITE decision engine over incremental models.

The engine alternates two actions.  READ consumes the next fixed-duration
chunk of source frames, re-encodes the received prefix, and re-runs word
detection over it (stateless: detection always looks at the whole prefix).
WRITE asks the decoder for tokens until exactly one more complete target word
exists, emits it, and records when it happened -- both in source time (how
much audio had been read) and on a wall clock that adds the model compute
time accumulated so far, so computation-aware delays dominate ideal ones by
construction.

The decision rule: WRITE once the source is finished, or once the number of
detected source words reaches ``k`` plus the number of words already emitted
-- i.e. the i-th target word waits for ``k + i - 1`` source words.

End-of-sequence handling while the source is still streaming is governed by
two switches.  With ``force_finish`` (default) a premature EOS is never
accepted: either the next-best non-EOS token is taken instead
(``avoid_eos_while_reading``) or the WRITE is abandoned and a READ forced.
Substituting the next-best token helps adaptive detection but degrades the
fixed schedule, so the substitution defaults on only for adaptive detection.
After the source has finished, EOS terminates generation normally.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .core import (
    Convention,
    Frame,
    Hypothesis,
    SubwordToken,
    Utterance,
    default_max_target_words,
    segment_stream,
    word_spans,
)
from .detection import (
    DetectionKind,
    DetectionResult,
    EMPTY_DETECTION,
    adaptive_word_count,
    ctc_greedy_collapse,
    fixed_word_count,
)
from .model import MAX_TOKENS_PER_WORD, ModelInterface

logger = logging.getLogger(__name__)

#: A lag long enough that any real source is exhausted before the first WRITE.
WAIT_FOREVER = 10**9

#: Default word cap when nothing about the utterance length is known.
FALLBACK_WORD_CAP = 64


class ActionKind(Enum):
    READ = "READ"
    WRITE = "WRITE"


@dataclass(frozen=True)
class PolicyConfig:
    """Inference-time policy settings.

    ``avoid_eos_while_reading=None`` selects the per-detection default
    (on for adaptive, off for fixed); see :meth:`effective_avoid_eos`.
    ``max_target_words=None`` derives the safety cap per utterance.
    """

    k: int = 3
    detection: DetectionKind = DetectionKind.FIXED
    step_ms: int = 280
    avg_word_ms: int = 280
    force_finish: bool = True
    avoid_eos_while_reading: bool | None = None
    max_target_words: int | None = None
    source_convention: Convention = Convention.BPE_SUFFIX

    def __post_init__(self) -> None:
        if isinstance(self.detection, str):
            object.__setattr__(self, "detection", DetectionKind(self.detection))
        if isinstance(self.source_convention, str):
            object.__setattr__(
                self, "source_convention", Convention(self.source_convention)
            )
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.step_ms <= 0:
            raise ValueError("step_ms must be positive")
        if self.avg_word_ms <= 0:
            raise ValueError("avg_word_ms must be positive")
        if self.max_target_words is not None and self.max_target_words < 1:
            raise ValueError("max_target_words must be at least 1")

    @property
    def effective_avoid_eos(self) -> bool:
        if self.avoid_eos_while_reading is not None:
            return self.avoid_eos_while_reading
        return self.detection is DetectionKind.ADAPTIVE

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "detection": self.detection.value,
            "step_ms": self.step_ms,
            "avg_word_ms": self.avg_word_ms,
            "force_finish": self.force_finish,
            "avoid_eos_while_reading": self.avoid_eos_while_reading,
            "max_target_words": self.max_target_words,
            "source_convention": self.source_convention.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyConfig":
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown policy fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SimulState:
    """Mutable per-utterance engine state (single-threaded)."""

    received_ms: int = 0
    source_finished: bool = False
    detected: DetectionResult = EMPTY_DETECTION
    emitted_words: int = 0
    target_tokens: list[SubwordToken] = field(default_factory=list)
    target_token_ids: list[int] = field(default_factory=list)
    eos_emitted: bool = False


@dataclass(frozen=True)
class Event:
    """One logged action: a READ of a chunk span or a WRITE of a word."""

    kind: ActionKind
    payload: object
    ideal_ms: int
    wall_ms: float

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "payload": self.payload,
            "ideal_ms": self.ideal_ms,
            "wall_ms": self.wall_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "Event":
        return cls(
            kind=ActionKind(data["kind"]),
            payload=data["payload"],
            ideal_ms=int(data["ideal_ms"]),
            wall_ms=float(data["wall_ms"]),
        )

    @classmethod
    def from_json(cls, line: str) -> "Event":
        return cls.from_dict(json.loads(line))


@dataclass(frozen=True)
class Emission:
    """A word the engine just committed, with its delay bookkeeping."""

    word: str
    ideal_ms: int
    wall_ms: float


@dataclass(frozen=True)
class WordOutcome:
    """Result of one WRITE attempt."""

    word: str | None
    eos: bool
    read_forced: bool = False
    truncated: bool = False


def decide(state: SimulState, config: PolicyConfig) -> ActionKind:
    """WRITE when the source is done or detection covers k + emitted words."""
    if state.source_finished:
        return ActionKind.WRITE
    if state.detected.word_count >= config.k + state.emitted_words:
        return ActionKind.WRITE
    return ActionKind.READ


def generate_word(
    model: ModelInterface,
    encoder_states: object,
    state: SimulState,
    config: PolicyConfig,
    *,
    call: Callable | None = None,
) -> WordOutcome:
    """Run decoder steps until one more complete target word exists.

    Appends committed tokens to ``state``; the engine decides what to do with
    the outcome.  ``call`` optionally wraps each model invocation (the engine
    uses it to meter compute time).
    """
    invoke = call or (lambda fn, *args: fn(*args))
    convention = model.target_convention
    appended = 0
    while True:
        spans, _ = word_spans(state.target_tokens, convention) \
            if state.target_tokens else ([], False)
        if len(spans) > state.emitted_words:
            return WordOutcome(spans[state.emitted_words][0], eos=False)
        if appended >= MAX_TOKENS_PER_WORD:
            logger.warning("word generation hit the per-write token cap")
            return WordOutcome(
                _flush_partial(state, convention), eos=True, truncated=True
            )
        scores = invoke(model.decoder_step, encoder_states, state.target_token_ids)
        next_id = int(np.argmax(scores))
        if next_id == model.eos_id:
            if state.source_finished or not config.force_finish:
                return WordOutcome(_flush_partial(state, convention), eos=True)
            if not config.effective_avoid_eos:
                return WordOutcome(None, eos=False, read_forced=True)
            masked = np.asarray(scores, dtype=float).copy()
            masked[model.eos_id] = -np.inf
            if masked.size < 2 or not np.isfinite(masked).any():
                return WordOutcome(None, eos=False, read_forced=True)
            next_id = int(np.argmax(masked))
        token = SubwordToken(model.target_vocab[next_id], convention)
        state.target_tokens.append(token)
        state.target_token_ids.append(next_id)
        appended += 1


def _flush_partial(state: SimulState, convention: Convention) -> str | None:
    """The word a trailing partial resolves to once the sequence ends."""
    if not state.target_tokens:
        return None
    spans, _ = word_spans(state.target_tokens, convention, eos=True)
    if len(spans) > state.emitted_words:
        return spans[state.emitted_words][0]
    return None


class SimulRunError(RuntimeError):
    """A model failure mid-run; carries the partial action log."""

    def __init__(self, message: str, events: Sequence[Event] = ()) -> None:
        super().__init__(message)
        self.events = tuple(events)


class SimulEngine:
    """Incremental wait-k engine: push source chunks, collect emissions.

    The in-process runner and the TCP service both drive utterances through
    this class, which is what makes their outputs identical given identical
    chunking.
    """

    def __init__(
        self,
        model: ModelInterface,
        config: PolicyConfig,
        *,
        frame_ms: int = 10,
        max_target_words: int | None = None,
    ) -> None:
        if frame_ms <= 0:
            raise ValueError("frame_ms must be positive")
        if config.step_ms % frame_ms:
            raise ValueError(
                f"step_ms={config.step_ms} is not a multiple of the "
                f"{frame_ms} ms frame duration"
            )
        self._model = model
        self._config = config
        self._frame_ms = frame_ms
        self._cap = (
            max_target_words
            or config.max_target_words
            or FALLBACK_WORD_CAP
        )
        self._frames: list[Frame] = []
        self._state = SimulState()
        self._encoder_states: object | None = None
        self._events: list[Event] = []
        self._emissions: list[Emission] = []
        self._compute_ms = 0.0
        self._truncated = False
        self._done = False

    # -- bookkeeping -------------------------------------------------------

    @property
    def done(self) -> bool:
        return self._done

    @property
    def state(self) -> SimulState:
        return self._state

    @property
    def model(self) -> ModelInterface:
        return self._model

    @property
    def events(self) -> list[Event]:
        return list(self._events)

    def _timed(self, fn, *args):
        start = time.perf_counter()
        try:
            return fn(*args)
        finally:
            self._compute_ms += (time.perf_counter() - start) * 1000.0

    def _wall_now(self) -> float:
        # wall time = source time consumed (waiting) + compute time so far
        return self._state.received_ms + self._compute_ms

    # -- driving -----------------------------------------------------------

    def push_chunk(self, frames: Sequence[Frame]) -> list[Emission]:
        """READ one chunk of frames, then WRITE whatever became due."""
        if self._done:
            raise RuntimeError("utterance already finished")
        if self._state.source_finished:
            raise RuntimeError("source already finished")
        frames = list(frames)
        if not frames:
            raise ValueError("a chunk must contain at least one frame")
        if any(f.duration_ms != self._frame_ms for f in frames):
            raise ValueError(
                f"all frames must last {self._frame_ms} ms"
            )
        start_ms = self._state.received_ms
        self._frames.extend(frames)
        self._state.received_ms += len(frames) * self._frame_ms
        self._refresh_detection()
        self._events.append(
            Event(
                ActionKind.READ,
                {"start_ms": start_ms, "end_ms": self._state.received_ms},
                self._state.received_ms,
                self._wall_now(),
            )
        )
        return self._drain_writes()

    def finish_source(self) -> list[Emission]:
        """Mark the source complete and WRITE out the rest of the target."""
        if self._done:
            return []
        if self._state.source_finished:
            raise RuntimeError("source already finished")
        self._state.source_finished = True
        if self._encoder_states is None:
            # nothing was ever read (empty source): encode the empty prefix
            self._refresh_detection()
        return self._drain_writes()

    def _refresh_detection(self) -> None:
        states, posterior = self._timed(
            self._model.encode_prefix, self._frames
        )
        self._encoder_states = states
        if self._config.detection is DetectionKind.FIXED:
            self._state.detected = fixed_word_count(
                self._state.received_ms,
                self._config.avg_word_ms,
                frame_ms=self._frame_ms,
            )
        else:
            collapsed = ctc_greedy_collapse(
                posterior, self._config.source_convention
            )
            self._state.detected = adaptive_word_count(
                collapsed, self._config.source_convention
            )

    def _drain_writes(self) -> list[Emission]:
        emitted: list[Emission] = []
        while not self._done and decide(self._state, self._config) is ActionKind.WRITE:
            outcome = generate_word(
                self._model,
                self._encoder_states,
                self._state,
                self._config,
                call=self._timed,
            )
            if outcome.word is not None:
                emission = Emission(
                    outcome.word, self._state.received_ms, self._wall_now()
                )
                self._state.emitted_words += 1
                self._emissions.append(emission)
                emitted.append(emission)
                self._events.append(
                    Event(
                        ActionKind.WRITE,
                        outcome.word,
                        emission.ideal_ms,
                        emission.wall_ms,
                    )
                )
            if outcome.truncated:
                self._truncated = True
            if outcome.eos:
                self._state.eos_emitted = True
                self._done = True
            elif outcome.read_forced:
                break
            elif self._state.emitted_words >= self._cap:
                logger.warning(
                    "hit the %d-word safety cap; forcing EOS", self._cap
                )
                self._truncated = True
                self._trim_to_last_complete_word()
                self._done = True
        return emitted

    def _trim_to_last_complete_word(self) -> None:
        """Drop a trailing partial word so tokens detokenize to the words."""
        spans, _ = word_spans(
            self._state.target_tokens, self._model.target_convention
        ) if self._state.target_tokens else ([], False)
        keep = spans[-1][1] + 1 if spans else 0
        del self._state.target_tokens[keep:]
        del self._state.target_token_ids[keep:]

    def result(self) -> tuple[Hypothesis, list[Event]]:
        if not self._done:
            raise RuntimeError("utterance still in progress")
        hypothesis = Hypothesis(
            tokens=tuple(self._state.target_tokens),
            words=tuple(e.word for e in self._emissions),
            ideal_delays_ms=tuple(e.ideal_ms for e in self._emissions),
            wall_delays_ms=tuple(e.wall_ms for e in self._emissions),
            truncated=self._truncated,
        )
        return hypothesis, list(self._events)


def run_simultaneous(
    model: ModelInterface,
    utterance: Utterance,
    config: PolicyConfig,
) -> tuple[Hypothesis, list[Event]]:
    """Run the wait-k loop over one utterance.

    Deterministic for deterministic models.  Raises :class:`SimulRunError`
    carrying the partial action log if the model fails mid-run.
    """
    chunks = segment_stream(utterance, config.step_ms)
    engine = SimulEngine(
        model,
        config,
        frame_ms=utterance.frame_ms or 10,
        max_target_words=(
            config.max_target_words or default_max_target_words(utterance)
        ),
    )
    try:
        for chunk in chunks:
            if engine.done:
                break
            engine.push_chunk(chunk)
        if not engine.done:
            engine.finish_source()
    except (ValueError, RuntimeError, KeyError) as exc:
        raise SimulRunError(str(exc), events=engine.events) from exc
    return engine.result()


def write_event_log(path, events: Sequence[Event]) -> None:
    """Write an action log as one JSON object per line."""
    with open(path, "w", encoding="utf-8") as handle:
        for event in events:
            handle.write(event.to_json() + "\n")


def read_event_log(path) -> list[Event]:
    with open(path, "r", encoding="utf-8") as handle:
        return [Event.from_json(line) for line in handle if line.strip()]
