"""Line-delimited JSON streaming protocol over TCP.

One translation session per connection.  The client opens with HELLO (policy
settings, frame duration, optionally a per-session model override), streams
CHUNK messages of feature frames, and closes the source with EOS_SRC.  The
server interleaves WORD messages exactly when the in-process engine would
emit them -- both sides are the same :class:`~simulharness.policy.SimulEngine`
-- and ends the target stream with EOS_TGT.  Any protocol violation or model
failure is answered with an ERROR message and the connection is closed.

Every message is one JSON object per line with fields ``kind``, ``session``,
``payload``, ``t_client_ms`` and ``t_server_ms`` (each side stamps its own
clock, milliseconds since its start of session; the other field is null).

Timing semantics: with as-fast-as-possible pacing the WORD messages carry the
engine's source-time delays, so ideal latency metrics reproduce a local run
exactly; the client's wall reading collapses onto the ideal one.  Honest
computation-aware readings over the wire require real-time pacing, where the
client forwards chunks on the source's own clock.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Sequence

from .core import Convention, Frame, Hypothesis, SubwordToken, Utterance
from .core import default_max_target_words, segment_stream
from .harness import CorpusResult, UtteranceResult
from .metrics import DelaySequence, aggregate_metrics
from .model import LexiconMockModel, ModelInterface
from .policy import PolicyConfig, SimulEngine

logger = logging.getLogger(__name__)

KIND_HELLO = "HELLO"
KIND_CHUNK = "CHUNK"
KIND_WORD = "WORD"
KIND_EOS_SRC = "EOS_SRC"
KIND_EOS_TGT = "EOS_TGT"
KIND_ERROR = "ERROR"

VALID_KINDS = frozenset(
    {KIND_HELLO, KIND_CHUNK, KIND_WORD, KIND_EOS_SRC, KIND_EOS_TGT, KIND_ERROR}
)

#: message kinds a client may send, per protocol state
_CLIENT_KINDS = frozenset({KIND_HELLO, KIND_CHUNK, KIND_EOS_SRC})


class ServiceError(RuntimeError):
    """The remote side reported an error or the transport failed."""


@dataclass(frozen=True)
class WireMessage:
    kind: str
    session: str
    payload: object = None
    t_client_ms: float | None = None
    t_server_ms: float | None = None

    def to_line(self) -> bytes:
        record = {
            "kind": self.kind,
            "session": self.session,
            "payload": self.payload,
            "t_client_ms": self.t_client_ms,
            "t_server_ms": self.t_server_ms,
        }
        return (json.dumps(record) + "\n").encode("utf-8")

    @classmethod
    def parse(cls, line: bytes | str) -> "WireMessage":
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed message: {exc.msg}") from exc
        if not isinstance(record, dict):
            raise ValueError("message must be a JSON object")
        kind = record.get("kind")
        if kind not in VALID_KINDS:
            raise ValueError(f"unknown kind {kind!r}")
        session = record.get("session")
        if not isinstance(session, str) or not session:
            raise ValueError("message must carry a session id")
        return cls(
            kind=kind,
            session=session,
            payload=record.get("payload"),
            t_client_ms=record.get("t_client_ms"),
            t_server_ms=record.get("t_server_ms"),
        )


# ---------------------------------------------------------------------------
# Server
# ---------------------------------------------------------------------------


class _SessionHandler(socketserver.StreamRequestHandler):
    """One streaming session: HELLO -> CHUNK* -> EOS_SRC -> close."""

    def handle(self) -> None:  # noqa: C901 - single protocol walk
        started = time.perf_counter()
        session_id: str | None = None
        engine: SimulEngine | None = None

        def send(kind: str, payload: object) -> None:
            message = WireMessage(
                kind=kind,
                session=session_id or "?",
                payload=payload,
                t_server_ms=(time.perf_counter() - started) * 1000.0,
            )
            self.wfile.write(message.to_line())
            self.wfile.flush()

        def fail(text: str) -> None:
            logger.warning("session %s: %s", session_id, text)
            send(KIND_ERROR, {"message": text})

        def send_emissions(emissions) -> None:
            for emission in emissions:
                send(
                    KIND_WORD,
                    {"word": emission.word, "ideal_ms": emission.ideal_ms},
                )

        def send_eos_tgt() -> None:
            hypothesis, _events = engine.result()
            send(
                KIND_EOS_TGT,
                {
                    "tokens": [t.surface for t in hypothesis.tokens],
                    "convention": engine.model.target_convention.value,
                    "n_words": len(hypothesis.words),
                    "truncated": hypothesis.truncated,
                },
            )

        frame_ms = 10
        try:
            for raw in self.rfile:
                try:
                    message = WireMessage.parse(raw)
                except ValueError as exc:
                    fail(f"protocol: {exc}")
                    return
                if message.kind not in _CLIENT_KINDS:
                    fail(f"protocol: unexpected {message.kind} from client")
                    return
                if engine is None:
                    if message.kind != KIND_HELLO:
                        fail("protocol: expected HELLO")
                        return
                    session_id = message.session
                    payload = message.payload or {}
                    try:
                        config = PolicyConfig.from_dict(
                            payload.get("config") or {}
                        )
                        frame_ms = int(payload.get("frame_ms", 10))
                        model = self.server.model
                        if payload.get("model"):
                            model = LexiconMockModel(
                                payload["model"]["lexicon"],
                                target_convention=Convention(
                                    payload["model"].get(
                                        "target_convention", "bpe"
                                    )
                                ),
                                target_piece_len=payload["model"].get(
                                    "target_piece_len"
                                ),
                            )
                        engine = SimulEngine(
                            model,
                            config,
                            frame_ms=frame_ms,
                            max_target_words=payload.get("max_target_words"),
                        )
                    except (ValueError, KeyError, TypeError) as exc:
                        fail(f"config: {exc}")
                        return
                    continue
                if message.session != session_id:
                    fail(f"protocol: unknown session {message.session!r}")
                    return
                if message.kind == KIND_HELLO:
                    fail("protocol: session already started")
                    return
                if engine.done:
                    fail("protocol: session already finished")
                    return
                try:
                    if message.kind == KIND_CHUNK:
                        rows = (message.payload or {}).get("frames")
                        if not isinstance(rows, list) or not rows:
                            fail("protocol: CHUNK carries no frames")
                            return
                        frames = [
                            Frame(tuple(float(x) for x in row), frame_ms)
                            for row in rows
                        ]
                        send_emissions(engine.push_chunk(frames))
                        if engine.done:
                            # the model closed the target early
                            send_eos_tgt()
                            return
                    else:  # EOS_SRC
                        send_emissions(engine.finish_source())
                        send_eos_tgt()
                        return
                except (ValueError, RuntimeError, KeyError) as exc:
                    fail(f"model: {exc}")
                    return
        except (ConnectionError, BrokenPipeError, OSError):
            logger.info("session %s: connection dropped", session_id)


class _ThreadedTCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class StreamTranslationServer:
    """Threaded TCP server hosting one engine per connection.

    The given model is the default for all sessions; a HELLO payload may
    carry a ``model`` override (a lexicon config) so concurrent sessions can
    run fully isolated models.
    """

    def __init__(
        self,
        model: ModelInterface,
        *,
        host: str = "127.0.0.1",
        port: int = 0,
    ) -> None:
        self._server = _ThreadedTCPServer((host, port), _SessionHandler)
        self._server.model = model
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return host, port

    def start(self) -> "StreamTranslationServer":
        self._thread = threading.Thread(
            target=self._server.serve_forever, daemon=True
        )
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        """Serve in the calling thread until interrupted."""
        try:
            self._server.serve_forever()
        finally:
            self._server.server_close()

    def shutdown(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "StreamTranslationServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.shutdown()


def serve(
    bind_address: tuple[str, int], model: ModelInterface
) -> StreamTranslationServer:
    """Start a server on ``bind_address`` and return its handle."""
    host, port = bind_address
    return StreamTranslationServer(model, host=host, port=port).start()


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------


def stream_utterance(
    address: tuple[str, int],
    utterance: Utterance,
    config: PolicyConfig,
    *,
    pacing: str = "fast",
    timeout_s: float = 30.0,
) -> tuple[Hypothesis, list[float]]:
    """Stream one utterance to a server and collect its remote hypothesis.

    ``pacing`` is ``"fast"`` (send chunks back to back) or ``"realtime"``
    (one chunk per ``step_ms`` of wall time).  Returns the hypothesis --
    ideal delays from the wire, wall delays from client arrival clamped to
    the ideal -- plus the raw per-word arrival times in ms.
    """
    if pacing not in ("fast", "realtime"):
        raise ValueError(f"unknown pacing {pacing!r}")
    chunks = segment_stream(utterance, config.step_ms)
    session = f"{utterance.id}-{uuid.uuid4().hex[:8]}"
    frame_ms = utterance.frame_ms or 10

    received: list[tuple[WireMessage, float]] = []
    reader_error: list[str] = []

    with socket.create_connection(address, timeout=timeout_s) as sock:
        rfile = sock.makefile("rb")
        wfile = sock.makefile("wb")
        started = time.perf_counter()

        def now_ms() -> float:
            return (time.perf_counter() - started) * 1000.0

        def transmit(kind: str, payload: object) -> None:
            wfile.write(
                WireMessage(
                    kind=kind,
                    session=session,
                    payload=payload,
                    t_client_ms=now_ms(),
                ).to_line()
            )
            wfile.flush()

        def read_loop() -> None:
            try:
                for raw in rfile:
                    message = WireMessage.parse(raw)
                    received.append((message, now_ms()))
                    if message.kind in (KIND_EOS_TGT, KIND_ERROR):
                        return
                reader_error.append("connection closed before EOS_TGT")
            except (ValueError, OSError) as exc:
                reader_error.append(str(exc))

        reader = threading.Thread(target=read_loop, daemon=True)
        reader.start()

        transmit(
            KIND_HELLO,
            {
                "config": config.to_dict(),
                "frame_ms": frame_ms,
                "max_target_words": (
                    config.max_target_words
                    or default_max_target_words(utterance)
                ),
                "utt_id": utterance.id,
            },
        )
        try:
            for chunk in chunks:
                transmit(
                    KIND_CHUNK,
                    {"frames": [list(f.features) for f in chunk]},
                )
                if pacing == "realtime":
                    time.sleep(config.step_ms / 1000.0)
            transmit(KIND_EOS_SRC, None)
        except (ConnectionError, BrokenPipeError, OSError):
            pass  # the reader will surface the server's last word
        reader.join(timeout=timeout_s)
        if reader.is_alive():
            raise ServiceError("timed out waiting for the target stream")

    if reader_error:
        raise ServiceError(reader_error[0])
    final = received[-1][0] if received else None
    if final is None or final.kind == KIND_ERROR:
        detail = (final.payload or {}).get("message") if final else "no reply"
        raise ServiceError(f"remote error: {detail}")

    words: list[str] = []
    ideal: list[int] = []
    wall: list[float] = []
    for message, arrival_ms in received:
        if message.kind != KIND_WORD:
            continue
        words.append(message.payload["word"])
        ideal.append(int(message.payload["ideal_ms"]))
        wall.append(max(float(message.payload["ideal_ms"]), arrival_ms))
    convention = Convention(final.payload["convention"])
    tokens = tuple(
        SubwordToken(surface, convention)
        for surface in final.payload["tokens"]
    )
    hypothesis = Hypothesis(
        tokens=tokens,
        words=tuple(words),
        ideal_delays_ms=tuple(ideal),
        wall_delays_ms=tuple(wall),
        truncated=bool(final.payload.get("truncated", False)),
    )
    arrivals = [
        arrival for (m, arrival) in received if m.kind == KIND_WORD
    ]
    return hypothesis, arrivals


def client_evaluate(
    address: tuple[str, int],
    utterances: Sequence[Utterance],
    config: PolicyConfig,
    *,
    pacing: str = "fast",
    timeout_s: float = 30.0,
) -> CorpusResult:
    """Evaluate a corpus against a remote server, one session per utterance.

    Transport or remote failures are recorded per utterance; a fully
    unreachable server yields a zero-utterance report with every utterance
    listed as failed.
    """
    results: list[UtteranceResult] = []
    for utterance in utterances:
        if not utterance.reference:
            results.append(
                UtteranceResult(
                    utterance.id, None, (), None,
                    error="utterance has an empty reference",
                )
            )
            continue
        try:
            hypothesis, _arrivals = stream_utterance(
                address, utterance, config,
                pacing=pacing, timeout_s=timeout_s,
            )
        except (ServiceError, OSError) as exc:
            logger.error("utterance %s failed: %s", utterance.id, exc)
            results.append(
                UtteranceResult(utterance.id, None, (), None, error=str(exc))
            )
            continue
        delays = DelaySequence(
            ideal_ms=hypothesis.ideal_delays_ms,
            wall_ms=hypothesis.wall_delays_ms,
            source_ms=float(utterance.duration_ms),
            hyp_len=len(hypothesis.words),
            ref_len=len(utterance.reference),
        )
        results.append(
            UtteranceResult(utterance.id, hypothesis, (), delays)
        )
    scored = [
        (r, u)
        for r, u in zip(results, utterances)
        if r.error is None
    ]
    report = aggregate_metrics(
        [list(r.hypothesis.words) for r, _ in scored],
        [list(u.reference) for _, u in scored],
        [r.delays for r, _ in scored],
    )
    return CorpusResult(report, tuple(results))
