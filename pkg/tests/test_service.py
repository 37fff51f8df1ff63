from __future__ import annotations

import json
import socket
import threading

import pytest

from helpers import EXPANDING_LEXICON, aligned_utterance, make_model
from simulharness import (
    PolicyConfig,
    ServiceError,
    StreamTranslationServer,
    WireMessage,
    client_evaluate,
    evaluate_corpus,
    run_simultaneous,
    serve,
    stream_utterance,
)


@pytest.fixture()
def server():
    with StreamTranslationServer(make_model()) as handle:
        yield handle


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------


def test_wire_message_round_trip():
    for payload in (None, {"frames": [[0.0, 1.0]]}, {"word": "x", "n": 3}):
        message = WireMessage(
            "CHUNK", "sess-1", payload, t_client_ms=12.5, t_server_ms=None
        )
        line = message.to_line()
        assert line.endswith(b"\n") and line.count(b"\n") == 1
        assert WireMessage.parse(line) == message
        assert WireMessage.parse(line.decode("utf-8")) == message


@pytest.mark.parametrize(
    "line, complaint",
    [
        ("{not json", "malformed message"),
        ('["kind", "HELLO"]', "must be a JSON object"),
        ('{"kind": "NOPE", "session": "s"}', "unknown kind"),
        ('{"kind": "HELLO"}', "must carry a session id"),
        ('{"kind": "HELLO", "session": ""}', "must carry a session id"),
        ('{"kind": "HELLO", "session": 7}', "must carry a session id"),
    ],
)
def test_wire_message_parse_rejects(line, complaint):
    with pytest.raises(ValueError, match=complaint):
        WireMessage.parse(line)


# ---------------------------------------------------------------------------
# Loopback equivalence with the in-process engine
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("detection", ["fixed", "adaptive"])
def test_remote_run_equals_local_run(server, detection):
    model = make_model()
    utt = aligned_utterance(
        model, ["da", "esel", "geht", "haus", "hin", "ja"]
    )
    config = PolicyConfig(k=3, detection=detection)
    local, _ = run_simultaneous(model, utt, config)
    remote, arrivals = stream_utterance(
        server.address, utt, config, timeout_s=10
    )
    assert remote.words == local.words
    assert remote.tokens == local.tokens
    assert remote.ideal_delays_ms == local.ideal_delays_ms
    assert remote.truncated == local.truncated
    assert len(arrivals) == len(remote.words)
    # client wall clock is clamped to the ideal reading schedule
    assert all(
        wall >= ideal
        for wall, ideal in zip(remote.wall_delays_ms, remote.ideal_delays_ms)
    )


def test_remote_corpus_report_matches_local(server):
    model = make_model()
    utts = [
        aligned_utterance(
            model, ["da", "esel", "geht", "haus"], utt_id=f"u{i}"
        )
        for i in range(3)
    ]
    config = PolicyConfig(k=2)
    local = evaluate_corpus(utts, model, config)
    remote = client_evaluate(server.address, utts, config, timeout_s=10)
    assert remote.failures == ()
    assert remote.report.bleu == local.report.bleu
    assert remote.report.al_ms == local.report.al_ms
    assert remote.report.laal_ms == local.report.laal_ms
    assert remote.report.n_utts == local.report.n_utts


def test_realtime_pacing_still_translates(server):
    model = make_model()
    utt = aligned_utterance(model, ["da", "esel"])
    hyp, _ = stream_utterance(
        server.address, utt, PolicyConfig(k=1),
        pacing="realtime", timeout_s=10,
    )
    assert list(hyp.words) == model.translate_words(["da", "esel"])
    assert all(
        wall >= ideal
        for wall, ideal in zip(hyp.wall_delays_ms, hyp.ideal_delays_ms)
    )


def test_unknown_pacing_is_rejected(server):
    model = make_model()
    utt = aligned_utterance(model, ["da"])
    with pytest.raises(ValueError, match="unknown pacing"):
        stream_utterance(server.address, utt, PolicyConfig(), pacing="warp")


# ---------------------------------------------------------------------------
# Protocol violations (raw socket exchanges)
# ---------------------------------------------------------------------------


def _exchange(address, lines: list[dict]) -> list[WireMessage]:
    """Send raw JSON lines and collect every reply until the server hangs up."""
    with socket.create_connection(address, timeout=10) as sock:
        wire = sock.makefile("rwb")
        for record in lines:
            wire.write((json.dumps(record) + "\n").encode("utf-8"))
        wire.flush()
        sock.shutdown(socket.SHUT_WR)
        return [WireMessage.parse(raw) for raw in wire]


def _msg(kind, session="s1", payload=None):
    return {"kind": kind, "session": session, "payload": payload}


def _hello(session="s1", k=2, **extra):
    payload = {"config": {"k": k}, "frame_ms": 10}
    payload.update(extra)
    return _msg("HELLO", session, payload)


def _chunk_rows(model, words):
    utt = aligned_utterance(model, words)
    return [list(f.features) for f in utt.frames]


@pytest.mark.parametrize(
    "lines, complaint",
    [
        ([_msg("CHUNK")], "protocol: expected HELLO"),
        ([_msg("EOS_SRC")], "protocol: expected HELLO"),
        ([_hello(), _hello()], "protocol: session already started"),
        (
            [_hello(), _msg("CHUNK", session="other")],
            "protocol: unknown session 'other'",
        ),
        ([_hello(), _msg("CHUNK")], "protocol: CHUNK carries no frames"),
        ([_msg("WORD")], "protocol: unexpected WORD from client"),
        ([_msg("EOS_TGT")], "protocol: unexpected EOS_TGT from client"),
        ([{"kind": "HELLO"}], "protocol: message must carry a session id"),
        ([_hello(k=0)], "config: k must be"),
        (
            [_msg("HELLO", payload={"config": {"k": 2, "bogus": 1}})],
            "config: unknown policy fields",
        ),
    ],
)
def test_protocol_violations_get_an_error_reply(server, lines, complaint):
    replies = _exchange(server.address, lines)
    assert replies[-1].kind == "ERROR"
    assert replies[-1].payload["message"].startswith(complaint)


def test_garbage_line_is_reported_as_malformed(server):
    with socket.create_connection(server.address, timeout=10) as sock:
        wire = sock.makefile("rwb")
        wire.write(b"this is not json\n")
        wire.flush()
        sock.shutdown(socket.SHUT_WR)
        replies = [WireMessage.parse(raw) for raw in wire]
    assert replies[-1].kind == "ERROR"
    assert replies[-1].payload["message"].startswith(
        "protocol: malformed message"
    )


def test_model_failure_is_reported_on_the_wire(server):
    # the default server model expects 7 feature channels; send 3
    lines = [
        _hello(),
        _msg("CHUNK", payload={"frames": [[0.0, 1.0, 0.0]] * 28}),
    ]
    replies = _exchange(server.address, lines)
    assert replies[-1].kind == "ERROR"
    assert replies[-1].payload["message"].startswith("model: ")


def test_hello_can_override_the_session_model(server):
    override = make_model(EXPANDING_LEXICON, target_piece_len=2)
    words = ["da", "geht"]
    lines = [
        _hello(
            k=1,
            model={
                "lexicon": EXPANDING_LEXICON,
                "target_convention": "bpe",
                "target_piece_len": 2,
            },
        ),
        _msg("CHUNK", payload={"frames": _chunk_rows(override, words)}),
        _msg("EOS_SRC"),
    ]
    replies = _exchange(server.address, lines)
    assert replies[-1].kind == "EOS_TGT"
    words_out = [m.payload["word"] for m in replies if m.kind == "WORD"]
    assert words_out == override.translate_words(words)
    assert replies[-1].payload["n_words"] == len(words_out)


def test_concurrent_sessions_stay_isolated(server):
    model = make_model()
    cases = {
        "a": ["da", "esel", "geht"],
        "b": ["haus", "hin", "ja", "da"],
        "c": ["ja", "ja"],
    }
    config = PolicyConfig(k=2)
    outcomes: dict[str, list[str]] = {}

    def run(name: str, words: list[str]) -> None:
        utt = aligned_utterance(model, words, utt_id=name)
        hyp, _ = stream_utterance(server.address, utt, config, timeout_s=10)
        outcomes[name] = list(hyp.words)

    threads = [
        threading.Thread(target=run, args=(name, words))
        for name, words in cases.items()
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=15)
    assert outcomes == {
        name: model.translate_words(words) for name, words in cases.items()
    }


# ---------------------------------------------------------------------------
# Client-side failure handling
# ---------------------------------------------------------------------------


def test_stream_utterance_raises_on_remote_error(server):
    model = make_model(EXPANDING_LEXICON)  # wrong width for the server model
    utt = aligned_utterance(model, ["da", "esel"])
    with pytest.raises(ServiceError, match="model: "):
        stream_utterance(server.address, utt, PolicyConfig(k=1), timeout_s=10)


def test_client_evaluate_records_unreachable_server():
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    dead_address = probe.getsockname()
    probe.close()

    model = make_model()
    utts = [aligned_utterance(model, ["da"], utt_id=f"u{i}") for i in range(2)]
    corpus = client_evaluate(dead_address, utts, PolicyConfig(), timeout_s=2)
    assert corpus.failures == ("u0", "u1")
    assert corpus.report.n_utts == 0
    assert corpus.report.bleu is None


def test_serve_helper_binds_and_answers():
    handle = serve(("127.0.0.1", 0), make_model())
    try:
        host, port = handle.address
        assert host == "127.0.0.1" and port > 0
        model = make_model()
        utt = aligned_utterance(model, ["da", "esel"])
        hyp, _ = stream_utterance(handle.address, utt, PolicyConfig(k=1))
        assert list(hyp.words) == model.translate_words(["da", "esel"])
    finally:
        handle.shutdown()
