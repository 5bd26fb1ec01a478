import random

import pytest
from hypothesis import given, settings, strategies as st

from cohrt import config
from cohrt.protocol import (
    DecodeError,
    DecodeReason,
    Message,
    MessageKind,
    SchemaViolation,
    decode_message,
    decode_stream,
    encode_message,
)


def make_message(kind, payload, seq=1, ts=0):
    return Message(kind=kind, seq=seq, ts=ts, payload=payload)


SAMPLE_MESSAGES = [
    make_message(MessageKind.HELLO, {"agent": "human:P1", "version": 1}),
    make_message(MessageKind.CONFIG_PUSH, {"config": config.to_dict(config.reference_config())}),
    make_message(MessageKind.START_TASK, {"pid": "P1"}),
    make_message(MessageKind.ALLOCATION_REQUEST, {"requester": "robot", "block_id": "B02"}),
    make_message(MessageKind.ALLOCATION_RESPONSE,
                 {"granted": True, "block_id": "B02", "receipt_order": 3, "reason": None}),
    make_message(MessageKind.ALLOCATION_RESPONSE,
                 {"granted": False, "block_id": "B02", "receipt_order": 4,
                  "reason": "AlreadyClaimed"}),
    make_message(MessageKind.RELEASE_BLOCK, {"agent": "robot", "block_id": "B02"}),
    make_message(MessageKind.PUZZLE_MOVE, {"pid": "P1", "source": "tray:p3", "dest": "grid:0"}),
    make_message(MessageKind.STATE_UPDATE, {"state": {"phases": {"P1": "Puzzling"}}}),
    make_message(MessageKind.DETECTION_FRAME,
                 {"ts_ms": 120, "detections": [
                     {"tag_id": 1, "position": [0.0, 0.01, 0.039], "station_id": "P1"},
                     {"tag_id": 4, "position": [0.01, 0.0, 0.081], "station_id": "P1"},
                 ]}),
    make_message(MessageKind.ACTION_START, {"agent": "robot", "action": "stack", "block_id": "B02"}),
    make_message(MessageKind.ACTION_END, {"agent": "robot", "action": "stack", "block_id": "B02"}),
    make_message(MessageKind.SESSION_END, {"reason": "completed"}),
    make_message(MessageKind.ERROR, {"code": "version_mismatch", "detail": "expected 1"}),
    make_message(MessageKind.HEARTBEAT, {}),
]


def test_heartbeat_exact_frame():
    m = make_message(MessageKind.HEARTBEAT, {}, seq=1, ts=0)
    assert encode_message(m) == b'{"kind":"Heartbeat","seq":1,"ts":0,"payload":{}}\n'


def test_round_trip_all_kinds():
    for m in SAMPLE_MESSAGES:
        assert decode_message(encode_message(m)) == m


def test_config_push_round_trip_reference_scenario():
    cfg = config.reference_config()
    m = make_message(MessageKind.CONFIG_PUSH, {"config": config.to_dict(cfg)}, seq=2, ts=17)
    decoded = decode_message(encode_message(m))
    assert decoded == m
    assert config.from_dict(decoded.payload["config"]) == cfg


def test_encode_is_deterministic_under_key_order():
    a = make_message(MessageKind.HELLO, {"agent": "robot", "version": 1})
    b = make_message(MessageKind.HELLO, {"version": 1, "agent": "robot"})
    assert a == b
    assert encode_message(a) == encode_message(b)


def test_encode_rejects_schema_violations():
    bad = [
        make_message(MessageKind.HELLO, {"agent": "x"}),                      # missing field
        make_message(MessageKind.HELLO, {"agent": "x", "version": 1, "y": 2}),  # extra field
        make_message(MessageKind.HELLO, {"agent": "", "version": 1}),         # empty string
        make_message(MessageKind.HELLO, {"agent": "x", "version": True}),     # bool as int
        make_message(MessageKind.ALLOCATION_RESPONSE,
                     {"granted": True, "block_id": "B", "receipt_order": 0, "reason": "x"}),
        make_message(MessageKind.DETECTION_FRAME,
                     {"ts_ms": 0, "detections": [
                         {"tag_id": 1, "position": [0, 0, -0.1], "station_id": "P1"}]}),
        make_message(MessageKind.DETECTION_FRAME,
                     {"ts_ms": 0, "detections": [
                         {"tag_id": 1, "position": [0, 0, 0.1], "station_id": "P1"},
                         {"tag_id": 1, "position": [0, 0, 0.2], "station_id": "P1"}]}),
    ]
    for m in bad:
        with pytest.raises(SchemaViolation):
            encode_message(m)


@pytest.mark.parametrize(
    "data, reason",
    [
        (b"", DecodeReason.TRUNCATED),
        (b"\n", DecodeReason.TRUNCATED),
        (b'{"kind":"Heartbeat","seq":1,"ts":0,"payl', DecodeReason.TRUNCATED),
        (b"\xff\xfe", DecodeReason.TRUNCATED),
        (b'{"kind":"Nonsense","seq":1,"ts":0,"payload":{}}\n', DecodeReason.UNKNOWN_KIND),
        (b'{"kind":"Heartbeat","seq":-1,"ts":0,"payload":{}}\n', DecodeReason.BAD_FIELD),
        (b'{"kind":"Heartbeat","seq":1.5,"ts":0,"payload":{}}\n', DecodeReason.BAD_FIELD),
        (b'{"kind":"Heartbeat","seq":1,"ts":0,"payload":[]}\n', DecodeReason.BAD_FIELD),
        (b'{"kind":"Heartbeat","seq":1,"ts":0}\n', DecodeReason.BAD_FIELD),
        (b'{"kind":"Heartbeat","seq":1,"ts":0,"payload":{},"x":1}\n', DecodeReason.BAD_FIELD),
        (b'{"kind":"Hello","seq":1,"ts":0,"payload":{"agent":"a"}}\n', DecodeReason.BAD_FIELD),
        (b"[1,2,3]\n", DecodeReason.BAD_FIELD),
        (b'{"kind":"Heartbeat","seq":1,"ts":0,"payload":{}}\n\n', DecodeReason.BAD_FIELD),
    ],
)
def test_decode_error_classification(data, reason):
    with pytest.raises(DecodeError) as exc:
        decode_message(data)
    assert exc.value.reason is reason


def test_self_delimiting_concatenation():
    frames = b"".join(encode_message(m) for m in SAMPLE_MESSAGES)
    assert decode_stream(frames) == SAMPLE_MESSAGES
    with pytest.raises(DecodeError):
        decode_stream(frames[:-1])  # final newline shaved off


# --- property-based round trip -------------------------------------------------

_ids = st.text(alphabet="abcdefgh:_0123456789", min_size=1, max_size=12)
_pos = st.lists(
    st.floats(min_value=0, max_value=2.0, allow_nan=False, width=64),
    min_size=3, max_size=3)


def _detections():
    return st.lists(
        st.tuples(st.integers(min_value=0, max_value=99), _pos, _ids),
        max_size=5,
        unique_by=lambda t: t[0],
    ).map(lambda ds: [
        {"tag_id": t, "position": p, "station_id": s} for t, p, s in ds
    ])


_payloads = {
    MessageKind.HELLO: st.fixed_dictionaries(
        {"agent": _ids, "version": st.integers(0, 9)}),
    MessageKind.CONFIG_PUSH: st.fixed_dictionaries(
        {"config": st.dictionaries(
            _ids, st.one_of(st.integers(0, 9), _ids,
                            st.lists(st.integers(0, 9), max_size=3)),
            max_size=4)}),
    MessageKind.START_TASK: st.fixed_dictionaries({"pid": _ids}),
    MessageKind.ALLOCATION_REQUEST: st.fixed_dictionaries(
        {"requester": _ids, "block_id": _ids}),
    MessageKind.ALLOCATION_RESPONSE: st.one_of(
        st.fixed_dictionaries({"granted": st.just(True), "block_id": _ids,
                               "receipt_order": st.integers(0, 10**6),
                               "reason": st.none()}),
        st.fixed_dictionaries({"granted": st.just(False), "block_id": _ids,
                               "receipt_order": st.integers(0, 10**6),
                               "reason": st.sampled_from(
                                   ["AlreadyClaimed", "NotTopmost", "WrongPhase", "UnknownBlock"])}),
    ),
    MessageKind.RELEASE_BLOCK: st.fixed_dictionaries({"agent": _ids, "block_id": _ids}),
    MessageKind.PUZZLE_MOVE: st.fixed_dictionaries(
        {"pid": _ids, "source": _ids, "dest": _ids}),
    MessageKind.STATE_UPDATE: st.fixed_dictionaries(
        {"state": st.dictionaries(_ids, st.integers(0, 5), max_size=4)}),
    MessageKind.DETECTION_FRAME: st.fixed_dictionaries(
        {"ts_ms": st.integers(0, 10**7), "detections": _detections()}),
    MessageKind.ACTION_START: st.fixed_dictionaries(
        {"agent": _ids, "action": _ids, "block_id": st.one_of(st.none(), _ids)}),
    MessageKind.ACTION_END: st.fixed_dictionaries(
        {"agent": _ids, "action": _ids, "block_id": st.one_of(st.none(), _ids)}),
    MessageKind.SESSION_END: st.fixed_dictionaries({"reason": _ids}),
    MessageKind.ERROR: st.fixed_dictionaries({"code": _ids, "detail": _ids}),
    MessageKind.HEARTBEAT: st.just({}),
}


def message_strategy():
    return st.sampled_from(list(MessageKind)).flatmap(
        lambda kind: st.builds(
            Message,
            kind=st.just(kind),
            seq=st.integers(0, 2**31),
            ts=st.integers(0, 2**40),
            payload=_payloads[kind],
        )
    )


@settings(max_examples=300, deadline=None)
@given(message_strategy())
def test_property_round_trip(m):
    assert decode_message(encode_message(m)) == m


def mutate_frame(rng: random.Random, frame: bytes) -> bytes:
    data = bytearray(frame)
    op = rng.randrange(4)
    if op == 0 and data:  # substitute a byte
        data[rng.randrange(len(data))] = rng.randrange(256)
    elif op == 1 and data:  # delete a byte
        del data[rng.randrange(len(data))]
    elif op == 2:  # insert a byte
        data.insert(rng.randrange(len(data) + 1), rng.randrange(256))
    else:  # truncate
        data = data[: rng.randrange(len(data) + 1)]
    return bytes(data)


def test_fuzz_mutations_never_crash():
    rng = random.Random(20_240_601)
    frames = [encode_message(m) for m in SAMPLE_MESSAGES]
    ok = decoded = errored = 0
    for _ in range(2000):
        data = mutate_frame(rng, rng.choice(frames))
        try:
            decode_message(data)
            decoded += 1
        except DecodeError:
            errored += 1
        ok += 1
    assert ok == decoded + errored == 2000
