"""Round messages, their content contract and the JSON-lines transcript."""
import enum
import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Integral, Real
from types import MappingProxyType

import numpy as np

from ..exceptions import PrivacyViolation
from ..paillier import Ciphertext


class MessageKind(str, enum.Enum):
    SELECT_REQUEST = "SelectRequest"
    STATS_REPLY = "StatsReply"
    MINMAX_QUERY = "MinMaxQuery"
    MINMAX_VERDICT = "MinMaxVerdict"
    AGGREGATE_QUERY = "AggregateQuery"
    AGGREGATE_RESULT = "AggregateResult"
    MOMENTS_BROADCAST = "MomentsBroadcast"
    COVARIANCE_REPLY = "CovarianceReply"
    WEIGHTS_BROADCAST = "WeightsBroadcast"
    HISTOGRAM_REPLY = "HistogramReply"
    MODEL_BROADCAST = "ModelBroadcast"
    SCORE_REPLY = "ScoreReply"


COORDINATOR = "coordinator"
ARBITER = "arbiter"
BROADCAST = "*"

# what a client may put on the wire
_CLIENT_KINDS = {
    MessageKind.STATS_REPLY,
    MessageKind.COVARIANCE_REPLY,
    MessageKind.HISTOGRAM_REPLY,
    MessageKind.SCORE_REPLY,
}
_DIGEST_KINDS = {MessageKind.STATS_REPLY, MessageKind.COVARIANCE_REPLY, MessageKind.HISTOGRAM_REPLY}


def client_address(client_id):
    return f"client:{client_id}"


def is_client(address):
    return address.startswith("client:")


def iter_leaves(obj):
    """Yield every scalar inside a nested payload."""
    if isinstance(obj, (dict, MappingProxyType)):
        for v in obj.values():
            yield from iter_leaves(v)
    elif hasattr(obj, "__dataclass_fields__") and not isinstance(obj, Ciphertext):
        for name in obj.__dataclass_fields__:
            yield from iter_leaves(getattr(obj, name))
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            yield from iter_leaves(v)
    elif isinstance(obj, np.ndarray):
        yield from obj.ravel().tolist()
    else:
        yield obj


def _check_client_payload(kind, payload):
    if kind not in _CLIENT_KINDS:
        raise PrivacyViolation(f"clients may not send {kind.value}")
    if kind is MessageKind.SCORE_REPLY:
        if set(payload) - {"pairs", "error"}:
            raise PrivacyViolation("score replies carry only (id, score) pairs")
        for pair in payload.get("pairs", ()):
            ok = (
                isinstance(pair, tuple)
                and len(pair) == 2
                and isinstance(pair[0], str)
                and isinstance(pair[1], float)
            )
            if not ok:
                raise PrivacyViolation("score replies carry only (id, score) pairs")
        if not isinstance(payload.get("error", ""), str):
            raise PrivacyViolation("error field must be a string")
        return
    for leaf in iter_leaves(payload):
        if not isinstance(leaf, Ciphertext):
            raise PrivacyViolation(f"{kind.value} may carry only ciphertexts, found {type(leaf).__name__}")


def _leaf_size(leaf):
    if isinstance(leaf, Ciphertext):
        return leaf.nbytes()
    if isinstance(leaf, str):
        return len(leaf.encode())
    if isinstance(leaf, Fraction):
        return (leaf.numerator.bit_length() + leaf.denominator.bit_length() + 7) // 8
    if isinstance(leaf, (bool, np.bool_)) or leaf is None:
        return 1
    if isinstance(leaf, Integral):
        return max(1, (int(leaf).bit_length() + 8) // 8)
    if isinstance(leaf, Real):
        return 8
    return len(repr(leaf).encode())


@dataclass(frozen=True, eq=False)
class RoundMessage:
    kind: MessageKind
    round: int
    sender: str
    recipient: str
    payload: MappingProxyType = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", MessageKind(self.kind))
        object.__setattr__(self, "payload", MappingProxyType(dict(self.payload)))
        if is_client(self.sender):
            _check_client_payload(self.kind, self.payload)

    def byte_size(self):
        return sum(_leaf_size(x) for x in iter_leaves(self.payload))

    def digest(self):
        h = hashlib.sha256()
        for leaf in iter_leaves(self.payload):
            h.update(leaf.to_bytes() if isinstance(leaf, Ciphertext) else repr(leaf).encode())
        return h.hexdigest()[:16]

    def record(self):
        rec = {
            "round": self.round,
            "kind": self.kind.value,
            "sender": self.sender,
            "recipient": self.recipient,
            "bytes": self.byte_size(),
        }
        if self.kind in _DIGEST_KINDS:
            rec["digest"] = self.digest()
        return rec


class Transcript:
    """Append-only message log; optionally retains full messages for audits."""

    def __init__(self, keep_messages=False):
        self.records = []
        self.messages = [] if keep_messages else None

    def log(self, msg):
        self.records.append(msg.record())
        if self.messages is not None:
            self.messages.append(msg)
        return msg

    def __len__(self):
        return len(self.records)

    def kinds(self):
        return [r["kind"] for r in self.records]

    def to_jsonl(self):
        return "".join(json.dumps(r) + "\n" for r in self.records)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())
