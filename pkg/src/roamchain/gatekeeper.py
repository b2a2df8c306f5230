"""Per-operator off-chain record store with hash-anchored, permissioned access.

Queries are exact-match strings. The request/response interface mirrors what
a socket server would expose, but runs in-process for deterministic tests.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .codec import Cursor, pack_str, pack_u64, sha256
from .contracts import ContractWorld, MnocStatus, QueryPointer


class GatekeeperError(Exception):
    pass


class UnknownQueryError(GatekeeperError):
    pass


class HashMismatchError(GatekeeperError):
    """Stored data no longer matches the pointer digest (source-side alteration)."""


@dataclass
class RecordStore:
    owner: str
    records: dict[str, bytes] = field(default_factory=dict)


@dataclass(frozen=True)
class ChargingRecord:
    """A billable usage record; volume and unit price are in integer units
    (unit_price in minor money units)."""

    user: str
    service: str
    volume: int
    unit_price: int
    currency: str

    def total(self) -> int:
        return self.volume * self.unit_price

    def encode(self) -> bytes:
        return (
            pack_str(self.user)
            + pack_str(self.service)
            + pack_u64(self.volume)
            + pack_u64(self.unit_price)
            + pack_str(self.currency)
        )

    @classmethod
    def decode(cls, data: bytes) -> "ChargingRecord":
        cur = Cursor(data)
        rec = cls(cur.str_(), cur.str_(), cur.u64(), cur.u64(), cur.str_())
        cur.expect_end()
        return rec


class DenyReason(enum.Enum):
    NO_PERMISSION = "no_permission"
    UNKNOWN_QUERY = "unknown_query"
    HASH_MISMATCH = "hash_mismatch"


@dataclass(frozen=True)
class AccessRequest:
    requester: str
    pointer: QueryPointer


@dataclass(frozen=True)
class AccessResponse:
    granted: bool
    data: bytes | None = None
    reason: DenyReason | None = None


def content_digest(data: bytes) -> bytes:
    return sha256(b"roamchain/record:", data)


def put_record(store: RecordStore, query: str, data: bytes) -> RecordStore:
    if not query:
        raise ValueError("query must be nonempty")
    store.records[query] = data
    return store


def make_pointer(store: RecordStore, query: str) -> QueryPointer:
    """Mint a pointer anchoring the data currently stored under `query`."""
    if query not in store.records:
        raise UnknownQueryError(query)
    return QueryPointer(query, content_digest(store.records[query]))


def execute_query(store: RecordStore, pointer: QueryPointer) -> bytes:
    """Return the data a pointer references, after re-checking its digest."""
    if pointer.query not in store.records:
        raise UnknownQueryError(pointer.query)
    data = store.records[pointer.query]
    if content_digest(data) != pointer.content_hash:
        raise HashMismatchError(pointer.query)
    return data


def serve_request(store: RecordStore, world: ContractWorld, req: AccessRequest) -> AccessResponse:
    """Answer a query request from another operator.

    Granted only when some active contract carries (requester, query) in its
    permissions; integrity is re-checked on the serving side before any data
    leaves the store.
    """
    permitted = any(
        mnoc.status == MnocStatus.ACTIVE and (req.requester, req.pointer.query) in mnoc.permissions
        for mnoc in world.mnocs.values()
    )
    if not permitted:
        return AccessResponse(False, reason=DenyReason.NO_PERMISSION)
    try:
        data = execute_query(store, req.pointer)
    except UnknownQueryError:
        return AccessResponse(False, reason=DenyReason.UNKNOWN_QUERY)
    except HashMismatchError:
        return AccessResponse(False, reason=DenyReason.HASH_MISMATCH)
    return AccessResponse(True, data=data)


def dump_store(store: RecordStore) -> str:
    """Structured-text dump keyed by query string (stable order)."""
    lines = [f"owner\t{store.owner}"]
    for query in sorted(store.records):
        lines.append(f"record\t{query}\t{store.records[query].hex()}")
    return "\n".join(lines) + "\n"


def load_store(text: str) -> RecordStore:
    owner = ""
    records: dict[str, bytes] = {}
    for line in text.splitlines():
        if not line:
            continue
        kind, rest = line.split("\t", 1)
        if kind == "owner":
            owner = rest
        elif kind == "record":
            query, hexdata = rest.split("\t", 1)
            records[query] = bytes.fromhex(hexdata)
        else:
            raise ValueError(f"unknown record line: {kind}")
    return RecordStore(owner, records)
