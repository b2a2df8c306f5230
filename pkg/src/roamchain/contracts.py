"""Registrar, operator-contract (MNOC), and cursory-contract state machines.

State only changes by applying ledger transactions (or calling the operation
a transaction would dispatch to). Every guard is checked before the first
mutation, so a failing transaction leaves the world untouched.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from . import codec
from .codec import Cursor, DecodeError, pack_bytes, pack_str, pack_u8, pack_u64, sha256
from .ledger import Transaction, TxKind, make_transaction


class ContractError(Exception):
    pass


class DuplicateIdError(ContractError):
    pass


class DuplicateAddressError(ContractError):
    pass


class PolicyDeniedError(ContractError):
    """Operator registration blocked by the participant allowlist."""


class UnknownPartyError(ContractError):
    pass


class UnknownContractError(ContractError):
    pass


class RoleMismatchError(ContractError):
    pass


class SelfRoamError(ContractError):
    """Home and visited operator are the same address."""


class EmptyPointersError(ContractError):
    pass


class DuplicateContractError(ContractError):
    pass


class WrongStateError(ContractError):
    pass


class WrongSignerError(ContractError):
    pass


class BadSignatureError(ContractError):
    pass


class UnknownQueryError(ContractError):
    pass


class NotCounterpartyError(ContractError):
    pass


class UnknownRelationshipError(ContractError):
    pass


class UnknownOwnerError(ContractError):
    pass


class Role(enum.IntEnum):
    USER = 0
    OPERATOR = 1


class MnocStatus(enum.IntEnum):
    PROPOSED = 0
    USER_ACCEPTED = 1
    ACTIVE = 2
    CLOSED = 3


class RelStatus(enum.IntEnum):
    NEW = 0
    AWAITING_UPDATE = 1
    ACCEPTED = 2
    REJECTED = 3


class Currency(enum.IntEnum):
    FIAT = 0
    CRYPTO = 1


@dataclass(frozen=True)
class RegistrarEntry:
    id_string: str
    address: str
    role: Role


@dataclass(frozen=True)
class QueryPointer:
    """Query string plus the digest of the data it currently returns."""

    query: str
    content_hash: bytes

    def __post_init__(self):
        if not self.query:
            raise ValueError("query must be nonempty")
        if len(self.content_hash) != codec.DIGEST_SIZE:
            raise ValueError("content_hash must be a full-width digest")


@dataclass
class MnocContract:
    contract_id: bytes
    hno: str
    vno: str
    user: str
    pointers: list[QueryPointer]
    permissions: set[tuple[str, str]] = field(default_factory=set)
    status: MnocStatus = MnocStatus.PROPOSED


@dataclass
class CursoryContract:
    owner: str
    relationships: dict[bytes, RelStatus] = field(default_factory=dict)


class ContractWorld:
    """Snapshot of all contract state, derived by folding ledger transactions."""

    def __init__(self, operator_allowlist: set[str] | None = None):
        self.registrar_by_id: dict[str, RegistrarEntry] = {}
        self.registrar_by_address: dict[str, RegistrarEntry] = {}
        self.mnocs: dict[bytes, MnocContract] = {}
        self.ccs: dict[str, CursoryContract] = {}
        self.operator_allowlist = frozenset(operator_allowlist) if operator_allowlist else None

    def entry(self, address: str) -> RegistrarEntry | None:
        return self.registrar_by_address.get(address)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ContractWorld):
            return NotImplemented
        return snapshot(self) == snapshot(other)


def snapshot(world: ContractWorld) -> str:
    """Stable structured-text dump (one record per line), usable as a golden file."""
    lines = []
    policy = "off" if world.operator_allowlist is None else ",".join(sorted(world.operator_allowlist))
    lines.append(f"policy\t{policy}")
    for id_string in sorted(world.registrar_by_id):
        e = world.registrar_by_id[id_string]
        lines.append(f"registrar\t{e.id_string}\t{e.address}\t{e.role.name.lower()}")
    for cid in sorted(world.mnocs):
        m = world.mnocs[cid]
        pointers = ",".join(f"{p.query}:{p.content_hash.hex()}" for p in m.pointers)
        perms = ";".join(f"{g}|{q}" for g, q in sorted(m.permissions))
        lines.append(
            f"mnoc\t{cid.hex()}\thno={m.hno}\tvno={m.vno}\tuser={m.user}"
            f"\tstatus={m.status.name.lower()}\tpointers={pointers}\tpermissions={perms}"
        )
    for owner in sorted(world.ccs):
        cc = world.ccs[owner]
        rels = ";".join(f"{cid.hex()}:{st.name.lower()}" for cid, st in cc.relationships.items())
        lines.append(f"cc\t{owner}\t{rels}")
    return "\n".join(lines) + "\n"


# --- actions (transaction payload schemas) ---------------------------------


@dataclass(frozen=True)
class IdentityRegistration:
    id_string: str
    address: str
    role: Role

    kind = TxKind.IDENTITY_REGISTRATION

    def encode(self) -> bytes:
        return pack_str(self.id_string) + pack_str(self.address) + pack_u8(int(self.role))


@dataclass(frozen=True)
class MnocIssue:
    hno: str
    vno: str
    user: str
    pointers: tuple[QueryPointer, ...]

    kind = TxKind.MNOC_ISSUE

    def encode(self) -> bytes:
        out = pack_str(self.hno) + pack_str(self.vno) + pack_str(self.user)
        out += codec.pack_u32(len(self.pointers))
        for p in self.pointers:
            out += pack_str(p.query) + p.content_hash
        return out


@dataclass(frozen=True)
class TermsAcceptance:
    mnoc_id: bytes

    kind = TxKind.TERMS_ACCEPTANCE

    def encode(self) -> bytes:
        return self.mnoc_id


@dataclass(frozen=True)
class PermissionGrant:
    mnoc_id: bytes
    grantee: str
    query: str

    kind = TxKind.PERMISSION_GRANT

    def encode(self) -> bytes:
        return self.mnoc_id + pack_str(self.grantee) + pack_str(self.query)


@dataclass(frozen=True)
class CcUpdate:
    owner: str
    mnoc_id: bytes
    status: RelStatus

    kind = TxKind.CC_UPDATE

    def encode(self) -> bytes:
        return pack_str(self.owner) + self.mnoc_id + pack_u8(int(self.status))


@dataclass(frozen=True)
class MoneyMove:
    """Payload for Charge and Transfer transactions; the amount rides on the
    transaction itself."""

    payer: str
    payee: str
    currency: Currency
    ref: bytes  # mnoc_id of the session being billed, or all-zero
    memo: str = ""

    def encode(self) -> bytes:
        return (
            pack_str(self.payer)
            + pack_str(self.payee)
            + pack_u8(int(self.currency))
            + self.ref
            + pack_str(self.memo)
        )


ContractAction = (
    IdentityRegistration | MnocIssue | TermsAcceptance | PermissionGrant | CcUpdate | MoneyMove
)


def decode_action(kind: TxKind, payload: bytes) -> ContractAction:
    """Decode a transaction payload; raises DecodeError on any malformation."""
    cur = Cursor(payload)
    try:
        if kind == TxKind.IDENTITY_REGISTRATION:
            action = IdentityRegistration(cur.str_(), cur.str_(), Role(cur.u8()))
        elif kind == TxKind.MNOC_ISSUE:
            hno, vno, user = cur.str_(), cur.str_(), cur.str_()
            pointers = tuple(
                QueryPointer(cur.str_(), cur.take(codec.DIGEST_SIZE)) for _ in range(cur.u32())
            )
            action = MnocIssue(hno, vno, user, pointers)
        elif kind == TxKind.TERMS_ACCEPTANCE:
            action = TermsAcceptance(cur.take(codec.DIGEST_SIZE))
        elif kind == TxKind.PERMISSION_GRANT:
            action = PermissionGrant(cur.take(codec.DIGEST_SIZE), cur.str_(), cur.str_())
        elif kind == TxKind.CC_UPDATE:
            action = CcUpdate(cur.str_(), cur.take(codec.DIGEST_SIZE), RelStatus(cur.u8()))
        elif kind in (TxKind.CHARGE, TxKind.TRANSFER):
            action = MoneyMove(
                cur.str_(), cur.str_(), Currency(cur.u8()), cur.take(codec.DIGEST_SIZE), cur.str_()
            )
        else:
            raise DecodeError(f"unknown transaction kind {kind}")
        cur.expect_end()
    except ValueError as exc:  # enum/QueryPointer constructor failures included
        raise DecodeError(str(exc)) from exc
    return action


def make_action_tx(
    action: ContractAction,
    signer: str,
    timestamp: int = 0,
    amount: int = 0,
    kind: TxKind | None = None,
) -> Transaction:
    """Sign an action and wrap it in a transaction (kind defaults to the action's)."""
    payload = action.encode()
    if kind is None:
        if isinstance(action, MoneyMove):
            raise ValueError("MoneyMove needs an explicit kind (CHARGE or TRANSFER)")
        kind = action.kind
    return make_transaction(
        kind, payload, signer, codec.sign_payload(payload, signer), amount, timestamp
    )


# --- operations -------------------------------------------------------------


def register_identity(world: ContractWorld, id_string: str, address: str, role: Role) -> ContractWorld:
    """Add an identity to the registrar and give it an empty cursory contract."""
    if id_string in world.registrar_by_id:
        raise DuplicateIdError(id_string)
    if address in world.registrar_by_address:
        raise DuplicateAddressError(address)
    if (
        role == Role.OPERATOR
        and world.operator_allowlist is not None
        and address not in world.operator_allowlist
    ):
        raise PolicyDeniedError(f"operator {address} not a participant")
    entry = RegistrarEntry(id_string, address, role)
    world.registrar_by_id[id_string] = entry
    world.registrar_by_address[address] = entry
    world.ccs[address] = CursoryContract(address)
    return world


def mnoc_contract_id(hno: str, vno: str, user: str, pointers, tick: int) -> bytes:
    parts = [b"roamchain/mnoc:", pack_str(hno), pack_str(vno), pack_str(user)]
    for p in pointers:
        parts.append(pack_str(p.query))
        parts.append(pack_bytes(p.content_hash))
    parts.append(pack_u64(tick))
    return sha256(*parts)


def issue_mnoc(
    world: ContractWorld,
    hno: str,
    vno: str,
    user: str,
    pointers: list[QueryPointer] | tuple[QueryPointer, ...],
    tick: int = 0,
) -> bytes:
    """Create a proposed operator contract; all three cursory contracts gain a
    relationship entry with status new. Returns the contract id."""
    for address, wanted in ((hno, Role.OPERATOR), (vno, Role.OPERATOR), (user, Role.USER)):
        entry = world.entry(address)
        if entry is None:
            raise UnknownPartyError(address)
        if entry.role != wanted:
            raise RoleMismatchError(f"{address} is {entry.role.name}, expected {wanted.name}")
    if hno == vno:
        raise SelfRoamError(hno)
    if not pointers:
        raise EmptyPointersError("an operator contract needs at least one data pointer")
    contract_id = mnoc_contract_id(hno, vno, user, pointers, tick)
    if contract_id in world.mnocs:
        raise DuplicateContractError(contract_id.hex())

    world.mnocs[contract_id] = MnocContract(contract_id, hno, vno, user, list(pointers))
    for address in (user, hno, vno):
        world.ccs[address].relationships[contract_id] = RelStatus.NEW
    return contract_id


def accept_terms(world: ContractWorld, mnoc_id: bytes, acceptance_tx: Transaction) -> ContractWorld:
    """Advance a proposed contract to user-accepted on a valid acceptance transaction."""
    mnoc = world.mnocs.get(mnoc_id)
    if mnoc is None:
        raise UnknownContractError(mnoc_id.hex())
    if acceptance_tx.kind != TxKind.TERMS_ACCEPTANCE:
        raise DecodeError("acceptance transaction has wrong kind")
    action = decode_action(acceptance_tx.kind, acceptance_tx.payload)
    if action.mnoc_id != mnoc_id:
        raise DecodeError("acceptance payload references a different contract")
    if mnoc.status != MnocStatus.PROPOSED:
        raise WrongStateError(f"contract is {mnoc.status.name}, not PROPOSED")
    if world.ccs[mnoc.user].relationships.get(mnoc_id) == RelStatus.REJECTED:
        raise WrongStateError("relationship was rejected by the user")
    if acceptance_tx.signer != mnoc.user:
        raise WrongSignerError(acceptance_tx.signer)
    if not codec.verify_payload(acceptance_tx.payload, acceptance_tx.signer, acceptance_tx.signature):
        raise BadSignatureError("acceptance signature does not verify")

    mnoc.status = MnocStatus.USER_ACCEPTED
    world.ccs[mnoc.user].relationships[mnoc_id] = RelStatus.ACCEPTED
    return world


def grant_permission(world: ContractWorld, mnoc_id: bytes, grantee: str, query: str) -> ContractWorld:
    """Record (grantee, query) on the contract; first grant activates it."""
    mnoc = world.mnocs.get(mnoc_id)
    if mnoc is None:
        raise UnknownContractError(mnoc_id.hex())
    if mnoc.status not in (MnocStatus.USER_ACCEPTED, MnocStatus.ACTIVE):
        raise WrongStateError(f"contract is {mnoc.status.name}; terms not accepted")
    if query not in {p.query for p in mnoc.pointers}:
        raise UnknownQueryError(query)
    if grantee != mnoc.vno:
        raise NotCounterpartyError(grantee)

    mnoc.permissions.add((grantee, query))
    if mnoc.status == MnocStatus.USER_ACCEPTED:
        mnoc.status = MnocStatus.ACTIVE
    return world


def set_cc_status(
    world: ContractWorld,
    owner: str,
    mnoc_id: bytes,
    status: RelStatus,
    actor: str | None = None,
) -> ContractWorld:
    """Update one relationship entry. When `actor` is given (transaction path)
    it must be the owner, or the contract's home operator flagging its user's
    entry as awaiting-update. A rejected relationship is terminal."""
    if owner not in world.ccs:
        raise UnknownOwnerError(owner)
    cc = world.ccs[owner]
    if mnoc_id not in cc.relationships:
        raise UnknownRelationshipError(mnoc_id.hex())
    current = cc.relationships[mnoc_id]
    if current == RelStatus.REJECTED and status != RelStatus.REJECTED:
        raise WrongStateError("rejected relationship is terminal")
    if actor is not None and actor != owner:
        mnoc = world.mnocs[mnoc_id]
        hno_flagging = (
            actor == mnoc.hno and status == RelStatus.AWAITING_UPDATE and owner == mnoc.user
        )
        if not hno_flagging:
            raise WrongSignerError(actor)

    cc.relationships[mnoc_id] = status
    return world


def poll_cc(world: ContractWorld, owner: str) -> list[tuple[bytes, RelStatus]]:
    """Relationships of an identity, in insertion order."""
    if owner not in world.ccs:
        raise UnknownOwnerError(owner)
    return list(world.ccs[owner].relationships.items())


def apply_action(world: ContractWorld, tx: Transaction) -> ContractWorld:
    """Apply one ledger transaction to the world.

    Decodes the payload, verifies the keyed-digest signature and the signer's
    authority for the action, then dispatches. Any failure raises before the
    world is touched.
    """
    action = decode_action(tx.kind, tx.payload)
    if not codec.verify_payload(tx.payload, tx.signer, tx.signature):
        raise BadSignatureError(f"signature of {tx.signer} does not verify")

    if isinstance(action, IdentityRegistration):
        if tx.signer != action.address:
            raise WrongSignerError("registrations are self-signed")
        return register_identity(world, action.id_string, action.address, action.role)
    if isinstance(action, MnocIssue):
        if tx.signer not in (action.hno, action.vno):
            raise WrongSignerError("contract issue must come from one of the operators")
        issue_mnoc(world, action.hno, action.vno, action.user, action.pointers, tick=tx.timestamp)
        return world
    if isinstance(action, TermsAcceptance):
        return accept_terms(world, action.mnoc_id, tx)
    if isinstance(action, PermissionGrant):
        mnoc = world.mnocs.get(action.mnoc_id)
        if mnoc is None:
            raise UnknownContractError(action.mnoc_id.hex())
        if tx.signer != mnoc.hno:
            raise WrongSignerError("only the home operator grants access")
        return grant_permission(world, action.mnoc_id, action.grantee, action.query)
    if isinstance(action, CcUpdate):
        return set_cc_status(world, action.owner, action.mnoc_id, action.status, actor=tx.signer)
    # Charge / Transfer move money on the ledger but leave contract state alone.
    return world


def replay_chain(chain, operator_allowlist: set[str] | None = None) -> ContractWorld:
    """Rebuild the world by folding every transaction of a chain, in order."""
    world = ContractWorld(operator_allowlist)
    for block in chain:
        for tx in block.transactions:
            apply_action(world, tx)
    return world
