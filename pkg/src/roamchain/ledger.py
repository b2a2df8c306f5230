"""Hash-linked block ledger with proof-of-work and coin-age proof-of-stake.

The chain is a single linear sequence (no forks, no mempool). All mutating
operations are single-writer; digest and validation helpers are pure and may
be called from anywhere.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field, replace

from .codec import (
    DIGEST_SIZE,
    ZERO_DIGEST,
    Cursor,
    pack_bytes,
    pack_str,
    pack_u8,
    pack_u32,
    pack_u64,
    sha256,
)


class LedgerError(Exception):
    pass


class NonceExhaustedError(LedgerError):
    """No nonce below the search bound satisfies the proof-of-work target."""


class NoStakeError(LedgerError):
    """Every tracked identity has zero coin age."""


class BadLinkError(LedgerError):
    """Block's prev_hash does not match the chain tip."""


class BadProofError(LedgerError):
    """Consensus proof check failed for the block."""


class BadRootError(LedgerError):
    """Stored transaction root does not match the transaction list."""


class TxKind(enum.IntEnum):
    IDENTITY_REGISTRATION = 0
    MNOC_ISSUE = 1
    PERMISSION_GRANT = 2
    CC_UPDATE = 3
    TERMS_ACCEPTANCE = 4
    CHARGE = 5
    TRANSFER = 6


MONETARY_KINDS = frozenset({TxKind.CHARGE, TxKind.TRANSFER})


@dataclass(frozen=True)
class Transaction:
    """A ledger transaction. `amount` is in minor money units and must be 0
    for non-monetary kinds; `timestamp` is the simulation tick."""

    tx_id: bytes
    kind: TxKind
    payload: bytes
    signer: str
    signature: bytes
    amount: int
    timestamp: int


def tx_digest(tx: Transaction) -> bytes:
    """Digest over the canonical serialization of every field except tx_id."""
    return sha256(
        pack_u8(int(tx.kind)),
        pack_bytes(tx.payload),
        pack_str(tx.signer),
        pack_bytes(tx.signature),
        pack_u64(tx.amount),
        pack_u64(tx.timestamp),
    )


def make_transaction(
    kind: TxKind,
    payload: bytes,
    signer: str,
    signature: bytes,
    amount: int = 0,
    timestamp: int = 0,
) -> Transaction:
    if amount < 0:
        raise ValueError("transaction amount must be non-negative")
    if amount != 0 and kind not in MONETARY_KINDS:
        raise ValueError(f"kind {kind.name} carries no amount")
    tx = Transaction(b"", kind, payload, signer, signature, amount, timestamp)
    return replace(tx, tx_id=tx_digest(tx))


def tx_root(transactions: tuple[Transaction, ...] | list[Transaction]) -> bytes:
    """Digest over the ordered list of transaction ids."""
    return sha256(pack_u32(len(transactions)), *(tx.tx_id for tx in transactions))


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    tx_root: bytes
    nonce: int
    creator: str
    timestamp: int
    transactions: tuple[Transaction, ...]
    block_hash: bytes


def header_digest(
    index: int, prev_hash: bytes, root: bytes, nonce: int, creator: str, timestamp: int
) -> bytes:
    return sha256(
        pack_u64(index),
        prev_hash,
        root,
        pack_u64(nonce),
        pack_str(creator),
        pack_u64(timestamp),
    )


def block_digest(block: Block) -> bytes:
    return header_digest(
        block.index, block.prev_hash, block.tx_root, block.nonce, block.creator, block.timestamp
    )


def make_genesis() -> Block:
    root = tx_root(())
    return Block(
        index=0,
        prev_hash=ZERO_DIGEST,
        tx_root=root,
        nonce=0,
        creator="",
        timestamp=0,
        transactions=(),
        block_hash=header_digest(0, ZERO_DIGEST, root, 0, "", 0),
    )


@dataclass
class Chain:
    blocks: list[Block] = field(default_factory=lambda: [make_genesis()])

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)


class ConsensusMode(enum.Enum):
    POW = "pow"
    POS = "pos"


MAX_TARGET = 1 << 256


def target_from_zero_bits(bits: int) -> int:
    """Proof-of-work target requiring `bits` leading zero bits in the hash."""
    if not 0 <= bits <= 256:
        raise ValueError("zero bits must be in [0, 256]")
    return MAX_TARGET >> bits


@dataclass(frozen=True)
class ConsensusConfig:
    mode: ConsensusMode
    pow_target: int = target_from_zero_bits(8)
    pow_nonce_bound: int = 1 << 32
    pos_seed: int = 0

    def __post_init__(self):
        if self.pow_target <= 0:
            raise ValueError("pow_target must be positive")
        if self.pow_nonce_bound <= 0:
            raise ValueError("pow_nonce_bound must be positive")


def mine_pow(
    index: int,
    prev_hash: bytes,
    root: bytes,
    creator: str,
    timestamp: int,
    target: int,
    bound: int,
) -> int:
    """Scan nonces 0,1,2,... and return the first whose header digest is below target."""
    if target <= 0:
        raise ValueError("target must be positive")
    for nonce in range(bound):
        digest = header_digest(index, prev_hash, root, nonce, creator, timestamp)
        if int.from_bytes(digest, "big") < target:
            return nonce
    raise NonceExhaustedError(f"no nonce below {bound} meets target")


# --- coin-age proof of stake ---------------------------------------------


class CoinAgeLedger:
    """Per-identity coin holdings; age of a holding is amount x elapsed ticks."""

    def __init__(self):
        self._holdings: dict[str, list[tuple[int, int]]] = {}

    def deposit(self, identity: str, amount: int, created_at: int) -> None:
        if amount < 0:
            raise ValueError("holding amount must be non-negative")
        if created_at < 0:
            raise ValueError("created_at must be non-negative")
        self._holdings.setdefault(identity, []).append((amount, created_at))

    def identities(self) -> list[str]:
        return list(self._holdings)

    def coin_age(self, identity: str, now: int) -> int:
        total = 0
        for amount, created_at in self._holdings.get(identity, []):
            if created_at > now:
                raise ValueError("holding created in the future")
            total += amount * (now - created_at)
        return total

    def reset_age(self, identity: str, now: int) -> None:
        """Re-timestamp every holding of `identity` to `now` (age consumed)."""
        self._holdings[identity] = [(amount, now) for amount, _ in self._holdings[identity]]

    def copy(self) -> "CoinAgeLedger":
        dup = CoinAgeLedger()
        dup._holdings = {k: list(v) for k, v in self._holdings.items()}
        return dup


def stake_winner(ages: CoinAgeLedger, now: int, rng: random.Random) -> str:
    """Draw an identity with probability proportional to coin age (no side effects)."""
    weights = [(identity, ages.coin_age(identity, now)) for identity in ages.identities()]
    total = sum(age for _, age in weights)
    if total <= 0:
        raise NoStakeError("all coin ages are zero")
    pick = rng.randrange(total)
    acc = 0
    for identity, age in weights:
        acc += age
        if pick < acc:
            return identity
    raise AssertionError("unreachable: cumulative walk exhausted")


def select_pos(ages: CoinAgeLedger, now: int, rng: random.Random | int) -> str:
    """Proportional-to-coin-age selection; the winner's age is consumed."""
    if isinstance(rng, int):
        rng = random.Random(rng)
    winner = stake_winner(ages, now, rng)
    ages.reset_age(winner, now)
    return winner


def pos_round_rng(pos_seed: int, height: int) -> random.Random:
    """Deterministic per-height randomness for stake selection."""
    seed_bytes = sha256(b"roamchain/pos:", pack_u64(pos_seed), pack_u64(height))
    return random.Random(int.from_bytes(seed_bytes, "big"))


# --- chain building and validation ----------------------------------------


def build_block(
    chain: Chain,
    transactions: list[Transaction] | tuple[Transaction, ...],
    timestamp: int,
    cfg: ConsensusConfig,
    creator: str = "",
    ages: CoinAgeLedger | None = None,
) -> Block:
    """Assemble and seal the next block (PoW mines; PoS picks the stake winner).

    The block is not appended and PoS ages are not consumed; pass the result
    to append_block.
    """
    txs = tuple(transactions)
    root = tx_root(txs)
    index = chain.height + 1
    prev_hash = chain.tip.block_hash

    if cfg.mode is ConsensusMode.POW:
        nonce = mine_pow(
            index, prev_hash, root, creator, timestamp, cfg.pow_target, cfg.pow_nonce_bound
        )
    else:
        if ages is None:
            raise ValueError("PoS block building requires a CoinAgeLedger")
        creator = stake_winner(ages, timestamp, pos_round_rng(cfg.pos_seed, index))
        nonce = 0

    return Block(
        index=index,
        prev_hash=prev_hash,
        tx_root=root,
        nonce=nonce,
        creator=creator,
        timestamp=timestamp,
        transactions=txs,
        block_hash=header_digest(index, prev_hash, root, nonce, creator, timestamp),
    )


def append_block(
    chain: Chain, block: Block, cfg: ConsensusConfig, ages: CoinAgeLedger | None = None
) -> Chain:
    """Verify linkage, root, and consensus proof, then extend the chain.

    Under PoS the winner's coin age is consumed, so `ages` must be the ledger
    state as of the chain tip.
    """
    if block.prev_hash != chain.tip.block_hash or block.index != chain.height + 1:
        raise BadLinkError(f"block {block.index} does not extend height {chain.height}")
    if tx_root(block.transactions) != block.tx_root:
        raise BadRootError("tx_root does not match transaction list")
    if block_digest(block) != block.block_hash:
        raise BadProofError("stored block_hash does not match header")

    if cfg.mode is ConsensusMode.POW:
        if int.from_bytes(block.block_hash, "big") >= cfg.pow_target:
            raise BadProofError("block hash not below proof-of-work target")
    else:
        if ages is None:
            raise ValueError("PoS verification requires a CoinAgeLedger")
        expected = stake_winner(ages, block.timestamp, pos_round_rng(cfg.pos_seed, block.index))
        if block.creator != expected:
            raise BadProofError(f"creator {block.creator} is not the stake winner")
        ages.reset_age(expected, block.timestamp)

    chain.blocks.append(block)
    return chain


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    first_invalid: int | None = None
    reason: str = ""

    def __str__(self) -> str:
        if self.ok:
            return "OK"
        return f"INVALID at index {self.first_invalid}: {self.reason}"


def validate_chain(chain: Chain) -> ValidationReport:
    """Recheck every linkage, transaction digest, root, and header hash.

    Failures are reported (smallest failing index), never raised.
    """

    def fail(index: int, reason: str) -> ValidationReport:
        return ValidationReport(False, index, reason)

    for k, block in enumerate(chain.blocks):
        if block.index != k:
            return fail(k, f"index {block.index} at position {k}")
        if k == 0:
            if block.prev_hash != ZERO_DIGEST:
                return fail(k, "genesis prev_hash not all-zero")
        elif block.prev_hash != chain.blocks[k - 1].block_hash:
            return fail(k, "prev_hash does not match previous block")
        for i, tx in enumerate(block.transactions):
            if tx.amount < 0 or (tx.amount != 0 and tx.kind not in MONETARY_KINDS):
                return fail(k, f"transaction {i} amount violates kind rule")
            if tx_digest(tx) != tx.tx_id:
                return fail(k, f"transaction {i} digest mismatch")
        if tx_root(block.transactions) != block.tx_root:
            return fail(k, "tx_root mismatch")
        if block_digest(block) != block.block_hash:
            return fail(k, "block hash mismatch")
    return ValidationReport(True)


# --- export / import -------------------------------------------------------


def _tx_to_bytes(tx: Transaction) -> bytes:
    return (
        tx.tx_id
        + pack_u8(int(tx.kind))
        + pack_bytes(tx.payload)
        + pack_str(tx.signer)
        + pack_bytes(tx.signature)
        + pack_u64(tx.amount)
        + pack_u64(tx.timestamp)
    )


def _tx_from_cursor(cur: Cursor) -> Transaction:
    return Transaction(
        tx_id=cur.take(DIGEST_SIZE),
        kind=TxKind(cur.u8()),
        payload=cur.bytes_(),
        signer=cur.str_(),
        signature=cur.bytes_(),
        amount=cur.u64(),
        timestamp=cur.u64(),
    )


def block_to_bytes(block: Block) -> bytes:
    out = (
        pack_u64(block.index)
        + block.prev_hash
        + block.tx_root
        + pack_u64(block.nonce)
        + pack_str(block.creator)
        + pack_u64(block.timestamp)
        + block.block_hash
        + pack_u32(len(block.transactions))
    )
    for tx in block.transactions:
        out += _tx_to_bytes(tx)
    return out


def block_from_bytes(data: bytes) -> Block:
    cur = Cursor(data)
    index = cur.u64()
    prev_hash = cur.take(DIGEST_SIZE)
    root = cur.take(DIGEST_SIZE)
    nonce = cur.u64()
    creator = cur.str_()
    timestamp = cur.u64()
    block_hash = cur.take(DIGEST_SIZE)
    txs = tuple(_tx_from_cursor(cur) for _ in range(cur.u32()))
    cur.expect_end()
    return Block(index, prev_hash, root, nonce, creator, timestamp, txs, block_hash)


def chain_to_text(chain: Chain) -> str:
    """One hex-encoded canonical block per line (bit-exact round trip)."""
    return "".join(block_to_bytes(block).hex() + "\n" for block in chain.blocks)


def chain_from_text(text: str) -> Chain:
    blocks = [block_from_bytes(bytes.fromhex(line)) for line in text.splitlines() if line]
    if not blocks:
        raise ValueError("empty chain file")
    chain = Chain(blocks=blocks)
    return chain


def write_chain(chain: Chain, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(chain_to_text(chain))


def read_chain(path) -> Chain:
    with open(path) as fh:
        return chain_from_text(fh.read())
