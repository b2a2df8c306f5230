"""Deterministic agent-based simulation of the roaming lifecycle.

A scenario registers operators and users on the ledger, lets subscribers pay
their domestic flat rate, walks each roaming user through the contract
lifecycle (issue, accept or reject, grant), exercises the gatekeeper access
path, and settles charges as ledger transactions. Everything is driven by a
single seeded RNG and discrete ticks, so a fixed config yields a
byte-identical chain.
"""

from __future__ import annotations

import configparser
import enum
import random
from dataclasses import dataclass, field, replace

from . import codec
from .codec import ZERO_DIGEST
from .contracts import (
    CcUpdate,
    ContractWorld,
    Currency,
    IdentityRegistration,
    MnocIssue,
    MoneyMove,
    PermissionGrant,
    QueryPointer,
    RelStatus,
    Role,
    TermsAcceptance,
    apply_action,
    decode_action,
    make_action_tx,
    mnoc_contract_id,
)
from .economics import CountryMarket, OperatorTariff
from .gatekeeper import (
    AccessRequest,
    ChargingRecord,
    RecordStore,
    make_pointer,
    put_record,
    serve_request,
)
from .ledger import (
    Chain,
    CoinAgeLedger,
    ConsensusConfig,
    ConsensusMode,
    Transaction,
    TxKind,
    append_block,
    build_block,
    target_from_zero_bits,
)
from .money import convert_minor, from_minor, to_minor


class ConfigError(Exception):
    """Invalid scenario configuration; `path` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class InsufficientFundsError(Exception):
    pass


class SettleMode(enum.Enum):
    NATIONAL = "national"
    INTERNATIONAL = "international"


class SessionState(enum.Enum):
    REQUESTED = "requested"
    TERMS_OFFERED = "terms_offered"
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    ACTIVE = "active"
    SETTLED = "settled"


class AgreementModel(enum.Enum):
    PEER_TO_PEER = "peer_to_peer"
    BLOCKCHAIN = "blockchain"


def agreement_count(n: int, model: AgreementModel) -> int:
    """Agreements needed for n operators to interoperate: pairwise contracts
    versus one registrar entry each."""
    if n < 1:
        raise ValueError("operator count must be >= 1")
    if model is AgreementModel.PEER_TO_PEER:
        return n * (n - 1) // 2
    return n


def convert_price(amount_crypto: float, rate: float) -> float:
    """Fiat value of a cryptocurrency amount at `rate` fiat per crypto unit."""
    return from_minor(convert_minor(to_minor(amount_crypto), rate))


# --- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class OperatorSpec:
    code: str
    country: int
    p: float
    c: float
    t: float = 0.0
    rate: float = 1.0  # fiat per cryptocurrency unit, announced by this operator
    users: int = 0
    roamer_fraction: float = 0.0
    stake: float = 100.0
    crypto_balance: float = 1000.0
    roam_to: tuple[str, ...] = ()


PHASE_TICKS = 5  # operator reg, user reg, subscriptions, roaming, settlement


@dataclass(frozen=True)
class ScenarioConfig:
    countries: dict[int, CountryMarket]
    operators: tuple[OperatorSpec, ...]
    seed: int = 0
    consensus: ConsensusMode = ConsensusMode.POW
    pow_zero_bits: int = 8
    pow_nonce_bound: int = 1 << 32
    pos_seed: int | None = None
    roam_mode: SettleMode = SettleMode.INTERNATIONAL
    ticks: int = PHASE_TICKS
    user_wallet: float = 1000.0
    volume_min: int = 1
    volume_max: int = 10

    def consensus_config(self) -> ConsensusConfig:
        return ConsensusConfig(
            mode=self.consensus,
            pow_target=target_from_zero_bits(self.pow_zero_bits),
            pow_nonce_bound=self.pow_nonce_bound,
            pos_seed=self.seed if self.pos_seed is None else self.pos_seed,
        )


def validate_config(cfg: ScenarioConfig) -> None:
    if not cfg.countries:
        raise ConfigError("scenario.countries", "at least one country is required")
    if not cfg.operators:
        raise ConfigError("scenario.operators", "at least one operator is required")
    if not 0 <= cfg.seed < 1 << 64:
        raise ConfigError("scenario.seed", "seed must fit in 64 bits")
    if cfg.ticks < PHASE_TICKS:
        raise ConfigError("scenario.ticks", f"lifecycle needs at least {PHASE_TICKS} ticks")
    if not 0 <= cfg.volume_min <= cfg.volume_max:
        raise ConfigError("scenario.volume_min", "need 0 <= volume_min <= volume_max")
    if cfg.user_wallet < 0:
        raise ConfigError("scenario.user_wallet", "wallet must be non-negative")
    if not 0 < cfg.pow_zero_bits <= 256:
        raise ConfigError("scenario.pow_zero_bits", "must be in (0, 256]")

    for idx, mk in cfg.countries.items():
        for name, value in (("m", mk.m), ("lambda", mk.lam), ("theta_bar", mk.theta_bar)):
            if not value > 0:
                raise ConfigError(f"country:{idx}.{name}", "must be positive")

    codes = set()
    for op in cfg.operators:
        path = f"operator:{op.code}"
        if op.code in codes:
            raise ConfigError(path, "duplicate operator code")
        codes.add(op.code)
        if op.country not in cfg.countries:
            raise ConfigError(f"{path}.country", f"unknown country {op.country}")
        for name, value in (("p", op.p), ("c", op.c), ("t", op.t)):
            if value < 0:
                raise ConfigError(f"{path}.{name}", "must be non-negative")
        if op.rate <= 0:
            raise ConfigError(f"{path}.rate", "conversion rate must be positive")
        if op.users < 0:
            raise ConfigError(f"{path}.users", "must be non-negative")
        if not 0.0 <= op.roamer_fraction <= 1.0:
            raise ConfigError(f"{path}.roamer_fraction", "must be in [0, 1]")
        if op.stake < 0 or op.crypto_balance < 0:
            raise ConfigError(f"{path}.stake", "stake and crypto_balance must be non-negative")
    for op in cfg.operators:
        path = f"operator:{op.code}"
        for target in op.roam_to:
            if target not in codes:
                raise ConfigError(f"{path}.roam_to", f"unknown operator {target}")
            if target == op.code:
                raise ConfigError(f"{path}.roam_to", "operator cannot roam to itself")
        if op.roamer_fraction > 0 and not op.roam_to and len(cfg.operators) < 2:
            raise ConfigError(f"{path}.roamer_fraction", "no visited operator available")
    if cfg.consensus is ConsensusMode.POS and not any(op.stake > 0 for op in cfg.operators):
        raise ConfigError("scenario.consensus", "proof of stake needs positive total stake")


def load_scenario(path) -> ScenarioConfig:
    """Parse a scenario config file (key/value sections, see README schema)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    with open(path) as fh:
        parser.read_file(fh)

    def bad(section: str, key: str, msg: str):
        return ConfigError(f"{section}.{key}" if key else section, msg)

    countries: dict[int, CountryMarket] = {}
    operators: list[OperatorSpec] = []
    scenario: dict[str, str] = {}

    for section in parser.sections():
        if section == "scenario":
            scenario = dict(parser[section])
        elif section == "model":
            continue  # economics settings, read by the econ commands
        elif section.startswith("country:"):
            idx_text = section.split(":", 1)[1]
            try:
                idx = int(idx_text)
            except ValueError:
                raise bad(section, "", "country index must be an integer") from None
            sec = parser[section]
            try:
                countries[idx] = CountryMarket(
                    m=sec.getfloat("m"),
                    lam=sec.getfloat("lambda"),
                    theta_bar=sec.getfloat("theta_bar"),
                )
            except (ValueError, TypeError) as exc:
                raise bad(section, "", f"bad country parameters: {exc}") from None
            extra = set(sec) - {"m", "lambda", "theta_bar"}
            if extra:
                raise bad(section, sorted(extra)[0], "unknown key")
        elif section.startswith("operator:"):
            code = section.split(":", 1)[1]
            sec = parser[section]
            known = {
                "country", "p", "c", "t", "rate", "users", "roamer_fraction",
                "stake", "crypto_balance", "roam_to",
            }
            extra = set(sec) - known
            if extra:
                raise bad(section, sorted(extra)[0], "unknown key")
            try:
                roam_to = tuple(
                    item.strip() for item in sec.get("roam_to", "").split(",") if item.strip()
                )
                operators.append(
                    OperatorSpec(
                        code=code,
                        country=sec.getint("country"),
                        p=sec.getfloat("p"),
                        c=sec.getfloat("c"),
                        t=sec.getfloat("t", 0.0),
                        rate=sec.getfloat("rate", 1.0),
                        users=sec.getint("users", 0),
                        roamer_fraction=sec.getfloat("roamer_fraction", 0.0),
                        stake=sec.getfloat("stake", 100.0),
                        crypto_balance=sec.getfloat("crypto_balance", 1000.0),
                        roam_to=roam_to,
                    )
                )
            except (ValueError, TypeError) as exc:
                raise bad(section, "", f"bad operator parameters: {exc}") from None
        else:
            raise bad(section, "", "unknown section")

    known_scenario = {
        "seed", "consensus", "pow_zero_bits", "pow_nonce_bound", "pos_seed",
        "roam_mode", "ticks", "user_wallet", "volume_min", "volume_max",
    }
    extra = set(scenario) - known_scenario
    if extra:
        raise bad("scenario", sorted(extra)[0], "unknown key")
    try:
        consensus = ConsensusMode(scenario.get("consensus", "pow"))
    except ValueError:
        raise bad("scenario", "consensus", "must be 'pow' or 'pos'") from None
    try:
        roam_mode = SettleMode(scenario.get("roam_mode", "international"))
    except ValueError:
        raise bad("scenario", "roam_mode", "must be 'national' or 'international'") from None
    try:
        cfg = ScenarioConfig(
            countries=countries,
            operators=tuple(operators),
            seed=int(scenario.get("seed", "0")),
            consensus=consensus,
            pow_zero_bits=int(scenario.get("pow_zero_bits", "8")),
            pow_nonce_bound=int(scenario.get("pow_nonce_bound", str(1 << 32))),
            pos_seed=int(scenario["pos_seed"]) if "pos_seed" in scenario else None,
            roam_mode=roam_mode,
            ticks=int(scenario.get("ticks", str(PHASE_TICKS))),
            user_wallet=float(scenario.get("user_wallet", "1000.0")),
            volume_min=int(scenario.get("volume_min", "1")),
            volume_max=int(scenario.get("volume_max", "10")),
        )
    except ValueError as exc:
        raise bad("scenario", "", f"bad scenario value: {exc}") from None
    validate_config(cfg)
    return cfg


# --- agents and sessions ------------------------------------------------------


@dataclass
class UserAgent:
    address: str
    iccid: str
    home: str  # operator code
    theta: float  # willingness-to-pay, fiat per month
    wallet: int  # fiat minor units
    subscribed: bool = False
    privacy_accepted: dict[bytes, bool] = field(default_factory=dict)


@dataclass
class OperatorAgent:
    spec: OperatorSpec
    address: str
    store: RecordStore
    crypto_balance: int  # minor units

    @property
    def code(self) -> str:
        return self.spec.code

    def tariff(self) -> OperatorTariff:
        return OperatorTariff(self.spec.p, self.spec.c, self.spec.t)


@dataclass
class RoamingSession:
    user: str  # user address
    hno: str  # operator code
    vno: str  # operator code
    mnoc_id: bytes | None = None
    state: SessionState = SessionState.REQUESTED
    offered_price: int = 0  # fiat minor units per volume unit
    volume: int = 0


# --- metrics -------------------------------------------------------------------


@dataclass
class OperatorMetrics:
    code: str
    address: str
    country: int
    users: int = 0
    subscribers: int = 0
    domestic_revenue: int = 0  # fiat minor units
    roaming_revenue: int = 0  # fiat minor units
    transit_in: int = 0  # crypto minor units (national settlements received)
    transit_out: int = 0  # crypto minor units (national settlements paid)
    access_granted: int = 0
    access_denied: int = 0

    @property
    def crypto_delta(self) -> int:
        return self.transit_in - self.transit_out


@dataclass(frozen=True)
class ConservationAudit:
    """Independent walk over the chain's monetary transactions."""

    fiat_debits: int
    fiat_credits: int
    crypto_debits: int
    crypto_credits: int
    debits_by_address: dict[tuple[Currency, str], int]
    credits_by_address: dict[tuple[Currency, str], int]


def audit_conservation(chain: Chain) -> ConservationAudit:
    totals = {Currency.FIAT: [0, 0], Currency.CRYPTO: [0, 0]}
    debits: dict[tuple[Currency, str], int] = {}
    credits: dict[tuple[Currency, str], int] = {}
    for block in chain:
        for tx in block.transactions:
            if tx.kind not in (TxKind.CHARGE, TxKind.TRANSFER):
                continue
            move = decode_action(tx.kind, tx.payload)
            totals[move.currency][0] += tx.amount
            totals[move.currency][1] += tx.amount
            debits[(move.currency, move.payer)] = (
                debits.get((move.currency, move.payer), 0) + tx.amount
            )
            credits[(move.currency, move.payee)] = (
                credits.get((move.currency, move.payee), 0) + tx.amount
            )
    return ConservationAudit(
        fiat_debits=totals[Currency.FIAT][0],
        fiat_credits=totals[Currency.FIAT][1],
        crypto_debits=totals[Currency.CRYPTO][0],
        crypto_credits=totals[Currency.CRYPTO][1],
        debits_by_address=debits,
        credits_by_address=credits,
    )


@dataclass
class MetricsReport:
    operators: list[OperatorMetrics]
    sessions_by_state: dict[str, int]
    consumer_surplus_sample: float
    mnocs_issued: int
    agreements_peer_to_peer: int
    agreements_blockchain: int
    audit: ConservationAudit


# --- the simulation -------------------------------------------------------------


class Simulation:
    """One scenario run. Use run() or the module-level run_scenario()."""

    def __init__(self, cfg: ScenarioConfig):
        validate_config(cfg)
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.consensus = cfg.consensus_config()
        self.chain = Chain()
        self.world = ContractWorld()
        self.ages = CoinAgeLedger()
        self.operators: dict[str, OperatorAgent] = {}
        self.users: list[UserAgent] = []
        self.sessions: list[RoamingSession] = []
        self.metrics: dict[str, OperatorMetrics] = {}
        self.tick = 0
        self._pending: list[Transaction] = []

        for op in cfg.operators:
            address = codec.derive_address(f"operator/{op.code}")
            self.operators[op.code] = OperatorAgent(
                op, address, RecordStore(address), to_minor(op.crypto_balance)
            )
            self.metrics[op.code] = OperatorMetrics(op.code, address, op.country, users=op.users)
            if op.stake > 0:
                self.ages.deposit(address, to_minor(op.stake), 0)

        serial = 0
        for op in cfg.operators:
            market = cfg.countries[op.country]
            for _ in range(op.users):
                serial += 1
                iccid = f"89010{serial:014d}"
                self.users.append(
                    UserAgent(
                        address=codec.derive_address(f"user/{iccid}"),
                        iccid=iccid,
                        home=op.code,
                        theta=self.rng.expovariate(market.lam),
                        wallet=to_minor(cfg.user_wallet),
                    )
                )

    # -- ledger plumbing --

    def _submit(self, action, signer: str, amount: int = 0, kind: TxKind | None = None) -> Transaction:
        tx = make_action_tx(action, signer, timestamp=self.tick, amount=amount, kind=kind)
        apply_action(self.world, tx)
        self._pending.append(tx)
        return tx

    def _commit_block(self) -> None:
        if not self._pending:
            return
        creator = ""
        if self.consensus is not None and self.consensus.mode is ConsensusMode.POW:
            rotation = list(self.operators.values())
            creator = rotation[(self.chain.height) % len(rotation)].address
        block = build_block(
            self.chain, self._pending, self.tick, self.consensus, creator=creator, ages=self.ages
        )
        append_block(self.chain, block, self.consensus, ages=self.ages)
        self._pending = []

    def _advance(self) -> None:
        self._commit_block()
        self.tick += 1

    # -- lifecycle phases --

    def register_operators(self) -> None:
        for op in self.cfg.operators:
            agent = self.operators[op.code]
            self._submit(
                IdentityRegistration(op.code, agent.address, Role.OPERATOR), agent.address
            )

    def register_users(self) -> None:
        for user in self.users:
            self._submit(
                IdentityRegistration(user.iccid, user.address, Role.USER), user.address
            )

    def subscribe_users(self) -> None:
        """Users with willingness-to-pay at or above their country threshold
        subscribe and pay the flat domestic rate; the home operator files a
        charging record for each subscriber."""
        for user in self.users:
            home = self.operators[user.home]
            market = self.cfg.countries[home.spec.country]
            if user.theta < market.theta_bar:
                continue
            user.subscribed = True
            self.metrics[home.code].subscribers += 1
            price = to_minor(home.spec.p)
            self._charge(user, home, price, ZERO_DIGEST, "domestic subscription")
            self.metrics[home.code].domestic_revenue += price
            record = ChargingRecord(user.address, "domestic-subscription", 1, price, "fiat")
            put_record(home.store, f"charging/{user.iccid}", record.encode())

    def _charge(self, user: UserAgent, payee: OperatorAgent, amount: int, ref: bytes, memo: str) -> None:
        if user.wallet < amount:
            raise InsufficientFundsError(f"user {user.iccid} cannot pay {from_minor(amount)}")
        move = MoneyMove(user.address, payee.address, Currency.FIAT, ref, memo)
        self._submit(move, payee.address, amount=amount, kind=TxKind.CHARGE)
        user.wallet -= amount

    def pick_roamers(self) -> list[tuple[UserAgent, str]]:
        """Deterministically sample roaming subscribers per operator and pair
        each with the visited operator from the preference list."""
        pairs: list[tuple[UserAgent, str]] = []
        for op in self.cfg.operators:
            if op.roamer_fraction <= 0:
                continue
            candidates = [u for u in self.users if u.home == op.code and u.subscribed]
            count = round(op.roamer_fraction * len(candidates))
            if count == 0 or not candidates:
                continue
            preference = op.roam_to or tuple(
                other.code for other in self.cfg.operators if other.code != op.code
            )
            if not preference:
                continue
            chosen = sorted(self.rng.sample(range(len(candidates)), count))
            pairs.extend((candidates[i], preference[0]) for i in chosen)
        return pairs

    def attempt_roam(self, user: UserAgent, vno_code: str) -> RoamingSession:
        """Walk one user through the roaming lifecycle against a visited operator.

        The offer is the visited operator's per-volume roaming price,
        converted from cryptocurrency to the user's fiat at the announced
        rate (zero under national roaming, where operators settle between
        themselves). The user accepts iff the offer does not exceed their
        willingness-to-pay.
        """
        hno = self.operators[user.home]
        vno = self.operators[vno_code]
        session = RoamingSession(user.address, hno.code, vno.code)
        self.sessions.append(session)

        query = f"charging/{user.iccid}"
        pointer = make_pointer(hno.store, query)
        pointers = (pointer,)
        session.mnoc_id = mnoc_contract_id(hno.address, vno.address, user.address, pointers, self.tick)
        self._submit(
            MnocIssue(hno.address, vno.address, user.address, pointers), vno.address
        )

        if self.cfg.roam_mode is SettleMode.NATIONAL:
            session.offered_price = 0  # roaming charges excluded from the user's terms
        else:
            session.offered_price = convert_minor(to_minor(vno.spec.c), vno.spec.rate)
        session.state = SessionState.TERMS_OFFERED

        if session.offered_price > to_minor(user.theta):
            self._submit(
                CcUpdate(user.address, session.mnoc_id, RelStatus.REJECTED), user.address
            )
            session.state = SessionState.REJECTED
            return session

        self._submit(TermsAcceptance(session.mnoc_id), user.address)
        user.privacy_accepted[session.mnoc_id] = True
        session.state = SessionState.ACCEPTED

        self._submit(PermissionGrant(session.mnoc_id, vno.address, query), hno.address)
        session.state = SessionState.ACTIVE
        session.volume = self.rng.randint(self.cfg.volume_min, self.cfg.volume_max)

        response = serve_request(hno.store, self.world, AccessRequest(vno.address, pointer))
        key = "access_granted" if response.granted else "access_denied"
        setattr(self.metrics[vno.code], key, getattr(self.metrics[vno.code], key) + 1)
        return session

    def settle(self, sessions: list[RoamingSession] | None = None) -> list[Transaction]:
        """Emit settlement transactions for every active session.

        International sessions bill the user (offered price x volume, fiat);
        national sessions move volume x visited roaming price in
        cryptocurrency from home to visited operator.
        """
        txs: list[Transaction] = []
        for session in sessions if sessions is not None else self.sessions:
            if session.state is not SessionState.ACTIVE:
                continue
            vno = self.operators[session.vno]
            hno = self.operators[session.hno]
            if self.cfg.roam_mode is SettleMode.INTERNATIONAL:
                amount = session.offered_price * session.volume
                user = next(u for u in self.users if u.address == session.user)
                self._charge(user, vno, amount, session.mnoc_id, "roaming usage")
                self.metrics[vno.code].roaming_revenue += amount
                txs.append(self._pending[-1])
            else:
                amount = to_minor(vno.spec.c) * session.volume
                if hno.crypto_balance < amount:
                    raise InsufficientFundsError(
                        f"operator {hno.code} cannot transfer {from_minor(amount)}"
                    )
                move = MoneyMove(
                    hno.address, vno.address, Currency.CRYPTO, session.mnoc_id, "national roaming"
                )
                txs.append(
                    self._submit(move, hno.address, amount=amount, kind=TxKind.TRANSFER)
                )
                hno.crypto_balance -= amount
                vno.crypto_balance += amount
                self.metrics[hno.code].transit_out += amount
                self.metrics[vno.code].transit_in += amount
            session.state = SessionState.SETTLED
        return txs

    # -- orchestration --

    def run(self) -> tuple[Chain, ContractWorld, MetricsReport]:
        self.tick = 1
        self.register_operators()
        self._advance()
        self.register_users()
        self._advance()
        self.subscribe_users()
        self._advance()
        for user, vno_code in self.pick_roamers():
            self.attempt_roam(user, vno_code)
        self._advance()
        self.settle()
        self._advance()
        return self.chain, self.world, self.report()

    def report(self) -> MetricsReport:
        by_state: dict[str, int] = {state.value: 0 for state in SessionState}
        for session in self.sessions:
            by_state[session.state.value] += 1
        cs = 0.0
        theta_by_address = {u.address: u.theta for u in self.users}
        for user in self.users:
            if user.subscribed:
                home = self.operators[user.home]
                cs += user.theta - home.spec.p
        for session in self.sessions:
            if session.state is SessionState.SETTLED:
                gap = theta_by_address[session.user] - from_minor(session.offered_price)
                cs += gap * gap
        n = len(self.cfg.operators)
        return MetricsReport(
            operators=[self.metrics[op.code] for op in self.cfg.operators],
            sessions_by_state=by_state,
            consumer_surplus_sample=cs,
            mnocs_issued=len(self.world.mnocs),
            agreements_peer_to_peer=agreement_count(n, AgreementModel.PEER_TO_PEER),
            agreements_blockchain=agreement_count(n, AgreementModel.BLOCKCHAIN),
            audit=audit_conservation(self.chain),
        )


def run_scenario(cfg: ScenarioConfig) -> tuple[Chain, ContractWorld, MetricsReport]:
    """Run a scenario end to end; deterministic for a fixed config."""
    return Simulation(cfg).run()
