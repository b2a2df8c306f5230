"""Closed-form pricing model for traditional vs blockchain-mediated roaming.

Per-country demand comes from willingness-to-pay theta ~ Exponential(lambda),
with only users above the threshold theta_bar counting as potential
subscribers. Operator revenue splits into domestic, roaming, transit-in and
transit-out components; consumer surplus is the population-expected net
utility of domestic plus roaming usage. All functions are pure.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np


class EconomicsError(Exception):
    pass


class DomainError(EconomicsError):
    """A market parameter is outside its valid domain."""


class EmptyGridError(EconomicsError):
    pass


class BadRangeError(EconomicsError):
    pass


class Mode(enum.Enum):
    TRADITIONAL = "traditional"
    BLOCKCHAIN = "blockchain"


class Direction(enum.Enum):
    INCREASES = "increases"
    DECREASES = "decreases"
    CONSTANT = "constant"
    MIXED = "mixed"


@dataclass(frozen=True)
class CountryMarket:
    """m potential users; lambda is the reciprocal of average wealth (rate of
    the willingness-to-pay distribution); theta_bar is the minimum
    willingness-to-pay of a potential subscriber."""

    m: float
    lam: float
    theta_bar: float


@dataclass(frozen=True)
class OperatorTariff:
    p: float  # flat-rate domestic subscription price
    c: float  # fixed per-volume roaming price
    t: float = 0.0  # transit price charged to counterpart operators


@dataclass(frozen=True)
class ModelConfig:
    mode: Mode = Mode.TRADITIONAL
    kappa: float = 1.0  # weight of the quadratic roaming-utility term
    beta: float = 1.0  # transit pass-through: share of foreign transit price users face
    t_max: float = 5.0
    grid_step: float = 0.01
    free_transit: bool = True  # force all transit prices to zero
    max_iterations: int = 100

    def __post_init__(self):
        if self.kappa <= 0:
            raise DomainError("kappa must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise DomainError("beta must be in [0, 1]")
        if self.t_max < 0:
            raise DomainError("t_max must be non-negative")
        if self.grid_step <= 0:
            raise DomainError("grid_step must be positive")


@dataclass(frozen=True)
class RevenueBreakdown:
    domestic: float
    roaming: float
    transit_in: float
    transit_out: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "total", self.domestic + self.roaming + self.transit_in - self.transit_out
        )


@dataclass(frozen=True)
class SurplusBreakdown:
    domestic: float
    roaming: float

    @property
    def total(self) -> float:
        return self.domestic + self.roaming


@dataclass(frozen=True)
class SurplusResult:
    per_country: tuple[SurplusBreakdown, ...]
    aggregate: float


def _check_markets(markets) -> None:
    if not markets:
        raise DomainError("at least one market is required")
    for i, mk in enumerate(markets):
        for name, value in (("m", mk.m), ("lambda", mk.lam), ("theta_bar", mk.theta_bar)):
            if not (value > 0 and math.isfinite(value)):
                raise DomainError(f"market {i}: {name} must be positive and finite, got {value}")


def _effective_transit(tariffs, cfg: ModelConfig) -> list[float]:
    if cfg.free_transit or cfg.mode is Mode.BLOCKCHAIN:
        return [0.0] * len(tariffs)
    return [tf.t for tf in tariffs]


def subscriber_mass(market: CountryMarket) -> float:
    """Demand scale of a country: m / (lambda * theta_bar)."""
    return market.m / (market.lam * market.theta_bar)


def transit_inflow(market_j: CountryMarket, t_i, beta: float):
    """Transit fees earned from country j's roamers at own transit price t_i.

    Participation attenuates exponentially with the price those users face,
    exp(-lambda_j (theta_bar_j + beta t_i)); at beta = 0 this degenerates to
    a price-insensitive linear tariff.
    """
    t_i = np.asarray(t_i, dtype=float)
    factor = np.exp(-market_j.lam * (market_j.theta_bar + beta * t_i))
    return market_j.m * t_i * factor / (market_j.lam * market_j.theta_bar)


def revenue(markets, tariffs, cfg: ModelConfig) -> list[RevenueBreakdown]:
    """Per-operator revenue breakdown.

    Traditional mode: domestic m_i p_i / (lam_i theta_bar_i), roaming
    m_i c_i / (lam_i theta_bar_i), transit-in earned from foreign roamers
    (attenuated, see transit_inflow), transit-out m_i t_j / (lam_i theta_bar_i)
    paid for own roamers abroad. Blockchain mode: visitors pay the visited
    operator directly (roaming sums over foreign countries) and no transit
    flows at all.
    """
    _check_markets(markets)
    if len(tariffs) != len(markets):
        raise DomainError("one tariff per market is required")
    t_eff = _effective_transit(tariffs, cfg)

    out = []
    for i, (mk, tf) in enumerate(zip(markets, tariffs)):
        domestic = subscriber_mass(mk) * tf.p
        if cfg.mode is Mode.BLOCKCHAIN:
            roaming = sum(subscriber_mass(markets[j]) * tf.c for j in range(len(markets)) if j != i)
            transit_in = transit_out = 0.0
        else:
            roaming = subscriber_mass(mk) * tf.c
            transit_in = sum(
                float(transit_inflow(markets[j], t_eff[i], cfg.beta))
                for j in range(len(markets))
                if j != i
            )
            transit_out = sum(
                subscriber_mass(mk) * t_eff[j] for j in range(len(markets)) if j != i
            )
        out.append(RevenueBreakdown(domestic, roaming, transit_in, transit_out))
    return out


def consumer_surplus(markets, tariffs, cfg: ModelConfig) -> SurplusResult:
    """Expected net utility of the subscribed population, per country.

    Domestic utility is theta - p; roaming utility is kappa (theta - c_eff)^2,
    where c_eff is the roaming price users face: c_i plus the pass-through
    beta * mean(foreign transit price) in traditional mode, and 0 in
    blockchain mode (roamers pay the visited operator's price transparently,
    and the home roaming charge drops away). Expectations are taken over
    theta ~ Exp(lambda), restricted to subscribers (theta >= theta_bar), and
    scaled by the country population m.
    """
    _check_markets(markets)
    if len(tariffs) != len(markets):
        raise DomainError("one tariff per market is required")
    t_eff = _effective_transit(tariffs, cfg)

    per_country = []
    for i, (mk, tf) in enumerate(zip(markets, tariffs)):
        lam, tb = mk.lam, mk.theta_bar
        participation = mk.m * math.exp(-lam * tb)
        domestic = participation * (tb - tf.p + 1.0 / lam)
        if cfg.mode is Mode.BLOCKCHAIN:
            c_eff = 0.0
        else:
            foreign = [t_eff[j] for j in range(len(markets)) if j != i]
            c_eff = tf.c + cfg.beta * (sum(foreign) / len(foreign) if foreign else 0.0)
        gap = tb - c_eff
        roaming = cfg.kappa * participation * (gap * gap + 2.0 * gap / lam + 2.0 / lam**2)
        per_country.append(SurplusBreakdown(domestic, roaming))
    return SurplusResult(tuple(per_country), sum(sb.total for sb in per_country))


# --- price optimization -----------------------------------------------------


@dataclass(frozen=True)
class PriceChoice:
    p: float
    c: float
    revenue: float
    on_boundary: bool  # argmax landed on an edge of the search grid


def optimize_prices(markets, tariffs, index: int, cfg: ModelConfig, p_grid, c_grid) -> PriceChoice:
    """Grid argmax of operator `index`'s total revenue, other tariffs fixed.

    Ties break toward the smallest p, then the smallest c.
    """
    p_values = list(p_grid)
    c_values = list(c_grid)
    if not p_values or not c_values:
        raise EmptyGridError("price grids must be nonempty")

    best: PriceChoice | None = None
    tariffs = list(tariffs)
    for p in p_values:
        for c in c_values:
            trial = list(tariffs)
            trial[index] = replace(tariffs[index], p=p, c=c)
            total = revenue(markets, trial, cfg)[index].total
            if best is None or total > best.revenue:
                boundary = (
                    p in (p_values[0], p_values[-1]) or c in (c_values[0], c_values[-1])
                )
                best = PriceChoice(p, c, total, boundary)
    return best


# --- transit price schemes ---------------------------------------------------


def transit_regulator(markets) -> list[float]:
    """Regulator-chosen transit prices that maximize consumer surplus: all zero."""
    _check_markets(markets)
    return [0.0] * len(markets)


@dataclass(frozen=True)
class NashResult:
    t: tuple[float, ...]
    iterations: int
    converged: bool
    corner: bool  # some equilibrium price sits on the grid boundary


def transit_grid(cfg: ModelConfig) -> np.ndarray:
    n = int(round(cfg.t_max / cfg.grid_step)) if cfg.t_max > 0 else 0
    return np.arange(n + 1) * cfg.grid_step


def _total_vs_own_t(markets, tariffs, cfg: ModelConfig, i: int, grid: np.ndarray, t_vec) -> np.ndarray:
    """Operator i's total revenue over the grid of own transit prices, with
    the other operators held at t_vec."""
    mk, tf = markets[i], tariffs[i]
    constant = subscriber_mass(mk) * (tf.p + tf.c)
    constant -= sum(subscriber_mass(mk) * t_vec[j] for j in range(len(markets)) if j != i)
    inflow = sum(
        transit_inflow(markets[j], grid, cfg.beta) for j in range(len(markets)) if j != i
    )
    return constant + inflow


def transit_nash(markets, tariffs, cfg: ModelConfig) -> NashResult:
    """Synchronous best-response iteration of the transit-price game.

    Each round every operator picks the grid price maximizing its own total
    revenue against the previous round's prices; converged when a full round
    changes nothing. Ties go to the smallest price.
    """
    _check_markets(markets)
    grid = transit_grid(cfg)
    n = len(markets)
    current = [0.0] * n
    game_cfg = replace(cfg, free_transit=False, mode=Mode.TRADITIONAL)

    iterations = 0
    converged = False
    while iterations < cfg.max_iterations:
        iterations += 1
        best = [
            float(grid[int(np.argmax(_total_vs_own_t(markets, tariffs, game_cfg, i, grid, current)))])
            for i in range(n)
        ]
        if best == current:
            converged = True
            break
        current = best

    corner = any(t in (float(grid[0]), float(grid[-1])) for t in current)
    return NashResult(tuple(current), iterations, converged, corner)


# --- sweeps and model comparison ---------------------------------------------


SWEEP_PARAMS = ("p", "c", "t", "lambda", "theta_bar")


@dataclass(frozen=True)
class SweepResult:
    param: str
    index: int
    values: tuple[float, ...]
    revenues: tuple[tuple[RevenueBreakdown, ...], ...]  # one tuple per value
    surpluses: tuple[SurplusResult, ...]
    directions: dict[str, Direction]


def _direction(series, tol: float = 1e-9) -> Direction:
    diffs = [b - a for a, b in zip(series, series[1:])]
    scale = max(1.0, max(abs(x) for x in series))
    up = [d > tol * scale for d in diffs]
    down = [d < -tol * scale for d in diffs]
    if all(up):
        return Direction.INCREASES
    if all(down):
        return Direction.DECREASES
    if not any(up) and not any(down):
        return Direction.CONSTANT
    return Direction.MIXED


def sweep(markets, tariffs, cfg: ModelConfig, param: str, values, index: int = 0) -> SweepResult:
    """Evaluate revenue and consumer surplus while varying one parameter of
    one country/operator; report the direction of each tracked quantity.

    Sweeping `t` turns the free-transit flag off (otherwise the sweep would
    be vacuous).
    """
    if param not in SWEEP_PARAMS:
        raise BadRangeError(f"unknown sweep parameter {param!r}")
    points = [float(v) for v in values]
    if len(points) < 3:
        raise BadRangeError("a sweep needs at least 3 points")
    if any(b <= a for a, b in zip(points, points[1:])):
        raise BadRangeError("sweep values must be strictly increasing")
    if param == "t":
        cfg = replace(cfg, free_transit=False)

    revenues = []
    surpluses = []
    for v in points:
        mks = list(markets)
        tfs = list(tariffs)
        if param == "lambda":
            mks[index] = replace(mks[index], lam=v)
        elif param == "theta_bar":
            mks[index] = replace(mks[index], theta_bar=v)
        else:
            tfs[index] = replace(tfs[index], **{param: v})
        revenues.append(tuple(revenue(mks, tfs, cfg)))
        surpluses.append(consumer_surplus(mks, tfs, cfg))

    directions: dict[str, Direction] = {}
    for i in range(len(markets)):
        directions[f"revenue_{i}"] = _direction([row[i].total for row in revenues])
        directions[f"cs_{i}"] = _direction([sr.per_country[i].total for sr in surpluses])
    directions[f"transit_in_{index}"] = _direction([row[index].transit_in for row in revenues])
    directions["cs_aggregate"] = _direction([sr.aggregate for sr in surpluses])
    return SweepResult(param, index, tuple(points), tuple(revenues), tuple(surpluses), directions)


@dataclass(frozen=True)
class CompareRow:
    lambda1: float
    mode: Mode
    revenues: tuple[RevenueBreakdown, ...]
    surplus: SurplusResult


@dataclass(frozen=True)
class CompareResult:
    rows: tuple[CompareRow, ...]
    checks: dict[str, bool]
    crossover: float | None  # lambda_1 where the second operator's gain flips sign


def compare_models(markets, tariffs, lambda1_values, cfg: ModelConfig | None = None) -> CompareResult:
    """Sweep the first country's wealth rate and evaluate both roaming models.

    The traditional side is the paid-roaming / free-transit baseline. The
    `checks` map records whether each expected trend held: the first
    operator's revenue falls with lambda_1 under both models, its
    blockchain-vs-traditional gain widens, the second operator's gain shrinks
    and crosses zero exactly once, and blockchain consumer surplus dominates
    pointwise while falling with lambda_1 under both models.
    """
    if len(markets) < 2:
        raise DomainError("model comparison needs at least two countries")
    base = cfg or ModelConfig()
    points = [float(v) for v in lambda1_values]
    if len(points) < 2 or any(b <= a for a, b in zip(points, points[1:])):
        raise BadRangeError("lambda1 values must be strictly increasing (>= 2 points)")

    rows: list[CompareRow] = []
    for lam1 in points:
        mks = list(markets)
        mks[0] = replace(mks[0], lam=lam1)
        for mode in (Mode.TRADITIONAL, Mode.BLOCKCHAIN):
            mode_cfg = replace(base, mode=mode, free_transit=True)
            rows.append(
                CompareRow(
                    lam1,
                    mode,
                    tuple(revenue(mks, tariffs, mode_cfg)),
                    consumer_surplus(mks, tariffs, mode_cfg),
                )
            )

    trad = [r for r in rows if r.mode is Mode.TRADITIONAL]
    bc = [r for r in rows if r.mode is Mode.BLOCKCHAIN]
    r1_gap = [b.revenues[0].total - t.revenues[0].total for t, b in zip(trad, bc)]
    r2_gap = [b.revenues[1].total - t.revenues[1].total for t, b in zip(trad, bc)]

    tol = 1e-12
    signs = [0 if abs(d) <= tol else (1 if d > 0 else -1) for d in r2_gap]
    nonzero = [s for s in signs if s != 0]
    single_cross = (
        len(set(nonzero)) == 2
        and nonzero == sorted(nonzero, reverse=True)  # all +1 before all -1
    )
    crossover = None
    if single_cross:
        if 0 in signs:
            crossover = points[signs.index(0)]
        else:
            crossover = points[signs.index(-1)]

    checks = {
        "r1_decreasing_traditional": _direction([r.revenues[0].total for r in trad])
        is Direction.DECREASES,
        "r1_decreasing_blockchain": _direction([r.revenues[0].total for r in bc])
        is Direction.DECREASES,
        "r1_gap_increasing": _direction(r1_gap) is Direction.INCREASES,
        "r2_gap_decreasing": _direction(r2_gap) is Direction.DECREASES,
        "r2_gap_single_crossover": single_cross,
        "cs_blockchain_dominates": all(
            b.surplus.aggregate >= t.surplus.aggregate - tol for t, b in zip(trad, bc)
        ),
        "cs_decreasing_traditional": _direction([r.surplus.aggregate for r in trad])
        is Direction.DECREASES,
        "cs_decreasing_blockchain": _direction([r.surplus.aggregate for r in bc])
        is Direction.DECREASES,
    }
    return CompareResult(tuple(rows), checks, crossover)
