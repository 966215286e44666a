"""Offline evaluation of a ranking by replaying the click log.

The replay asks: had the site shown a different MFI at the position
this client clicked, what would have happened?  Outcomes are estimated
from the client's own history with the substituted MFI when available,
and otherwise from reapproval probabilities: conditional frequencies of
(outcome at MFI a) given (outcome at MFI b) across all clients who
dealt with both.  Expected income is the substituted MFI's mean sale
income weighted by the estimated approval probability.

Rankings are refreshed weekly: each ISO week is served by a ranking
trained on everything strictly before its Monday, so no application is
scored by a model that saw it.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from typing import Mapping, NamedTuple, Sequence

from .data import (
    ClickRecord,
    ConversionRecord,
    LoanType,
    ProductRecord,
    Status,
    filter_loan_type,
)
from .errors import MfiRankError
from .features import DurationRule, LarPrior, feature_table, normalize_lar
from .rank import rank_mfis

logger = logging.getLogger(__name__)

DEFAULT_MIN_SUPPORT = 5


def week_start(moment: datetime) -> datetime:
    """Monday 00:00 of the ISO week containing ``moment``."""
    monday = moment.date() - timedelta(days=moment.weekday())
    return datetime(monday.year, monday.month, monday.day)


def historical_ranking(conversions: Sequence[ConversionRecord]) -> list[str]:
    """The ordering the site actually used, recovered from the logs.

    Each MFI takes the site-wide rank stamped on its latest application;
    MFIs that never carried one go to the back in id order.
    """
    latest: dict[str, tuple[datetime, int]] = {}
    unranked: set[str] = set()
    for rec in conversions:
        if rec.global_rank is None:
            unranked.add(rec.mfi_id)
            continue
        seen = latest.get(rec.mfi_id)
        if seen is None or rec.click_time >= seen[0]:
            latest[rec.mfi_id] = (rec.click_time, rec.global_rank)
    ranked = sorted(latest, key=lambda m: (latest[m][1], m))
    tail = sorted(unranked - set(latest))
    return ranked + tail


# ---------------------------------------------------------------------------
# reapproval probabilities


@dataclass(frozen=True)
class PairStats:
    p: float
    support: int
    fallback: bool = False


@dataclass
class ReapprovalTable:
    """Conditional outcome frequencies between pairs of MFIs.

    ``sale[(a, b)]`` estimates P(client approved at a | approved at b)
    over clients with a final status at both; ``reject`` mirrors it for
    rejections.  Sparse pairs (support below ``min_support``) fall back
    to a's marginal approval rate, and identity pairs are certain.
    """

    mfis: tuple[str, ...]
    sale: dict[tuple[str, str], PairStats]
    reject: dict[tuple[str, str], PairStats]
    mean_income: dict[str, float]
    marginal_lar: dict[str, float]
    min_support: int

    def p_sale(self, target: str, source: str) -> PairStats:
        if target == source:
            return PairStats(1.0, support=0)
        got = self.sale.get((target, source))
        if got is not None:
            return got
        return PairStats(self.marginal_lar.get(target, 0.0), 0, fallback=True)

    def p_reject(self, target: str, source: str) -> PairStats:
        if target == source:
            return PairStats(1.0, support=0)
        got = self.reject.get((target, source))
        if got is not None:
            return got
        return PairStats(1.0 - self.marginal_lar.get(target, 0.0), 0, fallback=True)


class ClientOutcome(NamedTuple):
    status: Status
    income: float | None


def client_outcomes(
    conversions: Sequence[ConversionRecord],
) -> dict[str, dict[str, ClientOutcome]]:
    """client -> mfi -> latest final status and its income (pending never counts)."""
    stamped: dict[str, dict[str, tuple[datetime, ClientOutcome]]] = defaultdict(dict)
    for rec in conversions:
        if rec.status is Status.PENDING:
            continue
        per_client = stamped[rec.client_id]
        seen = per_client.get(rec.mfi_id)
        if seen is None or rec.click_time >= seen[0]:
            per_client[rec.mfi_id] = (rec.click_time, ClientOutcome(rec.status, rec.income))
    return {
        client: {m: outcome for m, (_, outcome) in mfis.items()}
        for client, mfis in stamped.items()
    }


def reapproval_table(
    conversions: Sequence[ConversionRecord],
    min_support: int = DEFAULT_MIN_SUPPORT,
) -> ReapprovalTable:
    if min_support < 0:
        raise ValueError("min_support must be non-negative")
    outcomes = client_outcomes(conversions)

    num_sale: Counter = Counter()
    den_sale: Counter = Counter()
    num_reject: Counter = Counter()
    den_reject: Counter = Counter()
    for per_client in outcomes.values():
        mfis = list(per_client.items())
        for i, (mfi_a, out_a) in enumerate(mfis):
            for j, (mfi_b, out_b) in enumerate(mfis):
                if i == j:
                    continue
                if out_b.status is Status.SALE:
                    den_sale[(mfi_a, mfi_b)] += 1
                    if out_a.status is Status.SALE:
                        num_sale[(mfi_a, mfi_b)] += 1
                elif out_b.status is Status.REJECTED:
                    den_reject[(mfi_a, mfi_b)] += 1
                    if out_a.status is Status.REJECTED:
                        num_reject[(mfi_a, mfi_b)] += 1
    if not den_sale and not den_reject:
        logger.warning(
            "no client dealt with two MFIs; reapproval table is all marginal fallbacks"
        )

    per_mfi_apps: Counter = Counter(r.mfi_id for r in conversions)
    per_mfi_sales: Counter = Counter(
        r.mfi_id for r in conversions if r.status is Status.SALE
    )
    prior = LarPrior(
        total_sales=sum(per_mfi_sales.values()), total_apps=len(conversions)
    )
    marginal = {
        m: normalize_lar(prior, per_mfi_sales.get(m, 0), n)
        for m, n in per_mfi_apps.items()
    }

    income_sum: dict[str, float] = defaultdict(float)
    income_n: Counter = Counter()
    for rec in conversions:
        if rec.status is Status.SALE and rec.income is not None:
            income_sum[rec.mfi_id] += rec.income
            income_n[rec.mfi_id] += 1
    mean_income = {
        m: (income_sum[m] / income_n[m] if income_n[m] else 0.0) for m in per_mfi_apps
    }

    def build(num: Counter, den: Counter, fallback: Mapping[str, float]) -> dict:
        out: dict[tuple[str, str], PairStats] = {}
        for pair, support in den.items():
            if support >= min_support:
                out[pair] = PairStats(num.get(pair, 0) / support, support)
            else:
                out[pair] = PairStats(fallback.get(pair[0], 0.0), support, fallback=True)
        return out

    reject_fallback = {m: 1.0 - p for m, p in marginal.items()}
    return ReapprovalTable(
        mfis=tuple(sorted(per_mfi_apps)),
        sale=build(num_sale, den_sale, marginal),
        reject=build(num_reject, den_reject, reject_fallback),
        mean_income=mean_income,
        marginal_lar=marginal,
        min_support=min_support,
    )


# ---------------------------------------------------------------------------
# weekly ranking schedule


@dataclass(frozen=True)
class WeekEntry:
    week_start: datetime
    ranking: tuple[str, ...]
    trained_on: int
    source: str  # "historical" | "ranked" | "carried"


def weekly_schedule(
    conversions: Sequence[ConversionRecord],
    products: Sequence[ProductRecord],
    clicks: Sequence[ClickRecord],
    *,
    features: Sequence[str] | None = None,
    loan_type: LoanType | None = LoanType.STANDARD,
    damping: float = 0.0,
    duration_rules: Sequence[DurationRule] | None = None,
) -> list[WeekEntry]:
    """One ranking per ISO week of the log, trained on the strict past.

    The first week falls back to the ordering the site actually used.
    A week whose training slice cannot produce a ranking (too few MFIs,
    degenerate chain) carries the previous week's list forward.
    """
    conversions = filter_loan_type(conversions, loan_type)
    clicks = filter_loan_type(clicks, loan_type)
    if not conversions:
        return []
    by_time = sorted(conversions, key=lambda r: r.click_time)
    click_times = sorted(c.click_time for c in clicks)
    clicks_sorted = sorted(clicks, key=lambda c: c.click_time)

    first = week_start(by_time[0].click_time)
    last = week_start(by_time[-1].click_time)
    fallback = tuple(historical_ranking(conversions))

    entries: list[WeekEntry] = []
    current = fallback
    source = "historical"
    conv_idx = 0
    click_idx = 0
    monday = first
    while monday <= last:
        while conv_idx < len(by_time) and by_time[conv_idx].click_time < monday:
            conv_idx += 1
        while click_idx < len(click_times) and click_times[click_idx] < monday:
            click_idx += 1
        training = by_time[:conv_idx]
        if training:
            try:
                table = feature_table(
                    training,
                    products,
                    clicks_sorted[:click_idx],
                    features=features,
                    loan_type=loan_type,
                    duration_rules=duration_rules,
                )
                if len(table) < 2:
                    raise ValueError("fewer than two rankable MFIs")
                current = tuple(rank_mfis(table, features=features, damping=damping).ranking)
                source = "ranked"
            except (ValueError, MfiRankError) as exc:
                source = "carried" if entries else "historical"
                logger.info("week %s keeps the previous ranking: %s", monday.date(), exc)
        entries.append(
            WeekEntry(week_start=monday, ranking=current, trained_on=conv_idx, source=source)
        )
        monday += timedelta(days=7)
    return entries


# ---------------------------------------------------------------------------
# replay


@dataclass(frozen=True)
class AppOutcome:
    client_id: str
    mfi_hist: str
    mfi_vra: str
    click_time: datetime
    week: datetime
    position: int
    p_sale: float
    income: float
    copied: bool
    rule: str  # "identity" | "history" | "table-sale" | "table-reject" | "table-pending"
    hist_sale: bool
    hist_income: float


@dataclass
class SimulationResult:
    outcomes: list[AppOutcome]
    total_lar: float
    avg_income: float
    historical_lar: float
    historical_avg_income: float
    n_processed: int
    n_copied: int
    n_skipped_no_rank: int
    n_skipped_out_of_range: int
    n_skipped_no_week: int
    n_pending_fallback: int
    n_low_support: int

    def to_dict(self) -> dict:
        return {
            "total_lar": self.total_lar,
            "avg_income": self.avg_income,
            "historical_lar": self.historical_lar,
            "historical_avg_income": self.historical_avg_income,
            "coverage": {
                "processed": self.n_processed,
                "copied": self.n_copied,
                "skipped_no_rank": self.n_skipped_no_rank,
                "skipped_out_of_range": self.n_skipped_out_of_range,
                "skipped_no_week": self.n_skipped_no_week,
                "pending_fallback": self.n_pending_fallback,
                "low_support_lookups": self.n_low_support,
            },
        }


def simulate(
    conversions: Sequence[ConversionRecord],
    schedule: Sequence[WeekEntry],
    table: ReapprovalTable,
) -> SimulationResult:
    """Replay every application against the scheduled rankings.

    Each application is re-served by whichever MFI the week's ranking
    puts at the position the client actually clicked.  When the client
    really applied there, the actual status and income are copied
    verbatim, which makes the replay of the historical ranking reproduce
    history exactly.  Otherwise the reapproval table keyed by the
    historical outcome estimates the result.  Applications without a
    usable position are skipped and counted, so coverage is visible in
    the result.
    """
    weeks = {entry.week_start: entry for entry in schedule}
    history = client_outcomes(conversions)

    outcomes: list[AppOutcome] = []
    n_no_rank = n_out_of_range = n_no_week = 0
    n_copied = n_pending = n_low_support = 0
    hist_sales = 0
    hist_income = 0.0

    for rec in conversions:
        if rec.global_rank is None:
            n_no_rank += 1
            continue
        entry = weeks.get(week_start(rec.click_time))
        if entry is None:
            n_no_week += 1
            continue
        position = rec.global_rank
        if not 1 <= position <= len(entry.ranking):
            n_out_of_range += 1
            continue
        vra = entry.ranking[position - 1]
        known = history.get(rec.client_id, {}).get(vra) if vra != rec.mfi_id else None

        if vra == rec.mfi_id:
            p = 1.0 if rec.status is Status.SALE else 0.0
            income = rec.income if (rec.status is Status.SALE and rec.income is not None) else 0.0
            copied, rule = True, "identity"
        elif known is not None:
            p = 1.0 if known.status is Status.SALE else 0.0
            income = known.income if (known.status is Status.SALE and known.income is not None) else 0.0
            copied, rule = True, "history"
        else:
            copied = False
            if rec.status is Status.SALE:
                stats = table.p_sale(vra, rec.mfi_id)
                p = stats.p
                rule = "table-sale"
                n_low_support += stats.fallback
            elif rec.status is Status.REJECTED:
                stats = table.p_reject(vra, rec.mfi_id)
                p = 1.0 - stats.p
                rule = "table-reject"
                n_low_support += stats.fallback
            else:
                p = table.marginal_lar.get(vra, 0.0)
                rule = "table-pending"
                n_pending += 1
            income = table.mean_income.get(vra, 0.0) * p

        sold = rec.status is Status.SALE
        own_income = rec.income if (sold and rec.income is not None) else 0.0
        outcomes.append(
            AppOutcome(
                client_id=rec.client_id,
                mfi_hist=rec.mfi_id,
                mfi_vra=vra,
                click_time=rec.click_time,
                week=entry.week_start,
                position=position,
                p_sale=p,
                income=income,
                copied=copied,
                rule=rule,
                hist_sale=sold,
                hist_income=own_income,
            )
        )
        n_copied += copied
        hist_sales += sold
        hist_income += own_income

    n = len(outcomes)
    return SimulationResult(
        outcomes=outcomes,
        total_lar=sum(o.p_sale for o in outcomes) / n if n else 0.0,
        avg_income=sum(o.income for o in outcomes) / n if n else 0.0,
        historical_lar=hist_sales / n if n else 0.0,
        historical_avg_income=hist_income / n if n else 0.0,
        n_processed=n,
        n_copied=n_copied,
        n_skipped_no_rank=n_no_rank,
        n_skipped_out_of_range=n_out_of_range,
        n_skipped_no_week=n_no_week,
        n_pending_fallback=n_pending,
        n_low_support=n_low_support,
    )


def weekly_totals(result: SimulationResult) -> list[dict]:
    """Per-week aggregates of the replay, weeks in calendar order."""
    grouped: dict[datetime, list[AppOutcome]] = defaultdict(list)
    for out in result.outcomes:
        grouped[out.week].append(out)
    rows = []
    for week in sorted(grouped):
        outs = grouped[week]
        n = len(outs)
        rows.append(
            {
                "week": week.date().isoformat(),
                "applications": n,
                "lar": sum(o.p_sale for o in outs) / n,
                "avg_income": sum(o.income for o in outs) / n,
                "historical_lar": sum(o.hist_sale for o in outs) / n,
                "historical_avg_income": sum(o.hist_income for o in outs) / n,
            }
        )
    return rows


def daily_series(
    result: SimulationResult, clicks: Sequence[ClickRecord]
) -> list[dict]:
    """Per-day income and sales totals for both algorithms, plus click counts.

    The date range spans every day between the first and last click (or
    replayed application, whichever is wider); days without traffic emit
    zero entries so the series always covers the full range.  The
    "historical" totals are restricted to the replayed applications, so
    they compare like with like against the "vra" totals.
    """
    click_days = Counter(c.click_time.date() for c in clicks)
    app_days: set[date] = {o.click_time.date() for o in result.outcomes}
    all_days = set(click_days) | app_days
    if not all_days:
        return []

    income: dict[date, float] = defaultdict(float)
    sales: dict[date, float] = defaultdict(float)
    hist_income: dict[date, float] = defaultdict(float)
    hist_sales: dict[date, float] = defaultdict(float)
    for out in result.outcomes:
        day = out.click_time.date()
        income[day] += out.income
        sales[day] += out.p_sale
        hist_income[day] += out.hist_income
        hist_sales[day] += out.hist_sale

    rows = []
    day = min(all_days)
    last = max(all_days)
    while day <= last:
        rows.append(
            {
                "date": day.isoformat(),
                "clicks": click_days.get(day, 0),
                "historical": {"income": hist_income[day], "sales": hist_sales[day]},
                "vra": {"income": income[day], "sales": sales[day]},
            }
        )
        day += timedelta(days=1)
    return rows


def evaluate_ranking(
    conversions: Sequence[ConversionRecord],
    products: Sequence[ProductRecord],
    clicks: Sequence[ClickRecord],
    *,
    features: Sequence[str] | None = None,
    loan_type: LoanType | None = LoanType.STANDARD,
    damping: float = 0.0,
    min_support: int = DEFAULT_MIN_SUPPORT,
    duration_rules: Sequence[DurationRule] | None = None,
) -> tuple[SimulationResult, list[WeekEntry]]:
    """Full replay: weekly rankings, reapproval table, simulation."""
    conversions = filter_loan_type(conversions, loan_type)
    clicks = filter_loan_type(clicks, loan_type)
    schedule = weekly_schedule(
        conversions,
        products,
        clicks,
        features=features,
        loan_type=loan_type,
        damping=damping,
        duration_rules=duration_rules,
    )
    table = reapproval_table(conversions, min_support=min_support)
    return simulate(conversions, schedule, table), schedule


# ---------------------------------------------------------------------------
# experiment-group helpers


def group_counts(records: Sequence[ConversionRecord]) -> tuple[int, int]:
    """(sales, applications) of one experiment group."""
    return (sum(1 for r in records if r.status is Status.SALE), len(records))


def sale_incomes(records: Sequence[ConversionRecord]) -> list[float]:
    return [r.income for r in records if r.status is Status.SALE and r.income is not None]


def os_contingency(records: Sequence[ConversionRecord], os_name: str):
    """2x2 table of (runs ``os_name``) against (application approved)."""
    from .stats import TwoByTwo

    n11 = n10 = n01 = n00 = 0
    for rec in records:
        uses = rec.os is not None and rec.os.strip().lower() == os_name.strip().lower()
        sold = rec.status is Status.SALE
        if uses and sold:
            n11 += 1
        elif uses:
            n10 += 1
        elif sold:
            n01 += 1
        else:
            n00 += 1
    return TwoByTwo(n11=n11, n10=n10, n01=n01, n00=n00)
