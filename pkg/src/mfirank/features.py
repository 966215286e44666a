"""Per-MFI key features.

Five quantities summarize each MFI's quality from the logs:

* ``rating_norm``: review rating shrunk toward the population mean, with
  review counts acting as evidence weights.
* ``lar_norm``: loan approval rate shrunk the same way (sales over all
  applications; pending applications count as non-sales).
* ``fairness``: 0..4 points over binary service-quality criteria.
* ``service_p90_sec``: 90th percentile of the end-to-end service period
  (click to payout) with outlier damping and imputation for
  applications that never reached payout.
* ``epc``: earnings per click, total sale income over click-outs.

All computations are per loan type; the default pipeline looks only at
standard loans.
"""

from __future__ import annotations

import csv
import io
import logging
import re
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .data import (
    ClickRecord,
    ConversionRecord,
    LoanType,
    ProductRecord,
    Status,
    derive_timeline,
    filter_loan_type,
)
from .errors import DataError

logger = logging.getLogger(__name__)

ALL_FEATURES = ("rating", "lar", "fairness", "service_period", "epc")
LOWER_IS_BETTER = frozenset({"service_period"})

ON_TIME_LIMIT_SEC = 3600.0
ON_TIME_MIN_SHARE = 0.9
CONVERSION_OUTLIER_SEC = 7200.0
MIN_REJECT_SHARE = 0.05


# ---------------------------------------------------------------------------
# evidence-weighted normalization


@dataclass(frozen=True)
class RatingPrior:
    """Population-level review evidence: N reviews with weighted sum."""

    total_reviews: int
    weighted_sum: float

    @property
    def prior_mean(self) -> float:
        return self.weighted_sum / self.total_reviews


@dataclass(frozen=True)
class LarPrior:
    """Population-level approval evidence: S sales out of T applications."""

    total_sales: int
    total_apps: int

    @property
    def prior_mean(self) -> float:
        return self.total_sales / self.total_apps


def rating_prior(products: Sequence[ProductRecord]) -> RatingPrior:
    """Pool review evidence across MFI cards.

    Cards without reviews (or without a rating) contribute nothing.
    Raises DataError when the whole corpus is review-free, since the
    prior mean would be undefined.
    """
    total = 0
    weighted = 0.0
    for p in products:
        if p.n_reviews > 0 and p.avg_user_rating is not None:
            total += p.n_reviews
            weighted += p.n_reviews * p.avg_user_rating
    if total == 0:
        raise DataError("no reviews in corpus; rating prior undefined")
    return RatingPrior(total_reviews=total, weighted_sum=weighted)


def lar_prior(conversions: Sequence[ConversionRecord]) -> LarPrior:
    """Pool approval evidence; pending applications count as non-sales."""
    total = len(conversions)
    if total == 0:
        raise DataError("no applications; approval prior undefined")
    sales = sum(1 for r in conversions if r.status is Status.SALE)
    return LarPrior(total_sales=sales, total_apps=total)


def normalize_rating(prior: RatingPrior, n: int, rating: float) -> float:
    """Shrink one MFI's review rating toward the population mean.

    The prior already pools every MFI's reviews (the target included);
    the target's own evidence is then counted once more, so MFIs with
    many reviews pull the estimate toward their own rating.  With no
    reviews of its own the MFI sits exactly at the prior mean.
    """
    if n < 0:
        raise ValueError("review count must be non-negative")
    if n > 0 and not 1.0 <= rating <= 5.0:
        raise ValueError("rating must lie in [1, 5]")
    return (prior.weighted_sum + n * rating) / (prior.total_reviews + n)


def normalize_lar(prior: LarPrior, sales: int, apps: int) -> float:
    """Shrink one MFI's approval rate toward the population rate."""
    if not 0 <= sales <= apps:
        raise ValueError("need 0 <= sales <= apps")
    return (prior.total_sales + sales) / (prior.total_apps + apps)


# ---------------------------------------------------------------------------
# declared-duration phrases


@dataclass(frozen=True)
class DurationRule:
    """Maps a phrase pattern to a unit scale in seconds.

    ``scale`` 0 marks instant-service wording where no number appears.
    """

    pattern: str
    scale: float


DEFAULT_DURATION_RULES = (
    DurationRule(r"моментальн|мгновенн|сразу|instant", 0.0),
    DurationRule(r"сек|sec", 1.0),
    DurationRule(r"мин|min", 60.0),
    DurationRule(r"час|hour", 3600.0),
    DurationRule(r"дн|ден|сут|day", 86400.0),
)

_NUMBER = re.compile(r"(\d+(?:[.,]\d+)?)")


def parse_declared_duration(
    phrase: str | None, rules: Sequence[DurationRule] | None = None
) -> float | None:
    """Turn a declared-duration phrase into seconds, or None.

    Handles wording like "в течение 20 минут", "до 24 часов",
    "моментально".  The first rule whose pattern occurs in the phrase
    decides the unit; the first number in the phrase supplies the
    magnitude.  Unrecognized phrasing gives None rather than a guess.
    """
    if phrase is None:
        return None
    text = phrase.strip().lower()
    if not text:
        return None
    for rule in rules or DEFAULT_DURATION_RULES:
        if re.search(rule.pattern, text):
            if rule.scale == 0.0:
                return 0.0
            m = _NUMBER.search(text)
            if m is None:
                return None
            return float(m.group(1).replace(",", ".")) * rule.scale
    return None


def declared_sla_seconds(
    product: ProductRecord | None, rules: Sequence[DurationRule] | None = None
) -> float | None:
    """Total declared decision + payout budget, or None when either
    phrase is missing or unparseable."""
    if product is None:
        return None
    consideration = parse_declared_duration(product.consideration_time, rules)
    payment = parse_declared_duration(product.payment_time, rules)
    if consideration is None or payment is None:
        return None
    return consideration + payment


# ---------------------------------------------------------------------------
# fairness


@dataclass(frozen=True)
class FairnessScore:
    points: int
    status_reporting: bool
    on_time: bool
    sla_met: bool
    reliable: bool
    sla_evaluable: bool = True


def _raw_periods(records: Sequence[ConversionRecord]) -> tuple[list[float], list[float]]:
    """Valid (conversion, processing) period lists; invalid records skipped."""
    conversions: list[float] = []
    processings: list[float] = []
    for rec in records:
        tl = derive_timeline(rec)
        if tl.invalid:
            continue
        if tl.conversion_period is not None:
            conversions.append(tl.conversion_period)
        if tl.processing_period is not None:
            processings.append(tl.processing_period)
    return conversions, processings


def _on_time(conversion_periods: Sequence[float]) -> bool:
    if not conversion_periods:
        return False
    quick = sum(1 for p in conversion_periods if p < ON_TIME_LIMIT_SEC)
    return quick / len(conversion_periods) >= ON_TIME_MIN_SHARE


def fairness(
    records: Sequence[ConversionRecord],
    product: ProductRecord | None,
    sla_seconds: float | None,
) -> FairnessScore:
    """Score an MFI on four binary criteria, one point each.

    1. The MFI actually screens applicants: more than 5% of its
       applications are rejected, yet it approves at least one.
    2. Applications are quick to file: at least 90% of observed
       click-to-submission periods stay under an hour.
    3. At least half of the applications with a known processing period
       fit the MFI's declared decision + payout budget.  When that
       budget is unknown (``sla_seconds`` None) the point is withheld
       and the score is flagged as not fully evaluable.
    4. The card carries no unreliability mark.
    """
    n = len(records)
    n_rejected = sum(1 for r in records if r.status is Status.REJECTED)
    n_sales = sum(1 for r in records if r.status is Status.SALE)
    status_reporting = n > 0 and n_rejected / n > MIN_REJECT_SHARE and n_sales >= 1

    conversion_periods, processing_periods = _raw_periods(records)
    on_time = _on_time(conversion_periods)

    sla_evaluable = sla_seconds is not None
    sla_met = False
    if sla_evaluable and processing_periods:
        ok = sum(1 for p in processing_periods if p <= sla_seconds)
        sla_met = ok / len(processing_periods) >= 0.5

    reliable = product is None or not product.unreliability

    points = int(status_reporting) + int(on_time) + int(sla_met) + int(reliable)
    return FairnessScore(
        points=points,
        status_reporting=status_reporting,
        on_time=on_time,
        sla_met=sla_met,
        reliable=reliable,
        sla_evaluable=sla_evaluable,
    )


# ---------------------------------------------------------------------------
# service period


def service_period_p90(
    records: Sequence[ConversionRecord],
    global_processing_mean: float | None = None,
) -> float:
    """P90 of the full click-to-payout period, in seconds.

    The population is the MFI's applications with a valid submission
    period.  Two repairs are applied first:

    I.  For an MFI whose applications are filed on time overall,
        submission periods beyond two hours are treated as measurement
        noise and replaced with the median of all its raw periods.
    II. Applications that never reached payout borrow the MFI's mean
        observed processing period (``global_processing_mean`` when the
        MFI itself has none).

    The percentile is nearest-rank: element ceil(0.9 n) of the sorted
    periods.  Raises DataError when the population is empty or an
    imputation source is missing.
    """
    pairs: list[tuple[float, float | None]] = []
    for rec in records:
        tl = derive_timeline(rec)
        if tl.invalid or tl.conversion_period is None:
            continue
        pairs.append((tl.conversion_period, tl.processing_period))
    if not pairs:
        raise DataError("no valid submission periods; cannot compute a service period")

    raw = [c for c, _ in pairs]
    if _on_time(raw):
        replacement = statistics.median(raw)
        conversions = [replacement if c > CONVERSION_OUTLIER_SEC else c for c in raw]
    else:
        conversions = raw

    observed = [p for _, p in pairs if p is not None]
    fill = statistics.fmean(observed) if observed else global_processing_mean
    if fill is None and any(p is None for _, p in pairs):
        raise DataError("no processing periods anywhere to impute from")

    service = sorted(
        c + (p if p is not None else fill) for c, (_, p) in zip(conversions, pairs)
    )
    idx = (9 * len(service) + 9) // 10  # ceil(0.9 n) without float fuzz
    return service[idx - 1]


# ---------------------------------------------------------------------------
# earnings per click


def epc(records: Sequence[ConversionRecord], n_clicks: int) -> float:
    """Total sale income per click-out.

    An MFI nobody clicked earned nothing: zero sales with zero clicks is
    0.0, but sales without any click record is inconsistent input.
    """
    if n_clicks < 0:
        raise ValueError("click count must be non-negative")
    income = 0.0
    n_sales = 0
    for rec in records:
        if rec.status is Status.SALE:
            n_sales += 1
            if rec.income is not None:
                income += rec.income
    if n_sales == 0:
        return 0.0
    if n_clicks == 0:
        raise DataError("sales recorded for an MFI with no clicks")
    return income / n_clicks


# ---------------------------------------------------------------------------
# the feature table


@dataclass(frozen=True)
class FeatureVector:
    """One MFI's feature values; inactive features stay None."""

    mfi_id: str
    rating_norm: float | None = None
    lar_norm: float | None = None
    fairness: int | None = None
    service_p90_sec: float | None = None
    epc: float | None = None
    fairness_detail: FairnessScore | None = field(default=None, compare=False)

    def get(self, feature: str) -> float:
        value = getattr(self, FEATURE_ATTRS[feature])
        if value is None:
            raise ValueError(f"feature {feature!r} was not computed for MFI {self.mfi_id}")
        return float(value)


FEATURE_ATTRS: Mapping[str, str] = {
    "rating": "rating_norm",
    "lar": "lar_norm",
    "fairness": "fairness",
    "service_period": "service_p90_sec",
    "epc": "epc",
}


FEATURE_CSV_COLUMNS = (
    "mfi_id", "rating_norm", "lar_norm", "fairness", "service_p90_sec", "epc",
)


def feature_csv(vectors: Sequence[FeatureVector], comments: Sequence[str] = ()) -> str:
    """Render a feature table as CSV; uncomputed features stay empty."""
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FEATURE_CSV_COLUMNS)
    for v in vectors:
        row = []
        for col in FEATURE_CSV_COLUMNS:
            value = getattr(v, col) if col != "mfi_id" else v.mfi_id
            row.append("" if value is None else str(value))
        writer.writerow(row)
    return buf.getvalue()


def parse_feature_csv(text: str) -> list[FeatureVector]:
    """Read back a feature table written by :func:`feature_csv`."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise DataError("feature CSV is empty")
    header = [h.strip() for h in rows[0]]
    if "mfi_id" not in header:
        raise DataError("feature CSV lacks an mfi_id column")
    idx = {name: header.index(name) for name in FEATURE_CSV_COLUMNS if name in header}
    out: list[FeatureVector] = []
    for row in rows[1:]:
        if not any(c.strip() for c in row):
            continue

        def cell(name: str) -> str | None:
            i = idx.get(name)
            if i is None or i >= len(row) or not row[i].strip():
                return None
            return row[i].strip()

        mfi_id = cell("mfi_id")
        if mfi_id is None:
            raise DataError("feature CSV row without an mfi_id")
        fairness_cell = cell("fairness")
        try:
            out.append(
                FeatureVector(
                    mfi_id=mfi_id,
                    rating_norm=float(cell("rating_norm")) if cell("rating_norm") else None,
                    lar_norm=float(cell("lar_norm")) if cell("lar_norm") else None,
                    fairness=int(float(fairness_cell)) if fairness_cell else None,
                    service_p90_sec=float(cell("service_p90_sec"))
                    if cell("service_p90_sec")
                    else None,
                    epc=float(cell("epc")) if cell("epc") else None,
                )
            )
        except ValueError as exc:
            raise DataError(f"feature CSV row for {mfi_id}: {exc}") from None
    return out


def _pick_card(cards: list[ProductRecord]) -> ProductRecord:
    # Most-reviewed card represents the MFI; ties go to the smallest id.
    return min(cards, key=lambda p: (-p.n_reviews, p.card_id))


def feature_table(
    conversions: Sequence[ConversionRecord],
    products: Sequence[ProductRecord],
    clicks: Sequence[ClickRecord],
    *,
    features: Sequence[str] | None = None,
    loan_type: LoanType | None = LoanType.STANDARD,
    duration_rules: Sequence[DurationRule] | None = None,
) -> list[FeatureVector]:
    """Compute the requested features for every rankable MFI.

    The population is the set of MFIs present in both the loan-filtered
    conversion log and the product dataset, ordered by id; MFIs without
    a matching card are excluded with a warning, as are MFIs whose
    service period or EPC cannot be computed.
    """
    active = tuple(features) if features is not None else ALL_FEATURES
    unknown = [f for f in active if f not in ALL_FEATURES]
    if unknown:
        raise ValueError(f"unknown features: {unknown}")
    if not active:
        raise ValueError("at least one feature is required")

    conversions = filter_loan_type(conversions, loan_type)
    clicks_f = filter_loan_type(clicks, loan_type)
    cards_by_mfi: dict[str, list[ProductRecord]] = defaultdict(list)
    for p in filter_loan_type(products, loan_type):
        cards_by_mfi[p.mfi_id].append(p)

    by_mfi: dict[str, list[ConversionRecord]] = defaultdict(list)
    for rec in conversions:
        by_mfi[rec.mfi_id].append(rec)
    click_counts = Counter(c.mfi_id for c in clicks_f)

    population = []
    for m in sorted(by_mfi):
        if cards_by_mfi.get(m):
            population.append(m)
        else:
            logger.warning("MFI %s has conversions but no product card; excluded", m)
    if not population:
        return []
    card = {m: _pick_card(cards_by_mfi[m]) for m in population}
    corpus = [r for m in population for r in by_mfi[m]]

    rprior = rating_prior([card[m] for m in population]) if "rating" in active else None
    lprior = lar_prior(corpus) if "lar" in active else None

    global_mean: float | None = None
    if "service_period" in active:
        all_processing = [
            tl.processing_period
            for rec in corpus
            for tl in (derive_timeline(rec),)
            if not tl.invalid and tl.processing_period is not None
        ]
        global_mean = statistics.fmean(all_processing) if all_processing else None

    table: list[FeatureVector] = []
    for m in population:
        records = by_mfi[m]
        values: dict[str, object] = {}
        p = card[m]
        if rprior is not None:
            has_reviews = p.n_reviews > 0 and p.avg_user_rating is not None
            values["rating_norm"] = normalize_rating(
                rprior,
                p.n_reviews if has_reviews else 0,
                p.avg_user_rating if has_reviews else 0.0,
            )
        if lprior is not None:
            sales = sum(1 for r in records if r.status is Status.SALE)
            values["lar_norm"] = normalize_lar(lprior, sales, len(records))
        if "fairness" in active:
            score = fairness(records, p, declared_sla_seconds(p, duration_rules))
            values["fairness"] = score.points
            values["fairness_detail"] = score
        try:
            if "service_period" in active:
                values["service_p90_sec"] = service_period_p90(records, global_mean)
            if "epc" in active:
                values["epc"] = epc(records, click_counts.get(m, 0))
        except DataError as exc:
            logger.warning("dropping MFI %s from the feature table: %s", m, exc)
            continue
        table.append(FeatureVector(mfi_id=m, **values))
    return table
