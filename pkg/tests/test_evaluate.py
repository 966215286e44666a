"""Replay evaluation: reapproval table, weekly schedule, simulation."""

from __future__ import annotations

import logging
from collections import defaultdict
from datetime import date, datetime, timedelta

import pytest

from mfirank.data import ClickRecord, ConversionRecord, LoanType, Status
from mfirank.evaluate import (
    PairStats,
    ReapprovalTable,
    WeekEntry,
    client_outcomes,
    daily_series,
    evaluate_ranking,
    historical_ranking,
    reapproval_table,
    simulate,
    week_start,
    weekly_schedule,
    weekly_totals,
)
from mfirank.fixtures import generate_fixture

T0 = datetime(2021, 3, 1, 10, 0, 0)  # a Monday


def capp(
    mfi: str,
    client: str,
    status: Status = Status.SALE,
    hours: float = 0.0,
    income: float | None = None,
    rank: int | None = None,
) -> ConversionRecord:
    click = T0 + timedelta(hours=hours)
    return ConversionRecord(
        mfi_id=mfi,
        loan_type=LoanType.STANDARD,
        client_id=client,
        click_time=click,
        status=status,
        global_rank=rank,
        conversion_time=click + timedelta(minutes=10),
        sale_time=click + timedelta(hours=1) if status is Status.SALE else None,
        income=income if status is Status.SALE else None,
    )


def test_week_start_is_monday_midnight():
    assert week_start(datetime(2021, 3, 3, 15, 30)) == datetime(2021, 3, 1)
    assert week_start(datetime(2021, 3, 1, 0, 0)) == datetime(2021, 3, 1)
    assert week_start(datetime(2021, 3, 7, 23, 59)) == datetime(2021, 3, 1)


def test_historical_ranking_uses_the_latest_stamp():
    records = [
        capp("a", "c1", rank=2, hours=0),
        capp("a", "c2", rank=1, hours=5),  # later stamp wins
        capp("b", "c3", rank=2, hours=6),
        capp("z", "c4"),  # never ranked: goes to the back
    ]
    assert historical_ranking(records) == ["a", "b", "z"]


def test_client_outcomes_keep_the_latest_final_status_and_income():
    records = [
        capp("a", "c1", Status.REJECTED, hours=0),
        capp("a", "c1", Status.SALE, hours=2, income=55.0),
        capp("a", "c1", Status.PENDING, hours=4),  # pending never counts
        capp("b", "c1", Status.PENDING, hours=5),
    ]
    outcomes = client_outcomes(records)
    assert set(outcomes) == {"c1"}
    assert set(outcomes["c1"]) == {"a"}
    assert outcomes["c1"]["a"].status is Status.SALE
    assert outcomes["c1"]["a"].income == 55.0


# ---------------------------------------------------------------------------
# reapproval table


def test_reapproval_certainty_case():
    records = []
    for i in range(10):
        records.append(capp("A", f"c{i}", income=10.0, hours=i))
        records.append(capp("B", f"c{i}", income=10.0, hours=i + 0.5))
    table = reapproval_table(records)
    stats = table.p_sale("A", "B")
    assert stats.p == 1.0
    assert stats.support == 10
    assert not stats.fallback


def test_reapproval_hand_counted_fraction():
    records = []
    for i in range(8):
        records.append(capp("B", f"c{i}", income=5.0, hours=i))
        status = Status.SALE if i < 3 else Status.REJECTED
        records.append(capp("A", f"c{i}", status, income=5.0, hours=i + 0.5))
    table = reapproval_table(records, min_support=1)
    assert table.p_sale("A", "B").p == pytest.approx(0.375)
    assert table.p_sale("A", "B").support == 8


def test_reapproval_identity_pairs_are_certain():
    records = [capp("A", "c1", income=5.0)]
    table = reapproval_table(records)
    assert table.p_sale("A", "A").p == 1.0
    assert table.p_reject("A", "A").p == 1.0


def test_reapproval_low_support_falls_back_to_the_marginal():
    records = [
        capp("A", "c1", income=5.0, hours=0),
        capp("B", "c1", Status.REJECTED, hours=1),
        capp("A", "c2", Status.REJECTED, hours=2),
        capp("A", "c3", Status.PENDING, hours=3),
    ]
    table = reapproval_table(records, min_support=5)
    stats = table.p_sale("B", "A")  # one co-client, below min_support
    assert stats.fallback and stats.support == 1
    # marginal normalized LAR of B: prior (1 sale / 4 apps) + (0 of 1)
    assert table.marginal_lar["B"] == pytest.approx(1.0 / 5.0)
    assert stats.p == pytest.approx(1.0 / 5.0)
    # pair never observed at all: marginal fallback with zero support
    missing = table.p_reject("B", "A")
    assert missing.fallback and missing.support == 0
    assert missing.p == pytest.approx(1.0 - 1.0 / 5.0)


def test_reapproval_without_co_applicants_warns(caplog):
    records = [capp("A", "c1", income=5.0), capp("B", "c2", Status.REJECTED)]
    with caplog.at_level(logging.WARNING, logger="mfirank.evaluate"):
        table = reapproval_table(records)
    assert any("no client dealt with two MFIs" in m for m in caplog.messages)
    assert table.p_sale("A", "B").fallback


def brute_force_pair(records, target, source):
    """Independent counting oracle for P(sale at target | sale at source)."""
    latest: dict[str, dict[str, tuple[datetime, Status]]] = defaultdict(dict)
    for rec in records:
        if rec.status is Status.PENDING:
            continue
        seen = latest[rec.client_id].get(rec.mfi_id)
        if seen is None or rec.click_time >= seen[0]:
            latest[rec.client_id][rec.mfi_id] = (rec.click_time, rec.status)
    num = den = 0
    for per_client in latest.values():
        if source in per_client and target in per_client and source != target:
            if per_client[source][1] is Status.SALE:
                den += 1
                num += per_client[target][1] is Status.SALE
    return (num / den if den else None), den


def test_reapproval_matches_the_counting_oracle_on_fixtures():
    for seed in range(5):
        conversions, _, _ = generate_fixture(seed, n_mfis=4, n_clients=40)
        table = reapproval_table(conversions, min_support=1)
        mfis = sorted({r.mfi_id for r in conversions})
        for target in mfis:
            for source in mfis:
                if target == source:
                    continue
                expected, support = brute_force_pair(conversions, target, source)
                if expected is None:
                    continue
                got = table.p_sale(target, source)
                assert got.support == support
                assert got.p == pytest.approx(expected), (seed, target, source)


# ---------------------------------------------------------------------------
# weekly schedule


def three_week_dataset():
    """Two MFIs over three ISO weeks, one of them clearly better."""
    records = []
    clicks = []
    for week in range(3):
        for i in range(6):
            hours = week * 168 + i * 3
            good_status = Status.SALE if i < 4 else Status.REJECTED
            bad_status = Status.SALE if i < 1 else Status.REJECTED
            records.append(
                capp("good", f"g{week}{i}", good_status, hours=hours, income=30.0, rank=1)
            )
            records.append(
                capp("bad", f"b{week}{i}", bad_status, hours=hours + 1, income=5.0, rank=2)
            )
    for rec in records:
        clicks.append(
            ClickRecord(
                mfi_id=rec.mfi_id,
                click_time=rec.click_time,
                client_id=rec.client_id,
                loan_type=LoanType.STANDARD,
            )
        )
    from mfirank.data import ProductRecord

    products = [
        ProductRecord(
            mfi_id=m,
            card_id=f"card-{m}",
            loan_type=LoanType.STANDARD,
            avg_user_rating=4.0,
            n_reviews=10,
        )
        for m in ("good", "bad")
    ]
    return records, products, clicks


def test_weekly_schedule_trains_on_the_strict_past():
    records, products, clicks = three_week_dataset()
    schedule = weekly_schedule(records, products, clicks)
    assert len(schedule) == 3
    assert schedule[0].source == "historical"
    assert schedule[0].trained_on == 0
    assert [e.trained_on for e in schedule] == [0, 12, 24]
    assert schedule[1].source == "ranked"
    assert schedule[1].ranking[0] == "good"


def test_weekly_schedule_has_no_leakage():
    records, products, clicks = three_week_dataset()
    from mfirank.data import ProductRecord

    # a dominant newcomer whose data exists only in week two
    star_apps = [
        capp("star", f"s{i}", Status.SALE, hours=168 + i, income=500.0, rank=1)
        for i in range(10)
    ]
    star_clicks = [
        ClickRecord(
            mfi_id="star",
            click_time=r.click_time,
            client_id=r.client_id,
            loan_type=LoanType.STANDARD,
        )
        for r in star_apps
    ]
    products = products + [
        ProductRecord(
            mfi_id="star",
            card_id="card-star",
            loan_type=LoanType.STANDARD,
            avg_user_rating=5.0,
            n_reviews=50,
        )
    ]
    schedule = weekly_schedule(
        records + star_apps, products, clicks + star_clicks
    )
    assert "star" not in schedule[1].ranking  # trained before it existed
    assert "star" in schedule[2].ranking


def test_weekly_schedule_is_stationary_on_constant_data():
    records, products, clicks = three_week_dataset()
    schedule = weekly_schedule(records, products, clicks)
    ranked = [e for e in schedule if e.source == "ranked"]
    assert len(ranked) == 2
    assert ranked[0].ranking == ranked[1].ranking


def test_weekly_schedule_carries_degenerate_weeks():
    records, products, clicks = three_week_dataset()
    # drop one MFI's product card: its training slices keep a single
    # rankable MFI, so every week falls back
    schedule = weekly_schedule(records, products[:1], clicks)
    assert [e.source for e in schedule] == ["historical", "carried", "carried"]
    first = schedule[0].ranking
    assert all(e.ranking == first for e in schedule)


# ---------------------------------------------------------------------------
# simulation


def identity_schedule(records):
    ranking = tuple(historical_ranking(records))
    weeks = sorted({week_start(r.click_time) for r in records})
    return [
        WeekEntry(week_start=w, ranking=ranking, trained_on=0, source="historical")
        for w in weeks
    ]


def test_identity_replay_reproduces_history_exactly(fixture_triple):
    conversions, _, _ = fixture_triple
    table = reapproval_table(conversions)
    result = simulate(conversions, identity_schedule(conversions), table)
    assert result.n_processed == len(conversions)
    assert result.n_copied == result.n_processed
    assert all(o.rule == "identity" for o in result.outcomes)
    true_lar = sum(1 for r in conversions if r.status is Status.SALE) / len(conversions)
    true_income = sum(
        r.income for r in conversions if r.status is Status.SALE and r.income
    ) / len(conversions)
    assert result.total_lar == pytest.approx(true_lar, abs=0)
    assert result.avg_income == pytest.approx(true_income, rel=1e-12)
    assert result.historical_lar == result.total_lar
    assert result.historical_avg_income == pytest.approx(result.avg_income, rel=1e-12)


def test_swapped_position_uses_the_table():
    records = [capp("A", "c1", Status.SALE, income=50.0, rank=1)]
    schedule = [
        WeekEntry(week_start=week_start(T0), ranking=("B", "A"), trained_on=0, source="ranked")
    ]
    table = ReapprovalTable(
        mfis=("A", "B"),
        sale={("B", "A"): PairStats(0.6, support=10)},
        reject={},
        mean_income={"B": 100.0},
        marginal_lar={"A": 0.5, "B": 0.5},
        min_support=5,
    )
    result = simulate(records, schedule, table)
    (outcome,) = result.outcomes
    assert outcome.rule == "table-sale"
    assert not outcome.copied
    assert outcome.p_sale == 0.6
    assert outcome.income == pytest.approx(60.0)
    assert outcome.hist_sale and outcome.hist_income == 50.0


def test_client_history_copies_the_actual_outcome():
    records = [
        capp("B", "c1", Status.SALE, hours=-48, income=77.0, rank=2),
        capp("A", "c1", Status.SALE, hours=1, income=50.0, rank=1),
    ]
    schedule = [
        WeekEntry(week_start=w, ranking=("B", "A"), trained_on=0, source="ranked")
        for w in sorted({week_start(r.click_time) for r in records})
    ]
    table = reapproval_table(records, min_support=1)
    result = simulate(records, schedule, table)
    by_hist = {o.mfi_hist: o for o in result.outcomes}
    replay_a = by_hist["A"]  # re-served by B, where c1 really got 77.0
    assert replay_a.rule == "history"
    assert replay_a.copied
    assert replay_a.p_sale == 1.0
    assert replay_a.income == 77.0


def test_pending_history_uses_the_marginal():
    records = [
        capp("A", "c1", Status.PENDING, rank=1),
        capp("B", "c2", Status.SALE, income=40.0, rank=2, hours=1),
        capp("B", "c3", Status.REJECTED, rank=2, hours=2),
    ]
    schedule = [
        WeekEntry(
            week_start=week_start(T0), ranking=("B", "A"), trained_on=0, source="ranked"
        )
    ]
    table = reapproval_table(records, min_support=1)
    result = simulate(records, schedule, table)
    pending = next(o for o in result.outcomes if o.mfi_hist == "A")
    assert pending.rule == "table-pending"
    assert pending.p_sale == pytest.approx(table.marginal_lar["B"])
    assert result.n_pending_fallback == 1


def test_positions_outside_the_list_are_counted():
    records = [
        capp("A", "c1", Status.SALE, income=5.0, rank=9),
        capp("A", "c2", Status.SALE, income=5.0),  # no rank at all
    ]
    schedule = [
        WeekEntry(
            week_start=week_start(T0), ranking=("A", "B"), trained_on=0, source="ranked"
        )
    ]
    table = reapproval_table(records)
    result = simulate(records, schedule, table)
    assert result.n_processed == 0
    assert result.n_skipped_out_of_range == 1
    assert result.n_skipped_no_rank == 1


# ---------------------------------------------------------------------------
# aggregates


def test_weekly_totals_partition_the_replay(fixture_triple):
    conversions, products, clicks = fixture_triple
    result, schedule = evaluate_ranking(conversions, products, clicks)
    rows = weekly_totals(result)
    assert sum(r["applications"] for r in rows) == result.n_processed
    blended = sum(r["lar"] * r["applications"] for r in rows) / result.n_processed
    assert blended == pytest.approx(result.total_lar)
    assert [r["week"] for r in rows] == sorted(r["week"] for r in rows)


def test_daily_series_covers_the_full_range(fixture_triple):
    conversions, products, clicks = fixture_triple
    result, _ = evaluate_ranking(conversions, products, clicks)
    rows = daily_series(result, clicks)
    first = date.fromisoformat(rows[0]["date"])
    last = date.fromisoformat(rows[-1]["date"])
    assert len(rows) == (last - first).days + 1
    dates = [date.fromisoformat(r["date"]) for r in rows]
    assert dates == sorted(dates)
    total_clicks = sum(r["clicks"] for r in rows)
    assert total_clicks == len(clicks)


def test_daily_series_identity_twin_tracks(fixture_triple):
    conversions, _, clicks = fixture_triple
    table = reapproval_table(conversions)
    result = simulate(conversions, identity_schedule(conversions), table)
    for row in daily_series(result, clicks):
        assert row["vra"]["income"] == pytest.approx(row["historical"]["income"])
        assert row["vra"]["sales"] == pytest.approx(row["historical"]["sales"])


def test_evaluate_ranking_round_trip(fixture_triple):
    conversions, products, clicks = fixture_triple
    result, schedule = evaluate_ranking(conversions, products, clicks)
    standard = [r for r in conversions if r.loan_type is LoanType.STANDARD]
    starts = [week_start(r.click_time) for r in standard]
    n_mondays = (max(starts) - min(starts)).days // 7 + 1
    assert len(schedule) == n_mondays
    payload = result.to_dict()
    assert set(payload) == {
        "total_lar",
        "avg_income",
        "historical_lar",
        "historical_avg_income",
        "coverage",
    }
    coverage = payload["coverage"]
    assert coverage["processed"] + coverage["skipped_no_rank"] + coverage[
        "skipped_out_of_range"
    ] + coverage["skipped_no_week"] == len(standard)
