"""Parsing, validation, and timeline derivation."""

from __future__ import annotations

import io
from datetime import datetime

import pytest

from mfirank.data import (
    ConversionRecord,
    LoanType,
    SchemaConfig,
    Status,
    derive_timeline,
    filter_loan_type,
    filter_standard,
    parse_clicks,
    parse_conversions,
    parse_products,
    serialize_clicks,
    serialize_conversions,
    serialize_products,
    validate,
)
from mfirank.errors import DataError

CONV_HEADER = "mfi_id,loan_type,click_time,status,client_id"


def conv_csv(*rows: str) -> io.StringIO:
    return io.StringIO("\n".join([CONV_HEADER, *rows]) + "\n")


def test_parses_minimal_conversion_row():
    result = parse_conversions(conv_csv("18,standard,2021-03-01 10:00:00,sale,c1"))
    assert not result.errors
    (rec,) = result.records
    assert rec.mfi_id == "18"
    assert rec.loan_type is LoanType.STANDARD
    assert rec.status is Status.SALE
    assert rec.click_time == datetime(2021, 3, 1, 10, 0, 0)


def test_header_spellings_are_normalized():
    text = io.StringIO(
        "MFI id,Loan type,Click Time,Status,Client-ID,MFI global rank\n"
        "18,standard,2021-03-01 10:00:00,sale,c1,4\n"
    )
    (rec,) = parse_conversions(text).records
    assert rec.global_rank == 4


def test_comment_lines_are_skipped_before_the_header():
    text = io.StringIO(
        "# config_digest=abc123\n"
        + CONV_HEADER
        + "\n18,standard,2021-03-01 10:00:00,sale,c1\n"
    )
    assert len(parse_conversions(text).records) == 1


def test_unknown_status_becomes_pending():
    (rec,) = parse_conversions(conv_csv("18,standard,2021-03-01 10:00:00,???,c1")).records
    assert rec.status is Status.PENDING


def test_russian_loan_type_spellings_map():
    result = parse_conversions(
        conv_csv(
            "18,loan-usual,2021-03-01 10:00:00,sale,c1",
            "18,loan-long-term,2021-03-01 10:00:00,sale,c2",
        )
    )
    assert [r.loan_type for r in result.records] == [
        LoanType.STANDARD,
        LoanType.LONG_TERM,
    ]


def test_malformed_timestamp_is_a_row_error():
    result = parse_conversions(conv_csv("18,standard,not-a-time,sale,c1"))
    assert not result.records
    (err,) = result.errors
    assert err.column == "click_time"
    assert err.row == 1


def test_unmapped_loan_type_is_a_row_error():
    result = parse_conversions(conv_csv("18,mortgage,2021-03-01 10:00:00,sale,c1"))
    assert not result.records
    assert result.errors[0].column == "loan_type"


def test_missing_mandatory_column_names_it():
    text = io.StringIO("mfi_id,click_time,status,client_id\n18,2021-03-01 10:00:00,sale,c1\n")
    with pytest.raises(DataError, match="loan_type"):
        parse_conversions(text)


def test_unreadable_file_is_a_data_error():
    with pytest.raises(DataError, match="cannot read"):
        parse_conversions("/no/such/file.csv")


def test_custom_timestamp_format():
    schema = SchemaConfig(timestamp_format="%d.%m.%Y %H:%M")
    (rec,) = parse_conversions(
        conv_csv("18,standard,01.03.2021 10:00,sale,c1"), schema
    ).records
    assert rec.click_time == datetime(2021, 3, 1, 10, 0)


def test_products_duplicate_card_id_is_fatal():
    text = io.StringIO(
        "mfi_id,card_id,loan_type\n18,card-1,standard\n20,card-1,standard\n"
    )
    with pytest.raises(DataError, match="duplicate card_id"):
        parse_products(text)


def test_products_rating_bounds_and_booleans():
    text = io.StringIO(
        "mfi_id,card_id,loan_type,average user rating,number of reviews,unreliability\n"
        "18,card-1,standard,4.5,12,нет\n"
        "20,card-2,standard,9.7,3,да\n"
    )
    result = parse_products(text)
    (rec,) = result.records
    assert rec.avg_user_rating == 4.5
    assert rec.n_reviews == 12
    assert rec.unreliability is False
    (err,) = result.errors
    assert err.column == "avg_user_rating"


def test_click_parser_reads_the_superset_log():
    text = io.StringIO(
        "mfi_id,card_id,click_time,client_id,page_id,page_rank,loan_type,income\n"
        "18,card-1,2021-03-01 09:59:00,c1,2,5,standard,\n"
    )
    (rec,) = parse_clicks(text).records
    assert rec.page_rank == 5
    assert rec.income is None


def test_serialize_round_trip(fixture_triple):
    conversions, products, clicks = fixture_triple
    back_conv = parse_conversions(io.StringIO(serialize_conversions(conversions)))
    back_prod = parse_products(io.StringIO(serialize_products(products)))
    back_clk = parse_clicks(io.StringIO(serialize_clicks(clicks)))
    assert not back_conv.errors and not back_prod.errors and not back_clk.errors
    assert back_conv.records == conversions
    assert back_prod.records == products
    assert back_clk.records == clicks


def _app(**kwargs) -> ConversionRecord:
    base = dict(
        mfi_id="18",
        loan_type=LoanType.STANDARD,
        client_id="c1",
        click_time=datetime(2021, 3, 1, 10, 0, 0),
        status=Status.SALE,
    )
    base.update(kwargs)
    return ConversionRecord(**base)


def test_timeline_periods():
    rec = _app(
        conversion_time=datetime(2021, 3, 1, 10, 10, 0),
        sale_time=datetime(2021, 3, 1, 11, 10, 0),
    )
    tl = derive_timeline(rec)
    assert tl.conversion_period == 600.0
    assert tl.processing_period == 3600.0
    assert not tl.invalid


def test_timeline_negative_difference_marks_invalid():
    rec = _app(conversion_time=datetime(2021, 3, 1, 9, 0, 0))
    tl = derive_timeline(rec)
    assert tl.invalid
    assert tl.conversion_period is None


def test_timeline_processing_needs_a_sale():
    rec = _app(
        status=Status.REJECTED,
        conversion_time=datetime(2021, 3, 1, 10, 10, 0),
        sale_time=datetime(2021, 3, 1, 11, 0, 0),
    )
    assert derive_timeline(rec).processing_period is None


def test_loan_type_filters():
    records = [
        _app(),
        _app(loan_type=LoanType.LONG_TERM),
        _app(loan_type=LoanType.INTEREST_FREE),
    ]
    assert filter_standard(records) == [records[0]]
    assert filter_loan_type(records, LoanType.LONG_TERM) == [records[1]]
    assert filter_loan_type(records, None) == records


def test_validate_counts_on_the_fixture(fixture_triple):
    conversions, products, clicks = fixture_triple
    report = validate(conversions, products, clicks)
    assert report.n_applications == len(conversions)
    assert report.n_mfis == len({r.mfi_id for r in conversions})
    assert report.n_clients == len({r.client_id for r in conversions})
    assert report.n_sales == sum(1 for r in conversions if r.status is Status.SALE)
    assert abs(sum(report.status_shares.values()) - 1.0) < 1e-12
    assert report.n_invalid_timelines == 0
    # the generator produces internally consistent data
    assert report.warnings == []


def test_validate_flags_orphans_and_unmatched_conversions():
    conversions = [_app(sale_time=datetime(2021, 3, 1, 11, 0), income=10.0)]
    text = io.StringIO("mfi_id,card_id,loan_type\n99,card-9,standard\n")
    products = parse_products(text).records
    report = validate(conversions, products, [])
    assert any("absent from products" in w for w in report.warnings)
