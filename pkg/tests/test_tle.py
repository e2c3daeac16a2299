import dataclasses

import numpy as np
import pytest

from dsgp4kit import tle
from dsgp4kit.tle import (BadChecksum, BadLength, BadLineNumber, IdMismatch,
                          TleRecord, checksum, format_tle, parse_tle,
                          to_elements)


def test_parse_known_sentinel_line(oracle_cases):
    case = oracle_cases[0]
    rec = parse_tle(case["line1"], case["line2"])
    f = case["fields"]
    assert rec.norad_id == f["satnum"]
    assert rec.intl_designator == f["intl"]
    assert rec.epoch_year == f["epoch_year"]
    assert rec.epoch_days == f["epoch_days"]
    assert rec.inclination_deg == f["incl_deg"]
    assert rec.raan_deg == f["raan_deg"]
    assert rec.eccentricity == f["ecc"]
    assert rec.arg_perigee_deg == f["argp_deg"]
    assert rec.mean_anomaly_deg == f["ma_deg"]
    assert rec.mean_motion_revday == f["n_revday"]
    assert rec.bstar == f["bstar"]
    assert rec.element_number == f["elnum"]
    assert rec.rev_number == f["rev"]


def test_format_round_trips_fixture_lines_bytewise(oracle_cases):
    for case in oracle_cases:
        rec = parse_tle(case["line1"], case["line2"])
        l1, l2 = format_tle(rec)
        assert l1 == case["line1"], case["name"]
        assert l2 == case["line2"], case["name"]


def test_corpus_round_trip_bytewise(corpus_lines):
    assert len(corpus_lines) >= 200
    for i in range(0, len(corpus_lines), 2):
        l1, l2 = corpus_lines[i], corpus_lines[i + 1]
        rec = parse_tle(l1, l2)
        o1, o2 = format_tle(rec)
        assert o1 == l1
        assert o2 == l2


def test_corpus_value_round_trip(corpus_lines):
    # parse -> record -> format -> parse must hit the same numbers
    for i in range(0, len(corpus_lines), 2):
        rec = parse_tle(corpus_lines[i], corpus_lines[i + 1])
        again = parse_tle(*format_tle(rec))
        assert again == rec


def test_checksum_function():
    line = "1 25544U 98067A   24160.50000000  .00016717  00000-0  10270-3 0  9005"
    assert checksum(line[:68]) == int(line[68])
    # minus signs count 1, letters and periods count 0
    assert checksum("1-") == 2
    assert checksum("ABC.") == 0


def test_checksum_mutation_detected_everywhere(corpus_lines):
    # flipping any digit anywhere in either line must fail the parse
    rng = np.random.default_rng(8)
    detected = 0
    trials = 0
    for i in range(0, min(len(corpus_lines), 60), 2):
        l1, l2 = corpus_lines[i], corpus_lines[i + 1]
        for _ in range(4):
            which = int(rng.integers(0, 2))
            line = l1 if which == 0 else l2
            col = int(rng.integers(0, 69))
            ch = line[col]
            if not ch.isdigit():
                continue
            repl = str((int(ch) + int(rng.integers(1, 10))) % 10)
            if repl == ch:
                continue
            mutated = line[:col] + repl + line[col + 1:]
            trials += 1
            with pytest.raises((BadChecksum, BadLineNumber, IdMismatch,
                                tle.UnparsableField)):
                if which == 0:
                    parse_tle(mutated, l2)
                else:
                    parse_tle(l1, mutated)
            detected += 1
    assert trials >= 50
    assert detected == trials


def test_bad_length_raises(oracle_cases):
    l1, l2 = oracle_cases[0]["line1"], oracle_cases[0]["line2"]
    with pytest.raises(BadLength):
        parse_tle(l1[:-1], l2)
    with pytest.raises(BadLength):
        parse_tle(l1, l2 + "0")


def test_line_number_and_id_mismatch(oracle_cases):
    l1, l2 = oracle_cases[0]["line1"], oracle_cases[0]["line2"]
    with pytest.raises(BadLineNumber):
        parse_tle(l2, l1)
    other = oracle_cases[2]
    with pytest.raises(IdMismatch):
        parse_tle(l1, other["line2"])


def test_to_elements_matches_fixture(oracle_cases):
    for case in oracle_cases:
        rec = parse_tle(case["line1"], case["line2"])
        els = to_elements(rec)
        exp = case["elements"]
        assert els.no_kozai == pytest.approx(exp["no_kozai"], rel=1e-15)
        assert els.ecco == exp["ecco"]
        assert els.inclo == pytest.approx(exp["inclo"], rel=1e-15)
        assert els.nodeo == pytest.approx(exp["nodeo"], rel=1e-15)
        assert els.argpo == pytest.approx(exp["argpo"], rel=1e-15)
        assert els.mo == pytest.approx(exp["mo"], rel=1e-15)
        assert els.bstar == exp["bstar"]
        assert els.epoch_jd == exp["epoch_jd"]
        assert els.epoch_fr == pytest.approx(exp["epoch_fr"], abs=1e-12)


def test_epoch_year_windowing():
    rec = TleRecord(
        norad_id=1, classification="U", intl_designator="99001A",
        epoch_year=1999, epoch_days=10.5, ndot=0.0, nddot=0.0, bstar=0.0,
        ephemeris_type=0, element_number=1, inclination_deg=50.0,
        raan_deg=0.0, eccentricity=1e-3, arg_perigee_deg=0.0,
        mean_anomaly_deg=0.0, mean_motion_revday=15.0, rev_number=1)
    l1, _ = format_tle(rec)
    assert l1[18:20] == "99"
    back = parse_tle(*format_tle(rec))
    assert back.epoch_year == 1999
    rec2020 = dataclasses.replace(rec, epoch_year=2020)
    assert parse_tle(*format_tle(rec2020)).epoch_year == 2020


def test_epoch_to_jd_j2000_anchor():
    # 2000-01-01 12:00 UTC is JD 2451545.0; TLE day-of-year is 1-based
    jd, fr = tle.epoch_to_jd(2000, 1.5)
    assert jd + fr == pytest.approx(2451545.0, abs=1e-9)


def test_iso_parsing_and_jd():
    dt = tle.parse_iso_utc("2000-01-01T12:00:00Z")
    jd, fr = tle.datetime_to_jd(dt)
    assert jd + fr == pytest.approx(2451545.0, abs=1e-9)
    with pytest.raises(ValueError):
        tle.parse_iso_utc("not-a-date")


def test_negative_bstar_and_ndot_round_trip():
    rec = TleRecord(
        norad_id=11111, classification="U", intl_designator="98067A",
        epoch_year=2024, epoch_days=100.0, ndot=-3.2e-5, nddot=-1.5e-7,
        bstar=-4.4e-5, ephemeris_type=0, element_number=12,
        inclination_deg=51.64, raan_deg=100.0, eccentricity=2e-4,
        arg_perigee_deg=30.0, mean_anomaly_deg=60.0,
        mean_motion_revday=15.5, rev_number=4321)
    l1, l2 = format_tle(rec)
    assert len(l1) == 69 and len(l2) == 69
    back = parse_tle(l1, l2)
    assert back.ndot == pytest.approx(rec.ndot, rel=1e-4)
    assert back.bstar == pytest.approx(rec.bstar, rel=1e-4)
    assert back.nddot == pytest.approx(rec.nddot, rel=1e-4)
    # and the re-format of the parsed record is stable
    assert format_tle(back) == (l1, l2)


def test_field_overflow():
    rec = TleRecord(
        norad_id=11111, classification="U", intl_designator="98067A",
        epoch_year=2024, epoch_days=100.0, ndot=0.0, nddot=0.0,
        bstar=5.0e10, ephemeris_type=0, element_number=12,
        inclination_deg=51.64, raan_deg=100.0, eccentricity=2e-4,
        arg_perigee_deg=30.0, mean_anomaly_deg=60.0,
        mean_motion_revday=15.5, rev_number=4321)
    with pytest.raises(tle.FieldOverflow):
        format_tle(rec)
