import json
import os

import numpy as np
import pytest

from dsgp4kit import initialize, parse_tle, propagate, to_elements
from dsgp4kit.data_io import (CsvParseError, DataError, EphemerisSeries,
                              NoOverlap, SampleSet, build_sampleset,
                              load_ephemeris_csv, load_sampleset,
                              load_tle_file, save_ephemeris_csv,
                              save_sampleset, save_tle_file, synth_oracle)
from dsgp4kit.tle import BadChecksum, TleRecord


def make_records(n, seed=5, norad_base=82000):
    rng = np.random.default_rng(seed)
    records = []
    for k in range(n):
        period = 93.0 + 1.0 * k
        records.append(TleRecord(
            norad_id=norad_base + k, classification="U",
            intl_designator="24%03dA" % k,
            epoch_year=2024, epoch_days=150.0 + 0.25 * k,
            ndot=0.0, nddot=0.0, bstar=3e-5,
            ephemeris_type=0, element_number=1,
            inclination_deg=float(rng.uniform(30.0, 98.0)),
            raan_deg=float(rng.uniform(0.0, 360.0)),
            eccentricity=float(rng.uniform(5e-4, 3e-3)),
            arg_perigee_deg=float(rng.uniform(0.0, 360.0)),
            mean_anomaly_deg=float(rng.uniform(0.0, 360.0)),
            mean_motion_revday=1440.0 / period,
            rev_number=1))
    return records


def test_synth_oracle_offsets_have_the_declared_shape():
    records = make_records(2)
    horizon = 720.0
    ephemerides = synth_oracle(records, horizon_min=horizon, resolution_s=300.0,
                               drift_km_per_day=0.5, periodic_km=2.0)
    for rec in records:
        series = ephemerides[rec.norad_id]
        els = to_elements(rec)
        model = initialize(els)
        t = series.minutes_since(els.epoch_jd, els.epoch_fr)
        period_min = 2.0 * np.pi / els.no_kozai
        for k in range(len(series)):
            plain = np.array(propagate(model, float(t[k])).vector())
            dr = series.states[k, :3] - plain[:3]
            dv = series.states[k, 3:] - plain[3:]
            phase = 2.0 * np.pi * t[k] / period_min + els.argpo + els.mo
            offset = 0.5 * t[k] / 1440.0 + 2.0 * np.sin(phase)
            assert np.linalg.norm(dr) == pytest.approx(abs(offset), abs=1e-6)
            # offset rides along the velocity direction
            u_hat = plain[3:] / np.linalg.norm(plain[3:])
            assert float(dr @ u_hat) == pytest.approx(offset, abs=1e-6)
            assert np.linalg.norm(dv) < 0.02  # km/s, drift plus periodic slope
        assert np.linalg.norm(series.states[:, :3] - series.states[0, :3],
                              axis=1).max() > 0.0


def test_synth_oracle_noise_is_seeded():
    records = make_records(1)
    kw = dict(horizon_min=60.0, resolution_s=300.0, noise_pos_km=0.1,
              noise_vel_kms=1e-4)
    a = synth_oracle(records, seed=3, **kw)
    b = synth_oracle(records, seed=3, **kw)
    c = synth_oracle(records, seed=4, **kw)
    sat = records[0].norad_id
    assert np.array_equal(a[sat].states, b[sat].states)
    assert not np.array_equal(a[sat].states, c[sat].states)


def test_synth_oracle_rejects_unpropagatable_horizon(oracle_cases):
    case = next(c for c in oracle_cases if c["name"] == "decaying")
    rec = parse_tle(case["line1"], case["line2"])
    with pytest.raises(DataError) as exc_info:
        synth_oracle([rec], horizon_min=1440.0, resolution_s=300.0)
    assert str(rec.norad_id) in str(exc_info.value)


def test_ephemeris_series_validation():
    good = dict(sat_id=1, epochs_jd=np.array([2460000.5, 2460000.5]),
                epochs_fr=np.array([0.0, 0.1]), states=np.zeros((2, 6)))
    EphemerisSeries(**good)
    with pytest.raises(DataError):
        EphemerisSeries(**{**good, "states": np.zeros((3, 6))})
    with pytest.raises(DataError):
        EphemerisSeries(**{**good, "epochs_fr": np.array([0.1, 0.0])})
    bad = np.zeros((2, 6))
    bad[1, 3] = np.inf
    with pytest.raises(DataError):
        EphemerisSeries(**{**good, "states": bad})


def test_ephemeris_csv_round_trip(tmp_path):
    records = make_records(1)
    series = synth_oracle(records, horizon_min=30.0, resolution_s=60.0)[
        records[0].norad_id]
    path = str(tmp_path / "eph.csv")
    save_ephemeris_csv(series, path)
    back = load_ephemeris_csv(path)
    assert back.sat_id == series.sat_id
    assert back.resolution_s == series.resolution_s
    assert len(back) == len(series)
    # states print with 9 decimals, epochs round to the millisecond
    assert np.abs(back.states - series.states).max() < 1e-9
    t_orig = series.epochs_jd + series.epochs_fr
    t_back = back.epochs_jd + back.epochs_fr
    assert np.abs(t_back - t_orig).max() < 1.0e-3 / 86400.0 + 1e-12


def test_ephemeris_csv_error_messages_name_the_row(tmp_path):
    path = str(tmp_path / "bad.csv")
    header = "epoch_iso,x_km,y_km,z_km,vx_kms,vy_kms,vz_kms\n"

    with open(path, "w") as f:
        f.write("# satellite 7\n")
        f.write("time,x\n")
    with pytest.raises(CsvParseError, match=r"bad\.csv:2"):
        load_ephemeris_csv(path)

    with open(path, "w") as f:
        f.write("# satellite 7\n" + header)
        f.write("2024-01-01T00:00:00.000Z,1,2,3,4,5,6\n")
        f.write("2024-01-01T00:00:00.000Z,1,2,3,4,5,6\n")
    with pytest.raises(CsvParseError, match=r"bad\.csv:4.*does not increase"):
        load_ephemeris_csv(path)

    with open(path, "w") as f:
        f.write("# satellite 7\n" + header)
        f.write("2024-01-01T00:00:00.000Z,1,2,junk,4,5,6\n")
    with pytest.raises(CsvParseError, match=r"bad\.csv:3"):
        load_ephemeris_csv(path)

    with open(path, "w") as f:
        f.write("# satellite 7\n" + header)
        f.write("2024-01-01T00:00:00.000Z,1,2,3,4,5\n")
    with pytest.raises(CsvParseError, match="expected 7 columns"):
        load_ephemeris_csv(path)

    with open(path, "w") as f:
        f.write(header)
        f.write("2024-01-01T00:00:00.000Z,1,2,3,4,5,6\n")
    with pytest.raises(CsvParseError, match="satellite id"):
        load_ephemeris_csv(path)

    with open(path, "w") as f:
        f.write("# satellite 7\n" + header)
    with pytest.raises(CsvParseError, match="no data rows"):
        load_ephemeris_csv(path)


def test_build_sampleset_split_counts_and_hygiene():
    records = make_records(20)
    ephemerides = synth_oracle(records, horizon_min=120.0, resolution_s=300.0)
    ss = build_sampleset(records, ephemerides, seed=1)
    counts = ss.counts()
    assert counts["train"]["cards"] == round(0.69 * 20)
    assert counts["valid"]["cards"] == round(0.16 * 20)
    assert counts["total"]["cards"] == 20
    assert sum(counts[k]["cards"] for k in ("train", "valid", "test")) == 20
    # every row of a card carries that card's split: rows_for partitions
    all_rows = np.concatenate([ss.rows_for(k) for k in ("train", "valid", "test")])
    assert sorted(all_rows.tolist()) == list(range(ss.n_rows))
    ss.validate()


def test_build_sampleset_rows_never_look_backward():
    records = make_records(1)
    series = synth_oracle(records, horizon_min=120.0, resolution_s=300.0)
    late = TleRecord(**{**records[0].__dict__, "epoch_days":
                        records[0].epoch_days + 60.0 / 1440.0,
                        "norad_raw": "", "name": ""})
    ss = build_sampleset([records[0], late], series, fractions=(1.0, 0.0, 0.0))
    assert ss.n_cards == 2
    assert np.all(ss.row_t >= 0.0)
    # the late card epoch sits 60 min in: exactly the 60-min tail remains
    late_rows = ss.row_t[ss.row_card == 1]
    assert late_rows.size == 13
    assert late_rows.max() <= 60.0 + 1e-9


def test_build_sampleset_split_is_seed_stable():
    records = make_records(20)
    ephemerides = synth_oracle(records, horizon_min=60.0, resolution_s=300.0)
    a = build_sampleset(records, ephemerides, seed=2)
    b = build_sampleset(records, ephemerides, seed=2)
    c = build_sampleset(records, ephemerides, seed=3)
    assert np.array_equal(a.split, b.split)
    assert not np.array_equal(a.split, c.split)


def test_altitude_holdout_goes_to_test():
    records = make_records(12)
    ephemerides = synth_oracle(records, horizon_min=60.0, resolution_s=300.0)
    alts = []
    for rec in records:
        els = to_elements(rec)
        from dsgp4kit.propagator import WGS72
        a_er = (WGS72.xke / els.no_kozai) ** (2.0 / 3.0)
        alts.append((a_er - 1.0) * WGS72.radiusearthkm)
    cut = sorted(alts)[3] + 1.0
    ss = build_sampleset(records, ephemerides, holdout_alt_km=cut, seed=0)
    held = np.array(alts)[np.argsort([r.norad_id for r in records])] < cut
    assert np.all(ss.split[held] == 2)
    ss.validate()


def test_validate_rejects_corrupted_split():
    records = make_records(6)
    ephemerides = synth_oracle(records, horizon_min=60.0, resolution_s=300.0)
    ss = build_sampleset(records, ephemerides, fractions=(0.5, 0.25, 0.25))
    ss.split = ss.split[:-1]
    with pytest.raises(DataError):
        ss.validate()
    ss = build_sampleset(records, ephemerides, fractions=(0.5, 0.25, 0.25))
    ss.split[:] = 0  # everything train: counts are off by far more than 1
    with pytest.raises(DataError):
        ss.validate()


def test_build_sampleset_error_cases():
    records = make_records(2)
    ephemerides = synth_oracle(records, horizon_min=60.0, resolution_s=300.0)
    with pytest.raises(DataError, match="fractions"):
        build_sampleset(records, ephemerides, fractions=(0.5, 0.2, 0.2))
    with pytest.raises(DataError, match=str(records[1].norad_id)):
        build_sampleset(records, {records[0].norad_id:
                                  ephemerides[records[0].norad_id]})
    els = to_elements(records[0])
    stale = EphemerisSeries(
        sat_id=records[0].norad_id,
        epochs_jd=np.array([els.epoch_jd - 1.0]),
        epochs_fr=np.array([els.epoch_fr]),
        states=np.zeros((1, 6)),
    )
    with pytest.raises(NoOverlap):
        build_sampleset([records[0]], {records[0].norad_id: stale})


def test_sampleset_save_load_and_manifest(tmp_path):
    records = make_records(6)
    ephemerides = synth_oracle(records, horizon_min=60.0, resolution_s=300.0)
    ss = build_sampleset(records, ephemerides, fractions=(0.5, 0.25, 0.25),
                         seed=8)
    path = str(tmp_path / "set.npz")
    save_sampleset(ss, path)
    back = load_sampleset(path)
    assert np.array_equal(back.sat_ids, ss.sat_ids)
    assert np.array_equal(back.split, ss.split)
    assert np.array_equal(back.row_card, ss.row_card)
    assert np.array_equal(back.row_t, ss.row_t)
    assert np.array_equal(back.row_target, ss.row_target)
    assert back.elements == ss.elements

    with open(str(tmp_path / "set.manifest.json")) as f:
        manifest = json.load(f)
    assert manifest["counts"] == ss.counts()
    import hashlib
    assert manifest["hashes"]["row_t"] == hashlib.sha256(
        np.ascontiguousarray(back.row_t).tobytes()).hexdigest()
    assert manifest["hashes"]["row_target"] == hashlib.sha256(
        np.ascontiguousarray(back.row_target).tobytes()).hexdigest()


def test_tle_file_round_trip(tmp_path, oracle_cases):
    records = []
    for k, case in enumerate(oracle_cases[:4]):
        rec = parse_tle(case["line1"], case["line2"],
                        name=("OBJ %d" % k) if k % 2 == 0 else "")
        records.append(rec)
    path = str(tmp_path / "cards.tle")
    save_tle_file(records, path)
    back = load_tle_file(path)
    assert back == records


def test_tle_file_skips_comments_and_blanks(tmp_path, oracle_cases):
    case = oracle_cases[0]
    path = str(tmp_path / "cards.tle")
    with open(path, "w") as f:
        f.write("# a comment\n\n")
        f.write("SENTINEL\n")
        f.write(case["line1"] + "\n")
        f.write(case["line2"] + "\n")
    back = load_tle_file(path)
    assert len(back) == 1
    assert back[0].name == "SENTINEL"


def test_tle_file_errors_carry_path_and_line(tmp_path, oracle_cases):
    case = oracle_cases[0]
    bad1 = case["line1"][:-1] + ("0" if case["line1"][-1] != "0" else "1")
    path = str(tmp_path / "bad.tle")
    with open(path, "w") as f:
        f.write(bad1 + "\n")
        f.write(case["line2"] + "\n")
    with pytest.raises(BadChecksum, match=r"bad\.tle:2"):
        load_tle_file(path)

    with open(path, "w") as f:
        f.write(case["line2"] + "\n")
    with pytest.raises(CsvParseError, match=r"bad\.tle:1"):
        load_tle_file(path)

    with open(path, "w") as f:
        f.write(case["line1"] + "\n")
    with pytest.raises(CsvParseError, match=r"bad\.tle:1"):
        load_tle_file(path)


def test_corpus_file_loads(corpus_lines):
    path = os.path.join(os.path.dirname(__file__), "fixtures", "tle_corpus.txt")
    records = load_tle_file(path)
    assert len(records) == len(corpus_lines) // 2
