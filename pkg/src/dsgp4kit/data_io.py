"""File formats, synthetic ephemerides, and training sample sets.

Three layers live here.  The bottom one reads and writes element card
files and ephemeris CSVs.  The middle one manufactures a synthetic
"truth" ephemeris by propagating a card and adding a deterministic
along-track perturbation, which gives the learning code a target whose
error structure is known exactly.  The top one pairs cards with
ephemeris timestamps into a SampleSet with a train/valid/test split
decided per card, never per row, so no card leaks across splits.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from . import tle as tle_mod
from .batch import BatchJob, run_batch
from .propagator import WGS72, initialize
from .tle import TleError, parse_iso_utc, datetime_to_jd

__all__ = [
    "DataError",
    "CsvParseError",
    "NoOverlap",
    "EphemerisSeries",
    "SampleSet",
    "load_tle_file",
    "save_tle_file",
    "load_ephemeris_csv",
    "save_ephemeris_csv",
    "synth_oracle",
    "build_sampleset",
    "save_sampleset",
    "load_sampleset",
    "bench_models",
    "SPLIT_TRAIN",
    "SPLIT_VALID",
    "SPLIT_TEST",
    "SPLIT_NAMES",
]

EPHEMERIS_COLUMNS = ("epoch_iso", "x_km", "y_km", "z_km", "vx_kms", "vy_kms", "vz_kms")

SPLIT_TRAIN, SPLIT_VALID, SPLIT_TEST = 0, 1, 2
SPLIT_NAMES = ("train", "valid", "test")

_J2000_JD = 2451545.0
_J2000 = datetime(2000, 1, 1, 12, 0, 0, tzinfo=timezone.utc)


class DataError(ValueError):
    """Problem with an input file or a dataset build."""


class CsvParseError(DataError):
    """A CSV row that cannot be used, with file and row context."""


class NoOverlap(DataError):
    """A card has no ephemeris timestamps at or after its epoch."""


def _jd_to_iso(jd, fr):
    dt = _J2000 + timedelta(days=(jd - _J2000_JD) + fr)
    # round to the nearest millisecond so the text is stable
    micro = round(dt.microsecond, -3)
    if micro == 1000000:
        dt = dt.replace(microsecond=0) + timedelta(seconds=1)
    else:
        dt = dt.replace(microsecond=micro)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3] + "Z"


def load_tle_file(path):
    """Read a two or three line element file.

    Blank lines and lines starting with '#' are skipped.  A non-card
    line right before a card is kept as the object name.  Returns a
    list of TleRecord in file order.
    """
    records = []
    name = ""
    line1 = None
    line1_no = 0
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            tag = line[:2]
            if tag == "1 ":
                if line1 is not None:
                    raise CsvParseError(
                        "%s:%d: line 1 card without a following line 2" % (path, line1_no)
                    )
                line1, line1_no = line, lineno
            elif tag == "2 ":
                if line1 is None:
                    raise CsvParseError(
                        "%s:%d: line 2 card without a preceding line 1" % (path, lineno)
                    )
                try:
                    records.append(tle_mod.parse_tle(line1, line, name=name))
                except TleError as e:
                    raise type(e)("%s:%d: %s" % (path, lineno, e)) from e
                line1, name = None, ""
            else:
                name = line.strip()
    if line1 is not None:
        raise CsvParseError(
            "%s:%d: line 1 card without a following line 2" % (path, line1_no)
        )
    return records


def save_tle_file(records, path):
    with open(path, "w") as f:
        for rec in records:
            if rec.name:
                f.write(rec.name + "\n")
            l1, l2 = tle_mod.format_tle(rec)
            f.write(l1 + "\n")
            f.write(l2 + "\n")


@dataclass
class EphemerisSeries:
    """Cartesian states of one object on a strictly increasing time grid.

    Epochs are split julian dates.  resolution_s is the declared grid
    spacing; None means irregular.
    """

    sat_id: int
    epochs_jd: np.ndarray
    epochs_fr: np.ndarray
    states: np.ndarray
    resolution_s: float | None = None
    name: str = ""

    def __post_init__(self):
        self.epochs_jd = np.asarray(self.epochs_jd, dtype=np.float64)
        self.epochs_fr = np.asarray(self.epochs_fr, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        n = self.epochs_jd.shape[0]
        if self.epochs_fr.shape != (n,) or self.states.shape != (n, 6):
            raise DataError("epochs and states shapes disagree")
        t = self.epochs_jd + self.epochs_fr
        if n > 1 and not np.all(np.diff(t) > 0):
            raise DataError("epochs must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise DataError("states must be finite")

    def __len__(self):
        return self.epochs_jd.shape[0]

    def minutes_since(self, epoch_jd, epoch_fr):
        """Signed offset of every grid epoch from the given one, minutes."""
        return ((self.epochs_jd - epoch_jd) + (self.epochs_fr - epoch_fr)) * 1440.0


def save_ephemeris_csv(series, path):
    with open(path, "w", newline="") as f:
        f.write("# satellite %d\n" % series.sat_id)
        if series.name:
            f.write("# name %s\n" % series.name)
        if series.resolution_s is not None:
            f.write("# resolution_s %g\n" % series.resolution_s)
        w = csv.writer(f)
        w.writerow(EPHEMERIS_COLUMNS)
        for k in range(len(series)):
            iso = _jd_to_iso(series.epochs_jd[k], series.epochs_fr[k])
            w.writerow([iso] + ["%.9f" % v for v in series.states[k]])


def load_ephemeris_csv(path, sat_id=None):
    """Read one ephemeris CSV written by save_ephemeris_csv.

    The column header is required.  Epochs must be strictly
    increasing; a decreasing or duplicate epoch, a bad timestamp, or a
    non-numeric value raises CsvParseError naming the row.
    """
    resolution = None
    name = ""
    header = None
    jds, frs, rows = [], [], []
    last = None
    with open(path, newline="") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if line.startswith("#"):
                parts = line[1:].split(None, 1)
                if len(parts) == 2 and parts[0] == "satellite" and sat_id is None:
                    sat_id = int(parts[1])
                elif len(parts) == 2 and parts[0] == "resolution_s":
                    resolution = float(parts[1])
                elif len(parts) == 2 and parts[0] == "name":
                    name = parts[1]
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = tuple(c.strip() for c in cells)
                if header != EPHEMERIS_COLUMNS:
                    raise CsvParseError(
                        "%s:%d: expected header %s" % (path, lineno, ",".join(EPHEMERIS_COLUMNS))
                    )
                continue
            if len(cells) != 7:
                raise CsvParseError("%s:%d: expected 7 columns, got %d" % (path, lineno, len(cells)))
            try:
                dt = parse_iso_utc(cells[0])
                state = [float(c) for c in cells[1:]]
            except (ValueError, TypeError) as e:
                raise CsvParseError("%s:%d: %s" % (path, lineno, e)) from e
            jd, fr = datetime_to_jd(dt)
            stamp = jd + fr
            if last is not None and stamp <= last:
                raise CsvParseError(
                    "%s:%d: epoch %s does not increase" % (path, lineno, cells[0])
                )
            last = stamp
            jds.append(jd)
            frs.append(fr)
            rows.append(state)
    if header is None:
        raise CsvParseError("%s: missing header row" % path)
    if not rows:
        raise CsvParseError("%s: no data rows" % path)
    if sat_id is None:
        raise CsvParseError("%s: satellite id neither in file nor given" % path)
    return EphemerisSeries(
        sat_id=int(sat_id),
        epochs_jd=np.array(jds),
        epochs_fr=np.array(frs),
        states=np.array(rows),
        resolution_s=resolution,
        name=name,
    )


def synth_oracle(records, horizon_min=4320.0, resolution_s=60.0,
                 drift_km_per_day=0.5, periodic_km=2.0,
                 noise_pos_km=0.0, noise_vel_kms=0.0, seed=0, gravity=WGS72):
    """Synthetic truth ephemerides for a list of cards.

    Each card is propagated on a uniform grid from its own epoch, then
    perturbed along the velocity direction by a secular drift plus a
    once-per-orbit term, b*sin(2*pi*t/T + u0) with u0 the mean argument
    of latitude at epoch.  Anchoring the phase at u0 makes the
    perturbation a function of where the object is on its orbit rather
    than of wall-clock time, which is the shape real along-track errors
    take.  The velocity carries the time derivative of the offset.
    Optional gaussian noise is seeded and reproducible.  Returns a dict
    keyed by norad id.
    """
    times = np.arange(0.0, horizon_min + resolution_s / 120.0, resolution_s / 60.0)
    models = []
    elements = []
    for rec in records:
        els = tle_mod.to_elements(rec)
        elements.append(els)
        models.append(initialize(els, gravity=gravity))
    result = run_batch(BatchJob.grid(models, times), workers=1)
    if result.error_count:
        bad = int(np.flatnonzero(result.error_codes)[0])
        i = int(np.searchsorted(result.offsets, bad, side="right")) - 1
        raise DataError(
            "satellite %d fails to propagate over the horizon (code %d)"
            % (records[i].norad_id, int(result.error_codes[bad]))
        )
    rng = np.random.default_rng(seed)
    n_t = len(times)
    out = {}
    for i, (rec, els) in enumerate(zip(records, elements)):
        sl = slice(result.offsets[i], result.offsets[i] + n_t)
        r = result.r[sl].copy()
        v = result.v[sl].copy()
        u_hat = v / np.linalg.norm(v, axis=1, keepdims=True)
        period_min = 2.0 * np.pi / els.no_kozai
        phase = 2.0 * np.pi * times / period_min + (els.argpo + els.mo)
        offset = drift_km_per_day * (times / 1440.0) + periodic_km * np.sin(phase)
        d_offset = (drift_km_per_day / 86400.0
                    + periodic_km * (2.0 * np.pi / (period_min * 60.0)) * np.cos(phase))
        r += u_hat * offset[:, None]
        v += u_hat * d_offset[:, None]
        if noise_pos_km:
            r += noise_pos_km * rng.standard_normal(r.shape)
        if noise_vel_kms:
            v += noise_vel_kms * rng.standard_normal(v.shape)
        out[rec.norad_id] = EphemerisSeries(
            sat_id=rec.norad_id,
            epochs_jd=np.full(n_t, els.epoch_jd),
            epochs_fr=els.epoch_fr + times / 1440.0,
            states=np.hstack([r, v]),
            resolution_s=resolution_s,
            name=rec.name,
        )
    return out


@dataclass
class SampleSet:
    """Card/timestamp training rows with a per-card split.

    cards holds (norad_id, ElementSet) pairs; split tags each card 0
    train, 1 valid, 2 test.  Rows reference cards by index and carry
    the offset t in minutes from that card's epoch plus the target
    state.  Row order is deterministic: sorted by satellite, card
    epoch, then t.
    """

    sat_ids: np.ndarray
    elements: list
    split: np.ndarray
    row_card: np.ndarray
    row_t: np.ndarray
    row_target: np.ndarray
    seed: int = 0
    fractions: tuple = (0.69, 0.16, 0.15)
    holdout_alt_km: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_cards(self):
        return len(self.elements)

    @property
    def n_rows(self):
        return self.row_t.shape[0]

    def param_matrix(self):
        """(n_cards, 9) array of the free parameters of every card."""
        return np.array([
            [e.no_kozai, e.ecco, e.inclo, e.nodeo, e.argpo, e.mo,
             e.bstar, e.ndot, e.nddot]
            for e in self.elements
        ])

    def rows_for(self, split_name):
        tag = SPLIT_NAMES.index(split_name)
        return np.flatnonzero(self.split[self.row_card] == tag)

    def counts(self):
        c = {}
        for tag, nm in enumerate(SPLIT_NAMES):
            c[nm] = {
                "cards": int(np.count_nonzero(self.split == tag)),
                "rows": int(np.count_nonzero(self.split[self.row_card] == tag)),
            }
        c["total"] = {"cards": self.n_cards, "rows": self.n_rows}
        return c

    def validate(self):
        """Split hygiene: tags in range, counts within one card of request."""
        if self.split.shape != (self.n_cards,):
            raise DataError("split must tag every card exactly once")
        if np.any((self.split < 0) | (self.split > 2)):
            raise DataError("unknown split tag")
        if np.any(self.row_card < 0) or np.any(self.row_card >= self.n_cards):
            raise DataError("row references a card that does not exist")
        held = np.zeros(self.n_cards, dtype=bool)
        if self.holdout_alt_km is not None:
            held = self._altitudes() < self.holdout_alt_km
            if np.any(self.split[held] != SPLIT_TEST):
                raise DataError("held-out card not in the test split")
        m = int(np.count_nonzero(~held))
        want = [self.fractions[0] * m, self.fractions[1] * m, self.fractions[2] * m]
        for tag in (SPLIT_TRAIN, SPLIT_VALID, SPLIT_TEST):
            got = int(np.count_nonzero(self.split[~held] == tag))
            if abs(got - want[tag]) > 1.0:
                raise DataError(
                    "%s split has %d cards, requested %.2f"
                    % (SPLIT_NAMES[tag], got, want[tag])
                )

    def _altitudes(self):
        out = np.empty(self.n_cards)
        for i, e in enumerate(self.elements):
            a_er = (WGS72.xke / e.no_kozai) ** (2.0 / 3.0)
            out[i] = (a_er - 1.0) * WGS72.radiusearthkm
        return out


def build_sampleset(records, ephemerides, fractions=(0.69, 0.16, 0.15),
                    holdout_alt_km=None, seed=0):
    """Pair cards with ephemeris timestamps and split at the card level.

    Every card is matched with the timestamps of its satellite's series
    that fall at or after the card epoch (pairing never looks backward;
    a card with no forward coverage raises NoOverlap).  Satellites whose
    mean altitude sits below holdout_alt_km go to the test split whole,
    so test covers an altitude range training never saw.  The remaining
    cards are shuffled by seed and cut 69/16/15 by default; realized
    counts land within one card of the request.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError("split fractions must sum to 1")
    if isinstance(ephemerides, dict):
        by_sat = ephemerides
    else:
        by_sat = {s.sat_id: s for s in ephemerides}

    order = sorted(range(len(records)),
                   key=lambda i: (records[i].norad_id,
                                  records[i].epoch_year, records[i].epoch_days, i))
    sat_ids = []
    elements = []
    alts = []
    row_card, row_t, row_target = [], [], []
    for card_idx, i in enumerate(order):
        rec = records[i]
        if rec.norad_id not in by_sat:
            raise DataError("no ephemeris for satellite %d" % rec.norad_id)
        series = by_sat[rec.norad_id]
        els = tle_mod.to_elements(rec)
        t = series.minutes_since(els.epoch_jd, els.epoch_fr)
        keep = np.flatnonzero(t >= -1e-9)
        if keep.size == 0:
            raise NoOverlap(
                "card for satellite %d at epoch %d/%.8f has no ephemeris at or "
                "after its epoch" % (rec.norad_id, rec.epoch_year, rec.epoch_days)
            )
        sat_ids.append(rec.norad_id)
        elements.append(els)
        a_er = (WGS72.xke / els.no_kozai) ** (2.0 / 3.0)
        alts.append((a_er - 1.0) * WGS72.radiusearthkm)
        row_card.append(np.full(keep.size, card_idx, dtype=np.int64))
        row_t.append(np.maximum(t[keep], 0.0))
        row_target.append(series.states[keep])

    n_cards = len(elements)
    alts = np.array(alts)
    split = np.full(n_cards, SPLIT_TEST, dtype=np.uint8)
    held = np.zeros(n_cards, dtype=bool)
    if holdout_alt_km is not None:
        held = alts < holdout_alt_km
    free = np.flatnonzero(~held)
    rng = np.random.default_rng(seed)
    free = free[rng.permutation(free.size)]
    n_train = int(round(fractions[0] * free.size))
    n_valid = int(round(fractions[1] * free.size))
    split[free[:n_train]] = SPLIT_TRAIN
    split[free[n_train:n_train + n_valid]] = SPLIT_VALID

    ss = SampleSet(
        sat_ids=np.array(sat_ids, dtype=np.int64),
        elements=elements,
        split=split,
        row_card=np.concatenate(row_card),
        row_t=np.concatenate(row_t),
        row_target=np.vstack(row_target),
        seed=seed,
        fractions=tuple(fractions),
        holdout_alt_km=holdout_alt_km,
    )
    ss.validate()
    return ss


def _sha256(arr):
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def save_sampleset(ss, path):
    """Cache a SampleSet as an npz plus a JSON manifest next to it."""
    fields = np.array([
        [e.no_kozai, e.ecco, e.inclo, e.nodeo, e.argpo, e.mo,
         e.bstar, e.ndot, e.nddot, e.epoch_jd, e.epoch_fr]
        for e in ss.elements
    ])
    np.savez(
        path,
        sat_ids=ss.sat_ids,
        card_fields=fields,
        split=ss.split,
        row_card=ss.row_card,
        row_t=ss.row_t,
        row_target=ss.row_target,
    )
    manifest = {
        "seed": ss.seed,
        "fractions": list(ss.fractions),
        "holdout_alt_km": ss.holdout_alt_km,
        "counts": ss.counts(),
        "hashes": {
            "row_t": _sha256(ss.row_t),
            "row_target": _sha256(ss.row_target),
            "card_fields": _sha256(fields),
        },
    }
    mpath = str(path)
    if mpath.endswith(".npz"):
        mpath = mpath[:-4]
    with open(mpath + ".manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def load_sampleset(path):
    from .propagator import ElementSet

    with np.load(path) as z:
        fields = z["card_fields"]
        elements = [
            ElementSet(no_kozai=r[0], ecco=r[1], inclo=r[2], nodeo=r[3],
                       argpo=r[4], mo=r[5], bstar=r[6], ndot=r[7], nddot=r[8],
                       epoch_jd=r[9], epoch_fr=r[10])
            for r in fields
        ]
        return SampleSet(
            sat_ids=z["sat_ids"],
            elements=elements,
            split=z["split"],
            row_card=z["row_card"],
            row_t=z["row_t"],
            row_target=z["row_target"],
        )


def bench_models(n, seed=0, gravity=WGS72):
    """n healthy low-orbit models with varied elements, for benchmarks."""
    rng = np.random.default_rng(seed)
    out = []
    from .propagator import ElementSet

    for _ in range(n):
        period = rng.uniform(95.0, 115.0)
        els = ElementSet(
            no_kozai=2.0 * np.pi / period,
            ecco=rng.uniform(1e-4, 0.01),
            inclo=rng.uniform(0.1, 1.7),
            nodeo=rng.uniform(0.0, 2.0 * np.pi),
            argpo=rng.uniform(0.0, 2.0 * np.pi),
            mo=rng.uniform(0.0, 2.0 * np.pi),
            bstar=10.0 ** rng.uniform(-5.0, -3.5),
        )
        out.append(initialize(els, gravity=gravity))
    return out
