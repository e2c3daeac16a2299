"""Two-line element set parsing, formatting, and epoch handling.

Lines are fixed-width 69-column records.  Parsing is strict: wrong
lengths, bad line numbers, checksum mismatches, catalog-number
disagreement between the lines, and unparsable fields all raise typed
errors instead of limping along.  Formatting is the exact inverse on
canonical records, so parse -> format is byte-identical.
"""

import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone

from .propagator import ElementSet

__all__ = [
    "TleError",
    "BadLength",
    "BadLineNumber",
    "BadChecksum",
    "IdMismatch",
    "UnparsableField",
    "FieldOverflow",
    "TleRecord",
    "checksum",
    "parse_tle",
    "format_tle",
    "to_elements",
    "record_from_elements",
    "jday",
    "days2mdhms",
    "epoch_to_jd",
    "epoch_to_datetime",
    "datetime_to_jd",
    "parse_iso_utc",
]

DEG2RAD = math.pi / 180.0
XPDOTP = 1440.0 / (2.0 * math.pi)   # rev/day per rad/min


class TleError(ValueError):
    """Base for everything parse_tle and format_tle can raise."""


class BadLength(TleError):
    pass


class BadLineNumber(TleError):
    pass


class BadChecksum(TleError):
    pass


class IdMismatch(TleError):
    pass


class UnparsableField(TleError):
    def __init__(self, line_no, start, end, text, reason="unparsable"):
        self.line_no = line_no
        self.columns = (start, end)
        super().__init__(
            "line %d columns %d-%d %s: %r" % (line_no, start + 1, end, reason, text)
        )


class FieldOverflow(TleError):
    pass


# Alpha-5 catalog numbers: the first column may be a letter (I and O are
# skipped) standing for the leading digits 10..33.
_ALPHA5 = "ABCDEFGHJKLMNPQRSTUVWXYZ"
_ALPHA5_VALUE = {c: 10 + i for i, c in enumerate(_ALPHA5)}
_ALPHA5_CHAR = {10 + i: c for i, c in enumerate(_ALPHA5)}


@dataclass
class TleRecord:
    """One element set, fields in the units the card format prints.

    Angles are degrees, mean motion is rev/day, ndot is rev/day^2
    divided by two and nddot rev/day^3 divided by six, exactly as
    printed.  bstar is in inverse earth radii.  epoch_year is the full
    four-digit year.
    """

    norad_id: int
    classification: str
    intl_designator: str
    epoch_year: int
    epoch_days: float
    ndot: float
    nddot: float
    bstar: float
    ephemeris_type: int
    element_number: int
    inclination_deg: float
    raan_deg: float
    eccentricity: float
    arg_perigee_deg: float
    mean_anomaly_deg: float
    mean_motion_revday: float
    rev_number: int
    norad_raw: str = ""
    name: str = ""

    def __post_init__(self):
        if not self.norad_raw:
            self.norad_raw = _encode_satnum(self.norad_id)

    def with_updates(self, **kw):
        return replace(self, **kw)


def checksum(line):
    """Mod-10 checksum over the first 68 columns; '-' counts as 1."""
    total = 0
    for ch in line[:68]:
        if ch.isdigit():
            total += int(ch)
        elif ch == "-":
            total += 1
    return total % 10


def _decode_satnum(field, line_no):
    field = field.strip()
    if not field:
        raise UnparsableField(line_no, 2, 7, field, "empty catalog number")
    head = field[0]
    if head in _ALPHA5_VALUE:
        tail = field[1:]
        if len(tail) != 4 or not tail.isdigit():
            raise UnparsableField(line_no, 2, 7, field, "bad alpha-5 number")
        return _ALPHA5_VALUE[head] * 10000 + int(tail)
    try:
        return int(field)
    except ValueError:
        raise UnparsableField(line_no, 2, 7, field) from None


def _encode_satnum(norad_id):
    if 0 <= norad_id <= 99999:
        return "%5d" % norad_id
    head, tail = divmod(norad_id, 10000)
    if head not in _ALPHA5_CHAR:
        raise FieldOverflow("catalog number %d does not fit in 5 columns" % norad_id)
    return "%s%04d" % (_ALPHA5_CHAR[head], tail)


def _float_field(line, line_no, start, end):
    text = line[start:end]
    try:
        return float(text)
    except ValueError:
        raise UnparsableField(line_no, start, end, text) from None


def _int_field(line, line_no, start, end, blank=0):
    text = line[start:end]
    if text.strip() == "":
        return blank
    try:
        return int(text)
    except ValueError:
        raise UnparsableField(line_no, start, end, text) from None


def _parse_packed(line, line_no, start):
    """Decode the packed exponent notation, e.g. ' 59112-4' -> 0.59112e-4."""
    text = line[start:start + 8]
    if text.strip() == "":
        return 0.0
    sign = text[0]
    mant = text[1:6]
    esign = text[6]
    edig = text[7]
    if sign not in " +-" or esign not in " +-" or not mant.isdigit() or not edig.isdigit():
        raise UnparsableField(line_no, start, start + 8, text)
    # one decimal parse for the whole thing: doing mantissa and power
    # as separate float operations can land one ulp off
    return float(("-" if sign == "-" else "") + "."
                 + mant + "e" + ("-" if esign == "-" else "") + edig)


def _format_packed(value):
    """Inverse of _parse_packed; zero prints the canonical ' 00000-0'."""
    if value == 0.0:
        return " 00000-0"
    sign = "-" if value < 0.0 else " "
    a = abs(value)
    exponent = math.floor(math.log10(a)) + 1
    digits = round(a / 10.0 ** exponent * 1e5)
    if digits >= 100000:
        digits //= 10
        exponent += 1
    if exponent > 9 or exponent < -9:
        raise FieldOverflow("value %r does not fit the packed exponent field" % value)
    return "%s%05d%+d" % (sign, digits, exponent)


def _normalized(line, line_no):
    line = line.rstrip("\r\n ")
    if len(line) != 69:
        raise BadLength("line %d is %d characters, expected 69" % (line_no, len(line)))
    return line


def parse_tle(line1, line2, name=""):
    """Parse a two-line element set into a TleRecord.

    Raises BadLength, BadLineNumber, BadChecksum, IdMismatch, or
    UnparsableField.  Trailing whitespace is tolerated; everything else
    must sit in its fixed column.
    """
    line1 = _normalized(line1, 1)
    line2 = _normalized(line2, 2)
    if line1[0] != "1":
        raise BadLineNumber("line 1 starts with %r" % line1[0])
    if line2[0] != "2":
        raise BadLineNumber("line 2 starts with %r" % line2[0])
    for line_no, line in ((1, line1), (2, line2)):
        want = checksum(line)
        got = line[68]
        if not got.isdigit() or int(got) != want:
            raise BadChecksum(
                "line %d checksum is %r, computed %d" % (line_no, got, want)
            )
    raw1 = line1[2:7]
    raw2 = line2[2:7]
    if raw1 != raw2:
        raise IdMismatch("catalog number %r on line 1 but %r on line 2" % (raw1, raw2))
    norad_id = _decode_satnum(raw1, 1)
    _decode_satnum(raw2, 2)

    epoch_yy = _int_field(line1, 1, 18, 20)
    epoch_year = epoch_yy + (2000 if epoch_yy < 57 else 1900)
    epoch_days = _float_field(line1, 1, 20, 32)
    if not 1.0 <= epoch_days < 367.0:
        raise UnparsableField(1, 20, 32, line1[20:32], "day of year out of range")

    ecc_text = line2[26:33]
    if not ecc_text.strip().isdigit():
        raise UnparsableField(2, 26, 33, ecc_text)

    return TleRecord(
        norad_id=norad_id,
        classification=line1[7],
        intl_designator=line1[9:17].rstrip(),
        epoch_year=epoch_year,
        epoch_days=epoch_days,
        ndot=_float_field(line1, 1, 33, 43),
        nddot=_parse_packed(line1, 1, 44),
        bstar=_parse_packed(line1, 1, 53),
        ephemeris_type=_int_field(line1, 1, 62, 63),
        element_number=_int_field(line1, 1, 64, 68),
        inclination_deg=_float_field(line2, 2, 8, 16),
        raan_deg=_float_field(line2, 2, 17, 25),
        eccentricity=float("0." + ecc_text.replace(" ", "0")),
        arg_perigee_deg=_float_field(line2, 2, 34, 42),
        mean_anomaly_deg=_float_field(line2, 2, 43, 51),
        mean_motion_revday=_float_field(line2, 2, 52, 63),
        rev_number=_int_field(line2, 2, 63, 68),
        norad_raw=raw1,
        name=name,
    )


def _check_angle(value, what):
    if not 0.0 <= value < 360.0:
        raise FieldOverflow("%s %r out of [0, 360)" % (what, value))


def format_tle(record):
    """Format a TleRecord back to its two 69-column lines."""
    if not 0.0 <= record.eccentricity < 1.0:
        raise FieldOverflow("eccentricity %r out of [0, 1)" % record.eccentricity)
    if abs(record.ndot) >= 1.0:
        raise FieldOverflow("ndot %r does not fit the field" % record.ndot)
    if not 0.0 < record.mean_motion_revday < 100.0:
        raise FieldOverflow("mean motion %r out of range" % record.mean_motion_revday)
    if not 0.0 <= record.inclination_deg <= 180.0:
        raise FieldOverflow("inclination %r out of [0, 180]" % record.inclination_deg)
    for value, what in (
        (record.raan_deg, "raan"),
        (record.arg_perigee_deg, "argument of perigee"),
        (record.mean_anomaly_deg, "mean anomaly"),
    ):
        _check_angle(value, what)
    if not 0 <= record.element_number <= 9999:
        raise FieldOverflow("element number %r" % record.element_number)
    if not 0 <= record.rev_number <= 99999:
        raise FieldOverflow("rev number %r" % record.rev_number)

    raw = record.norad_raw or _encode_satnum(record.norad_id)
    if len(raw) != 5:
        raise FieldOverflow("catalog number field %r is not 5 columns" % raw)

    ndot_sign = "-" if record.ndot < 0.0 else " "
    ndot_digits = round(abs(record.ndot) * 1e8)
    if ndot_digits > 99999999:
        raise FieldOverflow("ndot %r does not fit the field" % record.ndot)

    line1 = "1 %5s%1s %-8s %02d%012.8f %s.%08d %8s %8s %1d %4d" % (
        raw,
        record.classification,
        record.intl_designator,
        record.epoch_year % 100,
        record.epoch_days,
        ndot_sign,
        ndot_digits,
        _format_packed(record.nddot),
        _format_packed(record.bstar),
        record.ephemeris_type,
        record.element_number,
    )
    line2 = "2 %5s %8.4f %8.4f %07d %8.4f %8.4f %11.8f%5d" % (
        raw,
        record.inclination_deg,
        record.raan_deg,
        round(record.eccentricity * 1e7),
        record.arg_perigee_deg,
        record.mean_anomaly_deg,
        record.mean_motion_revday,
        record.rev_number,
    )
    if len(line1) != 68 or len(line2) != 68:
        raise FieldOverflow("formatted record does not fit 69 columns")
    return line1 + str(checksum(line1)), line2 + str(checksum(line2))


def to_elements(record):
    """Convert a TleRecord to the internal ElementSet units.

    Mean motion and its derivatives go from rev/day to radians/minute,
    angles from degrees to radians; the epoch becomes a split julian
    date.
    """
    jd, fr = epoch_to_jd(record.epoch_year, record.epoch_days)
    no_kozai = record.mean_motion_revday / XPDOTP
    return ElementSet(
        no_kozai=no_kozai,
        ecco=record.eccentricity,
        inclo=record.inclination_deg * DEG2RAD,
        nodeo=record.raan_deg * DEG2RAD,
        argpo=record.arg_perigee_deg * DEG2RAD,
        mo=record.mean_anomaly_deg * DEG2RAD,
        bstar=record.bstar,
        ndot=record.ndot / (XPDOTP * 1440.0),
        nddot=record.nddot / (XPDOTP * 1440.0 * 1440.0),
        epoch_jd=jd,
        epoch_fr=fr,
    )


def record_from_elements(elements, template=None):
    """Write ElementSet values back into a copy of a template record.

    The inverse of to_elements for the seven fitted quantities; epoch
    and bookkeeping fields come from the element set and template.  The
    caller still quantizes through format_tle when printing.  Without a
    template a placeholder id 99999 is used.
    """
    if template is None:
        template = TleRecord(
            norad_id=99999, classification="U", intl_designator="00000A",
            epoch_year=2000, epoch_days=1.0, ndot=0.0, nddot=0.0, bstar=0.0,
            ephemeris_type=0, element_number=999, inclination_deg=0.0,
            raan_deg=0.0, eccentricity=0.0, arg_perigee_deg=0.0,
            mean_anomaly_deg=0.0, mean_motion_revday=10.0, rev_number=0,
        )
    jd = elements.epoch_jd + elements.epoch_fr
    # recover calendar year, then day-of-year from the year's own jd
    dt = datetime(2000, 1, 1, 12, tzinfo=timezone.utc) + timedelta(days=jd - 2451545.0)
    year_jd, year_fr = jday(dt.year, 1, 1, 0, 0, 0.0)
    epoch_days = jd - (year_jd + year_fr) + 1.0
    rad2deg = 180.0 / math.pi
    return template.with_updates(
        epoch_year=dt.year,
        epoch_days=epoch_days,
        inclination_deg=elements.inclo * rad2deg,
        raan_deg=(elements.nodeo * rad2deg) % 360.0,
        eccentricity=elements.ecco,
        arg_perigee_deg=(elements.argpo * rad2deg) % 360.0,
        mean_anomaly_deg=(elements.mo * rad2deg) % 360.0,
        mean_motion_revday=elements.no_kozai * XPDOTP,
        bstar=elements.bstar,
        ndot=elements.ndot * (XPDOTP * 1440.0),
        nddot=elements.nddot * (XPDOTP * 1440.0 * 1440.0),
    )


# -- time scales -------------------------------------------------------


def jday(year, mon, day, hr, minute, sec):
    """Gregorian calendar date to julian date, split (day, fraction)."""
    jd = (
        367.0 * year
        - 7.0 * (year + ((mon + 9.0) // 12.0)) * 0.25 // 1.0
        + 275.0 * mon / 9.0 // 1.0
        + day
        + 1721013.5
    )
    fr = (sec + minute * 60.0 + hr * 3600.0) / 86400.0
    return jd, fr


def days2mdhms(year, days):
    """Fractional day of year to month, day, hour, minute, second."""
    lmonth = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31]
    if year % 4 == 0 and (year % 100 != 0 or year % 400 == 0):
        lmonth[1] = 29
    dayofyr = int(days)
    mon = 1
    while mon < 12 and dayofyr > lmonth[mon - 1]:
        dayofyr -= lmonth[mon - 1]
        mon += 1
    day = dayofyr
    temp = (days - int(days)) * 24.0
    hr = int(temp)
    temp = (temp - hr) * 60.0
    minute = int(temp)
    sec = (temp - minute) * 60.0
    return mon, day, hr, minute, sec


def epoch_to_jd(epoch_year, epoch_days):
    """TLE epoch (four-digit year, fractional day) to split julian date."""
    mon, day, hr, minute, sec = days2mdhms(epoch_year, epoch_days)
    return jday(epoch_year, mon, day, hr, minute, sec)


def epoch_to_datetime(record):
    """TLE epoch as a timezone-aware UTC datetime, microsecond rounded."""
    base = datetime(record.epoch_year, 1, 1, tzinfo=timezone.utc)
    micros = round((record.epoch_days - 1.0) * 86400.0 * 1e6)
    return base + timedelta(microseconds=micros)


def datetime_to_jd(dt):
    """UTC datetime to split julian date."""
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc)
    sec = dt.second + dt.microsecond * 1e-6
    return jday(dt.year, dt.month, dt.day, dt.hour, dt.minute, sec)


def parse_iso_utc(text):
    """ISO-8601 timestamp to UTC datetime; a trailing Z is accepted."""
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)
