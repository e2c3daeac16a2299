"""Near-earth SGP4 initialization and propagation.

The math follows the standard SGP4 near-earth flow: Kozai mean motion
recovery, secular J2/J4 and drag rates at initialization, then secular
update, long-period periodics, a Newton solve of Kepler's equation, and
short-period periodics at propagation time.  Everything is written
against scalars that may be floats or Jets, so seeding the element set
with Jets yields exact forward-mode derivatives of the output state;
with plain floats the arithmetic is bit-for-bit the classic sequence.

Deep-space orbits (period of 225 minutes or longer) are out of scope
and rejected at initialization with a typed error.
"""

import math
from dataclasses import dataclass, replace

from .jets import Jet, atan2, cos, fabs, sin, sqrt, value_of

__all__ = [
    "PropagationError",
    "DeepSpaceUnsupported",
    "EccentricityOutOfRange",
    "MeanMotionNonPositive",
    "Decayed",
    "NegativeSemiLatus",
    "KeplerNonConvergence",
    "GravityConstants",
    "WGS72",
    "WGS84",
    "gravity_by_name",
    "ElementSet",
    "StateTeme",
    "InitializedModel",
    "initialize",
    "propagate",
    "propagate_batch_point",
    "gstime",
]

TWOPI = 2.0 * math.pi
X2O3 = 2.0 / 3.0

# Error codes shared with the vectorized batch kernel.
ERR_ECC_RANGE = 1
ERR_MEAN_MOTION = 2
ERR_SEMILATUS = 4
ERR_DECAYED = 6
ERR_KEPLER = 7


class PropagationError(Exception):
    """Base for initialization and propagation failures."""

    code = 0


class DeepSpaceUnsupported(PropagationError):
    """Orbital period is 225 minutes or longer; only near earth is handled."""

    code = 8


class EccentricityOutOfRange(PropagationError):
    code = ERR_ECC_RANGE


class MeanMotionNonPositive(PropagationError):
    code = ERR_MEAN_MOTION


class NegativeSemiLatus(PropagationError):
    code = ERR_SEMILATUS


class Decayed(PropagationError):
    code = ERR_DECAYED


class KeplerNonConvergence(PropagationError):
    code = ERR_KEPLER


ERROR_CLASSES = {
    ERR_ECC_RANGE: EccentricityOutOfRange,
    ERR_MEAN_MOTION: MeanMotionNonPositive,
    ERR_SEMILATUS: NegativeSemiLatus,
    ERR_DECAYED: Decayed,
    ERR_KEPLER: KeplerNonConvergence,
}


@dataclass(frozen=True)
class GravityConstants:
    """Earth gravity model constants in SGP4's canonical units."""

    name: str
    tumin: float
    mu: float
    radiusearthkm: float
    xke: float
    j2: float
    j3: float
    j4: float
    j3oj2: float


def _gravity(name, mu, radiusearthkm, j2, j3, j4):
    xke = 60.0 / math.sqrt(radiusearthkm * radiusearthkm * radiusearthkm / mu)
    return GravityConstants(
        name=name,
        tumin=1.0 / xke,
        mu=mu,
        radiusearthkm=radiusearthkm,
        xke=xke,
        j2=j2,
        j3=j3,
        j4=j4,
        j3oj2=j3 / j2,
    )


WGS72 = _gravity("wgs72", 398600.8, 6378.135, 0.001082616, -0.00000253881, -0.00000165597)
WGS84 = _gravity(
    "wgs84", 398600.5, 6378.137, 0.00108262998905, -0.00000253215306, -0.00000161098761
)


def gravity_by_name(name):
    try:
        return {"wgs72": WGS72, "wgs84": WGS84}[name.lower()]
    except KeyError:
        raise ValueError("unknown gravity model %r (wgs72 or wgs84)" % name) from None


@dataclass(frozen=True)
class ElementSet:
    """SGP4 mean elements in internal units (radians, radians/minute).

    no_kozai is the Kozai mean motion as published on element cards,
    converted to radians per minute.  ndot and nddot ride along for
    bookkeeping but do not influence the near-earth model.  The epoch
    is a split julian date.
    """

    no_kozai: object
    ecco: object
    inclo: object
    nodeo: object
    argpo: object
    mo: object
    bstar: object
    ndot: object = 0.0
    nddot: object = 0.0
    epoch_jd: float = 2451545.0
    epoch_fr: float = 0.0

    @property
    def epoch1950(self):
        return self.epoch_jd - 2433281.5 + self.epoch_fr

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class StateTeme:
    """Position (km) and velocity (km/s) in the TEME frame."""

    r: tuple
    v: tuple
    tsince: float

    frame = "TEME"

    def vector(self):
        """The state as a flat 6 list [x, y, z, vx, vy, vz] of values."""
        return [value_of(c) for c in (*self.r, *self.v)]


def gstime(jdut1):
    """Greenwich sidereal time, radians in [0, 2pi)."""
    tut1 = (jdut1 - 2451545.0) / 36525.0
    temp = (
        -6.2e-6 * tut1 * tut1 * tut1
        + 0.093104 * tut1 * tut1
        + (876600.0 * 3600 + 8640184.812866) * tut1
        + 67310.54841
    )
    temp = (temp * (math.pi / 180.0) / 240.0) % TWOPI
    if temp < 0.0:
        temp += TWOPI
    return temp


# Attribute order for the flattened per-model constant vector consumed
# by the vectorized batch kernel.  Float-only models precompute it.
KERNEL_FIELDS = (
    "no_unkozai", "ecco", "inclo", "mo", "argpo", "nodeo", "bstar",
    "ao", "mdot", "argpdot", "nodedot", "nodecf", "cc1", "cc4", "cc5",
    "t2cof", "t3cof", "t4cof", "t5cof", "isimp", "omgcof", "eta",
    "xmcof", "delmo", "sinmao", "d2", "d3", "d4", "con41", "x1mth2",
    "x7thm1", "xlcof", "aycof", "xke", "j2", "radiusearthkm",
)


@dataclass(frozen=True)
class InitializedModel:
    """Propagation constants derived from one element set.

    Immutable; fields may be Jets when the element set was seeded for
    differentiation.  kernel_consts is the flattened float vector for
    the batch kernel, or None when any field is a Jet.
    """

    gravity: GravityConstants
    elements: ElementSet
    epoch1950: float
    # element copies (possibly Jets)
    no_kozai: object
    ecco: object
    inclo: object
    nodeo: object
    argpo: object
    mo: object
    bstar: object
    # derived constants
    no_unkozai: object
    ao: object
    a: object
    alta: object
    altp: object
    isimp: int
    aycof: object
    con41: object
    cc1: object
    cc4: object
    cc5: object
    d2: object
    d3: object
    d4: object
    delmo: object
    eta: object
    argpdot: object
    omgcof: object
    sinmao: object
    t2cof: object
    t3cof: object
    t4cof: object
    t5cof: object
    x1mth2: object
    x7thm1: object
    mdot: object
    nodedot: object
    xlcof: object
    xmcof: object
    nodecf: object
    gsto: float
    kernel_consts: tuple = None

    @property
    def xke(self):
        return self.gravity.xke

    @property
    def j2(self):
        return self.gravity.j2

    @property
    def radiusearthkm(self):
        return self.gravity.radiusearthkm


def initialize(elements, gravity=WGS72, c1_scale=1.0):
    """Derive the propagation constants for one near-earth element set.

    Raises EccentricityOutOfRange, MeanMotionNonPositive, or
    DeepSpaceUnsupported.  Accepts Jet-valued elements, in which case
    every derived constant carries partials.  c1_scale multiplies the
    drag coefficient C1, and through it every term derived from C1;
    the default of exactly 1.0 leaves the arithmetic bit-identical.
    """
    xke = gravity.xke
    j2 = gravity.j2
    j3oj2 = gravity.j3oj2
    j4 = gravity.j4
    radiusearthkm = gravity.radiusearthkm

    ecco = elements.ecco
    inclo = elements.inclo
    no_kozai = elements.no_kozai
    bstar = elements.bstar
    argpo = elements.argpo
    mo = elements.mo
    nodeo = elements.nodeo
    epoch = elements.epoch1950

    if not 0.0 <= value_of(ecco) < 1.0:
        raise EccentricityOutOfRange(
            "mean eccentricity %r not within range 0.0 <= e < 1.0" % value_of(ecco)
        )
    if value_of(no_kozai) <= 0.0:
        raise MeanMotionNonPositive("mean motion %r is not positive" % value_of(no_kozai))

    temp4 = 1.5e-12

    # recover the un-Kozai mean motion
    eccsq = ecco * ecco
    omeosq = 1.0 - eccsq
    rteosq = sqrt(omeosq)
    cosio = cos(inclo)
    cosio2 = cosio * cosio
    ak = (xke / no_kozai) ** X2O3
    d1 = 0.75 * j2 * (3.0 * cosio2 - 1.0) / (rteosq * omeosq)
    del_ = d1 / (ak * ak)
    adel = ak * (1.0 - del_ * del_ - del_ * (1.0 / 3.0 + 134.0 * del_ * del_ / 81.0))
    del_ = d1 / (adel * adel)
    no_unkozai = no_kozai / (1.0 + del_)
    if value_of(no_unkozai) <= 0.0:
        raise MeanMotionNonPositive(
            "recovered mean motion %r is not positive" % value_of(no_unkozai)
        )
    if TWOPI / value_of(no_unkozai) >= 225.0:
        raise DeepSpaceUnsupported(
            "orbital period %.3f min is deep space; only near earth is supported"
            % (TWOPI / value_of(no_unkozai))
        )

    ao = (xke / no_unkozai) ** X2O3
    sinio = sin(inclo)
    po = ao * omeosq
    con42 = 1.0 - 5.0 * cosio2
    con41 = -con42 - cosio2 - cosio2
    posq = po * po
    rp = ao * (1.0 - ecco)
    gsto = gstime(epoch + 2433281.5)

    a = (no_unkozai * gravity.tumin) ** (-2.0 / 3.0)
    alta = a * (1.0 + ecco) - 1.0
    altp = a * (1.0 - ecco) - 1.0

    ss = 78.0 / radiusearthkm + 1.0
    qzms2ttemp = (120.0 - 78.0) / radiusearthkm
    qzms2t = qzms2ttemp * qzms2ttemp * qzms2ttemp * qzms2ttemp

    isimp = 0
    if value_of(rp) < 220.0 / radiusearthkm + 1.0:
        isimp = 1
    sfour = ss
    qzms24 = qzms2t
    perige = (rp - 1.0) * radiusearthkm

    # for perigees below 156 km the s and qoms2t constants change
    if value_of(perige) < 156.0:
        sfour = perige - 78.0
        if value_of(perige) < 98.0:
            sfour = 20.0
        qzms24temp = (120.0 - sfour) / radiusearthkm
        qzms24 = qzms24temp * qzms24temp * qzms24temp * qzms24temp
        sfour = sfour / radiusearthkm + 1.0

    pinvsq = 1.0 / posq

    tsi = 1.0 / (ao - sfour)
    eta = ao * ecco * tsi
    etasq = eta * eta
    eeta = ecco * eta
    psisq = fabs(1.0 - etasq)
    coef = qzms24 * tsi ** 4.0
    coef1 = coef / psisq ** 3.5
    cc2 = coef1 * no_unkozai * (
        ao * (1.0 + 1.5 * etasq + eeta * (4.0 + etasq))
        + 0.375 * j2 * tsi / psisq * con41 * (8.0 + 3.0 * etasq * (8.0 + etasq))
    )
    cc1 = c1_scale * (bstar * cc2)
    cc3 = 0.0
    if value_of(ecco) > 1.0e-4:
        cc3 = -2.0 * coef * tsi * j3oj2 * no_unkozai * sinio / ecco
    x1mth2 = 1.0 - cosio2
    cc4 = 2.0 * no_unkozai * coef1 * ao * omeosq * (
        eta * (2.0 + 0.5 * etasq)
        + ecco * (0.5 + 2.0 * etasq)
        - j2 * tsi / (ao * psisq) * (
            -3.0 * con41 * (1.0 - 2.0 * eeta + etasq * (1.5 - 0.5 * eeta))
            + 0.75 * x1mth2 * (2.0 * etasq - eeta * (1.0 + etasq)) * cos(2.0 * argpo)
        )
    )
    cc5 = 2.0 * coef1 * ao * omeosq * (1.0 + 2.75 * (etasq + eeta) + eeta * etasq)
    cosio4 = cosio2 * cosio2
    temp1 = 1.5 * j2 * pinvsq * no_unkozai
    temp2 = 0.5 * temp1 * j2 * pinvsq
    temp3 = -0.46875 * j4 * pinvsq * pinvsq * no_unkozai
    mdot = no_unkozai + 0.5 * temp1 * rteosq * con41 + 0.0625 * temp2 * rteosq * (
        13.0 - 78.0 * cosio2 + 137.0 * cosio4
    )
    argpdot = (
        -0.5 * temp1 * con42
        + 0.0625 * temp2 * (7.0 - 114.0 * cosio2 + 395.0 * cosio4)
        + temp3 * (3.0 - 36.0 * cosio2 + 49.0 * cosio4)
    )
    xhdot1 = -temp1 * cosio
    nodedot = xhdot1 + (
        0.5 * temp2 * (4.0 - 19.0 * cosio2) + 2.0 * temp3 * (3.0 - 7.0 * cosio2)
    ) * cosio
    omgcof = bstar * cc3 * cos(argpo)
    xmcof = 0.0
    if value_of(ecco) > 1.0e-4:
        xmcof = -X2O3 * coef * bstar / eeta
    nodecf = 3.5 * omeosq * xhdot1 * cc1
    t2cof = 1.5 * cc1
    # guard the divide for inclinations at 180 degrees
    if value_of(fabs(cosio + 1.0)) > 1.5e-12:
        xlcof = -0.25 * j3oj2 * sinio * (3.0 + 5.0 * cosio) / (1.0 + cosio)
    else:
        xlcof = -0.25 * j3oj2 * sinio * (3.0 + 5.0 * cosio) / temp4
    aycof = -0.5 * j3oj2 * sinio
    delmotemp = 1.0 + eta * cos(mo)
    delmo = delmotemp * delmotemp * delmotemp
    sinmao = sin(mo)
    x7thm1 = 7.0 * cosio2 - 1.0

    d2 = 0.0
    d3 = 0.0
    d4 = 0.0
    t3cof = 0.0
    t4cof = 0.0
    t5cof = 0.0
    if isimp != 1:
        cc1sq = cc1 * cc1
        d2 = 4.0 * ao * tsi * cc1sq
        temp = d2 * tsi * cc1 / 3.0
        d3 = (17.0 * ao + sfour) * temp
        d4 = 0.5 * temp * ao * tsi * (221.0 * ao + 31.0 * sfour) * cc1
        t3cof = d2 + 2.0 * cc1sq
        t4cof = 0.25 * (3.0 * d3 + cc1 * (12.0 * d2 + 10.0 * cc1sq))
        t5cof = 0.2 * (
            3.0 * d4 + 12.0 * cc1 * d3 + 6.0 * d2 * d2 + 15.0 * cc1sq * (2.0 * d2 + cc1sq)
        )

    model = InitializedModel(
        gravity=gravity,
        elements=elements,
        epoch1950=epoch,
        no_kozai=no_kozai,
        ecco=ecco,
        inclo=inclo,
        nodeo=nodeo,
        argpo=argpo,
        mo=mo,
        bstar=bstar,
        no_unkozai=no_unkozai,
        ao=ao,
        a=a,
        alta=alta,
        altp=altp,
        isimp=isimp,
        aycof=aycof,
        con41=con41,
        cc1=cc1,
        cc4=cc4,
        cc5=cc5,
        d2=d2,
        d3=d3,
        d4=d4,
        delmo=delmo,
        eta=eta,
        argpdot=argpdot,
        omgcof=omgcof,
        sinmao=sinmao,
        t2cof=t2cof,
        t3cof=t3cof,
        t4cof=t4cof,
        t5cof=t5cof,
        x1mth2=x1mth2,
        x7thm1=x7thm1,
        mdot=mdot,
        nodedot=nodedot,
        xlcof=xlcof,
        xmcof=xmcof,
        nodecf=nodecf,
        gsto=gsto,
        kernel_consts=None,
    )
    consts = _kernel_consts(model)
    object.__setattr__(model, "kernel_consts", consts)
    return model


def _kernel_consts(model):
    values = []
    for name in KERNEL_FIELDS:
        v = getattr(model, name)
        if isinstance(v, Jet):
            return None
        values.append(float(v))
    return tuple(values)


def propagate(model, tsince):
    """Propagate to tsince minutes from epoch; returns a StateTeme.

    Raises EccentricityOutOfRange, NegativeSemiLatus, Decayed, or
    KeplerNonConvergence.  tsince may be a Jet to get time derivatives.
    """
    temp4 = 1.5e-12
    vkmpersec = model.radiusearthkm * model.xke / 60.0
    t = tsince

    # secular gravity and atmospheric drag
    xmdf = model.mo + model.mdot * t
    argpdf = model.argpo + model.argpdot * t
    nodedf = model.nodeo + model.nodedot * t
    argpm = argpdf
    mm = xmdf
    t2 = t * t
    nodem = nodedf + model.nodecf * t2
    tempa = 1.0 - model.cc1 * t
    tempe = model.bstar * model.cc4 * t
    templ = model.t2cof * t2

    if model.isimp != 1:
        delomg = model.omgcof * t
        delmtemp = 1.0 + model.eta * cos(xmdf)
        delm = model.xmcof * (delmtemp * delmtemp * delmtemp - model.delmo)
        temp = delomg + delm
        mm = xmdf + temp
        argpm = argpdf - temp
        t3 = t2 * t
        t4 = t3 * t
        tempa = tempa - model.d2 * t2 - model.d3 * t3 - model.d4 * t4
        tempe = tempe + model.bstar * model.cc5 * (sin(mm) - model.sinmao)
        templ = templ + model.t3cof * t3 + t4 * (model.t4cof + t * model.t5cof)

    nm = model.no_unkozai
    em = model.ecco
    inclm = model.inclo

    if value_of(nm) <= 0.0:
        raise MeanMotionNonPositive("mean motion %r is less than zero" % value_of(nm))

    am = model.ao * tempa * tempa
    nm = model.xke / (am * sqrt(am))
    em = em - tempe

    if value_of(em) >= 1.0 or value_of(em) < -0.001:
        raise EccentricityOutOfRange(
            "mean eccentricity %r not within range 0.0 <= e < 1.0" % value_of(em)
        )
    if value_of(em) < 1.0e-6:
        em = em * 0.0 + 1.0e-6
    mm = mm + model.no_unkozai * templ
    xlm = mm + argpm + nodem

    nodem = nodem % TWOPI if value_of(nodem) >= 0.0 else -((-nodem) % TWOPI)
    argpm = argpm % TWOPI
    xlm = xlm % TWOPI
    mm = (xlm - argpm - nodem) % TWOPI

    sinim = sin(inclm)
    cosim = cos(inclm)

    ep = em
    xincp = inclm
    argpp = argpm
    nodep = nodem
    mp = mm
    sinip = sinim
    cosip = cosim

    # long period periodics
    axnl = ep * cos(argpp)
    temp = 1.0 / (am * (1.0 - ep * ep))
    aynl = ep * sin(argpp) + temp * model.aycof
    xl = mp + argpp + nodep + temp * model.xlcof * axnl

    # solve Kepler's equation
    u = (xl - nodep) % TWOPI
    eo1 = u
    tem5 = 9999.9
    ktr = 1
    sineo1 = 0.0
    coseo1 = 1.0
    while value_of(fabs(tem5)) >= 1.0e-12 and ktr <= 10:
        sineo1 = sin(eo1)
        coseo1 = cos(eo1)
        tem5 = 1.0 - coseo1 * axnl - sineo1 * aynl
        tem5 = (u - aynl * coseo1 + axnl * sineo1 - eo1) / tem5
        if value_of(fabs(tem5)) >= 0.95:
            tem5 = 0.95 if value_of(tem5) > 0.0 else -0.95
        eo1 = eo1 + tem5
        ktr = ktr + 1
    if value_of(fabs(tem5)) >= 1.0e-12:
        raise KeplerNonConvergence(
            "kepler iteration still moving %r after 10 steps" % value_of(tem5)
        )

    # short period preliminary quantities
    ecose = axnl * coseo1 + aynl * sineo1
    esine = axnl * sineo1 - aynl * coseo1
    el2 = axnl * axnl + aynl * aynl
    pl = am * (1.0 - el2)
    if value_of(pl) < 0.0:
        raise NegativeSemiLatus("semilatus rectum %r is less than zero" % value_of(pl))

    rl = am * (1.0 - ecose)
    rdotl = sqrt(am) * esine / rl
    rvdotl = sqrt(pl) / rl
    betal = sqrt(1.0 - el2)
    temp = esine / (1.0 + betal)
    sinu = am / rl * (sineo1 - aynl - axnl * temp)
    cosu = am / rl * (coseo1 - axnl + aynl * temp)
    su = atan2(sinu, cosu)
    sin2u = (cosu + cosu) * sinu
    cos2u = 1.0 - 2.0 * sinu * sinu
    temp = 1.0 / pl
    temp1 = 0.5 * model.j2 * temp
    temp2 = temp1 * temp

    mrt = rl * (1.0 - 1.5 * temp2 * betal * model.con41) + \
        0.5 * temp1 * model.x1mth2 * cos2u
    su = su - 0.25 * temp2 * model.x7thm1 * sin2u
    xnode = nodep + 1.5 * temp2 * cosip * sin2u
    xinc = xincp + 1.5 * temp2 * cosip * sinip * cos2u
    mvt = rdotl - nm * temp1 * model.x1mth2 * sin2u / model.xke
    rvdot = rvdotl + nm * temp1 * (model.x1mth2 * cos2u + 1.5 * model.con41) / model.xke

    # orientation vectors
    sinsu = sin(su)
    cossu = cos(su)
    snod = sin(xnode)
    cnod = cos(xnode)
    sini = sin(xinc)
    cosi = cos(xinc)
    xmx = -snod * cosi
    xmy = cnod * cosi
    ux = xmx * sinsu + cnod * cossu
    uy = xmy * sinsu + snod * cossu
    uz = sini * sinsu
    vx = xmx * cossu - cnod * sinsu
    vy = xmy * cossu - snod * sinsu
    vz = sini * cossu

    if value_of(mrt) < 1.0:
        raise Decayed(
            "mrt %r is less than 1.0 indicating the satellite has decayed"
            % value_of(mrt)
        )

    _mr = mrt * model.radiusearthkm
    r = (_mr * ux, _mr * uy, _mr * uz)
    v = (
        (mvt * ux + rvdot * vx) * vkmpersec,
        (mvt * uy + rvdot * vy) * vkmpersec,
        (mvt * uz + rvdot * vz) * vkmpersec,
    )
    return StateTeme(r=r, v=v, tsince=value_of(tsince))


def propagate_batch_point(model, tsince):
    """Single-point propagation, Jet aware; convenience spelling used by
    the gradient helpers when seeding one item of a batch."""
    return propagate(model, tsince)
