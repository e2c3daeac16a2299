"""Batch propagation over many element sets and times.

The heavy path is a numpy kernel that evaluates the same arithmetic as
propagator.propagate lane by lane, in the same operation order, so its
outputs are bit-for-bit identical to calling the scalar code in a loop.
That takes some care in three places: library functions whose numpy
ufuncs do not round identically to libm (pow is avoided entirely, atan2
falls back to a scalar loop), the Kepler iteration (lanes freeze exactly
when the scalar while loop would exit), and error handling (lanes record
the first error code the scalar code would have raised and keep it).

On top of the kernel sits optional process parallelism: items are split
into deterministic contiguous chunks handed to forked workers, so the
result is independent of scheduling.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .propagator import (
    ERR_DECAYED,
    ERR_ECC_RANGE,
    ERR_KEPLER,
    ERR_MEAN_MOTION,
    ERR_SEMILATUS,
    ERROR_CLASSES,
    KERNEL_FIELDS,
    PropagationError,
    StateTeme,
    TWOPI,
    propagate,
)

__all__ = ["BatchJob", "BatchResult", "run_batch", "run_sequential", "bench"]

_F = {name: i for i, name in enumerate(KERNEL_FIELDS)}
_BLOCK = 16384


def default_workers():
    """Worker count from DSGP4KIT_WORKERS, else 1."""
    try:
        return max(1, int(os.environ.get("DSGP4KIT_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass
class BatchJob:
    """A set of initialized models with evaluation times.

    Either one shared time grid for every model (grid layout) or one
    time list per model (pairs layout, possibly ragged).
    """

    models: list
    times_per_model: list
    layout: str

    @classmethod
    def grid(cls, models, times):
        times = [float(t) for t in times]
        return cls(models=list(models), times_per_model=times, layout="grid")

    @classmethod
    def pairs(cls, models, times_per_model):
        models = list(models)
        if len(times_per_model) != len(models):
            raise ValueError("times_per_model must have one entry per model")
        return cls(
            models=models,
            times_per_model=[[float(t) for t in ts] for ts in times_per_model],
            layout="pairs",
        )

    def counts(self):
        if self.layout == "grid":
            return [len(self.times_per_model)] * len(self.models)
        return [len(ts) for ts in self.times_per_model]

    def flatten(self):
        """(model_rows, model_index, tsince) flat arrays for the kernel."""
        rows = np.empty((len(self.models), len(KERNEL_FIELDS)))
        for i, m in enumerate(self.models):
            if m.kernel_consts is None:
                raise ValueError(
                    "model %d carries Jet values; the batch kernel is float only" % i
                )
            rows[i] = m.kernel_consts
        counts = self.counts()
        model_index = np.repeat(
            np.arange(len(self.models), dtype=np.uint32), counts
        )
        if self.layout == "grid":
            t = np.tile(np.asarray(self.times_per_model), len(self.models))
        else:
            t = np.asarray(
                [tt for ts in self.times_per_model for tt in ts], dtype=float
            )
        return rows, model_index, t


@dataclass
class BatchResult:
    """Flat arrays of propagated states plus an error code per item.

    r is (N, 3) km, v is (N, 3) km/s, error_codes is (N,) int8 with 0
    for success; offsets[i] is the first flat index of model i.
    """

    job: BatchJob
    r: np.ndarray
    v: np.ndarray
    error_codes: np.ndarray
    offsets: np.ndarray

    @property
    def error_count(self):
        return int(np.count_nonzero(self.error_codes))

    def _flat(self, i, j):
        return self.offsets[i] + j

    def state(self, i, j):
        """StateTeme for model i, time slot j, or the PropagationError."""
        k = self._flat(i, j)
        code = int(self.error_codes[k])
        tsince = self.tsince(i, j)
        if code:
            return ERROR_CLASSES[code]("model %d at t=%r min (code %d)" % (i, tsince, code))
        return StateTeme(r=tuple(self.r[k]), v=tuple(self.v[k]), tsince=tsince)

    def tsince(self, i, j):
        if self.job.layout == "grid":
            return self.job.times_per_model[j]
        return self.job.times_per_model[i][j]


def _kernel(rows, model_index, t, out_r, out_v, out_err):
    """Vectorized near-earth SGP4, one lane per item, writing into out_*."""
    c = rows[model_index]

    def col(name):
        return c[:, _F[name]]

    no_unkozai = col("no_unkozai")
    ecco = col("ecco")
    inclo = col("inclo")
    mo = col("mo")
    argpo = col("argpo")
    nodeo = col("nodeo")
    bstar = col("bstar")
    ao = col("ao")
    mdot = col("mdot")
    argpdot = col("argpdot")
    nodedot = col("nodedot")
    nodecf = col("nodecf")
    cc1 = col("cc1")
    cc4 = col("cc4")
    cc5 = col("cc5")
    t2cof = col("t2cof")
    t3cof = col("t3cof")
    t4cof = col("t4cof")
    t5cof = col("t5cof")
    isimp = col("isimp")
    omgcof = col("omgcof")
    eta = col("eta")
    xmcof = col("xmcof")
    delmo = col("delmo")
    sinmao = col("sinmao")
    d2 = col("d2")
    d3 = col("d3")
    d4 = col("d4")
    con41 = col("con41")
    x1mth2 = col("x1mth2")
    x7thm1 = col("x7thm1")
    xlcof = col("xlcof")
    aycof = col("aycof")
    xke = col("xke")
    j2 = col("j2")
    radiusearthkm = col("radiusearthkm")

    n = t.shape[0]
    err = out_err
    err[:] = 0
    vkmpersec = radiusearthkm * xke / 60.0

    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        xmdf = mo + mdot * t
        argpdf = argpo + argpdot * t
        nodedf = nodeo + nodedot * t
        t2 = t * t
        nodem = nodedf + nodecf * t2
        tempa = 1.0 - cc1 * t
        tempe = bstar * cc4 * t
        templ = t2cof * t2

        # the low-perigee branch skips the higher-order drag terms; both
        # forms are evaluated and selected per lane
        delomg = omgcof * t
        delmtemp = 1.0 + eta * np.cos(xmdf)
        delm = xmcof * (delmtemp * delmtemp * delmtemp - delmo)
        temp = delomg + delm
        mm_full = xmdf + temp
        argpm_full = argpdf - temp
        t3 = t2 * t
        t4 = t3 * t
        tempa_full = tempa - d2 * t2 - d3 * t3 - d4 * t4
        tempe_full = tempe + bstar * cc5 * (np.sin(mm_full) - sinmao)
        templ_full = templ + t3cof * t3 + t4 * (t4cof + t * t5cof)
        simple = isimp == 1.0
        mm = np.where(simple, xmdf, mm_full)
        argpm = np.where(simple, argpdf, argpm_full)
        tempa = np.where(simple, tempa, tempa_full)
        tempe = np.where(simple, tempe, tempe_full)
        templ = np.where(simple, templ, templ_full)

        nm = no_unkozai
        em = ecco

        err[(nm <= 0.0) & (err == 0)] = ERR_MEAN_MOTION

        am = ao * tempa * tempa
        nm = xke / (am * np.sqrt(am))
        em = em - tempe

        err[((em >= 1.0) | (em < -0.001)) & (err == 0)] = ERR_ECC_RANGE
        em = np.where(em < 1.0e-6, 1.0e-6, em)
        mm = mm + no_unkozai * templ
        xlm = mm + argpm + nodem

        nodem = np.where(nodem >= 0.0, np.mod(nodem, TWOPI), -np.mod(-nodem, TWOPI))
        argpm = np.mod(argpm, TWOPI)
        xlm = np.mod(xlm, TWOPI)
        mm = np.mod(xlm - argpm - nodem, TWOPI)

        sinim = np.sin(inclo)
        cosim = np.cos(inclo)

        ep = em
        xincp = inclo
        argpp = argpm
        nodep = nodem
        mp = mm

        # long period periodics
        axnl = ep * np.cos(argpp)
        temp = 1.0 / (am * (1.0 - ep * ep))
        aynl = ep * np.sin(argpp) + temp * aycof
        xl = mp + argpp + nodep + temp * xlcof * axnl

        # Kepler: same Newton iteration as the scalar loop, each lane
        # freezing at the step where the scalar while would exit
        u = np.mod(xl - nodep, TWOPI)
        eo1 = u.copy()
        tem5 = np.full(n, 9999.9)
        sineo1 = np.zeros(n)
        coseo1 = np.ones(n)
        idx = np.arange(n)
        ktr = 1
        while ktr <= 10 and idx.size:
            e_act = eo1[idx]
            s = np.sin(e_act)
            co = np.cos(e_act)
            den = 1.0 - co * axnl[idx] - s * aynl[idx]
            step = (u[idx] - aynl[idx] * co + axnl[idx] * s - e_act) / den
            big = np.abs(step) >= 0.95
            if big.any():
                step = np.where(big, np.where(step > 0.0, 0.95, -0.95), step)
            sineo1[idx] = s
            coseo1[idx] = co
            eo1[idx] = e_act + step
            tem5[idx] = step
            idx = idx[np.abs(step) >= 1.0e-12]
            ktr += 1
        err[(np.abs(tem5) >= 1.0e-12) & (err == 0)] = ERR_KEPLER

        # short period preliminary quantities
        ecose = axnl * coseo1 + aynl * sineo1
        esine = axnl * sineo1 - aynl * coseo1
        el2 = axnl * axnl + aynl * aynl
        pl = am * (1.0 - el2)
        err[(pl < 0.0) & (err == 0)] = ERR_SEMILATUS
        pl_safe = np.where(pl < 0.0, 1.0, pl)

        rl = am * (1.0 - ecose)
        rdotl = np.sqrt(am) * esine / rl
        rvdotl = np.sqrt(pl_safe) / rl
        betal = np.sqrt(1.0 - el2)
        temp = esine / (1.0 + betal)
        sinu = am / rl * (sineo1 - aynl - axnl * temp)
        cosu = am / rl * (coseo1 - axnl + aynl * temp)
        # np.arctan2 does not round like libm atan2 everywhere, so this
        # one call stays scalar
        su = np.fromiter(
            (math.atan2(a, b) for a, b in zip(sinu.tolist(), cosu.tolist())),
            dtype=np.float64,
            count=n,
        )
        sin2u = (cosu + cosu) * sinu
        cos2u = 1.0 - 2.0 * sinu * sinu
        temp = 1.0 / pl_safe
        temp1 = 0.5 * j2 * temp
        temp2 = temp1 * temp

        mrt = rl * (1.0 - 1.5 * temp2 * betal * con41) + 0.5 * temp1 * x1mth2 * cos2u
        su = su - 0.25 * temp2 * x7thm1 * sin2u
        xnode = nodep + 1.5 * temp2 * cosim * sin2u
        xinc = xincp + 1.5 * temp2 * cosim * sinim * cos2u
        mvt = rdotl - nm * temp1 * x1mth2 * sin2u / xke
        rvdot = rvdotl + nm * temp1 * (x1mth2 * cos2u + 1.5 * con41) / xke

        sinsu = np.sin(su)
        cossu = np.cos(su)
        snod = np.sin(xnode)
        cnod = np.cos(xnode)
        sini = np.sin(xinc)
        cosi = np.cos(xinc)
        xmx = -snod * cosi
        xmy = cnod * cosi
        ux = xmx * sinsu + cnod * cossu
        uy = xmy * sinsu + snod * cossu
        uz = sini * sinsu
        vx = xmx * cossu - cnod * sinsu
        vy = xmy * cossu - snod * sinsu
        vz = sini * cossu

        err[(mrt < 1.0) & (err == 0)] = ERR_DECAYED

        _mr = mrt * radiusearthkm
        out_r[:, 0] = _mr * ux
        out_r[:, 1] = _mr * uy
        out_r[:, 2] = _mr * uz
        out_v[:, 0] = (mvt * ux + rvdot * vx) * vkmpersec
        out_v[:, 1] = (mvt * uy + rvdot * vy) * vkmpersec
        out_v[:, 2] = (mvt * uz + rvdot * vz) * vkmpersec


def _run_block(rows, model_index, t):
    n = t.shape[0]
    out_r = np.empty((n, 3))
    out_v = np.empty((n, 3))
    out_err = np.empty(n, dtype=np.int8)
    for a in range(0, n, _BLOCK):
        b = min(a + _BLOCK, n)
        _kernel(rows, model_index[a:b], t[a:b], out_r[a:b], out_v[a:b], out_err[a:b])
    return out_r, out_v, out_err


def _offsets(counts):
    off = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=off[1:])
    return off


def run_batch(job, workers=None):
    """Propagate every (model, time) item of the job.

    workers > 1 splits the items into equal contiguous chunks handled
    by forked worker processes; the assembled result is identical to
    workers=1, which is identical lane-for-lane to the scalar code.
    """
    if workers is None:
        workers = default_workers()
    rows, model_index, t = job.flatten()
    n = t.shape[0]
    offsets = _offsets(job.counts())
    if n == 0:
        return BatchResult(
            job=job,
            r=np.empty((0, 3)),
            v=np.empty((0, 3)),
            error_codes=np.empty(0, dtype=np.int8),
            offsets=offsets,
        )
    if workers <= 1 or n < 2048:
        out_r, out_v, out_err = _run_block(rows, model_index, t)
    else:
        bounds = [n * i // workers for i in range(workers + 1)]
        chunks = [
            (rows, model_index[a:b], t[a:b])
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        import multiprocessing

        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            parts = list(pool.map(_run_block_star, chunks))
        out_r = np.concatenate([p[0] for p in parts])
        out_v = np.concatenate([p[1] for p in parts])
        out_err = np.concatenate([p[2] for p in parts])
    return BatchResult(job=job, r=out_r, v=out_v, error_codes=out_err, offsets=offsets)


def _run_block_star(args):
    return _run_block(*args)


def run_sequential(job):
    """The same job through the scalar propagator, one call per item.

    The reference for bitwise comparison and the baseline for speedups.
    """
    counts = job.counts()
    offsets = _offsets(counts)
    n = int(offsets[-1])
    out_r = np.full((n, 3), np.nan)
    out_v = np.full((n, 3), np.nan)
    out_err = np.zeros(n, dtype=np.int8)
    k = 0
    for i, model in enumerate(job.models):
        times = (
            job.times_per_model if job.layout == "grid" else job.times_per_model[i]
        )
        for tt in times:
            try:
                st = propagate(model, tt)
                out_r[k] = st.r
                out_v[k] = st.v
            except PropagationError as e:
                out_err[k] = e.code
            k += 1
    return BatchResult(job=job, r=out_r, v=out_v, error_codes=out_err, offsets=offsets)


def bench(sizes, workers=1, repeats=3, make_job=None):
    """Time the batch path over a ladder of item counts.

    Returns one row per size: dict with the item count, job shape,
    median wall seconds, and per-item microseconds.  Jobs come from
    make_job(size) or a default grid over a synthetic constellation.
    """
    import time

    from .data_io import bench_models

    rows = []
    for size in sizes:
        if make_job is not None:
            job = make_job(size)
        else:
            n_models = min(1000, size)
            n_times = max(1, size // n_models)
            models = bench_models(n_models)
            step = 4320.0 / n_times
            job = BatchJob.grid(models, [i * step for i in range(n_times)])
        laps = []
        result = None
        for _ in range(repeats):
            t0 = time.perf_counter()
            result = run_batch(job, workers=workers)
            laps.append(time.perf_counter() - t0)
        wall = min(laps)
        n_items = int(result.error_codes.shape[0])
        rows.append(
            {
                "size": n_items,
                "n_models": len(job.models),
                "n_times": n_items // max(1, len(job.models)),
                "workers": workers,
                "wall_s": wall,
                "per_item_us": wall / n_items * 1e6,
                "errors": result.error_count,
            }
        )
    return rows
