"""Command line front end.

One executable, one subcommand per task: propagate, jacobian,
covariance, fit, state2tle, dataset, train, evaluate, bench.  Exit
codes are fixed for scripting: 0 success, 2 finished with per-item
errors, 3 did not converge (best result still printed), 64 usage,
65 unreadable or unparsable input.

Floats are written with repr, which round-trips exactly, so output is
byte-reproducible given the same inputs and seed.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .batch import BatchJob, default_workers, run_batch, ERROR_CLASSES, bench
from .covariance import CovarianceError, load_covariance, propagate_covariance
from .data_io import (DataError, build_sampleset, load_sampleset,
                      load_tle_file, save_ephemeris_csv, save_sampleset,
                      synth_oracle)
from .gradients import FreeParamSet, jacobian
from .ml_hybrid import (DivergedLoss, TrainConfig, evaluate, load_checkpoint,
                        make_hybrid, make_output_only, save_checkpoint,
                        save_history, train)
from .orbit_determination import (FitConfig, FitState, NonConvergence,
                                  OdError, Observation, fit_tle,
                                  initial_guess_from_tles,
                                  pseudo_observations, state_to_tle)
from .propagator import (PropagationError, WGS72, WGS84, initialize,
                         propagate)
from .tle import (TleError, datetime_to_jd, format_tle, parse_iso_utc,
                  to_elements)

__all__ = ["main"]

EXIT_OK = 0
EXIT_PARTIAL = 2
EXIT_NO_CONVERGENCE = 3
EXIT_USAGE = 64
EXIT_DATA = 65

_GRAVITIES = {"wgs72": WGS72, "wgs84": WGS84}
_STATE_COLS = ("x_km", "y_km", "z_km", "vx_kms", "vy_kms", "vz_kms")


class _Parser(argparse.ArgumentParser):
    """argparse with the usage exit code this tool promises."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def _floats_arg(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("not a comma-separated float list: %r" % text)


def _ints_arg(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("not a comma-separated int list: %r" % text)


def _epoch_arg(text):
    try:
        return datetime_to_jd(parse_iso_utc(text))
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _out_stream(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _write_rows(path, header, rows):
    stream, close = _out_stream(path)
    try:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if close:
            stream.close()


def _fmt(value):
    return repr(float(value))


# ---------------------------------------------------------------- propagate

def _cmd_propagate(args):
    records = load_tle_file(args.tle)
    gravity = _GRAVITIES[args.grav]
    times = args.minutes

    models = []
    kept = []
    failed = []
    for rec in records:
        try:
            models.append(initialize(to_elements(rec), gravity=gravity))
            kept.append(rec)
        except PropagationError as e:
            failed.append((rec, e))

    rows = []
    n_bad = 0
    if models:
        result = run_batch(BatchJob.grid(models, times), workers=args.workers)
        for i, rec in enumerate(kept):
            base = result.offsets[i]
            for j, t in enumerate(times):
                code = int(result.error_codes[base + j])
                if code == 0:
                    rows.append([rec.norad_id, _fmt(t)]
                                + [_fmt(v) for v in result.r[base + j]]
                                + [_fmt(v) for v in result.v[base + j]]
                                + [""])
                else:
                    n_bad += 1
                    rows.append([rec.norad_id, _fmt(t)] + [""] * 6
                                + [ERROR_CLASSES[code].__name__])
    for rec, e in failed:
        for t in times:
            n_bad += 1
            rows.append([rec.norad_id, _fmt(t)] + [""] * 6
                        + ["%s: %s" % (type(e).__name__, e)])

    rows.sort(key=lambda r: (r[0], float(r[1])))
    _write_rows(args.output, ("norad_id", "tsince_min") + _STATE_COLS + ("error",),
                rows)
    return EXIT_PARTIAL if n_bad else EXIT_OK


# ----------------------------------------------------------------- jacobian

def _cmd_jacobian(args):
    records = load_tle_file(args.tle)
    gravity = _GRAVITIES[args.grav]
    params = args.params
    header = ["norad_id", "tsince_min"]
    for comp in _STATE_COLS:
        for name in params:
            header.append("d%s_d%s" % (comp, name))
    header.append("error")

    rows = []
    n_bad = 0
    for rec in records:
        els = to_elements(rec)
        for t in args.minutes:
            try:
                J = jacobian(els, params=params, tsince=t, gravity=gravity)
            except PropagationError as e:
                n_bad += 1
                rows.append([rec.norad_id, _fmt(t)]
                            + [""] * (6 * len(params))
                            + ["%s: %s" % (type(e).__name__, e)])
                continue
            rows.append([rec.norad_id, _fmt(t)]
                        + [_fmt(v) for v in np.asarray(J.matrix).ravel()]
                        + [""])
    _write_rows(args.output, header, rows)
    return EXIT_PARTIAL if n_bad else EXIT_OK


# --------------------------------------------------------------- covariance

def _cmd_covariance(args):
    records = load_tle_file(args.tle)
    gravity = _GRAVITIES[args.grav]
    P0 = load_covariance(args.cov)

    results = []
    n_bad = 0
    for rec in records:
        els = to_elements(rec)
        for t in args.minutes:
            entry = {"norad_id": rec.norad_id, "tsince_min": t}
            try:
                c = propagate_covariance(P0, els, t, gravity=gravity)
                entry.update(c.to_json_dict())
            except (PropagationError, CovarianceError) as e:
                n_bad += 1
                entry["error"] = "%s: %s" % (type(e).__name__, e)
            results.append(entry)

    stream, close = _out_stream(args.output)
    try:
        json.dump({"results": results}, stream, indent=1)
        stream.write("\n")
    finally:
        if close:
            stream.close()
    return EXIT_PARTIAL if n_bad else EXIT_OK


# ---------------------------------------------------------------------- fit

def _load_observations_csv(path):
    obs = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("%s: empty observations file" % path)
        header = [h.strip() for h in header]
        expect = ["epoch_iso"] + list(_STATE_COLS)
        if header[:7] != expect:
            raise DataError("%s: header must start with %s"
                            % (path, ",".join(expect)))
        has_weight = len(header) > 7 and header[7] == "weight"
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                jd, fr = datetime_to_jd(parse_iso_utc(row[0]))
                state = tuple(float(v) for v in row[1:7])
                weight = float(row[7]) if has_weight and len(row) > 7 else 1.0
            except (ValueError, IndexError) as e:
                raise DataError("%s:%d: %s" % (path, lineno, e))
            obs.append(Observation(state, jd, fr, weight))
    if not obs:
        raise DataError("%s: no observations" % path)
    return obs


def _best_effort(call, *args, **kwargs):
    """A guess that ran out of Newton iterations is still a guess."""
    try:
        return call(*args, **kwargs)
    except NonConvergence as e:
        if e.best is None:
            raise
        return e.best


def _guess_from_observations(obs, t_jd, t_fr, gravity):
    """Nearest observation, inverted to elements, carried to the target."""
    nearest = min(obs, key=lambda o: abs((o.epoch_jd - t_jd) + (o.epoch_fr - t_fr)))
    fs = _best_effort(state_to_tle, nearest.state, nearest.epoch_jd,
                      nearest.epoch_fr, gravity=gravity)
    dt_min = ((t_jd - nearest.epoch_jd) + (t_fr - nearest.epoch_fr)) * 1440.0
    st = propagate(initialize(fs.elements, gravity=gravity), dt_min)
    return _best_effort(state_to_tle, st, t_jd, t_fr, gravity=gravity)


def _cmd_fit(args):
    gravity = _GRAVITIES[args.grav]
    t_jd, t_fr = args.target_epoch
    if args.obs.endswith(".csv"):
        obs = _load_observations_csv(args.obs)
        guess = _guess_from_observations(obs, t_jd, t_fr, gravity)
    else:
        records = load_tle_file(args.obs)
        obs = pseudo_observations(records, gravity=gravity)
        guess = _best_effort(initial_guess_from_tles, records, t_jd, t_fr,
                             gravity=gravity)

    start = FitState(guess.elements, free=args.free, template=guess.template)
    config = FitConfig(max_iter=args.max_iter, gravity=gravity)
    code = EXIT_OK
    try:
        fit, report = fit_tle(obs, start, config)
        if not report.converged:
            code = EXIT_NO_CONVERGENCE
    except NonConvergence as e:
        if e.best is None:
            raise
        fit, report = e.best, e.report
        code = EXIT_NO_CONVERGENCE

    line1, line2 = format_tle(fit.to_record())
    print(line1)
    print(line2)
    payload = {
        "converged": report.converged,
        "reason": report.reason,
        "iterations": [
            {"iteration": it.iteration,
             "residual_norm": it.residual_norm,
             "step_norm": it.step_norm,
             "damping": it.damping,
             "accepted": it.accepted}
            for it in report.iterations
        ],
    }
    with open(args.report, "w") as f:
        json.dump(payload, f, indent=1)
        f.write("\n")
    print("report: %s" % args.report)
    return code


# ---------------------------------------------------------------- state2tle

def _cmd_state2tle(args):
    gravity = _GRAVITIES[args.grav]
    if len(args.state) != 6:
        raise DataError("--state needs 6 comma-separated components")
    jd, fr = args.epoch
    template = None
    if args.template:
        records = load_tle_file(args.template)
        if not records:
            raise DataError("%s: no TLE records" % args.template)
        template = records[0]
    code = EXIT_OK
    try:
        fs = state_to_tle(args.state, jd, fr, template=template, gravity=gravity)
    except NonConvergence as e:
        if e.best is None:
            raise
        fs = e.best
        code = EXIT_NO_CONVERGENCE
        print("warning: %s" % e, file=sys.stderr)
    line1, line2 = format_tle(fs.to_record())
    print(line1)
    print(line2)
    return code


# ------------------------------------------------------------------ dataset

def _cmd_dataset(args):
    records = load_tle_file(args.tle)
    eph = synth_oracle(records,
                       horizon_min=args.horizon_min,
                       resolution_s=args.resolution_s,
                       drift_km_per_day=args.drift_km_per_day,
                       periodic_km=args.periodic_km,
                       noise_pos_km=args.noise_pos_km,
                       noise_vel_kms=args.noise_vel_kms,
                       seed=args.seed)
    if len(args.fractions) != 3:
        raise DataError("--fractions needs 3 comma-separated values")
    ss = build_sampleset(records, eph, fractions=tuple(args.fractions),
                         holdout_alt_km=args.holdout_alt_km, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    save_sampleset(ss, os.path.join(args.out, "sampleset.npz"))
    for sat_id in sorted(eph):
        save_ephemeris_csv(eph[sat_id],
                           os.path.join(args.out, "ephemeris_%d.csv" % sat_id))
    print(json.dumps({"out": args.out, "rows": ss.n_rows,
                      "counts": ss.counts()}, sort_keys=True))
    return EXIT_OK


# -------------------------------------------------------------------- train

def _cmd_train(args):
    ss = load_sampleset(args.data)
    hidden = tuple(args.hidden)
    if args.output_only:
        model = make_output_only(ss, hidden=hidden, seed=args.net_seed)
    else:
        input_hidden = tuple(args.input_hidden) if args.input_hidden else None
        model = make_hybrid(ss, hidden=hidden, input_hidden=input_hidden,
                            seed=args.net_seed)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         steps_per_epoch=args.steps_per_epoch, lr=args.lr,
                         lr_input=args.lr_input, lr_decay=args.lr_decay,
                         optimizer=args.optimizer, seed=args.seed,
                         verbose=args.verbose)
    code = EXIT_OK
    history = []
    try:
        model, history = train(model, ss, config)
    except DivergedLoss as e:
        print("warning: %s" % e, file=sys.stderr)
        code = EXIT_NO_CONVERGENCE
    save_checkpoint(model, args.ckpt)
    if args.history:
        save_history(history, args.history)
    summary = {"ckpt": args.ckpt, "epochs": len(history),
               "n_params": model.n_params}
    if history:
        best = min(history, key=lambda h: h["valid_mse"])
        summary["best_epoch"] = best["epoch"]
        summary["best_valid_mse"] = best["valid_mse"]
    print(json.dumps(summary, sort_keys=True))
    return code


# ----------------------------------------------------------------- evaluate

def _cmd_evaluate(args):
    ss = load_sampleset(args.data)
    model = load_checkpoint(args.ckpt)
    metrics = evaluate(model, ss, split=args.split)
    if metrics["n_rows"] == 0:
        raise DataError("split %r has no rows" % args.split)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


# -------------------------------------------------------------------- bench

def _cmd_bench(args):
    rows = bench(args.sizes, workers=args.workers, repeats=args.repeats)
    header = ("size", "n_models", "n_times", "workers", "wall_s",
              "per_item_us", "errors")
    out = []
    for row in rows:
        out.append([row["size"], row["n_models"], row["n_times"],
                    row["workers"], _fmt(row["wall_s"]),
                    _fmt(row["per_item_us"]), row["errors"]])
    _write_rows(args.output, header, out)
    return EXIT_OK


# ------------------------------------------------------------------ parsing

def _add_common(p, grav=True, workers=False, seed=False, output=False):
    if grav:
        p.add_argument("--grav", choices=sorted(_GRAVITIES), default="wgs72",
                       help="gravity constants (default wgs72)")
    if workers:
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default $DSGP4KIT_WORKERS or 1)")
    if seed:
        p.add_argument("--seed", type=int, default=0,
                       help="seed for anything random (default 0)")
    if output:
        p.add_argument("-o", "--output", default=None,
                       help="output file (default stdout)")


def build_parser():
    parser = _Parser(prog="dsgp4kit",
                     description="differentiable SGP4 toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    sub.required = True

    p = sub.add_parser("propagate", help="propagate TLEs to given minutes")
    p.add_argument("--tle", required=True, help="TLE file")
    p.add_argument("--minutes", required=True, type=_floats_arg,
                   help="comma-separated minutes since epoch")
    _add_common(p, workers=True, output=True)
    p.set_defaults(func=_cmd_propagate)

    p = sub.add_parser("jacobian", help="state partials per TLE and time")
    p.add_argument("--tle", required=True, help="TLE file")
    p.add_argument("--minutes", required=True, type=_floats_arg,
                   help="comma-separated minutes since epoch")
    p.add_argument("--params", type=FreeParamSet.parse,
                   default=FreeParamSet.standard7(),
                   help="free parameters (default n,e,i,raan,argp,ma,bstar)")
    _add_common(p, output=True)
    p.set_defaults(func=_cmd_jacobian)

    p = sub.add_parser("covariance", help="propagate a covariance matrix")
    p.add_argument("--tle", required=True, help="TLE file")
    p.add_argument("--cov", required=True, help="input covariance JSON")
    p.add_argument("--minutes", required=True, type=_floats_arg,
                   help="comma-separated minutes since epoch")
    _add_common(p, output=True)
    p.set_defaults(func=_cmd_covariance)

    p = sub.add_parser("fit", help="fit a TLE to observations")
    p.add_argument("--obs", required=True,
                   help="observations: .csv with epoch_iso,%s[,weight], "
                        "anything else is read as a TLE file of "
                        "pseudo-observations" % ",".join(_STATE_COLS))
    p.add_argument("--target-epoch", required=True, type=_epoch_arg,
                   help="ISO-8601 epoch of the fitted TLE")
    p.add_argument("--free", type=FreeParamSet.parse,
                   default=FreeParamSet.standard7(),
                   help="parameters to adjust (default all seven)")
    p.add_argument("--max-iter", type=int, default=25)
    p.add_argument("--report", default="fit_report.json",
                   help="where to write the iteration report JSON")
    _add_common(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("state2tle", help="invert a TEME state to a TLE")
    p.add_argument("--state", required=True, type=_floats_arg,
                   help="x_km,y_km,z_km,vx_kms,vy_kms,vz_kms")
    p.add_argument("--epoch", required=True, type=_epoch_arg,
                   help="ISO-8601 epoch of the state")
    p.add_argument("--template", default=None,
                   help="TLE file whose first record donates identity fields")
    _add_common(p)
    p.set_defaults(func=_cmd_state2tle)

    p = sub.add_parser("dataset", help="synthesize an ephemeris training set")
    p.add_argument("--tle", required=True, help="TLE file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--horizon-min", type=float, default=4320.0)
    p.add_argument("--resolution-s", type=float, default=60.0)
    p.add_argument("--drift-km-per-day", type=float, default=0.5)
    p.add_argument("--periodic-km", type=float, default=2.0)
    p.add_argument("--noise-pos-km", type=float, default=0.0)
    p.add_argument("--noise-vel-kms", type=float, default=0.0)
    p.add_argument("--fractions", type=_floats_arg, default=[0.69, 0.16, 0.15],
                   help="train,valid,test card fractions")
    p.add_argument("--holdout-alt-km", type=float, default=None,
                   help="cards at or below this altitude go whole to test")
    _add_common(p, grav=False, seed=True)
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("train", help="train correction networks")
    p.add_argument("--data", required=True, help="sampleset .npz")
    p.add_argument("--ckpt", required=True, help="checkpoint JSON to write")
    p.add_argument("--history", default=None, help="epoch history CSV to write")
    p.add_argument("--hidden", type=_ints_arg, default=[36, 36, 36],
                   help="output net hidden sizes (default 36,36,36)")
    p.add_argument("--input-hidden", type=_ints_arg, default=[10],
                   help="input net hidden sizes (default 10)")
    p.add_argument("--output-only", action="store_true",
                   help="drop the input net (comparator model)")
    p.add_argument("--net-seed", type=int, default=0,
                   help="weight init seed (default 0)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--steps-per-epoch", type=int, default=None)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--lr-input", type=float, default=None)
    p.add_argument("--lr-decay", type=float, default=1.0)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--verbose", action="store_true")
    _add_common(p, grav=False, seed=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="metrics for a checkpoint on a split")
    p.add_argument("--data", required=True, help="sampleset .npz")
    p.add_argument("--ckpt", required=True, help="checkpoint JSON")
    p.add_argument("--split", choices=("train", "valid", "test"),
                   default="test")
    _add_common(p, grav=False)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("bench", help="time the batch path over size ladder")
    p.add_argument("--sizes", required=True, type=_ints_arg,
                   help="comma-separated item counts")
    p.add_argument("--repeats", type=int, default=3)
    _add_common(p, grav=False, workers=True, output=True)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "workers", None) is None and hasattr(args, "workers"):
        args.workers = default_workers()
    try:
        return args.func(args)
    except (TleError, DataError, CovarianceError, OdError, PropagationError,
            OSError, json.JSONDecodeError) as e:
        print("dsgp4kit %s: error: %s" % (args.subcommand, e), file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
