"""A propagator with learned corrections on both sides of SGP4.

The input network nudges the nine mean elements before initialization,
the output network nudges the propagated state after, and both start
as exact zeros, so an untrained hybrid reproduces plain SGP4 bit for
bit.  Training minimizes mean squared normalized-state error against
an ephemeris.  Gradients flow analytically: backprop through the
output net, a forward-mode jet Jacobian of the propagation with
respect to its inputs, then backprop through the input net.

Corrections are applied through fixed per-component scales sized to
the error magnitudes the corrector is meant to absorb (tenths of a
scale unit, not whole orbits).  That keeps unit network outputs
meaning "a few kilometers", which in turn keeps optimizer step noise
well below the signal.
"""

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import jets
from .mlp import Mlp, Adam, Sgd
from .orbit_determination import POS_SCALE, VEL_SCALE
from .propagator import WGS72, WGS84, PropagationError, initialize, propagate

__all__ = [
    "DivergedLoss",
    "NormStats",
    "HybridModel",
    "TrainConfig",
    "norm_from_data",
    "make_hybrid",
    "make_output_only",
    "hybrid_forward",
    "loss_and_grads",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "save_history",
    "load_history",
]

STATE_NORM = np.array([POS_SCALE] * 3 + [VEL_SCALE] * 3)

# additive correction reachable at unit network output, per element:
# n (rad/min), e, i, raan, argp, ma (rad), bstar, then the two inert
# derivative slots which the near-earth model never reads.  Kept small
# on purpose: optimizer jitter on the network weights multiplies into
# these, and a mean-motion wobble compounds linearly with time.
IN_SCALE = np.array([1e-8, 3e-5, 1e-4, 1e-4, 1e-4, 1e-4, 1e-6, 0.0, 0.0])
# km and km/s per unit output on the state side
OUT_SCALE = np.array([5.0, 5.0, 5.0, 5e-3, 5e-3, 5e-3])

_GRAVITIES = {"wgs72": WGS72, "wgs84": WGS84}

# indices of the element-set fields the propagation actually reads
_FIELD_NAMES = ("no_kozai", "ecco", "inclo", "nodeo", "argpo", "mo",
                "bstar", "ndot", "nddot")
_ACTIVE = (0, 1, 2, 3, 4, 5, 6)


class DivergedLoss(RuntimeError):
    """Training loss became NaN or infinite."""


@dataclass
class NormStats:
    """Feature standardization constants plus the time horizon."""

    param_mean: np.ndarray
    param_scale: np.ndarray
    horizon_min: float = 4320.0

    def features(self, params, t):
        """params (9,) or (n, 9), t scalar or (n,).  Returns 10 features."""
        p = (np.asarray(params) - self.param_mean) / self.param_scale
        tt = np.asarray(t, dtype=np.float64) / self.horizon_min
        if p.ndim == 1:
            return np.append(p, tt)
        return np.hstack([p, tt[:, None]])

    def to_json_dict(self):
        return {
            "param_mean": list(map(float, self.param_mean)),
            "param_scale": list(map(float, self.param_scale)),
            "horizon_min": self.horizon_min,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            param_mean=np.array(d["param_mean"]),
            param_scale=np.array(d["param_scale"]),
            horizon_min=d["horizon_min"],
        )


def norm_from_data(data, horizon_min=None):
    """Standardization from the training rows of a SampleSet.

    A parameter that never varies gets a unit-order scale instead of
    its (zero) standard deviation, which parks its feature at zero.
    """
    rows = data.rows_for("train")
    if rows.size == 0:
        rows = np.arange(data.n_rows)
    params = data.param_matrix()[data.row_card[rows]]
    mean = params.mean(axis=0)
    std = params.std(axis=0)
    floor = 1e-9 * (1.0 + np.abs(mean))
    scale = np.where(std > floor, std, 1.0 + np.abs(mean))
    if horizon_min is None:
        horizon_min = float(max(data.row_t.max(), 1.0))
    return NormStats(param_mean=mean, param_scale=scale, horizon_min=horizon_min)


@dataclass
class HybridModel:
    """SGP4 wrapped by optional input and output correction networks.

    theta_sgp4 is a two-vector (bstar offset, drag coefficient scale
    minus one) applied inside the physics; it stays frozen unless
    train_theta is set.
    """

    norm: NormStats
    input_net: Mlp | None = None
    output_net: Mlp | None = None
    theta_sgp4: np.ndarray | None = None
    train_theta: bool = False
    in_scale: np.ndarray = field(default_factory=lambda: IN_SCALE.copy())
    out_scale: np.ndarray = field(default_factory=lambda: OUT_SCALE.copy())
    gravity: object = WGS72

    @property
    def n_params(self):
        n = 0
        if self.input_net is not None:
            n += self.input_net.n_params
        if self.output_net is not None:
            n += self.output_net.n_params
        if self.train_theta and self.theta_sgp4 is not None:
            n += self.theta_sgp4.size
        return n

    def params(self):
        out = []
        if self.input_net is not None:
            out.extend(self.input_net.params())
        if self.output_net is not None:
            out.extend(self.output_net.params())
        if self.train_theta and self.theta_sgp4 is not None:
            out.append(self.theta_sgp4)
        return out

    def copy(self):
        dup = replace(self)
        if self.input_net is not None:
            dup.input_net = self.input_net.copy()
        if self.output_net is not None:
            dup.output_net = self.output_net.copy()
        if self.theta_sgp4 is not None:
            dup.theta_sgp4 = self.theta_sgp4.copy()
        return dup

    def uses_input_path(self):
        return self.input_net is not None or (
            self.theta_sgp4 is not None
            and (self.train_theta or np.any(self.theta_sgp4 != 0.0))
        )


def make_hybrid(data, hidden=(35, 35, 35), input_hidden=None, seed=0,
                theta=False, gravity=WGS72):
    """Full hybrid: input corrector, output corrector, optional theta.

    input_hidden defaults to hidden.  The input side can be made much
    smaller than the output side: its useful corrections are a few
    nearly constant numbers per satellite, while the output side has to
    represent a field over state and time.
    """
    norm = norm_from_data(data)
    if input_hidden is None:
        input_hidden = hidden
    return HybridModel(
        norm=norm,
        input_net=Mlp((10,) + tuple(input_hidden) + (9,), seed=seed),
        output_net=Mlp((7,) + tuple(hidden) + (6,), seed=seed + 1),
        theta_sgp4=np.zeros(2) if theta else None,
        train_theta=bool(theta),
        gravity=gravity,
    )


def make_output_only(data, hidden=(32, 32, 32, 32), seed=0, gravity=WGS72):
    """Comparator with only the state-side corrector."""
    norm = norm_from_data(data)
    return HybridModel(
        norm=norm,
        input_net=None,
        output_net=Mlp((7,) + tuple(hidden) + (6,), seed=seed + 1),
        gravity=gravity,
    )


def _corrected_params(model, params9, t):
    """Apply the input net and theta to the raw elements.

    Returns (u, cache_in, clamped) where clamped marks components whose
    correction hit a physical bound, so their upstream gradient is zero.
    """
    cache_in = None
    u = np.asarray(params9, dtype=np.float64).copy()
    if model.input_net is not None:
        delta, cache_in = model.input_net.forward(model.norm.features(params9, t))
        u = u + model.in_scale * delta
    if model.theta_sgp4 is not None:
        u[6] = u[6] + model.theta_sgp4[0]
    clamped = np.zeros(9, dtype=bool)
    if u[1] < 0.0:
        u[1], clamped[1] = 0.0, True
    elif u[1] > 0.999:
        u[1], clamped[1] = 0.999, True
    if u[0] < 1e-6:
        u[0], clamped[0] = 1e-6, True
    return u, cache_in, clamped


def _replace_fields(base, values):
    kw = {name: values[k] for k, name in enumerate(_FIELD_NAMES)}
    return replace(base, **kw)


def _propagate_value(model, base_elements, u, t):
    c1 = 1.0
    if model.theta_sgp4 is not None:
        c1 = 1.0 + model.theta_sgp4[1]
    prop = initialize(_replace_fields(base_elements, list(u)),
                      gravity=model.gravity, c1_scale=c1)
    st = propagate(prop, t)
    return np.array(st.vector())


def _propagate_with_jets(model, base_elements, u, t):
    """State and its 6x9 Jacobian in the corrected inputs.

    Only the seven live parameters get jet columns; the two derivative
    bookkeeping slots are identically zero.  When theta is trainable an
    extra column for the drag scale rides along.
    """
    want_theta = model.train_theta and model.theta_sgp4 is not None
    width = len(_ACTIVE) + (1 if want_theta else 0)
    vals = list(u)
    for col, k in enumerate(_ACTIVE):
        vals[k] = jets.seed(float(u[k]), col, width)
    c1 = 1.0
    if model.theta_sgp4 is not None:
        c1 = 1.0 + model.theta_sgp4[1]
        if want_theta:
            p = [0.0] * width
            p[width - 1] = 1.0
            c1 = jets.Jet(float(c1), tuple(p))
    prop = initialize(_replace_fields(base_elements, vals),
                      gravity=model.gravity, c1_scale=c1)
    st = propagate(prop, t)
    s = np.empty(6)
    jac = np.zeros((6, 9))
    g_theta1 = np.zeros(6)
    for row, comp in enumerate((*st.r, *st.v)):
        s[row] = jets.value_of(comp)
        part = jets.partials_of(comp, width)
        for col, k in enumerate(_ACTIVE):
            jac[row, k] = part[col]
        if want_theta:
            g_theta1[row] = part[width - 1]
    return s, jac, g_theta1


def hybrid_forward(model, elements, t, state=None):
    """Corrected state at t minutes past the card epoch, as a (6,) array.

    elements is the card's ElementSet.  A precomputed SGP4 state can be
    passed to skip the physics when no input-side correction is active.
    """
    p9 = np.array([getattr(elements, n) for n in _FIELD_NAMES], dtype=np.float64)
    u, _, _ = _corrected_params(model, p9, t)
    if state is None or model.uses_input_path():
        state = _propagate_value(model, elements, u, t)
    x = np.asarray(state, dtype=np.float64)
    if model.output_net is not None:
        z = np.append(x / STATE_NORM, t / model.norm.horizon_min)
        delta, _ = model.output_net.forward(z)
        x = x + model.out_scale * delta
    return x


def loss_and_grads(model, data, rows=None, cached_states=None):
    """Mean squared normalized-state error and its parameter gradient.

    rows indexes data's rows; default is every row.  Returns (loss,
    grads, n_skipped) with grads parallel to model.params().  A sample
    whose propagation fails is skipped and counted, not fatal.
    cached_states, if given, must hold the uncorrected SGP4 state for
    every row of data and is only consulted when the input path is
    inactive (the states stop depending on the network then).
    """
    if rows is None:
        rows = np.arange(data.n_rows)
    params_all = data.param_matrix()
    grads = [np.zeros_like(p) for p in model.params()]
    n_in = 0 if model.input_net is None else len(model.input_net.params())
    use_cache = cached_states is not None and not model.uses_input_path()
    need_jets = model.uses_input_path() and (
        model.input_net is not None or model.train_theta)

    loss = 0.0
    n_ok = 0
    n_skipped = 0
    for r in rows:
        card = int(data.row_card[r])
        t = float(data.row_t[r])
        p9 = params_all[card]
        u, cache_in, clamped = _corrected_params(model, p9, t)
        try:
            if use_cache:
                s = cached_states[r]
                if not np.all(np.isfinite(s)):
                    n_skipped += 1
                    continue
                jac = g_theta1 = None
            elif need_jets:
                s, jac, g_theta1 = _propagate_with_jets(
                    model, data.elements[card], u, t)
            else:
                s = _propagate_value(model, data.elements[card], u, t)
                jac = g_theta1 = None
        except PropagationError:
            n_skipped += 1
            continue

        x = s
        cache_out = None
        if model.output_net is not None:
            z = np.append(s / STATE_NORM, t / model.norm.horizon_min)
            delta_out, cache_out = model.output_net.forward(z)
            x = s + model.out_scale * delta_out
        resid = x / STATE_NORM - data.row_target[r] / STATE_NORM
        loss += float(resid @ resid) / 6.0
        n_ok += 1

        g_xn = (2.0 / 6.0) * resid
        g_s = g_xn / STATE_NORM
        if model.output_net is not None:
            g_delta = g_xn * (model.out_scale / STATE_NORM)
            net_grads, g_z = model.output_net.backward(cache_out, g_delta)
            for acc, g in zip(grads[n_in:n_in + len(net_grads)], net_grads):
                acc += g
            g_s = g_s + g_z.ravel()[:6] / STATE_NORM
        if jac is not None:
            g_u = jac.T @ g_s
            g_u[clamped] = 0.0
            if model.input_net is not None:
                in_grads, _ = model.input_net.backward(
                    cache_in, model.in_scale * g_u)
                for acc, g in zip(grads[:n_in], in_grads):
                    acc += g
            if model.train_theta and model.theta_sgp4 is not None:
                g_theta = grads[-1]
                g_theta[0] += 0.0 if clamped[6] else g_u[6]
                g_theta[1] += float(g_theta1 @ g_s)

    if n_ok == 0:
        raise DivergedLoss("every sample in the batch failed to propagate")
    if n_skipped:
        warnings.warn("skipped %d of %d samples whose propagation failed"
                      % (n_skipped, n_skipped + n_ok), stacklevel=2)
    loss /= n_ok
    for g in grads:
        g /= n_ok
    return loss, grads, n_skipped


def _cache_states(model, data, rows):
    """Uncorrected SGP4 states for the given rows, NaN where it fails.

    Groups rows by card and runs the vector kernel once per card.
    Valid only while the input path is inactive.
    """
    from .batch import BatchJob, run_batch

    out = np.full((data.n_rows, 6), np.nan)
    order = np.argsort(data.row_card[rows], kind="stable")
    rows = rows[order]
    cards, starts = np.unique(data.row_card[rows], return_index=True)
    models = []
    times = []
    kept_rows = []
    for i, card in enumerate(cards):
        end = starts[i + 1] if i + 1 < len(cards) else rows.size
        try:
            m = initialize(data.elements[int(card)], gravity=model.gravity)
        except PropagationError:
            continue
        models.append(m)
        times.append(data.row_t[rows[starts[i]:end]].tolist())
        kept_rows.append(rows[starts[i]:end])
    if not models:
        return out
    rows = np.concatenate(kept_rows)
    result = run_batch(BatchJob.pairs(models, times), workers=1)
    flat = np.hstack([result.r, result.v])
    ok = result.error_codes == 0
    out[rows[ok]] = flat[ok]
    return out


@dataclass
class TrainConfig:
    """Knobs for train().  lr_input defaults to lr when None.

    A separate, usually smaller, input-side rate keeps the element
    corrections quiet while the state-side net is still settling; the
    state net sees the propagated state as its input, so input-side
    jitter is nonstationarity from where it stands.

    grad_scale multiplies gradients before the optimizer.  None picks
    1 / (initial training loss), which matters more than it looks: the
    normalized-state loss sits around 1e-8, its gradients around 1e-9,
    and adam's epsilon term swallows gradients that small.  Rescaling
    to unit loss is equivalent to minimizing J/J0 and restores the
    step sizes adam's defaults were tuned for.  Pass 1.0 to disable.
    """

    epochs: int = 30
    batch_size: int = 64
    steps_per_epoch: int | None = None
    lr: float = 3e-3
    lr_input: float | None = None
    lr_decay: float = 1.0
    grad_scale: float | None = None
    optimizer: str = "adam"
    seed: int = 0
    verbose: bool = False


def train(model, data, config=None):
    """Fit the correction networks against a SampleSet.

    Runs minibatch epochs over the train rows, validates after each,
    and returns (model, history) with the parameters of the best
    validation epoch restored.  The incoming parameters count as a
    candidate, so resuming a trained model never hands back something
    worse than it was given.  history rows are dicts with epoch,
    train_mse and valid_mse.  Zero epochs returns the model untouched.
    Raises DivergedLoss when the loss stops being finite.  The same
    seed reproduces the same run exactly.
    """
    config = config or TrainConfig()
    history = []
    if config.epochs == 0:
        return model, history

    params = model.params()
    if config.optimizer == "adam":
        make_opt = Adam
    elif config.optimizer == "sgd":
        make_opt = Sgd
    else:
        raise ValueError("unknown optimizer %r" % config.optimizer)
    n_in = 0 if model.input_net is None else len(model.input_net.params())
    lr_in = config.lr if config.lr_input is None else config.lr_input
    opts = []
    if n_in:
        opts.append((slice(0, n_in), make_opt(params[:n_in], lr=lr_in)))
    if len(params) > n_in:
        opts.append((slice(n_in, None), make_opt(params[n_in:], lr=config.lr)))

    train_rows = data.rows_for("train")
    valid_rows = data.rows_for("valid")
    if train_rows.size == 0:
        raise ValueError("no training rows")

    cache = None
    if not model.uses_input_path():
        # inputs never change, so the physics can run once up front
        cache = _cache_states(model, data,
                              np.union1d(train_rows, valid_rows))

    rng = np.random.default_rng(config.seed)
    steps = config.steps_per_epoch
    if steps is None:
        steps = max(1, math.ceil(train_rows.size / config.batch_size))

    gscale = config.grad_scale
    if gscale is None:
        probe = train_rows[:min(train_rows.size, 512)]
        j_ref = _mse_only(model, data, probe, cache)
        gscale = 1.0 / j_ref if np.isfinite(j_ref) and j_ref > 0 else 1.0

    valid_mse = _mse_only(model, data, valid_rows, cache)
    best = (valid_mse, [p.copy() for p in params], 0)
    for epoch in range(1, config.epochs + 1):
        perm = train_rows[rng.permutation(train_rows.size)]
        epoch_loss = 0.0
        epoch_n = 0
        for step in range(steps):
            lo = step * config.batch_size
            batch = perm[lo:lo + config.batch_size]
            if batch.size == 0:
                break
            loss, grads, _ = loss_and_grads(model, data, batch,
                                            cached_states=cache)
            if not np.isfinite(loss):
                raise DivergedLoss(
                    "loss is %r at epoch %d step %d" % (loss, epoch, step))
            if gscale != 1.0:
                for g in grads:
                    g *= gscale
            for sl, opt in opts:
                opt.step(params[sl], grads[sl])
            epoch_loss += loss * batch.size
            epoch_n += batch.size
        train_mse = epoch_loss / max(epoch_n, 1)
        valid_mse = _mse_only(model, data, valid_rows, cache)
        if not np.isfinite(valid_mse):
            raise DivergedLoss("validation loss is %r at epoch %d" % (valid_mse, epoch))
        history.append({"epoch": epoch, "train_mse": train_mse,
                        "valid_mse": valid_mse})
        if config.verbose:
            print("epoch %3d  train %.3e  valid %.3e" % (epoch, train_mse, valid_mse))
        if valid_mse < best[0]:
            best = (valid_mse, [p.copy() for p in params], epoch)
        for _, opt in opts:
            opt.lr *= config.lr_decay

    if best[1] is not None:
        for p, b in zip(params, best[1]):
            p[...] = b
    return model, history


def _mse_only(model, data, rows, cache=None):
    if rows.size == 0:
        return np.nan
    total = 0.0
    n_ok = 0
    params_all = data.param_matrix()
    for r in rows:
        card = int(data.row_card[r])
        t = float(data.row_t[r])
        try:
            if cache is not None and not model.uses_input_path():
                s = cache[r]
                if not np.all(np.isfinite(s)):
                    continue
                x = hybrid_forward(model, data.elements[card], t, state=s)
            else:
                x = hybrid_forward(model, data.elements[card], t)
        except PropagationError:
            continue
        resid = (x - data.row_target[r]) / STATE_NORM
        total += float(resid @ resid) / 6.0
        n_ok += 1
    return total / n_ok if n_ok else np.nan


def evaluate(model, data, split="test", cached_states=None):
    """Error metrics of the hybrid on one split of a SampleSet.

    Returns state_mse (normalized, the training objective), pos_rmse_km,
    vel_rmse_kms, plus row counts.  Rows whose propagation fails are
    skipped and counted.
    """
    rows = data.rows_for(split) if isinstance(split, str) else np.asarray(split)
    sq_norm = 0.0
    sq_pos = 0.0
    sq_vel = 0.0
    n_ok = 0
    n_skipped = 0
    can_cache = cached_states is not None and not model.uses_input_path()
    for r in rows:
        card = int(data.row_card[r])
        t = float(data.row_t[r])
        try:
            if can_cache:
                s = cached_states[r]
                if not np.all(np.isfinite(s)):
                    n_skipped += 1
                    continue
                x = hybrid_forward(model, data.elements[card], t, state=s)
            else:
                x = hybrid_forward(model, data.elements[card], t)
        except PropagationError:
            n_skipped += 1
            continue
        d = x - data.row_target[r]
        dn = d / STATE_NORM
        sq_norm += float(dn @ dn) / 6.0
        sq_pos += float(d[:3] @ d[:3])
        sq_vel += float(d[3:] @ d[3:])
        n_ok += 1
    if n_ok == 0:
        return {"state_mse": np.nan, "pos_rmse_km": np.nan,
                "vel_rmse_kms": np.nan, "n_rows": 0, "n_skipped": n_skipped}
    return {
        "state_mse": sq_norm / n_ok,
        "pos_rmse_km": math.sqrt(sq_pos / n_ok),
        "vel_rmse_kms": math.sqrt(sq_vel / n_ok),
        "n_rows": n_ok,
        "n_skipped": n_skipped,
    }


def save_checkpoint(model, path):
    d = {
        "norm": model.norm.to_json_dict(),
        "input_net": None if model.input_net is None else model.input_net.to_json_dict(),
        "output_net": None if model.output_net is None else model.output_net.to_json_dict(),
        "theta_sgp4": None if model.theta_sgp4 is None else list(map(float, model.theta_sgp4)),
        "train_theta": model.train_theta,
        "in_scale": list(map(float, model.in_scale)),
        "out_scale": list(map(float, model.out_scale)),
        "gravity": model.gravity.name,
    }
    with open(path, "w") as f:
        json.dump(d, f, indent=1, sort_keys=True)
        f.write("\n")


def load_checkpoint(path):
    with open(path) as f:
        d = json.load(f)
    return HybridModel(
        norm=NormStats.from_json_dict(d["norm"]),
        input_net=None if d["input_net"] is None else Mlp.from_json_dict(d["input_net"]),
        output_net=None if d["output_net"] is None else Mlp.from_json_dict(d["output_net"]),
        theta_sgp4=None if d["theta_sgp4"] is None else np.array(d["theta_sgp4"]),
        train_theta=d["train_theta"],
        in_scale=np.array(d["in_scale"]),
        out_scale=np.array(d["out_scale"]),
        gravity=_GRAVITIES[d["gravity"]],
    )


def save_history(history, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_mse", "valid_mse"])
        for row in history:
            w.writerow([row["epoch"],
                        "%.12e" % row["train_mse"],
                        "%.12e" % row["valid_mse"]])


def load_history(path):
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append({"epoch": int(row["epoch"]),
                        "train_mse": float(row["train_mse"]),
                        "valid_mse": float(row["valid_mse"])})
    return out
