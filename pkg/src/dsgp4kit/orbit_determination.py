"""TLE fitting against weighted state observations.

The fit is iterated Gauss-Newton on a chosen free subset of the TLE
parameters (the six mean elements plus bstar by default).  Residuals
are normalized so position and velocity mix commensurately: positions
are divided by 6378.135 km and velocities by 7.905 km/s.  Levenberg
damping engages only when a plain Gauss-Newton step goes uphill or the
normal matrix is singular, so with lambda = 0 the update is exactly
dx = -(A^T W A)^-1 A^T W b.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import jets
from .gradients import PARAM_FIELDS, FreeParamSet, jacobian, stm_tle
from .propagator import WGS72, PropagationError, StateTeme, initialize, propagate

__all__ = [
    "POS_SCALE",
    "VEL_SCALE",
    "OdError",
    "SingularNormalMatrix",
    "NonConvergence",
    "HyperbolicState",
    "Observation",
    "FitState",
    "FitConfig",
    "FitIteration",
    "FitReport",
    "residuals",
    "build_system",
    "solve_normal_equations",
    "normal_step",
    "fit_tle",
    "state_to_tle",
    "initial_guess_from_tles",
    "pseudo_observations",
]

POS_SCALE = 6378.135  # km
VEL_SCALE = 7.905  # km/s

_NORM = np.array([POS_SCALE] * 3 + [VEL_SCALE] * 3)
TWOPI = 2.0 * math.pi


class OdError(RuntimeError):
    pass


class SingularNormalMatrix(OdError):
    pass


class HyperbolicState(OdError):
    pass


class NonConvergence(OdError):
    """Carries the best iterate and the report for post-mortems."""

    def __init__(self, message, best=None, report=None):
        super().__init__(message)
        self.best = best
        self.report = report


@dataclass
class Observation:
    """A Cartesian TEME state at a UTC epoch with an optional weight."""

    state: tuple  # (x, y, z, vx, vy, vz) in km and km/s
    epoch_jd: float
    epoch_fr: float = 0.0
    weight: float = 1.0

    def __post_init__(self):
        st = tuple(float(c) for c in self.state)
        if len(st) != 6 or not all(math.isfinite(c) for c in st):
            raise ValueError("observation state must be 6 finite components")
        if self.weight < 0.0:
            raise ValueError("observation weight must be >= 0")
        self.state = st

    def tsince_from(self, epoch_jd, epoch_fr):
        """Minutes from a reference epoch to this observation."""
        return ((self.epoch_jd - epoch_jd) + (self.epoch_fr - epoch_fr)) * 1440.0


@dataclass
class FitState:
    """Elements at the target epoch plus the set being adjusted."""

    elements: "ElementSet"
    free: FreeParamSet = field(default_factory=FreeParamSet.standard7)
    template: object = None  # TleRecord whose fixed fields carry to output

    def vector(self):
        return np.array(
            [getattr(self.elements, PARAM_FIELDS[name]) for name in self.free]
        )

    def with_vector(self, x):
        updates = {
            PARAM_FIELDS[name]: float(x[k]) for k, name in enumerate(self.free)
        }
        return FitState(self.elements.replace(**updates), self.free, self.template)

    def shifted(self, dx):
        return self.with_vector(self.vector() + np.asarray(dx))

    def to_record(self):
        from .tle import record_from_elements

        return record_from_elements(self.elements, self.template)


@dataclass
class FitConfig:
    max_iter: int = 25
    step_tol: float = 1e-10
    resid_rel_tol: float = 1e-12
    lambda_floor: float = 1e-12
    lambda_growth: float = 10.0
    lambda_max: float = 1e8
    gravity: object = WGS72


@dataclass
class FitIteration:
    iteration: int
    residual_norm: float
    per_obs_norms: list
    step_norm: float
    damping: float
    accepted: bool


@dataclass
class FitReport:
    iterations: list
    converged: bool
    reason: str

    @property
    def residual_norms(self):
        return [it.residual_norm for it in self.iterations]


def _normalized_residual(fit, ob, gravity):
    model = initialize(fit.elements, gravity)
    t = ob.tsince_from(fit.elements.epoch_jd, fit.elements.epoch_fr)
    try:
        st = propagate(model, t)
    except PropagationError as exc:
        raise type(exc)("observation at tsince %.3f min: %s" % (t, exc)) from exc
    return (np.array(st.vector()) - np.array(ob.state)) / _NORM


def residuals(fit, obs, gravity=None):
    """Normalized residual vectors, their norms, and the total norm.

    The total is sqrt(sum of w_i * |b_i|^2), the stacked weighted
    2-norm, which reduces to the plain stacked norm for unit weights.
    """
    gravity = gravity or WGS72
    bs = [_normalized_residual(fit, ob, gravity) for ob in obs]
    norms = [float(np.linalg.norm(b)) for b in bs]
    total = math.sqrt(sum(ob.weight * n * n for ob, n in zip(obs, norms)))
    return bs, norms, total


def build_system(fit, obs, gravity=None):
    """Stacked normalized Jacobian rows and residuals over observations.

    Each observation contributes six rows; the Jacobian and the
    residual come from one jet pass per observation.
    """
    gravity = gravity or WGS72
    K = len(fit.free)
    n = len(obs)
    A = np.zeros((6 * n, K))
    b = np.zeros(6 * n)
    w = np.zeros(6 * n)
    for k, ob in enumerate(obs):
        t = ob.tsince_from(fit.elements.epoch_jd, fit.elements.epoch_fr)
        try:
            J = jacobian(fit.elements, fit.free, t, gravity)
        except PropagationError as exc:
            raise type(exc)("observation at tsince %.3f min: %s" % (t, exc)) from exc
        rows = slice(6 * k, 6 * k + 6)
        A[rows] = J.matrix / _NORM[:, None]
        b[rows] = (J.state - np.array(ob.state)) / _NORM
        w[rows] = ob.weight
    return A, b, w


def solve_normal_equations(A, b, w=None, damping=0.0):
    """dx = -(A^T W A + damping * diag(A^T W A))^-1 A^T W b.

    With damping 0 this is the plain Gauss-Newton normal step, exact in
    one application for an affine model.  Solved by Cholesky; a
    singular system raises SingularNormalMatrix.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if w is None:
        wA, wb = A, b
    else:
        w = np.asarray(w, dtype=np.float64)
        wA, wb = w[:, None] * A, w * b
    N = A.T @ wA
    g = A.T @ wb
    if damping > 0.0:
        N = N + damping * np.diag(np.diag(N))
    try:
        c, low = _cho_factor(N)
        return -_cho_solve(c, g)
    except np.linalg.LinAlgError as exc:
        raise SingularNormalMatrix(str(exc)) from exc


def _cho_factor(N):
    return np.linalg.cholesky(N), True


def _cho_solve(c, g):
    y = np.linalg.solve(c, g)
    return np.linalg.solve(c.T, y)


def _time_ordered(obs):
    # the normal-equation accumulation depends on row order at the
    # floating-point level; fixing a canonical order makes the step
    # independent of how the caller happened to stack the observations
    return sorted(obs, key=lambda ob: (ob.epoch_jd, ob.epoch_fr,
                                       ob.weight, ob.state))


def normal_step(fit, obs, damping=0.0, gravity=None):
    """One Gauss-Newton step from the current fit state."""
    A, b, w = build_system(fit, _time_ordered(obs), gravity)
    return solve_normal_equations(A, b, w, damping)


def fit_tle(obs, initial_guess, config=None):
    """Iterate Gauss-Newton with fallback damping until convergence.

    Returns (fit, report) where fit is the best accepted iterate.  The
    loop stops when the step norm drops below step_tol, the residual
    norm stops changing relatively by resid_rel_tol, or max_iter is
    reached (reported as converged=False).  NonConvergence is raised
    only when damping escalation cannot find a downhill step at all.
    Observations are processed in time order, so the result does not
    depend on how the caller stacked them; the report's per-observation
    norms follow that same order.
    """
    cfg = config or FitConfig()
    if not obs:
        raise ValueError("no observations")
    obs = _time_ordered(obs)
    fit = initial_guess
    lam = 0.0
    report = FitReport(iterations=[], converged=False, reason="max_iterations")
    best = fit
    best_norm = None
    prev_norm = None

    for it in range(1, cfg.max_iter + 1):
        A, b, w = build_system(fit, obs, cfg.gravity)
        per_obs = [float(np.linalg.norm(b[6 * k:6 * k + 6])) for k in range(len(obs))]
        norm = math.sqrt(float(b @ (w * b)))
        if best_norm is None or norm < best_norm:
            best, best_norm = fit, norm

        # try plain (or lightly damped) steps, escalating on uphill moves
        while True:
            try:
                dx = solve_normal_equations(A, b, w, lam)
            except SingularNormalMatrix:
                dx = None
            if dx is not None:
                candidate = fit.shifted(dx)
                try:
                    _, _, cand_norm = residuals(candidate, obs, cfg.gravity)
                except PropagationError:
                    cand_norm = math.inf
                if cand_norm <= norm or norm == 0.0:
                    break
            lam = max(cfg.lambda_floor, lam * cfg.lambda_growth)
            if lam > cfg.lambda_max:
                report.iterations.append(FitIteration(
                    it, norm, per_obs, 0.0, lam, accepted=False))
                report.reason = "damping_exhausted"
                raise NonConvergence(
                    "no downhill step below damping %g" % cfg.lambda_max,
                    best=best, report=report)

        step_norm = float(np.linalg.norm(dx))
        report.iterations.append(FitIteration(
            it, norm, per_obs, step_norm, lam, accepted=True))
        fit = candidate
        if cand_norm < best_norm:
            best, best_norm = fit, cand_norm
        lam = 0.0 if lam <= cfg.lambda_floor else lam / cfg.lambda_growth

        if step_norm < cfg.step_tol:
            report.converged = True
            report.reason = "step_tolerance"
            break
        if prev_norm is not None and abs(prev_norm - norm) <= cfg.resid_rel_tol * max(norm, 1.0):
            report.converged = True
            report.reason = "residual_tolerance"
            break
        prev_norm = norm

    return best, report


def _osculating_guess(state, mu):
    """Two-body mean elements from a Cartesian state, with the usual
    fallbacks for the circular and equatorial degeneracies."""
    r = np.array(state[:3], dtype=np.float64)
    v = np.array(state[3:], dtype=np.float64)
    rmag = float(np.linalg.norm(r))
    vmag = float(np.linalg.norm(v))
    energy = vmag * vmag / 2.0 - mu / rmag
    if energy >= 0.0:
        raise HyperbolicState("state is not on a bound orbit")
    a = -mu / (2.0 * energy)

    h = np.cross(r, v)
    hmag = float(np.linalg.norm(h))
    nvec = np.array([-h[1], h[0], 0.0])
    nmag = float(np.linalg.norm(nvec))
    evec = ((vmag * vmag - mu / rmag) * r - float(np.dot(r, v)) * v) / mu
    ecc = float(np.linalg.norm(evec))
    if ecc >= 1.0:
        raise HyperbolicState("osculating eccentricity %.6f >= 1" % ecc)

    incl = math.acos(max(-1.0, min(1.0, h[2] / hmag)))
    small = 1e-11

    if nmag > small:
        raan = math.atan2(nvec[1], nvec[0]) % TWOPI
    else:
        raan = 0.0

    if ecc > small and nmag > small:
        argp = math.acos(max(-1.0, min(1.0, float(np.dot(nvec, evec)) / (nmag * ecc))))
        if evec[2] < 0.0:
            argp = TWOPI - argp
    elif ecc > small:
        # equatorial: argument measured from x axis
        argp = math.atan2(evec[1], evec[0]) % TWOPI
    else:
        argp = 0.0

    if ecc > small:
        cosnu = max(-1.0, min(1.0, float(np.dot(evec, r)) / (ecc * rmag)))
        nu = math.acos(cosnu)
        if float(np.dot(r, v)) < 0.0:
            nu = TWOPI - nu
        E = math.atan2(math.sqrt(1.0 - ecc * ecc) * math.sin(nu), ecc + math.cos(nu))
        ma = (E - ecc * math.sin(E)) % TWOPI
    else:
        # circular: mean anomaly degenerate with argp; fold the
        # argument of latitude into ma and keep argp at 0
        if nmag > small:
            u = math.acos(max(-1.0, min(1.0, float(np.dot(nvec, r)) / (nmag * rmag))))
            if r[2] < 0.0:
                u = TWOPI - u
        else:
            u = math.atan2(r[1], r[0]) % TWOPI
        ma = u

    n_rad_min = math.sqrt(mu / (a * a * a)) * 60.0
    return n_rad_min, min(max(ecc, 1e-8), 0.9), incl, raan, argp, ma


def state_to_tle(state, epoch_jd, epoch_fr=0.0, template=None, gravity=WGS72,
                 max_iter=50, pos_tol=1e-9, vel_tol=1e-12):
    """Invert a Cartesian TEME state to mean elements at its epoch.

    Newton iteration on the six mean elements with the TLE-space state
    transition matrix as the Jacobian; the initial iterate comes from
    the two-body osculating elements.  Least squares absorbs the
    argp/ma degeneracy for near-circular states.
    """
    from .propagator import ElementSet

    if isinstance(state, StateTeme):
        target = np.array(state.vector(), dtype=np.float64)
    else:
        target = np.array([float(c) for c in state], dtype=np.float64)
    if target.shape != (6,):
        raise ValueError("state must have 6 components")

    n0, e0, i0, raan0, argp0, ma0 = _osculating_guess(target, gravity.mu)
    els = ElementSet(no_kozai=n0, ecco=e0, inclo=i0, nodeo=raan0, argpo=argp0,
                     mo=ma0, bstar=0.0, epoch_jd=epoch_jd, epoch_fr=epoch_fr)
    if template is not None:
        from .tle import to_elements

        tpl = to_elements(template)
        els = els.replace(bstar=tpl.bstar, ndot=tpl.ndot, nddot=tpl.nddot)

    free = FreeParamSet.elements6()
    for _ in range(max_iter):
        J = stm_tle(els, 0.0, gravity)
        diff = J.state - target
        if (np.abs(diff[:3]).max() < pos_tol and np.abs(diff[3:]).max() < vel_tol):
            return FitState(els, free=FreeParamSet.standard7(), template=template)
        Anorm = J.matrix / _NORM[:, None]
        bnorm = diff / _NORM
        dx, *_ = np.linalg.lstsq(Anorm, -bnorm, rcond=None)
        updates = {}
        for k, name in enumerate(free):
            fieldname = PARAM_FIELDS[name]
            val = getattr(els, fieldname) + float(dx[k])
            if name == "e":
                # keep iterates above the propagation's 1e-6 eccentricity
                # clamp, where the derivative in e vanishes and Newton
                # would strand
                val = min(max(val, 1.5e-6), 0.99)
            elif name == "n":
                val = max(val, 1e-6)
            elif name == "i":
                val = min(max(val, 0.0), math.pi)
            else:
                val = val % TWOPI
            updates[fieldname] = val
        els = els.replace(**updates)

    raise NonConvergence("state inversion did not reach %g km / %g km/s in %d iterations"
                         % (pos_tol, vel_tol, max_iter),
                         best=FitState(els, template=template))


def initial_guess_from_tles(obs_tles, t_t_jd, t_t_fr=0.0, gravity=WGS72):
    """Average the records' states at the target epoch, then invert.

    Each observation TLE is propagated to t_T; the Cartesian states are
    averaged and mapped back to mean elements.  Metadata comes from the
    record with the latest epoch.
    """
    from .tle import epoch_to_jd, to_elements

    if not obs_tles:
        raise ValueError("no TLEs to average")
    states = []
    latest = None
    latest_epoch = None
    for rec in obs_tles:
        els = to_elements(rec)
        t = ((t_t_jd - els.epoch_jd) + (t_t_fr - els.epoch_fr)) * 1440.0
        st = propagate(initialize(els, gravity), t)
        states.append(np.array(st.vector()))
        jd, fr = epoch_to_jd(rec.epoch_year, rec.epoch_days)
        key = jd + fr
        if latest_epoch is None or key > latest_epoch:
            latest_epoch, latest = key, rec
    avg = np.mean(states, axis=0)
    return state_to_tle(avg, t_t_jd, t_t_fr, template=latest, gravity=gravity)


def pseudo_observations(obs_tles, gravity=WGS72, weight=1.0):
    """Each TLE propagated to its own epoch becomes a state observation."""
    from .tle import to_elements

    out = []
    for rec in obs_tles:
        els = to_elements(rec)
        st = propagate(initialize(els, gravity), 0.0)
        out.append(Observation(state=tuple(st.vector()), epoch_jd=els.epoch_jd,
                               epoch_fr=els.epoch_fr, weight=weight))
    return out
