"""Derivatives of the propagated state with respect to mean elements.

A Jacobian here is the 6xK matrix of partials of (x, y, z, vx, vy, vz)
in km and km/s with respect to a chosen subset of the nine element
parameters, evaluated by seeding the element set with Jets and running
initialization plus propagation once.  Central finite differences over
the same pipeline serve as the independent cross-check.
"""

from dataclasses import dataclass

import numpy as np

from . import jets
from .propagator import WGS72, initialize, propagate

__all__ = [
    "PARAM_NAMES",
    "PARAM_FIELDS",
    "DEFAULT_FD_STEPS",
    "FreeParamSet",
    "Jacobian",
    "jacobian",
    "jvp",
    "fd_jacobian",
    "fd_check",
    "stm_tle",
]

# canonical parameter order; names map onto ElementSet fields
PARAM_NAMES = ("n", "e", "i", "raan", "argp", "ma", "bstar", "ndot", "nddot")
PARAM_FIELDS = {
    "n": "no_kozai",
    "e": "ecco",
    "i": "inclo",
    "raan": "nodeo",
    "argp": "argpo",
    "ma": "mo",
    "bstar": "bstar",
    "ndot": "ndot",
    "nddot": "nddot",
}

# central-difference steps per parameter, in each parameter's own unit;
# bstar uses 1e-7 because strong-drag orbits compound the perturbation
# enough for 1e-6 truncation error to show above 1e-5
DEFAULT_FD_STEPS = {
    "n": 1e-9,
    "e": 1e-7,
    "i": 1e-6,
    "raan": 1e-6,
    "argp": 1e-6,
    "ma": 1e-6,
    "bstar": 1e-7,
    "ndot": 1e-12,
    "nddot": 1e-15,
}


def suggest_fd_steps(elements, gravity=WGS72):
    """Per-element tweaks on DEFAULT_FD_STEPS.

    Two adjustments.  The propagation clamps the drag-updated
    eccentricity at 1e-6, so for elements with ecco near that boundary
    a central step of 1e-7 would straddle the branch and differentiate
    across the kink; shrink the step below the gap.  And for perigees
    deep in the drag regime the state is so nonlinear in bstar over
    multi-day horizons that even 1e-7 leaves visible truncation; shrink
    further.
    """
    steps = dict(DEFAULT_FD_STEPS)
    if elements.ecco < 1.3e-6:
        steps["e"] = 4e-8
    a_er = (gravity.xke / elements.no_kozai) ** (2.0 / 3.0)
    perigee_km = (a_er * (1.0 - elements.ecco) - 1.0) * gravity.radiusearthkm
    if perigee_km < 130.0:
        steps["bstar"] = 1e-8
    return steps


@dataclass(frozen=True)
class FreeParamSet:
    """An ordered subset of the element parameters."""

    names: tuple

    def __post_init__(self):
        seen = set()
        for name in self.names:
            if name not in PARAM_FIELDS:
                raise ValueError(
                    "unknown parameter %r (choose from %s)" % (name, ", ".join(PARAM_NAMES))
                )
            if name in seen:
                raise ValueError("parameter %r repeated" % name)
            seen.add(name)

    @classmethod
    def of(cls, *names):
        return cls(tuple(names))

    @classmethod
    def parse(cls, text):
        return cls(tuple(p.strip() for p in text.split(",") if p.strip()))

    @classmethod
    def standard7(cls):
        """The seven parameters the near-earth model actually uses."""
        return cls(("n", "e", "i", "raan", "argp", "ma", "bstar"))

    @classmethod
    def elements6(cls):
        return cls(("n", "e", "i", "raan", "argp", "ma"))

    @classmethod
    def full9(cls):
        return cls(PARAM_NAMES)

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def index(self, name):
        return self.names.index(name)


@dataclass(frozen=True)
class Jacobian:
    """6xK partials with the float state the expansion is anchored at."""

    matrix: np.ndarray
    params: FreeParamSet
    tsince: float
    state: np.ndarray  # flat [x, y, z, vx, vy, vz]


def seeded_elements(elements, params):
    """Copy of the element set with the free parameters seeded as Jets."""
    width = len(params)
    updates = {}
    for slot, name in enumerate(params):
        field = PARAM_FIELDS[name]
        updates[field] = jets.seed(getattr(elements, field), slot, width)
    return elements.replace(**updates)


def jacobian(elements, params=None, tsince=0.0, gravity=WGS72):
    """Differentiate init plus propagate at tsince for the free params.

    The whole pipeline is re-run under Jets, so the initialization
    constants carry their own partials.  An empty parameter set reduces
    to a plain propagation with a 6x0 matrix.
    """
    if params is None:
        params = FreeParamSet.standard7()
    width = len(params)
    if width == 0:
        st = propagate(initialize(elements, gravity), tsince)
        return Jacobian(
            matrix=np.zeros((6, 0)),
            params=params,
            tsince=tsince,
            state=np.array(st.vector()),
        )
    model = initialize(seeded_elements(elements, params), gravity)
    st = propagate(model, tsince)
    comps = (*st.r, *st.v)
    matrix = np.array([jets.partials_of(comp, width) for comp in comps])
    state = np.array([jets.value_of(comp) for comp in comps])
    return Jacobian(matrix=matrix, params=params, tsince=tsince, state=state)


def jvp(elements, direction, tsince, gravity=WGS72):
    """Jacobian-vector product via a single one-wide Jet pass.

    direction maps parameter names to components of the tangent vector.
    """
    updates = {}
    for name, d in direction.items():
        field = PARAM_FIELDS[name]
        updates[field] = jets.Jet(float(getattr(elements, field)), (float(d),))
    seeded = elements.replace(**updates)
    st = propagate(initialize(seeded, gravity), tsince)
    return np.array([jets.partials_of(comp, 1)[0] for comp in (*st.r, *st.v)])


def fd_jacobian(elements, params=None, tsince=0.0, steps=None, gravity=WGS72):
    """Central finite differences through init plus propagate."""
    if params is None:
        params = FreeParamSet.standard7()
    out = np.zeros((6, len(params)))
    for slot, name in enumerate(params):
        h = (steps or {}).get(name, DEFAULT_FD_STEPS[name])
        field = PARAM_FIELDS[name]
        x0 = getattr(elements, field)
        hi = propagate(initialize(elements.replace(**{field: x0 + h}), gravity), tsince)
        lo = propagate(initialize(elements.replace(**{field: x0 - h}), gravity), tsince)
        out[:, slot] = (np.array(hi.vector()) - np.array(lo.vector())) / (2.0 * h)
    return out


def fd_check(elements, params=None, tsince=0.0, steps=None, gravity=WGS72,
             rel_tol=1e-5, abs_floor=1e-9):
    """Compare the Jet Jacobian against central differences.

    Each entry is scored as |ad - fd| over max(|fd|, column scale),
    where the column scale is that parameter's largest FD entry.  The
    column floor matters for entries whose true derivative is zero
    (z-components of the node column, the unused ndot and nddot
    columns): there central differences return only cancellation noise,
    which must be judged against the column's magnitude rather than
    against itself.  Differences at or below abs_floor pass outright.
    A max_dev below rel_tol means the check passed.
    """
    if params is None:
        params = FreeParamSet.standard7()
    ad = jacobian(elements, params, tsince, gravity).matrix
    fd = fd_jacobian(elements, params, tsince, steps, gravity)
    col_scale = np.maximum(np.abs(fd).max(axis=0), abs_floor / rel_tol)
    denom = np.maximum(np.abs(fd), col_scale[None, :])
    diff = np.abs(ad - fd)
    dev = np.where(diff <= abs_floor, 0.0, diff / denom)
    worst = np.unravel_index(np.argmax(dev), dev.shape)
    return {
        "max_dev": float(dev.max()),
        "rel_tol": rel_tol,
        "abs_floor": abs_floor,
        "worst_component": int(worst[0]),
        "worst_param": params.names[worst[1]],
        "ad": ad,
        "fd": fd,
        "passed": bool(dev.max() < rel_tol),
    }


def stm_tle(elements, tsince, gravity=WGS72):
    """6x6 state transition matrix in TLE element space.

    Columns follow (n, e, i, raan, argp, ma); rows are the Cartesian
    state.  This is the sensitivity matrix the element fit inverts.
    """
    return jacobian(elements, FreeParamSet.elements6(), tsince, gravity)
