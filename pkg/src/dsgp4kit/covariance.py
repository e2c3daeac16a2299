"""Covariance propagation through the propagator's linearization.

Covariances live in one of two bases: the six TLE mean elements
(n, e, i, raan, argp, ma) or the Cartesian TEME state (km, km/s).
Propagation is the similarity transform P -> J P J^T with J the
element-space state transition matrix, symmetrized after every step so
the invariant stays exactly testable.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .gradients import Jacobian, stm_tle
from .propagator import WGS72

__all__ = [
    "BASIS_TLE",
    "BASIS_CARTESIAN",
    "CovarianceError",
    "ShapeMismatch",
    "NonPsdInput",
    "Covariance",
    "propagate_covariance",
    "similarity_transform",
    "monte_carlo_covariance",
    "save_covariance",
    "load_covariance",
]

BASIS_TLE = "tle-elements"
BASIS_CARTESIAN = "cartesian-teme"

_BASIS_UNITS = {
    BASIS_TLE: ("rad/min", "1", "rad", "rad", "rad", "rad"),
    BASIS_CARTESIAN: ("km", "km", "km", "km/s", "km/s", "km/s"),
}

# type invariants, also reused by the acceptance checks
SYMMETRY_RTOL = 1e-12
EIGEN_FLOOR = -1e-10


class CovarianceError(ValueError):
    pass


class ShapeMismatch(CovarianceError):
    pass


class NonPsdInput(CovarianceError):
    pass


@dataclass
class Covariance:
    matrix: np.ndarray
    basis: str
    epoch: float = 0.0  # tsince in minutes relative to the element epoch
    units: tuple = field(default=None)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeMismatch("covariance must be square, got %r" % (m.shape,))
        self.matrix = m
        if self.units is None:
            default = _BASIS_UNITS.get(self.basis)
            if default is not None and m.shape[0] == len(default):
                self.units = default
            else:
                self.units = ("?",) * m.shape[0]

    @property
    def dim(self):
        return self.matrix.shape[0]

    def symmetry_defect(self):
        """max |P - P^T| relative to the largest entry magnitude."""
        scale = np.abs(self.matrix).max()
        if scale == 0.0:
            return 0.0
        return float(np.abs(self.matrix - self.matrix.T).max() / scale)

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T)).min())

    def is_numerically_psd(self, floor=EIGEN_FLOOR):
        """Eigenvalue floor rather than Cholesky, so rank deficiency passes."""
        tr = float(np.trace(self.matrix))
        return self.min_eigenvalue() >= floor * max(tr, 0.0)

    def validate(self):
        if self.symmetry_defect() > SYMMETRY_RTOL:
            raise NonPsdInput("covariance asymmetric beyond %g relative" % SYMMETRY_RTOL)
        if not self.is_numerically_psd():
            raise NonPsdInput("covariance has eigenvalue below the PSD floor")
        return self

    def symmetrized(self):
        return Covariance(0.5 * (self.matrix + self.matrix.T), self.basis,
                          self.epoch, self.units)

    def to_json_dict(self):
        return {
            "basis": self.basis,
            "epoch": self.epoch,
            "units": list(self.units),
            "matrix": [[float(x) for x in row] for row in self.matrix],
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            matrix=np.array(d["matrix"], dtype=np.float64),
            basis=d["basis"],
            epoch=float(d.get("epoch", 0.0)),
            units=tuple(d["units"]) if "units" in d else None,
        )


def save_covariance(cov, path):
    with open(path, "w") as f:
        json.dump(cov.to_json_dict(), f, indent=1)
        f.write("\n")


def load_covariance(path):
    with open(path) as f:
        return Covariance.from_json_dict(json.load(f))


def similarity_transform(P, J, basis=None):
    """J P J^T with the basis tag updated and symmetry enforced.

    J is either a gradients.Jacobian (whose output basis is Cartesian
    TEME) or a plain matrix, in which case the target basis must be
    named explicitly.
    """
    if isinstance(J, Jacobian):
        mat = J.matrix
        if basis is None:
            basis = BASIS_CARTESIAN
    else:
        mat = np.asarray(J, dtype=np.float64)
        if basis is None:
            raise CovarianceError("target basis required for a raw matrix")
    if mat.ndim != 2 or mat.shape[1] != P.dim:
        raise ShapeMismatch(
            "jacobian %r does not left-multiply a %dx%d covariance"
            % (mat.shape, P.dim, P.dim)
        )
    out = mat @ P.matrix @ mat.T
    return Covariance(0.5 * (out + out.T), basis, P.epoch)


def propagate_covariance(P0, elements, tsince, gravity=WGS72):
    """Map a TLE-element covariance at epoch to Cartesian TEME at tsince."""
    if P0.basis != BASIS_TLE:
        raise CovarianceError("expected basis %r, got %r" % (BASIS_TLE, P0.basis))
    if P0.dim != 6:
        raise ShapeMismatch("element covariance must be 6x6")
    P0.validate()
    J = stm_tle(elements, tsince, gravity)
    out = similarity_transform(P0, J)
    return Covariance(out.matrix, BASIS_CARTESIAN, epoch=tsince)


def monte_carlo_covariance(elements, P0, tsince, n=100000, seed=0, gravity=WGS72):
    """Brute-force covariance of n perturbed propagations.

    Samples element perturbations from N(0, P0), propagates each
    through the batch kernel, and returns the sample covariance of the
    Cartesian states.  This is the oracle the linearized propagation is
    judged against in the small-perturbation regime.
    """
    from .batch import BatchJob, run_batch
    from .gradients import PARAM_FIELDS
    from .propagator import initialize

    if P0.basis != BASIS_TLE or P0.dim != 6:
        raise CovarianceError("Monte-Carlo sampling needs a 6x6 element covariance")
    w, V = np.linalg.eigh(0.5 * (P0.matrix + P0.matrix.T))
    L = V @ np.diag(np.sqrt(np.clip(w, 0.0, None)))
    rng = np.random.default_rng(seed)
    dx = rng.standard_normal((n, 6)) @ L.T

    names = ("n", "e", "i", "raan", "argp", "ma")
    models = []
    for k in range(n):
        updates = {}
        for j, name in enumerate(names):
            fieldname = PARAM_FIELDS[name]
            updates[fieldname] = getattr(elements, fieldname) + dx[k, j]
        models.append(initialize(elements.replace(**updates), gravity))
    job = BatchJob.pairs(models, [[float(tsince)]] * n)
    res = run_batch(job, workers=1)
    if res.error_count:
        raise CovarianceError("%d perturbed propagations failed" % res.error_count)
    states = np.hstack([res.r, res.v])
    mean = states.mean(axis=0)
    centered = states - mean
    cov = centered.T @ centered / (n - 1)
    return Covariance(0.5 * (cov + cov.T), BASIS_CARTESIAN, epoch=float(tsince))
