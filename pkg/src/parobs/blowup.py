"""Blow-up sequences at free boundary points and their classification.

Blow-up limits are either half-parabolas ``a ((e . x)_+)^2`` (regular
points) or nonnegative quadratics ``x^T A x`` (singular points).  Fits use
the ``t = 0`` slice of the rescaled field inside the unit ball; the time
oscillation is reported separately.

Normalisation: profiles are written ``w = a s^2``, so ``w'' = 2a``.  For the
heat operator with ``f = -1`` the exact regular profile has ``a = 1/2``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_point
from .errors import (DegenerateFieldError, NotOnBoundaryError, ParobsError,
                     RadiusUnderresolvedError)
from .freeboundary import (DEFAULT_KAPPA_C, DEFAULT_KAPPA_EPS, contact_tolerance, density,
                           extract_contact_set, extract_free_boundary)
from .grid import Grid, rescale

MIN_CELLS = 8
WARN_CELLS = 16

REGULAR = "Regular"
SINGULAR = "Singular"
UNDETERMINED = "Undetermined"


@dataclass
class BlowupSequence:
    center: tuple
    radii: np.ndarray
    fields: list
    ref_grid: Grid
    h: float
    contact_tol: float

    def __len__(self):
        return len(self.fields)


def make_sequence(u, center, r0, rho, K, ref_grid=None, contact=None, cloud=None,
                  max_distance=2.0):
    """Rescale ``u`` at ``center`` by ``r_k = r0 * rho**k``, ``k = 0..K-1``.

    ``center`` must be a free boundary point: ``u(center) <= tol`` and, when a
    cloud is supplied, within parabolic distance ``max_distance * h`` of it.
    """
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    if K < 1:
        raise ValueError("K must be >= 1")
    grid = u.grid
    x0, t0 = center
    x0 = as_point(x0, grid.n)
    tol = contact.tol if contact is not None else contact_tolerance(u)
    value = float(u(x0, t0))
    if value > tol:
        raise NotOnBoundaryError(f"u(center) = {value:g} exceeds the contact tolerance {tol:g}")
    if cloud is not None:
        dx = np.linalg.norm(cloud.points[:, :-1] - x0, axis=1)
        dt = np.sqrt(np.abs(cloud.points[:, -1] - t0))
        dist = float(np.min(np.maximum(dx, dt)))
        if dist > max_distance * grid.h:
            raise NotOnBoundaryError(
                f"center is {dist / grid.h:.2f}h from the free boundary (limit {max_distance}h)")
    radii = r0 * rho ** np.arange(K)
    if radii[-1] < MIN_CELLS * grid.h * (1 - 1e-9):
        raise RadiusUnderresolvedError(
            f"smallest radius {radii[-1]:g} is below {MIN_CELLS}h = {MIN_CELLS * grid.h:g}")
    if radii[-1] < WARN_CELLS * grid.h * (1 - 1e-9):
        warnings.warn(f"smallest radius {radii[-1]:g} resolves fewer than {WARN_CELLS} cells",
                      RuntimeWarning, stacklevel=2)
    ref_grid = Grid.reference(grid.n) if ref_grid is None else ref_grid
    fields = [rescale(u, (x0, t0), r, ref_grid) for r in radii]
    return BlowupSequence((tuple(x0.tolist()), float(t0)), radii, fields, ref_grid, grid.h, tol)


def _ball_slice(v, t=0.0):
    """Coordinates and values of ``v`` at the level nearest ``t`` inside the closed unit ball."""
    X = v.grid.points()
    inside = np.linalg.norm(X, axis=1) <= 1.0 + 1e-9
    y = v.at_time(t).reshape(-1)[inside]
    return X[inside], y


def time_independence_check(v):
    """Largest oscillation in ``t`` of ``v`` over spatial nodes of the unit ball."""
    X = v.grid.points()
    inside = np.linalg.norm(X, axis=1) <= 1.0 + 1e-9
    vals = v.values.reshape(len(v.times), -1)[:, inside]
    return float(np.max(np.ptp(vals, axis=0)))


@dataclass
class HalfParabolaFit:
    a: float
    e: np.ndarray
    residual: float
    time_oscillation: float = 0.0

    kind = "half_parabola"

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "second_derivative": 2 * self.a,
                "e": [float(c) for c in self.e], "residual": self.residual,
                "time_oscillation": self.time_oscillation}


@dataclass
class QuadraticFit:
    A: np.ndarray
    residual: float
    min_eigenvalue: float
    time_oscillation: float = 0.0

    kind = "quadratic"

    def to_dict(self):
        return {"kind": self.kind, "A": np.asarray(self.A).tolist(), "residual": self.residual,
                "raw_min_eigenvalue": self.min_eigenvalue,
                "time_oscillation": self.time_oscillation}


def _scale(y):
    norm = float(np.max(np.abs(y))) if y.size else 0.0
    if norm == 0.0:
        raise DegenerateFieldError("field vanishes on the unit ball; nothing to fit")
    return norm


def _half_parabola_ls(X, y, E):
    """Least-squares ``a >= 0`` and squared error for each direction row of ``E``."""
    phi = np.maximum(X @ E.T, 0.0) ** 2
    pp = np.einsum("pd,pd->d", phi, phi)
    py = phi.T @ y
    a = np.where(pp > 0, np.maximum(py, 0.0) / np.where(pp > 0, pp, 1.0), 0.0)
    sse = y @ y - 2 * a * py + a**2 * pp
    return a, sse


def fit_half_parabola(v, n_directions=4096):
    """Fit ``a ((e . x)_+)^2`` to the ``t = 0`` slice of ``v`` on the unit ball.

    Directions: both unit vectors in 1D; in 2D a uniform grid of
    ``n_directions`` angles refined by a bounded scalar search around the
    best grid angle.  ``a`` is the closed-form least-squares coefficient.
    """
    X, y = _ball_slice(v)
    norm = _scale(y)
    n = v.grid.n
    if n == 1:
        E = np.array([[1.0], [-1.0]])
        a, sse = _half_parabola_ls(X, y, E)
        j = int(np.argmin(sse))
        e, a_best = E[j], float(a[j])
    else:
        theta = 2 * np.pi * np.arange(n_directions) / n_directions
        E = np.column_stack([np.cos(theta), np.sin(theta)])
        a, sse = _half_parabola_ls(X, y, E)
        j = int(np.argmin(sse))
        step = 2 * np.pi / n_directions

        def objective(th):
            return float(_half_parabola_ls(X, y, np.array([[np.cos(th), np.sin(th)]]))[1][0])

        res = minimize_scalar(objective, bounds=(theta[j] - step, theta[j] + step),
                              method="bounded", options={"xatol": 1e-10})
        th = res.x if res.fun <= sse[j] else theta[j]
        e = np.array([np.cos(th), np.sin(th)])
        a_best = float(_half_parabola_ls(X, y, e[None])[0][0])
    resid = float(np.max(np.abs(y - a_best * np.maximum(X @ e, 0.0) ** 2)) / norm)
    return HalfParabolaFit(a_best, e, resid, time_independence_check(v))


def _quadratic_design(X):
    n = X.shape[1]
    cols, index = [], []
    for i in range(n):
        for j in range(i, n):
            cols.append(X[:, i] * X[:, j] * (1.0 if i == j else 2.0))
            index.append((i, j))
    return np.column_stack(cols), index


def fit_quadratic(v):
    """Least-squares ``x^T A x`` fit on the ``t = 0`` slice, projected onto ``A >= 0``.

    The residual is computed with the projected matrix, so a fit that needs
    negative curvature is penalised automatically.
    """
    X, y = _ball_slice(v)
    norm = _scale(y)
    n = v.grid.n
    D, index = _quadratic_design(X)
    coef = np.linalg.lstsq(D, y, rcond=None)[0]
    A = np.zeros((n, n))
    for c, (i, j) in zip(coef, index):
        A[i, j] = A[j, i] = c
    w, V = np.linalg.eigh(A)
    A_psd = (V * np.maximum(w, 0.0)) @ V.T
    resid = float(np.max(np.abs(y - np.einsum("pi,ij,pj->p", X, A_psd, X))) / norm)
    return QuadraticFit(A_psd, resid, float(w.min()), time_independence_check(v))


@dataclass
class Classification:
    verdict: str
    evidence: dict = field(default_factory=dict)
    fit: object = None

    def to_dict(self):
        return {"verdict": self.verdict, "evidence": self.evidence,
                "fit": None if self.fit is None else self.fit.to_dict()}


def blowup_densities(u, seq, contact=None):
    """Contact density of ``u`` in ``Q_r(center)`` for every radius of ``seq``."""
    tol = seq.contact_tol if contact is None else contact.tol
    return np.array([density(u, tol, seq.center, r) for r in seq.radii])


def classify(seq, densities, class_tol=0.05, regular_window=(0.45, 0.55), singular_max=0.1,
             bounds=None):
    """Regular / Singular / Undetermined verdict from per-radius fits and densities.

    Regular needs half-parabola residuals ``<= class_tol`` and densities in
    ``regular_window`` at the two smallest radii.  Singular needs quadratic
    residuals ``<= class_tol`` at the two smallest radii, density at the
    smallest radius ``<= singular_max`` and a non-increasing density trend
    (within the ``2h/r`` node noise).  Everything else is Undetermined.

    ``bounds`` may hold ``c0``, ``lam``, ``Lam`` and ``K``; a Regular verdict
    then also records whether ``a`` lies in ``[0.8 c0/(2 Lam), 1.2 K/(2 lam)]``.
    """
    if len(seq) < 3:
        raise ValueError("classification needs at least 3 radii")
    densities = np.asarray(densities, dtype=float)
    hp, qf = [], []
    for v in seq.fields:
        try:
            hp.append(fit_half_parabola(v))
        except DegenerateFieldError:
            hp.append(None)
        try:
            qf.append(fit_quadratic(v))
        except DegenerateFieldError:
            qf.append(None)
    hp_res = [np.inf if f is None else f.residual for f in hp]
    q_res = [np.inf if f is None else f.residual for f in qf]
    noise = 2 * seq.h / seq.radii
    lo, hi = regular_window
    hp_ok = all(r <= class_tol for r in hp_res[-2:])
    q_ok = all(r <= class_tol for r in q_res[-2:])
    d_regular = all(lo <= d <= hi for d in densities[-2:])
    d_singular = bool(densities[-1] <= singular_max
                      and densities[-1] <= densities[-2] + noise[-1])
    evidence = {
        "radii": seq.radii.tolist(),
        "half_parabola_residuals": hp_res,
        "quadratic_residuals": q_res,
        "densities": densities.tolist(),
        "half_parabola_fits": [None if f is None else f.to_dict() for f in hp],
        "quadratic_fits": [None if f is None else f.to_dict() for f in qf],
        "class_tol": class_tol,
        "regular_window": list(regular_window),
        "singular_max": singular_max,
    }
    regular = hp_ok and d_regular
    singular = q_ok and d_singular
    if regular and not singular:
        verdict, fit = REGULAR, hp[-1]
        if bounds is not None:
            a_lo = 0.8 * bounds["c0"] / (2 * bounds["Lam"])
            a_hi = 1.2 * bounds["K"] / (2 * bounds["lam"])
            evidence["a_interval"] = [a_lo, a_hi]
            evidence["a_in_interval"] = bool(a_lo <= fit.a <= a_hi)
            # literal bound a >= c0 / Lam, reported for comparison only
            evidence["a_literal_lower_bound"] = bounds["c0"] / bounds["Lam"]
    elif singular and not regular:
        verdict, fit = SINGULAR, qf[-1]
    else:
        verdict = UNDETERMINED
        fit = None
        reasons = []
        if hp_ok and not d_regular:
            reasons.append("half-parabola fits but density is not near 1/2")
        if q_ok and not d_singular:
            reasons.append("quadratic fits but density does not vanish")
        if not hp_ok and not q_ok:
            reasons.append("neither family fits within class_tol")
        if regular and singular:
            reasons.append("both families pass")
        evidence["reasons"] = reasons
    return Classification(verdict, evidence, fit)


class BlowupClassifier(BaseEstimator):
    """Classify free boundary points of a solved field.

    ``fit(u)`` extracts the contact set and boundary cloud; ``predict``
    takes a list of centers ``(x0, t0)`` and returns verdict strings.
    Centers that are not boundary points, or whose rescalings leave the
    grid, are reported as Undetermined.
    """

    def __init__(self, r0=0.25, rho=0.5, K=3, class_tol=0.05, regular_window=(0.45, 0.55),
                 singular_max=0.1, kappa_c=DEFAULT_KAPPA_C, kappa_eps=DEFAULT_KAPPA_EPS,
                 ref_nodes_per_unit=32):
        self.r0 = r0
        self.rho = rho
        self.K = K
        self.class_tol = class_tol
        self.regular_window = regular_window
        self.singular_max = singular_max
        self.kappa_c = kappa_c
        self.kappa_eps = kappa_eps
        self.ref_nodes_per_unit = ref_nodes_per_unit

    def fit(self, u, y=None):
        self.field_ = u
        self.contact_ = extract_contact_set(u, self.kappa_c, self.kappa_eps)
        try:
            self.cloud_ = extract_free_boundary(u, self.contact_)
        except ParobsError:
            self.cloud_ = None
        self.ref_grid_ = Grid.reference(u.grid.n, self.ref_nodes_per_unit)
        return self

    def classify_point(self, center, bounds=None):
        check_is_fitted(self, "field_")
        seq = make_sequence(self.field_, center, self.r0, self.rho, self.K, self.ref_grid_,
                            self.contact_, self.cloud_)
        dens = blowup_densities(self.field_, seq, self.contact_)
        return classify(seq, dens, self.class_tol, self.regular_window, self.singular_max,
                        bounds)

    def predict(self, X):
        check_is_fitted(self, "field_")
        self.classifications_ = []
        out = []
        for center in X:
            try:
                c = self.classify_point(center)
            except ParobsError as exc:
                c = Classification(UNDETERMINED, {"error": f"{type(exc).__name__}: {exc}"})
            self.classifications_.append(c)
            out.append(c.verdict)
        return np.array(out, dtype=object)
