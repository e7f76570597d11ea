"""Implicit finite-difference solvers for the zero-obstacle problem.

The unknown is ``u = v - phi`` and the problem is

    d_t u - F(D^2 u, x) = f(x) chi_{u > 0},   u >= 0,

with Dirichlet data ``g`` on the lateral boundary and initial data at the
first time level.  Two discretisations are provided:

* :func:`solve_penalized` replaces the constraint by the stiff source
  ``beta_eps(u) = exp(-u / eps)``;
* :func:`solve_obstacle_direct` solves the discrete complementarity problem
  ``min(d_t u - F - f, u) = 0`` by policy iteration, treating the
  projection onto the obstacle as one more control.

Both use backward Euler in time and the standard second-difference stencil
for diagonal controls, which keeps the scheme monotone.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import spsolve
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import NonUniformSourceError, PolicyCycleError, SolverDivergedError
from .grid import Grid, GridFunction

_EXP_CAP = 700.0
_MAX_HALVINGS = 30


def beta(z, eps):
    """Penalty ``exp(-z / eps)`` with the exponent capped to stay finite."""
    return np.exp(np.minimum(-np.asarray(z) / eps, _EXP_CAP))


def _field_on(grid, data, t=None):
    """Evaluate spatial data given as scalar, array or callable ``(*coords[, t])``."""
    if callable(data):
        coords = grid.mesh()
        out = data(*coords) if t is None else data(*coords, t)
    else:
        out = data
    return np.broadcast_to(np.asarray(out, dtype=float), grid.shape).copy()


@dataclass
class ProblemSpec:
    """Zero-obstacle problem on ``grid``.

    ``source``, ``initial`` and ``obstacle`` are nodal arrays, scalars or
    callables of the coordinate arrays; ``boundary`` is a callable
    ``g(*coords, t)``, a nodal array (time independent) or an array of shape
    ``(nt, *grid.shape)``.  ``obstacle`` is only used to report ``v = u + phi``.
    """

    operator: object
    grid: Grid
    source: object
    boundary: object
    initial: object = None
    obstacle: object = 0.0
    name: str = "problem"

    def __post_init__(self):
        self.source = _field_on(self.grid, self.source)
        self.obstacle = _field_on(self.grid, self.obstacle)
        if self.initial is None:
            self.initial = self.boundary_values(0)
        self.initial = _field_on(self.grid, self.initial)
        if not self.c0 > 0:
            raise NonUniformSourceError(f"source must satisfy f <= -c0 < 0, max f = {-self.c0:g}")
        if np.any(self.initial < 0):
            raise ValueError("initial data must be >= 0 (the obstacle is 0 in u-form)")
        bmask = self.grid.boundary_mask()
        g0 = self.boundary_values(0)
        scale = max(1.0, np.abs(g0).max())
        if np.any(g0[bmask] < 0):
            raise ValueError("boundary data must be >= 0 (g >= phi)")
        if np.abs(g0[bmask] - self.initial[bmask]).max() > 1e-9 * scale:
            raise ValueError("initial and boundary data disagree on the boundary at t0")
        if self.operator.n != self.grid.n:
            raise ValueError("operator dimension does not match the grid")

    @property
    def c0(self):
        return float(-self.source.max())

    def boundary_values(self, k):
        """Full nodal array of the boundary data at time level ``k``."""
        g = self.boundary
        t = self.grid.times[k]
        if callable(g):
            return _field_on(self.grid, g, t)
        g = np.asarray(g, dtype=float)
        if g.shape == (self.grid.nt,) + self.grid.shape:
            return g[k].copy()
        return _field_on(self.grid, g)

    def K(self):
        """``max(||u||_inf, ||f||_inf)`` over the data (a lower bound for the class constant)."""
        return float(max(np.abs(self.initial).max(), np.abs(self.source).max()))


@dataclass
class PenaltySchedule:
    epsilons: tuple = (1e-2, 1e-3, 1e-4)
    newton_tol: float = 1e-8
    max_newton: int = 50
    max_policy: int = 50

    def __post_init__(self):
        eps = [float(e) for e in self.epsilons]
        if not eps:
            raise ValueError("penalty schedule needs at least one epsilon")
        if any(e <= 0 or e > 1 for e in eps):
            raise ValueError("epsilons must lie in (0, 1]")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        self.epsilons = tuple(eps)

    def check_floor(self, h, kappa=1.0):
        """Reject penalties thinner than the grid can resolve (``eps >= kappa h^2``)."""
        floor = kappa * h**2
        low = [e for e in self.epsilons if e < floor * (1 - 1e-12)]
        if low:
            raise ValueError(f"epsilons {low} are below the floor kappa*h^2 = {floor:g}")


@dataclass
class SolveReport:
    method: str
    eps: float = None
    n_steps: int = 0
    newton_iterations: list = field(default_factory=list)
    policy_iterations: list = field(default_factory=list)
    final_residual: float = 0.0
    tolerance_used: float = 0.0
    max_h_eps: float = 0.0
    dt_monotonicity_violation: float = 0.0
    oracle_gap: float = None
    wall_time: float = 0.0
    converged: bool = True

    def to_dict(self, full=False):
        d = dict(self.__dict__)
        for key in ("newton_iterations", "policy_iterations"):
            its = np.asarray(d.pop(key), dtype=int)
            d[f"{key}_total"] = int(its.sum())
            d[f"{key}_max"] = int(its.max()) if its.size else 0
            if full:
                d[key] = its.tolist()
        return d


class _Stencil:
    """Index bookkeeping for the interior nodes of a tensor grid."""

    def __init__(self, grid):
        self.grid = grid
        self.n = grid.n
        self.h2 = grid.h**2
        interior = ~grid.boundary_mask()
        flat = np.arange(np.prod(grid.shape)).reshape(grid.shape)
        self.idx = flat[interior]
        self.size = self.idx.size
        self.plus, self.minus = [], []
        strides = [int(np.prod(grid.shape[i + 1:])) for i in range(self.n)]
        for s in strides:
            self.plus.append(self.idx + s)
            self.minus.append(self.idx - s)
        pos = -np.ones(flat.size, dtype=int)
        pos[self.idx] = np.arange(self.size)
        self.pos = pos
        self.banded = self.n == 1

    def d2(self, u):
        """Second differences along each axis at interior nodes, shape ``(n, Nint)``."""
        c = u[self.idx]
        return np.stack([(u[p] + u[m] - 2.0 * c) / self.h2 for p, m in zip(self.plus, self.minus)])

    def solve(self, a, diag, rhs, frozen=None):
        """Solve ``diag_i x_i - sum_axis a_i/h^2 (x_plus + x_minus) = rhs`` on interior nodes.

        Neighbours on the boundary are assumed already moved to ``rhs``.
        Rows flagged in ``frozen`` become identity rows (used for obstacle
        rows of the direct solver).
        """
        off = a / self.h2                                        # (Nint, n)
        if frozen is not None:
            off = np.where(frozen[:, None], 0.0, off)
        if self.banded:
            ab = np.zeros((3, self.size))
            ab[1] = diag
            ab[0, 1:] = -off[:-1, 0]
            ab[2, :-1] = -off[1:, 0]
            return solve_banded((1, 1), ab, rhs, check_finite=False)
        rows, cols, vals = [np.arange(self.size)], [np.arange(self.size)], [diag]
        for i in range(self.n):
            for nb in (self.plus[i], self.minus[i]):
                j = self.pos[nb]
                ok = j >= 0
                rows.append(np.nonzero(ok)[0])
                cols.append(j[ok])
                vals.append(-off[ok, i])
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.size, self.size))
        return spsolve(A.tocsc(), rhs)


class _Discretization:
    def __init__(self, spec):
        self.spec = spec
        self.grid = spec.grid
        self.st = _Stencil(spec.grid)
        pts = spec.grid.points()[self.st.idx]
        self.coef = spec.operator.diagonal_coefficients(pts)        # (K, Nint, n)
        self.offs = spec.operator.offset_values(pts)                # (K, Nint)
        self.f = spec.source.ravel()[self.st.idx]
        self.dt = spec.grid.dt
        self.lam_max = float(self.coef.sum(axis=2).max())
        ar = np.arange(self.st.size)
        self._ar = ar

    def control_values(self, u):
        """``A_a : D^2_h u + c_a`` for every control, shape ``(K, Nint)``."""
        D2 = self.st.d2(u)
        return np.einsum("kpi,ip->kp", self.coef, D2) + self.offs

    def boundary_rhs(self, a, g_full):
        """Contribution of boundary neighbours to the interior equations."""
        st = self.st
        out = np.zeros(st.size)
        for i in range(st.n):
            for nb in (st.plus[i], st.minus[i]):
                b = st.pos[nb] < 0
                out[b] += a[b, i] * g_full[nb[b]] / st.h2
        return out

    def floor_tol(self, u, extra=0.0):
        scale = np.abs(u).max() * (1.0 / self.dt + 4.0 * self.lam_max / self.st.h2)
        return 64.0 * np.finfo(float).eps * (scale + np.abs(self.f).max() + extra)


def _newton_fixed_policy(disc, u, u_prev_int, pol, eps, tol, max_newton):
    """Damped Newton for ``(u - u_prev)/dt - (A:D2 u + c) - f - beta(u) = 0`` with frozen controls."""
    st = disc.st
    a = disc.coef[pol, disc._ar]                                   # (Nint, n)
    c = disc.offs[pol, disc._ar]
    idx = st.idx
    dt = disc.dt

    def residual(v):
        lin = np.einsum("pi,ip->p", a, st.d2(v)) + c
        return (v[idx] - u_prev_int) / dt - lin - disc.f - beta(v[idx], eps)

    G = residual(u)
    rn = np.abs(G).max()
    its = 0
    while rn > tol:
        if its >= max_newton:
            raise SolverDivergedError(f"Newton did not converge: residual {rn:.3e} > {tol:.3e}")
        its += 1
        b = beta(u[idx], eps)
        diag = 1.0 / dt + 2.0 * a.sum(axis=1) / st.h2 + b / eps
        du = st.solve(a, diag, -G)
        step = 1.0
        for _ in range(_MAX_HALVINGS + 1):
            trial = u.copy()
            trial[idx] += step * du
            Gt = residual(trial)
            rt = np.abs(Gt).max()
            if rt < rn:
                break
            step *= 0.5
        u, G, rn = trial, Gt, rt
    return u, rn, its


def _penalized_step(disc, u_guess, u_prev_int, eps, sched, tol):
    u = u_guess
    pol = np.argmax(disc.control_values(u), axis=0)
    newton_total = 0
    for p in range(1, sched.max_policy + 1):
        u, rn, its = _newton_fixed_policy(disc, u, u_prev_int, pol, eps, tol, sched.max_newton)
        newton_total += its
        new_pol = np.argmax(disc.control_values(u), axis=0)
        if np.array_equal(new_pol, pol):
            return u, rn, newton_total, p
        pol = new_pol
    raise PolicyCycleError(f"policy iteration did not settle in {sched.max_policy} sweeps")


def _attach_report(exc, report, k, start):
    """Record the failing step on the partial report and hang it on the exception."""
    report.n_steps = k - 1
    report.converged = False
    report.wall_time = time.perf_counter() - start
    exc.report = report
    exc.step = k


def _history(spec, save_stride):
    grid = spec.grid
    keep = np.arange(0, grid.nt, save_stride)
    if keep[-1] != grid.nt - 1:
        keep = np.append(keep, grid.nt - 1)
    return keep


def solve_penalized(spec, eps, warm_start=None, schedule=None, save_stride=1):
    """Backward-Euler solve of ``d_t u - F(D^2 u, x) = f + beta_eps(u)``.

    Returns ``(GridFunction, SolveReport)``.  ``warm_start`` (a previous
    solution on the same grid, stored at every level) provides the Newton
    initial guess per time level; otherwise the previous level is used.
    """
    sched = schedule or PenaltySchedule(epsilons=(eps,))
    start = time.perf_counter()
    disc = _Discretization(spec)
    grid = spec.grid
    keep = _history(spec, save_stride)
    store = np.empty((len(keep),) + grid.shape)
    slot = {k: i for i, k in enumerate(keep)}
    warm = None
    if warm_start is not None and len(warm_start.times) == grid.nt:
        warm = warm_start.values.reshape(grid.nt, -1)
    report = SolveReport(method="penalized", eps=float(eps))
    u = spec.initial.ravel().copy()
    store[0] = spec.initial
    idx = disc.st.idx
    report.max_h_eps = float(beta(u, eps).max())
    worst_dt = 0.0
    worst_res = 0.0
    tol_used = sched.newton_tol
    for k in range(1, grid.nt):
        g = spec.boundary_values(k).ravel()
        guess = (warm[k] if warm is not None else u).copy()
        bnd = disc.st.pos < 0
        guess[bnd] = g[bnd]
        tol = max(sched.newton_tol, disc.floor_tol(guess, 1.0 / eps))
        tol_used = max(tol_used, tol)
        try:
            u_new, rn, n_its, p_its = _penalized_step(disc, guess, u[idx], eps, sched, tol)
        except (SolverDivergedError, PolicyCycleError) as exc:
            _attach_report(exc, report, k, start)
            raise
        report.newton_iterations.append(n_its)
        report.policy_iterations.append(p_its)
        worst_res = max(worst_res, rn)
        worst_dt = min(worst_dt, float(((u_new - u) / grid.dt).min()))
        report.max_h_eps = max(report.max_h_eps, float(beta(u_new, eps).max()))
        u = u_new
        if k in slot:
            store[slot[k]] = u.reshape(grid.shape)
    report.n_steps = grid.nt - 1
    report.final_residual = float(worst_res)
    report.tolerance_used = float(tol_used)
    report.dt_monotonicity_violation = float(worst_dt)
    report.wall_time = time.perf_counter() - start
    out = GridFunction(grid, store, grid.times[keep],
                       meta={"method": "penalized", "eps": float(eps), "problem": spec.name})
    return out, report


def _direct_step(disc, u, u_prev_int, g_full, sched, tol):
    st, dt, idx = disc.st, disc.dt, disc.st.idx
    for p in range(1, sched.max_policy + 1):
        vals = disc.control_values(u)
        pol = np.argmax(vals, axis=0)
        G = (u[idx] - u_prev_int) / dt - vals[pol, disc._ar] - disc.f
        obstacle = u[idx] < G
        a = disc.coef[pol, disc._ar]
        c = disc.offs[pol, disc._ar]
        diag = np.where(obstacle, 1.0, 1.0 / dt + 2.0 * a.sum(axis=1) / st.h2)
        rhs = np.where(obstacle, 0.0, u_prev_int / dt + c + disc.f + disc.boundary_rhs(a, g_full))
        new = u.copy()
        new[idx] = st.solve(a, diag, rhs, frozen=obstacle)
        vals = disc.control_values(new)
        G = (new[idx] - u_prev_int) / dt - vals.max(axis=0) - disc.f
        res = np.abs(np.minimum(G, new[idx])).max()
        new_obstacle = new[idx] < G
        same = np.array_equal(np.argmax(vals, axis=0), pol) and np.array_equal(new_obstacle, obstacle)
        u = new
        if same and res <= tol:
            return u, res, p
        if same:
            raise SolverDivergedError(f"complementarity residual {res:.3e} > {tol:.3e}")
    raise PolicyCycleError(f"policy iteration did not settle in {sched.max_policy} sweeps")


def solve_obstacle_direct(spec, schedule=None, save_stride=1):
    """Per time step, solve ``min(d_t u - F_h(D^2 u) - f, u) = 0`` by policy iteration."""
    sched = schedule or PenaltySchedule()
    start = time.perf_counter()
    disc = _Discretization(spec)
    grid = spec.grid
    keep = _history(spec, save_stride)
    store = np.empty((len(keep),) + grid.shape)
    slot = {k: i for i, k in enumerate(keep)}
    report = SolveReport(method="direct")
    u = spec.initial.ravel().copy()
    store[0] = spec.initial
    idx = disc.st.idx
    worst_dt, worst_res, tol_used = 0.0, 0.0, sched.newton_tol
    for k in range(1, grid.nt):
        g = spec.boundary_values(k).ravel()
        guess = u.copy()
        bnd = disc.st.pos < 0
        guess[bnd] = g[bnd]
        tol = max(sched.newton_tol, disc.floor_tol(guess))
        tol_used = max(tol_used, tol)
        try:
            u_new, res, p_its = _direct_step(disc, guess, u[idx], g, sched, tol)
        except (SolverDivergedError, PolicyCycleError) as exc:
            _attach_report(exc, report, k, start)
            raise
        report.policy_iterations.append(p_its)
        report.newton_iterations.append(0)
        worst_res = max(worst_res, res)
        worst_dt = min(worst_dt, float(((u_new - u) / grid.dt).min()))
        u = u_new
        if k in slot:
            store[slot[k]] = u.reshape(grid.shape)
    report.n_steps = grid.nt - 1
    report.final_residual = float(worst_res)
    report.tolerance_used = float(tol_used)
    report.dt_monotonicity_violation = float(worst_dt)
    report.wall_time = time.perf_counter() - start
    out = GridFunction(grid, store, grid.times[keep],
                       meta={"method": "direct", "eps": 0.0, "problem": spec.name})
    return out, report


def clip_to_zero(u, threshold):
    """Set values in ``[-threshold, threshold]`` to exactly zero."""
    values = np.where(np.abs(u.values) <= threshold, 0.0, u.values)
    return u.copy(values=values)


def continuation_solve(spec, schedule, oracle=None, save_stride=1, kappa_eps=1.0):
    """Warm-started penalized solves along ``schedule.epsilons``.

    ``oracle`` may be ``True`` (compute the direct solution) or a precomputed
    direct solution; each report then records ``||u_eps - u_direct||_inf``.
    Returns ``(u, reports)`` where ``u`` is the last iterate, clipped to zero
    within ``10 * newton_tol``.
    """
    schedule.check_floor(spec.grid.h, kappa_eps)
    if oracle is True:
        oracle, _ = solve_obstacle_direct(spec, schedule, save_stride=save_stride)
    reports = []
    prev = None
    for eps in schedule.epsilons:
        # warm starts need every time level; intermediate solves keep them all
        last = eps == schedule.epsilons[-1]
        u, rep = solve_penalized(spec, eps, warm_start=prev, schedule=schedule,
                                 save_stride=save_stride if last else 1)
        if oracle is not None:
            match = np.searchsorted(u.times, oracle.times)
            rep.oracle_gap = float(np.abs(u.values[match] - oracle.values).max())
        reports.append(rep)
        prev = u
    u = clip_to_zero(u, 10 * schedule.newton_tol)
    u.meta["schedule"] = list(schedule.epsilons)
    return u, reports


class ObstacleSolver(BaseEstimator):
    """Estimator-style front end to the solvers.

    ``fit(spec)`` solves the problem; ``predict(X)`` interpolates the
    solution at rows ``(x_1, ..., x_n, t)``.

    Parameters
    ----------
    epsilons : tuple of float
        Decreasing penalty schedule (ignored for ``method='direct'``).
    method : {'penalized', 'direct'}
    oracle : bool
        Also compute the direct solution and record per-epsilon gaps.
    save_stride : int
        Keep every ``save_stride``-th time level of the final solution.
    """

    def __init__(self, epsilons=(1e-2, 1e-3, 1e-4), method="penalized", newton_tol=1e-8,
                 max_newton=50, max_policy=50, oracle=False, save_stride=1, kappa_eps=1.0):
        self.epsilons = epsilons
        self.method = method
        self.newton_tol = newton_tol
        self.max_newton = max_newton
        self.max_policy = max_policy
        self.oracle = oracle
        self.save_stride = save_stride
        self.kappa_eps = kappa_eps

    def _schedule(self):
        return PenaltySchedule(tuple(self.epsilons), self.newton_tol, self.max_newton,
                               self.max_policy)

    def fit(self, spec, y=None):
        if self.method not in ("penalized", "direct"):
            raise ValueError(f"unknown method {self.method!r}")
        if int(self.save_stride) < 1:
            raise ValueError("save_stride must be >= 1")
        sched = self._schedule()
        self.oracle_ = None
        if self.method == "direct":
            u, rep = solve_obstacle_direct(spec, sched, save_stride=self.save_stride)
            self.solution_, self.reports_ = u, [rep]
        else:
            oracle = None
            if self.oracle:
                oracle, _ = solve_obstacle_direct(spec, sched, save_stride=self.save_stride)
                self.oracle_ = oracle
            self.solution_, self.reports_ = continuation_solve(
                spec, sched, oracle=oracle, save_stride=self.save_stride,
                kappa_eps=self.kappa_eps)
        self.spec_ = spec
        return self

    def predict(self, X):
        check_is_fitted(self, "solution_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = self.solution_.grid.n
        if X.shape[1] != n + 1:
            raise ValueError(f"expected rows (x_1..x_{n}, t), got shape {X.shape}")
        return np.atleast_1d(self.solution_(X[:, :n], X[:, n]))
