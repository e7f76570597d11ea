"""Quantitative estimates measured on solved or planted fields.

Every function returns an :class:`EstimateReport` whose table carries the
raw per-radius (or per-point) measurements, so the fitted constants can be
recomputed from the table alone.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._validation import as_point, unit_vector
from .errors import NegativeFieldError
from .freeboundary import _write_csv, contact_tolerance
from .grid import Cylinder, _jsonable, cylinder_stats, cylinder_values, spatial_derivatives

BISECTION_TOL = 1e-3
NOISE_FLOOR = 1e-8


@dataclass
class EstimateReport:
    name: str
    columns: list
    table: list
    constants: dict = field(default_factory=dict)
    passed: bool = True
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return _jsonable({"name": self.name, "columns": self.columns, "table": self.table,
                          "constants": self.constants, "passed": bool(self.passed),
                          "params": self.params})

    def save(self, directory, spec_name):
        """Write ``{spec_name}_{name}.json`` and ``.csv`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = directory / f"{spec_name}_{self.name}"
        js = stem.with_suffix(".json")
        js.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        cs = stem.with_suffix(".csv")
        _write_csv(cs, self.columns, self.table)
        return [js, cs]


def _grid_params(u):
    return {"h": u.grid.h, "dt": u.time_step, "n": u.grid.n}


def _center(center, n):
    x0, t0 = center
    return as_point(x0, n), float(t0)


# -- growth ------------------------------------------------------------------

def growth_and_nondegeneracy(u, fb_point, radii, slope_window=(1.9, 2.1), c_min=None):
    """Sup of ``u`` over ``Q_r`` and ``Q_r^-`` at a free boundary point.

    ``slope`` is the least-squares log-log slope of ``sup_{Q_r} u`` against
    ``r``; ``C = max sup/r^2`` and ``c = min sup^-/r^2``.  Passes when the
    slope lies in ``slope_window`` and, if given, ``c >= c_min``.
    """
    radii = np.sort(np.asarray(radii, dtype=float))
    h = u.grid.h
    if radii[0] < 4 * h * (1 - 1e-9):
        raise ValueError(f"radii must be >= 4h = {4 * h:g}")
    x0, t0 = _center(fb_point, u.grid.n)
    rows = []
    for r in radii:
        s = cylinder_stats(u, Cylinder(x0, t0, r, "Q")).sup
        sm = cylinder_stats(u, Cylinder(x0, t0, r, "Q-")).sup
        rows.append([r, s, sm, s / r**2, sm / r**2])
    tab = np.array(rows)
    slope = float(np.polyfit(np.log(tab[:, 0]), np.log(tab[:, 1]), 1)[0]) \
        if np.all(tab[:, 1] > 0) else float("nan")
    slope_minus = float(np.polyfit(np.log(tab[:, 0]), np.log(tab[:, 2]), 1)[0]) \
        if np.all(tab[:, 2] > 0) else float("nan")
    C, c = float(tab[:, 3].max()), float(tab[:, 4].min())
    passed = bool(slope_window[0] <= slope <= slope_window[1])
    if c_min is not None:
        passed = passed and c >= c_min
    return EstimateReport(
        "growth", ["r", "sup_Q", "sup_Q_minus", "sup_Q_over_r2", "sup_Q_minus_over_r2"],
        tab.tolist(), {"slope": slope, "slope_minus": slope_minus, "C": C, "c": c},
        passed, dict(_grid_params(u), center=[x0.tolist(), t0], slope_window=list(slope_window),
                     c_min=c_min))


# -- derivative norms --------------------------------------------------------

def _near_boundary(mask, n, cells=1, in_time=False):
    """Nodes whose contact status differs from a node within ``cells`` steps along an axis."""
    near = np.zeros_like(mask)
    axes = [mask.ndim - n + i for i in range(n)] + ([0] if in_time else [])
    for ax in axes:
        for s in range(1, cells + 1):
            if mask.shape[ax] <= s:
                continue
            a = [slice(None)] * mask.ndim
            b = [slice(None)] * mask.ndim
            a[ax], b[ax] = slice(s, None), slice(None, -s)
            d = mask[tuple(a)] != mask[tuple(b)]
            near[tuple(a)] |= d
            near[tuple(b)] |= d
    return near


def _region_derivatives(u, region):
    """Derivative fields on the levels of ``region`` (with one extra level for d/dt)."""
    k0, k1, _, smask, _ = region.realize(u)
    if k1 <= k0 or not smask.any():
        raise ValueError(f"region {region} contains no grid nodes")
    ka = max(k0 - 1, 0)
    slab = u.values[ka:k1]
    grad, hess = spatial_derivatives(slab, u.grid.h, u.grid.n)
    dt_u = np.empty_like(slab)
    steps = np.diff(u.times[ka:k1]).reshape((-1,) + (1,) * u.grid.n)
    if len(slab) > 1:
        dt_u[1:] = np.diff(slab, axis=0) / steps
        dt_u[0] = dt_u[1]
    else:
        dt_u[:] = 0.0
    off = k0 - ka
    return slab[off:], grad[off:], hess[off:], dt_u[off:], smask, slab


def _norms(u, region, exclude_cells, contact_tol):
    vals, grad, hess, dt_u, smask, slab = _region_derivatives(u, region)
    n = u.grid.n
    tol = contact_tolerance(u) if contact_tol is None else contact_tol
    full_mask = slab <= tol
    near_space = _near_boundary(full_mask, n, exclude_cells)
    near_time = near_space | _near_boundary(full_mask, n, 0, in_time=True)
    off = len(slab) - len(vals)
    keep = ~near_space[off:] & smask[None]
    keep_t = ~near_time[off:] & smask[None]
    h_abs = np.abs(hess).max(axis=(-1, -2))
    sup_h = float(h_abs[keep].max()) if keep.any() else 0.0
    sup_t = float(np.abs(dt_u)[keep_t].max()) if keep_t.any() else 0.0
    return sup_t, sup_h


def regularity_norms(u, region, exclude_cells=1, contact_tol=None, u_refined=None,
                     ratio_window=(0.8, 1.25)):
    """``sup |d_t u|`` and the largest absolute Hessian entry over ``region``.

    Nodes within ``exclude_cells`` cells of a contact/positive switch are
    left out; second differences across the kink there measure the stencil,
    not ``u``.  With ``u_refined`` (same problem at ``h/2``) the report also
    holds the refinement ratios, and passes only if both lie in
    ``ratio_window``.
    """
    if not region.inside(u.grid, u.times):
        raise ValueError("region must lie inside the grid")
    sup_t, sup_h = _norms(u, region, exclude_cells, contact_tol)
    rows = [[u.grid.h, sup_t, sup_h]]
    constants = {"sup_dt": sup_t, "sup_hessian": sup_h, "C": sup_t + sup_h}
    passed = True
    if u_refined is not None:
        ft, fh = _norms(u_refined, region, exclude_cells, contact_tol)
        rows.append([u_refined.grid.h, ft, fh])
        rt, rh = _ratio(sup_t, ft), _ratio(sup_h, fh)
        constants.update(ratio_dt=rt, ratio_hessian=rh)
        passed = all(ratio_window[0] <= q <= ratio_window[1] for q in (rt, rh))
    return EstimateReport("regularity", ["h", "sup_dt", "sup_hessian"], rows, constants, passed,
                          dict(_grid_params(u), region=_cyl_dict(region),
                               exclude_cells=exclude_cells))


def _ratio(coarse, fine, floor=NOISE_FLOOR):
    # norms at round-off level (e.g. d_t u of a steady state) count as zero
    coarse, fine = (v if v > floor else 0.0 for v in (coarse, fine))
    if coarse > 0:
        return fine / coarse
    return 1.0 if fine == 0 else float("inf")


def _cyl_dict(c):
    return {"x0": list(c.x0), "t0": c.t0, "r": c.r, "variant": c.variant}


# -- log envelopes -----------------------------------------------------------

def fit_log_envelope(radii, values):
    """Fit ``|m(r)| <= C |log r|^{-eps}`` and return ``(C, eps)``.

    ``eps`` is the least-squares slope of ``log|m|`` against ``-log|log r|``
    over the nonzero samples; ``C`` is then the smallest constant for which
    the envelope dominates every sample.  All-zero samples give ``(0, None)``;
    a single nonzero sample gives ``eps = None``.
    """
    r = np.asarray(radii, dtype=float)
    m = np.abs(np.asarray(values, dtype=float))
    if np.any((r <= 0) | (r >= 1)):
        raise ValueError("radii must lie in (0, 1)")
    L = np.abs(np.log(r))
    nz = m > 0
    if not nz.any():
        return 0.0, None
    if nz.sum() < 2:
        return float(m.max()), None
    slope, _ = np.polyfit(-np.log(L[nz]), np.log(m[nz]), 1)
    eps = float(slope)
    C = float(np.max(m * L**eps))
    return C, eps


def _second_directional(hess, directions):
    return np.einsum("...ij,di,dj->...d", hess, directions, directions)


def _direction_grid(n, count=16):
    if n == 1:
        return np.array([[1.0]])
    th = np.pi * np.arange(count) / count
    return np.column_stack([np.cos(th), np.sin(th)])


def log_envelope_fit(u, fb_point, quantity, radii, norm_bound=None, n_directions=16):
    """Per-radius extremes near a boundary point and their ``C |log r|^{-eps}`` envelope.

    ``quantity`` is ``"min_second_derivative"`` (minimum of ``d_ee u`` over a
    direction grid; only negative parts count) or ``"max_time_derivative"``
    (maximum of ``d_t u``; only positive parts count).  Passes when the
    envelope has ``eps > 0`` (or every sample vanishes) and, with
    ``norm_bound`` given, ``C <= 10 * norm_bound``.
    """
    if quantity not in ("min_second_derivative", "max_time_derivative"):
        raise ValueError(f"unknown quantity {quantity!r}")
    radii = np.sort(np.asarray(radii, dtype=float))
    if len(radii) < 2 or radii[-1] / radii[0] < 8 * (1 - 1e-9):
        raise ValueError("radii must span at least 3 octaves")
    x0, t0 = _center(fb_point, u.grid.n)
    dirs = _direction_grid(u.grid.n, n_directions)
    rows = []
    for r in radii:
        _, _, hess, dt_u, smask, _ = _region_derivatives(u, Cylinder(x0, t0, r))
        if quantity == "min_second_derivative":
            m = float(_second_directional(hess[:, smask], dirs).min())
            part = max(-m, 0.0)
        else:
            m = float(dt_u[:, smask].max())
            part = max(m, 0.0)
        rows.append([r, m, part])
    tab = np.array(rows)
    C, eps = fit_log_envelope(tab[:, 0], tab[:, 2])
    degenerate = bool(np.all(tab[:, 2] == 0))
    env = C * np.abs(np.log(tab[:, 0])) ** (-(eps or 0.0))
    dominated = bool(np.all(tab[:, 2] <= env * (1 + 1e-12)))
    passed = degenerate or (eps is not None and eps > 0 and dominated)
    if norm_bound is not None:
        passed = passed and C <= 10 * norm_bound
    monotone = bool(np.all(np.diff(tab[:, 1]) >= 0)) if quantity == "max_time_derivative" \
        else None
    return EstimateReport(
        f"envelope_{quantity}", ["r", "extreme", "envelope_part"], tab.tolist(),
        {"C_env": C, "eps_env": eps, "degenerate": degenerate, "dominated": dominated,
         "increasing_in_r": monotone},
        passed, dict(_grid_params(u), center=[x0.tolist(), t0], norm_bound=norm_bound))


# -- monotonicity and dominance ---------------------------------------------

def directional_monotonicity(u, sigma, region):
    """Minimum of ``d_sigma u - d_t u - u`` over ``region``.

    ``sigma = (spatial direction, time component)``; the spatial part must
    be a unit vector.
    """
    s_x, s_t = sigma
    n = u.grid.n
    s_x = as_point(s_x, n)
    if abs(np.linalg.norm(s_x) - 1.0) > 1e-9:
        raise ValueError("sigma must have a unit spatial part")
    vals, grad, _, dt_u, smask, _ = _region_derivatives(u, region)
    q = grad @ s_x + s_t * dt_u - dt_u - vals
    qs = q[:, smask]
    k, j = np.unravel_index(np.argmin(qs), qs.shape)
    pts = u.grid.points()[smask.reshape(-1)]
    k0 = region.realize(u)[0]
    where = pts[j].tolist() + [float(u.times[k0 + k])]
    m = float(qs.min())
    names = ["x"] if n == 1 else [f"x{i + 1}" for i in range(n)]
    return EstimateReport("directional_monotonicity", ["min_value"] + names + ["t"],
                          [[m] + where], {"min": m}, m >= 0,
                          dict(_grid_params(u), sigma=[s_x.tolist(), float(s_t)],
                               region=_cyl_dict(region)))


def gradient_dominance(u, region, mode="time_over_gradient", e=None, tol=0.0,
                       exclude_contact=True, exclude_cells=1, contact_tol=None):
    """Largest ``c >= 0`` with ``q - c |grad u| >= -tol`` on ``region``.

    ``q`` is ``d_t u`` (``mode="time_over_gradient"``) or ``d_ee u``
    (``mode="second_derivative_over_gradient"``).  Contact nodes and nodes
    within ``exclude_cells`` of the free boundary are dropped when
    ``exclude_contact`` is set.  ``c`` is found by bisection to 1e-3; it is
    exactly 0 when ``q`` vanishes identically, and ``inf`` when the
    gradient does.
    """
    n = u.grid.n
    vals, grad, hess, dt_u, smask, slab = _region_derivatives(u, region)
    if mode == "time_over_gradient":
        q = dt_u
    elif mode == "second_derivative_over_gradient":
        if e is None:
            raise ValueError("second_derivative_over_gradient needs a direction e")
        e = unit_vector(e, n)
        q = np.einsum("...ij,i,j->...", hess, e, e)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    keep = np.broadcast_to(smask, vals.shape).copy()
    if exclude_contact:
        ctol = contact_tolerance(u) if contact_tol is None else contact_tol
        full = slab <= ctol
        near = _near_boundary(full, n, exclude_cells)
        off = len(slab) - len(vals)
        keep &= ~(full[off:] | near[off:])
    qk = q[keep]
    gk = np.linalg.norm(grad, axis=-1)[keep]
    params = dict(_grid_params(u), region=_cyl_dict(region), mode=mode, tol=tol,
                  e=None if e is None else list(e), exclude_contact=exclude_contact)
    if qk.size == 0:
        raise ValueError("no nodes left in the region after exclusions")
    if np.all(qk == 0):
        c = 0.0
    elif np.all(gk == 0):
        c = float("inf")
    else:
        def ok(c):
            return bool(np.all(qk - c * gk >= -tol))

        lo = 0.0
        if not ok(lo):
            c = 0.0
        else:
            pos = gk > 0
            hi = float(np.max((qk[pos] + tol) / gk[pos])) + 1.0
            while hi - lo > BISECTION_TOL:
                mid = 0.5 * (lo + hi)
                if ok(mid):
                    lo = mid
                else:
                    hi = mid
            c = lo
    feasible = bool(np.all(qk - c * gk >= -tol)) if np.isfinite(c) else True
    return EstimateReport("gradient_dominance", ["c", "nodes"], [[c, int(qk.size)]],
                          {"c": c, "feasible_at_zero": bool(np.all(qk >= -tol))},
                          feasible, params)


# -- Harnack -----------------------------------------------------------------

def _cylinder_weights(u, radius, half_height, cube=False):
    """Time and space averaging weights of a cylinder on the node lattice.

    Nodes on the cylinder boundary get half weight, as in cylinder measures.
    """
    h, dt = u.grid.h, u.time_step
    n = u.grid.n
    ks = int(np.floor(radius / h + 1e-9))
    kt = int(np.floor(half_height / dt + 1e-9))
    offs = np.arange(-ks, ks + 1) * h
    grids = np.meshgrid(*([offs] * n), indexing="ij")
    if cube:
        dist = np.max(np.abs(np.stack(grids)), axis=0)
    else:
        dist = np.sqrt(sum(g**2 for g in grids))
    tolx = 1e-9 * max(h, radius)
    sw = np.where(dist <= radius + tolx, np.where(np.abs(dist - radius) <= tolx, 0.5, 1.0), 0.0)
    toff = np.abs(np.arange(-kt, kt + 1) * dt)
    tolt = 1e-9 * max(dt, half_height)
    tw = np.where(np.abs(toff - half_height) <= tolt, 0.5, 1.0)
    return tw / tw.sum(), sw / sw.sum()


def _sliding_mean(values, tw, sw):
    """Mean over a product window: time weights ``tw`` (axis 0) times spatial weights ``sw``."""
    out = ndimage.correlate1d(values, tw, axis=0, mode="nearest")
    if sw.ndim == 1:
        return ndimage.correlate1d(out, sw, axis=1, mode="nearest")
    return ndimage.correlate(out, sw[None], mode="nearest")


def harnack_ratios(u, center, r, C0=0.0, p=0.5, deltas=(0.2, 0.1, 0.05), cube=False):
    """Harnack, weak Harnack and iterated weak Harnack ratios of a nonnegative field.

    ``ratio1 = sup_{D-_{r/2}} u / (inf_{D+_{r/2}} u + r^2 C0)`` and ``ratio2``
    replaces the sup by the ``L^p`` mean.  For each ``delta`` the worst
    ``L^p`` mean over cylinders ``Q_{delta r}(x, t)`` with centres in
    ``B_{(1-2 delta) r}(x0) x (t0 - (1 - 4 delta^2) r^2, t0 - 3 r^2 / 4)``,
    divided by ``inf_{Q+_{r/2}} u + r^2 C0``, gives the iterated ratio; the
    log-log slope of those ratios against ``1/delta`` is the empirical ``m``.
    """
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    n = u.grid.n
    x0, t0 = _center(center, n)
    vals, _ = cylinder_values(u, Cylinder(x0, t0, r, "Q"))
    if vals.min() < 0:
        raise NegativeFieldError(f"u takes the negative value {vals.min():g} on Q_r")
    shift = r**2 * C0
    dm_vals, dm_w = cylinder_values(u, Cylinder(x0, t0, r / 2, "D-"))
    dp_vals, _ = cylinder_values(u, Cylinder(x0, t0, r / 2, "D+"))
    denom = float(dp_vals.min()) + shift
    sup_num = float(dm_vals.max())
    lp_num = float((np.sum(dm_w * dm_vals**p) / dm_w.sum()) ** (1 / p))
    ratio1 = sup_num / denom if denom > 0 else float("inf")
    ratio2 = lp_num / denom if denom > 0 else float("inf")

    qp_vals, _ = cylinder_values(u, Cylinder(x0, t0, r / 2, "Q+"))
    denom3 = float(qp_vals.min()) + shift
    pts = u.grid.points()
    rows = []
    for d in deltas:
        if not 0 < d < 0.25:
            raise ValueError("deltas must lie in (0, 1/4)")
        tw, sw = _cylinder_weights(u, d * r, (d * r) ** 2, cube)
        half = (len(tw) - 1) // 2
        xin = np.linalg.norm(pts - x0, axis=1) < (1 - 2 * d) * r
        t_lo, t_hi = t0 - (1 - 4 * d**2) * r**2, t0 - 0.75 * r**2
        # centres whose averaging window stays inside the stored levels
        kin = np.zeros(len(u.times), dtype=bool)
        kin[half:len(u.times) - half] = True
        tin = np.nonzero((u.times > t_lo) & (u.times < t_hi) & kin)[0]
        if not tin.size or not xin.any():
            raise ValueError(f"no admissible centres for delta={d:g}; refine the grid")
        ka, kb = tin[0] - half, tin[-1] + half + 1
        avg = _sliding_mean(u.values[ka:kb] ** p, tw, sw) ** (1 / p)
        worst = float(avg[tin - ka][:, xin.reshape(u.grid.shape)].max())
        rows.append([d, worst, worst / denom3 if denom3 > 0 else float("inf")])
    tab = np.array(rows)
    if len(tab) >= 2 and np.all(np.isfinite(tab[:, 2])):
        m = float(np.polyfit(np.log(1 / tab[:, 0]), np.log(tab[:, 2]), 1)[0])
    else:
        m = float("nan")
    constants = {"ratio1": ratio1, "ratio2": ratio2, "sup_numerator": sup_num,
                 "lp_numerator": lp_num, "denominator": denom, "iterated_denominator": denom3,
                 "m": m, "numerator_consistent": bool(lp_num <= sup_num * (1 + 1e-12))}
    passed = bool(np.isfinite(ratio1) and constants["numerator_consistent"] and np.isfinite(m))
    return EstimateReport("harnack", ["delta", "worst_lp_mean", "iterated_ratio"], tab.tolist(),
                          constants, passed,
                          dict(_grid_params(u), center=[x0.tolist(), t0], r=r, C0=C0, p=p,
                               deltas=list(deltas), cube=cube,
                               admissible_set="B_{(1-2d)r}(x0) x (t0-(1-4d^2)r^2, t0-3r^2/4)"))
