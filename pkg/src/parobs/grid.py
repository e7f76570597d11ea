"""Uniform space-time grids, grid functions, parabolic cylinders and rescaling.

A :class:`GridFunction` stores one array of shape ``(nt, *spatial_shape)``;
time is always the leading axis.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ._validation import as_point, check_positive
from .errors import EmptyRegionError, GridTooSmallError, OutOfDomainError

CYLINDER_VARIANTS = ("Q", "Q+", "Q-", "D+", "D-", "tQ")

_REL_TOL = 1e-9


def _node_count(lo, hi, step, what):
    span = (hi - lo) / step
    count = int(round(span))
    if abs(span - count) > 1e-6 * max(1.0, span):
        raise ValueError(f"{what} extent {hi - lo} is not a multiple of the step {step}")
    return count + 1


@dataclass(frozen=True)
class Grid:
    """Tensor grid ``extent[0] x ... x extent[n-1]`` times ``[t_range[0], t_range[1]]``.

    ``dt`` is only checked against ``cfl_guard * h**2`` in explicit mode; the
    solvers in this package are implicit.
    """

    extent: tuple
    h: float
    dt: float
    t_range: tuple = (0.0, 0.0)
    mode: str = "implicit"
    cfl_guard: float = 0.5

    def __post_init__(self):
        extent = tuple((float(lo), float(hi)) for lo, hi in self.extent)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "t_range", (float(self.t_range[0]), float(self.t_range[1])))
        check_positive(self.h, "h")
        check_positive(self.dt, "dt")
        if len(extent) not in (1, 2):
            raise ValueError("only spatial dimensions 1 and 2 are supported")
        for lo, hi in extent:
            if not hi > lo:
                raise ValueError(f"empty spatial interval ({lo}, {hi})")
            if _node_count(lo, hi, self.h, "spatial") < 3:
                raise GridTooSmallError("need at least 3 nodes per spatial axis")
        t0, t1 = self.t_range
        if t1 < t0:
            raise ValueError("t_range must be increasing")
        if t1 > t0:
            _node_count(t0, t1, self.dt, "time")
        if self.mode not in ("implicit", "explicit"):
            raise ValueError("mode must be 'implicit' or 'explicit'")
        if self.mode == "explicit" and self.dt > self.cfl_guard * self.h**2 * (1 + 1e-12):
            raise ValueError("explicit mode requires dt <= cfl_guard * h^2")

    @property
    def n(self):
        return len(self.extent)

    @property
    def shape(self):
        return tuple(_node_count(lo, hi, self.h, "spatial") for lo, hi in self.extent)

    @property
    def nt(self):
        t0, t1 = self.t_range
        return 1 if t1 == t0 else _node_count(t0, t1, self.dt, "time")

    @property
    def axes(self):
        return [lo + self.h * np.arange(m) for (lo, _), m in zip(self.extent, self.shape)]

    @property
    def times(self):
        return self.t_range[0] + self.dt * np.arange(self.nt)

    @property
    def cell_volume(self):
        return self.h**self.n * self.dt

    def mesh(self):
        """Coordinate arrays of the spatial nodes, ``indexing='ij'``."""
        return np.meshgrid(*self.axes, indexing="ij")

    def points(self):
        return np.stack([c.ravel() for c in self.mesh()], axis=-1)

    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.n):
            idx = [slice(None)] * self.n
            idx[axis] = 0
            mask[tuple(idx)] = True
            idx[axis] = -1
            mask[tuple(idx)] = True
        return mask

    def replace(self, **changes):
        kw = dict(extent=self.extent, h=self.h, dt=self.dt, t_range=self.t_range,
                  mode=self.mode, cfl_guard=self.cfl_guard)
        kw.update(changes)
        return Grid(**kw)

    def to_dict(self):
        return {"n": self.n, "extent": [list(e) for e in self.extent], "h": self.h,
                "dt": self.dt, "t_range": list(self.t_range), "shape": list(self.shape)}

    @classmethod
    def reference(cls, n, nodes_per_unit=32, time_levels_per_unit=16):
        """Grid on ``[-1, 1]^n x [-1, 1]`` used as the common domain of blow-up fields."""
        return cls(extent=((-1.0, 1.0),) * n, h=1.0 / nodes_per_unit,
                   dt=1.0 / time_levels_per_unit, t_range=(-1.0, 1.0))


class GridFunction:
    """Discrete field on ``grid`` sampled at ``times`` (defaults to every grid time level).

    ``meta`` carries provenance such as the penalty parameter of the solve
    that produced the field.
    """

    def __init__(self, grid, values, times=None, meta=None):
        values = np.asarray(values, dtype=float)
        if times is None:
            times = grid.times
        times = np.atleast_1d(np.asarray(times, dtype=float))
        expected = (len(times),) + grid.shape
        if values.shape == grid.shape and len(times) == 1:
            values = values[None]
        if values.shape != expected:
            raise ValueError(f"values shape {values.shape} does not match {expected}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        self.grid = grid
        self.values = values
        self.times = times
        self.meta = dict(meta or {})

    def __repr__(self):
        return (f"GridFunction(n={self.grid.n}, shape={self.values.shape}, "
                f"t=[{self.times[0]:g}, {self.times[-1]:g}])")

    @property
    def time_step(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else self.grid.dt

    @property
    def cell_volume(self):
        return self.grid.h**self.grid.n * self.time_step

    def set_level(self, k, level_values):
        level_values = np.asarray(level_values, dtype=float)
        if not np.all(np.isfinite(level_values)):
            raise ValueError("grid function values must be finite")
        self.values[k] = level_values

    def level_index(self, t):
        return int(np.argmin(np.abs(self.times - t)))

    def at_time(self, t):
        return self.values[self.level_index(t)]

    def copy(self, values=None, meta=None):
        return GridFunction(self.grid, self.values.copy() if values is None else values,
                            self.times.copy(), dict(self.meta) if meta is None else meta)

    def interpolator(self):
        coords = (self.times, *self.grid.axes)
        values = self.values
        if len(self.times) == 1:
            # RegularGridInterpolator needs two samples per axis
            coords = (np.array([self.times[0] - 1.0, self.times[0] + 1.0]), *self.grid.axes)
            values = np.concatenate([values, values])
        return RegularGridInterpolator(coords, values, method="linear", bounds_error=False,
                                       fill_value=None)

    def __call__(self, x, t):
        """Multilinear interpolation at spatial point(s) ``x`` and time(s) ``t``."""
        n = self.grid.n
        x = np.asarray(x, dtype=float)
        pts_x = x.reshape(-1, 1) if n == 1 else x.reshape(-1, n)
        t = np.broadcast_to(np.asarray(t, dtype=float).ravel(), (pts_x.shape[0],))
        out = self.interpolator()(np.column_stack([t, pts_x]))
        return out[0] if out.size == 1 else out


class FiniteDifferences(NamedTuple):
    grad: np.ndarray
    hess: np.ndarray
    dt_u: np.ndarray


def _second_difference(u, h, axis):
    u = np.moveaxis(u, axis, -1)
    d2 = np.empty_like(u)
    d2[..., 1:-1] = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) / h**2
    d2[..., 0] = d2[..., 1]
    d2[..., -1] = d2[..., -2]
    return np.moveaxis(d2, -1, axis)


def spatial_derivatives(u, h, n):
    """Gradient and Hessian of an array whose last ``n`` axes are spatial.

    Central differences inside, second-order one-sided gradients and shifted
    second-difference stencils on the edges.
    """
    lead = u.ndim - n
    grad = np.stack([np.gradient(u, h, axis=lead + i, edge_order=2) for i in range(n)],
                    axis=-1)
    hess = np.empty(u.shape + (n, n))
    for i in range(n):
        hess[..., i, i] = _second_difference(u, h, lead + i)
        for j in range(i + 1, n):
            cross = np.gradient(grad[..., i], h, axis=lead + j, edge_order=2)
            hess[..., i, j] = hess[..., j, i] = cross
    return grad, hess


def finite_differences(u):
    """Discrete gradient, Hessian and backward time derivative of ``u``."""
    grid = u.grid
    if min(grid.shape) < 3:
        raise GridTooSmallError("need at least 3 nodes per axis")
    if len(u.times) < 2:
        raise GridTooSmallError("need at least 2 time levels")
    grad, hess = spatial_derivatives(u.values, grid.h, grid.n)
    dt_u = np.empty_like(u.values)
    steps = np.diff(u.times).reshape((-1,) + (1,) * grid.n)
    dt_u[1:] = np.diff(u.values, axis=0) / steps
    dt_u[0] = dt_u[1]
    return FiniteDifferences(grad, hess, dt_u)


def time_derivative(u):
    """Backward difference in time only (cheaper than :func:`finite_differences`)."""
    if len(u.times) < 2:
        raise GridTooSmallError("need at least 2 time levels")
    dt_u = np.empty_like(u.values)
    steps = np.diff(u.times).reshape((-1,) + (1,) * u.grid.n)
    dt_u[1:] = np.diff(u.values, axis=0) / steps
    dt_u[0] = dt_u[1]
    return dt_u


def parabolic_distance(p, q):
    """``max(|x - y|, |t - s|**0.5)`` for ``p = (x, t)`` and ``q = (y, s)``."""
    (x, t), (y, s) = p, q
    dx = np.linalg.norm(np.atleast_1d(np.asarray(x, float) - np.asarray(y, float)))
    return float(max(dx, np.sqrt(abs(t - s))))


@dataclass(frozen=True)
class Cylinder:
    """Parabolic cylinder of radius ``r`` centred at ``(x0, t0)``.

    ``Q``: ball x (t0-r^2, t0+r^2); ``Q+``/``Q-``: upper/lower halves;
    ``D+``: ball x (t0+3r^2, t0+4r^2); ``D-``: ball x (t0-3r^2, t0-2r^2);
    ``tQ``: like ``Q`` with the sup-norm ball.
    """

    x0: tuple
    t0: float
    r: float
    variant: str = "Q"

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(np.atleast_1d(np.asarray(self.x0, float)).tolist()))
        check_positive(self.r, "r")
        if self.variant not in CYLINDER_VARIANTS:
            raise ValueError(f"unknown cylinder variant {self.variant!r}")

    def time_interval(self):
        r2, t0 = self.r**2, self.t0
        return {
            "Q": (t0 - r2, t0 + r2), "tQ": (t0 - r2, t0 + r2),
            "Q+": (t0, t0 + r2), "Q-": (t0 - r2, t0),
            "D+": (t0 + 3 * r2, t0 + 4 * r2), "D-": (t0 - 3 * r2, t0 - 2 * r2),
        }[self.variant]

    def spatial_distance(self, grid):
        x0 = as_point(self.x0, grid.n)
        diffs = [c - x0[i] for i, c in enumerate(grid.mesh())]
        if self.variant == "tQ":
            return np.max(np.abs(np.stack(diffs)), axis=0)
        return np.sqrt(sum(d**2 for d in diffs))

    def inside(self, grid, times=None):
        """True when the closed cylinder lies inside the grid's space-time box."""
        x0 = as_point(self.x0, grid.n)
        times = grid.times if times is None else times
        ok = all(lo - 1e-12 <= x0[i] - self.r and x0[i] + self.r <= hi + 1e-12
                 for i, (lo, hi) in enumerate(grid.extent))
        t_lo, t_hi = self.time_interval()
        return ok and times[0] - 1e-12 <= t_lo and t_hi <= times[-1] + 1e-12

    def realize(self, u):
        """Node selection for this cylinder on ``u``.

        Returns ``(k0, k1, time_weights, spatial_mask, spatial_weights)``:
        levels ``k0:k1`` are inside the closed time interval.  Nodes on the
        boundary of the closed cylinder get weight 1/2 per direction, so
        measures of boxes are exact.
        """
        grid = u.grid
        t_lo, t_hi = self.time_interval()
        tt = _REL_TOL * max(u.time_step, self.r**2)
        k0 = int(np.searchsorted(u.times, t_lo - tt, side="left"))
        k1 = int(np.searchsorted(u.times, t_hi + tt, side="right"))
        ts = u.times[k0:k1]
        tw = np.where((np.abs(ts - t_lo) <= tt) | (np.abs(ts - t_hi) <= tt), 0.5, 1.0)
        xt = _REL_TOL * max(grid.h, self.r)
        dist = self.spatial_distance(grid)
        mask = dist <= self.r + xt
        sw = np.where(np.abs(dist - self.r) <= xt, 0.5, 1.0)[mask]
        return k0, k1, tw, mask, sw


class CylinderStats(NamedTuple):
    sup: float
    inf: float
    zero_measure: float
    total_measure: float
    count: int


def cylinder_values(u, c):
    """Values of ``u`` on the realized nodes of ``c`` with their weights, shape ``(levels, nodes)``."""
    k0, k1, tw, mask, sw = c.realize(u)
    if k1 <= k0 or not mask.any():
        raise EmptyRegionError(f"cylinder {c} contains no grid nodes")
    vals = u.values[k0:k1][:, mask]
    weights = tw[:, None] * sw[None, :]
    return vals, weights


def cylinder_stats(u, c, contact_tol=0.0):
    """Sup, inf and weighted measures of ``u`` over the cylinder ``c``.

    ``zero_measure`` counts nodes with ``u <= contact_tol``.
    """
    vals, weights = cylinder_values(u, c)
    vol = u.cell_volume
    zero = float(np.sum(weights[vals <= contact_tol]) * vol)
    return CylinderStats(float(vals.max()), float(vals.min()), zero,
                         float(weights.sum() * vol), int(vals.size))


def rescale(u, center, r, ref_grid):
    """Parabolic rescaling ``u(x0 + r x, t0 + r^2 t) / r^2`` sampled on ``ref_grid``."""
    x0, t0 = center
    grid = u.grid
    x0 = as_point(x0, grid.n)
    r = check_positive(r, "r")
    ref_axes = ref_grid.axes
    for i, (lo, hi) in enumerate(grid.extent):
        a, b = x0[i] + r * ref_axes[i][0], x0[i] + r * ref_axes[i][-1]
        tol = 1e-9 * (hi - lo)
        if a < lo - tol or b > hi + tol:
            raise OutOfDomainError(f"rescaled region [{a:g}, {b:g}] leaves axis {i} of the grid")
    ta, tb = t0 + r**2 * ref_grid.times[0], t0 + r**2 * ref_grid.times[-1]
    ttol = 1e-9 * max(1.0, abs(u.times[-1] - u.times[0]))
    if ta < u.times[0] - ttol or tb > u.times[-1] + ttol:
        raise OutOfDomainError(f"rescaled time window [{ta:g}, {tb:g}] leaves the grid")
    mapped_x = [np.clip(x0[i] + r * c, grid.extent[i][0], grid.extent[i][1])
                for i, c in enumerate(ref_grid.mesh())]
    mapped_t = np.clip(t0 + r**2 * ref_grid.times, u.times[0], u.times[-1])
    nt = len(mapped_t)
    pts = np.empty((nt,) + ref_grid.shape + (grid.n + 1,))
    pts[..., 0] = mapped_t.reshape((nt,) + (1,) * grid.n)
    for i, c in enumerate(mapped_x):
        pts[..., i + 1] = c[None]
    values = u.interpolator()(pts.reshape(-1, grid.n + 1)).reshape((nt,) + ref_grid.shape)
    meta = {"center": [x0.tolist(), float(t0)], "r": r}
    return GridFunction(ref_grid, values / r**2, meta=meta)


# -- serialization -----------------------------------------------------------

def save_grid_function(u, prefix, fmt="csv"):
    """Write ``prefix.json`` (header) and ``prefix.csv`` or ``prefix.bin`` (data).

    Rows are node-major with time as the outer loop.  Returns the written paths.
    """
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    header = dict(u.grid.to_dict(), times=u.times.tolist(), format=fmt,
                  meta=_jsonable(u.meta))
    header_path = prefix.with_suffix(".json")
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True))
    if fmt == "csv":
        data_path = prefix.with_suffix(".csv")
        coords = np.stack([c.ravel() for c in u.grid.mesh()], axis=-1)
        nt, P = len(u.times), coords.shape[0]
        table = np.empty((nt * P, u.grid.n + 2))
        table[:, : u.grid.n] = np.tile(coords, (nt, 1))
        table[:, u.grid.n] = np.repeat(u.times, P)
        table[:, -1] = u.values.reshape(-1)
        names = ["x"] if u.grid.n == 1 else [f"x{i + 1}" for i in range(u.grid.n)]
        np.savetxt(data_path, table, delimiter=",", fmt="%.17g",
                   header=",".join(names + ["t", "value"]), comments="")
    elif fmt == "bin":
        data_path = prefix.with_suffix(".bin")
        u.values.astype("<f8").tofile(data_path)
    else:
        raise ValueError("fmt must be 'csv' or 'bin'")
    return [header_path, data_path]


def load_grid_function(prefix):
    prefix = Path(prefix)
    header = json.loads(prefix.with_suffix(".json").read_text())
    grid = Grid(extent=[tuple(e) for e in header["extent"]], h=header["h"], dt=header["dt"],
                t_range=tuple(header["t_range"]))
    times = np.asarray(header["times"])
    shape = (len(times),) + grid.shape
    if header["format"] == "csv":
        table = np.loadtxt(prefix.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        values = table[:, -1].reshape(shape)
    else:
        values = np.fromfile(prefix.with_suffix(".bin"), dtype="<f8").reshape(shape)
    return GridFunction(grid, values, times, meta=header.get("meta"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
