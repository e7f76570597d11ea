"""Contact sets, free boundary point clouds and graph representations of the boundary.

The contact set of a solved field is ``{u <= tol}`` with
``tol = kappa_c * h**2 + kappa_eps * eps``; the second term absorbs the
O(eps) penalty layer of penalized solutions (``eps`` is read from the
field's ``meta`` and is 0 for direct or planted fields).
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import as_point, unit_vector
from .errors import MultivaluedGraphError, NoBoundaryError
from .grid import Cylinder, cylinder_stats

DEFAULT_KAPPA_C = 0.25
DEFAULT_KAPPA_EPS = 0.5


def _field_eps(u):
    if u.meta.get("method") == "direct" or u.meta.get("planted"):
        return 0.0
    eps = u.meta.get("eps")
    return float(eps) if eps is not None else 0.0


@dataclass
class ContactSet:
    """Boolean node mask ``u <= tol`` with shape ``(nt, *grid.shape)``."""

    mask: np.ndarray
    tol: float
    kappa_c: float
    kappa_eps: float = 0.0
    eps: float = 0.0

    @property
    def empty(self):
        return not self.mask.any()

    @property
    def full(self):
        return bool(self.mask.all())

    def to_dict(self):
        return {"tol": self.tol, "kappa_c": self.kappa_c, "kappa_eps": self.kappa_eps,
                "eps": self.eps, "contact_nodes": int(self.mask.sum()),
                "total_nodes": int(self.mask.size)}


def contact_tolerance(u, kappa_c=DEFAULT_KAPPA_C, kappa_eps=DEFAULT_KAPPA_EPS):
    if not kappa_c > 0:
        raise ValueError("kappa_c must be > 0")
    if kappa_eps < 0:
        raise ValueError("kappa_eps must be >= 0")
    return kappa_c * u.grid.h**2 + kappa_eps * _field_eps(u)


def extract_contact_set(u, kappa_c=DEFAULT_KAPPA_C, kappa_eps=DEFAULT_KAPPA_EPS):
    tol = contact_tolerance(u, kappa_c, kappa_eps)
    return ContactSet(u.values <= tol, tol, kappa_c, kappa_eps, _field_eps(u))


@dataclass
class FreeBoundaryCloud:
    """Level-``tol`` crossing points on grid edges joining contact and positive nodes.

    ``points`` has columns ``(x_1, ..., x_n, t)``.  ``axis`` is the edge
    direction (``0..n-1`` spatial, ``n`` for time edges); ``node`` is the
    index ``(level, *spatial)`` of the positive endpoint and ``positive_side``
    is +1 when that endpoint is the later node along the edge.  ``normals``
    are unit spatial gradients at that node, pointing into ``{u > 0}``
    (zero where the gradient vanishes).
    """

    points: np.ndarray
    axis: np.ndarray
    node: np.ndarray
    normals: np.ndarray
    positive_side: np.ndarray
    tol: float
    u: object = field(repr=False)
    contact: ContactSet = field(repr=False)

    @property
    def n(self):
        return self.points.shape[1] - 1

    def __len__(self):
        return len(self.points)

    def spatial(self, t=None):
        """Spatial-edge points, optionally restricted to the level nearest ``t``."""
        sel = self.axis < self.n
        if t is not None:
            k = self.u.level_index(t)
            sel &= self.node[:, 0] == k
        return self.points[sel]

    def to_csv(self, path):
        names = ["x"] if self.n == 1 else [f"x{i + 1}" for i in range(self.n)]
        names += ["t", "edge_axis"] + [f"normal{i + 1}" for i in range(self.n)]
        table = np.column_stack([self.points, self.axis, self.normals])
        _write_csv(path, names, table)
        return Path(path)


def _write_csv(path, names, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def _node_gradient(values, idx, h, n):
    """Central-difference spatial gradient at nodes ``idx`` (level first), one-sided at edges."""
    grads = np.zeros((len(idx), n))
    shape = values.shape
    for i in range(n):
        ax = 1 + i
        lo = idx.copy()
        hi = idx.copy()
        lo[:, ax] = np.maximum(idx[:, ax] - 1, 0)
        hi[:, ax] = np.minimum(idx[:, ax] + 1, shape[ax] - 1)
        span = (hi[:, ax] - lo[:, ax]) * h
        grads[:, i] = (values[tuple(hi.T)] - values[tuple(lo.T)]) / span
    return grads


def extract_free_boundary(u, contact=None):
    """Marching-edges extraction of the level ``contact.tol`` of ``u``."""
    if contact is None:
        contact = extract_contact_set(u)
    if contact.empty or contact.full:
        raise NoBoundaryError("contact set is empty or fills the grid; no free boundary")
    grid, vals, mask, tol = u.grid, u.values, contact.mask, contact.tol
    n = grid.n
    coords = [u.times] + list(grid.axes)
    pts, axes, nodes, sides = [], [], [], []
    # edge axis a of the array: 0 is time, 1..n spatial
    for a in range(n + 1):
        lo = [slice(None)] * (n + 1)
        hi = [slice(None)] * (n + 1)
        lo[a], hi[a] = slice(None, -1), slice(1, None)
        m_lo, m_hi = mask[tuple(lo)], mask[tuple(hi)]
        cross = m_lo != m_hi
        if not cross.any():
            continue
        idx = np.argwhere(cross)
        v_lo = vals[tuple(lo)][cross]
        v_hi = vals[tuple(hi)][cross]
        theta = np.clip((tol - v_lo) / (v_hi - v_lo), 0.0, 1.0)
        p = np.empty((len(idx), n + 1))
        for b in range(n + 1):
            c = coords[b][idx[:, b]]
            if b == a:
                c = c + theta * (coords[b][idx[:, b] + 1] - coords[b][idx[:, b]])
            p[:, b] = c
        pos = idx.copy()
        pos[:, a] += m_lo[cross].astype(int)   # positive endpoint
        pts.append(np.column_stack([p[:, 1:], p[:, 0]]))
        axes.append(np.full(len(idx), n if a == 0 else a - 1))
        nodes.append(pos)
        sides.append(np.where(m_lo[cross], 1, -1))
    if not pts:
        raise NoBoundaryError("no edge joins a contact node to a positive node")
    points = np.concatenate(pts)
    node = np.concatenate(nodes)
    grads = _node_gradient(vals, node, grid.h, n)
    norm = np.linalg.norm(grads, axis=1, keepdims=True)
    normals = np.divide(grads, norm, out=np.zeros_like(grads), where=norm > 0)
    return FreeBoundaryCloud(points, np.concatenate(axes), node, normals,
                             np.concatenate(sides), tol, u, contact)


def density(u, contact, center, r):
    """Weighted fraction of ``Q_r(center)`` covered by the contact set.

    ``contact`` is a :class:`ContactSet` or a bare contact tolerance.
    """
    tol = contact.tol if isinstance(contact, ContactSet) else float(contact)
    if r < 4 * u.grid.h * (1 - 1e-9):
        raise ValueError(f"density radius {r:g} is below 4h = {4 * u.grid.h:g}")
    x0, t0 = center
    stats = cylinder_stats(u, Cylinder(x0, t0, r), contact_tol=tol)
    return stats.zero_measure / stats.total_measure


@dataclass
class BoundaryGraph:
    """Sampled graph ``t = tau(x)`` or ``x.e = g(x', t)`` with its Lipschitz estimate.

    ``table`` has one row per sample with columns ``columns``.  ``flagged``
    lists samples that are degenerate (infinite ``tau``) or multivalued.
    """

    kind: str
    columns: list
    table: np.ndarray
    lipschitz_estimate: float = None
    flagged: np.ndarray = None
    c1_modulus_table: list = field(default_factory=list)
    normal: np.ndarray = None
    params: dict = field(default_factory=dict)

    def to_dict(self):
        finite = np.where(np.isfinite(self.table), self.table, np.nan)
        return {
            "kind": self.kind,
            "columns": list(self.columns),
            "samples": len(self.table),
            "lipschitz_estimate": self.lipschitz_estimate,
            "flagged": int(0 if self.flagged is None else np.count_nonzero(self.flagged)),
            "c1_modulus_table": [list(map(float, row)) for row in self.c1_modulus_table],
            "normal": None if self.normal is None else [float(v) for v in self.normal],
            "params": self.params,
            "range": [float(np.nanmin(finite[:, -1])), float(np.nanmax(finite[:, -1]))]
            if np.isfinite(finite[:, -1]).any() else None,
        }

    def to_csv(self, path):
        _write_csv(path, self.columns, self.table)
        return Path(path)


def time_graph(cloud):
    """``tau(x)``: earliest time at which each spatial column becomes positive.

    Columns that never change status get the sentinels ``-inf`` (always
    positive) or ``+inf`` (always in contact) and are flagged, as are
    columns that switch more than once.  The Lipschitz estimate is the
    largest ``|tau(x) - tau(y)| / |x - y|`` over neighbouring unflagged
    columns, or ``None`` when no such pair exists.
    """
    u, mask = cloud.u, cloud.contact.mask
    grid = u.grid
    n = grid.n
    spatial = grid.shape
    switches = np.count_nonzero(mask[1:] != mask[:-1], axis=0)
    tau = np.where(mask[0], np.inf, -np.inf).astype(float)
    tau = np.broadcast_to(tau, spatial).copy()
    sel = cloud.axis == n
    if sel.any():
        cols = cloud.node[sel][:, 1:]
        times = cloud.points[sel][:, -1]
        # contact -> positive transitions only
        rising = cloud.positive_side[sel] > 0
        flat = np.ravel_multi_index(tuple(cols.T), spatial)
        order = np.lexsort((times, flat))
        flat, times, rising = flat[order], times[order], rising[order]
        tau_flat = tau.reshape(-1)
        keep = rising
        first = np.unique(flat[keep], return_index=True)
        tau_flat[first[0]] = times[keep][first[1]]
        tau = tau_flat.reshape(spatial)
    flagged = ~np.isfinite(tau) | (switches > 1)
    lips = []
    for i in range(n):
        a = np.moveaxis(tau, i, 0)
        f = np.moveaxis(flagged, i, 0)
        ok = ~(f[1:] | f[:-1])
        if ok.any():
            with np.errstate(invalid="ignore"):
                diff = np.abs(a[1:] - a[:-1])
            lips.append(np.max(diff[ok]) / grid.h)
    coords = np.stack([c.ravel() for c in grid.mesh()], axis=-1)
    table = np.column_stack([coords, tau.ravel()])
    names = (["x"] if n == 1 else [f"x{i + 1}" for i in range(n)]) + ["tau"]
    return BoundaryGraph("time_graph", names, table,
                         lipschitz_estimate=float(max(lips)) if lips else None,
                         flagged=flagged.ravel(), params={"tol": cloud.tol})


def _cluster_gap(values, gap):
    v = np.sort(values)
    return len(v) > 1 and np.max(np.diff(v)) > gap


def space_graph(cloud, e, window, times=None, gap_factor=4.0):
    """Boundary as a graph ``x . e = g(x', t)`` inside a spatial window.

    ``window = (x0, rho)`` selects cloud points with ``|x - x0| <= rho``.
    Spatial-edge crossings are projected onto ``e`` and binned by ``x'``
    (bins of width ``h``; in 1D there is a single bin).  A bin whose
    projections split into clusters more than ``gap_factor * h`` apart
    raises :class:`MultivaluedGraphError`.

    The C^1 modulus table lists, for dyadic sub-window widths ``w``, the
    largest oscillation of the discrete ``grad_{x'} g`` over windows of
    width ``w`` (2D only).  ``normal`` is the unit normal of the least
    squares line through the graph samples, oriented along ``e``.
    """
    n = cloud.n
    h = cloud.u.grid.h
    e = unit_vector(e, n)
    x0, rho = window
    x0 = as_point(x0, n)
    if not rho > 0:
        raise ValueError("window radius must be > 0")
    sel = (cloud.axis < n) & (np.linalg.norm(cloud.points[:, :n] - x0, axis=1) <= rho)
    if times is not None:
        levels = np.unique([cloud.u.level_index(t) for t in np.atleast_1d(times)])
        sel &= np.isin(cloud.node[:, 0], levels)
    pts = cloud.points[sel]
    lev = cloud.node[sel][:, 0]
    if len(pts) == 0:
        raise NoBoundaryError("no boundary points in the window")
    s = (pts[:, :n] - x0) @ e
    if n == 1:
        xp = np.zeros(len(pts))
        eperp = None
    else:
        eperp = np.array([-e[1], e[0]])
        xp = (pts[:, :n] - x0) @ eperp
    bins = np.rint(xp / h).astype(int)
    key = np.column_stack([lev, bins])
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    splits = np.cumsum(np.bincount(inv, minlength=len(uniq)))[:-1]
    groups = np.split(order, splits)
    g = np.empty(len(uniq))
    for j, grp in enumerate(groups):
        if _cluster_gap(s[grp], gap_factor * h):
            t_bad = cloud.u.times[uniq[j, 0]]
            raise MultivaluedGraphError(
                f"boundary is not a graph along e={e.tolist()} at x'={uniq[j, 1] * h:g}, t={t_bad:g}")
        g[j] = s[grp].mean()
    t_col = cloud.u.times[uniq[:, 0]]
    xp_col = uniq[:, 1] * h
    table = np.column_stack([xp_col, t_col, g]) if n == 2 else np.column_stack([t_col, g])
    names = (["x_perp", "t", "g"] if n == 2 else ["t", "g"])

    lips, moduli, normal = [], [], e.copy()
    if n == 2:
        slopes_all = []
        for k in np.unique(uniq[:, 0]):
            on = uniq[:, 0] == k
            b, gv = uniq[on, 1], g[on]
            adj = np.diff(b) == 1
            if adj.any():
                d = np.diff(gv)[adj]
                lips.append(np.max(np.abs(d)) / h)
                slopes_all.append((b[:-1][adj] * h, d / h))
        if len(g) >= 2 and np.ptp(xp_col) > 0:
            m = np.polyfit(xp_col, g, 1)[0]
            normal = (e - m * eperp) / np.hypot(1.0, m)
        width = 2.0 * rho
        while width >= 2 * h:
            osc = 0.0
            for xs, ds in slopes_all:
                start = np.floor((xs + rho) / width)
                for w_id in np.unique(start):
                    part = ds[start == w_id]
                    if len(part) > 1:
                        osc = max(osc, float(np.ptp(part)))
            moduli.append((width, osc))
            width /= 2.0
    else:
        if len(g) >= 2:
            dt = np.diff(t_col)
            ok = dt > 0
            if ok.any():
                lips.append(float(np.max(np.abs(np.diff(g))[ok] / np.sqrt(dt[ok]))))
        normal = e * (1.0 if np.mean(cloud.normals[sel] @ e) >= 0 else -1.0)
    return BoundaryGraph("space_graph", names, table,
                         lipschitz_estimate=float(max(lips)) if lips else None,
                         flagged=np.zeros(len(g), dtype=bool), c1_modulus_table=moduli,
                         normal=normal,
                         params={"e": e.tolist(), "window": [x0.tolist(), float(rho)],
                                 "gap_factor": gap_factor, "tol": cloud.tol})


def cone_test(points, x0, e0, theta):
    """True iff no point lies in the two-sided cone of half-opening ``pi/2 - theta`` about ``e0``.

    A point ``x`` is in the cone when
    ``sqrt(|x - x0|^2 - ((x - x0) . e0)^2) < tan(theta) * |(x - x0) . e0|``.
    """
    if not 0 < theta < np.pi / 2:
        raise ValueError("theta must lie in (0, pi/2)")
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return True
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    e0 = unit_vector(e0, len(x0))
    d = pts.reshape(-1, len(x0)) - x0
    along = d @ e0
    across = np.sqrt(np.maximum(np.sum(d**2, axis=1) - along**2, 0.0))
    return not bool(np.any(across < np.tan(theta) * np.abs(along)))
