"""Convex uniformly elliptic operators as finite maxima of linear (affine) maps.

Every operator here has the Bellman form::

    F(M, x) = max_a ( A_a(x) : M + c_a(x) )

with ``c_a = 0`` for a plain operator.  Offsets only appear after
:func:`obstacle_transform`, which shifts a zero-free operator by the
obstacle Hessian and still satisfies ``F(O, x) = 0``.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_point, as_points, check_positive, check_symmetric
from .errors import NonUniformSourceError
from .grid import spatial_derivatives


@dataclass(frozen=True)
class EllipticityBounds:
    lam: float
    Lam: float

    def __post_init__(self):
        check_positive(self.lam, "lambda")
        check_positive(self.Lam, "Lambda")
        if self.lam > self.Lam:
            raise ValueError(f"need lambda <= Lambda, got {self.lam} > {self.Lam}")


class BellmanOperator:
    """``F(M, x) = max_a (A_a(x) : M + c_a(x))``.

    Parameters
    ----------
    bounds : EllipticityBounds
    controls : list
        Each entry is a symmetric ``n x n`` matrix or a callable ``x -> matrix``.
    offsets : ndarray, optional
        Array of shape ``(len(controls), *offset_grid.shape)`` holding ``c_a``
        on the nodes of ``offset_grid``; evaluated at the nearest node.
    name : str, optional
        Used in reports.
    """

    def __init__(self, bounds, controls, offsets=None, offset_grid=None, name="bellman"):
        if not controls:
            raise ValueError("a Bellman operator needs at least one control")
        self.bounds = bounds
        self.name = name
        self._controls = []
        n = None
        for A in controls:
            if callable(A):
                self._controls.append(A)
                continue
            A = check_symmetric(A, n)
            n = A.shape[0]
            self._controls.append(A)
        if n is None:
            probe = np.atleast_2d(self._controls[0](np.zeros(1)))
            n = probe.shape[0]
        self.n = n
        if offsets is not None:
            offsets = np.asarray(offsets, dtype=float)
            if offset_grid is None or offsets.shape != (len(controls),) + offset_grid.shape:
                raise ValueError("offsets need an offset_grid and shape (K, *grid.shape)")
        self._offsets = offsets
        self._offset_grid = offset_grid

    def __repr__(self):
        return (f"BellmanOperator(name={self.name!r}, n={self.n}, controls={self.n_controls}, "
                f"lam={self.bounds.lam:g}, Lam={self.bounds.Lam:g})")

    @property
    def n_controls(self):
        return len(self._controls)

    @property
    def x_dependent(self):
        return self._offsets is not None or any(callable(A) for A in self._controls)

    def coefficients(self, points):
        """Control matrices at ``points``; shape ``(K, P, n, n)``."""
        pts = as_points(points, self.n)
        out = np.empty((self.n_controls, len(pts), self.n, self.n))
        for k, A in enumerate(self._controls):
            if callable(A):
                out[k] = np.stack([np.atleast_2d(A(p)) for p in pts])
            else:
                out[k] = A
        return out

    def offset_values(self, points):
        """``c_a`` at ``points``; shape ``(K, P)`` (zeros when there are no offsets)."""
        pts = as_points(points, self.n)
        if self._offsets is None:
            return np.zeros((self.n_controls, len(pts)))
        g = self._offset_grid
        idx = []
        for i, (lo, _) in enumerate(g.extent):
            j = np.rint((pts[:, i] - lo) / g.h).astype(int)
            idx.append(np.clip(j, 0, g.shape[i] - 1))
        return self._offsets[(slice(None),) + tuple(idx)]

    def is_diagonal(self, points=None):
        pts = np.zeros((1, self.n)) if points is None else points
        A = self.coefficients(pts)
        off = A - np.einsum("...ii->...i", A)[..., None] * np.eye(self.n)
        return bool(np.all(off == 0.0))

    def diagonal_coefficients(self, points):
        """Diagonals of the control matrices, shape ``(K, P, n)``.

        Raises ``ValueError`` for non-diagonal controls: the monotone
        finite-difference scheme only handles diagonal diffusion.
        """
        A = self.coefficients(points)
        diag = np.einsum("...ii->...i", A)
        if not np.allclose(A, diag[..., None] * np.eye(self.n), atol=0.0):
            raise ValueError(f"operator {self.name!r} has non-diagonal controls")
        return diag

    def evaluate(self, M, x=None):
        """Return ``(F(M, x), index of the maximising control)``; ties go to the lowest index."""
        M = check_symmetric(M, self.n)
        x = np.zeros(self.n) if x is None else as_point(x, self.n)
        A = self.coefficients(x[None])[:, 0]
        vals = np.einsum("kij,ij->k", A, M) + self.offset_values(x[None])[:, 0]
        k = int(np.argmax(vals))
        return float(vals[k]), k

    def __call__(self, M, x=None):
        return self.evaluate(M, x)[0]


def evaluate(op, M, x=None):
    return op.evaluate(M, x)


def linear(A, bounds=None, name="linear"):
    """Single-control operator ``F(M) = A : M``."""
    A = check_symmetric(A)
    if bounds is None:
        eig = np.linalg.eigvalsh(A)
        bounds = EllipticityBounds(float(eig.min()), float(eig.max()))
    return BellmanOperator(bounds, [A], name=name)


def trace(n):
    """The Laplacian ``F(M) = tr(M)`` with ``lambda = Lambda = 1``."""
    return linear(np.eye(n), EllipticityBounds(1.0, 1.0), name="trace")


def pucci_diagonal(bounds, n):
    """Finite-control maximal Pucci operator with diagonal controls.

    The ``2**n`` controls ``diag(a_1, ..., a_n)``, ``a_i in {lam, Lam}``,
    reproduce ``M+`` exactly on diagonal matrices.  Control order follows
    ``itertools.product((Lam, lam), repeat=n)``, so ``M = O`` selects the
    all-``Lam`` control.
    """
    controls = [np.diag(a) for a in itertools.product((bounds.Lam, bounds.lam), repeat=n)]
    return BellmanOperator(bounds, controls, name="pucci_diagonal")


def bellman(bounds, controls, name="bellman"):
    mats = []
    for c in controls:
        c = np.asarray(c, dtype=float)
        mats.append(np.diag(c) if c.ndim == 1 else c)
    return BellmanOperator(bounds, mats, name=name)


def pucci_value(bounds, M):
    """Exact maximal Pucci operator: ``Lam * sum(pos eig) + lam * sum(neg eig)``."""
    eig = np.linalg.eigvalsh(check_symmetric(M))
    return float(bounds.Lam * eig[eig > 0].sum() + bounds.lam * eig[eig < 0].sum())


def pucci_min_value(bounds, M):
    eig = np.linalg.eigvalsh(check_symmetric(M))
    return float(bounds.lam * eig[eig > 0].sum() + bounds.Lam * eig[eig < 0].sum())


@dataclass
class ObstacleTransformResult:
    """Zero-obstacle data equivalent to an obstacle problem with obstacle ``phi``.

    ``source = Ftilde(D^2 phi)`` and ``operator(M, x) = Ftilde(M + D^2 phi(x)) - source(x)``;
    all fields live on the nodes of ``grid``.
    """

    operator: BellmanOperator
    source: np.ndarray
    obstacle: np.ndarray
    c0: float
    grid: object
    hessian: np.ndarray = field(repr=False, default=None)


def obstacle_transform(Ftilde, grid, phi):
    """Turn the obstacle problem for ``Ftilde`` and obstacle ``phi`` into zero-obstacle form.

    ``phi`` is an array of nodal values on ``grid`` (or a callable of the
    coordinate arrays).  Raises :class:`NonUniformSourceError` unless
    ``Ftilde(D^2 phi) <= -c0`` for some ``c0 > 0`` at every node.
    """
    if callable(phi):
        phi = phi(*grid.mesh())
    phi = np.broadcast_to(np.asarray(phi, dtype=float), grid.shape).copy()
    _, hess = spatial_derivatives(phi, grid.h, grid.n)
    pts = grid.points()
    A = Ftilde.coefficients(pts)                          # (K, P, n, n)
    H = hess.reshape(-1, grid.n, grid.n)                  # (P, n, n)
    shifted = np.einsum("kpij,pij->kp", A, H) + Ftilde.offset_values(pts)
    source = shifted.max(axis=0)
    c0 = float(-source.max())
    if not c0 > 0:
        raise NonUniformSourceError(
            f"transformed source f = Ftilde(D^2 phi) must satisfy f <= -c0 < 0; max f = {-c0:g}")
    offsets = (shifted - source[None]).reshape((Ftilde.n_controls,) + grid.shape)
    controls = list(Ftilde._controls)
    op = BellmanOperator(Ftilde.bounds, controls, offsets=offsets, offset_grid=grid,
                         name=f"{Ftilde.name}+obstacle")
    return ObstacleTransformResult(op, source.reshape(grid.shape), phi, c0, grid, hess)


@dataclass
class EllipticityReport:
    samples: int
    min_quotient: float
    max_quotient: float
    min_spectral_quotient: float
    max_spectral_quotient: float
    violations: list
    passed: bool

    def to_dict(self):
        return dict(self.__dict__)


def verify_ellipticity(op, sample_count=200, points=None, seed=0, atol=1e-10):
    """Sample ``(F(M + N, x) - F(M, x)) / tr(N)`` for random symmetric ``M`` and PSD ``N``.

    The coordinate projections ``N = e_i e_i^T`` at ``M = O`` are always
    included.  Quotients outside ``[lam, Lam]`` are listed in ``violations``;
    spectral-norm quotients are recorded but not judged.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    n = op.n
    pts = np.zeros((1, n)) if points is None else as_points(points, n)
    lam, Lam = op.bounds.lam, op.bounds.Lam
    q_tr, q_sp, violations = [], [], []

    def check(M, N, x):
        q = (op(M + N, x) - op(M, x)) / np.trace(N)
        q_tr.append(q)
        q_sp.append((op(M + N, x) - op(M, x)) / np.linalg.norm(N, 2))
        if q < lam - atol or q > Lam + atol:
            violations.append({"x": x.tolist(), "quotient": float(q)})

    for x in pts:
        for i in range(n):
            N = np.zeros((n, n))
            N[i, i] = 1.0
            check(np.zeros((n, n)), N, x)
        for _ in range(sample_count):
            B = rng.standard_normal((n, n))
            M = B + B.T
            C = rng.standard_normal((n, rng.integers(1, n + 1)))
            N = C @ C.T
            N /= np.trace(N)
            check(M, N, x)
    return EllipticityReport(len(q_tr), float(min(q_tr)), float(max(q_tr)), float(min(q_sp)),
                             float(max(q_sp)), violations, not violations)
