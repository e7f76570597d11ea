"""Problems with known solutions and planted fields used by the tests and the CLI."""

import numpy as np

from .grid import Grid, GridFunction
from .operators import EllipticityBounds, pucci_diagonal, trace
from .solver import ProblemSpec


def half_parabola(x):
    return 0.5 * np.maximum(x, 0.0) ** 2


def wave_profile(s, c=1.0):
    """``w(s) = (e^{cs} - 1 - cs) / c^2`` for ``s > 0``, zero otherwise.

    Solves ``c w' - w'' = -1`` with ``w(0) = w'(0) = 0``, so
    ``u(x, t) = w(x + c t)`` solves the heat obstacle problem with ``f = -1``.
    """
    s = np.maximum(np.asarray(s, dtype=float), 0.0)
    return (np.expm1(c * s) - c * s) / c**2


def wave_profile_d1(s, c=1.0):
    s = np.maximum(np.asarray(s, dtype=float), 0.0)
    return np.expm1(c * s) / c


def wave_profile_d2(s, c=1.0):
    s = np.asarray(s, dtype=float)
    return np.where(s > 0, np.exp(c * np.maximum(s, 0.0)), 0.0)


def travelling_wave(x, t, c=1.0):
    return wave_profile(np.asarray(x) + c * np.asarray(t), c)


def stationary_1d_spec(h=1.0 / 256, t_end=1.0 / 16, extent=(-1.0, 1.0)):
    """Heat obstacle problem with exact steady solution ``u = x_+^2 / 2``."""
    grid = Grid(extent=(extent,), h=h, dt=h**2, t_range=(0.0, t_end))
    return ProblemSpec(trace(1), grid, source=-1.0,
                       boundary=lambda x, t: half_parabola(x),
                       name="stationary_1d")


def travelling_wave_spec(h=1.0 / 128, c=1.0, extent=(-2.0, 2.0), t_range=(0.0, 1.0),
                         dt_factor=1.0):
    """Heat obstacle problem with exact solution ``w(x + c t)``."""
    grid = Grid(extent=(extent,), h=h, dt=dt_factor * h**2, t_range=t_range)
    return ProblemSpec(trace(1), grid, source=-1.0,
                       boundary=lambda x, t: travelling_wave(x, t, c),
                       name=f"travelling_wave_c{c:g}")


def planted_field(grid, func, meta=None):
    """Time-independent field ``func(*coords)`` on every level of ``grid``."""
    level = np.broadcast_to(np.asarray(func(*grid.mesh()), dtype=float), grid.shape)
    values = np.broadcast_to(level, (grid.nt,) + grid.shape).copy()
    return GridFunction(grid, values, meta=dict(meta or {}, planted=True))


def planted_singular_2d(h=1.0 / 128, extent=(-1.0, 1.0), t_range=(-1.0, 1.0), dt=1.0 / 16):
    """``u = x_1^2 / 2`` in 2D: a singular free boundary point at the origin (``f = -1``)."""
    grid = Grid(extent=(extent, extent), h=h, dt=dt, t_range=t_range)
    return planted_field(grid, lambda x1, x2: 0.5 * x1**2, {"problem": "singular_2d"})


def planted_regular(grid, e, a=0.5):
    """``a ((e . x)_+)^2`` on ``grid`` for a unit direction ``e``."""
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    return planted_field(grid, lambda *xs: a * np.maximum(sum(ei * xi for ei, xi in zip(e, xs)),
                                                          0.0) ** 2)


def random_positive_spec(seed, h=1.0 / 32, bounds=EllipticityBounds(1.0, 2.0), t_end=2.0,
                         n_modes=3, floor=3.0):
    """Obstacle problem whose solution stays positive: random smooth data well above zero.

    Initial data is a random cosine series of amplitude < 1 above ``floor``;
    lateral data are the corner values plus random smooth time drifts, so
    the data are compatible at the corners.  With ``f = -1`` the solution
    decreases by at most ``t_end`` and stays positive for ``floor > t_end + 1``.
    """
    rng = np.random.default_rng(seed)
    amp = rng.uniform(-1, 1, n_modes) / n_modes
    freq = np.arange(1, n_modes + 1)
    phase = rng.uniform(0, 2 * np.pi, n_modes)
    drift = rng.uniform(-0.5, 0.5, (2, 2))

    def u0(x):
        return floor + sum(a * np.cos(k * np.pi * x / 2 + p) for a, k, p in zip(amp, freq, phase))

    left, right = u0(np.array(-1.0)), u0(np.array(1.0))

    def g(x, t):
        s = np.sin(np.pi * t / t_end)
        gl = left + drift[0, 0] * s + drift[0, 1] * s**2
        gr = right + drift[1, 0] * s + drift[1, 1] * s**2
        return np.where(x < 0, gl, gr) + 0.0 * x

    grid = Grid(extent=((-1.0, 1.0),), h=h, dt=h**2, t_range=(0.0, t_end))
    return ProblemSpec(pucci_diagonal(bounds, 1), grid, source=-1.0, boundary=g,
                       initial=u0(grid.axes[0]), name=f"harnack_{seed}")
