"""Problem data: viscosity, body force, boundary partition and exact solutions."""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from .mesh import ChannelGeometry, Rectangle


def _xy(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return x[:, 0], x[:, 1]


def zero_field(x):
    return np.zeros((np.atleast_2d(x).shape[0], 2))


@dataclass
class ManufacturedCase:
    """Exact velocity/pressure/force as callables on (npts, 2) arrays.

    ``grad_u`` returns (npts, 2, 2) with ``[:, c, d] = d u_c / d x_d``.
    """

    name: str
    nu: float
    u: callable
    grad_u: callable
    p: callable
    f: callable
    force_is_zero: bool = False


def test1_case(nu, geometry):
    """Harmonic-gradient flow u = nu * grad(x^3 - 3 x y^2), p = |u|^2 / 2 - mean."""

    def u(x):
        X, Y = _xy(x)
        return nu * np.column_stack([3 * (X**2 - Y**2), -6 * X * Y])

    def grad_u(x):
        X, Y = _xy(x)
        g = np.empty((len(X), 2, 2))
        g[:, 0, 0] = 6 * X
        g[:, 0, 1] = -6 * Y
        g[:, 1, 0] = -6 * Y
        g[:, 1, 1] = -6 * X
        return nu * g

    def q(x):
        X, Y = _xy(x)
        return 4.5 * (X**2 + Y**2) ** 2

    c = domain_mean(q, geometry)

    def p(x):
        return nu**2 * (q(x) - c)

    return ManufacturedCase("test1", nu, u, grad_u, p, zero_field, force_is_zero=True)


def test2_case(nu, geometry):
    """nu-independent harmonic flow with exponential decay in x."""
    a = 1.0 / 6.0

    def _e(X):
        return np.exp(-(X - 12.0) * a)

    def u(x):
        X, Y = _xy(x)
        e = _e(X)
        return np.column_stack([e * np.sin(a * Y), -e * np.cos(a * Y)])

    def grad_u(x):
        X, Y = _xy(x)
        e = _e(X)
        s, c = np.sin(a * Y), np.cos(a * Y)
        g = np.empty((len(X), 2, 2))
        g[:, 0, 0] = -a * e * s
        g[:, 0, 1] = a * e * c
        g[:, 1, 0] = a * e * c
        g[:, 1, 1] = a * e * s
        return g

    def p(x):
        X, Y = _xy(x)
        return _e(X) * np.sin(a * Y)

    def f(x):
        # f = (grad u) u - grad p, since nu * Lap u = 0
        X, Y = _xy(x)
        e = _e(X)
        s, c = np.sin(a * Y), np.cos(a * Y)
        conv = np.column_stack([-a * e**2, np.zeros_like(X)])
        gp = np.column_stack([-a * e * s, a * e * c])
        return conv - gp

    return ManufacturedCase("test2", nu, u, grad_u, p, f)


def domain_mean(fn, geometry, n=8):
    """Mean of a scalar function over a Rectangle by tensor Gauss quadrature."""
    if not isinstance(geometry, Rectangle):
        raise TypeError("domain_mean supports rectangles only")
    t, w = roots_legendre(n)
    xs = geometry.x0 + (geometry.x1 - geometry.x0) * (t + 1) / 2
    ys = geometry.y0 + (geometry.y1 - geometry.y0) * (t + 1) / 2
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    W = np.outer(w, w) / 4.0
    vals = fn(np.column_stack([X.ravel(), Y.ravel()]))
    return float((W.ravel() * vals).sum())


@dataclass
class ProblemSpec:
    """Steady Navier-Stokes data on a quad-tree geometry.

    ``dirichlet`` maps points (npts, 2) to velocities (npts, 2); it is
    evaluated only on edges whose boundary label is in ``dirichlet_labels``.
    Edges labelled with ``neumann_labels`` carry homogeneous traction.
    """

    nu: float
    geometry: object
    force: callable = None
    dirichlet: callable = zero_field
    dirichlet_labels: frozenset = frozenset({"boundary"})
    neumann_labels: frozenset = frozenset()
    exact: ManufacturedCase = None
    name: str = "custom"
    options: dict = field(default_factory=dict)

    @property
    def reynolds(self):
        return 1.0 / self.nu

    @property
    def has_neumann(self):
        return bool(self.neumann_labels)

    def force_values(self, x):
        if self.force is None:
            return zero_field(x)
        return np.asarray(self.force(x), dtype=float).reshape(-1, 2)


def manufactured_problem(case, re, geometry=None):
    nu = 1.0 / float(re)
    geometry = geometry or Rectangle(0.0, 0.0, 1.0, 1.0, cell=0.25)
    build = {"test1": test1_case, "test2": test2_case}[case]
    exact = build(nu, geometry)
    return ProblemSpec(
        nu=nu,
        geometry=geometry,
        force=None if exact.force_is_zero else exact.f,
        dirichlet=exact.u,
        dirichlet_labels=frozenset({"boundary"}),
        exact=exact,
        name=case,
    )


def inflow_profile(x, half_height=4.0):
    """Parabolic inflow with unit centreline velocity (H = 8: -(y-4)(y+4)/16)."""
    X, Y = _xy(x)
    ux = -(Y - half_height) * (Y + half_height) / half_height**2
    return np.column_stack([ux, np.zeros_like(ux)])


def channel_problem(re, geometry=None):
    geometry = geometry or ChannelGeometry()
    hh = geometry.height / 2.0
    x_in = geometry.x_min

    def g(x):
        x = np.atleast_2d(x)
        out = inflow_profile(x, hh)
        out[np.abs(x[:, 0] - x_in) > 1e-12 * max(1.0, abs(x_in))] = 0.0
        return out

    return ProblemSpec(
        nu=1.0 / float(re),
        geometry=geometry,
        force=None,
        dirichlet=g,
        dirichlet_labels=frozenset({"inflow", "wall", "cylinder"}),
        neumann_labels=frozenset({"outflow"}),
        name="cylinder",
    )
