"""Exact polygon integrals of polynomials via Green's theorem (sympy)."""
import sympy as sp

x, y, t = sp.symbols("x y t")


def polygon_integral(expr, verts):
    """int_P expr dx dy for a CCW polygon with (ideally rational) vertices."""
    F = sp.integrate(sp.sympify(expr), x)          # dF/dx = expr
    total = sp.Integer(0)
    n = len(verts)
    for i in range(n):
        (xa, ya), (xb, yb) = verts[i], verts[(i + 1) % n]
        xa, ya, xb, yb = map(sp.nsimplify, (xa, ya, xb, yb))
        xt = xa + t * (xb - xa)
        yt = ya + t * (yb - ya)
        total += sp.integrate(F.subs({x: xt, y: yt}) * (yb - ya), (t, 0, 1))
    return sp.nsimplify(total)


def as_float(v):
    return float(sp.N(v, 30))
