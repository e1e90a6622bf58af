"""Derive the closed-form Gaspari-Cohn correlation used by ``fsbgl.covkernels``.

The piecewise-linear generator B0(s | a, c=1) is treated as a radial function in
R^3 and convolved with itself.  For radial f, g in R^3

    (f * g)(r) = (2 pi / r) int_0^inf s f(s) int_{|r-s|}^{r+s} t g(t) dt ds,

so with piecewise-linear f = g the result is piecewise polynomial (degree <= 5)
plus a 1/r term.  The script prints the normalized coefficients per interval of
r in units of c; paste the output into ``covkernels._GC_PIECES``.

Run:  python scripts/derive_gaspari_cohn.py
"""
import sympy as sp

a = sp.Rational(-1, 10)
s, t, r = sp.symbols("s t r", nonnegative=True)

B_pieces = [(sp.Integer(0), sp.Rational(1, 2), 1 + 2 * (a - 1) * t),
            (sp.Rational(1, 2), sp.Integer(1), 2 * a * (1 - t))]


def B(x):
    return sp.Piecewise((1 + 2 * (a - 1) * x, x < sp.Rational(1, 2)),
                        (2 * a * (1 - x), x <= 1), (0, True))


def T_expr(u_lo, u_hi):
    """int_{u_lo}^{u_hi} t B(t) dt for numeric ordering decided by caller."""
    return sp.integrate(t * B(t), (t, u_lo, u_hi))


# cumulative T(u) = int_0^u t B(t) dt as explicit pieces
T0 = sp.integrate(t * (1 + 2 * (a - 1) * t), (t, 0, s))
T_half = T0.subs(s, sp.Rational(1, 2))
T1 = T_half + sp.integrate(t * 2 * a * (1 - t), (t, sp.Rational(1, 2), s))
T_full = T1.subs(s, 1)


def T_of(u, u_num):
    """T(u) with the branch chosen from the numeric value u_num."""
    if u_num <= 0.5:
        return T0.subs(s, u)
    if u_num <= 1:
        return T1.subs(s, u)
    return T_full


def B_of(x_num):
    return 1 + 2 * (a - 1) * s if x_num < 0.5 else 2 * a * (1 - s)


r_breaks = [sp.Rational(k, 4) for k in range(0, 9)]
pieces = []
center = 4 * sp.pi * sp.integrate(s**2 * (1 + 2 * (a - 1) * s) ** 2, (s, 0, sp.Rational(1, 2))) \
    + 4 * sp.pi * sp.integrate(s**2 * (2 * a * (1 - s)) ** 2, (s, sp.Rational(1, 2), 1))

for lo, hi in zip(r_breaks[:-1], r_breaks[1:]):
    r0 = float((lo + hi) / 2)
    cand = {0.0: sp.Integer(0), 0.5: sp.Rational(1, 2), 1.0: sp.Integer(1)}
    for expr in (r - sp.Rational(1, 2), r - 1, r, r + sp.Rational(1, 2), r + 1,
                 sp.Rational(1, 2) - r, 1 - r):
        val = float(expr.subs(r, r0))
        if 0 < val < 1:
            cand[val] = expr
    knots = sorted(cand.items())
    total = 0
    for (v_lo, e_lo), (v_hi, e_hi) in zip(knots[:-1], knots[1:]):
        sm = (v_lo + v_hi) / 2
        upper = T_of(r + s, r0 + sm)
        diff_num = abs(r0 - sm)
        lower_arg = (r - s) if r0 >= sm else (s - r)
        lower = T_of(lower_arg, diff_num)
        integrand = s * B_of(sm) * (upper - lower)
        total += sp.integrate(sp.expand(integrand), (s, e_lo, e_hi))
    expr = sp.expand(sp.simplify(2 * sp.pi / r * total / center))
    pieces.append((lo, hi, expr))

# adjacent quarter intervals share a formula; report on multiples of c/2
merged = []
for lo, hi, expr in pieces:
    if merged and sp.simplify(merged[-1][2] - expr) == 0:
        merged[-1] = (merged[-1][0], hi, expr)
    else:
        merged.append((lo, hi, expr))

for lo, hi, expr in merged:
    poly = sp.Poly(sp.expand(expr * r), r)
    coeffs = [poly.coeff_monomial(r**k) for k in range(0, 7)]
    # expr = coeffs[0] / r + sum_{k>=1} coeffs[k] r^(k-1)
    poly_part = ", ".join(f"{sp.nsimplify(c)}" for c in coeffs[1:])
    print(f"({lo}, {hi}, {sp.nsimplify(coeffs[0])}, ({poly_part})),")
