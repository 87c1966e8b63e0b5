"""Independent reference values computed with sympy residues (test helper)."""

from __future__ import annotations

from itertools import permutations

import sympy

z = sympy.Symbol("z")


def tensor_expr(tensor, zs):
    """Sum over ordered label arrangements of ``c * prod e_i(z_i) / dz_i``."""
    out = 0
    for key, c in tensor.items():
        coef = sympy.Rational(int(c.numerator), int(c.denominator))
        for perm in set(permutations(key)):
            term = coef
            for e, zi in zip(perm, zs):
                if e[0] == "h":
                    term *= zi ** (e[1] - 1)
                else:
                    q = sympy.Rational(int(e[1].numerator), int(e[1].denominator))
                    term *= 1 / (zi - q) ** e[2]
            out += term
    return sympy.simplify(out)


def airy_ceo(g, n, zs):
    """Residue formula on ``x = z^2, y = z`` for (0, 3) and (1, 1)."""
    z0 = zs[0]
    kern = (1 / (z0 - z) - 1 / (z0 + z)) / (2 * (2 * z) * (2 * z))

    def B(a, b, da=1):
        return da / (a - b) ** 2

    if (g, n) == (0, 3):
        z1, z2 = zs[1], zs[2]
        body = B(z, z1) * B(-z, z2, -1) + B(z, z2) * B(-z, z1, -1)
    elif (g, n) == (1, 1):
        body = -1 / (2 * z) ** 2
    else:
        raise ValueError("only (0, 3) and (1, 1) are tabulated")
    return sympy.simplify(sympy.residue(kern * body, z, 0))
