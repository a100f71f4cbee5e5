"""Golden-section search for one-dimensional unimodal minimization."""
from __future__ import annotations

import math

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class BracketError(RuntimeError):
    """The minimizer sits on the bracket boundary, so the bracket is too narrow."""


def golden_section(f, lo: float, hi: float, tol: float = 1e-10, max_iter: int = 1000) -> float:
    """Return the minimizer of a unimodal ``f`` on ``[lo, hi]`` to within ``tol``."""
    if not lo < hi:
        raise ValueError("need lo < hi")
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    else:
        raise RuntimeError("golden-section search did not converge")
    x = 0.5 * (a + b)
    edge = 2.0 * tol
    if (x - lo <= edge and f(lo) <= f(x)) or (hi - x <= edge and f(hi) <= f(x)):
        raise BracketError(f"minimizer at the edge of [{lo}, {hi}]")
    return x
