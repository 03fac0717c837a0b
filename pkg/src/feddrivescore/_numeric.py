"""Exact summation helpers.

Floats are dyadic rationals, so sums and sums of squares can be formed
exactly with integer arithmetic. Central and federated training both go
through these helpers, which is what makes the all-clients federated run
reproduce the central statistics to the last bit.
"""
from fractions import Fraction

import numpy as np


def _dyadic(x):
    num, den = float(x).as_integer_ratio()
    return num, den.bit_length() - 1


def exact_sum(values):
    """Exact sum of an iterable of finite floats, as a Fraction."""
    parts = [_dyadic(x) for x in values]
    if not parts:
        return Fraction(0)
    k = max(e for _, e in parts)
    total = sum(num << (k - e) for num, e in parts)
    return Fraction(total, 1 << k)


def exact_sum_squares(values):
    parts = [_dyadic(x) for x in values]
    if not parts:
        return Fraction(0)
    k = max(e for _, e in parts)
    total = sum((num * num) << (2 * (k - e)) for num, e in parts)
    return Fraction(total, 1 << (2 * k))


def column_sums(X):
    """Per-column exact (sum, sum of squares) for a 2-D float array."""
    X = np.asarray(X, dtype=float)
    cols = X.T.tolist()
    return [exact_sum(c) for c in cols], [exact_sum_squares(c) for c in cols]


def moments(n, s, o, n_distinct=None):
    """Mean and unbiased variance from a count, a sum and a sum of squares.

    ``n_distinct`` is the number of distinct samples behind the sums. When
    sums were accumulated with repeats (a client counted in several rounds),
    the ratios ``s/n`` and ``o/n`` are unaffected but the Bessel correction
    must use the distinct count.
    """
    m = n if n_distinct is None else n_distinct
    if n < 1 or m < 2:
        raise ValueError("need at least two distinct samples for a variance")
    s = Fraction(s)
    o = Fraction(o)
    mean = s / n
    pop_var = o / n - mean * mean
    if pop_var < 0:
        # only reachable through fixed-point rounding of encrypted sums
        pop_var = Fraction(0)
    return float(mean), float(pop_var * m / (m - 1))
