"""Portable random streams for the surrogate model.

The generator is SplitMix64 (Steele, Lea & Flood 2014, as published by
Vigna): a 64-bit state advanced by the golden-gamma increment and passed
through a fixed mixing function.  Uniforms take the top 53 bits of each
output, ``u = (x >> 11) * 2**-53``, giving values in ``[0, 1)``.

Binomial variates are drawn by inverse CDF: the result is the smallest ``k``
with ``F(k) >= u``.  The CDF is evaluated anchored at the mode so that large
``n`` never underflows ``q**n``:

1. ``mode = min(floor((n + 1) p), n)`` and ``pmf(mode)`` from ``lgamma``.
2. ``F(mode)`` sums pmf terms downward from the mode with the ratio
   ``pmf(k-1) = pmf(k) * k / (n-k+1) * q / p``, stopping at ``k = 0`` or once
   a term falls below ``1e-17`` times the running sum.
3. If ``u <= F(mode)`` walk down while ``F(k-1) >= u``; otherwise walk up
   adding ``pmf(k+1)`` until ``F(k) >= u``, ``k = n``, or the added term
   drops below ``1e-17`` times the running sum.

Both the numba kernels and the pure-Python :class:`SplitMix64` follow this
recipe exactly, so a reimplementation elsewhere can reproduce streams.
"""

from __future__ import annotations

import math

import numba
import numpy as np

__all__ = ["SplitMix64", "binomial_icdf"]

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TAIL = 1e-17


class SplitMix64:
    """Pure-Python SplitMix64 stream."""

    def __init__(self, seed: int) -> None:
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def binomial(self, n: int, p: float) -> int:
        return int(binomial_icdf(int(n), float(p), self.uniform()))


@numba.njit(cache=True)
def _next_uniform(state):
    # state is a length-1 uint64 array, advanced in place
    s = state[0] + np.uint64(0x9E3779B97F4A7C15)
    state[0] = s
    z = s
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return np.float64(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def binomial_icdf(n, p, u):
    """Smallest ``k`` in ``0..n`` with ``Binomial(n, p).cdf(k) >= u``."""
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    q = 1.0 - p
    down = q / p
    up = p / q
    mode = int(math.floor((n + 1) * p))
    if mode > n:
        mode = n
    log_pm = (math.lgamma(n + 1.0) - math.lgamma(mode + 1.0) - math.lgamma(n - mode + 1.0)
              + mode * math.log(p) + (n - mode) * math.log(q))
    pm = math.exp(log_pm)

    cdf = pm
    t = pm
    k = mode
    while k > 0:
        t *= k / (n - k + 1.0) * down
        k -= 1
        cdf += t
        if t < _TAIL * cdf:
            break

    k = mode
    t = pm
    if u <= cdf:
        while k > 0:
            below = cdf - t
            if below < u:
                break
            cdf = below
            t *= k / (n - k + 1.0) * down
            k -= 1
        return k
    while cdf < u and k < n:
        t *= (n - k) / (k + 1.0) * up
        k += 1
        cdf += t
        if t < _TAIL * cdf:
            break
    return k
