"""Generation cost families and their derivatives.

Costs are per-bus functions C_i(u_i) that share a common shape: there is a
convex "common" cost C_o and per-bus scalings zeta_i > 0 such that the
marginal cost satisfies  C_i'(u) = C_o'(zeta_i * u).  The supported families:

- power:          C_i(u) = (c_i / r) u^r + b_i      (r even, >= 2)
- quadratic:      the power family tagged with r = 2
- shifted_common: C_i(u) = (1 / r) u^r + b_i        (zeta_i = 1 for all i)

The common marginal y -> y^(r-1) is strictly increasing and has the analytic
inverse y -> sign(y) |y|^(1/(r-1)); a bracketing bisection fallback covers
the general monotone case and doubles as an oracle for the analytic path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_FAMILIES = ("power", "quadratic", "shifted_common")

BISECT_TOL = 1e-12
BRACKET_LIMIT = 1e6


class CostError(ValueError):
    pass


@dataclass(frozen=True)
class CostModel:
    family: str
    r: int
    c: np.ndarray   # per-bus leading coefficient (ones for shifted_common)
    b: np.ndarray   # per-bus constant offset

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise CostError(f"unknown cost family {self.family!r}")
        if self.r < 2 or self.r % 2 != 0:
            raise CostError("cost exponent r must be an even integer >= 2")
        if self.family == "quadratic" and self.r != 2:
            raise CostError("quadratic family requires r = 2")
        if np.any(np.asarray(self.c) <= 0):
            raise CostError("cost coefficients must be strictly positive "
                            "(strict convexity)")

    @property
    def n(self):
        return len(self.c)

    @property
    def zeta(self):
        """Per-bus scaling in C_i'(u) = C_o'(zeta_i u)."""
        if self.family == "shifted_common":
            return np.ones(self.n)
        return self.c ** (1.0 / (self.r - 1))

    def values(self, u):
        """Per-bus cost C_i(u_i); u may carry leading batch dims."""
        u = np.asarray(u, dtype=float)
        return (self.c / self.r) * u ** self.r + self.b

    def grad(self, u):
        """Marginal cost C_i'(u_i) = c_i u^(r-1)."""
        u = np.asarray(u, dtype=float)
        return self.c * u ** (self.r - 1)

    def curvature(self, u):
        """Second derivative C_i''(u_i) = c_i (r-1) u^(r-2), nonnegative."""
        u = np.asarray(u, dtype=float)
        if self.r == 2:
            return np.broadcast_to(self.c, u.shape).astype(float).copy()
        return self.c * (self.r - 1) * u ** (self.r - 2)

    def grad_inverse(self, y):
        """Per-bus inverse of the marginal cost: u with C_i'(u) = y_i."""
        return self.common_grad_inverse(y) / self.zeta

    def common_grad(self, y):
        """Common marginal C_o'(y) = y^(r-1) (odd power, sign preserving)."""
        y = np.asarray(y, dtype=float)
        return y ** (self.r - 1)

    def common_grad_inverse(self, y, method="analytic"):
        """Invert the common marginal: find x with x^(r-1) = y.

        method="analytic" uses the closed form; method="bisection" brackets
        the root by doubling and halves to |residual| < 1e-12, available as a
        cross-check and for marginals without a closed-form inverse.
        """
        y = np.asarray(y, dtype=float)
        if method == "analytic":
            return np.sign(y) * np.abs(y) ** (1.0 / (self.r - 1))
        if method != "bisection":
            raise CostError(f"unknown inversion method {method!r}")
        out = np.empty(y.shape)
        for idx in np.ndindex(y.shape or (1,)):
            target = float(y[idx]) if y.shape else float(y)
            root = _bisect_increasing(lambda x: float(self.common_grad(x)), target)
            if y.shape:
                out[idx] = root
            else:
                return root
        return out


def _bisect_increasing(f, target, tol=BISECT_TOL, limit=BRACKET_LIMIT,
                       exhausted_msg="gradient range exhausted while bracketing inverse"):
    """Root of f(x) = target for increasing f, by doubling bracket + bisection.

    Stops on |f(x) - target| < tol, falling back to float-resolution stall
    (the midpoint stops moving) when the local slope makes that unreachable.
    """
    lo, hi = -1.0, 1.0
    while f(hi) < target:
        hi *= 2.0
        if hi > limit:
            raise CostError(exhausted_msg)
    while f(lo) > target:
        lo *= 2.0
        if lo < -limit:
            raise CostError(exhausted_msg)
    mid = 0.5 * (lo + hi)
    for _ in range(400):
        res = f(mid) - target
        if abs(res) < tol:
            return mid
        if res < 0:
            lo = mid
        else:
            hi = mid
        nxt = 0.5 * (lo + hi)
        if nxt == lo or nxt == hi:   # interval is two adjacent floats: done
            return nxt
        mid = nxt
    return mid


def power_costs(r, c, b=None) -> CostModel:
    c = np.asarray(c, dtype=float)
    b = np.zeros_like(c) if b is None else np.asarray(b, dtype=float)
    family = "quadratic" if r == 2 else "power"
    return CostModel(family=family, r=int(r), c=c, b=b)


def quadratic_costs(c, b=None) -> CostModel:
    return power_costs(2, c, b)


def shifted_common_costs(r, n, b=None) -> CostModel:
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
    return CostModel(family="shifted_common", r=int(r), c=np.ones(n), b=b)


def random_power_costs(n, rng, r=4) -> CostModel:
    """Random cost draw used throughout the experiments: c ~ U(0,1), b ~ U(0, 1e-3)."""
    c = rng.uniform(0.0, 1.0, size=n)
    b = rng.uniform(0.0, 1e-3, size=n)
    c = np.maximum(c, 1e-12)   # strict convexity even on a measure-zero draw
    return power_costs(r, c, b)
