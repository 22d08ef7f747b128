"""Optimal steady state of the controlled network.

With identical marginal costs as the optimality condition, the closed-loop
equilibrium is fully determined by the aggregate disturbance: a common
marginal-cost level gamma splits the burden -sum(p) across buses in inverse
proportion to their cost scalings, the network angles then solve a lossless
power flow for those injections, and each integral state is read off the
controller's inverse.  The open-loop (or droop-controlled) counterpart is a
single scalar balance giving the synchronous frequency deviation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controller import NetParams, eval_u
from .costs import CostError, CostModel, _bisect_increasing
from .network import (PowerNetwork, edge_angle_spread, flow_jacobian,
                      power_flows, to_center_of_inertia)

NEWTON_TOL = 1e-11
NEWTON_MAX_ITER = 100
NEWTON_MAX_HALVINGS = 30


class EquilibriumError(ValueError):
    pass


@dataclass(frozen=True)
class Equilibrium:
    """Closed-loop fixed point (gamma and s_star are None in primary mode)."""

    gamma: float
    u_star: np.ndarray
    delta_star: np.ndarray
    s_star: np.ndarray
    omega_star: float


def solve_gamma(costs: CostModel, p, method="analytic") -> float:
    """Common marginal-cost level balancing the total disturbance.

    Power balance with equal marginals forces the common inverse at gamma to
    equal -sum(p) / sum(1/zeta).  The analytic path inverts in closed form;
    the bisection path solves the same scalar equation numerically end to
    end (outer search over gamma, inner numeric marginal inverses) as an
    independent cross-check.
    """
    p = np.asarray(p, dtype=float)
    inv_zeta_sum = float(np.sum(1.0 / costs.zeta))
    target = -float(np.sum(p))
    if method == "analytic":
        return float(costs.common_grad(target / inv_zeta_sum))
    if method != "bisection":
        raise EquilibriumError(f"unknown solve_gamma method {method!r}")

    def total_injection(gamma):
        return float(costs.common_grad_inverse(gamma, method="bisection")) * inv_zeta_sum

    return _bisect_increasing(total_injection, target)


def steady_injections(costs: CostModel, gamma) -> np.ndarray:
    """Per-bus injections with marginal cost gamma everywhere."""
    return costs.common_grad_inverse(gamma) / costs.zeta


def newton_power_flow(net: PowerNetwork, injections, guess=None) -> np.ndarray:
    """Angles delta with power_flows(delta) = injections, in mean-zero gauge.

    Damped Newton iteration; the flow Jacobian is singular along the all-ones
    direction, so the linear solve augments it with a scaled rank-one term
    that pins the mean (the residual is orthogonal to ones whenever the
    injections balance, so the added term does not bias the step).
    """
    injections = np.asarray(injections, dtype=float)
    n = net.n
    if abs(float(injections.sum())) > 1e-9:
        raise EquilibriumError(
            f"injections must balance: sum = {injections.sum():.3e}")
    delta = np.zeros(n) if guess is None else to_center_of_inertia(guess)
    res = power_flows(net, delta) - injections
    res_norm = float(np.linalg.norm(res))
    ones = np.ones((n, n)) / n
    for _ in range(NEWTON_MAX_ITER):
        if float(np.max(np.abs(res))) < NEWTON_TOL:
            if edge_angle_spread(net, delta) >= np.pi / 2:
                raise EquilibriumError("outside security region: an edge angle "
                                       "difference reached pi/2")
            return delta
        H = flow_jacobian(net, delta)
        pin = (np.trace(H) / n) * ones
        try:
            step = np.linalg.solve(H + pin, -res)
        except np.linalg.LinAlgError:
            raise EquilibriumError("power flow infeasible (singular Jacobian)")
        t = 1.0
        for _ in range(NEWTON_MAX_HALVINGS):
            cand = to_center_of_inertia(delta + t * step)
            cand_res = power_flows(net, cand) - injections
            cand_norm = float(np.linalg.norm(cand_res))
            if cand_norm < res_norm:
                break
            t *= 0.5
        else:
            raise EquilibriumError("power flow infeasible (no descent step)")
        delta, res, res_norm = cand, cand_res, cand_norm
    raise EquilibriumError("power flow infeasible (Newton did not converge)")


def solve_s_star(params: NetParams, u_star, bus_ids=None) -> np.ndarray:
    """Integral states mapping through the controllers to the target u*.

    Each bus is a scalar monotone inversion: bisect eval_u (piecewise linear,
    nondecreasing) to hit u*_i.  A target beyond the saturation bounds, or
    beyond the policy's actual range, cannot be realized by any s.
    """
    u_star = np.asarray(u_star, dtype=float)
    n = params.n
    ids = bus_ids if bus_ids is not None else list(range(n))
    s_star = np.zeros(n)
    for i in range(n):
        ui = float(u_star[i])
        if ui == 0.0:
            continue
        if ui > params.u_hi[i] or ui < params.u_lo[i]:
            raise EquilibriumError(
                f"equilibrium outside controller range at bus {ids[i]}: "
                f"u* = {ui:.6g} not within [{params.u_lo[i]:.6g}, {params.u_hi[i]:.6g}]")

        def u_of_s(s, _i=i):
            x = np.zeros(n)
            x[_i] = s
            return float(eval_u(params, x)[_i])

        try:
            s_star[i] = _bisect_increasing(u_of_s, ui, limit=1e9)
        except CostError:
            raise EquilibriumError(
                f"equilibrium outside controller range at bus {ids[i]}: "
                f"u* = {ui:.6g} unreachable") from None
    return s_star


def synchronous_frequency(net: PowerNetwork, p, params: NetParams = None) -> float:
    """Steady frequency deviation of the all-machine (primary/open-loop) model.

    Solves sum_i u_i(omega) + omega * sum(alpha) = sum(p) for the scalar
    omega; with no controllers this is the classic sum(p)/sum(alpha).
    """
    p = np.asarray(p, dtype=float)
    alpha_sum = float(net.alpha.sum())
    p_sum = float(p.sum())
    if params is None:
        return p_sum / alpha_sum

    def balance(omega):
        u = eval_u(params, np.full(net.n, omega))
        return float(u.sum()) + omega * alpha_sum

    return _bisect_increasing(balance, p_sum, limit=1e9,
                              exhausted_msg="synchronous frequency bracket exhausted")


def solve_equilibrium(net: PowerNetwork, costs: CostModel, params: NetParams,
                      p, mode="dai_general") -> Equilibrium:
    """Full fixed point of the chosen closed loop.

    DAI modes: zero frequency deviation, common marginal cost, network flow
    solve, controller inversion.  Primary mode: scalar synchronous frequency,
    droop injections at that frequency, then the flow solve.
    """
    p = np.asarray(p, dtype=float)
    if mode == "primary":
        omega = synchronous_frequency(net, p, params)
        u = eval_u(params, np.full(net.n, omega)) if params is not None \
            else np.zeros(net.n)
        inj = p - net.alpha * omega - u
        delta = newton_power_flow(net, inj)
        return Equilibrium(gamma=None, u_star=u, delta_star=delta,
                           s_star=None, omega_star=omega)
    gamma = solve_gamma(costs, p)
    u_star = steady_injections(costs, gamma)
    delta_star = newton_power_flow(net, p + u_star)
    s_star = solve_s_star(params, u_star, bus_ids=list(net.ids))
    return Equilibrium(gamma=gamma, u_star=u_star, delta_star=delta_star,
                       s_star=s_star, omega_star=0.0)


def equilibrium_residuals(net: PowerNetwork, costs: CostModel,
                          params: NetParams, p, eq: Equilibrium) -> dict:
    """Numerical residuals of the fixed-point conditions (for reporting)."""
    p = np.asarray(p, dtype=float)
    out = {}
    if eq.gamma is not None:
        mc = costs.grad(eq.u_star)
        out["marginal_cost_spread"] = float(mc.max() - mc.min())
        out["power_balance"] = float(np.sum(p) + np.sum(eq.u_star))
        flow_res = power_flows(net, eq.delta_star) - (p + eq.u_star)
    else:
        flow_res = power_flows(net, eq.delta_star) \
            - (p - net.alpha * eq.omega_star - eq.u_star)
    out["flow_residual_max"] = float(np.max(np.abs(flow_res)))
    if eq.s_star is not None:
        out["controller_residual_max"] = float(
            np.max(np.abs(eval_u(params, eq.s_star) - eq.u_star)))
    out["edge_angle_spread"] = edge_angle_spread(net, eq.delta_star)
    return out
