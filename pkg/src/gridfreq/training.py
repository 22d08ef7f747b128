"""Gradient-descent training of the monotone policies through the dynamics.

The discrete-time rollout (forward Euler, identical recursion order to the
simulator) is unrolled over L steps for a batch of random disturbances, and
the loss

    J = mean over batch [ sum_gens max_l |omega_i at step l+1|
                          + rho * (1/L) sum_i sum_l C_i(u_i(s_i at step l)) ]

is differentiated exactly in reverse mode, by hand: adjoints flow backward
through the Euler updates, through the controllers via their right-limit
slopes, through the marginal costs via the cost curvature, through the
network flows via the angle Jacobian (applied matrix-free), through the
algebraic load-bus frequencies, and finally through the square/telescoping
reparameterization onto the raw parameters.  The frequency-nadir term routes
its entire gradient to the first step attaining each bus's maximum.

No autodiff framework is involved; a central-finite-difference checker is
provided and wired into the test suite and the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .controller import (NetParams, RawParams, eval_slope, eval_u,
                         init_raw_params, transform_params, validate_params)
from .costs import CostModel
from .network import PowerNetwork, comm_laplacian_apply, flow_jacobian_apply, power_flows


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; defaults are sized for the packaged 39-bus case."""

    rho: float = 0.01           # cost-term weight in the loss
    d: int = 20                 # hidden pairs per controller
    h: float = 5e-4             # rollout step (s)
    T: float = 2.5              # rollout horizon (s)
    batch_size: int = 64
    epochs: int = 50
    lr: float = 0.4
    lr_decay: float = 0.95
    p_lo: float = -5.0
    p_hi: float = 5.0
    seed: int = 0
    u_lo: float = None          # optional saturation for the trained policies
    u_hi: float = None
    dz: float = 0.0

    @property
    def steps(self):
        return int(np.floor(self.T / self.h + 1e-9))


@dataclass
class Tape:
    """Forward-pass record needed by the exact backward pass.

    Controller outputs, slopes, and marginal costs are recomputed during the
    backward sweep from the stored (theta, omega_G, s) tracks; storing the
    three state tracks is enough to reproduce every intermediate exactly.
    """

    raw: RawParams
    params: NetParams
    p: np.ndarray               # (B, n) disturbances
    theta: np.ndarray           # (L+1, B, n)
    omega_g: np.ndarray         # (L+1, B, n_gen)
    s: np.ndarray               # (L+1, B, n)
    loss: float
    nadir_step: np.ndarray      # (B, n_gen) argmax step index (first on ties)
    nadir_sign: np.ndarray      # (B, n_gen) sign of omega at that step
    cfg: TrainConfig


def rollout_loss(net: PowerNetwork, costs: CostModel, raw: RawParams,
                 p: np.ndarray, cfg: TrainConfig,
                 initial=None) -> tuple[float, Tape]:
    """Unroll the closed loop for a disturbance batch and score it.

    p has shape (B, n).  Returns the scalar loss (batch mean) and the tape
    for backprop.  The recursion order matches dynamics.euler_step: load
    frequencies from the pre-step state, then angle/frequency/integrator
    updates from the same step's quantities.
    """
    params = transform_params(raw, u_lo=cfg.u_lo, u_hi=cfg.u_hi, dz=cfg.dz)
    p = np.asarray(p, dtype=float)
    B = p.shape[0]
    n = net.n
    g, ll = net.gens, net.loads
    L = cfg.steps
    h = cfg.h
    two_pi_f0 = 2.0 * np.pi * net.f0
    zeta = costs.zeta

    theta = np.zeros((L + 1, B, n))
    omega_g = np.zeros((L + 1, B, len(g)))
    s = np.zeros((L + 1, B, n))
    if initial is not None:
        theta[0], omega_g[0], s[0] = initial

    cost_acc = np.zeros(B)
    for l in range(L):
        u = eval_u(params, s[l])
        flows = power_flows(net, theta[l])
        omega = np.zeros((B, n))
        omega[:, g] = omega_g[l]
        omega[:, ll] = (-flows[:, ll] + p[:, ll] + u[:, ll]) / net.alpha[ll]
        mc = costs.grad(u)
        lap = zeta * comm_laplacian_apply(net, mc)
        theta[l + 1] = theta[l] + h * (two_pi_f0 * (omega - omega.mean(axis=-1, keepdims=True)))
        omega_g[l + 1] = omega_g[l] + h * (
            (-net.alpha[g] * omega_g[l] - flows[:, g] + p[:, g] + u[:, g]) / net.m)
        s[l + 1] = s[l] + h * (-two_pi_f0 * omega - lap)
        cost_acc += costs.values(u).sum(axis=-1)
        if not (np.all(np.isfinite(s[l + 1])) and np.all(np.isfinite(omega_g[l + 1]))
                and np.all(np.isfinite(theta[l + 1]))):
            raise FloatingPointError(f"integration blow-up at rollout step {l}")

    abs_om = np.abs(omega_g[1:])                      # (L, B, n_gen)
    nadir_step = np.argmax(abs_om, axis=0)            # first max on ties
    peak = np.take_along_axis(omega_g[1:], nadir_step[None], axis=0)[0]
    nadir_sign = np.sign(peak)
    nadir_val = np.abs(peak).sum(axis=-1)             # (B,)
    loss = float(np.mean(nadir_val + cfg.rho * cost_acc / L))
    return loss, Tape(raw=raw, params=params, p=p, theta=theta,
                      omega_g=omega_g, s=s, loss=loss,
                      nadir_step=nadir_step, nadir_sign=nadir_sign, cfg=cfg)


def backprop(tape: Tape, net: PowerNetwork, costs: CostModel) -> RawParams:
    """Exact reverse-mode gradient of the rollout loss w.r.t. raw params.

    Returns a RawParams-shaped bundle holding dJ/d(mu, chi).  Adjoint
    conventions: g_theta/g_w/g_s enter iteration l as the adjoints of the
    step-(l+1) states; the nadir term injects sign(omega) into g_w at each
    bus's argmax step; all controller-parameter contributions are gated by
    the same saturation/deadband masks as the forward evaluation.
    """
    cfg = tape.cfg
    params = tape.params
    raw = tape.raw
    p = tape.p
    B, n = p.shape
    g, ll = net.gens, net.loads
    L = cfg.steps
    h = cfg.h
    two_pi_f0 = 2.0 * np.pi * net.f0
    zeta = costs.zeta
    inv_alpha_l = 1.0 / net.alpha[ll]
    inv_m = 1.0 / net.m

    g_theta = np.zeros((B, n))
    g_w = np.zeros((B, len(g)))
    g_s = np.zeros((B, n))
    gk_p = np.zeros_like(params.k_plus)
    gb_p = np.zeros_like(params.b_plus)
    gk_m = np.zeros_like(params.k_minus)
    gb_m = np.zeros_like(params.b_minus)

    for l in range(L - 1, -1, -1):
        # nadir injection: omega_g[l+1] enters the loss max for buses whose
        # argmax is exactly this step
        g_w = g_w + np.where(tape.nadir_step == l, tape.nadir_sign, 0.0)

        sl = tape.s[l]
        u = eval_u(params, sl)
        mc = costs.grad(u)

        # adjoint of the full omega vector used by the theta and s updates
        pg = g_theta - g_theta.mean(axis=-1, keepdims=True)
        a_omega = two_pi_f0 * h * pg - two_pi_f0 * h * g_s

        a_u = np.zeros((B, n))
        a_flows = np.zeros((B, n))

        # swing update: omega_g[l+1] depends on u_G, flows_G, omega_g[l]
        a_u[:, g] += h * inv_m * g_w
        a_flows[:, g] -= h * inv_m * g_w

        # algebraic load frequencies fan out into u_L, flows_L
        a_wl = a_omega[:, ll] * inv_alpha_l
        a_u[:, ll] += a_wl
        a_flows[:, ll] -= a_wl

        # consensus term: s[l+1] -= h * zeta (.) L_Q grad_C(u)
        a_mc = -h * comm_laplacian_apply(net, zeta * g_s)
        a_u += costs.curvature(u) * a_mc

        # running cost term (every step l = 0..L-1)
        a_u += (cfg.rho / L) * mc

        # controller parameter gradients at input s[l]
        xe = np.sign(sl) * np.maximum(np.abs(sl) - params.dz, 0.0)
        xcol = xe[..., None]
        relu_p = np.maximum(xcol - params.b_plus, 0.0)
        relu_m = np.maximum(-xcol + params.b_minus, 0.0)
        g_unc = np.sum(params.k_plus * relu_p, axis=-1) \
            + np.sum(params.k_minus * relu_m, axis=-1)
        unsat = (g_unc < params.u_hi) & (g_unc > params.u_lo)
        a_eff = (a_u * unsat)[..., None]
        gk_p += np.sum(a_eff * relu_p, axis=0)
        gb_p += np.sum(a_eff * (-params.k_plus) * (xcol > params.b_plus), axis=0)
        gk_m += np.sum(a_eff * relu_m, axis=0)
        gb_m += np.sum(a_eff * params.k_minus * (xcol < params.b_minus), axis=0)

        # state adjoints for the previous step
        slope = eval_slope(params, sl)
        g_s = g_s + slope * a_u
        g_w = (1.0 - h * net.alpha[g] * inv_m) * g_w + a_omega[:, g]
        g_theta = g_theta + flow_jacobian_apply(net, tape.theta[l], a_flows)

    # chain through the square/telescoping reparameterization; batch mean
    gk_p /= B
    gb_p /= B
    gk_m /= B
    gb_m /= B
    g_mu_p = 2.0 * raw.mu_plus * (gk_p - np.concatenate(
        [gk_p[:, 1:], np.zeros((n, 1))], axis=1))
    g_mu_m = -2.0 * raw.mu_minus * (gk_m - np.concatenate(
        [gk_m[:, 1:], np.zeros((n, 1))], axis=1))
    # b_plus[j] = sum_{l<j} chi_l^2  =>  dJ/dchi_l = 2 chi_l * sum_{j>l} gb[j]
    tail_p = np.cumsum(gb_p[:, ::-1], axis=1)[:, ::-1]
    tail_m = np.cumsum(gb_m[:, ::-1], axis=1)[:, ::-1]
    g_chi_p = 2.0 * raw.chi_plus * tail_p[:, 1:]
    g_chi_m = -2.0 * raw.chi_minus * tail_m[:, 1:]
    return RawParams(mu_plus=g_mu_p, mu_minus=g_mu_m,
                     chi_plus=g_chi_p, chi_minus=g_chi_m)


def finite_difference_gradients(net: PowerNetwork, costs: CostModel,
                                raw: RawParams, p, cfg: TrainConfig,
                                eps=1e-6) -> RawParams:
    """Central finite differences of the rollout loss (oracle for backprop)."""

    def loss_at(r):
        return rollout_loss(net, costs, r, p, cfg)[0]

    grads = {}
    for name in ("mu_plus", "mu_minus", "chi_plus", "chi_minus"):
        base = getattr(raw, name)
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            bumped = {f: getattr(raw, f).copy()
                      for f in ("mu_plus", "mu_minus", "chi_plus", "chi_minus")}
            bumped[name][idx] = base[idx] + eps
            up = loss_at(RawParams(**bumped))
            bumped[name][idx] = base[idx] - eps
            down = loss_at(RawParams(**bumped))
            grad[idx] = (up - down) / (2.0 * eps)
        grads[name] = grad
    return RawParams(**grads)


def gradient_tie_risk(tape: Tape, tol=1e-5) -> bool:
    """Detect nondifferentiable-point proximity that would corrupt FD checks.

    Flags trajectories where some controller input sits within tol of a
    breakpoint, deadband edge, or saturation crossing, or where a bus's
    nadir is nearly tied between two steps.  Inputs that are exactly zero are
    exempt from the origin-breakpoint check: every policy passes through the
    origin, so integral states stay pinned at exactly 0.0 until their bus is
    first driven, and a pinned zero on the structural (immovable) origin
    breakpoint cannot cross it under a parameter perturbation.
    """
    params = tape.params
    s = tape.s[:-1]                                  # inputs used in the loss
    xe = np.sign(s) * np.maximum(np.abs(s) - params.dz, 0.0)
    moving = xe != 0.0
    if np.any(moving & (np.abs(xe) < tol)):          # near the origin breakpoint
        return True
    if params.d > 1:
        for bp in (params.b_plus, params.b_minus):   # movable breakpoints j >= 1
            dist = np.abs(xe[..., None] - bp[..., 1:])
            risky = (dist < tol) & (moving[..., None] | (bp[..., 1:] != 0.0))
            if np.any(risky):
                return True
    if np.any(params.dz > 0) and np.any(
            (np.abs(np.abs(s) - params.dz) < tol) & (s != 0.0)):
        return True
    finite_hi = np.isfinite(params.u_hi)
    finite_lo = np.isfinite(params.u_lo)
    if np.any(finite_hi) or np.any(finite_lo):
        g_unc = np.sum(params.k_plus * np.maximum(xe[..., None] - params.b_plus, 0.0), axis=-1) \
            + np.sum(params.k_minus * np.maximum(-xe[..., None] + params.b_minus, 0.0), axis=-1)
        if np.any(finite_hi & (np.abs(g_unc - params.u_hi) < tol) & moving):
            return True
        if np.any(finite_lo & (np.abs(g_unc - params.u_lo) < tol) & moving):
            return True
    abs_om = np.abs(tape.omega_g[1:])
    if abs_om.shape[0] >= 2:
        top2 = np.sort(abs_om, axis=0)[-2:]
        if np.any(top2[1] - top2[0] < tol):
            return True
    return False


@dataclass
class TrainResult:
    raw: RawParams
    params: NetParams
    loss_history: np.ndarray
    seed: int


def train(net: PowerNetwork, costs: CostModel, cfg: TrainConfig) -> TrainResult:
    """Seeded full training loop.

    Initializes raw parameters from the standard distribution, then per
    epoch: draw a fresh batch of uniform disturbances, roll out, backprop,
    and take a plain gradient step with geometrically decaying rate.  The
    monotonicity chains hold at every epoch by construction (asserted).
    """
    rng = np.random.default_rng(cfg.seed)
    raw = init_raw_params(net.n, cfg.d, rng)
    history = np.zeros(cfg.epochs)
    for e in range(cfg.epochs):
        p = rng.uniform(cfg.p_lo, cfg.p_hi, size=(cfg.batch_size, net.n))
        try:
            loss, tape = rollout_loss(net, costs, raw, p, cfg)
        except FloatingPointError as exc:
            raise FloatingPointError(
                f"{exc} (epoch {e}, seed {cfg.seed})") from None
        grads = backprop(tape, net, costs)
        lr = cfg.lr * cfg.lr_decay ** e
        raw = RawParams(
            mu_plus=raw.mu_plus - lr * grads.mu_plus,
            mu_minus=raw.mu_minus - lr * grads.mu_minus,
            chi_plus=raw.chi_plus - lr * grads.chi_plus,
            chi_minus=raw.chi_minus - lr * grads.chi_minus,
        )
        params = transform_params(raw, u_lo=cfg.u_lo, u_hi=cfg.u_hi, dz=cfg.dz)
        if not validate_params(params, warn=False):
            raise AssertionError("monotonicity chain broken during training")
        history[e] = loss
    return TrainResult(raw=raw,
                       params=transform_params(raw, u_lo=cfg.u_lo,
                                               u_hi=cfg.u_hi, dz=cfg.dz),
                       loss_history=history, seed=cfg.seed)
