"""Energy functions and numerical stability certification.

Two closed loops, two energy functions:

- DAI modes: W = kinetic term + Bregman divergence of the network potential
  + Bregman divergence of the controller integral L(s).  Its derivative
  along trajectories splits into three nonpositive pieces: generator
  damping, a marginal-cost consensus term (a scaled Laplacian bilinear
  form), and a load-bus bracket.
- primary mode: V = kinetic + potential Bregman + a small cross term
  epsilon * (flow mismatch) . M . (frequency mismatch), whose derivative is
  a quadratic form in (flow mismatch, frequency mismatch) defined by a
  2n x 2n matrix Q(delta), minus a controller damping term.

Everything here is numeric: positivity and decrease are checked on sampled
states and along simulated trajectories, the epsilon in V comes from a grid
search with a positive-definiteness test at sampled angles, and the decay
constant is assembled from sampled extremal ratios.  Small dense symmetric
eigenproblems are solved with a hand-rolled cyclic Jacobi iteration so the
certification path stays free of heavyweight solver dependencies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controller import NetParams, eval_u
from .costs import CostModel
from .dynamics import SystemState, Trajectory, full_inertia
from .equilibrium import Equilibrium
from .network import (PowerNetwork, edge_angle_spread, flow_jacobian,
                      flow_jacobian_apply, potential_energy, power_flows,
                      scaled_laplacian_bilinear, to_center_of_inertia)

DEFAULT_EPS_GRID = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
REGION_MARGIN = 0.05          # rad, kept away from the pi/2 edge limit
OMEGA_RANGE = 0.05            # pu, sampling box for frequency deviations
S_RANGE = 2.0                 # sampling box for integral states


class LyapunovError(ValueError):
    pass


# --------------------------------------------------------------------------
# controller integral L(s) = sum_i int_0^{s_i} u_i
# --------------------------------------------------------------------------

def _unclamped_g(params: NetParams, i, x):
    """f_plus + f_minus for bus i at inputs x (deadband applied, no clip)."""
    xe = np.sign(x) * np.maximum(np.abs(x) - params.dz[i], 0.0)
    xe = xe[..., None]
    return (np.sum(params.k_plus[i] * np.maximum(xe - params.b_plus[i], 0.0), axis=-1)
            + np.sum(params.k_minus[i] * np.maximum(-xe + params.b_minus[i], 0.0), axis=-1))


def _unclamped_slope(params: NetParams, i, x):
    """Right-limit slope of the unclamped bus-i policy at scalar x."""
    dz = params.dz[i]
    xe = np.sign(x) * max(abs(x) - dz, 0.0)
    sp = np.sum(params.k_plus[i] * (xe >= params.b_plus[i]))
    sm = np.sum(-params.k_minus[i] * (xe < params.b_minus[i]))
    gate = 1.0 if (dz == 0.0 or x >= dz or x < -dz) else 0.0
    return (sp + sm) * gate


def build_integral_table(params: NetParams):
    """Per-bus exact antiderivative tables for the piecewise-linear policies.

    For each bus: sorted node list containing every kink of u (breakpoints
    shifted by the deadband, the deadband edges, the origin, and the points
    where the unclamped policy crosses a finite saturation bound), the
    clipped policy values there, and the exact integral from 0 to each node
    (trapezoids between nodes are exact because u is linear between them).
    """
    tables = []
    for i in range(params.n):
        dz = params.dz[i]
        cand = [0.0, dz, -dz]
        for b in params.b_plus[i]:
            cand += [b + dz, b - dz]
        for b in params.b_minus[i]:
            cand += [b + dz, b - dz]
        nodes = np.unique(np.asarray(cand, dtype=float))
        g = _unclamped_g(params, i, nodes)
        crossings = []
        for bound in (params.u_hi[i], params.u_lo[i]):
            if not np.isfinite(bound):
                continue
            gl, gr = g[:-1] - bound, g[1:] - bound
            hit = np.nonzero(gl * gr < 0)[0]
            for k in hit:
                t = gl[k] / (gl[k] - gr[k])
                crossings.append(nodes[k] + t * (nodes[k + 1] - nodes[k]))
            m_right = _unclamped_slope(params, i, nodes[-1])
            if m_right != 0.0:
                t = (bound - g[-1]) / m_right
                if t > 0:
                    crossings.append(nodes[-1] + t)
            m_left = _unclamped_slope(params, i, nodes[0] - 1.0)
            if m_left != 0.0:
                t = (bound - g[0]) / m_left
                if t < 0:
                    crossings.append(nodes[0] + t)
        if crossings:
            nodes = np.unique(np.concatenate([nodes, crossings]))
        u_nodes = np.clip(_unclamped_g(params, i, nodes),
                          params.u_lo[i], params.u_hi[i])
        seg = np.diff(nodes) * 0.5 * (u_nodes[:-1] + u_nodes[1:])
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        j0 = int(np.searchsorted(nodes, 0.0))
        cum -= cum[j0]
        tables.append((nodes, u_nodes, cum))
    return tables


def integral_per_bus(params: NetParams, s, table=None):
    """Exact per-bus integral of u_i from 0 to s_i; s may carry batch dims."""
    s = np.asarray(s, dtype=float)
    if table is None:
        table = build_integral_table(params)
    u_all = eval_u(params, s)
    out = np.empty(s.shape)
    for i in range(params.n):
        nodes, u_nodes, cum = table[i]
        x = s[..., i]
        idx = np.clip(np.searchsorted(nodes, x, side="right") - 1,
                      0, len(nodes) - 1)
        out[..., i] = cum[idx] + (x - nodes[idx]) * 0.5 * (u_nodes[idx] + u_all[..., i])
    return out


def integral_L(controllers: NetParams, s, table=None):
    """L(s) = sum_i int_0^{s_i} u_i(xi) d xi (convex; gradient is u(s))."""
    return np.sum(integral_per_bus(controllers, s, table), axis=-1)


# --------------------------------------------------------------------------
# DAI-mode energy function
# --------------------------------------------------------------------------

def _unpack(state):
    if isinstance(state, SystemState):
        return state.delta, state.omega, state.s
    return state


def lyap_W(net: PowerNetwork, controllers: NetParams, state,
           eq: Equilibrium, table=None):
    """Energy of a DAI-mode state relative to the closed-loop equilibrium.

    pi*f0 * omega_G' M omega_G, plus the Bregman divergence of the network
    potential at delta against delta*, plus the Bregman divergence of the
    controller integral at s against s*.  Zero exactly at the equilibrium;
    positive on the security region around it.  Batch dims allowed.
    """
    delta, omega, s = _unpack(state)
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    s = np.asarray(s, dtype=float)
    kinetic = np.pi * net.f0 * np.sum(net.m * omega[..., net.gens] ** 2, axis=-1)
    flows_star = power_flows(net, eq.delta_star)
    breg_u = (potential_energy(net, delta) - potential_energy(net, eq.delta_star)
              - np.sum(flows_star * (delta - eq.delta_star), axis=-1))
    if table is None:
        table = build_integral_table(controllers)
    l_star = integral_L(controllers, eq.s_star, table)
    breg_l = (integral_L(controllers, s, table) - l_star
              - np.sum(eq.u_star * (s - eq.s_star), axis=-1))
    return kinetic + breg_u + breg_l


def lyap_W_dot(net: PowerNetwork, costs: CostModel, controllers: NetParams,
               state, eq: Equilibrium):
    """Analytic derivative of lyap_W along the dai_general flow.

    Three nonpositive pieces: generator damping -2 pi f0 omega_G' A_G
    omega_G; the marginal-cost consensus cross term; and the load-bus
    bracket -2 pi f0 w' A_L^{-1} w where w collects the load-bus flow and
    injection mismatches against equilibrium.  Batch dims allowed.
    """
    delta, omega, s = _unpack(state)
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    s = np.asarray(s, dtype=float)
    two_pi_f0 = 2.0 * np.pi * net.f0
    u = eval_u(controllers, s)
    mc = costs.grad(u)
    damping = two_pi_f0 * np.sum(net.alpha[net.gens] * omega[..., net.gens] ** 2,
                                 axis=-1)
    cross = scaled_laplacian_bilinear(net, costs.zeta, u, mc)
    flows = power_flows(net, delta)
    flows_star = power_flows(net, eq.delta_star)
    ll = net.loads
    w = (flows[..., ll] - flows_star[..., ll]) - (u[..., ll] - eq.u_star[ll])
    bracket = two_pi_f0 * np.sum(w ** 2 / net.alpha[ll], axis=-1)
    return -damping - cross - bracket


def cross_term(net: PowerNetwork, costs: CostModel, controllers: NetParams, s):
    """Marginal-cost consensus dissipation u(s)' Z L_Q grad_C(u(s)).

    Returns (value, equalized): value is the communication-graph edge sum
    Q_ij (mc_i - mc_j)(zeta_i u_i - zeta_j u_j), nonnegative for any
    monotone marginal cost; equalized reports whether every edge
    marginal-cost difference is exactly zero (the only way value can vanish
    on a connected graph).  Batch dims allowed.
    """
    s = np.asarray(s, dtype=float)
    u = eval_u(controllers, s)
    mc = costs.grad(u)
    value = scaled_laplacian_bilinear(net, costs.zeta, u, mc)
    dmc = mc[..., net.comm_i] - mc[..., net.comm_j]
    equalized = np.all(dmc == 0.0, axis=-1)
    return value, equalized


# --------------------------------------------------------------------------
# primary-mode energy function
# --------------------------------------------------------------------------

def _primary_mismatch(net, delta, omega, eq):
    """x = flow mismatch, y = frequency mismatch, both batched."""
    x = power_flows(net, delta) - power_flows(net, eq.delta_star)
    y = omega - eq.omega_star
    return x, y


def lyap_V(net: PowerNetwork, state, eq: Equilibrium, epsilon,
           load_inertia=None):
    """Primary-mode energy: kinetic + potential Bregman + epsilon cross term."""
    delta, omega, _ = _unpack(state)
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    m = full_inertia(net) if load_inertia is None else full_inertia(net, load_inertia)
    y = omega - eq.omega_star
    kinetic = 0.5 * np.sum(m * y ** 2, axis=-1)
    flows_star = power_flows(net, eq.delta_star)
    w_p = (potential_energy(net, delta) - potential_energy(net, eq.delta_star)
           - np.sum(flows_star * (delta - eq.delta_star), axis=-1))
    x, y = _primary_mismatch(net, delta, omega, eq)
    w_c = np.sum(x * m * y, axis=-1)
    return kinetic + w_p + epsilon * w_c


def lyap_V_dot(net: PowerNetwork, controllers: NetParams, state,
               eq: Equilibrium, epsilon, load_inertia=None):
    """Analytic derivative of lyap_V along the primary-mode flow.

    Equals -[x; y]' Q(delta) [x; y] - (y + eps x)'(u(omega) - u(omega* 1))
    with x the flow mismatch and y the frequency mismatch; evaluated
    matrix-free (the H M + M H block acts through Jacobian products).
    Batch dims allowed.
    """
    delta, omega, _ = _unpack(state)
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    m = full_inertia(net) if load_inertia is None else full_inertia(net, load_inertia)
    d = net.alpha
    x, y = _primary_mismatch(net, delta, omega, eq)
    # quadratic form: eps|x|^2 + eps x'D y + y'D y - eps y'H(delta) M y
    hmy = flow_jacobian_apply(net, delta, m * y)
    quad = (epsilon * np.sum(x * x, axis=-1)
            + epsilon * np.sum(x * d * y, axis=-1)
            + np.sum(d * y * y, axis=-1)
            - epsilon * np.sum(y * hmy, axis=-1))
    if controllers is not None:
        du = eval_u(controllers, omega) - eval_u(
            controllers, np.broadcast_to(float(eq.omega_star), omega.shape))
    else:
        du = np.zeros_like(omega)
    control = np.sum((y + epsilon * x) * du, axis=-1)
    return -quad - control


def assemble_Q(net: PowerNetwork, delta, epsilon, load_inertia=None):
    """Dense 2n x 2n matrix of the quadratic form in lyap_V_dot."""
    n = net.n
    m = full_inertia(net) if load_inertia is None else full_inertia(net, load_inertia)
    d = np.diag(net.alpha)
    h = flow_jacobian(net, delta)
    hm = h * m                     # H @ diag(m)
    block = d - 0.5 * epsilon * (hm + hm.T)
    q = np.zeros((2 * n, 2 * n))
    q[:n, :n] = epsilon * np.eye(n)
    q[:n, n:] = 0.5 * epsilon * d
    q[n:, :n] = 0.5 * epsilon * d
    q[n:, n:] = block
    return q


def schur_block(net: PowerNetwork, delta, epsilon, load_inertia=None):
    """Schur complement of the epsilon*I block of Q: the PD test matrix."""
    m = full_inertia(net) if load_inertia is None else full_inertia(net, load_inertia)
    h = flow_jacobian(net, delta)
    hm = h * m
    d = net.alpha
    return (np.diag(d) - 0.5 * epsilon * (hm + hm.T)
            - 0.25 * epsilon * np.outer(d, d) * np.eye(len(d)))


# --------------------------------------------------------------------------
# small dense symmetric linear algebra (no external solver)
# --------------------------------------------------------------------------

def cholesky_pivots(a):
    """Attempt an in-place Cholesky; returns (success, smallest pivot).

    The pivots are the successive Schur-complement diagonal entries; all
    positive iff the matrix is positive definite.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    min_pivot = np.inf
    for k in range(n):
        piv = a[k, k]
        min_pivot = min(min_pivot, piv)
        if piv <= 0.0:
            return False, float(min_pivot)
        root = np.sqrt(piv)
        a[k, k:] /= root
        a[k + 1:, k + 1:] -= np.outer(a[k, k + 1:], a[k, k + 1:])
    return True, float(min_pivot)


def jacobi_eigenvalues(a, sweeps=100, tol=1e-13):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Dense O(n^3)-per-sweep method, fine for the n <= 100 matrices used in
    certification; converges quadratically once off-diagonal mass is small.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if n == 1:
        return a[0, :1].copy()
    scale = np.max(np.abs(a)) or 1.0
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
    return np.sort(np.diag(a))


# --------------------------------------------------------------------------
# region sampling
# --------------------------------------------------------------------------

def sample_region_states(net: PowerNetwork, eq: Equilibrium, count, seed=0,
                         omega_range=OMEGA_RANGE, s_range=S_RANGE,
                         margin=REGION_MARGIN, base_spread=0.4):
    """Random states around the equilibrium, inside the security region.

    Per-sample RNG is seeded by (seed, index), so any subset of samples is
    reproducible independently of evaluation order.  Angle perturbations are
    halved until every edge difference stays in (-pi/2 + margin, pi/2 -
    margin); frequency and integral offsets are box-uniform.
    Returns (delta, omega, s) stacked as (count, n) arrays.
    """
    n = net.n
    limit = np.pi / 2 - margin
    if edge_angle_spread(net, eq.delta_star) >= limit:
        raise LyapunovError("equilibrium itself violates the sampling margin")
    deltas = np.empty((count, n))
    omegas = np.empty((count, n))
    ss = np.empty((count, n))
    omega_star = eq.omega_star or 0.0
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        step = to_center_of_inertia(rng.uniform(-base_spread, base_spread, n))
        for _ in range(64):
            cand = eq.delta_star + step
            if edge_angle_spread(net, cand) < limit:
                break
            step *= 0.5
        else:
            cand = eq.delta_star
        deltas[k] = to_center_of_inertia(cand)
        omegas[k] = omega_star + rng.uniform(-omega_range, omega_range, n)
        ss[k] = (eq.s_star if eq.s_star is not None else 0.0) \
            + rng.uniform(-s_range, s_range, n)
    return deltas, omegas, ss


# --------------------------------------------------------------------------
# epsilon grid search and decay constant
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EpsilonSearchResult:
    epsilon: float
    c: float
    min_pivot: float
    lambda_min_q: float
    gamma1_hat: float
    alpha2_hat: float


def epsilon_and_c_search(net: PowerNetwork, eq: Equilibrium, grid=None,
                         samples=200, seed=0, load_inertia=None) -> EpsilonSearchResult:
    """Largest epsilon from a geometric grid certifying Q(delta) > 0.

    For each epsilon (largest first) the Schur-complement block is tested
    for positive definiteness (Cholesky) at the equilibrium and at sampled
    security-region angles; the first epsilon passing everywhere wins.  The
    decay constant follows the sampled-estimator recipe:

        c = min_delta lambda_min(Q(delta)) * min(1, gamma1_hat) / alpha2_hat

    with gamma1_hat the worst flow-vs-angle mismatch ratio and alpha2_hat
    the largest V / |state mismatch|^2 ratio over the samples (exact
    lambda_min from the Jacobi eigensolver; the smallest Cholesky pivot is
    reported alongside).
    """
    grid = DEFAULT_EPS_GRID if grid is None else tuple(grid)
    deltas, omegas, _ = sample_region_states(net, eq, samples, seed=seed)
    test_deltas = np.vstack([eq.delta_star[None, :], deltas])
    chosen = None
    for eps in sorted(grid, reverse=True):
        ok = True
        for dl in test_deltas:
            good, _ = cholesky_pivots(schur_block(net, dl, eps, load_inertia))
            if not good:
                ok = False
                break
        if ok:
            chosen = eps
            break
    if chosen is None:
        raise LyapunovError("no certifying epsilon found in the grid")

    lam_min = np.inf
    min_pivot = np.inf
    for dl in test_deltas:
        q = assemble_Q(net, dl, chosen, load_inertia)
        lam_min = min(lam_min, float(jacobi_eigenvalues(q)[0]))
        good, piv = cholesky_pivots(q)
        if good:
            min_pivot = min(min_pivot, piv)
        else:
            raise LyapunovError("Q lost positive definiteness at the chosen epsilon")

    x = power_flows(net, deltas) - power_flows(net, eq.delta_star)
    dd = deltas - eq.delta_star
    dd_norm2 = np.sum(dd ** 2, axis=-1)
    keep = dd_norm2 > 1e-16
    gamma1 = float(np.min(np.sum(x[keep] ** 2, axis=-1) / dd_norm2[keep]))

    v = lyap_V(net, (deltas, omegas, None), eq, chosen, load_inertia)
    z2 = dd_norm2 + np.sum((omegas - eq.omega_star) ** 2, axis=-1)
    alpha2 = float(np.max(v / np.maximum(z2, 1e-16)))

    c = lam_min * min(1.0, gamma1) / alpha2
    return EpsilonSearchResult(epsilon=chosen, c=c, min_pivot=float(min_pivot),
                               lambda_min_q=float(lam_min), gamma1_hat=gamma1,
                               alpha2_hat=alpha2)


# --------------------------------------------------------------------------
# trajectory certification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CertifyTolerances:
    tol_abs: float = 1e-9       # absolute decrease slack per step
    tol_rel: float = 0.05       # relative slack factor on h*|Wdot|
    fd_rtol: float = None       # gate analytic-vs-FD agreement when set
    positivity_floor: float = -1e-12


@dataclass
class CertificationReport:
    """Outcome of checking one trajectory against its energy function."""

    mode: str
    W: np.ndarray
    W_dot: np.ndarray
    fd: np.ndarray
    decrease_margin_min: float
    cross_min: float
    positivity_min: float
    fd_rel_err_max: float
    epsilon: float
    min_pivot: float
    passed: bool
    first_violation: int
    failures: tuple

    def summary(self):
        verdict = "PASS" if self.passed else "FAIL"
        lines = [f"certification {verdict} (mode={self.mode})",
                 f"  min W along trajectory      : {self.positivity_min:.3e}",
                 f"  min decrease margin         : {self.decrease_margin_min:.3e}"]
        if self.cross_min is not None:
            lines.append(f"  min cross term              : {self.cross_min:.3e}")
        if self.fd_rel_err_max is not None:
            lines.append(f"  max |Wdot - FD| rel error   : {self.fd_rel_err_max:.3e}")
        if self.epsilon is not None:
            lines.append(f"  epsilon                     : {self.epsilon:.3e}")
        if not self.passed:
            lines.append(f"  first violation at step     : {self.first_violation}")
            lines.append(f"  failed checks               : {', '.join(self.failures)}")
        return "\n".join(lines)


def certify_trajectory(traj: Trajectory, net: PowerNetwork, costs: CostModel,
                       controllers: NetParams, eq: Equilibrium,
                       tolerances: CertifyTolerances = None,
                       epsilon=None, load_inertia=None) -> CertificationReport:
    """Check positivity and per-step decrease of the energy along a trajectory.

    DAI trajectories are scored with W and its analytic derivative; primary
    trajectories with V at the given epsilon (searched automatically when
    omitted).  The per-step decrease allowance is tol_abs + tol_rel*h*|Wdot|
    (forward Euler overshoots the continuous decrease by O(h)).  A finite
    difference of the recorded energy is compared against the analytic
    derivative and gates the verdict only when fd_rtol is set.
    """
    tol = tolerances or CertifyTolerances()
    if traj.mode == "primary":
        if epsilon is None:
            epsilon = epsilon_and_c_search(net, eq, load_inertia=load_inertia).epsilon
        w = lyap_V(net, (traj.delta, traj.omega, None), eq, epsilon, load_inertia)
        wdot = lyap_V_dot(net, controllers, (traj.delta, traj.omega, None),
                          eq, epsilon, load_inertia)
        cross_min = None
        min_pivot = None
    elif traj.mode in ("dai_general", "dai_linear", "unknown"):
        table = build_integral_table(controllers)
        w = lyap_W(net, controllers, (traj.delta, traj.omega, traj.s), eq, table)
        wdot = lyap_W_dot(net, costs, controllers,
                          (traj.delta, traj.omega, traj.s), eq)
        cross = scaled_laplacian_bilinear(net, costs.zeta,
                                          traj.u, costs.grad(traj.u))
        cross_min = float(np.min(cross))
        min_pivot = None
        epsilon = None
    else:
        raise LyapunovError(f"cannot certify mode {traj.mode!r}")

    h = float(traj.t[1] - traj.t[0])
    fd = np.full_like(w, np.nan)
    if len(w) >= 3:
        fd[1:-1] = (w[2:] - w[:-2]) / (2.0 * h)
    if len(w) >= 2:
        fd[0] = (w[1] - w[0]) / h
        fd[-1] = (w[-1] - w[-2]) / h

    slack = tol.tol_abs + tol.tol_rel * h * np.abs(wdot[:-1])
    rise = np.diff(w)
    margins = slack - rise
    decrease_ok = margins >= 0.0
    positivity_ok = w >= tol.positivity_floor

    # Normalized agreement over the centered-stencil interior: pointwise
    # ratios blow up wherever the decrease rate passes through zero, so the
    # defect is measured against the largest rate seen on the trajectory.
    scale = float(np.max(np.abs(wdot))) if len(wdot) else 0.0
    if len(w) >= 3 and scale > 0.0:
        fd_rel_err_max = float(np.max(np.abs(fd[1:-1] - wdot[1:-1]))) / scale
    else:
        fd_rel_err_max = 0.0

    failures = []
    first = len(w)
    if not np.all(positivity_ok):
        failures.append("positivity")
        first = min(first, int(np.argmin(positivity_ok)))
    if not np.all(decrease_ok):
        failures.append("decrease")
        first = min(first, int(np.argmin(decrease_ok)))
    if cross_min is not None and cross_min < -1e-12:
        failures.append("cross-term sign")
        first = 0
    if tol.fd_rtol is not None and fd_rel_err_max > tol.fd_rtol:
        failures.append("fd-mismatch")

    passed = not failures
    return CertificationReport(
        mode=traj.mode, W=w, W_dot=wdot, fd=fd,
        decrease_margin_min=float(np.min(margins)) if len(margins) else 0.0,
        cross_min=cross_min,
        positivity_min=float(np.min(w)),
        fd_rel_err_max=fd_rel_err_max,
        epsilon=epsilon, min_pivot=min_pivot,
        passed=passed,
        first_violation=(None if passed else int(first)),
        failures=tuple(failures),
    )
