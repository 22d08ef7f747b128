"""Command-line front end.

Subcommands:

    equilibrium   solve and print the optimal steady state
    simulate      integrate a scenario and write the trajectory CSV
    certify       simulate (or re-simulate) and run the energy-decrease checks
    train         gradient-descent training; writes checkpoint + loss history
    grad-check    finite-difference audit of the analytic gradients
    plot          static SVG line chart from a trajectory CSV

Exit codes: 0 success, 1 domain error (infeasible flow, failed certification,
failed gradient audit, blow-up), 2 usage/parse errors.  Every run writes a
manifest.json into the output directory recording the effective
configuration, a hash of it, the seeds in play, and the files produced, so
any run can be reproduced byte-for-byte from its manifest.

The output directory defaults to the GRIDFREQ_OUTDIR environment variable
when set, else the current directory; --outdir overrides both.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import controller, costs as costs_mod, dynamics, equilibrium as eq_mod
from . import lyapunov, network, training

DOMAIN_ERRORS = (network.NetworkError, costs_mod.CostError,
                 eq_mod.EquilibriumError, lyapunov.LyapunovError,
                 dynamics.DynamicsError, FloatingPointError, ValueError,
                 OSError)


# --------------------------------------------------------------------------
# shared plumbing
# --------------------------------------------------------------------------

def _outdir(args):
    out = args.outdir or os.environ.get("GRIDFREQ_OUTDIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _config_hash(doc):
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_manifest(outdir, subcommand, config, seeds, outputs):
    doc = {
        "subcommand": subcommand,
        "config": config,
        "config_hash": _config_hash(config),
        "seeds": seeds,
        "outputs": sorted(outputs),
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    return path


def _load_disturbance(net, path_or_json):
    """Disturbance vector from a JSON file or inline JSON string.

    Accepts {"p": {"13": -3.0, ...}} (sparse, keyed by bus id), {"p": [..n
    values..]} (dense), or the bare mapping/list without the "p" wrapper.
    """
    text = path_or_json
    if os.path.exists(text):
        with open(text) as fh:
            doc = json.load(fh)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError:
            raise ValueError(f"--p: {text!r} is neither a file nor valid JSON")
    if isinstance(doc, dict) and "p" in doc:
        doc = doc["p"]
    p = np.zeros(net.n)
    if isinstance(doc, dict):
        for key, val in doc.items():
            p[net.index_of(type(net.ids[0])(key))] = float(val)
    else:
        arr = np.asarray(doc, dtype=float)
        if arr.shape != (net.n,):
            raise ValueError(f"--p: expected {net.n} values, got {arr.shape}")
        p = arr
    return p


def _load_costs(net, args):
    if args.costs:
        with open(args.costs) as fh:
            doc = json.load(fh)
        return costs_mod.CostModel(
            family=doc.get("family", "power"), r=int(doc.get("r", 2)),
            c=np.asarray(doc["c"], dtype=float),
            b=np.asarray(doc.get("b", np.zeros(net.n)), dtype=float))
    rng = np.random.default_rng(args.cost_seed)
    return costs_mod.random_power_costs(net.n, rng, r=args.cost_r)


def _load_controllers(net, args):
    if getattr(args, "checkpoint", None):
        _, params, _ = controller.load_checkpoint(args.checkpoint)
        if params.n != net.n:
            raise ValueError("checkpoint bus count does not match network")
        return params
    return controller.identity_params(net.n)


def _cost_config(args):
    if args.costs:
        return {"file": args.costs}
    return {"cost_seed": args.cost_seed, "cost_r": args.cost_r}


def _add_common(sub, with_costs=True):
    sub.add_argument("--net", required=True, help="network JSON file")
    sub.add_argument("--outdir", default=None)
    if with_costs:
        sub.add_argument("--costs", default=None,
                         help="cost model JSON (family, r, c, b)")
        sub.add_argument("--cost-seed", type=int, default=0,
                         help="seed for random costs when --costs is absent")
        sub.add_argument("--cost-r", type=int, default=4)


# --------------------------------------------------------------------------
# SVG emission
# --------------------------------------------------------------------------

_PALETTE = ("#1b6ca8", "#d1495b", "#66a182", "#edae49", "#775b9f",
            "#30a5bf", "#8c5e58", "#3a6b35", "#c97b84", "#5d5d81")


def svg_line_chart(t, series, title, ylabel):
    """Static SVG 1.1 line chart: axes, ticks, one polyline per series."""
    width, height = 860, 420
    ml, mr, mt, mb = 64, 150, 36, 44
    iw, ih = width - ml - mr, height - mt - mb
    t = np.asarray(t, dtype=float)
    lo = min(float(np.min(v)) for v in series.values())
    hi = max(float(np.max(v)) for v in series.values())
    if hi - lo < 1e-30:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    t0, t1 = float(t[0]), float(t[-1])
    if t1 - t0 < 1e-30:
        t1 = t0 + 1.0

    def sx(x):
        return ml + (x - t0) / (t1 - t0) * iw

    def sy(y):
        return mt + (hi - y) / (hi - lo) * ih

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
           f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml}" y="20" font-family="sans-serif" font-size="14">'
           f'{title}</text>']
    # axes
    out.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ih}" '
               'stroke="black" stroke-width="1"/>')
    out.append(f'<line x1="{ml}" y1="{mt + ih}" x2="{ml + iw}" y2="{mt + ih}" '
               'stroke="black" stroke-width="1"/>')
    for k in range(6):
        xv = t0 + k * (t1 - t0) / 5
        yv = lo + k * (hi - lo) / 5
        x = sx(xv)
        y = sy(yv)
        out.append(f'<line x1="{x:.1f}" y1="{mt + ih}" x2="{x:.1f}" '
                   f'y2="{mt + ih + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{mt + ih + 18}" font-family="sans-serif" '
                   f'font-size="11" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<line x1="{ml - 4}" y1="{y:.1f}" x2="{ml}" y2="{y:.1f}" '
                   'stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{y + 4:.1f}" font-family="sans-serif" '
                   f'font-size="11" text-anchor="end">{yv:.3g}</text>')
    out.append(f'<text x="{ml + iw / 2:.0f}" y="{height - 8}" '
               'font-family="sans-serif" font-size="12" '
               'text-anchor="middle">t (s)</text>')
    out.append(f'<text x="16" y="{mt + ih / 2:.0f}" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 16 {mt + ih / 2:.0f})" '
               f'text-anchor="middle">{ylabel}</text>')
    for k, (name, vals) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(f"{sx(float(tx)):.2f},{sy(float(v)):.2f}"
                       for tx, v in zip(t, np.asarray(vals, dtype=float)))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   'stroke-width="1.2"/>')
        ly = mt + 14 + 16 * k
        out.append(f'<line x1="{ml + iw + 10}" y1="{ly - 4}" x2="{ml + iw + 34}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + iw + 40}" y="{ly}" font-family="sans-serif" '
                   f'font-size="11">{name}</text>')
    out.append("</svg>")
    return "\n".join(out)


# --------------------------------------------------------------------------
# subcommand implementations
# --------------------------------------------------------------------------

def _cmd_equilibrium(args):
    net = network.load_network(args.net)
    costs = _load_costs(net, args)
    p = _load_disturbance(net, args.p)
    params = _load_controllers(net, args)
    eq = eq_mod.solve_equilibrium(net, costs, params, p, mode=args.mode)
    res = eq_mod.equilibrium_residuals(net, costs, params, p, eq)
    outdir = _outdir(args)

    print(f"mode           : {args.mode}")
    if eq.gamma is not None:
        print(f"gamma          : {eq.gamma:.10g}")
    print(f"omega*         : {eq.omega_star if eq.omega_star is not None else 0.0:.6g}")
    print(f"{'bus':>6} {'u*':>12} {'delta*':>12}" +
          ("" if eq.s_star is None else f" {'s*':>12}"))
    for i, bus in enumerate(net.ids):
        line = f"{bus:>6} {eq.u_star[i]:>12.6f} {eq.delta_star[i]:>12.6f}"
        if eq.s_star is not None:
            line += f" {eq.s_star[i]:>12.6f}"
        print(line)
    print("residuals:")
    for key, val in res.items():
        print(f"  {key:26s}: {val:.3e}")

    outputs = []
    if args.csv:
        path = os.path.join(outdir, args.csv)
        with open(path, "w") as fh:
            fh.write("bus,u_star,delta_star,s_star\n")
            for i, bus in enumerate(net.ids):
                s_val = "" if eq.s_star is None else repr(float(eq.s_star[i]))
                fh.write(f"{bus},{float(eq.u_star[i])!r},"
                         f"{float(eq.delta_star[i])!r},{s_val}\n")
        outputs.append(path)
    config = {"net": args.net, "p": args.p, "mode": args.mode,
              "costs": _cost_config(args)}
    _write_manifest(outdir, "equilibrium", config,
                    {"cost_seed": args.cost_seed}, outputs)
    return 0


def _scenario_from_args(net, args):
    p = _load_disturbance(net, args.p)
    return dynamics.Scenario(p=p, T=args.T, h=args.h, mode=args.mode)


def _cmd_simulate(args):
    net = network.load_network(args.net)
    costs = _load_costs(net, args) if args.mode != "primary" else None
    params = _load_controllers(net, args)
    scenario = _scenario_from_args(net, args)
    stepper = dynamics.rk4_step if args.integrator == "rk4" else dynamics.euler_step
    traj = dynamics.simulate(scenario, net, costs, params, stepper=stepper)

    if args.lyapunov:
        if args.mode == "primary":
            eq = eq_mod.solve_equilibrium(net, None, params, scenario.p,
                                          mode="primary")
            search = lyapunov.epsilon_and_c_search(net, eq)
            traj.W = lyapunov.lyap_V(net, (traj.delta, traj.omega, None), eq,
                                     search.epsilon)
        else:
            eq = eq_mod.solve_equilibrium(net, costs, params, scenario.p)
            traj.W = lyapunov.lyap_W(net, params, (traj.delta, traj.omega, traj.s), eq)

    outdir = _outdir(args)
    out_path = os.path.join(outdir, args.out)
    dynamics.write_csv(traj, out_path)
    wmax = float(np.max(np.abs(traj.omega[-1])))
    print(f"simulated {scenario.steps} steps of {args.mode}; "
          f"terminal max|omega| = {wmax:.3e} pu")
    config = {"net": args.net, "p": args.p, "mode": args.mode, "T": args.T,
              "h": args.h, "integrator": args.integrator,
              "lyapunov": bool(args.lyapunov),
              "checkpoint": args.checkpoint, "costs": _cost_config(args)}
    _write_manifest(outdir, "simulate", config,
                    {"cost_seed": args.cost_seed}, [out_path])
    return 0


def _cmd_certify(args):
    net = network.load_network(args.net)
    costs = _load_costs(net, args) if args.mode != "primary" else None
    params = _load_controllers(net, args)
    scenario = _scenario_from_args(net, args)
    stepper = dynamics.euler_step if args.integrator == "euler" else dynamics.rk4_step
    traj = dynamics.simulate(scenario, net, costs, params, stepper=stepper)
    eq = eq_mod.solve_equilibrium(net, costs, params, scenario.p, mode=args.mode)
    tol = lyapunov.CertifyTolerances(tol_abs=args.tol_abs, tol_rel=args.tol_rel,
                                     fd_rtol=args.fd_rtol)
    report = lyapunov.certify_trajectory(
        traj, net, costs, params, eq, tolerances=tol,
        epsilon=args.epsilon)
    outdir = _outdir(args)
    text = report.summary()
    print(text)
    outputs = []
    if args.out:
        path = os.path.join(outdir, args.out)
        with open(path, "w") as fh:
            fh.write(text + "\n")
        outputs.append(path)
    config = {"net": args.net, "p": args.p, "mode": args.mode, "T": args.T,
              "h": args.h, "integrator": args.integrator,
              "tol_abs": args.tol_abs, "tol_rel": args.tol_rel,
              "fd_rtol": args.fd_rtol, "epsilon": args.epsilon,
              "checkpoint": args.checkpoint, "costs": _cost_config(args)}
    _write_manifest(outdir, "certify", config,
                    {"cost_seed": args.cost_seed}, outputs)
    return 0 if report.passed else 1


def _train_config_from_args(args):
    fields = {}
    if args.config:
        with open(args.config) as fh:
            fields.update(json.load(fh))
    for name in ("rho", "d", "h", "T", "batch_size", "epochs", "lr",
                 "lr_decay", "p_lo", "p_hi", "seed"):
        val = getattr(args, name.replace("-", "_"), None)
        if val is not None:
            fields[name] = val
    return training.TrainConfig(**fields)


def _cmd_train(args):
    net = network.load_network(args.net)
    costs = _load_costs(net, args)
    cfg = _train_config_from_args(args)
    outdir = _outdir(args)

    if args.grad_check:
        code = _run_grad_audit(seed=cfg.seed, verbose=True)
        if code != 0:
            print("gradient audit failed; aborting training", file=sys.stderr)
            return 1

    result = training.train(net, costs, cfg)
    ckpt_path = os.path.join(outdir, args.out)
    controller.save_checkpoint(
        ckpt_path, result.raw, u_lo=result.params.u_lo,
        u_hi=result.params.u_hi, dz=result.params.dz, seed=cfg.seed,
        meta={"epochs": cfg.epochs,
              "final_loss": float(result.loss_history[-1]),
              "config_hash": _config_hash(cfg.__dict__)})
    hist_path = os.path.join(outdir, args.history)
    with open(hist_path, "w") as fh:
        fh.write("epoch,loss\n")
        for e, val in enumerate(result.loss_history):
            fh.write(f"{e},{float(val)!r}\n")
    print(f"trained {cfg.epochs} epochs: loss {result.loss_history[0]:.6g} -> "
          f"{result.loss_history[-1]:.6g}")
    config = {"net": args.net, "costs": _cost_config(args),
              "train": {k: (v if not isinstance(v, float) or np.isfinite(v) else None)
                        for k, v in cfg.__dict__.items()}}
    _write_manifest(outdir, "train", config, {"seed": cfg.seed},
                    [ckpt_path, hist_path])
    return 0


def _tiny_instance(seed, buses=2, steps=4, d=2):
    """Small random connected network + costs + rollout inputs for audits."""
    rng = np.random.default_rng(seed)
    recs = []
    for b in range(1, buses + 1):
        rec = {"id": b, "kind": "gen" if b == 1 or rng.uniform() < 0.5 else "load",
               "alpha": float(rng.uniform(0.5, 2.0)), "v": 1.0}
        if rec["kind"] == "gen":
            rec["m"] = float(rng.uniform(2.0, 6.0))
        recs.append(rec)
    lines = [{"i": b, "j": b + 1, "B": float(rng.uniform(0.5, 2.0))}
             for b in range(1, buses)]
    net = network.network_from_dict(
        {"buses": recs, "lines": lines, "base": {"f0": 50.0}})
    costs = costs_mod.random_power_costs(net.n, rng, r=4)
    raw = controller.init_raw_params(net.n, d, rng)
    cfg = training.TrainConfig(d=d, h=1e-3, T=steps * 1e-3, batch_size=2,
                               seed=seed)
    p = rng.uniform(-2.0, 2.0, size=(cfg.batch_size, net.n))
    return net, costs, raw, p, cfg


def _run_grad_audit(seed=0, instances=3, verbose=False):
    worst = 0.0
    for k in range(instances):
        for attempt in range(10):
            net, costs, raw, p, cfg = _tiny_instance(seed + 101 * k + attempt)
            _, tape = training.rollout_loss(net, costs, raw, p, cfg)
            if not training.gradient_tie_risk(tape):
                break
        analytic = training.backprop(tape, net, costs)
        fd = training.finite_difference_gradients(net, costs, raw, p, cfg)
        num = den = 0.0
        for name in ("mu_plus", "mu_minus", "chi_plus", "chi_minus"):
            a, f = getattr(analytic, name), getattr(fd, name)
            if a.size:
                num = max(num, float(np.max(np.abs(a - f))))
                den = max(den, float(np.max(np.abs(f))))
        rel = num / max(den, 1e-12)
        worst = max(worst, rel)
        if verbose:
            print(f"instance {k}: max relative gradient error {rel:.3e}")
    ok = worst < 1e-4
    if verbose:
        print(f"gradient audit {'passed' if ok else 'FAILED'} "
              f"(worst {worst:.3e}, threshold 1e-4)")
    return 0 if ok else 1


def _cmd_grad_check(args):
    return _run_grad_audit(seed=args.seed, instances=args.instances,
                           verbose=True)


def _cmd_plot(args):
    traj = dynamics.read_csv(args.traj)
    with open(args.traj) as fh:
        header = fh.readline().strip().split(",")
    wanted = [c.strip() for c in args.cols.split(",")]
    series = {}
    for name in header[1:]:
        if any(name == w or name.startswith(w + "_") for w in wanted):
            col = header.index(name)
            block, rem = divmod(col - 1, traj.n)
            if name == "W":
                vals = traj.W
            else:
                vals = (traj.omega, traj.s, traj.u, traj.mc)[block][:, rem]
            if vals is not None:
                series[name] = vals
    if not series:
        raise ValueError(f"no columns match {args.cols!r}")
    outdir = _outdir(args)
    path = os.path.join(outdir, args.out)
    svg = svg_line_chart(traj.t, series, title=os.path.basename(args.traj),
                         ylabel=args.cols)
    with open(path, "w") as fh:
        fh.write(svg + "\n")
    print(f"wrote {path} ({len(series)} series)")
    _write_manifest(outdir, "plot", {"traj": args.traj, "cols": args.cols},
                    {}, [path])
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(
        prog="gridfreq",
        description="distributed integral frequency control: simulation, "
                    "equilibria, training, certification")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    eq = sub.add_parser("equilibrium", help="solve the optimal steady state")
    _add_common(eq)
    eq.add_argument("--p", required=True, help="disturbance JSON file or inline JSON")
    eq.add_argument("--mode", default="dai_general", choices=dynamics.MODES)
    eq.add_argument("--checkpoint", default=None)
    eq.add_argument("--csv", default=None, help="also write a CSV table")
    eq.set_defaults(func=_cmd_equilibrium)

    sim = sub.add_parser("simulate", help="integrate a disturbance scenario")
    _add_common(sim)
    sim.add_argument("--p", required=True)
    sim.add_argument("--mode", default="dai_general", choices=dynamics.MODES)
    sim.add_argument("--checkpoint", default=None)
    sim.add_argument("--T", type=float, default=40.0)
    sim.add_argument("--h", type=float, default=5e-4)
    sim.add_argument("--integrator", default="euler", choices=("euler", "rk4"))
    sim.add_argument("--lyapunov", action="store_true",
                     help="fill the W column (needs a solvable equilibrium)")
    sim.add_argument("--out", default="trajectory.csv")
    sim.set_defaults(func=_cmd_simulate)

    cert = sub.add_parser("certify", help="energy-decrease certification")
    _add_common(cert)
    cert.add_argument("--p", required=True)
    cert.add_argument("--mode", default="dai_general", choices=dynamics.MODES)
    cert.add_argument("--checkpoint", default=None)
    cert.add_argument("--T", type=float, default=40.0)
    cert.add_argument("--h", type=float, default=5e-4)
    cert.add_argument("--integrator", default="rk4", choices=("euler", "rk4"),
                      help="rk4 keeps discretization error inside the slack")
    cert.add_argument("--tol-abs", type=float, default=1e-9)
    cert.add_argument("--tol-rel", type=float, default=0.05)
    cert.add_argument("--fd-rtol", type=float, default=None)
    cert.add_argument("--epsilon", type=float, default=None,
                      help="primary mode: skip the epsilon search")
    cert.add_argument("--out", default="certify.txt")
    cert.set_defaults(func=_cmd_certify)

    tr = sub.add_parser("train", help="train controllers by gradient descent")
    _add_common(tr)
    tr.add_argument("--config", default=None, help="TrainConfig JSON file")
    for name, typ in (("rho", float), ("d", int), ("h", float), ("T", float),
                      ("batch-size", int), ("epochs", int), ("lr", float),
                      ("lr-decay", float), ("p-lo", float), ("p-hi", float),
                      ("seed", int)):
        tr.add_argument(f"--{name}", type=typ, default=None)
    tr.add_argument("--grad-check", action="store_true",
                    help="run the finite-difference audit before training")
    tr.add_argument("--out", default="checkpoint.json")
    tr.add_argument("--history", default="loss_history.csv")
    tr.set_defaults(func=_cmd_train)

    gc = sub.add_parser("grad-check", help="finite-difference gradient audit")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--instances", type=int, default=3)
    gc.add_argument("--outdir", default=None)
    gc.set_defaults(func=_cmd_grad_check)

    pl = sub.add_parser("plot", help="SVG line chart from a trajectory CSV")
    pl.add_argument("--traj", required=True)
    pl.add_argument("--cols", default="omega",
                    help="comma list of column prefixes (omega, s, u, mc, W)")
    pl.add_argument("--out", default="plot.svg")
    pl.add_argument("--outdir", default=None)
    pl.set_defaults(func=_cmd_plot)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
