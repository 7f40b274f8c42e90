"""Command-line entry point: ``asfl-bench <subcommand>``.

Errors print one JSON line to stderr (``{"error": ..., "field": ..., "message": ...}``)
and exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, instances, lyapunov, oracles, power_solver, radio, rb_solver, runner
from .coordinator import POLICIES, BaselinePolicy, InputsCache, Simulation, initial_counts, run_bcd_round
from .cost import InfeasibleDecision, round_costs
from .objective import g_constraints
from .scenario import ConfigError, ScenarioConfig, config_from_dict, load_config, parse_override

EXIT_FAIL = 1
EXIT_ERROR = 2


def _error(kind: str, message: str, field: str | None = None) -> int:
    line = {"error": kind, "message": message}
    if field is not None:
        line["field"] = field
    print(json.dumps(line, sort_keys=True), file=sys.stderr)
    return EXIT_ERROR


# -- configuration -----------------------------------------------------------------

def add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default="default", help="JSON config file or 'default'")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (JSON value); repeatable")
    p.add_argument("--seed", type=int, help="seed for every random stream")
    p.add_argument("--rounds", type=int, help="number of rounds")
    p.add_argument("--objective-mode", choices=("verbatim", "consistent"))
    p.add_argument("--fading", choices=("on", "frozen"))


def build_config(args) -> ScenarioConfig:
    if args.config in (None, "default"):
        raw: dict = {}
    else:
        raw = load_config(args.config).to_dict()
    for text in args.set:
        key, value = parse_override(text)
        raw[key] = value
    if args.seed is not None:
        raw["seeds"] = {"env": args.seed, "data": args.seed, "model": args.seed, "sampling": args.seed}
    if args.rounds is not None:
        raw["n_rounds"] = args.rounds
    if args.objective_mode:
        raw["objective_mode"] = args.objective_mode
    if args.fading:
        raw["fading"] = args.fading
    return config_from_dict(raw)


def _policy(text: str) -> BaselinePolicy:
    try:
        return BaselinePolicy.parse(text)
    except ValueError as exc:
        raise ConfigError("baseline", f"{exc}; choose from {', '.join(POLICIES)} (fixed-split(L))") from exc


def _values(text: str) -> list:
    vals = [v for v in text.replace(",", " ").split() if v]
    out = []
    for v in vals:
        num = float(v)
        out.append(int(num) if num.is_integer() and "." not in v and "e" not in v.lower() else num)
    return out


# -- simulate / check / report / sweep ----------------------------------------------

def cmd_simulate(args) -> int:
    cfg = build_config(args)
    policy = _policy(args.baseline)
    out = Path(args.out or f"runs/{policy.tag}-seed{cfg.seeds.env}")

    def progress(rec):
        if args.verbose:
            print(f"round {rec.round:4d} cut {rec.decisions.cut} k {rec.decisions.rb_counts.tolist()} "
                  f"T {rec.costs.t_total_expected_s:.4g} g {rec.g_obj_consistent:.5g}", file=sys.stderr)

    res = runner.run_simulation(cfg, policy, out, figures=args.figures, progress=progress)
    s = res.summary
    print(f"wrote {out}: rounds={s['rounds']} total_delay_s={s['total_delay_s']:.6g} "
          f"total_energy_j={s['total_energy_j']:.6g} avg_g_obj={s['avg_g_obj']:.6g} "
          f"final_accuracy={s['final_accuracy']:.4f} infeasible_rounds={s['infeasible_rounds']}")
    return 0


def cmd_check(args) -> int:
    res = runner.check_run(args.run_dir)
    for f in res.compared:
        print(f"{f}: {'identical' if f not in res.differing else 'DIFFERENT'}")
    return 0 if res.same else EXIT_FAIL


def cmd_report(args) -> int:
    from .plotting import render_run, render_sweep

    run_dir = Path(args.run_dir)
    if (run_dir / runner.METRICS).exists():
        paths = render_run(run_dir, args.out)
    elif (run_dir / "summary.csv").exists():
        paths = render_sweep(run_dir / "summary.csv", args.out)
    else:
        raise FileNotFoundError(f"{run_dir} holds neither {runner.METRICS} nor summary.csv")
    for p in paths:
        print(p)
    return 0


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    values = _values(args.values)
    out = Path(args.out or f"sweeps/{args.param}")
    rows = runner.sweep(cfg, args.param, values, args.repeats, out, policy=_policy(args.baseline).tag)
    for r in rows:
        print(f"{r['param']}={r['value']}: " + " ".join(
            f"{m}={r[m + '_mean']:.6g}+-{r[m + '_se']:.2g}" for m in runner.SUMMARY_METRICS))
    if args.figures:
        from .plotting import render_sweep

        render_sweep(out / "summary.csv")
    print(f"wrote {out / 'summary.csv'}")
    return 0


# -- oracles --------------------------------------------------------------------------

def oracle_per(args) -> int:
    """Quadrature / Bessel / Monte Carlo triples, or frozen-fading drop rates."""
    if args.frozen:
        # per-client (c, theta) of the configured network at full power and one RB;
        # the Monte Carlo column averages frozen-gain evaluations over Rayleigh draws
        cfg = build_config(args)
        ctx = Simulation(cfg, "asfl").context(0)
        c_vals = radio.error_exponent(np.ones(ctx.n_clients), cfg) / cfg.max_tx_power_w
        pairs = list(zip(c_vals, ctx.path_loss))
    else:
        cs = np.array([args.c]) if args.c is not None else np.logspace(-6, 3, args.points)
        pairs = [(float(c) * args.theta, args.theta) for c in cs]
    worst_rel, worst_z = 0.0, 0.0
    print("c theta quadrature bessel monte_carlo stderr rel_diff z")
    for j, (c, theta) in enumerate(pairs):
        t = oracles.fading_triple(float(c), float(theta), args.draws, args.mc_seed + j)
        rel = abs(t.quadrature - t.bessel) / max(abs(t.bessel), 1e-300)
        worst_rel = max(worst_rel, rel)
        worst_z = max(worst_z, abs(t.z_score))
        print(f"{c:.6g} {theta:.6g} {t.quadrature:.15g} {t.bessel:.15g} {t.monte_carlo:.8g} {t.mc_stderr:.3g} "
              f"{rel:.2e} {t.z_score:+.2f}")
    ok = worst_rel <= 1e-8 and worst_z <= 3.0
    print(f"max rel diff {worst_rel:.2e} (tolerance 1e-8); max |z| {worst_z:.2f} (tolerance 3)")
    return 0 if ok else EXIT_FAIL


def _power_rows(lo, hi, w2, w3, resolution):
    p, branch, _ = power_solver.closed_form_power(lo, hi, w2, w3)
    rows = []
    for i in range(len(p)):
        if not (np.isfinite(lo[i]) and np.isfinite(hi[i]) and lo[i] <= hi[i]):
            rows.append((i, lo[i], hi[i], branch[i], p[i], np.nan, np.nan, "empty", True))
            continue
        po, step, bo = oracles.surrogate_oracle(lo[i], hi[i], w2[i], w3[i], resolution)
        gap = abs(p[i] - po)
        ok = gap <= step * (1 + 1e-9) and bo == branch[i]
        rows.append((i, lo[i], hi[i], branch[i], p[i], po, gap, bo, ok))
    return rows


def _print_power(rows) -> bool:
    print("client lo hi branch p oracle_p gap oracle_branch ok")
    for i, lo, hi, b, p, po, gap, bo, ok in rows:
        print(f"{i + 1} {lo:.6g} {hi:.6g} {b} {p:.8g} {po:.8g} {gap:.3g} {bo} {'ok' if ok else 'FAIL'}")
    return all(r[-1] for r in rows)


def oracle_power(args) -> int:
    if args.round is not None:
        return solve_round_power(args)
    inst = [instances.power_instance(args.seed_base + i) for i in range(args.instances)]
    arr = lambda name: np.array([getattr(x, name) for x in inst])
    rows = _power_rows(arr("lo"), arr("hi"), arr("w2"), arr("w3"), args.resolution)
    if args.instances <= 20:
        ok = _print_power(rows)
    else:
        ok = all(r[-1] for r in rows)
    counts = {b: sum(r[7] == b for r in rows) for b in ("C1", "C2", "otherwise")}
    print(f"{sum(r[-1] for r in rows)}/{len(rows)} within one grid step with matching branch; branches {counts}")
    return 0 if ok else EXIT_FAIL


def oracle_rb(args) -> int:
    worst = 0
    for i in range(args.instances):
        inst = instances.rb_instance(args.n, args.k, args.seed_base + i)
        a = rb_solver.solve_rb(inst.ctx, inst.cut, inst.p, inst.inputs)
        b = oracles.naive_rb(inst.ctx, inst.cut, inst.p, inst.inputs)
        gap = abs(a.objective - b.objective) if a.feasible and b.feasible else 0.0
        same = np.array_equal(a.counts, b.counts) and a.feasible == b.feasible
        worst += not same
        print(f"instance {args.seed_base + i}: solver {a.counts.tolist()} g={a.objective:.10g} feasible={a.feasible} | "
              f"enumeration {b.counts.tolist()} g={b.objective:.10g} ({b.matrices_checked} matrices) | gap {gap:.3g} "
              f"{'ok' if same else 'FAIL'}")
    return 0 if worst == 0 else EXIT_FAIL


def _split_eval(inst):
    def evaluate(cut):
        c = round_costs(inst.ctx, cut, inst.counts, inst.p)
        g = g_constraints(c.t_total_expected_s, c.e_total_expected_j, inst.ctx.cfg)
        return g, float(inst.inputs(cut).value(1.0 - c.s))
    return evaluate


def oracle_split(args) -> int:
    bad = 0
    for i in range(args.instances):
        inst = instances.split_instance(args.layers, args.seed_base + i)
        ev = _split_eval(inst)
        cuts = inst.ctx.cfg.cuts()
        try:
            a = lyapunov.solve_split(inst.queues, cuts, ev).cut
        except InfeasibleDecision:
            a = None
        try:
            b = oracles.brute_split(inst.queues.queues, inst.queues.memory, inst.queues.penalty_weight, cuts, ev)[0]
        except InfeasibleDecision:
            b = None
        bad += a != b
        print(f"instance {args.seed_base + i}: solver cut {a} | brute force cut {b} | {'ok' if a == b else 'FAIL'}")
    return 0 if bad == 0 else EXIT_FAIL


def oracle_joint(args) -> int:
    worst = 0.0
    for i in range(args.instances):
        inst = instances.joint_instance(args.seed_base + i)
        best = oracles.joint_brute_force(inst.ctx, inst.inputs, power_points=args.power_points)
        res = run_bcd_round(inst.ctx, inst.inputs, inst.queues(), inst.sim.policy, prev=inst.sim.prev)
        if best is None:
            print(f"instance {args.seed_base + i}: no feasible grid point; bcd feasible={res.feasible}")
            continue
        gap = (res.g_obj - best.g_obj) / abs(best.g_obj)
        worst = max(worst, gap if res.feasible else np.inf)
        print(f"instance {args.seed_base + i}: bcd cut {res.decisions.cut} k {res.decisions.rb_counts.tolist()} "
              f"p {np.round(res.decisions.tx_powers, 4).tolist()} g={res.g_obj:.8g} feasible={res.feasible} | "
              f"brute force cut {best.cut} k {best.counts.tolist()} p {np.round(best.p, 4).tolist()} "
              f"g={best.g_obj:.8g} | gap {gap:+.3e}")
    print(f"worst relative gap {worst:.3e} (tolerance 5e-2)")
    return 0 if worst <= 0.05 else EXIT_FAIL


# -- solve-round ------------------------------------------------------------------------

def _round_state(args):
    cfg = build_config(args)
    sim = Simulation(cfg, "asfl")
    sim.run(args.round)
    return cfg, sim, sim.context(args.round), InputsCache(sim.model, cfg, args.round)


def solve_round_rb(args) -> int:
    cfg, sim, ctx, inputs = _round_state(args)
    cut = args.cut if args.cut is not None else ctx.prev_cut
    p = np.full(ctx.n_clients, cfg.max_tx_power_w)
    ra = rb_solver.solve_rb(ctx, cut, p, inputs(cut), cfg.objective_mode)
    print(f"round {args.round} cut {cut} counts {ra.counts.tolist()} g_obj {ra.objective:.10g} "
          f"feasible {ra.feasible} delay {ra.delay:.6g} method {ra.method}")
    print("top candidates:")
    for rank, (counts, val) in enumerate(ra.top, 1):
        print(f"  {rank}. {list(counts)} g_obj {val:.10g}")
    return 0


def solve_round_power(args) -> int:
    cfg, sim, ctx, inputs = _round_state(args)
    cut = args.cut if args.cut is not None else ctx.prev_cut
    k = initial_counts(ctx)
    p0 = np.full(ctx.n_clients, cfg.max_tx_power_w)
    pr = power_solver.iterate_power(ctx, cut, k, p0, inputs(cut), cfg.objective_mode)
    _, w2, w3 = power_solver.omega_coefficients(ctx, cut, k, inputs(cut))
    on = np.flatnonzero(k >= 1)
    rows = _power_rows(pr.bounds.lo[on], pr.bounds.hi[on], w2[on], w3[on], args.resolution)
    rows = [(on[r[0]],) + r[1:] for r in rows]
    print(f"round {args.round} cut {cut} counts {k.tolist()} power iterations {pr.iterations}")
    ok = _print_power(rows)
    return 0 if ok else EXIT_FAIL


def cmd_solve_round(args) -> int:
    return solve_round_power(args) if args.power_block else solve_round_rb(args)


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asfl-bench", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"asfl-bench {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one policy and write a run directory")
    add_config_flags(p)
    p.add_argument("--baseline", default="asfl", help="asfl, fixed-split(L), max-power, rand-power or rand-rb")
    p.add_argument("--out", help="run directory")
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    p.add_argument("-v", "--verbose", action="store_true", help="per-round progress on stderr")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="cross product of parameter values x repeats")
    add_config_flags(p)
    p.add_argument("--param", required=True, choices=sorted(runner.SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma separated values")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--baseline", default="asfl")
    p.add_argument("--out", help="sweep directory")
    p.add_argument("--figures", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="re-run a run directory from its manifest and compare bytes")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("report", help="render figures for a run or sweep directory")
    p.add_argument("run_dir")
    p.add_argument("--out", help="figure directory (default RUN_DIR/figures)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("oracle", help="solver versus independent oracle")
    osub = p.add_subparsers(dest="which", required=True)
    o = osub.add_parser("per", help="fading expectation triples or frozen drop rates")
    add_config_flags(o)
    o.add_argument("--frozen", action="store_true", help="use the configured clients' (c, theta) instead of a grid")
    o.add_argument("--c", type=float, help="single c/theta value")
    o.add_argument("--theta", type=float, default=1.0)
    o.add_argument("--points", type=int, default=20)
    o.add_argument("--draws", type=int, default=10_000_000)
    o.add_argument("--mc-seed", type=int, default=0)
    o.set_defaults(func=oracle_per)
    o = osub.add_parser("power", help="closed-form power vs surrogate grid")
    add_config_flags(o)
    o.add_argument("--instances", type=int, default=20)
    o.add_argument("--seed-base", type=int, default=0)
    o.add_argument("--resolution", type=int, default=10_000)
    o.add_argument("--round", type=int, help="use the power block of this simulated round instead")
    o.add_argument("--cut", type=int)
    o.set_defaults(func=oracle_power)
    o = osub.add_parser("rb", help="count-vector search vs binary-matrix enumeration")
    o.add_argument("--n", type=int, default=2)
    o.add_argument("--k", type=int, default=3)
    o.add_argument("--instances", type=int, default=1)
    o.add_argument("--seed-base", type=int, default=0)
    o.set_defaults(func=oracle_rb)
    o = osub.add_parser("split", help="cut search vs brute-force drift-plus-penalty")
    o.add_argument("--layers", type=int, default=4)
    o.add_argument("--instances", type=int, default=1)
    o.add_argument("--seed-base", type=int, default=0)
    o.set_defaults(func=oracle_split)
    o = osub.add_parser("joint", help="one BCD round vs joint brute force on the toy instance")
    o.add_argument("--instances", type=int, default=20)
    o.add_argument("--seed-base", type=int, default=0)
    o.add_argument("--power-points", type=int, default=200)
    o.set_defaults(func=oracle_joint)

    p = sub.add_parser("solve-round", help="solve one block of a simulated round")
    add_config_flags(p)
    p.add_argument("--round", type=int, default=0)
    p.add_argument("--cut", type=int)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--rb", dest="power_block", action="store_false", help="RB block at fixed powers")
    g.add_argument("--power", dest="power_block", action="store_true", help="power block at initial counts")
    p.add_argument("--resolution", type=int, default=10_000)
    p.set_defaults(func=cmd_solve_round)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except ConfigError as exc:
        return _error("config", str(exc), exc.field)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _error("io", str(exc))
    except OSError as exc:
        return _error("io", str(exc))
    except (ValueError, InfeasibleDecision, radio.NoUplink) as exc:
        return _error(type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
