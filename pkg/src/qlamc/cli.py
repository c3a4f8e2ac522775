"""``qlamc`` command line: train / deploy / curves.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
"""

import argparse
import csv
import os
import sys

import numpy as np

from ._validation import ConfigError
from .config import load_config
from .link import bler, write_mcs_table_csv, mcs_action_set
from .sim import (aggregate_cdf, run_deployment_phase, run_learning_phase, write_cdf_csv,
                  write_runs_csv, write_trace_csv)


def qtable_name(n_cqi, reward):
    return f"qtable_{n_cqi}_{reward}.txt"


def _outdir(args, cfg):
    return args.out_dir or cfg.output_directory


def _claim(paths, overwrite):
    existing = [p for p in paths if os.path.exists(p)]
    if existing and not overwrite:
        raise ConfigError(f"refusing to overwrite {', '.join(existing)} (use --overwrite)",
                          "output")


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _parse_variant(text):
    n, reward = text.split(":")
    return int(n), reward


def cmd_train(args, out=None):
    out = out or sys.stdout
    cfg = _config(args)
    if cfg.agent_kind != "qlamc":
        raise ConfigError("train needs agent.kind = qlamc", "agent.kind")
    if args.all_variants:
        variants = list(cfg.qlamc_variants)
    elif args.variant:
        variants = [_parse_variant(v) for v in args.variant]
    else:
        variants = [(cfg.cqi.n_cqi, cfg.reward)]
    agents = [cfg.make_qlamc(n, rw, random_state=cfg.learning.rng_seed + i)
              for i, (n, rw) in enumerate(variants)]
    out_dir = _outdir(args, cfg)
    paths = []
    for n, rw in variants:
        paths += [os.path.join(out_dir, qtable_name(n, rw)),
                  os.path.join(out_dir, f"learning_trace_{n}_{rw}.csv")]
    _claim(paths, args.overwrite)
    os.makedirs(out_dir, exist_ok=True)

    results = run_learning_phase(cfg.scenario, cfg.learning, agents,
                                 keep_trace=True)
    per_frame = cfg.scenario.schedule.ttis_per_frame
    for (n, rw), res in zip(variants, results):
        res.agent.save_qtable(os.path.join(out_dir, qtable_name(n, rw)))
        _write_learning_trace(os.path.join(out_dir, f"learning_trace_{n}_{rw}.csv"),
                              res, per_frame)
        if args.trace:
            write_trace_csv(os.path.join(out_dir, f"learning_tti_trace_{n}_{rw}.csv"),
                            [(0, f"QL-AMC/{n}/{rw.upper()}", res.metrics)])
        print(f"trained QL-AMC n_cqi={n} reward={rw}: {res.metrics.tti_count} TTIs, "
              f"{res.simulated_time_s:g} s simulated, BLER {res.metrics.mean_bler:.4f}, "
              f"SE {res.metrics.mean_spectral_efficiency:.4f}, final epsilon "
              f"{res.final_epsilon:.4f}", file=out)
    return 0


def _write_learning_trace(path, res, per_frame):
    m, tr = res.metrics, res.trace
    n_frames = m.tti_count // per_frame
    acks = m.ack[:n_frames * per_frame].reshape(n_frames, per_frame)
    mcs = m.mcs_index[:n_frames * per_frame].reshape(n_frames, per_frame)
    eff = {a.index: a.nominal_efficiency for a in res.agent.actions_}
    eff_arr = np.vectorize(eff.get)(mcs) * acks
    snr = tr.report_snr_db[:n_frames * per_frame].reshape(n_frames, per_frame)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("frame", "distance_m", "sweep_snr_db", "mean_snr_db", "nack_count",
                    "mean_se"))
        for k in range(n_frames):
            w.writerow([k, repr(float(tr.distance_m[k])), repr(float(tr.sweep_snr_db[k])),
                        repr(float(snr[k].mean())), int((~acks[k]).sum()),
                        repr(float(eff_arr[k].mean()))])


def build_deploy_agents(cfg, qtable_paths, out_dir):
    """Agents in Table III order plus their display names and table columns."""
    agents, names, rows = [], [], []
    for kind in cfg.deploy_agents:
        if kind == "qlamc":
            variants = cfg.qlamc_variants
            if qtable_paths and len(qtable_paths) != len(variants):
                raise ConfigError(f"{len(qtable_paths)} Q-table files given for "
                                  f"{len(variants)} QL-AMC variants", "qtable")
            for i, (n, rw) in enumerate(variants):
                path = qtable_paths[i] if qtable_paths else os.path.join(out_dir,
                                                                        qtable_name(n, rw))
                if not os.path.exists(path):
                    raise ConfigError(f"missing Q-table file {path} (run train first)",
                                      "qtable")
                try:
                    agent = cfg.make_qlamc(n, rw).load_qtable(path)
                except ValueError as exc:
                    raise ConfigError(str(exc), "qtable") from None
                agents.append(agent)
                names.append(f"QL-AMC/{n}/{agent.reward_label}")
                rows.append(("QL-AMC", str(n), agent.reward_label))
        elif kind == "table":
            agents.append(cfg.make_table())
            names.append("Table")
            rows.append(("Table", "-", "-"))
        else:
            for i, d in enumerate(cfg.olla_delta_up_db, 1):
                agents.append(cfg.make_olla(d))
                names.append(f"OLLA {i}")
                rows.append((f"OLLA {i}", "-", "-"))
    if not agents:
        raise ConfigError("no agents configured for deployment", "agent.deploy")
    return agents, names, rows


def summarize(runs, names):
    """Mean BLER and SE per agent over runs."""
    out = {}
    for i, name in enumerate(names):
        out[name] = (float(np.mean([r.metrics[i].mean_bler for r in runs])),
                     float(np.mean([r.metrics[i].mean_spectral_efficiency for r in runs])))
    return out


def format_summary(rows, names, summary):
    lines = [f"{'Type':<8} {'Cardinality':>11} {'Reward':>7} {'BLER':>8} {'SE':>8}"]
    for (typ, card, rw), name in zip(rows, names):
        b, s = summary[name]
        lines.append(f"{typ:<8} {card:>11} {rw:>7} {b:8.4f} {s:8.4f}")
    return "\n".join(lines)


def cmd_deploy(args, out=None):
    out = out or sys.stdout
    cfg = _config(args)
    out_dir = _outdir(args, cfg)
    agents, names, rows = build_deploy_agents(cfg, args.qtables, out_dir)
    files = {k: os.path.join(out_dir, f"deploy_{k}.csv") for k in ("runs", "summary", "cdf")}
    if args.trace or cfg.trace:
        files["trace"] = os.path.join(out_dir, "deploy_trace.csv")
    _claim(files.values(), args.overwrite)
    os.makedirs(out_dir, exist_ok=True)

    runs = run_deployment_phase(cfg.scenario, cfg.deployment, agents,
                                parallel=args.parallel, keep_trace="trace" in files)
    write_runs_csv(files["runs"], runs, names)
    summary = summarize(runs, names)
    with open(files["summary"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("agent", "type", "cardinality", "reward", "bler", "se"))
        for (typ, card, rw), name in zip(rows, names):
            w.writerow([name, typ, card, rw, repr(summary[name][0]), repr(summary[name][1])])
    cdfs = {name: aggregate_cdf([r.metrics[i].mean_spectral_efficiency for r in runs])
            for i, name in enumerate(names)}
    write_cdf_csv(files["cdf"], cdfs)
    if "trace" in files:
        write_trace_csv(files["trace"], ((r.run_id, name, m) for r in runs
                                         for name, m in zip(names, r.metrics)))
    print(f"Deployment phase results (average over {cfg.deployment.n_runs} runs)", file=out)
    print(format_summary(rows, names, summary), file=out)
    return 0


def cmd_curves(args, out=None):
    out = out or sys.stdout
    cfg = _config(args)
    out_dir = _outdir(args, cfg)
    files = [os.path.join(out_dir, "bler_curves.csv"), os.path.join(out_dir,
                                                                    "illa_thresholds.csv")]
    _claim(files, args.overwrite)
    os.makedirs(out_dir, exist_ok=True)
    model = cfg.scenario.bler_model
    actions = mcs_action_set(*cfg.mcs_range)
    lo, hi, step = cfg.curve_grid_db
    grid = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
    with open(files[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("mcs_index", "snr_db", "bler"))
        for m in actions:
            for s, b in zip(grid, bler(grid, m, model)):
                w.writerow([m.index, repr(float(round(s, 10))), repr(float(b))])
    write_mcs_table_csv(files[1], model, actions, cfg.target_bler)
    print(f"wrote {len(actions)} BLER curves x {len(grid)} SNR points to {files[0]}", file=out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="qlamc", description="Q-learning AMC link simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI run configuration (defaults if omitted)")
        sp.add_argument("--out-dir", help="output directory (overrides output.directory)")
        sp.add_argument("--seed", type=int, help="override learning/deployment seeds")
        sp.add_argument("--trace", action="store_true", help="also write per-TTI traces")
        sp.add_argument("--overwrite", action="store_true", help="replace existing outputs")
        sp.add_argument("--parallel", type=int, default=1, metavar="N",
                        help="worker processes for Monte Carlo runs")

    t = sub.add_parser("train", help="learning phase: build and save a Q-table")
    common(t)
    t.add_argument("--variant", action="append", metavar="N_CQI:REWARD",
                   help="train this QL-AMC variant (repeatable)")
    t.add_argument("--all-variants", action="store_true",
                   help="train every variant in agent.qlamc_variants")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("deploy", help="deployment phase: compare all configured agents")
    common(d)
    d.add_argument("qtables", nargs="*", help="Q-table files, one per QL-AMC variant")
    d.set_defaults(func=cmd_deploy)

    c = sub.add_parser("curves", help="write BLER curves and ILLA thresholds")
    common(c)
    c.set_defaults(func=cmd_curves)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError) as exc:
        if getattr(args, "variant", None) and isinstance(exc, ValueError):
            print(f"config error: bad --variant: {exc}", file=sys.stderr)
            return 1
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
