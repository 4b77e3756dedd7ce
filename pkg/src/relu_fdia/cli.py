"""Command-line front end.

Exit codes: 0 attack found (or command succeeded), 1 no attack exists (or
verification failed), 2 timed out, 3 bad configuration or input files, 4 internal
error such as a solver solution that fails verification.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .attack import (
    AttackConfig,
    AttackResult,
    AttackStatus,
    ConfigError,
    Scenario,
    VerificationError,
    load_attack_config,
    run_campaign,
    synthesize,
    verify,
)
from .bb import SolverConfig
from .encoder import EncodingError, add_attack_constraint, encode, set_objective
from .network import NetworkError, load_network, random_network, save_network

EXIT_OK, EXIT_NO_ATTACK, EXIT_TIMEOUT, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2, 3, 4
STATUS_EXIT = {
    AttackStatus.SUCCESS: EXIT_OK,
    AttackStatus.NO_ATTACK: EXIT_NO_ATTACK,
    AttackStatus.TIMED_OUT: EXIT_TIMEOUT,
    AttackStatus.ERROR: EXIT_INTERNAL,
}

log = logging.getLogger("relu_fdia")


def _int_list(values) -> list[int]:
    out = []
    for v in values:
        out += [int(p) for p in str(v).replace(",", " ").split()]
    return out


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}")


def _write(path: str | None, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load(args):
    net = load_network(_read(args.network))
    cfg = load_attack_config(_read(args.attack_config), seed=args.seed, input_dim=net.input_dim)
    if cfg.input_dim != net.input_dim:
        raise ConfigError(f"attack config has {cfg.input_dim} inputs, network expects {net.input_dim}")
    if args.eps is not None:
        cfg = cfg.with_eps(args.eps)
    return net, cfg


def _solver(args, cfg: AttackConfig) -> SolverConfig:
    solver = cfg.solver_config()
    if getattr(args, "time_limit", None) is not None:
        solver = solver.replace(time_limit=args.time_limit)
    return solver


def _scenario(args, cfg: AttackConfig) -> Scenario:
    if args.indices:
        return Scenario(tuple(sorted(set(_int_list(args.indices)))))
    return Scenario(cfg.candidate_inputs)


# -- commands --------------------------------------------------------------------------


def cmd_gen(args) -> int:
    widths = _int_list([args.shape.replace("-", " ")])
    net = random_network(widths, args.seed, final=args.final)
    _write(args.out, save_network(net) + "\n")
    return EXIT_OK


def cmd_encode(args) -> int:
    net, cfg = _load(args)
    ea = encode(net, cfg.perturbation(_scenario(args, cfg)), bounds=cfg.bounds)
    add_attack_constraint(ea, cfg.constraint)
    set_objective(ea, cfg.objective)
    _write(args.out, ea.model.to_text())
    return EXIT_OK


def cmd_attack(args) -> int:
    net, cfg = _load(args)
    scenario = _scenario(args, cfg)
    solver = _solver(args, cfg)
    trace = open(args.trace, "w") if args.trace else None
    try:
        result = synthesize(net, cfg, scenario, solver, trace=trace)
    finally:
        if trace is not None:
            trace.close()
    doc = {"attack_config": cfg.to_dict(), "result": result.to_dict()}
    _write(args.out, json.dumps(doc, indent=2) + "\n")
    log.info("%s in %.3f s (%d nodes)", result.status.value, result.wall_time, result.nodes)
    return STATUS_EXIT[result.status]


def cmd_campaign(args) -> int:
    net, cfg = _load(args)
    solver = _solver(args, cfg)

    def progress(r):
        log.info("k=%d id=%d %s %.3f s", r.scenario.k, r.scenario.id, r.status.value, r.wall_time)

    report = run_campaign(net, cfg, _int_list(args.k), solver, jobs=args.jobs, progress=progress)
    out = Path(args.out)
    out.with_suffix(".csv").write_text(report.to_csv())
    out.with_suffix(".json").write_text(json.dumps(report.summary(), indent=2) + "\n")
    print(
        f"{report.successful}/{report.total} successful, {report.timed_out} timed out, "
        f"peak {report.peak_time:.3f} s"
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    net = load_network(_read(args.network))
    try:
        doc = json.loads(_read(args.result))
        cfg = AttackConfig.from_dict(doc["attack_config"])
        result = AttackResult.from_dict(doc["result"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"malformed result file: {exc}")
    if cfg.input_dim != net.input_dim or (result.delta is not None and len(result.delta) != net.input_dim):
        raise ConfigError(f"result does not match the network's {net.input_dim} inputs")
    verdict = verify(net, result, cfg)
    print("verified" if verdict else f"not verified: {verdict.reason} {verdict.detail}".rstrip())
    return EXIT_OK if verdict else EXIT_NO_ATTACK


# -- parser --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relu-fdia", description="Perturbation attacks on ReLU networks via MILP.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a seeded random network")
    g.add_argument("--shape", required=True, help="layer widths, e.g. 5-25-25-3")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--final", choices=["relu", "linear"], default="relu", help="last layer activation")
    g.add_argument("--out", help="output file (default stdout)")
    g.set_defaults(func=cmd_gen)

    def common(sp, out_help):
        sp.add_argument("--network", required=True)
        sp.add_argument("--attack-config", required=True)
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--eps", type=float, help="override the ordering margin")
        sp.add_argument("--seed", type=int, default=0, help="seed for a base input left out of the config")

    e = sub.add_parser("encode", help="print the MILP for one scenario")
    common(e, "model text file (default stdout)")
    e.add_argument("--indices", nargs="+", help="perturbed inputs (default: all allowed)")
    e.set_defaults(func=cmd_encode)

    a = sub.add_parser("attack", help="synthesize one attack")
    common(a, "result JSON file (default stdout)")
    a.add_argument("--indices", nargs="+", help="perturbed inputs (default: all allowed)")
    a.add_argument("--time-limit", type=float)
    a.add_argument("--trace", help="write the branch-and-bound node log here")
    a.set_defaults(func=cmd_attack)

    c = sub.add_parser("campaign", help="attack every k-subset of inputs")
    common(c, "report path prefix; writes PREFIX.csv and PREFIX.json")
    c.add_argument("--k", nargs="+", required=True, help="scenario sizes, e.g. 1 2")
    c.add_argument("--time-limit", type=float, help="per-scenario limit")
    c.add_argument("--jobs", type=int, default=1)
    c.set_defaults(func=cmd_campaign)

    v = sub.add_parser("verify", help="re-check a saved attack result")
    v.add_argument("--network", required=True)
    v.add_argument("--result", required=True)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "campaign" and not args.out:
        parser.error("campaign needs --out")
    try:
        return args.func(args)
    except (ConfigError, EncodingError, NetworkError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VerificationError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
