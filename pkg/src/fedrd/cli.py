"""Command line entry point: ``fedrd run|sweep|payload|presets``.

Hidden width ``--n`` is the number of neurons in each hidden layer; the
weight count W(n, l) includes every weight and bias of the net.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import nn
from .federation import Protocol, payload_bytes
from .harness import PRESETS, emit, load_overrides, parse_seeds, preset, sweep

_FLAG_TO_FIELD = {
    "protocol": "protocol",
    "S": "sections",
    "E": "period",
    "n": "hidden_width",
    "l": "hidden_layers",
    "budget": "episode_budget",
    "policy_lr": "policy_lr",
    "value_lr": "value_lr",
    "gamma": "gamma",
    "distill_epochs": "distill_epochs",
    "distill_lr": "distill_lr",
    "distill_batch": "distill_batch",
    "mixup_portion": "mixup_portion",
    "mixup_beta": "mixup_beta",
    "activation": "activation",
}


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--preset", default="fig3", choices=sorted(PRESETS))
    p.add_argument("--config", help="key = value file; overrides flags")
    p.add_argument("--protocol", choices=[x.value for x in Protocol])
    p.add_argument("--S", type=int, help="sections per state component")
    p.add_argument("--E", type=int, help="episodes per communication round")
    p.add_argument("--n", type=int, help="neurons per hidden layer")
    p.add_argument("--l", type=int, help="number of hidden layers")
    p.add_argument("--budget", type=int, help="episode budget per run")
    for name in ("policy_lr", "value_lr", "gamma", "distill_lr", "mixup_portion", "mixup_beta"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    p.add_argument("--distill-epochs", dest="distill_epochs", type=int)
    p.add_argument("--distill-batch", dest="distill_batch", type=int,
                   help="distillation minibatch size, 0 for full batch")
    p.add_argument("--activation", choices=[a.value for a in nn.Activation])
    p.add_argument("--count-weighted", action="store_true", default=None,
                   help="put visit counts on the wire (16-byte proxy entries)")
    p.add_argument("--exclude-self", action="store_true", default=None)
    p.add_argument("--frl-policy-only", action="store_true", default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--format", default="csv", choices=["csv", "jsonl"])
    p.add_argument("--round-logs", action="store_true", help="also write rounds.jsonl")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel worker processes (default $FEDRD_WORKERS or 1)")


def _overrides(args) -> dict:
    out = {}
    for flag, name in _FLAG_TO_FIELD.items():
        v = getattr(args, flag, None)
        if v is not None:
            out[name] = v
    for name in ("count_weighted", "exclude_self", "frl_policy_only"):
        if getattr(args, name):
            out[name] = True
    if args.config:
        out.update(load_overrides(args.config))
    return out


def _report(result, args):
    for row in result.aggregates():
        print(json.dumps(row))
    if args.out:
        for path in emit(result, args.out, args.format, args.round_logs):
            print(f"wrote {path}", file=sys.stderr)


def cmd_run(args):
    ov = _overrides(args)
    ov["seeds"] = (args.seed,)
    ov.setdefault("num_agents", args.agents)
    cfg = preset(args.preset, **ov)
    result = sweep(cfg, [cfg.mission.num_agents], workers=1)
    for row in result.rows():
        print(json.dumps(row))
    if args.out:
        for path in emit(result, args.out, args.format, args.round_logs):
            print(f"wrote {path}", file=sys.stderr)


def cmd_sweep(args):
    ov = _overrides(args)
    seeds = ov.pop("seeds", parse_seeds(args.seeds))
    cfg = preset(args.preset, seeds=seeds, **ov)
    counts = [int(k) for k in args.agents.split(",")]
    _report(sweep(cfg, counts, workers=args.workers), args)


def cmd_payload(args):
    protocol = Protocol(args.protocol)
    if protocol is Protocol.FRL and args.size is None:
        w = nn.weight_count(nn.MlpConfig(4, args.l, args.n, 2))
        if not args.policy_only:
            w += nn.weight_count(nn.MlpConfig(4, args.l, args.n, 1, nn.Head.LINEAR))
        size = w
    elif args.size is None:
        raise SystemExit("--size is required for this protocol")
    else:
        size = args.size
    print(json.dumps({"protocol": protocol.value, "size": size,
                      "bytes": payload_bytes(protocol, size, args.count_weighted)}))


def cmd_presets(args):
    for name, values in PRESETS.items():
        print(f"{name}: S={values['sections']} E={values['period']} "
              f"n={values['hidden_width']} l={values['hidden_layers']}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedrd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one configuration, one seed")
    _add_config_flags(p)
    p.add_argument("--agents", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="preset x agent counts x seeds")
    _add_config_flags(p)
    p.add_argument("--agents", default="1,2,4", help="comma separated agent counts")
    p.add_argument("--seeds", default="0-9", help='e.g. "0-9" or "1,3,5"')
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("payload", help="payload size calculator")
    p.add_argument("--protocol", required=True, choices=[x.value for x in Protocol])
    p.add_argument("--size", type=int, help="knowledge size (entries or weights)")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--l", type=int, default=2)
    p.add_argument("--policy-only", action="store_true")
    p.add_argument("--count-weighted", action="store_true")
    p.set_defaults(func=cmd_payload)

    p = sub.add_parser("presets", help="list named presets")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)

