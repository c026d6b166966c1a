"""Command-line entry point.

Thin adapters only: every subcommand parses flags, calls the corresponding
library function, and prints JSON (or writes the requested file). All
numeric behaviour lives in the library modules and is covered by their
tests. Output is deterministic for a fixed --seed; pass ``--seed random``
to opt into entropy.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .calibration import (
    PrivacyBudget,
    calibrate_wgm,
    gumbel_scale,
    lb_frequency_bstar,
)
from .dataset import ZipfParams, dataset_stats, gen_zipf, ingest_pairs
from .harness import SweepSpec, aggregate, emit, load_dataset, run_sweep
from .mechanisms import NoiseMode, Task, meta, wgm
from .metrics import hits, l1_topk, missed_users, mm, mm_topk
from .seeding import DEFAULT_SEED, child_seed

_ZIPF_DATA_TAG = 100


def _render_json(obj, indent: int = 0) -> str:
    """JSON with floats at 9 significant digits and stable key order."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        inner = ",\n".join(
            f"{pad}  {json.dumps(k)}: {_render_json(v, indent + 1)}"
            for k, v in obj.items()
        )
        return "{\n" + inner + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_render_json(v) for v in obj) + "]"
        inner = ",\n".join(f"{pad}  {_render_json(v, indent + 1)}" for v in obj)
        return "[\n" + inner + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, float):
        return format(obj, ".9g")
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    return json.dumps(obj, ensure_ascii=False)


def _write_output(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _parse_seed(value: str) -> int:
    if value == "random":
        return int(np.random.SeedSequence().generate_state(1, np.uint64)[0])
    return int(value)


def _add_seed_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--seed",
        type=_parse_seed,
        default=DEFAULT_SEED,
        help=f"integer seed or 'random' (default {DEFAULT_SEED})",
    )


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="CSV of 'user_id,item_id' lines")
    src.add_argument(
        "--zipf",
        help="synthetic power-law data as 'C,s,n_items,n' (seeded from --seed)",
    )
    p.add_argument(
        "--header", action="store_true", help="the --input file has a header line"
    )


def _load_data(args) -> tuple[str, object]:
    if args.input:
        return load_dataset({"csv": args.input, "header": args.header})
    c, s, n_items, n = args.zipf.split(",")
    d = gen_zipf(
        ZipfParams(C=float(c), s=float(s)),
        int(n_items),
        int(n),
        child_seed(args.seed, _ZIPF_DATA_TAG),
    )
    return f"zipf_C{c}_s{s}_m{n_items}_n{n}", d


def _cmd_calibrate(args) -> int:
    out = {
        "sigma": None,
        "T": None,
        "b_star": lb_frequency_bstar(args.eps, args.delta),
    }
    cfg = calibrate_wgm(args.eps, args.delta, args.delta0)
    out["sigma"] = cfg.sigma
    out["T"] = cfg.threshold
    if args.k is not None:
        out["lambda"] = gumbel_scale(args.eps, args.delta, args.k).lam
    _write_output(_render_json(out) + "\n", args.out)
    return 0


def _cmd_stats(args) -> int:
    with open(args.input, "r", encoding="utf-8") as f:
        d = ingest_pairs(f, header=args.header)
    stats = dataset_stats(d)
    _write_output(_render_json(stats.to_json_dict()) + "\n", args.out)
    if args.rank_freq_out:
        with open(args.rank_freq_out, "w", encoding="utf-8") as f:
            f.write(stats.rank_freq_csv())
    if args.ecdf_out:
        with open(args.ecdf_out, "w", encoding="utf-8") as f:
            f.write(stats.ecdf_csv())
    return 0


def _cmd_gen_zipf(args) -> int:
    d = gen_zipf(ZipfParams(C=args.C, s=args.s), args.items, args.users, args.seed)
    lines = [f"{u},{x}" for u, x in d.to_pairs()]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
        summary = {
            "out": args.out,
            "n_users": d.n,
            "n_items": d.unique_items,
            "n_entries": d.total_items,
        }
        sys.stdout.write(_render_json(summary) + "\n")
    else:
        sys.stdout.write(text)
    return 0


def _common_mechanism_params(args, extra: dict) -> dict:
    params = {"eps": args.eps, "delta": args.delta, "delta0": args.delta0}
    params.update(extra)
    params["noise"] = args.noise
    if args.noise == "disabled":
        params["non_private"] = True
    params["seed"] = args.seed
    return params


def _cmd_set_union(args) -> int:
    dataset_id, d = _load_data(args)
    mode = NoiseMode(args.noise)
    cfg = calibrate_wgm(args.eps, args.delta, args.delta0).bound_to(
        d.max_user_set_size
    )
    results = []
    for t in range(args.trials):
        t_seed = child_seed(args.seed, t)
        released, _ = wgm(d, cfg, mode, t_seed)
        items = sorted(released)
        results.append(
            {
                "trial": t,
                "seed": t_seed,
                "released_items": items,
                "metrics": {"MM": mm(d, items), "Hits": hits(d, items)},
            }
        )
    out = {
        "command": "set-union",
        "dataset": dataset_id,
        "params": _common_mechanism_params(
            args, {"sigma": cfg.sigma, "T": cfg.threshold}
        ),
        "results": results,
    }
    _write_output(_render_json(out) + "\n", args.out)
    return 0


def _parse_split(text: str) -> tuple[float, float]:
    a, b = text.split(",")
    return float(a), float(b)


def _cmd_meta_task(args, task: Task) -> int:
    dataset_id, d = _load_data(args)
    mode = NoiseMode(args.noise)
    budget = PrivacyBudget(args.eps, args.delta, split=_parse_split(args.split))
    cfg = calibrate_wgm(*budget.stage(0), args.delta0)
    scale = gumbel_scale(*budget.stage(1), args.k)
    results = []
    for t in range(args.trials):
        t_seed = child_seed(args.seed, t)
        out, trace = meta(
            d, budget, args.delta0, args.k, task, t_seed, mode=mode,
            cfg=cfg, scale=scale,
        )
        if task is Task.TOP_K:
            entry = {
                "trial": t,
                "seed": t_seed,
                "sequence": list(out.items),
                "metrics": {
                    "MM_topk": mm_topk(d, out.items, args.k),
                    "L1_topk": l1_topk(d, out.items, args.k),
                },
            }
        else:
            entry = {
                "trial": t,
                "seed": t_seed,
                "items": list(out.items),
                "users_hit_per_round": list(out.users_hit_per_round),
                "metrics": {
                    "Hits": hits(d, out.items),
                    "MissedUsers": missed_users(d, out.items),
                },
            }
        entry["domain_size"] = len(trace.released)
        results.append(entry)
    out_obj = {
        "command": task.value,
        "dataset": dataset_id,
        "params": _common_mechanism_params(
            args,
            {
                "k": args.k,
                "split": list(budget.split),
                "sigma": cfg.sigma,
                "T": cfg.threshold,
                "lambda": scale.lam,
            },
        ),
        "results": results,
    }
    _write_output(_render_json(out_obj) + "\n", args.out)
    return 0


def _cmd_sweep(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as f:
        spec = SweepSpec.from_json_dict(json.load(f))
    rows = run_sweep(spec, threads=args.threads)
    emit(rows, args.format, args.out)
    if args.aggregate_out:
        emit(aggregate(rows), args.format, args.aggregate_out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpdomain",
        description="Differentially private domain discovery toolkit",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=(
            f"dpdomain {__version__} "
            "(sigma solver rel tol 1e-9, normal quantile abs tol 1e-12)"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="compute sigma, T, lambda, and b*")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--delta0", type=int, required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("stats", help="summarize a user,item CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--header", action="store_true")
    p.add_argument("--out", default=None)
    p.add_argument("--rank-freq-out", default=None)
    p.add_argument("--ecdf-out", default=None)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("gen-zipf", help="generate synthetic power-law data")
    p.add_argument("--C", type=float, required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--items", type=int, required=True)
    p.add_argument("--users", type=int, required=True)
    _add_seed_flag(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_gen_zipf)

    def add_mechanism_parser(name: str, help_text: str):
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--eps", type=float, required=True)
        q.add_argument("--delta", type=float, required=True)
        q.add_argument("--delta0", type=int, required=True)
        _add_seed_flag(q)
        q.add_argument("--trials", type=int, default=1)
        _add_data_flags(q)
        q.add_argument(
            "--noise", choices=["calibrated", "disabled"], default="calibrated"
        )
        q.add_argument("--out", default=None)
        return q

    p = add_mechanism_parser("set-union", "private set union release")
    p.set_defaults(func=_cmd_set_union)

    p = add_mechanism_parser("top-k", "private top-k over a discovered domain")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--split", default="0.5,0.5", help="budget split 'f1,f2'")
    p.set_defaults(func=lambda a: _cmd_meta_task(a, Task.TOP_K))

    p = add_mechanism_parser(
        "hitting-set", "private k-hitting set over a discovered domain"
    )
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--split", default="0.5,0.5", help="budget split 'f1,f2'")
    p.set_defaults(func=lambda a: _cmd_meta_task(a, Task.HITTING_SET))

    p = sub.add_parser("sweep", help="run a sweep described by a JSON spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--aggregate-out", default=None)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
