"""Command-line front end: kernel benchmarks, schedule inspection, GPU
footprint estimates, toy training runs, and matrix file conversion.

Delimited output (CSV/JSON) is the primary artifact; when writing to a
file, a rendered figure is saved alongside it unless --no-figures is given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, bcsc, bench, footprint, pruner, trainer

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {exc}")


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats: {exc}")


def _limit_threads(n: int | None):
    """Pin BLAS thread counts for reproducible timing; no-op when n is None."""
    if n is None:
        import contextlib
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _metadata(args, extra: dict | None = None) -> dict:
    meta = {"version": __version__, "seed": getattr(args, "seed", None)}
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",) and v is not None}
    meta["config"] = json.dumps(cfg, default=str)
    if extra:
        meta.update(extra)
    return meta


def _figures_wanted(args) -> bool:
    return args.out is not None and not args.no_figures


def _figure_path(out: str) -> str:
    return str(Path(out).with_suffix(".png"))


def cmd_bench(args) -> int:
    with _limit_threads(args.threads):
        records = bench.run_sweep(
            sizes=args.sizes, block_sizes=args.block_sizes,
            sparsities=args.sparsities, trials=args.trials, seed=args.seed,
        )
    if args.out and args.out.endswith(".json"):
        payload = {"meta": _metadata(args), "records": [r.__dict__ for r in records]}
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
    elif args.out:
        bench.write_csv(records, args.out, metadata=_metadata(args))
    else:
        print(",".join(bench.BENCH_CSV_FIELDS))
        for rec in records:
            print(rec.csv_row())
    if _figures_wanted(args):
        from . import reports
        reports.save_bench_figure(records, _figure_path(args.out))
    return 0


def cmd_schedule(args) -> int:
    sched = pruner.SparsitySchedule(
        initial_sparsity=args.s_init, max_sparsity=args.s_max,
        total_iters=args.iters, decay_iters=args.decay,
        step_size=args.step_size,
    )
    refresh_iters = list(range(0, sched.total_iters + 1, sched.step_size))
    if refresh_iters[-1] != sched.total_iters:
        refresh_iters.append(sched.total_iters)

    reports_list = []
    if args.simulate:
        rng = np.random.default_rng(args.seed)
        gr, gc, b = args.grid_rows, args.grid_cols, args.block_size
        for i in refresh_iters:
            w = rng.standard_normal((gr * b, gc * b)).astype(np.float32)
            g = rng.standard_normal((gr * b, gc * b)).astype(np.float32)
            _, rep = pruner.generate_masks(w, g, b, sched.target(i), iteration=i)
            reports_list.append(rep)
        lines = [pruner.REPORT_CSV_HEADER] + [r.csv_row() for r in reports_list]
    else:
        lines = ["iter,s_i"] + [f"{i},{sched.target(i):.10g}" for i in refresh_iters]

    if args.out:
        with open(args.out, "w") as fh:
            for key, val in _metadata(args).items():
                fh.write(f"# {key}={val}\n")
            fh.write("\n".join(lines) + "\n")
    else:
        print("\n".join(lines))
    if _figures_wanted(args):
        from . import reports
        reports.save_schedule_figure(sched, _figure_path(args.out), reports_list or None)
    return 0


def cmd_gpu_calc(args) -> int:
    if (args.mlp_params is None) == (args.mlp_fraction is None):
        raise ValueError("give exactly one of --mlp-params or --mlp-fraction")
    if args.mlp_fraction is not None:
        query = footprint.FootprintQuery.from_fraction(
            params=args.params, mlp_fraction=args.mlp_fraction,
            sparsity=args.sparsity, bytes_per_param=args.bytes_per_param,
            hbm_bytes=args.hbm_bytes,
        )
    else:
        query = footprint.FootprintQuery(
            params=args.params, mlp_params=args.mlp_params,
            sparsity=args.sparsity, bytes_per_param=args.bytes_per_param,
            hbm_bytes=args.hbm_bytes,
        )
    result = footprint.gpu_requirements(query)
    payload = {"meta": _metadata(args), "query": query.__dict__,
               "result": result.to_dict()}
    if args.out and args.out.endswith(".json"):
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
    elif args.out:
        with open(args.out, "w") as fh:
            for key, val in _metadata(args).items():
                fh.write(f"# {key}={val}\n")
            fh.write("dense_gpus,sparse_gpus,reduction,dense_bytes,sparse_bytes\n")
            fh.write(f"{result.dense_gpus},{result.sparse_gpus},"
                     f"{result.reduction:.6g},{result.dense_bytes:.6g},"
                     f"{result.sparse_bytes:.6g}\n")
    else:
        print(json.dumps(payload["result"], indent=2))
    return 0


def load_config(path: str) -> trainer.TrainConfig:
    """Parse a JSON or TOML training config with readable diagnostics."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    text = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            raw = tomllib.loads(text.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ValueError(f"{path}: TOML parse error: {exc}") from exc
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(
                f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: "
                f"{exc.msg}"
            ) from exc
    try:
        return trainer.TrainConfig.from_dict(raw)
    except (ValueError, TypeError) as exc:
        raise ValueError(f"{path}: invalid config: {exc}") from exc


def _apply_overrides(config: trainer.TrainConfig, sets: list[str]) -> trainer.TrainConfig:
    """Apply --set key=value overrides (dotted keys reach the schedule)."""
    data = config.to_dict()
    for item in sets:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        target = data
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                raise ValueError(f"unknown config section {part!r} in {key!r}")
            target = target[part]
        leaf = parts[-1]
        if leaf not in target:
            raise ValueError(f"unknown config field {key!r}")
        try:
            target[leaf] = json.loads(val)
        except json.JSONDecodeError:
            target[leaf] = val
    return trainer.TrainConfig.from_dict(data)


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = trainer.TrainConfig.from_dict({**config.to_dict(), "seed": args.seed})
    if args.set:
        config = _apply_overrides(config, args.set)

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with _limit_threads(args.threads):
        log, stack = trainer.train(config)

    meta = {"version": __version__, "seed": config.seed,
            "config": json.dumps(config.to_dict())}
    log.write_csv(outdir / "train_log.csv", metadata=meta)
    log.write_prune_csv(outdir / "prune_report.csv", metadata=meta)
    log.write_summary(outdir / "summary.json")
    trainer.save_model(stack, outdir)
    if not args.no_figures:
        from . import reports
        reports.save_training_figure(log, outdir / "train_log.png")
    print(f"final loss {log.records[-1].loss:.6g} after {len(log.records)} iterations; "
          f"outputs in {outdir}")
    return 0


def cmd_convert(args) -> int:
    with open(args.input, "rb") as fh:
        magic = fh.read(4)
    if magic == bcsc.DENSE_MAGIC:
        dense = bcsc.read_dense_file(args.input)
        w = bcsc.from_dense(dense, args.block_size)
        bcsc.save(w, args.output)
        print(f"wrote {args.output}: {w.rows}x{w.cols}, b={w.block}, "
              f"nnzb={w.nnzb}, block sparsity {w.block_sparsity():.4f}")
    elif magic == bcsc.MAGIC:
        w = bcsc.load(args.input)
        bcsc.write_dense_file(w.to_dense(), args.output)
        print(f"wrote {args.output}: {w.rows}x{w.cols} dense")
    else:
        raise bcsc.FormatError(
            f"{args.input}: unrecognized magic {magic!r} (expected DNSE or BCSC)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blocksparse",
        description="Block-sparse kernel benchmarks, prune-and-grow schedules, "
                    "toy sparse training, and footprint estimates.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="sweep the kernel and report timings")
    p.add_argument("--sizes", type=_parse_int_list, default=[1024],
                   help="comma-separated square sizes (M=N=K)")
    p.add_argument("--block-sizes", type=_parse_int_list, default=[64])
    p.add_argument("--sparsities", type=_parse_float_list, default=[0.0, 0.5, 0.9, 0.95])
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (.csv or .json); stdout if omitted")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("schedule", help="print the sparsity schedule")
    p.add_argument("--s-init", type=float, default=0.0)
    p.add_argument("--s-max", type=float, default=0.95)
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--decay", type=int, default=0)
    p.add_argument("--step-size", type=int, default=100)
    p.add_argument("--simulate", action="store_true",
                   help="run mask generation on random weights at each refresh")
    p.add_argument("--grid-rows", type=int, default=16)
    p.add_argument("--grid-cols", type=int, default=16)
    p.add_argument("--block-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (.csv); stdout if omitted")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("gpu-calc", help="weight-storage GPU count estimate")
    p.add_argument("--params", type=float, required=True)
    p.add_argument("--mlp-params", type=float, default=None)
    p.add_argument("--mlp-fraction", type=float, default=None)
    p.add_argument("--sparsity", type=float, default=0.0)
    p.add_argument("--bytes-per-param", type=float, default=4.0)
    p.add_argument("--hbm-bytes", type=float, default=96e9)
    p.add_argument("--out", help="output path (.csv or .json); stdout if omitted")
    p.set_defaults(func=cmd_gpu_calc)

    p = sub.add_parser("train", help="run the toy training loop from a config file")
    p.add_argument("--config", required=True, help="JSON or TOML config path")
    p.add_argument("--outdir", default="train_out")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--set", action="append", default=[],
                   help="override a config field, e.g. --set schedule.max_sparsity=0.5")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", help="convert between dense and BCSC files")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--block-size", type=int, default=64,
                   help="block size when converting dense to BCSC")
    p.set_defaults(func=cmd_convert)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, MemoryError, trainer.DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
