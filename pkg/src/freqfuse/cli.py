"""``freqfuse`` command line: selftest, gradcheck, gen-data, train, eval, bench.

Exit codes: 0 success, 1 failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import kernels

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def config_sidecar(ckpt_path):
    return f"{ckpt_path}.config"


def cmd_selftest(args):
    from . import selftest
    results = selftest.run(args.seed, out=sys.stdout)
    failed = [r.name for r in results if not r.passed]
    print(f"selftest suites={len(results)} failed={len(failed)}"
          + (f" names={','.join(failed)}" if failed else ""))
    return EXIT_FAIL if failed else EXIT_OK


def cmd_gradcheck(args):
    from . import gradcheck as GC
    modules = [args.module] if args.module else list(GC.REGISTRY)
    ok = True
    for module in modules:
        for rep in GC.run_module(module, args.seed):
            print(rep.line(), flush=True)
            ok &= rep.passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_gen_data(args):
    from . import scenes
    spec = scenes.SceneSpec(size=args.size, occlusion=args.occlusion, seed=args.seed)
    data = scenes.generate(spec, args.count)
    scenes.save(data, args.out)
    print(f"wrote {len(data)} samples to {args.out}")
    return EXIT_OK


def cmd_train(args):
    from . import checkpoint, scenes
    from . import train as TR
    from .model import ToyDetectorConfig
    cfg = ToyDetectorConfig.load(args.config)
    data = scenes.load(args.data)
    model = TR.build(cfg, args.seed)  # wiring errors surface here, before any step
    if args.steps < 0:
        raise ValueError("--steps must be >= 0")
    TR.train(model, data, args.steps, seed=args.seed, overfit=args.overfit_batch,
             on_step=lambda rec: print(rec.line(), flush=True))
    checkpoint.save_checkpoint(model.store, args.out)
    with open(config_sidecar(args.out), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    print(f"wrote checkpoint {args.out} ({len(model.store)} tensors)")
    return EXIT_OK


def cmd_eval(args):
    from . import checkpoint, scenes
    from . import train as TR
    from .model import ToyDetectorConfig
    cfg_path = args.config or config_sidecar(args.ckpt)
    cfg = ToyDetectorConfig.load(cfg_path) if os.path.exists(cfg_path) else ToyDetectorConfig()
    model = TR.build(cfg, 0)
    model.store.load_state(checkpoint.load_checkpoint(args.ckpt))
    data = scenes.load(args.data)
    ap, ap_at = TR.evaluate(model, data, iou=args.iou)
    label = "AP50" if abs(args.iou - 0.5) < 1e-12 else f"AP{round(args.iou * 100)}"
    print(f"AP={ap:.6f} {label}={ap_at:.6f}")
    return EXIT_OK


def cmd_bench(args):
    from . import bench
    ops = [args.op] if args.op else list(bench.OPS)
    backends = kernels.available_backends() if args.backend == "both" else (args.backend,)
    results = {}
    for op in ops:
        for be in backends:
            res = bench.run(op, args.size, be, runs=args.runs, warmup=args.warmup)
            results[(op, be)] = res
            print(res.line(), flush=True)
        if len(backends) == 2:
            c, p = results[(op, "compiled")], results[(op, "python")]
            print(f"op={op} speedup_compiled_over_python={p.median_ns / c.median_ns:.2f}")
    if "conv3x3" in ops and "dwconv31" in ops:
        be = backends[0]
        a, b = results[("dwconv31", be)], results[("conv3x3", be)]
        first, second = ("dwconv31", "conv3x3") if a.median_ns <= b.median_ns else ("conv3x3", "dwconv31")
        print(f"order backend={be} faster={first} slower={second}")
    return EXIT_OK


def build_parser():
    from . import bench
    from . import gradcheck as GC
    p = argparse.ArgumentParser(prog="freqfuse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("selftest", help="run every oracle and identity suite")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_selftest)

    s = sub.add_parser("gradcheck", help="finite-difference checks per op")
    s.add_argument("--module", choices=list(GC.REGISTRY))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("gen-data", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--occlusion", type=float, default=0.3)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train the toy detector and write a checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--overfit-batch", action="store_true", help="train on the first batch only")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="print AP and AP50 of a checkpoint on a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--iou", type=float, default=0.5)
    s.add_argument("--config", help="model config (default: the checkpoint's .config sidecar)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="median wall time per op on each kernel backend")
    s.add_argument("--op", choices=list(bench.OPS))
    s.add_argument("--size", type=_size, default=(16, 16))
    s.add_argument("--backend", choices=("both", "compiled", "python"), default="both")
    s.add_argument("--runs", type=int, default=bench.RUNS)
    s.add_argument("--warmup", type=int, default=bench.WARMUP)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "runs", 30) < 30:
        parser.error("--runs must be at least 30")
    if args.command == "bench" and args.backend == "compiled" and "compiled" not in kernels.available_backends():
        parser.error("compiled kernels are not built")
    from .modules import ConfigError
    from .scenes import FormatError
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
    except KeyError as exc:
        print(f"load error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
