"""Command-line harness.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the contract says 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="djscc",
                description="Wireless image transmission with a learned "
                            "source-channel codec and diffusion refinement.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp, need_config=True):
        if need_config:
            sp.add_argument("--config", required=True, metavar="PATH",
                            help="TOML experiment config")
        sp.add_argument("--seed", type=int, default=None, metavar="U64")
        sp.add_argument("--out", default=None, metavar="DIR",
                        help="override the configured output directory")

    for name, help_ in (("train-jscc", "train the source-channel codec"),
                        ("train-vae", "train the latent image codec"),
                        ("pretrain-diffusion", "pretrain the base denoiser"),
                        ("train-control", "train the control branch")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.add_argument("--log-every", type=int, default=50, metavar="N")

    sp = sub.add_parser("transmit", help="transmit the test split at one SNR")
    common(sp)
    sp.add_argument("--snr-db", type=float, required=True, metavar="F")
    sp.add_argument("--lambda", dest="lam", type=float, default=None, metavar="F",
                    help="guidance strength (defaults to the config value)")
    sp.add_argument("--steps", type=int, default=None, metavar="N",
                    help="sampling steps (defaults to the config value)")
    sp.add_argument("--max-images", type=int, default=None, metavar="N")

    sp = sub.add_parser("sweep", help="grid over configured SNRs and lambdas")
    common(sp)

    sp = sub.add_parser("evaluate", help="aggregate a results CSV")
    sp.add_argument("--config", default=None, metavar="PATH")
    sp.add_argument("--out", default=None, metavar="DIR",
                    help="directory holding results.csv")
    sp.add_argument("--csv", default=None, metavar="PATH",
                    help="explicit CSV path (overrides --out)")

    sp = sub.add_parser("gen-dataset", help="render the procedural corpus")
    sp.add_argument("--out", required=True, metavar="DIR")
    sp.add_argument("--train-count", type=int, default=2000, metavar="N")
    sp.add_argument("--test-count", type=int, default=200, metavar="N")
    sp.add_argument("--size", type=int, default=32, metavar="PX")
    sp.add_argument("--seed", type=int, default=0, metavar="U64")
    return p


def _load_cfg(args, need_dataset=True):
    from .config import load_config
    cfg = load_config(args.config, need_dataset=need_dataset)
    if args.out is not None:
        cfg.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except BrokenPipeError:
        return 0
    except Exception as e:  # runtime failures map to exit 2
        print(f"djscc: error: {e}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "gen-dataset":
        from .dataset import generate_dataset
        generate_dataset(args.out, args.train_count, size=args.size,
                         seed=args.seed, split="train")
        generate_dataset(args.out, args.test_count, size=args.size,
                         seed=args.seed, split="test")
        print(f"wrote {args.train_count} train / {args.test_count} test "
              f"images under {args.out}")
        return 0

    from . import pipeline

    if cmd in ("train-jscc", "train-vae", "pretrain-diffusion", "train-control"):
        cfg = _load_cfg(args)
        fn = {"train-jscc": pipeline.train_jscc_stage,
              "train-vae": pipeline.train_latent_stage,
              "pretrain-diffusion": pipeline.pretrain_stage,
              "train-control": pipeline.control_stage}[cmd]
        losses = fn(cfg, log_every=args.log_every)
        print(f"{cmd}: {len(losses)} iters, first loss {losses[0]:.5f}, "
              f"final loss {losses[-1]:.5f}")
        return 0

    if cmd == "transmit":
        cfg = _load_cfg(args)
        seed = cfg.train.seed if args.seed is None else args.seed
        rows = pipeline.transmit_command(cfg, args.snr_db, seed, lam=args.lam,
                                         steps=args.steps,
                                         max_images=args.max_images)
        out = Path(args.out) if args.out else Path(cfg.out_dir)
        print(f"transmit: {len(rows)} rows -> {out / 'results.csv'}")
        return 0

    if cmd == "sweep":
        cfg = _load_cfg(args)
        seed = cfg.train.seed if args.seed is None else args.seed
        rows = pipeline.sweep_command(cfg, seed)
        out = Path(args.out) if args.out else Path(cfg.out_dir)
        print(f"sweep: {len(rows)} rows -> {out / 'results.csv'}")
        return 0

    if cmd == "evaluate":
        if args.csv is not None:
            path = Path(args.csv)
        else:
            if args.out is not None:
                base = Path(args.out)
            elif args.config is not None:
                base = Path(_load_cfg(args, need_dataset=False).out_dir)
            else:
                raise ValueError("evaluate needs --csv, --out or --config")
            path = base / "results.csv"
        table = pipeline.evaluate_csv(path)
        hdr = f"{'stage':<10} {'gamma':>7} {'lambda':>8} {'n':>5} " \
              f"{'psnr':>9} {'ssim':>8} {'ms_ssim':>8} {'mse':>12}"
        print(hdr)
        for row in table:
            print(f"{row['stage']:<10} {row['gamma_db']:>7.2f} "
                  f"{row['lambda']:>8.2f} {row['count']:>5d} "
                  f"{row['psnr_db']:>9.3f} {row['ssim']:>8.4f} "
                  f"{row['ms_ssim']:>8.4f} {row['mse']:>12.4e}")
        return 0

    raise ValueError(f"unhandled command {cmd!r}")


if __name__ == "__main__":
    raise SystemExit(main())
