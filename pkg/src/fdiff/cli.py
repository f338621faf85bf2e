"""``fdiff`` command line.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical
failure (including a failing gradient check), 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from fdiff.config import RunConfig, load_config
from fdiff.errors import ConfigError, CorruptFile, FDiffError, InvalidConfig, NumericalFailure

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("fdiff")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="desk", help="JSON config path or preset name (default: desk)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--data-dir", help="override the dataset directory")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")

    p = argparse.ArgumentParser(prog="fdiff", description="Fuzzy-boundary diffusion segmentation on 3-D phantoms.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write a phantom dataset and manifest")
    sub.add_parser("train", parents=[common], help="train one variant; writes checkpoint and loss log")
    s = sub.add_parser("sample", parents=[common], help="sample one volume with a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--volume", required=True, help="FDFV volume to segment")
    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    a = sub.add_parser("ablate", parents=[common], help="train and evaluate all four variants per seed")
    a.add_argument("--split", default="test", choices=("train", "val", "test"))
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.data_dir is not None:
        changes["data_dir"] = args.data_dir
    return cfg.replace(**changes) if changes else cfg


def _run(args) -> int:
    from fdiff import commands  # deferred so `--help` stays fast

    cfg = _config(args)
    out = Path(args.out or cfg.out_dir)
    if args.command == "gen-data":
        manifest = commands.cmd_gen_data(cfg, args.out)
        print("split,count")
        for name, n in zip(("train", "val", "test"), manifest.counts()):
            print(f"{name},{n}")
    elif args.command == "train":
        res = commands.cmd_train(cfg, out)
        last = res.rows[-1] if res.rows else None
        print(f"checkpoint,{res.checkpoint}")
        print(f"iterations,{len(res.rows)}")
        print(f"final_loss,{'' if last is None else repr(last['loss'])}")
        print(f"seconds,{res.seconds:.1f}")
    elif args.command == "sample":
        res = commands.cmd_sample(cfg, args.checkpoint, args.volume, out)
        print("class,foreground_voxels,mean_probability")
        for k in range(res.fused.shape[1]):
            print(f"{k},{int(res.mask[0, k].sum())},{float(res.fused[0, k].mean())!r}")
    elif args.command == "eval":
        report = commands.cmd_eval(cfg, args.checkpoint, args.split, out)
        sys.stdout.write(report.table())
    elif args.command == "ablate":
        from fdiff.ablation import run_ablation

        result = run_ablation(cfg, out, args.split)
        sys.stdout.write(result.text())
    elif args.command == "gradcheck":
        report = commands.cmd_gradcheck(cfg, out)
        sys.stdout.write(report.table())
        if not report.passed:
            for row in report.failures():
                log.error("gradient check failed: %s/%s rel err %.3e", row.group, row.name, row.max_rel_err)
            return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return _run(args)
    except (ConfigError, InvalidConfig) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (CorruptFile, OSError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except FDiffError as exc:
        log.error("invalid input: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
