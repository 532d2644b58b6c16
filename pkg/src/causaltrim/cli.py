"""Command-line surface for reproducible experiments.

Subcommands wire the library modules together: ``gen-data`` writes the
synthetic benchmark, ``train``/``eval``/``ablate`` drive the model,
``gradcheck`` verifies the differentiation contract and ``dump-mask``
exports trimming masks for one instance.  Every command resolves its
configuration up front, writes a manifest, and exits 0 on success, 1 on a
runtime failure, 2 on invalid configuration.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .config import default_configs, key_documentation, load_config, timestamp, write_manifest
from .data import Splits, build_splits, read_dataset, split_manifest, write_dataset
from .errors import ConfigError, DataError, TrainingError
from .model import TrimModel, load_model
from .training import (
    ablation_report_json,
    ablation_table,
    curves_csv,
    evaluate,
    full_model_gradcheck,
    metrics_table,
    model_config_for,
    run_ablation,
    train,
    train_report_json,
)
from .trimming import write_mask_dump

SPLIT_FILES = {"train": "train.lctd", "iid_test": "iid_test.lctd", "ood_test": "ood_test.lctd"}


def _load_configs(args):
    if getattr(args, "config", None):
        return load_config(args.config, seed_override=args.seed)
    return default_configs(seed_override=getattr(args, "seed", None))


def _read_data_dir(data_dir: Path):
    datasets = {}
    gen = None
    for split, filename in SPLIT_FILES.items():
        path = data_dir / filename
        if not path.exists():
            raise DataError(f"missing dataset file {path}")
        datasets[split], gen = read_dataset(path)
    return datasets, gen


def cmd_gen_data(args) -> int:
    gen, train_cfg = _load_configs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = timestamp()
    splits = build_splits(gen)
    for split, filename in SPLIT_FILES.items():
        write_dataset(out / filename, splits.by_name(split), gen)
    (out / "dataset_info.txt").write_text(split_manifest(gen))
    write_manifest(out / "manifest.txt", gen, train_cfg,
                   command="gen-data", version=__version__,
                   paths={"out": str(out)}, started_at=started, finished_at=timestamp())
    print(f"wrote {', '.join(SPLIT_FILES.values())} to {out}")
    return 0


def cmd_train(args) -> int:
    gen_from_cfg, train_cfg = _load_configs(args)
    data_dir = Path(args.data)
    datasets, gen = _read_data_dir(data_dir)
    if args.config and (gen.raw_dim != gen_from_cfg.raw_dim
                        or gen.answer_count != gen_from_cfg.answer_count):
        raise ConfigError(
            f"dataset at {data_dir} was generated with raw_dim={gen.raw_dim}, "
            f"answers={gen.answer_count}; config expects raw_dim={gen_from_cfg.raw_dim}, "
            f"answers={gen_from_cfg.answer_count}"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = timestamp()
    write_manifest(out / "manifest.txt", gen, train_cfg,
                   command="train", version=__version__,
                   paths={"data": str(data_dir), "out": str(out)}, started_at=started)
    splits = Splits(train=datasets["train"], iid_test=datasets["iid_test"],
                    ood_test=datasets["ood_test"], prototypes=(np.empty(0), np.empty(0)),
                    config=gen)
    model = TrimModel(model_config_for(train_cfg, gen), seed=train_cfg.seed)
    result = train(model, splits, train_cfg, out_dir=out, log=print)

    blocks = result.final_metrics if result.final_metrics is not None else result.init_metrics
    (out / "report.txt").write_text(metrics_table(blocks, title="accuracy (%)"))
    (out / "report.json").write_text(train_report_json(result))
    (out / "curves.csv").write_text(curves_csv(result.curves))
    write_manifest(out / "manifest.txt", gen, train_cfg,
                   command="train", version=__version__,
                   paths={"data": str(data_dir), "out": str(out)},
                   started_at=started, finished_at=timestamp())
    print(metrics_table(blocks, title="accuracy (%)"))
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.ckpt)
    data_path = Path(args.data)
    if data_path.is_dir():
        datasets, gen = _read_data_dir(data_path)
        blocks = {name: evaluate(model, insts, gen) for name, insts in datasets.items()}
    else:
        instances, gen = read_dataset(data_path)
        blocks = {data_path.stem: evaluate(model, instances, gen)}
    print(metrics_table(blocks, title="accuracy (%)"), end="")
    return 0


def cmd_ablate(args) -> int:
    gen, train_cfg = _load_configs(args)
    datasets = None
    if args.data:
        parts, gen_from_data = _read_data_dir(Path(args.data))
        datasets = Splits(train=parts["train"], iid_test=parts["iid_test"],
                          ood_test=parts["ood_test"], prototypes=(np.empty(0), np.empty(0)),
                          config=gen_from_data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = timestamp()
    write_manifest(out / "manifest.txt", gen, train_cfg,
                   command="ablate", version=__version__,
                   paths={"data": str(args.data or ""), "out": str(out)}, started_at=started)
    result = run_ablation(gen, train_cfg, datasets=datasets, log=print)
    (out / "ablation_table.txt").write_text(ablation_table(result))
    (out / "ablation.json").write_text(ablation_report_json(result))
    write_manifest(out / "manifest.txt", gen, train_cfg,
                   command="ablate", version=__version__,
                   paths={"data": str(args.data or ""), "out": str(out)},
                   started_at=started, finished_at=timestamp())
    print(ablation_table(result))
    return 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    report = full_model_gradcheck(seed=seed)
    print(report.summary())
    if report.passed(1e-4):
        print("gradcheck PASS (max rel err < 1e-4)")
        return 0
    print("gradcheck FAIL (max rel err >= 1e-4)")
    return 1


def cmd_dump_mask(args) -> int:
    model = load_model(args.ckpt)
    if model.trim is None or model.bank is None:
        raise DataError("checkpointed model has no trimming module to dump masks from")
    instances, _ = read_dataset(args.data)
    if not 0 <= args.instance < len(instances):
        raise DataError(f"instance index {args.instance} out of range (0..{len(instances) - 1})")
    inst = instances[args.instance]
    with ad.no_grad():
        _, region_features, _, trim_out, _ = model.forward_batch([inst])
    mask = trim_out.mask.data.reshape(-1)
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    text_path = out / f"mask_{args.instance:05d}.txt"
    pgm_path = out / f"mask_{args.instance:05d}.pgm"
    write_mask_dump(mask, text_path, pgm_path)
    print(f"instance {args.instance}: mask values " +
          " ".join(f"{v:.4f}" for v in mask))
    print(f"wrote {text_path} and {pgm_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causaltrim",
        description="momentum prototype banks + differentiable causal trimming "
                    "on a synthetic confounded VQA benchmark",
        epilog="config file keys:\n" + key_documentation(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **flags):
        p = sub.add_parser(name)
        for flag, kwargs in flags.items():
            p.add_argument(f"--{flag.replace('_', '-')}", **kwargs)
        p.set_defaults(fn=fn)
        return p

    add("gen-data", cmd_gen_data,
        config=dict(help="config file (defaults used when omitted)"),
        out=dict(required=True, help="output directory"),
        seed=dict(type=int, help="override the config seed"))
    add("train", cmd_train,
        config=dict(help="config file"),
        data=dict(required=True, help="directory with train/iid_test/ood_test containers"),
        out=dict(required=True, help="output directory"),
        seed=dict(type=int, help="override the config seed"))
    add("eval", cmd_eval,
        ckpt=dict(required=True, help="model checkpoint"),
        data=dict(required=True, help="dataset file or directory"))
    add("ablate", cmd_ablate,
        config=dict(help="config file"),
        data=dict(help="optional fixed dataset directory (otherwise per-seed regeneration)"),
        out=dict(required=True, help="output directory"),
        seed=dict(type=int, help="override the config seed"))
    add("gradcheck", cmd_gradcheck,
        seed=dict(type=int, help="seed for the toy model"))
    add("dump-mask", cmd_dump_mask,
        ckpt=dict(required=True, help="model checkpoint"),
        data=dict(required=True, help="dataset file"),
        instance=dict(type=int, required=True, help="instance index"),
        out=dict(help="output directory (default: current)"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
