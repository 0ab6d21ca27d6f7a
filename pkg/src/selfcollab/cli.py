"""Command line entry point.

    selfcollab prepare-data --config C --out DIR
    selfcollab train        --config C --out DIR [--dry-run]
    selfcollab run-sc       --config C --out DIR [--resume DIR]
    selfcollab evaluate     --checkpoint P --config C
    selfcollab ablate       --variant V1..V5|all --config C --out DIR
    selfcollab plot         --run DIR --out FILE

Relative output paths land under $SELFCOLLAB_OUTPUT_ROOT when it is set.
Exit status: 0 success, 1 bad config or data, 2 usage error, 3 training diverged.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, parse_config, resolve_output, write_effective
from .data import CorpusError, save_png

log = logging.getLogger("selfcollab")

EXIT_OK, EXIT_CONFIG, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


def _config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else parse_config(None)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    return resolve_output(args.out or cfg.output_dir)


def cmd_prepare_data(args) -> int:
    from .trainer import RunData

    cfg = _config(args)
    out = _out_dir(args, cfg)
    data = RunData.from_config(cfg)
    write_effective(cfg, out)
    data.corpus.write_manifest(out / "corpus.json")
    for sub, images, ids in (("clean", data.corpus.clean_set, data.corpus.clean_ids),
                             ("noisy", data.corpus.noisy_set, data.corpus.noisy_ids)):
        (out / sub).mkdir(parents=True, exist_ok=True)
        for img, i in zip(images, ids):
            save_png(img, out / sub / f"{i:04d}.png")
    val = out / "validation"
    val.mkdir(parents=True, exist_ok=True)
    for p in data.val_pairs:
        save_png(p.noisy, val / f"{p.source_id:04d}_noisy.png")
        save_png(p.clean, val / f"{p.source_id:04d}_clean.png")
    noisy = data.noisy_baseline()
    print(f"corpus: {len(data.corpus.clean_set)} clean / {len(data.corpus.noisy_set)} noisy / "
          f"{len(data.val_pairs)} validation -> {out}")
    print(f"noisy input PSNR {noisy.psnr_val:.2f} dB  SSIM {noisy.ssim_val:.4f}")
    return EXIT_OK


def _report(result) -> int:
    for h in result.history:
        psnr = "n/a" if h["psnr_val"] is None else f"{h['psnr_val']:.3f}"
        delta = "" if h["delta_psnr"] is None else f"  delta {h['delta_psnr']:+.3f}"
        print(f"k={h['k']} stage={h['stage']} best PSNR {psnr} dB{delta}  [{h['status']}]")
    return EXIT_OK if result.status == "ok" else EXIT_DIVERGED


def cmd_train(args) -> int:
    from .trainer import PhaseTrainer, RunData, build_models, run_sc

    cfg = _config(args).with_overrides(schedule={"max_iterations": 1})
    if args.dry_run:
        data = RunData.from_config(cfg)
        trainer = PhaseTrainer(build_models(cfg), data.stream(cfg, 0), data.val_pairs, cfg)
        losses = trainer.train_step(trainer.stream.batch_at(0))
        print("dry run ok: " + "  ".join(f"{k}={v:.4g}" for k, v in losses.items()))
        return EXIT_OK
    out = _out_dir(args, cfg)
    return _report(run_sc(cfg, out))


def cmd_run_sc(args) -> int:
    from .trainer import run_sc

    if args.resume:
        out = resolve_output(args.resume)
        cfg = parse_config(args.config) if args.config else parse_config(out / "config.yaml")
        return _report(run_sc(cfg, out, resume=True))
    cfg = _config(args)
    return _report(run_sc(cfg, _out_dir(args, cfg)))


def cmd_evaluate(args) -> int:
    import torch

    from .trainer import RunData, evaluate, load_denoiser

    cfg = _config(args)
    dn = load_denoiser(args.checkpoint)
    data = RunData.from_config(cfg)
    rec = evaluate(dn, data.val_pairs, dtype=dn.dtype)
    noisy = data.noisy_baseline()
    print(f"PSNR {rec.psnr_val:.4f} dB  SSIM {rec.ssim_val:.4f}  "
          f"(noisy input {noisy.psnr_val:.4f} dB / {noisy.ssim_val:.4f}, {len(data.val_pairs)} pairs)")
    if args.samples:
        from .plotting import save_grid

        rows = []
        with torch.no_grad():
            for p in data.val_pairs[:4]:
                out = torch.clamp(dn(torch.as_tensor(p.noisy, dtype=dn.dtype)[None]), 0, 1)[0].double().numpy()
                rows.append([p.noisy, out, p.clean])
        print(f"samples -> {save_grid(rows, args.samples, ['noisy', 'denoised', 'clean'])}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .trainer import ABLATION_VARIANTS, RunData, ablation_table, run_ablation

    cfg = _config(args)
    out = _out_dir(args, cfg)
    variants = list(ABLATION_VARIANTS) if args.variant == "all" else [args.variant]
    data = RunData.from_config(cfg)
    records = {}
    for v in variants:
        records[v] = run_ablation(v, cfg, steps=args.steps, data=data, out_dir=out / v)
        print(f"{v}: PSNR {records[v].psnr_val:.3f} dB  SSIM {records[v].ssim_val:.4f}  [{records[v].status}]")
    table = ablation_table(records)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.md").write_text(table)
    (out / "ablation.json").write_text(json.dumps({v: r.log_dict() for v, r in records.items()},
                                                  indent=2, sort_keys=True))
    print(table)
    return EXIT_OK if all(r.status == "ok" for r in records.values()) else EXIT_DIVERGED


def cmd_plot(args) -> int:
    from .plotting import plot_sc_curve
    from .trainer import RunDir, read_jsonl

    run = RunDir(resolve_output(args.run))
    history = read_jsonl(run.history)
    if not history:
        print(f"no iteration history in {run.root}", file=sys.stderr)
        return EXIT_CONFIG
    png, csv_path = plot_sc_curve(history, resolve_output(args.out))
    print(f"wrote {png} and {csv_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfcollab", description="Unsupervised real-noise denoising "
                                     "with parallel GAN branches and self-collaboration.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, fn, help_, out=True):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML config file (defaults when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if out:
            p.add_argument("--out", help="output directory (default: config output_dir)")
        p.set_defaults(func=fn)
        return p

    add("prepare-data", cmd_prepare_data, "build the unpaired corpus and write it as PNGs")
    p = add("train", cmd_train, "train the baseline (iteration 0) only")
    p.add_argument("--dry-run", action="store_true", help="build everything, run one step, write nothing")
    p = add("run-sc", cmd_run_sc, "baseline plus replace/boost iterations")
    p.add_argument("--resume", metavar="DIR", help="continue the run stored in DIR")
    p = add("evaluate", cmd_evaluate, "validation PSNR/SSIM of a saved denoiser", out=False)
    p.add_argument("--checkpoint", required=True, help="DN.json, its .pt file, or a checkpoint directory")
    p.add_argument("--samples", metavar="PNG", help="also save a noisy/denoised/clean grid")
    p = add("ablate", cmd_ablate, "train structural variants and tabulate them")
    p.add_argument("--variant", required=True, choices=["V1", "V2", "V3", "V4", "V5", "all"])
    p.add_argument("--steps", type=int, help="baseline steps per variant (default: schedule.baseline_steps)")
    p = sub.add_parser("plot", help="per-iteration PSNR curve of a run (PNG + CSV)")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CorpusError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
