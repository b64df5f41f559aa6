"""Command-line entry point: ``rtimplant <subcommand> [flags]``.

Every flag can also come from a JSON file passed with ``--config``; keys use the
flag names (``hide-weight`` or ``hide_weight``). Flags given on the command
line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, imagecore, implant, inpaintnet, synthtrain

DEFAULTS = {
    "epsilon": 6 / 255,
    "iters": 20,
    "hide_weight": 2.0,
    "kernel": 7,
    "fraction": 0.5,
    "repeats": 4,
    "seed": 0,
    "target": "pure_color",
    "count": 200,
    "size": 64,
    "epochs": 30,
    "batch_size": 8,
    "lr": 2e-3,
    "width": 1,
    "format": "both",
    "bounds": list(harness.PAPER_BOUNDS),
}


def _add_protection_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, help="l-inf bound (default 6/255)")
    p.add_argument("--iters", type=int, help="optimisation iterations (default 20)")
    p.add_argument("--hide-weight", type=float, help="weight of the hide loss (default 2)")
    p.add_argument("--kernel", type=int, help="odd dilation kernel side (default 7)")
    p.add_argument("--fraction", type=float, help="kept fraction of the incomplete trigger (default 0.5)")
    p.add_argument("--target", choices=implant.TARGET_MODES, help="backdoor target (default pure_color)")
    p.add_argument("--trigger", help="trigger mask PNG (default: centred square, side/4)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtimplant", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file with flag values")
        p.add_argument("--seed", type=int)
        return p

    p = cmd("synth", "write a dataset manifest (and optionally the scene PNGs)")
    p.add_argument("--out", required=False, help="output directory")
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--png", action="store_true", help="also render scenes to PNG")

    p = cmd("train", "train the inpainting model on a manifest")
    p.add_argument("--dataset")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--width", type=int)

    p = cmd("protect", "optimise protective noise for one image")
    p.add_argument("--model")
    p.add_argument("--image")
    p.add_argument("--out", help="protected PNG; a .delta sidecar is written next to it")
    _add_protection_flags(p)

    p = cmd("edit", "inpaint an image under a mask")
    p.add_argument("--model")
    p.add_argument("--image")
    p.add_argument("--mask")
    p.add_argument("--delta", help="apply this .delta sidecar to the image first")
    p.add_argument("--out")

    for name, help_ in (("eval", "scenario grid: Trigger / Incomplete / Without x Ben / Imp"),
                        ("ablate-loss", "loss-term ablation"),
                        ("ablate-bound", "perturbation-bound ablation")):
        p = cmd(name, help_)
        p.add_argument("--model")
        p.add_argument("--dataset")
        p.add_argument("--out", help="output directory for report files")
        p.add_argument("--repeats", type=int)
        p.add_argument("--format", choices=("csv", "json", "both"))
        _add_protection_flags(p)
        if name == "ablate-bound":
            p.add_argument("--bounds", type=float, nargs="+", help="l-inf bounds to sweep")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < command-line flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text())
        opts.update({k.replace("-", "_"): v for k, v in cfg.items()})
    opts.update({k: v for k, v in vars(args).items() if v is not None and v is not False})
    return opts


def _require(opts: dict, *names: str) -> None:
    missing = [n for n in names if not opts.get(n)]
    if missing:
        raise SystemExit(f"missing required option(s): {', '.join('--' + n.replace('_', '-') for n in missing)}")


def _run_config(opts: dict) -> harness.RunConfig:
    return harness.RunConfig(
        dataset=opts.get("dataset"), model=opts.get("model"), epsilon=opts["epsilon"],
        iterations=opts["iters"], hide_weight=opts["hide_weight"], kernel_side=opts["kernel"],
        fraction=opts["fraction"], target_mode=opts["target"], repeats=opts["repeats"],
        seed=opts["seed"], out=opts.get("out"),
    )


def _write_reports(report: harness.Report, opts: dict, stem: str) -> None:
    out = Path(opts["out"])
    fmts = ("csv", "json") if opts["format"] == "both" else (opts["format"],)
    for fmt in fmts:
        path = harness.emit_report(report, fmt, out / f"{stem}.{fmt}")
        print(f"wrote {path}")
    print(harness.format_table(report))


def _trigger(opts: dict, x: np.ndarray) -> np.ndarray:
    if opts.get("trigger"):
        return imagecore.check_mask(imagecore.load_mask(opts["trigger"]), like=x)
    return imagecore.centered_square(x.shape[-1], x.shape[-1] // 4)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    opts = resolve(args)
    command = opts["command"]

    if command == "synth":
        _require(opts, "out")
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        manifest = synthtrain.make_manifest(opts["count"], opts["seed"], opts["size"])
        synthtrain.write_manifest(manifest, out / "manifest.json")
        if opts.get("png"):
            for i, spec in enumerate(synthtrain.scene_specs(manifest)):
                imagecore.save_image(synthtrain.generate_scene(spec), out / f"scene_{i:04d}.png")
        print(f"wrote {out / 'manifest.json'} ({opts['count']} scenes)")

    elif command == "train":
        _require(opts, "dataset", "out")
        scenes = synthtrain.load_dataset(synthtrain.read_manifest(opts["dataset"]))
        cfg = synthtrain.TrainConfig(epochs=opts["epochs"], batch_size=opts["batch_size"],
                                     learning_rate=opts["lr"], seed=opts["seed"])
        model = inpaintnet.init_model(opts["seed"], opts["width"])
        result = synthtrain.train(model, scenes, cfg)
        imagecore.ensure_path(opts["out"])
        inpaintnet.save_model(result.model, opts["out"])
        print(json.dumps({"checkpoint": opts["out"], "loss_trace": result.loss_trace}))

    elif command == "protect":
        _require(opts, "model", "image", "out")
        model = inpaintnet.load_model(opts["model"])
        x = imagecore.load_image(opts["image"])
        spec = implant.ProtectionSpec(
            trigger=_trigger(opts, x), epsilon=opts["epsilon"], iterations=opts["iters"],
            hide_weight=opts["hide_weight"], kernel_side=opts["kernel"], fraction=opts["fraction"],
            target_mode=opts["target"], seed=opts["seed"])
        result = implant.optimize(model, x, spec)
        out = imagecore.ensure_path(opts["out"])
        imagecore.save_image(implant.apply(x, result.perturbation), out)
        implant.save_delta(result.perturbation.delta, implant.delta_path(out))
        last = result.trace[-1] if result.trace else None
        print(json.dumps({"protected": str(out), "delta": str(implant.delta_path(out)),
                          "final_loss": None if last is None else last.__dict__}))

    elif command == "edit":
        _require(opts, "model", "image", "mask", "out")
        model = inpaintnet.load_model(opts["model"])
        x = imagecore.load_image(opts["image"])
        if opts.get("delta"):
            x = implant.apply(x, implant.Perturbation(implant.load_delta(opts["delta"]), 1.0))
        m = imagecore.check_mask(imagecore.load_mask(opts["mask"]), like=x)
        imagecore.save_image(inpaintnet.predict(model, x, m), imagecore.ensure_path(opts["out"]))
        print(f"wrote {opts['out']}")

    else:
        _require(opts, "model", "dataset", "out")
        cfg = _run_config(opts)
        if command == "eval":
            _write_reports(harness.run_protection_eval(cfg), opts, "protection")
        elif command == "ablate-loss":
            _write_reports(harness.ablate_losses(cfg), opts, "loss_ablation")
        else:
            report = harness.ablate_bounds(cfg, opts["bounds"])
            _write_reports(report, opts, "bound_ablation")
            print(json.dumps({"trigger_ssim_drop": report.meta["trigger_ssim_drop"],
                              "plateau": report.meta.get("plateau")}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
