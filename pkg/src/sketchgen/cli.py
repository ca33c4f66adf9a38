"""Command-line front door: train, evaluate, generate, serve.

Exit codes: 0 success; 2 validation problem (bad flags, malformed input
files, request invariants); 3 missing or unusable checkpoint.
"""

from __future__ import annotations

import argparse
import base64
import dataclasses
import json
import sys
from pathlib import Path


class CliError(Exception):
    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


def _validation(msg: str) -> CliError:
    return CliError(2, msg)


def _missing(msg: str) -> CliError:
    return CliError(3, msg)


# ---------------------------------------------------------------------------
# shared loading helpers


def _registry_from(path_arg: str | None):
    """A model registry from --ckpt (file or directory) or $DOODLE_CKPT_DIR."""
    import os

    from .checkpoint import CheckpointError, load_bundle
    from .service import ModelRegistry

    path = path_arg or os.environ.get("DOODLE_CKPT_DIR")
    if path is None:
        raise _missing("no checkpoint given (--ckpt or $DOODLE_CKPT_DIR)")
    p = Path(path)
    if p.is_file():
        try:
            bundle = load_bundle(p)
        except (CheckpointError, OSError) as exc:
            raise _missing(f"cannot load checkpoint {p}: {exc}") from exc
        return ModelRegistry(bundle.locator, bundle.sketcher, bundle.house)
    if p.is_dir():
        registry = ModelRegistry.from_dir(p)
        if not registry.modes():
            raise _missing(f"no usable checkpoint under {p}")
        return registry
    raise _missing(f"checkpoint path {p} does not exist")


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise _validation(f"{what} file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise _validation(f"{what} file {path} is not valid JSON: {exc}") \
            from exc


# ---------------------------------------------------------------------------
# train


def _model_cfg(stage: str, spec: dict | None):
    """Optional "model" section of the train config -> a sized config."""
    if spec is None:
        return None
    from .gat import GatConfig
    from .locator import LocatorConfig
    from .sketcher import SketcherConfig

    spec = dict(spec)
    try:
        gat = GatConfig(**spec.pop("gat", {}))
        cls = LocatorConfig if stage == "PL" else SketcherConfig
        return cls(gat=gat, **spec)
    except (TypeError, ValueError) as exc:
        raise _validation(f"bad model config: {exc}") from exc


def cmd_train(args) -> int:
    from .sketch import SketchValidationError, load_sketches
    from .training import TrainConfig, train

    raw = _load_json(args.config, "config") if args.config else {}
    if args.stage:
        raw["stage"] = args.stage.upper()
    dataset_size = int(raw.pop("dataset_size", 32))
    model_spec = raw.pop("model", None)
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise _validation(f"unknown config keys: {sorted(unknown)}")
    try:
        config = TrainConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise _validation(f"bad train config: {exc}") from exc
    model_cfg = _model_cfg(config.stage, model_spec)

    if args.data:
        from .sketch import boxes_from_annotations
        try:
            sketches = load_sketches(args.data)
        except FileNotFoundError as exc:
            raise _validation(f"data file {args.data} does not exist") from exc
        except (json.JSONDecodeError, SketchValidationError, KeyError) as exc:
            raise _validation(f"bad data file {args.data}: {exc}") from exc
        n_parts = model_cfg.n_parts if model_cfg is not None else 6
        try:
            dataset = [(sk, boxes_from_annotations(sk, n_parts), 0)
                       for sk in sketches]
        except SketchValidationError as exc:
            raise _validation(f"bad data file {args.data}: {exc}") from exc
    else:
        from .fixtures import synth_dataset
        dataset = synth_dataset(dataset_size, seed=config.seed)

    locator = None
    if config.stage == "PS" and args.locator:
        locator = _registry_from(args.locator).locator
        if locator is None:
            raise _missing(f"{args.locator} holds no locator stage")
    if config.stage == "PS" and locator is None and not args.resume:
        raise _validation("PS stage needs --locator or --resume")

    out = args.out or f"{config.stage.lower()}.ckpt"
    result = train(config, dataset, model_cfg=model_cfg, checkpoint_path=out,
                   locator=locator, resume=args.resume,
                   log_every=args.log_every)
    last = result.losses[-1]
    loss_key = "total" if "total" in last else "d"
    print(f"stage {config.stage}: {config.steps} steps, "
          f"final loss {last[loss_key]:.4f} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args) -> int:
    from .metrics import evaluate, train_extractor
    from .sketch import SketchValidationError

    registry = _registry_from(args.ckpt)
    if registry.locator is None or registry.sketcher is None:
        raise _missing("evaluation needs a checkpoint with both stages")
    from .checkpoint import Bundle
    bundle = Bundle(locator=registry.locator, sketcher=registry.sketcher,
                    critics=None, tensors={}, config={}, meta={})
    extractor = train_extractor(seed=args.seed)
    try:
        report = evaluate(bundle, extractor, n_samples=args.n,
                          seed=args.seed, temperature=args.temperature)
    except (ValueError, SketchValidationError) as exc:
        raise _validation(str(exc)) from exc
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"metrics -> {args.out}")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------
# generate


def _request_payload(args) -> dict:
    from .sketch import SketchValidationError, load_sketches, sketch_to_record

    body: dict = {"mode": args.mode, "seed": args.seed,
                  "temperature": args.temperature, "n_samples": args.n}
    if args.mode in ("strokes", "complete"):
        if not args.strokes:
            raise _validation(f"mode {args.mode} needs --strokes")
        try:
            sketches = load_sketches(args.strokes)
        except FileNotFoundError as exc:
            raise _validation(
                f"strokes file {args.strokes} does not exist") from exc
        except (json.JSONDecodeError, SketchValidationError,
                KeyError) as exc:
            raise _validation(
                f"bad strokes file {args.strokes}: {exc}") from exc
        if len(sketches) != 1:
            raise _validation(
                f"{args.strokes} holds {len(sketches)} sketches, need 1")
        rec = sketch_to_record(sketches[0])
        body["strokes"] = {"strokes": rec["strokes"], "labels": rec["labels"]}
    elif args.mode == "text":
        if not args.text:
            raise _validation("mode text needs --text")
        body["text"] = args.text
    else:
        if not args.diagram:
            raise _validation("mode house needs --diagram")
        body["diagram"] = _load_json(args.diagram, "diagram")
    return body


def cmd_generate(args) -> int:
    from fastapi import HTTPException

    from .house import BubbleDiagram
    from .service import (GenerateRequest, _check_request, _run_complete,
                          _run_house, _run_strokes, _run_text)
    from .sketch import SketchValidationError

    registry = _registry_from(args.ckpt)
    if args.mode not in registry.modes():
        raise _missing(f"checkpoint provides no mode {args.mode!r} "
                       f"(available: {registry.modes()})")
    body = _request_payload(args)
    req = GenerateRequest(**body)
    try:
        _check_request(req, args.mode)
        if args.mode == "strokes":
            samples = _run_strokes(registry, req.strokes.to_sketch(), req)
        elif args.mode == "complete":
            samples = _run_complete(registry, req.strokes.to_sketch(), req)
        elif args.mode == "text":
            samples = _run_text(registry, req)
        else:
            samples = _run_house(
                registry, BubbleDiagram.from_json(body["diagram"]), req)
    except (SketchValidationError, ValueError) as exc:
        raise _validation(str(exc)) from exc
    except HTTPException as exc:
        raise _validation(str(exc.detail)) from exc

    out = Path(args.out)
    if out.suffix == ".png" and args.n == 1:
        paths = [out]
        out.parent.mkdir(parents=True, exist_ok=True)
    else:
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"sample_{i}.png" for i in range(args.n)]
    for i, (sample, png_path) in enumerate(zip(samples, paths)):
        png_path.write_bytes(base64.b64decode(sample["image_png"]))
        layout_path = png_path.with_suffix("").with_suffix(".layout.json")
        layout_path.write_text(
            json.dumps(sample["layout"], indent=2) + "\n", encoding="utf-8")
        if "floor_plan_svg" in sample:
            png_path.with_suffix(".svg").write_text(
                sample["floor_plan_svg"] + "\n", encoding="utf-8")
        print(f"wrote {png_path} + {layout_path}")
    return 0


# ---------------------------------------------------------------------------
# serve


def cmd_serve(args) -> int:
    from .service import serve

    serve(args.ckpt_dir, host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchgen",
        description="Two-stage part-based sketch and room-layout generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model stage")
    p.add_argument("--stage", choices=["pl", "ps"],
                   help="which stage to train (overrides the config file)")
    p.add_argument("--config", help="JSON file of training settings")
    p.add_argument("--data", help="ndjson sketch file (default: synthetic)")
    p.add_argument("--locator", help="checkpoint with the layout stage "
                                     "(needed for --stage ps)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=512, help="samples to score")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="sample images from a checkpoint")
    p.add_argument("--mode", choices=["strokes", "text", "complete", "house"],
                   default="strokes")
    p.add_argument("--ckpt", help="checkpoint file or directory "
                                  "(default: $DOODLE_CKPT_DIR)")
    p.add_argument("--strokes", help="ndjson file with one sketch")
    p.add_argument("--text", help="caption for text mode")
    p.add_argument("--diagram", help="JSON bubble diagram for house mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--n", type=int, default=1, help="samples to generate")
    p.add_argument("--out", default="out",
                   help="output directory (or single .png when --n 1)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--ckpt-dir", help="default: $DOODLE_CKPT_DIR")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
