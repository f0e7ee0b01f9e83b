"""Command-line entry point.

Exit codes: 0 success, 1 contract/usage error, 2 I/O or client failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ClientFailure, ContractError

EXIT_OK, EXIT_CONTRACT, EXIT_IO = 0, 1, 2

USAGE = """\
usage: visexpert <command> [options]

commands:
  train        --config F --data D --out CKPT [--init CKPT]
  infer        --ckpt CKPT (--image I | --video M) --prompt P [--max-tokens N]
  gradcheck    [--module NAME]
  tqa-generate --manifests DIR --client (mock:FILE | http:URL) --out F --max-concurrency K
  eval         --pred F --gold F --kind (choice|exact)
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="visexpert", usage=USAGE, add_help=True)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--init")

    i = sub.add_parser("infer")
    i.add_argument("--ckpt", required=True)
    src = i.add_mutually_exclusive_group(required=True)
    src.add_argument("--image")
    src.add_argument("--video")
    i.add_argument("--prompt", required=True)
    i.add_argument("--max-tokens", type=int, default=32)

    g = sub.add_parser("gradcheck")
    g.add_argument("--module")

    q = sub.add_parser("tqa-generate")
    q.add_argument("--manifests", required=True)
    q.add_argument("--client", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--max-concurrency", type=int, default=4)
    q.add_argument("--frames", type=int, default=24)

    e = sub.add_parser("eval")
    e.add_argument("--pred", required=True)
    e.add_argument("--gold", required=True)
    e.add_argument("--kind", required=True, choices=("choice", "exact"))
    return p


def _model_config(spec: dict | None):
    from .decoder import DecoderConfig
    from .model import ModelConfig
    from .vision import VitConfig

    if not spec:
        return ModelConfig()
    kwargs = {}
    if "vit" in spec:
        kwargs["vit"] = VitConfig(**spec["vit"])
    if "decoder" in spec:
        kwargs["decoder"] = DecoderConfig(**spec["decoder"])
    for key in ("adapter_hidden", "video"):
        if key in spec:
            kwargs[key] = spec[key]
    return ModelConfig(**kwargs)


def cmd_train(args, out) -> int:
    from .model import VLModel
    from .trainer import StageConfig, format_trace, load_dataset, run_stage

    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    model_spec = raw.pop("model", None)
    stage = StageConfig.from_json(raw)
    if args.init:
        model = VLModel.load(args.init)
    else:
        try:
            model = VLModel.init(_model_config(model_spec), seed=stage.seed)
        except TypeError as exc:
            raise ContractError(f"bad model config: {exc}") from None
    result = run_stage(model, load_dataset(args.data), stage)
    Path(args.out).write_bytes(result.checkpoint)
    trace_path = Path(str(args.out) + ".loss.csv")
    trace_path.write_text(format_trace(result.trace), encoding="utf-8")
    out.write(f"steps {len(result.trace)} final_loss {result.final_loss:.6f}\n")
    return EXIT_OK


def cmd_infer(args, out) -> int:
    from .model import VLModel
    from .vision import read_cgimg

    model = VLModel.load(args.ckpt)
    image = read_cgimg(args.image) if args.image else None
    text = model.generate(args.prompt, image=image, video=args.video, max_tokens=args.max_tokens)
    out.write(text + "\n")
    return EXIT_OK


def cmd_gradcheck(args, out) -> int:
    from . import gradsuite

    modules = None
    if args.module:
        if args.module not in gradsuite.CASES:
            raise ContractError(f"unknown module {args.module!r}; have {', '.join(gradsuite.CASES)}")
        modules = [args.module]
    results = gradsuite.run(modules)
    out.write(gradsuite.report(results))
    return EXIT_OK if all(e < gradsuite.TOLERANCE for e in results.values()) else EXIT_CONTRACT


def cmd_tqa(args, out) -> int:
    from .tqa import client_from_spec, run_pipeline

    try:
        client = client_from_spec(args.client)
    except ValueError as exc:
        raise ContractError(str(exc)) from None
    if not Path(args.manifests).is_dir():
        raise FileNotFoundError(f"manifest directory {args.manifests} not found")
    summary = run_pipeline(args.manifests, client, client, args.out,
                           max_concurrency=args.max_concurrency, n_frames=args.frames)
    out.write(summary.to_json() + "\n")
    return EXIT_OK


def cmd_eval(args, out) -> int:
    from .evaluate import evaluate, format_metrics, load_records

    out.write(format_metrics(evaluate(load_records(args.pred, args.gold, args.kind))))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "infer": cmd_infer, "gradcheck": cmd_gradcheck,
            "tqa-generate": cmd_tqa, "eval": cmd_eval}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as exc:
        err.write(f"error: {exc}\n{USAGE}")
        return EXIT_CONTRACT
    if args.command is None:
        err.write(USAGE)
        return EXIT_CONTRACT
    try:
        return COMMANDS[args.command](args, out)
    except ContractError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_CONTRACT
    except (ClientFailure, OSError, json.JSONDecodeError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
