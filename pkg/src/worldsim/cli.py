"""Command-line entry point.

Subcommands: generate-data, train-tokenizer, tokenize, train-world-model,
train-decoder, rollout, scaling-study, fit-scaling-law, selfcheck, serve.
Exit status: 0 success, 1 validation/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .config import ConfigError, PipelineConfig, parse_config


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        raise UsageError(message)


def _load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return parse_config(path)


def _add_config_arg(sub):
    sub.add_argument("--config", default=None, help="pipeline config JSON")


def build_parser() -> _Parser:
    parser = _Parser(prog="worldsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate-data", help="generate the episode corpus")
    _add_config_arg(gen)

    tok = sub.add_parser("train-tokenizer", help="train the image tokenizer")
    _add_config_arg(tok)
    tok.add_argument("--dataset", default=None, help="override dataset directory")

    enc = sub.add_parser("tokenize", help="encode a dataset to token grids")
    enc.add_argument("--checkpoint", required=True)
    enc.add_argument("--dataset", required=True)
    enc.add_argument("--out", required=True)
    enc.add_argument("--subsample", type=int, default=1)

    wm = sub.add_parser("train-world-model", help="train the world model")
    _add_config_arg(wm)
    wm.add_argument("--tokenizer", default=None, help="tokenizer checkpoint path")

    dec = sub.add_parser("train-decoder", help="train the video decoder")
    _add_config_arg(dec)
    dec.add_argument("--tokenizer", default=None, help="tokenizer checkpoint path")

    roll = sub.add_parser("rollout", help="generate and decode a rollout")
    _add_config_arg(roll)
    roll.add_argument("--world-model", required=True)
    roll.add_argument("--decoder", default=None)
    roll.add_argument("--tokenizer", default=None)
    roll.add_argument("--context", default="none", help="episode directory or 'none'")
    roll.add_argument("--horizon", type=int, default=None)
    roll.add_argument("--prompt", default=None)
    roll.add_argument("--negative-prompt", default=None)
    roll.add_argument("--actions", default="none", help="JSON actions file or 'none'")
    roll.add_argument("--k", type=int, default=None)
    roll.add_argument("--seed", type=int, default=None)
    roll.add_argument("--out", required=True)
    roll.add_argument("--no-decode", action="store_true",
                      help="skip video decoding, write tokens only")

    scal = sub.add_parser("scaling-study", help="train the size family and fit the law")
    _add_config_arg(scal)

    fit = sub.add_parser("fit-scaling-law", help="fit records produced by scaling-study")
    fit.add_argument("--records", required=True)
    fit.add_argument("--out", default=None)
    fit.add_argument("--ema-decay", type=float, default=None,
                     help="smooth each loss curve before taking the final value")

    sub.add_parser("selfcheck", help="run the fast invariant suite")

    srv = sub.add_parser("serve", help="start the HTTP service")
    _add_config_arg(srv)
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)

    return parser


# ------------------------------------------------------------- handlers

def _cmd_generate_data(args) -> int:
    from .pipeline import stage_generate_data

    paths = stage_generate_data(_load_config(args.config))
    print(f"train dataset: {paths['train']}")
    print(f"val dataset:   {paths['val']}")
    return 0


def _cmd_train_tokenizer(args) -> int:
    from .pipeline import stage_train_tokenizer

    path = stage_train_tokenizer(
        _load_config(args.config),
        dataset_dir=None if args.dataset is None else Path(args.dataset),
    )
    print(f"tokenizer checkpoint: {path}")
    return 0


def _cmd_tokenize(args) -> int:
    from .pipeline import stage_tokenize

    written = stage_tokenize(Path(args.checkpoint), Path(args.dataset),
                             Path(args.out), subsample=args.subsample)
    print(f"wrote {len(written)} token tensors to {args.out}")
    return 0


def _cmd_train_world_model(args) -> int:
    from .pipeline import stage_train_world_model

    path = stage_train_world_model(
        _load_config(args.config),
        tokenizer_path=None if args.tokenizer is None else Path(args.tokenizer),
    )
    print(f"world model checkpoint: {path}")
    return 0


def _cmd_train_decoder(args) -> int:
    from .pipeline import stage_train_decoder

    path = stage_train_decoder(
        _load_config(args.config),
        tokenizer_path=None if args.tokenizer is None else Path(args.tokenizer),
    )
    print(f"decoder checkpoint: {path}")
    return 0


def _cmd_rollout(args) -> int:
    from .pipeline import stage_rollout

    result = stage_rollout(
        _load_config(args.config),
        out_dir=Path(args.out),
        world_model_path=Path(args.world_model),
        decoder_path=None if args.decoder is None else Path(args.decoder),
        tokenizer_path=None if args.tokenizer is None else Path(args.tokenizer),
        context_episode=None if args.context == "none" else Path(args.context),
        horizon=args.horizon,
        prompt=args.prompt,
        negative_prompt=args.negative_prompt,
        actions_file=None if args.actions == "none" else Path(args.actions),
        k=args.k,
        seed=args.seed,
        decode=not args.no_decode,
    )
    print(f"rollout written to {result['out_dir']}")
    return 0


def _cmd_scaling_study(args) -> int:
    from .pipeline import stage_scaling_study

    result = stage_scaling_study(_load_config(args.config))
    print(f"records: {result['records']}")
    print(f"fit:     {result['fit']}")
    report = result["report"]
    if "predicted_loss" in report:
        print(
            f"held-out {report['held_out']}: predicted {report['predicted_loss']:.4f} "
            f"actual {report['actual_loss']:.4f} "
            f"(relative error {report['relative_error']:.1%})"
        )
    return 0


def _cmd_fit_scaling_law(args) -> int:
    from .scaling import ema_smooth, fit_power_law, load_records, save_fit_report

    records = [r for r in load_records(Path(args.records)) if not r.failed]
    points = []
    for record in records:
        final = record.final_loss
        if args.ema_decay is not None and record.curve:
            final = float(ema_smooth([v for _, v in record.curve], args.ema_decay)[-1])
        points.append((record.compute, final))
    fit = fit_power_law(points)
    print(f"f(x) = {fit.c:.4f} + (x / {fit.a:.4g})^{fit.b:.4f}   rmse {fit.residual:.2e}")
    if args.out:
        save_fit_report(Path(args.out), fit, {"records": str(args.records)})
        print(f"report: {args.out}")
    return 0


def _cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    start = time.time()
    results = run_selfcheck()
    failed = [name for name, ok, detail in results if not ok]
    for name, ok, detail in results:
        mark = "ok  " if ok else "FAIL"
        print(f"{mark} {name}{'' if ok else ': ' + detail}")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed "
          f"in {time.time() - start:.1f}s")
    return 0 if not failed else 2


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    app = create_app(_load_config(args.config))
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


_HANDLERS = {
    "generate-data": _cmd_generate_data,
    "train-tokenizer": _cmd_train_tokenizer,
    "tokenize": _cmd_tokenize,
    "train-world-model": _cmd_train_world_model,
    "train-decoder": _cmd_train_decoder,
    "rollout": _cmd_rollout,
    "scaling-study": _cmd_scaling_study,
    "fit-scaling-law": _cmd_fit_scaling_law,
    "selfcheck": _cmd_selfcheck,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary: report and exit 2
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
