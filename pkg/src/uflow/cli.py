"""Command-line pipeline: synth, train, index, search, eval, serve.

Every command is a thin shell over the library; failures exit nonzero with
a single machine-parseable JSON line on stderr.  Exit codes: 0 ok, 2 usage,
3 data/format, 4 numeric failure, 5 I/O.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import dataio, evalkit, retrieval, training
from .errors import UflowError, UsageError
from .pooler import PoolerConfig, checkpoint_id, load_checkpoint
from .report import (
    render_loss_curve,
    render_recall_chart,
    write_train_report_csv,
    write_train_report_jsonl,
)

CONFIG_ENV = "UFLOW_CONFIG"


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


def cmd_synth(args) -> int:
    config = dataio.SynthConfig(
        n_archetypes=args.archetypes,
        n_episodes=args.episodes,
        noise_sigma=args.noise,
        seed=args.seed,
        min_len=args.min_len,
        max_len=args.max_len,
    )
    dataset = dataio.synth_dataset(config)
    dataio.write_dataset(dataset, args.out)
    _print_json(
        {
            "out": str(args.out),
            "episodes": len(dataset),
            "archetypes": args.archetypes,
            "seed": args.seed,
        }
    )
    return 0


def cmd_train(args) -> int:
    dataset = dataio.read_dataset(args.data)
    pooler_config = PoolerConfig(max_len=args.max_len)
    train_config = training.TrainConfig(
        lr=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        temperature=args.temp,
        train_fraction=args.train_fraction,
        seed=args.seed,
    )
    out = Path(args.out)
    result = training.train(dataset, pooler_config, train_config, checkpoint_path=out)

    stem = out.with_suffix("")
    report_path = stem.with_name(stem.name + ".report.jsonl")
    csv_path = stem.with_name(stem.name + ".losses.csv")
    figure_path = stem.with_name(stem.name + ".loss.png")
    write_train_report_jsonl(result.records, report_path)
    write_train_report_csv(result.records, csv_path)
    render_loss_curve(result.records, figure_path)

    last = result.records[-1]
    _print_json(
        {
            "checkpoint": str(result.checkpoint_path),
            "best_checkpoint": str(result.best_checkpoint_path),
            "best_epoch": result.best_epoch,
            "epochs": len(result.records),
            "n_train": result.n_train,
            "n_val": result.n_val,
            "n_dropped": result.n_dropped,
            "final_train_loss": last.train_loss,
            "final_val_loss": last.val_loss,
            "report": str(report_path),
            "losses_csv": str(csv_path),
            "loss_figure": str(figure_path),
        }
    )
    return 0


def cmd_index(args) -> int:
    params = load_checkpoint(args.model)
    dataset = dataio.read_dataset(args.data)
    index = retrieval.build_index(
        params, dataset, model_id=checkpoint_id(args.model)
    )
    retrieval.save_index(index, args.out)
    _print_json({"out": str(args.out), "episodes": len(index), "dim": index.dim})
    return 0


def _search_result(args, index):
    if args.text is not None:
        dataset = dataio.read_dataset(args.data) if args.data else None
        embedder = retrieval.get_embedder(
            args.embedder, url=args.provider_url, dataset=dataset
        )
        return retrieval.search_by_text(index, args.text, embedder, k=args.k)
    if args.episode is None:
        raise UsageError("search needs either --text or --episode")
    if args.model and args.data:
        params = load_checkpoint(args.model)
        dataset = dataio.read_dataset(args.data)
        episode = dataset.by_id(args.episode)
        return retrieval.search_by_sequence(index, params, episode, k=args.k)
    try:
        row = index.row_of(args.episode)
    except KeyError:
        raise UsageError(
            f"episode {args.episode!r} is not in the index; pass --model and "
            f"--data to pool an out-of-index episode"
        ) from None
    return retrieval.search(index, index.matrix[row], args.k)


def cmd_search(args) -> int:
    index = retrieval.load_index(args.index)
    result = _search_result(args, index)
    print("rank\tid\tscore\tdescription")
    for entry in result.entries:
        meta = index.metadata.get(entry.episode_id)
        description = meta.description if meta else ""
        print(f"{entry.rank}\t{entry.episode_id}\t{entry.score:.6f}\t{description}")
    return 0


def cmd_eval(args) -> int:
    params = load_checkpoint(args.model)
    dataset = dataio.read_dataset(args.data)
    ks = [int(s) for s in args.k.split(",") if s.strip()]
    spec = evalkit.EvalSpec(
        ks=ks,
        protocol=args.protocol,
        relevance=args.relevance,
        train_fraction=args.train_fraction,
    )
    report = evalkit.evaluate(
        params, dataset, spec, checkpoint_id=checkpoint_id(args.model)
    )
    if args.figures:
        render_recall_chart(report, Path(args.figures) / "recall.png")
    _print_json(report)
    return 0


def resolve_serve_config(args):
    """Service config resolution: flags override the config file, which is
    either --config or the path named by $UFLOW_CONFIG."""
    from .service import ServiceConfig

    config_path = args.config or os.environ.get(CONFIG_ENV)
    overrides = {
        "port": args.port,
        "index_path": args.index,
        "checkpoint_path": args.checkpoint,
        "embedder": args.embedder,
        "provider_url": args.provider_url,
        "dataset_path": args.data,
        "thumbnail_root": args.thumbnail_root,
        "static_root": args.static_root,
        "cors": args.cors or None,
    }
    if config_path:
        return ServiceConfig.from_file(config_path, **overrides)
    clean = {k: v for k, v in overrides.items() if v is not None}
    if "index_path" not in clean:
        raise UsageError("serve needs --index or a config file")
    return ServiceConfig(**clean)


def cmd_serve(args) -> int:
    from .service import create_app

    config = resolve_serve_config(args)
    app = create_app(config)

    import uvicorn

    uvicorn.run(app, host="127.0.0.1", port=config.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uflow",
        description="Screen-sequence embedding, training, and user-flow retrieval",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--archetypes", type=int, required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the pooling head on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--temp", type=float, default=0.07)
    p.add_argument("--train-fraction", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("index", help="build a retrieval index from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="query an index by text or by episode")
    p.add_argument("--index", required=True)
    p.add_argument("--text")
    p.add_argument("--episode")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("-k", type=int, default=10)
    p.add_argument(
        "--embedder", choices=["toy", "precomputed", "http"], default="toy"
    )
    p.add_argument("--provider-url")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="retrieval-quality report for a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--protocol", choices=list(evalkit.PROTOCOLS), required=True)
    p.add_argument("--relevance", choices=list(evalkit.RELEVANCES), required=True)
    p.add_argument("-k", default="1,5,10")
    p.add_argument("--train-fraction", type=float, default=0.9)
    p.add_argument("--figures", help="directory for rendered charts")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP retrieval service")
    p.add_argument("--config", help=f"JSON config (default: ${CONFIG_ENV})")
    p.add_argument("--port", type=int)
    p.add_argument("--index")
    p.add_argument("--checkpoint")
    p.add_argument("--embedder", choices=["toy", "precomputed", "http"])
    p.add_argument("--provider-url")
    p.add_argument("--data")
    p.add_argument("--thumbnail-root")
    p.add_argument("--static-root")
    p.add_argument("--cors", action="append")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UflowError as exc:
        print(
            json.dumps({"error": {"code": exc.code, "message": str(exc)}}),
            file=sys.stderr,
        )
        return exc.exit_code
    except OSError as exc:
        print(
            json.dumps({"error": {"code": "io", "message": str(exc)}}),
            file=sys.stderr,
        )
        return 5


if __name__ == "__main__":
    sys.exit(main())
