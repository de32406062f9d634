"""
Command-line interface for the hybrid-quant engine.

Usage:
    python -m hybrid_quant.cli synth queries.feat items.feat --pairs 512 --seed 0
    python -m hybrid_quant.cli train queries.feat items.feat model.ckpt --config desk.cfg
    python -m hybrid_quant.cli encode model.ckpt items.feat items.codes
    python -m hybrid_quant.cli search model.ckpt items.codes queries.feat --k 10
    python -m hybrid_quant.cli eval model.ckpt items.codes queries.feat items.feat
    python -m hybrid_quant.cli bench model.ckpt items.codes queries.feat --reps 5 --dup-factor 100
    python -m hybrid_quant.cli posthoc raw.ckpt queries.feat items.feat --save posthoc.ckpt
    python -m hybrid_quant.cli pipeline queries.feat items.feat workdir/

Exit code 0 on success; otherwise a one-line "error: ..." on stderr and 1
(130 when interrupted).
"""

import argparse
import asyncio
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from temporalio.client import Client

from .checkpoint import read_checkpoint, write_checkpoint
from .config import get_config, load_engine_config
from .constants import (
    DEFAULT_BENCH_REPETITIONS,
    DEFAULT_CLI_PRESET,
    DEFAULT_TOP_K,
    POSTHOC_KMEANS_ITERATIONS,
    WORKFLOW_ID_PREFIX_PIPELINE,
)
from .errors import DimensionError
from .features import load_paired, read_feature_file
from .index import encode_database, hybrid_search, read_code_file, write_code_file
from .metrics import bench_query_time, evaluate_pairs, format_bench, format_eval_table, report_lines
from .models import PipelineRequest, View
from .posthoc import evaluate_post_compressed, post_compress
from .synthetic import SyntheticSpec, write_synthetic
from .trainer import train_loop
from .workflows import TrainEncodeEvalWorkflow

logger = logging.getLogger(__name__)


def cmd_train(args: argparse.Namespace) -> None:
    engine, trainer = load_engine_config(
        args.config, preset=args.preset or DEFAULT_CLI_PRESET, overrides={"seed": args.seed}
    )
    dataset = load_paired(args.queries, args.items)
    log_path = args.log or str(Path(args.checkpoint).with_suffix(".tsv"))
    result = train_loop(dataset, engine, trainer, args.checkpoint, log_path)
    outcome = result.outcome
    print(f"steps={outcome.steps}")
    print(f"epochs={outcome.epochs}")
    print(f"final_loss={outcome.final_loss:.6f}")
    print(f"best_val_r1={outcome.best_val_r1}")
    print(f"checkpoint={outcome.checkpoint_path}")


def cmd_encode(args: argparse.Namespace) -> None:
    model = read_checkpoint(args.checkpoint)
    index = encode_database(read_feature_file(args.items).bags, model)
    write_code_file(index, args.codes)
    print(f"items={len(index)}")
    print(f"bytes_per_item={index.bytes_per_item}")


def _load_search_inputs(args: argparse.Namespace):
    model = read_checkpoint(args.checkpoint)
    index = read_code_file(args.codes, model)
    queries = read_feature_file(args.queries)
    if queries.view is not index.view.other:
        raise DimensionError(
            f"{args.queries} holds {queries.view.value} bags but the index also holds "
            f"{index.view.value} codes"
        )
    return model, index, queries.bags


def cmd_search(args: argparse.Namespace) -> None:
    model, index, queries = _load_search_inputs(args)
    print("query\trank\tid\tscore")
    for query in queries:
        for hit in hybrid_search(query, index, model, args.k, args.threads):
            print(f"{query.id}\t{hit.rank}\t{hit.id}\t{hit.score:.6f}")


def cmd_eval(args: argparse.Namespace) -> None:
    model = read_checkpoint(args.checkpoint)
    dataset = load_paired(args.queries, args.items)
    item_index = read_code_file(args.codes, model)
    if item_index.view is not View.ITEM:
        raise DimensionError(f"{args.codes} holds {item_index.view.value} codes, eval needs item codes")
    reports = evaluate_pairs(dataset, model, args.threads, item_index=item_index)
    print(format_eval_table(reports))
    print()
    for report in reports:
        print("\n".join(report_lines(report)))


def cmd_bench(args: argparse.Namespace) -> None:
    model, index, queries = _load_search_inputs(args)
    if args.dup_factor > 1:
        index = index.duplicate(args.dup_factor)
    report = bench_query_time(index, queries, model, args.reps, args.threads, args.k)
    print(format_bench(report))
    print()
    print("\n".join(report_lines(report)))


def cmd_posthoc(args: argparse.Namespace) -> None:
    model = read_checkpoint(args.checkpoint)
    dataset = load_paired(args.queries, args.items)
    compressed = post_compress(model, dataset, args.iterations)
    if args.save:
        write_checkpoint(compressed, args.save)
    reports = evaluate_post_compressed(dataset, compressed, args.threads)
    print(format_eval_table(reports))
    print()
    for report in reports:
        print("\n".join(report_lines(report)))


def cmd_synth(args: argparse.Namespace) -> None:
    engine, _ = load_engine_config(args.config, preset=args.preset or DEFAULT_CLI_PRESET)
    spec = SyntheticSpec(
        pair_count=args.pairs,
        latent_dim=args.latent_dim,
        noise=args.noise,
        seed=args.seed if args.seed is not None else 0,
        Dt=engine.Dt,
        D=engine.D,
        N_E=engine.N_E,
    )
    write_synthetic(spec, args.queries, args.items)
    print(f"pairs={spec.pair_count}")


def generate_workflow_id(prefix: str) -> str:
    """Generate a unique workflow ID with timestamp."""
    return f"{prefix}-{int(time.time() * 1000)}"


async def run_pipeline(request: PipelineRequest) -> dict:
    """Submit the pipeline workflow and wait for its final state."""
    config = get_config()
    client = await Client.connect(config.temporal.address, namespace=config.temporal.namespace)
    handle = await client.start_workflow(
        TrainEncodeEvalWorkflow.run,
        args=[request],
        id=generate_workflow_id(WORKFLOW_ID_PREFIX_PIPELINE),
        task_queue=config.temporal.task_queue,
    )
    logger.info(
        f"View in Temporal UI: {config.temporal.ui_base_url}/namespaces/"
        f"{config.temporal.namespace}/workflows/{handle.id}"
    )
    return await handle.result()


def cmd_pipeline(args: argparse.Namespace) -> None:
    request = PipelineRequest(
        query_features=str(Path(args.queries).resolve()),
        item_features=str(Path(args.items).resolve()),
        workdir=str(Path(args.workdir).resolve()),
        config_path=str(Path(args.config).resolve()) if args.config else None,
        preset=args.preset or DEFAULT_CLI_PRESET,
        seed=args.seed,
        threads=args.threads,
    )
    state = asyncio.run(run_pipeline(request))
    print(f"checkpoint={state['checkpoint_path']}")
    print(f"codes={state['code_path']}")
    for report in state["reports"]:
        direction = report["direction"]
        print("\n".join(f"{direction}.{k}={v}" for k, v in report.items() if k != "direction"))


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value engine/trainer config file")
    common.add_argument(
        "--preset", help=f"engine preset: msrvtt, lsmdc, activitynet or desk (default {DEFAULT_CLI_PRESET})"
    )
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads for item scanning")
    common.add_argument("--k", type=int, default=DEFAULT_TOP_K, help="results per query")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="hybrid-quant",
        description="Hybrid-grained quantized cross-view retrieval",
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    train = subparsers.add_parser("train", parents=[common], help="train a model")
    train.add_argument("queries", help="query feature file")
    train.add_argument("items", help="item feature file")
    train.add_argument("checkpoint", help="output checkpoint")
    train.add_argument("--log", help="training log (default: checkpoint path with .tsv)")
    train.set_defaults(func=cmd_train)

    encode = subparsers.add_parser("encode", parents=[common], help="encode a database")
    encode.add_argument("checkpoint")
    encode.add_argument("items", help="feature file to encode")
    encode.add_argument("codes", help="output code file")
    encode.set_defaults(func=cmd_encode)

    search = subparsers.add_parser("search", parents=[common], help="top-k search")
    search.add_argument("checkpoint")
    search.add_argument("codes")
    search.add_argument("queries", help="feature file of the other view")
    search.set_defaults(func=cmd_search)

    evaluate = subparsers.add_parser("eval", parents=[common], help="evaluate both directions")
    evaluate.add_argument("checkpoint")
    evaluate.add_argument("codes", help="item code file")
    evaluate.add_argument("queries")
    evaluate.add_argument("items")
    evaluate.set_defaults(func=cmd_eval)

    bench = subparsers.add_parser("bench", parents=[common], help="benchmark query time")
    bench.add_argument("checkpoint")
    bench.add_argument("codes")
    bench.add_argument("queries")
    bench.add_argument("--reps", type=int, default=DEFAULT_BENCH_REPETITIONS)
    bench.add_argument("--dup-factor", type=int, default=1, help="tile the database this many times")
    bench.set_defaults(func=cmd_bench)

    posthoc = subparsers.add_parser(
        "posthoc", parents=[common], help="evaluate k-means PQ fitted after training"
    )
    posthoc.add_argument("checkpoint", help="model to compress, normally trained with quantized_keys=false")
    posthoc.add_argument("queries")
    posthoc.add_argument("items")
    posthoc.add_argument("--iterations", type=int, default=POSTHOC_KMEANS_ITERATIONS, help="k-means iterations")
    posthoc.add_argument("--save", help="write the post-compressed model as a checkpoint")
    posthoc.set_defaults(func=cmd_posthoc)

    synth = subparsers.add_parser("synth", parents=[common], help="generate synthetic pairs")
    synth.add_argument("queries", help="output query feature file")
    synth.add_argument("items", help="output item feature file")
    synth.add_argument("--pairs", type=int, default=SyntheticSpec.pair_count)
    synth.add_argument("--latent-dim", type=int, default=SyntheticSpec.latent_dim)
    synth.add_argument("--noise", type=float, default=SyntheticSpec.noise)
    synth.set_defaults(func=cmd_synth)

    pipeline = subparsers.add_parser("pipeline", parents=[common], help="run train/encode/eval on Temporal")
    pipeline.add_argument("queries")
    pipeline.add_argument("items")
    pipeline.add_argument("workdir", help="directory for the checkpoint, code file and log")
    pipeline.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point; returns the exit code."""
    parser = create_parser()
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        return 1

    runtime = get_config()
    logging.basicConfig(level=logging.DEBUG if args.verbose else runtime.log_level)
    if args.threads is None:
        args.threads = runtime.threads

    try:
        if args.threads < 1:
            raise ValueError(f"--threads must be >= 1, got {args.threads}")
        args.func(args)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        message = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"error: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
