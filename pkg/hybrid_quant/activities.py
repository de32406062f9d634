"""
Temporal activities for the train -> encode -> evaluate pipeline.

Each activity wraps one engine operation. CPU-bound work runs in a worker
thread; engine errors are raised as non-retryable ApplicationErrors.
"""

import asyncio
import functools
import json
import time
from pathlib import Path
from typing import Any, Callable, TypeVar

import aiofiles
from temporalio import activity
from temporalio.exceptions import ApplicationError

from .checkpoint import read_checkpoint
from .config import get_config, load_engine_config
from .errors import HybridQuantError
from .features import load_paired, read_feature_file
from .index import encode_database, read_code_file, write_code_file
from .metrics import evaluate_pairs
from .models import (
    EncodeOutcome,
    EncodeRequest,
    EvaluateRequest,
    RunMetrics,
    TrainOutcome,
    TrainRequest,
    View,
)
from .trainer import train_loop

T = TypeVar("T")


def _validate_path(path: str) -> Path:
    """
    Validate that an input file exists.

    Raises:
        ApplicationError: Non-retryable, if the path does not exist.
    """
    p = Path(path)
    if not p.exists():
        raise ApplicationError(f"Path does not exist: {path}", non_retryable=True)
    return p


async def _run_engine(fn: Callable[..., T], *args: Any, **kwargs: Any) -> T:
    """Run a blocking engine call in a thread, mapping engine errors to ApplicationError."""
    try:
        return await asyncio.to_thread(functools.partial(fn, *args, **kwargs))
    except (HybridQuantError, ValueError) as e:
        activity.logger.error(f"Failed: {e}")
        raise ApplicationError(str(e), type=type(e).__name__, non_retryable=True) from e


def _train(params: TrainRequest) -> TrainOutcome:
    overrides = {"seed": params.seed} if params.seed is not None else None
    engine, trainer = load_engine_config(params.config_path, preset=params.preset, overrides=overrides)
    dataset = load_paired(params.query_features, params.item_features)
    result = train_loop(dataset, engine, trainer, params.checkpoint_path, params.log_path)
    return result.outcome


@activity.defn
async def train_activity(params: TrainRequest) -> TrainOutcome:
    """Train a model on paired feature files and write its checkpoint."""
    activity.logger.info(f"Training from {params.query_features} / {params.item_features}")
    _validate_path(params.query_features)
    _validate_path(params.item_features)

    start_time = time.time()
    outcome = await _run_engine(_train, params)
    duration_ms = int((time.time() - start_time) * 1000)

    activity.logger.info(f"Completed {outcome.steps} steps in {duration_ms}ms")
    activity.logger.info(f"Final loss: {outcome.final_loss:.4f}, best val R@1: {outcome.best_val_r1}")
    return outcome


def _encode(params: EncodeRequest) -> EncodeOutcome:
    model = read_checkpoint(params.checkpoint_path)
    features = read_feature_file(params.item_features)
    index = encode_database(features.bags, model)
    write_code_file(index, params.code_path)
    return EncodeOutcome(code_path=params.code_path, items=len(index), bytes_per_item=index.bytes_per_item)


@activity.defn
async def encode_activity(params: EncodeRequest) -> EncodeOutcome:
    """Hard-encode an item feature file into a code file."""
    activity.logger.info(f"Encoding {params.item_features} with {params.checkpoint_path}")
    _validate_path(params.checkpoint_path)
    _validate_path(params.item_features)

    outcome = await _run_engine(_encode, params)
    activity.logger.info(f"Encoded {outcome.items} items at {outcome.bytes_per_item} bytes each")
    return outcome


def _evaluate(params: EvaluateRequest) -> list[dict]:
    model = read_checkpoint(params.checkpoint_path)
    dataset = load_paired(params.query_features, params.item_features)
    item_index = read_code_file(params.code_path, model)
    if item_index.view is not View.ITEM:
        raise HybridQuantError(f"{params.code_path} does not hold item codes")
    reports = evaluate_pairs(dataset, model, params.threads, item_index=item_index)
    return [report.to_dict() for report in reports]


@activity.defn
async def evaluate_activity(params: EvaluateRequest) -> list[dict]:
    """Evaluate both retrieval directions; returns EvalReport dicts."""
    activity.logger.info(f"Evaluating {params.checkpoint_path} against {params.code_path}")
    for path in (params.checkpoint_path, params.code_path, params.query_features, params.item_features):
        _validate_path(path)

    reports = await _run_engine(_evaluate, params)
    for report in reports:
        activity.logger.info(f"{report['direction']}: R@1={report['r1']:.2f} MdR={report['median_rank']}")
    return reports


@activity.defn
async def record_run_metrics(data: RunMetrics) -> None:
    """
    Append one JSON line per pipeline stage to the run-metrics file.

    Failures to write are logged, never raised.
    """
    config = get_config()
    metrics = {
        "stage": data.stage,
        "duration_ms": data.duration_ms,
        "details": data.details,
        "error": data.error,
        "timestamp": data.timestamp,
    }
    activity.logger.info(f"Capturing metrics: {metrics}")

    try:
        metrics_path = Path(config.run_metrics_file)
        metrics_path.parent.mkdir(parents=True, exist_ok=True)
        async with aiofiles.open(metrics_path, "a") as f:
            await f.write(json.dumps(metrics) + "\n")
        activity.logger.info("Metrics captured")
    except Exception as e:
        activity.logger.warning(f"Failed to write metrics: {e}")
