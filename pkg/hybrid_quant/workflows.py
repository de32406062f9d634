"""
Temporal workflow for the train -> encode -> evaluate pipeline.

Stages run as activities with the default retry policy; the workflow records
one run-metrics line per stage (and one on failure) and exposes its progress
through the get_state query.
"""

import dataclasses
from datetime import datetime, timedelta
from pathlib import PurePath
from typing import Optional

from temporalio import workflow
from temporalio.common import RetryPolicy

with workflow.unsafe.imports_passed_through():
    from .activities import (
        encode_activity,
        evaluate_activity,
        record_run_metrics,
        train_activity,
    )
    from .constants import (
        ENCODE_TIMEOUT_SECONDS,
        EVALUATE_TIMEOUT_SECONDS,
        METRICS_TIMEOUT_SECONDS,
        RETRY_BACKOFF_COEFFICIENT,
        RETRY_INITIAL_INTERVAL_SECONDS,
        RETRY_MAX_ATTEMPTS,
        RETRY_MAX_INTERVAL_SECONDS,
        TRAIN_TIMEOUT_SECONDS,
    )
    from .models import (
        EncodeRequest,
        EvaluateRequest,
        PipelineRequest,
        PipelineState,
        RunMetrics,
        TrainRequest,
    )


# Default retry policy for activities
DEFAULT_RETRY_POLICY = RetryPolicy(
    initial_interval=timedelta(seconds=RETRY_INITIAL_INTERVAL_SECONDS),
    backoff_coefficient=RETRY_BACKOFF_COEFFICIENT,
    maximum_attempts=RETRY_MAX_ATTEMPTS,
    maximum_interval=timedelta(seconds=RETRY_MAX_INTERVAL_SECONDS),
)

# Artifact names inside the pipeline workdir
CHECKPOINT_NAME = "model.ckpt"
CODE_FILE_NAME = "items.codes"
TRAIN_LOG_NAME = "train.tsv"


@workflow.defn
class TrainEncodeEvalWorkflow:
    """Train a model, encode the item database, and evaluate both directions."""

    def __init__(self):
        self._state = PipelineState()

    @workflow.query
    def get_state(self) -> dict:
        """Query current workflow state."""
        return dataclasses.asdict(self._state)

    async def _record(
        self, stage: str, started: datetime, details: dict, error: Optional[str] = None
    ) -> None:
        elapsed = workflow.now() - started
        await workflow.execute_activity(
            record_run_metrics,
            args=[RunMetrics(
                stage=stage,
                duration_ms=int(elapsed.total_seconds() * 1000),
                details=details,
                error=error,
                timestamp=workflow.now().isoformat(),
            )],
            start_to_close_timeout=timedelta(seconds=METRICS_TIMEOUT_SECONDS),
            retry_policy=DEFAULT_RETRY_POLICY,
        )

    async def _train(self, request: PipelineRequest) -> None:
        self._state.current_stage = "train"
        started = workflow.now()
        workdir = PurePath(request.workdir)
        outcome = await workflow.execute_activity(
            train_activity,
            args=[TrainRequest(
                query_features=request.query_features,
                item_features=request.item_features,
                checkpoint_path=str(workdir / CHECKPOINT_NAME),
                config_path=request.config_path,
                preset=request.preset,
                log_path=str(workdir / TRAIN_LOG_NAME),
                seed=request.seed,
            )],
            start_to_close_timeout=timedelta(seconds=TRAIN_TIMEOUT_SECONDS),
            retry_policy=DEFAULT_RETRY_POLICY,
        )
        self._state.checkpoint_path = outcome.checkpoint_path
        await self._record("train", started, {
            "steps": outcome.steps,
            "epochs": outcome.epochs,
            "final_loss": outcome.final_loss,
            "best_val_r1": outcome.best_val_r1,
        })

    async def _encode(self, request: PipelineRequest) -> None:
        self._state.current_stage = "encode"
        started = workflow.now()
        outcome = await workflow.execute_activity(
            encode_activity,
            args=[EncodeRequest(
                checkpoint_path=self._state.checkpoint_path,
                item_features=request.item_features,
                code_path=str(PurePath(request.workdir) / CODE_FILE_NAME),
            )],
            start_to_close_timeout=timedelta(seconds=ENCODE_TIMEOUT_SECONDS),
            retry_policy=DEFAULT_RETRY_POLICY,
        )
        self._state.code_path = outcome.code_path
        await self._record("encode", started, {
            "items": outcome.items,
            "bytes_per_item": outcome.bytes_per_item,
        })

    async def _evaluate(self, request: PipelineRequest) -> None:
        self._state.current_stage = "evaluate"
        started = workflow.now()
        reports = await workflow.execute_activity(
            evaluate_activity,
            args=[EvaluateRequest(
                checkpoint_path=self._state.checkpoint_path,
                code_path=self._state.code_path,
                query_features=request.query_features,
                item_features=request.item_features,
                threads=request.threads,
            )],
            start_to_close_timeout=timedelta(seconds=EVALUATE_TIMEOUT_SECONDS),
            retry_policy=DEFAULT_RETRY_POLICY,
        )
        self._state.reports = reports
        await self._record("evaluate", started, {r["direction"]: r["r1"] for r in reports})

    @workflow.run
    async def run(self, request: PipelineRequest) -> dict:
        """
        Execute the full pipeline.

        Returns:
            Final workflow state as dict
        """
        started = workflow.now()
        try:
            await self._train(request)
            await self._encode(request)
            await self._evaluate(request)
            self._state.current_stage = "complete"
            workflow.logger.info("=== Pipeline Complete ===")
            return self.get_state()
        except Exception as e:
            await self._record(self._state.current_stage, started, {}, error=str(e))
            raise
