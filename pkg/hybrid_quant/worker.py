"""
Temporal worker for the hybrid-quant pipeline.

Run this in a separate terminal to process pipeline workflows.

Usage:
    python -m hybrid_quant.worker
"""

import asyncio
import logging

from temporalio.client import Client
from temporalio.worker import Worker

from .activities import encode_activity, evaluate_activity, record_run_metrics, train_activity
from .config import get_config
from .workflows import TrainEncodeEvalWorkflow

logger = logging.getLogger(__name__)


def build_worker(client: Client, task_queue: str) -> Worker:
    """Worker hosting the pipeline workflow and its activities."""
    return Worker(
        client,
        task_queue=task_queue,
        workflows=[TrainEncodeEvalWorkflow],
        activities=[train_activity, encode_activity, evaluate_activity, record_run_metrics],
    )


async def run_worker():
    """Start the Temporal worker."""
    config = get_config()
    logger.info(f"Connecting to: {config.temporal.address}")

    try:
        client = await Client.connect(
            config.temporal.address,
            namespace=config.temporal.namespace,
        )
        logger.info(f"Connected to Temporal at {config.temporal.address}")

        worker = build_worker(client, config.temporal.task_queue)
        logger.info(f"Worker listening on task queue: {config.temporal.task_queue}")

        # Blocks until shutdown
        await worker.run()

    except Exception as e:
        logger.error(f"Worker failed: {e}")
        raise


def main():
    """Entry point for the worker."""
    logging.basicConfig(level=get_config().log_level)
    try:
        asyncio.run(run_worker())
    except KeyboardInterrupt:
        logger.info("Worker stopped by user")


if __name__ == "__main__":
    main()
