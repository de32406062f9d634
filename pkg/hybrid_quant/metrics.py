"""
Retrieval quality and efficiency measurement.

R@N and median rank of the true counterpart under the deterministic
tie-break, evaluation in both directions, query latency benchmarking, and
report rendering (human-readable table plus key=value lines).
"""

import logging
import time
from typing import Optional, Sequence

import numpy as np
import torch

from .constants import DEFAULT_TOP_K, RECALL_CUTOFFS
from .features import PairedDataset
from .index import (
    CodeIndex,
    brute_force_scores,
    build_lookup,
    encode_database,
    item_reconstructions,
    level_embeddings,
    prepare_index,
    rank_scores,
    score_index,
)
from .models import BenchReport, EvalReport, TokenBag
from .params import HybridQuantModel

logger = logging.getLogger(__name__)


def _check_ranks(ranks: Sequence[float]) -> np.ndarray:
    array = np.asarray(ranks, dtype=np.float64)
    if array.size == 0:
        raise ValueError("no ranks to summarize")
    if (array < 1).any():
        raise ValueError("ranks are 1-based and must be >= 1")
    return array


def recall_at(ranks: Sequence[int], n: int) -> float:
    """Percentage of queries whose true counterpart ranks within the top n."""
    array = _check_ranks(ranks)
    return 100.0 * float((array <= n).sum()) / array.size


def median_rank(ranks: Sequence[int]) -> float:
    """Middle rank; mean of the two middle ranks for even counts."""
    return float(np.median(_check_ranks(ranks)))


def geometric_mean_recall(r1: float, r5: float, r10: float) -> float:
    return float((r1 * r5 * r10) ** (1.0 / 3.0))


def rank_of(scores: np.ndarray, ids: np.ndarray, target_id: int) -> int:
    """1-based rank of target_id under descending score, ties by ascending id."""
    positions = np.nonzero(ids == target_id)[0]
    if positions.size == 0:
        raise KeyError(f"id {target_id} is not in the database")
    target = scores[positions[0]]
    ahead = (scores > target) | ((scores == target) & (ids < target_id))
    return 1 + int(ahead.sum())


def report_from_ranks(direction: str, ranks: Sequence[int], **extra) -> EvalReport:
    r1, r5, r10, r50 = (recall_at(ranks, n) for n in RECALL_CUTOFFS)
    return EvalReport(
        direction=direction,
        r1=r1,
        r5=r5,
        r10=r10,
        r50=r50,
        median_rank=median_rank(ranks),
        geometric_mean=geometric_mean_recall(r1, r5, r10),
        num_queries=len(ranks),
        **extra,
    )


def evaluate(
    queries: Sequence[TokenBag],
    index: CodeIndex,
    model: HybridQuantModel,
    threads: int = 1,
) -> EvalReport:
    """
    Rank every query's counterpart (same id) in a compact-code index.

    The index holds the other view: items for query-to-item retrieval,
    queries for item-to-query retrieval.
    """
    if not queries:
        raise ValueError("no queries to evaluate")
    prepare_index(index, model)
    ranks = []
    start = time.perf_counter()
    for query in queries:
        table = build_lookup(query, model, index.codebooks)
        ranks.append(rank_of(score_index(table, index, threads), index.ids, query.id))
    elapsed = time.perf_counter() - start
    direction = f"{queries[0].view.value}->{index.view.value}"
    report = report_from_ranks(
        direction,
        ranks,
        mean_query_seconds=elapsed / len(queries),
        storage_bytes_per_item=index.bytes_per_item,
        threads=threads,
    )
    logger.info(f"{direction}: R@1={report.r1:.2f} MdR={report.median_rank:g}")
    return report


def evaluate_brute_force(
    queries: Sequence[TokenBag],
    items: Sequence[TokenBag],
    model: HybridQuantModel,
    bypass_quantization: bool = False,
) -> EvalReport:
    """Evaluation through explicit reconstructions (optionally the raw embeddings)."""
    if not queries:
        raise ValueError("no queries to evaluate")
    reconstructions = item_reconstructions(items, model, bypass_quantization)
    query_embeddings = level_embeddings(queries, model)
    ids = np.array([bag.id for bag in items], dtype=np.int64)
    ranks = [
        rank_of(brute_force_scores(embedding, reconstructions, model.config.levels), ids, query.id)
        for query, embedding in zip(queries, query_embeddings)
    ]
    suffix = " (raw)" if bypass_quantization else ""
    return report_from_ranks(f"{queries[0].view.value}->{items[0].view.value}{suffix}", ranks)


def evaluate_pairs(
    dataset: PairedDataset,
    model: HybridQuantModel,
    threads: int = 1,
    item_index: Optional[CodeIndex] = None,
) -> list[EvalReport]:
    """Reports for query->item and item->query retrieval over matched pairs."""
    if len(dataset) == 0:
        raise ValueError("no pairs to evaluate")
    item_index = item_index or encode_database(dataset.items, model)
    query_index = encode_database(dataset.queries, model)
    return [
        evaluate(dataset.queries, item_index, model, threads),
        evaluate(dataset.items, query_index, model, threads),
    ]


def bench_query_time(
    index: CodeIndex,
    queries: Sequence[TokenBag],
    model: HybridQuantModel,
    repetitions: int,
    threads: int = 1,
    k: int = DEFAULT_TOP_K,
) -> BenchReport:
    """
    Mean wall-clock time per query, after one warm-up pass.

    Each timed query takes the hybrid_search path. Encode time covers the
    stale-index check, the query frontend and table construction; scan time
    covers scoring and top-k selection.
    """
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    if not queries:
        raise ValueError("no queries to benchmark")
    prepare_index(index, model)

    previous_threads = torch.get_num_threads()
    torch.set_num_threads(threads)
    try:
        for query in queries:
            rank_scores(score_index(build_lookup(query, model, index.codebooks), index, threads), index.ids, k)

        encode_total = 0.0
        scan_total = 0.0
        for _ in range(repetitions):
            for query in queries:
                t0 = time.perf_counter()
                table = build_lookup(query, model, prepare_index(index, model).codebooks)
                t1 = time.perf_counter()
                rank_scores(score_index(table, index, threads), index.ids, k)
                t2 = time.perf_counter()
                encode_total += t1 - t0
                scan_total += t2 - t1
    finally:
        torch.set_num_threads(previous_threads)

    runs = repetitions * len(queries)
    report = BenchReport(
        mean_total_seconds=(encode_total + scan_total) / runs,
        mean_encode_seconds=encode_total / runs,
        mean_scan_seconds=scan_total / runs,
        repetitions=repetitions,
        num_queries=len(queries),
        database_size=len(index),
        storage_bytes_per_item=index.bytes_per_item,
        threads=threads,
    )
    logger.info(
        f"Benchmark: {len(index)} items, {report.mean_total_seconds * 1e3:.3f} ms/query "
        f"({report.mean_scan_seconds * 1e3:.3f} ms scan)"
    )
    return report


def report_lines(report) -> list[str]:
    """Machine-readable key=value lines for an EvalReport or BenchReport."""
    prefix = getattr(report, "direction", "bench")
    return [f"{prefix}.{key}={value}" for key, value in report.to_dict().items() if key != "direction"]


def format_eval_table(reports: Sequence[EvalReport]) -> str:
    """Human-readable table of evaluation reports."""
    header = f"{'direction':<20} {'R@1':>7} {'R@5':>7} {'R@10':>7} {'R@50':>7} {'MdR':>6} {'GM':>7}"
    rows = [header, "-" * len(header)]
    for r in reports:
        rows.append(
            f"{r.direction:<20} {r.r1:>7.2f} {r.r5:>7.2f} {r.r10:>7.2f} "
            f"{r.r50:>7.2f} {r.median_rank:>6g} {r.geometric_mean:>7.2f}"
        )
    return "\n".join(rows)


def format_bench(report: BenchReport) -> str:
    return "\n".join([
        f"database size:      {report.database_size}",
        f"queries x reps:     {report.num_queries} x {report.repetitions}",
        f"threads:            {report.threads}",
        f"mean query time:    {report.mean_total_seconds * 1e3:.3f} ms",
        f"  encode + tables:  {report.mean_encode_seconds * 1e3:.3f} ms",
        f"  scan + top-k:     {report.mean_scan_seconds * 1e3:.3f} ms",
        f"storage per item:   {report.storage_bytes_per_item} bytes",
        f"total code storage: {report.storage_bytes_per_item * report.database_size} bytes",
    ])
