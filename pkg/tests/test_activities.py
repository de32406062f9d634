import asyncio
import json

import pytest
from temporalio.exceptions import ApplicationError
from temporalio.testing import ActivityEnvironment

from hybrid_quant.activities import encode_activity, evaluate_activity, record_run_metrics, train_activity
from hybrid_quant.models import EncodeRequest, EvaluateRequest, RunMetrics, TrainRequest
from hybrid_quant.synthetic import SyntheticSpec, write_synthetic


def run_activity(fn, *args):
    return asyncio.run(ActivityEnvironment().run(fn, *args))


@pytest.fixture
def synthetic_files(tmp_path):
    queries, items = tmp_path / "queries.feat", tmp_path / "items.feat"
    write_synthetic(SyntheticSpec(pair_count=24, seed=3), queries, items)
    config = tmp_path / "desk.cfg"
    config.write_text("preset=desk\nbatch_size=8\nmax_epochs=1\nval_fraction=0.25\n")
    return queries, items, config


def test_train_encode_evaluate(tmp_path, synthetic_files):
    queries, items, config = synthetic_files
    checkpoint = tmp_path / "model.ckpt"
    trained = run_activity(train_activity, TrainRequest(
        query_features=str(queries),
        item_features=str(items),
        checkpoint_path=str(checkpoint),
        config_path=str(config),
        log_path=str(tmp_path / "train.tsv"),
        seed=1,
    ))
    assert trained.steps == 3
    assert trained.epochs == 1
    assert checkpoint.is_file()
    assert (tmp_path / "train.tsv").read_text().startswith("step\tlr\ttotal")

    codes = tmp_path / "items.codes"
    encoded = run_activity(encode_activity, EncodeRequest(str(checkpoint), str(items), str(codes)))
    assert encoded.items == 24
    assert encoded.bytes_per_item == 3 * 8 * 4 // 8

    reports = run_activity(evaluate_activity, EvaluateRequest(
        checkpoint_path=str(checkpoint),
        code_path=str(codes),
        query_features=str(queries),
        item_features=str(items),
    ))
    assert [r["direction"] for r in reports] == ["query->item", "item->query"]
    assert all(0.0 <= r["r1"] <= 100.0 and r["num_queries"] == 24 for r in reports)


def test_missing_input_is_not_retried(tmp_path):
    request = TrainRequest(str(tmp_path / "q.feat"), str(tmp_path / "i.feat"), str(tmp_path / "m.ckpt"))
    with pytest.raises(ApplicationError) as excinfo:
        run_activity(train_activity, request)
    assert excinfo.value.non_retryable
    assert "does not exist" in str(excinfo.value)


def test_engine_errors_become_typed_application_errors(tmp_path, synthetic_files):
    queries, items, _ = synthetic_files
    config = tmp_path / "bad.cfg"
    config.write_text("preset=desk\nwarmup=3\n")
    request = TrainRequest(str(queries), str(items), str(tmp_path / "m.ckpt"), config_path=str(config))
    with pytest.raises(ApplicationError) as excinfo:
        run_activity(train_activity, request)
    assert excinfo.value.type == "ConfigError"
    assert excinfo.value.non_retryable


def test_run_metrics_are_appended_as_json_lines(tmp_path, monkeypatch):
    metrics_file = tmp_path / "runs" / "metrics.jsonl"
    monkeypatch.setenv("HYBRID_QUANT_RUN_METRICS", str(metrics_file))
    run_activity(record_run_metrics, RunMetrics(stage="train", duration_ms=12, details={"steps": 3}))
    run_activity(record_run_metrics, RunMetrics(stage="encode", error="boom"))

    records = [json.loads(line) for line in metrics_file.read_text().splitlines()]
    assert [r["stage"] for r in records] == ["train", "encode"]
    assert records[0]["details"] == {"steps": 3}
    assert records[1]["error"] == "boom"


def test_unwritable_metrics_file_is_tolerated(tmp_path, monkeypatch):
    blocker = tmp_path / "file"
    blocker.write_text("")
    monkeypatch.setenv("HYBRID_QUANT_RUN_METRICS", str(blocker / "metrics.jsonl"))
    run_activity(record_run_metrics, RunMetrics(stage="train"))
