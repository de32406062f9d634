"""
Training: optimizer state, single steps and the epoch loop.

One step is a full forward pass in train mode, the hybrid contrastive loss, a
backward pass through every parameter and an Adam update under a step-decayed
learning rate. The loop shuffles with a seeded generator, logs each step and
epoch as tab-separated lines, monitors query->item R@1 on a held-out split via
hard-code search, and writes the checkpoint.
"""

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, TextIO, Union

import numpy as np
import torch
from torch.optim.lr_scheduler import StepLR

from .checkpoint import write_checkpoint
from .config import EngineConfig, TrainerConfig
from .errors import NonFiniteLossError
from .features import PairedDataset
from .ghostvlad import TRAIN
from .index import encode_database
from .metrics import evaluate
from .models import StepResult, TokenBag, TrainOutcome, level_names
from .objective import hybrid_loss
from .params import HybridQuantModel, init_parameters

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """Adam moments plus the step-decay schedule."""
    optimizer: torch.optim.Adam
    scheduler: StepLR
    step: int = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]


def init_optimizer(model: HybridQuantModel) -> OptimizerState:
    config = model.config
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    scheduler = StepLR(optimizer, step_size=config.lr_decay_every_steps, gamma=config.lr_decay_factor)
    return OptimizerState(optimizer=optimizer, scheduler=scheduler)


def train_step(
    queries: Sequence[TokenBag],
    items: Sequence[TokenBag],
    model: HybridQuantModel,
    state: OptimizerState,
    grad_clip: float = 0.0,
) -> StepResult:
    """
    One optimizer step on a batch of matched pairs.

    Raises:
        NonFiniteLossError: If any level loss is NaN or infinite; no
            parameter is touched in that case.
    """
    model.train()
    state.optimizer.zero_grad(set_to_none=True)
    total, breakdown = hybrid_loss(queries, items, model, mode=TRAIN)

    level_losses = breakdown.as_floats()
    for name, value in level_losses.items():
        if not math.isfinite(value):
            raise NonFiniteLossError(name, value)
    loss = float(total.detach())
    if not math.isfinite(loss):
        raise NonFiniteLossError("total", loss)

    total.backward()
    if grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)

    lr = state.lr
    state.optimizer.step()
    state.scheduler.step()
    state.step += 1
    return StepResult(step=state.step, lr=lr, loss=loss, level_losses=level_losses)


def batch_order(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled positions split into ceil(n / batch_size) batches."""
    order = rng.permutation(n)
    return [order[start:start + batch_size] for start in range(0, n, batch_size)]


def validation_r1(model: HybridQuantModel, val_set: PairedDataset) -> Optional[float]:
    """Query->item R@1 on held-out pairs via hard-code search."""
    if len(val_set) == 0:
        return None
    index = encode_database(val_set.items, model)
    return evaluate(val_set.queries, index, model).r1


class TrainingLog:
    """Tab-separated training log: step lines and epoch lines."""

    def __init__(self, stream: Optional[TextIO], names: list[str]):
        self.stream = stream
        self.names = names
        self.lines: list[str] = []
        self._emit("\t".join(["step", "lr", "total", *names]))

    def _emit(self, line: str) -> None:
        self.lines.append(line)
        if self.stream is not None:
            self.stream.write(line + "\n")
            self.stream.flush()

    def step(self, result: StepResult) -> None:
        parts = [str(result.step), f"{result.lr:.6g}", f"{result.loss:.6f}"]
        parts += [
            f"{result.level_losses[name]:.6f}" if name in result.level_losses else "-"
            for name in self.names
        ]
        self._emit("\t".join(parts))

    def epoch(self, epoch: int, step: int, mean_loss: float, val_r1: Optional[float]) -> None:
        r1 = "-" if val_r1 is None else f"{val_r1:.2f}"
        self._emit(f"epoch\t{epoch}\tstep={step}\tloss={mean_loss:.6f}\tval_r1={r1}")


@dataclass
class TrainResult:
    """Trained model and the loop's bookkeeping."""
    model: HybridQuantModel
    outcome: TrainOutcome
    steps: list[StepResult] = field(default_factory=list)
    log_lines: list[str] = field(default_factory=list)


def train_loop(
    dataset: PairedDataset,
    engine: EngineConfig,
    trainer: Optional[TrainerConfig] = None,
    checkpoint_path: Optional[Union[str, Path]] = None,
    log_path: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """
    Train a model from scratch on matched pairs.

    Everything random derives from engine.seed (parameters, split, shuffling),
    so identical inputs give a byte-identical checkpoint. With a validation
    split the checkpoint holds the parameters of the best epoch by R@1.

    Raises:
        ValueError: If the dataset is empty.
        NonFiniteLossError: If a step diverges.
        OSError: If the log or checkpoint cannot be written.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    trainer = (trainer or TrainerConfig()).validate()
    train_set, val_set = dataset.split(trainer.val_fraction, engine.seed, trainer.val_max_pairs)
    logger.info(f"Training on {len(train_set)} pairs, validating on {len(val_set)}")

    model = init_parameters(engine)
    state = init_optimizer(model)
    rng = np.random.default_rng(engine.seed)
    stream = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        log = TrainingLog(stream, level_names(engine.L))
        history: list[StepResult] = []
        best_r1: Optional[float] = None
        best_state: Optional[dict] = None
        stale_epochs = 0
        epochs_run = 0

        for epoch in range(1, trainer.max_epochs + 1):
            epoch_losses = []
            for batch in batch_order(len(train_set), engine.batch_size, rng):
                result = train_step(
                    [train_set.queries[i] for i in batch],
                    [train_set.items[i] for i in batch],
                    model,
                    state,
                    trainer.grad_clip,
                )
                history.append(result)
                epoch_losses.append(result.loss)
                if result.step % trainer.log_every_steps == 0:
                    log.step(result)
                if trainer.max_steps and state.step >= trainer.max_steps:
                    break
            epochs_run = epoch

            val_r1 = validation_r1(model, val_set)
            log.epoch(epoch, state.step, float(np.mean(epoch_losses)), val_r1)
            logger.info(f"Epoch {epoch}: loss={np.mean(epoch_losses):.4f} val_r1={val_r1}")

            if val_r1 is not None and (best_r1 is None or val_r1 > best_r1):
                best_r1 = val_r1
                best_state = copy.deepcopy(model.state_dict())
                stale_epochs = 0
            elif val_r1 is not None:
                stale_epochs += 1

            if checkpoint_path and epoch % trainer.checkpoint_every_epochs == 0:
                write_checkpoint(model, checkpoint_path)
            if trainer.max_steps and state.step >= trainer.max_steps:
                break
            if trainer.patience and stale_epochs >= trainer.patience:
                logger.info(f"Early stopping after epoch {epoch}")
                break
    finally:
        if stream is not None:
            stream.close()

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    if checkpoint_path:
        write_checkpoint(model, checkpoint_path)

    outcome = TrainOutcome(
        checkpoint_path=str(checkpoint_path or ""),
        steps=state.step,
        epochs=epochs_run,
        final_loss=history[-1].loss,
        best_val_r1=best_r1,
    )
    return TrainResult(model=model, outcome=outcome, steps=history, log_lines=log.lines)
