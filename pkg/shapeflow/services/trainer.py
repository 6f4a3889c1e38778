"""
Training Loop
=============
Sequential Adam training of the deformation model over prepared pairs.

Per step: sample t per pair, evaluate the objective for every pair of the
batch, average, back-propagate once and update. The learning rate is held
for the first `anneal_start` fraction of steps and then cosine-annealed to
`lr_floor * lr`.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import pandas as pd
import torch

from core.errors import ConfigError, DivergedError

from ..models.config import TrainConfig, validated
from ..models.results import LOSS_TERMS, LossBreakdown
from ..utils import get_logger, settings
from .checkpoint import Checkpoint, capture, load_parameters, restore_optimizer
from .dataset import as_prepared
from .network import DeformationModel, PreparedPair, check_compatible, pair_loss
from .synthetic import SyntheticPair

PairLike = Union[SyntheticPair, PreparedPair]

log = get_logger("trainer")


class HoldCosineLRScheduler:
    """
    Constant learning rate for `hold_steps`, then cosine decay to `min_lr`
    at `max_steps`.
    """

    def __init__(self, optimizer, max_steps: int, hold_steps: int, init_lr: float, min_lr: float = 0.0):
        self.optimizer = optimizer
        self.max_steps = max_steps
        self.hold_steps = hold_steps
        self.init_lr = init_lr
        self.min_lr = min_lr
        self.current_step = 0

    def step(self):
        """Advance one optimizer step and update the learning rate."""
        self.current_step += 1
        self._apply()

    def _apply(self):
        lr = self._get_lr()
        for param_group in self.optimizer.param_groups:
            param_group["lr"] = lr

    def _get_lr(self) -> float:
        if self.current_step <= self.hold_steps:
            return self.init_lr
        progress = (self.current_step - self.hold_steps) / max(1, self.max_steps - self.hold_steps)
        progress = min(progress, 1.0)
        return self.min_lr + (self.init_lr - self.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))

    @property
    def current_lr(self) -> float:
        return self._get_lr()

    def resume_at(self, step: int):
        self.current_step = int(step)
        self._apply()

    def state_dict(self) -> dict:
        return {
            "current_step": self.current_step,
            "max_steps": self.max_steps,
            "hold_steps": self.hold_steps,
            "init_lr": self.init_lr,
            "min_lr": self.min_lr,
        }

    def load_state_dict(self, state_dict: dict):
        self.current_step = state_dict["current_step"]
        self.max_steps = state_dict["max_steps"]
        self.hold_steps = state_dict["hold_steps"]
        self.init_lr = state_dict["init_lr"]
        self.min_lr = state_dict["min_lr"]
        self._apply()


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: DeformationModel
    history: pd.DataFrame


# =============================================================================
# HELPERS
# =============================================================================

def _prepare(pairs: Sequence[PairLike], config: TrainConfig) -> List[PreparedPair]:
    out = as_prepared(pairs, config)
    for p in out:
        check_compatible(config, p)
    return out


def _epoch_generator(seed: int, epoch: int) -> torch.Generator:
    # one stream per epoch so a resumed run draws the same order and times
    return torch.Generator().manual_seed(seed * 1_000_003 + epoch)


def _guard(terms: dict, total: torch.Tensor, step: int) -> None:
    for name in LOSS_TERMS:
        value = float(terms[name].detach())
        if not math.isfinite(value):
            raise DivergedError(name, value, step)
    if not torch.isfinite(total.detach()):
        raise DivergedError("total", float(total.detach()), step)


def make_optimizer(model: DeformationModel, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps,
    )


def configure_torch() -> None:
    torch.use_deterministic_algorithms(True, warn_only=True)
    if settings.TORCH_THREADS > 0:
        torch.set_num_threads(settings.TORCH_THREADS)


def history_path_for(checkpoint_path) -> Path:
    path = Path(checkpoint_path)
    return path.with_name(f"{path.stem}_history.tsv")


def save_history(history: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    history.to_csv(path, sep="\t", index=False, float_format="%.9g")
    return path


# =============================================================================
# TRAIN
# =============================================================================

def train(
    config: Union[TrainConfig, dict],
    dataset: Sequence[PairLike],
    resume: Optional[Checkpoint] = None,
) -> TrainResult:
    """
    Train from scratch (or from `resume`) and return the final checkpoint.

    The same config, seed and dataset give an identical parameter payload.
    """
    config = validated(TrainConfig, config)
    if not dataset:
        raise ConfigError("Training needs at least one pair")
    configure_torch()
    pairs = _prepare(dataset, config)

    torch.manual_seed(config.seed)
    model = DeformationModel(config)
    optimizer = make_optimizer(model, config)

    steps_per_epoch = math.ceil(len(pairs) / config.batch_size)
    max_steps = config.epochs * steps_per_epoch
    scheduler = HoldCosineLRScheduler(
        optimizer,
        max_steps=max_steps,
        hold_steps=int(config.anneal_start * max_steps),
        init_lr=config.lr,
        min_lr=config.lr * config.lr_floor,
    )

    start_epoch = 0
    if resume is not None:
        load_parameters(resume, model)
        restore_optimizer(resume, model, optimizer)
        scheduler.resume_at(resume.scheduler.get("current_step", resume.step))
        start_epoch = resume.epoch
        log.info(f"Resuming at epoch {start_epoch} (step {scheduler.current_step})")

    n_params = sum(p.numel() for p in model.parameters())
    log.info(
        f"Training {config.variant} model ({n_params} params) on {len(pairs)} pairs: "
        f"{config.epochs} epochs × {steps_per_epoch} steps, lr={config.lr:g}"
    )

    rows = []
    weights = config.weights
    for epoch in range(start_epoch, config.epochs):
        gen = _epoch_generator(config.seed, epoch)
        order = torch.randperm(len(pairs), generator=gen).tolist()
        breakdowns: List[LossBreakdown] = []
        model.train()

        for start in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[start:start + config.batch_size]]
            optimizer.zero_grad(set_to_none=True)
            losses = []
            for pair in batch:
                t = float(torch.rand((), generator=gen, dtype=torch.float64))
                total, terms, breakdown = pair_loss(model, pair, t, weights, config.sigma_px)
                _guard(terms, total, scheduler.current_step)
                losses.append(total)
                breakdowns.append(breakdown)
            loss = torch.stack(losses).mean()
            loss.backward()
            optimizer.step()
            scheduler.step()
            log.debug(f"step {scheduler.current_step}: loss={float(loss.detach()):.6g}")

        mean = LossBreakdown.mean(breakdowns)
        lr = optimizer.param_groups[0]["lr"]
        rows.append({"epoch": epoch + 1, "lr": lr, **mean.model_dump()})
        log.info(f"Epoch {epoch + 1}/{config.epochs} | {mean.summary()} | lr={lr:.3g}")

    history = pd.DataFrame(rows, columns=["epoch", "lr", *LOSS_TERMS, "total"])
    checkpoint = capture(model, optimizer, scheduler, epoch=max(config.epochs, start_epoch))
    return TrainResult(checkpoint=checkpoint, model=model, history=history)
