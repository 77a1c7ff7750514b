from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence
import json
import math
import time

import numpy as np

from mobility.config import TrainConfig
from mobility.core.tensor import ComputationTape
from mobility.core.trajectory import PredictionSample, SampleBatch
from mobility.data.loader import DatasetSplits, observed_only
from mobility.errors import ChecksumMismatch, EmptySplit, FrozenParameterError, NonFiniteLoss
from mobility.model.predictor import MobilityModel, build_model, sequence_loss
from mobility.semantic.cache import SemanticContext
from mobility.training.checkpoint import Checkpoint
from mobility.training.evaluate import validation_metrics
from mobility.training.optimizer import AdamW, scheduled_lr
from mobility.utils.logger import setup_logger


class MetricsLog:
    """JSON-lines training telemetry; kept in memory when no path is given"""

    def __init__(self, path: Optional[Path] = None, append: bool = False):
        self.path = path
        self.records: List[Dict[str, Any]] = []
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            if not append:
                path.write_text('', encoding='utf-8')

    def write(self, record: Dict[str, Any]):
        self.records.append(record)
        if self.path is not None:
            with open(self.path, 'a', encoding='utf-8') as f:
                f.write(json.dumps(record) + '\n')


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    loss_trace: List[float]
    val_history: List[Dict[str, Any]]
    backbone_checksum_before: str
    backbone_checksum_after: str
    best_path: Optional[Path] = None
    last_path: Optional[Path] = None
    dropped: Dict[str, int] = field(default_factory=dict)

    @property
    def epoch_seconds(self) -> List[float]:
        """Wall-clock seconds per completed epoch, training plus validation"""
        return [h['epoch_seconds'] for h in self.val_history if 'epoch_seconds' in h]


class Trainer:
    """Seeded mini-batch training with per-epoch validation and best-checkpoint retention"""

    def __init__(self, config: TrainConfig, splits: DatasetSplits, context: SemanticContext,
                 out_dir: Optional[str | Path] = None, model: Optional[MobilityModel] = None):
        self.logger = setup_logger('trainer')
        config.validate(self.logger)
        self.config = config
        self.context = context
        self.out_dir = Path(out_dir) if out_dir else None

        self.model = model or build_model(config)
        if context.dim != self.model.config.d_model:
            raise ValueError(f"embedder width {context.dim} != model width {self.model.config.d_model}")
        self.optimizer = AdamW(self.model.named_parameters(), config.learning_rate, config.weight_decay,
                               clip_norm=config.clip_norm)
        self._audit()

        self.train_samples = observed_only(splits.train)
        self.val_samples = observed_only(splits.val)
        self.dropped = {
            'train': len(splits.train) - len(self.train_samples),
            'val': len(splits.val) - len(self.val_samples),
        }
        if not self.train_samples:
            raise EmptySplit("no training sample with an observed target")
        self.logger.info(f"Training on {len(self.train_samples)} samples, validating on {len(self.val_samples)} "
                         f"(dropped {self.dropped['train']}/{self.dropped['val']} without observed targets)")

        calls = context.embedder.calls
        context.prepare(self.train_samples + self.val_samples)
        self.logger.info(f"Semantic context ready: {context.embedder.calls - calls} {context.embedder.name} lookups")

    def _audit(self):
        frozen_ids = {id(t) for t in self.model.frozen_parameters().values()}
        shared = [name for name, p in self.optimizer.params.items() if id(p) in frozen_ids or p.frozen]
        if shared:
            raise FrozenParameterError(f"optimizer holds frozen tensors: {', '.join(shared)}")

    def train_step(self, samples: Sequence[PredictionSample], global_step: int) -> float:
        batch = SampleBatch.from_samples(samples)
        te_hist, te_task = self.context.for_batch(samples)
        rng = np.random.default_rng([self.config.seed, global_step])

        self.optimizer.zero_grad()
        for p in self.model.frozen_parameters().values():
            p.zero_grad()
        with ComputationTape() as tape:
            logits = self.model.forward(batch, te_hist, te_task, training=True, rng=rng)
            loss = sequence_loss(logits, batch.targets)
        value = loss.item()
        if not math.isfinite(value):
            users = sorted({s.user_id for s in samples})
            raise NonFiniteLoss(f"loss is {value} at step {global_step} (users {users[:10]})")
        tape.backward(loss)
        self.optimizer.step()
        return value

    def _snapshot(self, epoch: int, global_step: int, val_history, best_epoch: int,
                  best_acc: float, loss_trace: List[float], checksum: str) -> Checkpoint:
        return Checkpoint(
            config=self.config,
            parameters=self.model.state_dict(),
            backbone_checksum=checksum,
            epoch=epoch,
            global_step=global_step,
            optimizer_step=self.optimizer.state.step,
            optimizer_state={k: v.copy() for k, v in self.optimizer.state_arrays().items()},
            val_history=list(val_history),
            best_epoch=best_epoch,
            best_val_acc1=best_acc,
            loss_trace=list(loss_trace),
        )

    def _restore(self, checkpoint: Checkpoint, checksum: str):
        if checkpoint.backbone_checksum != checksum:
            raise ChecksumMismatch(checkpoint.backbone_checksum, checksum)
        self.model.load_state_dict(checkpoint.parameters)
        self.optimizer.load_state_arrays(checkpoint.optimizer_step, checkpoint.optimizer_state)

    def train(self, resume: Optional[Checkpoint] = None, max_steps: Optional[int] = None) -> TrainResult:
        """Run the remaining epochs; max_steps stops early (used to compare resumed runs)"""
        cfg = self.config
        checksum = self.model.backbone.checksum()
        start_epoch, global_step = 0, 0
        val_history: List[Dict[str, Any]] = []
        loss_trace: List[float] = []
        best_epoch, best_acc = -1, -1.0
        best: Optional[Checkpoint] = None

        if resume is not None:
            self._restore(resume, checksum)
            start_epoch, global_step = resume.epoch, resume.global_step
            val_history = list(resume.val_history)
            loss_trace = list(resume.loss_trace)
            best_epoch, best_acc = resume.best_epoch, resume.best_val_acc1
            best_file = self.out_dir / 'best.ckpt' if self.out_dir else None
            best = Checkpoint.load(best_file) if best_file and best_file.exists() else resume
            self.logger.info(f"Resuming at epoch {start_epoch}, step {global_step}")

        log = MetricsLog(self.out_dir / 'metrics.jsonl' if self.out_dir else None, append=resume is not None)
        last = resume
        n = len(self.train_samples)
        total_steps = cfg.epochs * math.ceil(n / cfg.batch_size)
        stopped = False
        for epoch in range(start_epoch, cfg.epochs):
            started = time.perf_counter()
            order = np.random.default_rng(cfg.seed + epoch).permutation(n)
            epoch_losses = []
            for start in range(0, n, cfg.batch_size):
                if max_steps is not None and global_step >= max_steps:
                    stopped = True
                    break
                batch = [self.train_samples[i] for i in order[start:start + cfg.batch_size]]
                self.optimizer.lr = scheduled_lr(global_step, total_steps, cfg.learning_rate,
                                                 cfg.warmup_ratio, cfg.min_lr_ratio)
                loss = self.train_step(batch, global_step)
                global_step += 1
                loss_trace.append(loss)
                epoch_losses.append(loss)
                log.write({'step': global_step, 'epoch': epoch, 'loss': loss, 'lr': self.optimizer.lr})
            if stopped:
                self.logger.info(f"Stopped at step {global_step} (max_steps)")
                break

            val = validation_metrics(self.model, self.context, self.val_samples) if self.val_samples else {}
            train_loss = float(np.mean(epoch_losses))
            seconds = time.perf_counter() - started
            val_history.append({'epoch': epoch, 'train_loss': train_loss, 'epoch_seconds': seconds, **val})
            log.write({'epoch': epoch, 'val': val, 'train_loss': train_loss, 'epoch_seconds': seconds})
            acc1 = val.get('acc@1', -1.0)
            self.logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: train loss {train_loss:.4f}, "
                             f"val acc@1 {acc1:.4f} ({seconds:.1f}s)")

            # Ties keep the earlier epoch
            improved = best is None or acc1 > best_acc or not self.val_samples
            if improved:
                best_epoch, best_acc = epoch, acc1
            last = self._snapshot(epoch + 1, global_step, val_history, best_epoch, best_acc, loss_trace, checksum)
            if improved:
                best = last
            self._save(last, best if improved else None)

        after = self.model.backbone.checksum()
        if last is None:
            last = self._snapshot(start_epoch, global_step, val_history, best_epoch, best_acc, loss_trace, checksum)
            best = best or last
        self.logger.info(f"Best validation acc@1 {best_acc:.4f} at epoch {best_epoch + 1}")
        return TrainResult(
            best=best,
            last=last,
            loss_trace=loss_trace,
            val_history=val_history,
            backbone_checksum_before=checksum,
            backbone_checksum_after=after,
            best_path=self.out_dir / 'best.ckpt' if self.out_dir else None,
            last_path=self.out_dir / 'last.ckpt' if self.out_dir else None,
            dropped=self.dropped,
        )

    def _save(self, last: Checkpoint, best: Optional[Checkpoint]):
        if not self.out_dir:
            return
        last.save(self.out_dir / 'last.ckpt')
        if best is not None:
            best.save(self.out_dir / 'best.ckpt')
            self.logger.debug(f"Saved best checkpoint (epoch {best.epoch})")


def train(config: TrainConfig, splits: DatasetSplits, context: SemanticContext,
          out_dir: Optional[str | Path] = None, resume: Optional[Checkpoint] = None) -> TrainResult:
    return Trainer(config, splits, context, out_dir).train(resume)
