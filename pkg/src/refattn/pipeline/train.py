"""Adam optimizer and the toy training loop."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..encoder import encode
from ..errors import NumericalError, UsageError
from ..losses import LossReport, adv_losses, perceptual_loss, rec_loss, total_loss
from ..numerics import NdArray, add, mul, ndar
from .config import RunConfig
from .data import SamplePair, augment
from .model import RefSRModel

LOG_NAME = "loss_log.jsonl"
CHECKPOINT_NAME = "checkpoint"


class Adam:
    """Adam with bias correction over a dict of parameters."""

    def __init__(self, params: Dict[str, NdArray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        if self.lr == 0.0:
            return
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    checkpoint: Path
    log: Path
    reports: List[LossReport] = field(default_factory=list)
    model: Optional[RefSRModel] = None


def _mean(values):
    total = values[0]
    for v in values[1:]:
        total = add(total, v)
    return mul(total, 1.0 / len(values))


def _dump_diagnostics(out_dir: Path, step: int, tensors: Dict[str, np.ndarray]) -> Path:
    dump = out_dir / f"nonfinite_step{step}"
    dump.mkdir(parents=True, exist_ok=True)
    for name, arr in tensors.items():
        ndar.save(dump / f"{name}.ndar", arr)
    return dump


def train_toy(pairs: Sequence[SamplePair], config: RunConfig, out_dir,
              model: Optional[RefSRModel] = None) -> TrainResult:
    """Adam steps on the generator (plus one critic step per generator step in mode ``all``).

    Deterministic given ``config.seed``: one numpy Generator drives batch
    sampling, augmentation and gradient-penalty interpolation.  Writes one
    JSON line per step to ``loss_log.jsonl`` and the final checkpoint to
    ``checkpoint/``.  A non-finite loss dumps the step's inputs and outputs
    under ``nonfinite_step<n>/`` and raises NumericalError.
    """
    if not pairs:
        raise UsageError("train_toy needs at least one training pair")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = model if model is not None else RefSRModel.init(config)
    rng = np.random.default_rng(config.seed)
    adversarial = config.mode == "all"
    lambda1 = config.lambda1 if adversarial else 0.0
    lambda2 = config.lambda2 if adversarial else 0.0

    opt = Adam(model.trainable(), config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    critic_opt = None
    if adversarial:
        critic_opt = Adam(model.critic.params, config.critic_learning_rate, config.beta1,
                          config.beta2, config.adam_eps)

    # matching is fixed when neither the inputs nor the encoder change between steps
    cache = {}
    reuse = not config.augment and not config.train_encoder

    def feat_fn(x):
        return encode(x, model.stack, "value")[2]

    log_path = out_dir / LOG_NAME
    reports: List[LossReport] = []
    with open(log_path, "w") as log:
        for step in range(config.steps):
            idx = rng.integers(len(pairs), size=config.batch_size)
            batch = []
            for i in idx:
                pair = pairs[int(i)]
                if config.augment:
                    pair = augment(pair, rng, config.brightness, config.contrast, config.hue,
                                   config.flips, config.rotations)
                if reuse and int(i) in cache:
                    lr_up, pyr = cache[int(i)]
                else:
                    lr_up, pyr = model.prepare(pair.lr, pair.ref)
                    if reuse:
                        cache[int(i)] = (lr_up, pyr)
                batch.append((pair, lr_up, pyr))

            opt.zero_grad()
            srs = [model.forward(lr_up, pyr) for _, lr_up, pyr in batch]
            hrs = [pair.hr.pixels for pair, _, _ in batch]
            rec = _mean([rec_loss(s, h) for s, h in zip(srs, hrs)])
            loss = rec
            per_val = adv_val = 0.0
            critic_loss = None
            if adversarial:
                per = _mean([perceptual_loss(s, h, feat_fn) for s, h in zip(srs, hrs)])
                critic_loss, gen_loss = adv_losses(model.critic, srs, hrs, rng, config.gp_weight)
                loss = add(add(rec, mul(per, lambda1)), mul(gen_loss, lambda2))
                per_val, adv_val = per.item(), gen_loss.item()

            report = total_loss(rec.item(), per_val, adv_val, lambda1, lambda2)
            values = [report.total] + ([critic_loss.item()] if critic_loss is not None else [])
            if not all(math.isfinite(v) for v in values):
                tensors = {"loss": np.array(values)}
                for j, ((pair, lr_up, _), s) in enumerate(zip(batch, srs)):
                    tensors.update({f"lr{j}": pair.lr.pixels, f"ref{j}": pair.ref.pixels,
                                    f"hr{j}": pair.hr.pixels, f"sr{j}": s.data})
                dump = _dump_diagnostics(out_dir, step, tensors)
                raise NumericalError(f"non-finite loss at step {step}; tensors dumped to {dump}")

            loss.backward()
            opt.step()
            if adversarial:
                # generator-side backward also reached the critic weights; discard that
                critic_opt.zero_grad()
                critic_loss.backward()
                critic_opt.step()
                critic_opt.zero_grad()

            reports.append(report)
            log.write(report.to_json(step) + "\n")
            log.flush()

    ckpt = model.save(out_dir / CHECKPOINT_NAME, step=config.steps)
    return TrainResult(ckpt, log_path, reports, model)


def read_log(path) -> List[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
