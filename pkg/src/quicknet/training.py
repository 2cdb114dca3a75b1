"""Cascaded block-wise training.

The cascade trains one block at a time on the samples nothing earlier has
learned: fit block j's subnet and classifier on pool T_j, fit its commitment
head against the classifier's own correctness, identify the learned samples
(confident, committed, and correct), remove them to form T_{j+1}, freeze the
block, and move on. Class-balanced resampling keeps shrinking pools from
tipping toward easy classes. An ordinary end-to-end trainer for the same
backbone lives here too, as the comparison baseline.

All phases share one learning-rate schedule: per-epoch mean training loss is
monitored, the rate is halved when it stops improving, and training ends
after a run of epochs with no new minimum or at the epoch cap.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from . import costs
from . import layers as L
from . import tensor as T
from .errors import ConfigError, ContractError
from .exits import confidence_rows, evaluate_policy
from .model import softmax_rows
from .optim import adam_step
from .rng import RandomStream

EVAL_BATCH = 1024


def arch_has_conv(arch):
    return any(
        spec.get("type") == "conv"
        for block in arch["blocks"]
        for spec in block["subnet"] + block["classifier"]
    )


def default_lr(arch):
    """1e-3 for dense stacks, 3e-4 once convolutions are involved."""
    return 3e-4 if arch_has_conv(arch) else 1e-3


@dataclass
class TrainConfig:
    lr: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 1
    stop_patience: int = 3
    max_epochs: int = 100
    batch_size: int = 128
    threshold: float = 0.9
    seed: int = 0
    min_pool: int = None  # resolved to 2 * num_classes when left unset
    sampling: str = "balanced"

    def __post_init__(self):
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(f"plateau factor must be in (0, 1), got {self.plateau_factor}")
        if self.plateau_patience < 1 or self.stop_patience < 1:
            raise ConfigError("patience values must be at least 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs and batch_size must be at least 1")
        if self.sampling not in ("balanced", "literal"):
            raise ConfigError(f"sampling must be 'balanced' or 'literal', got {self.sampling!r}")
        if self.min_pool is not None and self.min_pool < 1:
            raise ConfigError(f"min_pool must be at least 1, got {self.min_pool}")

    def resolved_min_pool(self, num_classes):
        return 2 * num_classes if self.min_pool is None else self.min_pool


class PlateauScheduler:
    """Halve the rate on stalled loss; call for a stop after a longer stall."""

    def __init__(self, lr, factor=0.5, patience=1, stop_patience=3):
        self.lr = float(lr)
        self.factor = float(factor)
        self.patience = int(patience)
        self.stop_patience = int(stop_patience)
        self.best = math.inf
        self._plateau = 0
        self._stall = 0

    def observe(self, loss):
        """Feed one epoch's mean loss; returns True when training should stop."""
        if loss < self.best:
            self.best = loss
            self._plateau = 0
            self._stall = 0
            return False
        self._plateau += 1
        self._stall += 1
        if self._plateau >= self.patience:
            self.lr *= self.factor
            self._plateau = 0
        return self._stall >= self.stop_patience


# ---------------------------------------------------------------------------
# training pools
# ---------------------------------------------------------------------------

class TrainingPool:
    """Dataset indices still in play, with their class-balancing draw weights."""

    def __init__(self, dataset, indices, mode="balanced"):
        if mode not in ("balanced", "literal"):
            raise ConfigError(f"unknown sampling mode {mode!r}")
        self.dataset = dataset
        self.indices = np.asarray(indices, dtype=np.int64)
        self.mode = mode
        labels = dataset.labels[self.indices]
        self.class_counts = np.bincount(labels, minlength=dataset.num_classes)
        if mode == "balanced":
            weights = 1.0 / self.class_counts[labels].astype(np.float64)
        else:
            weights = np.ones(self.indices.size, dtype=np.float64)
        self.weights = weights / weights.sum() if self.indices.size else weights

    def __len__(self):
        return self.indices.size

    def labels(self):
        return self.dataset.labels[self.indices]

    def draw_positions(self, stream, n):
        """n weighted draws with replacement, as positions into the pool."""
        return stream.choice(self.indices.size, n, p=self.weights)


def pool_from_dataset(dataset, mode="balanced"):
    return TrainingPool(dataset, np.arange(len(dataset), dtype=np.int64), mode)


def shrink_pool(pool, learned, min_pool):
    """T_next = pool minus the learned indices; flags cascade completion.

    Returns (new_pool, complete) where complete means the remainder dropped
    below min_pool and no further block should be trained.
    """
    learned = np.asarray(learned, dtype=np.int64)
    if learned.size == 0:
        return pool, len(pool) < min_pool
    if not np.isin(learned, pool.indices).all():
        raise ContractError("learned indices must be a subset of the pool")
    keep = pool.indices[~np.isin(pool.indices, learned)]
    new_pool = TrainingPool(pool.dataset, keep, pool.mode)
    return new_pool, len(new_pool) < min_pool


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass
class BlockTrainRecord:
    block: int
    pool_size: int
    class_composition: list
    epochs: int = 0
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    commit_epochs: int = 0
    commit_losses: list = field(default_factory=list)
    commit_positive_frac: float = float("nan")
    learned: int = 0
    flops: int = 0
    digest: str = ""
    test_accuracy: float = float("nan")


@dataclass
class TrainResult:
    mode: str
    records: list
    flop_records: list
    total_flops: int
    blocks_trained: int
    epoch_rows: list


# ---------------------------------------------------------------------------
# shared epoch loop
# ---------------------------------------------------------------------------

def _fit(n_samples, fetch, loss_of, params, cfg, stream, context):
    """Generic phase runner: weighted epochs, plateau schedule, loss history.

    fetch(positions) -> per-batch model input, loss_of(batch, positions) ->
    scalar loss node. Returns (losses, lrs), one entry per epoch run.
    """
    sched = PlateauScheduler(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.stop_patience)
    losses, lrs = [], []
    for epoch in range(cfg.max_epochs):
        lr = sched.lr
        positions = fetch(stream.child(f"epoch{epoch}"), n_samples)
        total = 0.0
        for start in range(0, n_samples, cfg.batch_size):
            batch_pos = positions[start:start + cfg.batch_size]
            loss = loss_of(batch_pos)
            value = float(loss.data)
            if not math.isfinite(value):
                raise ContractError(
                    f"{context}: loss {value} at epoch {epoch + 1}, "
                    f"batch {start // cfg.batch_size + 1}, lr {lr:g}"
                )
            T.backward(loss)
            try:
                adam_step(params, lr)
            except ContractError as exc:
                raise ContractError(
                    f"{context}: {exc} at epoch {epoch + 1}, "
                    f"batch {start // cfg.batch_size + 1}, lr {lr:g}"
                ) from None
            total += value * len(batch_pos)
        mean = total / n_samples
        losses.append(mean)
        lrs.append(lr)
        if sched.observe(mean):
            break
    return losses, lrs


def _eval_batches(fn, x, batch=EVAL_BATCH):
    outs = [fn(x[a:a + batch]) for a in range(0, x.shape[0], batch)]
    return np.concatenate(outs) if len(outs) > 1 else outs[0]


def block_inputs(net, j, x):
    """Push raw inputs through the frozen blocks before j, without gradients."""
    for i in range(j):
        x = _eval_batches(lambda b: net.forward_subnet(i, b).data, x)
    return x


def block_activations(net, j, block_in):
    """Block j's subnet output for precomputed block-j inputs."""
    return _eval_batches(lambda b: net.forward_subnet(j, b).data, block_in)


# ---------------------------------------------------------------------------
# Algorithm phases
# ---------------------------------------------------------------------------

def train_block(net, j, pool, cfg, block_in=None):
    """Fit block j's subnet and classifier on the pool.

    block_in optionally carries the pool's precomputed block-j inputs (in
    pool order); otherwise the frozen prefix is evaluated here.
    """
    if len(pool) == 0:
        raise ContractError(f"cannot train block {j} on an empty pool")
    for i in range(j):
        if not net.blocks[i].frozen:
            raise ContractError(f"block {i} must be frozen before block {j} trains")

    inputs = pool.dataset.inputs_for(net.input_shape)
    if block_in is None:
        block_in = block_inputs(net, j, inputs[pool.indices])
    pool_labels = pool.labels()

    record = BlockTrainRecord(
        block=j, pool_size=len(pool), class_composition=pool.class_counts.tolist()
    )
    params = net.blocks[j].params(("subnet", "classifier"))

    def loss_of(batch_pos):
        act = net.forward_subnet(j, block_in[batch_pos])
        logits = net.classifier_logits(j, act)
        loss, _ = L.softmax_cross_entropy(logits, pool_labels[batch_pos])
        return loss

    stream = RandomStream(cfg.seed).child(f"train_b{j}")
    losses, lrs = _fit(
        len(pool), lambda s, n: pool.draw_positions(s, n), loss_of, params, cfg,
        stream, f"block {j} classifier phase",
    )
    record.epochs = len(losses)
    record.losses = losses
    record.lrs = lrs
    return record


def train_commitment(net, j, pool, cfg, acts=None):
    """Fit block j's commitment head to predict its classifier's correctness.

    Targets are 1 where the (already trained, held fixed) classifier is right
    on the pool sample, 0 elsewhere. Returns a dict of epochs, losses, lrs,
    and positive_frac; a degenerate all-right or all-wrong pool still trains
    and is visible in positive_frac.
    """
    inputs = pool.dataset.inputs_for(net.input_shape)
    if acts is None:
        acts = block_activations(net, j, block_inputs(net, j, inputs[pool.indices]))
    logits = _eval_batches(lambda b: net.classifier_logits(j, T.Tensor(b)).data, acts)
    targets = (logits.argmax(axis=1) == pool.labels()).astype(np.float64)

    params = net.blocks[j].params(("commitment",))

    def loss_of(batch_pos):
        scores = net.commitment_scores(j, T.Tensor(acts[batch_pos]))
        return L.binary_cross_entropy(scores, targets[batch_pos])

    stream = RandomStream(cfg.seed).child(f"commit_b{j}")
    losses, lrs = _fit(
        len(pool), lambda s, n: pool.draw_positions(s, n), loss_of, params, cfg,
        stream, f"block {j} commitment phase",
    )
    return {
        "epochs": len(losses),
        "losses": losses,
        "lrs": lrs,
        "positive_frac": float(targets.mean()),
    }


def identify_learned(net, j, pool, threshold, acts=None):
    """Dataset indices in the pool that block j has learned.

    Learned means all three hold at exit j: confidence strictly above the
    threshold, commitment score positive, and the prediction correct.
    """
    inputs = pool.dataset.inputs_for(net.input_shape)
    if acts is None:
        acts = block_activations(net, j, block_inputs(net, j, inputs[pool.indices]))
    logits = _eval_batches(lambda b: net.classifier_logits(j, T.Tensor(b)).data, acts)
    scores = _eval_batches(lambda b: net.commitment_scores(j, T.Tensor(b)).data, acts).reshape(-1)

    conf = confidence_rows(softmax_rows(logits))
    correct = logits.argmax(axis=1) == pool.labels()
    learned = (conf > threshold) & (scores > 0) & correct
    return pool.indices[learned]


# ---------------------------------------------------------------------------
# full pipelines
# ---------------------------------------------------------------------------

def _epoch_rows(rows, block, phase, pool_size, losses, lrs, cum, per_epoch_flops):
    for e, (loss, lr) in enumerate(zip(losses, lrs)):
        cum += per_epoch_flops
        rows.append(
            {
                "block": block, "epoch": e + 1, "lr": lr, "loss": loss,
                "pool_size": pool_size, "cum_flops": cum, "phase": phase,
            }
        )
    return cum


def train_quicknet(net, dataset, cfg, eval_dataset=None):
    """Run the whole cascade over a dataset; returns records and cost data.

    With an eval_dataset, each block-freeze event also measures exit-policy
    accuracy over the cascade trained so far (the cost-vs-accuracy curve).
    """
    if net.frozen_prefix() != 0:
        raise ContractError("cascade training needs a freshly built model")
    if dataset.num_classes != net.num_classes:
        raise ContractError(
            f"dataset has {dataset.num_classes} classes, model expects {net.num_classes}"
        )

    arch = net.arch
    inputs = dataset.inputs_for(net.input_shape)
    eval_inputs = None
    if eval_dataset is not None:
        eval_inputs = eval_dataset.inputs_for(net.input_shape)
    pool = pool_from_dataset(dataset, cfg.sampling)
    min_pool = cfg.resolved_min_pool(dataset.num_classes)

    records, flop_records, rows = [], [], []
    cum = 0
    blocks_trained = 0
    for j in range(len(net.blocks)):
        block_in = block_inputs(net, j, inputs[pool.indices])
        record = train_block(net, j, pool, cfg, block_in=block_in)
        flop_records.append(
            {"phase": "block", "block": j, "samples": len(pool), "epochs": record.epochs}
        )
        cum = _epoch_rows(
            rows, j, "block", len(pool), record.losses, record.lrs, cum,
            costs.block_train_sample_flops(arch, j) * len(pool),
        )

        acts = block_activations(net, j, block_in)
        commit = train_commitment(net, j, pool, cfg, acts=acts)
        record.commit_epochs = commit["epochs"]
        record.commit_losses = commit["losses"]
        record.commit_positive_frac = commit["positive_frac"]
        flop_records.append(
            {"phase": "commitment", "block": j, "samples": len(pool), "epochs": commit["epochs"]}
        )
        cum = _epoch_rows(
            rows, j, "commitment", len(pool), commit["losses"], commit["lrs"], cum,
            costs.commitment_train_sample_flops(arch, j) * len(pool),
        )

        learned = identify_learned(net, j, pool, cfg.threshold, acts=acts)
        record.learned = int(learned.size)
        flop_records.append(
            {"phase": "identify", "block": j, "samples": len(pool), "epochs": 1}
        )
        cum += costs.identify_sample_flops(arch, j) * len(pool)

        net.freeze_block(j)
        record.digest = ckpt.block_digest(net, j)
        record.flops = costs.training_flops(arch, flop_records[-3:])
        if eval_inputs is not None:
            res = evaluate_policy(net, eval_inputs, cfg.threshold, n_blocks=j + 1)
            record.test_accuracy = float((res["pred"] == eval_dataset.labels).mean())
        records.append(record)
        blocks_trained = j + 1

        pool, complete = shrink_pool(pool, learned, min_pool)
        if complete:
            break

    total = costs.training_flops(arch, flop_records)
    return TrainResult(
        mode="quicknet", records=records, flop_records=flop_records,
        total_flops=total, blocks_trained=blocks_trained, epoch_rows=rows,
    )


def backbone_logits(net, x):
    """Plain end-to-end forward: every subnet, then the last classifier."""
    def fn(batch):
        t = T.Tensor(batch)
        for i in range(len(net.blocks)):
            t = net.forward_subnet(i, t)
        return net.classifier_logits(len(net.blocks) - 1, t).data

    return _eval_batches(fn, x)


def train_end2end(net, dataset, cfg, eval_dataset=None):
    """Ordinary whole-backbone training, the comparison baseline.

    Trains every subnet plus the final classifier as one network under the
    same schedule; commitment heads and intermediate classifiers stay at
    their initial values.
    """
    if net.frozen_prefix() != 0:
        raise ContractError("end-to-end training needs a freshly built model")
    if dataset.num_classes != net.num_classes:
        raise ContractError(
            f"dataset has {dataset.num_classes} classes, model expects {net.num_classes}"
        )

    inputs = dataset.inputs_for(net.input_shape)
    labels = dataset.labels
    pool = pool_from_dataset(dataset, "literal")

    params = []
    for block in net.blocks:
        params.extend(block.params(("subnet",)))
    params.extend(net.blocks[-1].params(("classifier",)))

    def loss_of(batch_pos):
        idx = pool.indices[batch_pos]
        t = T.Tensor(inputs[idx])
        for i in range(len(net.blocks)):
            t = net.forward_subnet(i, t)
        logits = net.classifier_logits(len(net.blocks) - 1, t)
        loss, _ = L.softmax_cross_entropy(logits, labels[idx])
        return loss

    stream = RandomStream(cfg.seed).child("train_e2e")
    losses, lrs = _fit(
        len(pool), lambda s, n: pool.draw_positions(s, n), loss_of, params, cfg,
        stream, "end-to-end phase",
    )

    for i in range(len(net.blocks)):
        net.freeze_block(i)

    record = BlockTrainRecord(
        block=-1, pool_size=len(pool), class_composition=pool.class_counts.tolist(),
        epochs=len(losses), losses=losses, lrs=lrs,
    )
    if eval_dataset is not None:
        preds = backbone_logits(net, eval_dataset.inputs_for(net.input_shape)).argmax(axis=1)
        record.test_accuracy = float((preds == eval_dataset.labels).mean())
    flop_records = [
        {"phase": "e2e", "block": None, "samples": len(pool), "epochs": len(losses)}
    ]
    record.flops = costs.training_flops(net.arch, flop_records)
    rows = []
    _epoch_rows(rows, -1, "e2e", len(pool), losses, lrs, 0,
                costs.e2e_sample_flops(net.arch) * len(pool))
    return TrainResult(
        mode="end2end", records=[record], flop_records=flop_records,
        total_flops=record.flops, blocks_trained=len(net.blocks), epoch_rows=rows,
    )
