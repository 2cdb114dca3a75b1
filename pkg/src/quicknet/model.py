"""Early-exit network container.

A QuickNet is a stack of blocks. Each block owns a subnet (the backbone
segment), a classifier head producing class logits, and a commitment head
producing a single stay-or-go score. Blocks train one at a time and are
frozen before the next one starts, so the container tracks a frozen flag
and per-block evaluation counters for cost reporting.

Architectures are plain dicts (JSON-compatible):

    {"input_shape": [784], "num_classes": 10,
     "blocks": [{"subnet": [{"type": "dense", "units": 150}, {"type": "relu"}],
                 "classifier": [{"type": "dense", "units": 10}]}, ...]}

The commitment head is derived, not configured: flatten the block activation,
dense to num_classes, relu, dense to one score.
"""

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import layers as L
from . import tensor as T
from .errors import ConfigError, ContractError
from .exits import confidence_rows
from .rng import RandomStream


def softmax_rows(z):
    """Row-wise softmax of a (batch, C) array, stable under large logits."""
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=1, keepdims=True)


def commitment_specs(num_classes):
    """Layer specs of the derived commitment head."""
    return [
        {"type": "flatten"},
        {"type": "dense", "units": int(num_classes)},
        {"type": "relu"},
        {"type": "dense", "units": 1},
    ]


def validate_arch(arch):
    """Check an architecture dict and return the per-block activation shapes.

    Raises ConfigError with a pointed message on the first problem found.
    """
    if not isinstance(arch, dict):
        raise ConfigError("architecture must be a JSON object")
    for key in ("input_shape", "num_classes", "blocks"):
        if key not in arch:
            raise ConfigError(f"architecture missing {key!r}")

    shape = tuple(int(d) for d in arch["input_shape"])
    if len(shape) not in (1, 3) or any(d <= 0 for d in shape):
        raise ConfigError(f"input_shape must be [features] or [C, H, W] of positive ints, got {list(shape)}")

    classes = int(arch["num_classes"])
    if classes < 2:
        raise ConfigError(f"num_classes must be at least 2, got {classes}")

    blocks = arch["blocks"]
    if not isinstance(blocks, list) or not blocks:
        raise ConfigError("blocks must be a non-empty list")

    act_shapes = []
    for i, block in enumerate(blocks):
        for key in ("subnet", "classifier"):
            if not isinstance(block.get(key), list) or not block[key]:
                raise ConfigError(f"block {i} needs a non-empty {key!r} list")
        try:
            for spec in block["subnet"]:
                shape = L.out_shape(spec, shape)
            head = shape
            for spec in block["classifier"]:
                head = L.out_shape(spec, head)
            side = shape
            for spec in commitment_specs(classes):
                side = L.out_shape(spec, side)
        except ConfigError as exc:
            raise ConfigError(f"block {i}: {exc}") from None
        if head != (classes,):
            raise ConfigError(
                f"block {i}: classifier produces {head}, expected ({classes},)"
            )
        act_shapes.append(shape)
    return act_shapes


def arch_hash(arch):
    """Content hash of an architecture, stable across key order."""
    canon = json.dumps(arch, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def load_arch(path):
    try:
        with open(path) as fh:
            arch = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read architecture {path}: {exc}") from None
    validate_arch(arch)
    return arch


@dataclass
class ExitBatch:
    """Everything one exit says about a batch of activations."""

    logits: np.ndarray
    probs: np.ndarray
    confidence: np.ndarray
    commitment: np.ndarray
    commitment_positive: np.ndarray


class Block:
    def __init__(self, index, subnet, classifier, commitment, in_shape, act_shape):
        self.index = index
        self.subnet = subnet
        self.classifier = classifier
        self.commitment = commitment
        self.in_shape = in_shape
        self.act_shape = act_shape
        self.frozen = False

    def params(self, parts=("subnet", "classifier", "commitment")):
        out = []
        for part in parts:
            for layer in getattr(self, part):
                out.extend(layer.params())
        return out


class QuickNet:
    def __init__(self, arch, seed=0, dtype=np.float64):
        act_shapes = validate_arch(arch)
        self.arch = copy.deepcopy(arch)
        self.seed = int(seed)
        self.dtype = dtype
        self.num_classes = int(arch["num_classes"])
        self.input_shape = tuple(int(d) for d in arch["input_shape"])
        self.blocks = []
        self.eval_counts = np.zeros(len(arch["blocks"]), dtype=np.int64)

        stream = RandomStream(self.seed)
        in_shape = self.input_shape
        for i, (spec, act_shape) in enumerate(zip(arch["blocks"], act_shapes)):
            sections = {}
            for part, part_specs in (
                ("subnet", spec["subnet"]),
                ("classifier", spec["classifier"]),
                ("commitment", commitment_specs(self.num_classes)),
            ):
                built = []
                shape = in_shape if part == "subnet" else act_shape
                for j, layer_spec in enumerate(part_specs):
                    name = f"b{i}/{part}{j}"
                    built.append(L.build_layer(layer_spec, shape, stream.child(name), dtype=dtype, name=name))
                    shape = L.out_shape(layer_spec, shape)
                sections[part] = built
            self.blocks.append(
                Block(i, sections["subnet"], sections["classifier"], sections["commitment"],
                      in_shape, act_shape)
            )
            in_shape = act_shape

    # -- forward pieces -----------------------------------------------------

    def _as_tensor(self, i, x):
        if isinstance(x, T.Tensor):
            return x
        x = np.asarray(x, dtype=self.dtype)
        expect = self.blocks[i].in_shape
        if x.shape[1:] != expect:
            raise ContractError(
                f"block {i} expects per-sample shape {expect}, got {x.shape[1:]}"
            )
        return T.Tensor(x)

    def forward_subnet(self, i, x):
        """Activation tensor of block i's subnet over a batch."""
        return L.run_layers(self.blocks[i].subnet, self._as_tensor(i, x))

    def classifier_logits(self, i, act):
        return L.run_layers(self.blocks[i].classifier, act)

    def commitment_scores(self, i, act):
        return L.run_layers(self.blocks[i].commitment, act)

    def forward_block(self, i, x):
        """Subnet activation plus the full exit readout, as plain arrays."""
        act = self.forward_subnet(i, x)
        logits = self.classifier_logits(i, act).data
        probs = softmax_rows(logits)
        scores = self.commitment_scores(i, act).data.reshape(-1)
        batch = ExitBatch(
            logits=logits,
            probs=probs,
            confidence=confidence_rows(probs),
            commitment=scores,
            commitment_positive=scores > 0,
        )
        return act, batch

    # -- lifecycle ----------------------------------------------------------

    def freeze_block(self, i):
        for p in self.blocks[i].params():
            p.frozen = True
        self.blocks[i].frozen = True

    def frozen_prefix(self):
        """Number of leading frozen blocks."""
        n = 0
        for block in self.blocks:
            if not block.frozen:
                break
            n += 1
        return n

    def record_evaluations(self, counts):
        for i, c in enumerate(counts):
            self.eval_counts[i] += int(c)

    # -- parameter access ---------------------------------------------------

    def named_params(self):
        """Ordered (name, Parameter) pairs; the checkpoint layout."""
        out = []
        seen = set()
        for block in self.blocks:
            for p in block.params():
                if p.name in seen:
                    raise ContractError(f"duplicate parameter name {p.name!r}")
                seen.add(p.name)
                out.append((p.name, p))
        return out

    def params(self):
        return [p for _, p in self.named_params()]

    def arch_hash(self):
        return arch_hash(self.arch)


# ---------------------------------------------------------------------------
# stock architectures
# ---------------------------------------------------------------------------

def mlp_arch(input_dim=784, width=150, blocks=3, classes=10):
    """Flat-input stack: every block is dense(width) + relu with a dense exit."""
    return {
        "input_shape": [int(input_dim)],
        "num_classes": int(classes),
        "blocks": [
            {
                "subnet": [{"type": "dense", "units": int(width)}, {"type": "relu"}],
                "classifier": [{"type": "dense", "units": int(classes)}],
            }
            for _ in range(int(blocks))
        ],
    }


def cnn_arch(input_shape=(1, 28, 28), channels=(8, 16), classes=10):
    """Small conv stack: conv3x3(pad 1) + relu + maxpool2 per block.

    Exit heads pool with a learnable max/avg blend before the dense readout;
    the head window is 2x2 while the extent stays even, otherwise it covers
    the whole map.
    """
    c, h, w = (int(d) for d in input_shape)
    blocks = []
    for ch in channels:
        if h % 2 or w % 2:
            raise ConfigError(
                f"cnn_arch needs even spatial extents per stage, got {(h, w)}"
            )
        h, w = h // 2, w // 2
        window = [2, 2] if (h % 2 == 0 and w % 2 == 0) else [h, w]
        blocks.append(
            {
                "subnet": [
                    {"type": "conv", "channels": int(ch), "kernel": [3, 3], "stride": 1, "padding": 1},
                    {"type": "relu"},
                    {"type": "maxpool", "window": [2, 2]},
                ],
                "classifier": [
                    {"type": "mixedpool", "window": window},
                    {"type": "flatten"},
                    {"type": "dense", "units": int(classes)},
                ],
            }
        )
    return {"input_shape": [c, int(input_shape[1]), int(input_shape[2])], "num_classes": int(classes), "blocks": blocks}
