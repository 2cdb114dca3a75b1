"""FLOP accounting for forward paths, training phases, and inference policies.

Conventions, applied uniformly so ratios between pipelines are meaningful:

* dense: 2 * in * out (multiply-accumulate pairs; the bias add rides along)
* conv: 2 * kh * kw * Cin * Cout * Ho * Wo
* max/avg pool: kh * kw * Ho * Wo * C (one pass over each window)
* mixed pool: both pools plus 4 ops per output for the blend
* elementwise activation: 1 per element
* flatten: 0
* softmax, entropy, argmax, comparisons: not counted (vanishing next to the
  matmuls and identical across the pipelines being compared)

A backward pass is charged at twice the forward cost of the trainable path,
so one training step on a sample costs forward + backward = 3x forward of
whatever is trainable, plus 1x forward of any frozen prefix feeding it.
All figures are per sample; callers scale by counts.
"""

import numpy as np

from . import layers as L
from .errors import ConfigError
from .model import commitment_specs, validate_arch


def layer_flops(spec, in_shape):
    """Per-sample forward FLOPs of one layer and its output shape."""
    kind = spec["type"]
    out = L.out_shape(spec, in_shape)
    if kind == "dense":
        f = 2 * in_shape[0] * out[0]
    elif kind == "relu":
        f = int(np.prod(out))
    elif kind == "flatten":
        f = 0
    elif kind == "conv":
        kh, kw = L._kernel_pair(spec["kernel"])
        cout, ho, wo = out
        f = 2 * kh * kw * in_shape[0] * cout * ho * wo
    elif kind in ("maxpool", "avgpool"):
        kh, kw = L._kernel_pair(spec["window"])
        c, ho, wo = out
        f = kh * kw * ho * wo * c
    elif kind == "mixedpool":
        kh, kw = L._kernel_pair(spec["window"])
        c, ho, wo = out
        f = 2 * (kh * kw * ho * wo * c) + 4 * c * ho * wo
    else:
        raise ConfigError(f"unknown layer type {kind!r}")
    return int(f), out


def seq_flops(specs, in_shape):
    total = 0
    shape = in_shape
    for spec in specs:
        f, shape = layer_flops(spec, shape)
        total += f
    return total, shape


def _block_tables(arch):
    """Per-block (subnet, classifier, commitment) forward FLOPs."""
    validate_arch(arch)
    classes = int(arch["num_classes"])
    shape = tuple(int(d) for d in arch["input_shape"])
    rows = []
    for block in arch["blocks"]:
        sub, act = seq_flops(block["subnet"], shape)
        clf, _ = seq_flops(block["classifier"], act)
        com, _ = seq_flops(commitment_specs(classes), act)
        rows.append({"subnet": sub, "classifier": clf, "commitment": com})
        shape = act
    return rows


def exit_path_flops(arch, i):
    """Cost of inference that leaves at exit i: subnets up to i plus exit i's heads."""
    rows = _block_tables(arch)
    if not 0 <= i < len(rows):
        raise ConfigError(f"exit index {i} outside 0..{len(rows) - 1}")
    return sum(r["subnet"] for r in rows[: i + 1]) + rows[i]["classifier"] + rows[i]["commitment"]


def full_forward_flops(arch, n_blocks=None):
    """Fallback cost: every subnet and every exit head gets evaluated."""
    rows = _block_tables(arch)
    rows = rows if n_blocks is None else rows[:n_blocks]
    return sum(r["subnet"] + r["classifier"] + r["commitment"] for r in rows)


def backbone_forward_flops(arch):
    """End-to-end network cost: all subnets plus only the final classifier."""
    rows = _block_tables(arch)
    return sum(r["subnet"] for r in rows) + rows[-1]["classifier"]


# ---------------------------------------------------------------------------
# per-sample training costs
# ---------------------------------------------------------------------------

def block_train_sample_flops(arch, j):
    """One epoch-sample of block j's classifier phase.

    Frozen blocks before j are forward-only; the block and its classifier
    run forward plus a double-cost backward.
    """
    rows = _block_tables(arch)
    prefix = sum(r["subnet"] for r in rows[:j])
    trainable = rows[j]["subnet"] + rows[j]["classifier"]
    return prefix + 3 * trainable


def commitment_train_sample_flops(arch, j):
    """One epoch-sample of block j's commitment phase (head-only training)."""
    rows = _block_tables(arch)
    prefix = sum(r["subnet"] for r in rows[: j + 1])
    return prefix + 3 * rows[j]["commitment"]


def identify_sample_flops(arch, j):
    """One forward readout of exit j, used to split learned from remaining."""
    return exit_path_flops(arch, j)


def e2e_sample_flops(arch):
    """One epoch-sample of ordinary whole-network training."""
    return 3 * backbone_forward_flops(arch)


def training_flops(arch, records):
    """Total cost of a training run from its phase records.

    Each record: {"phase": "block"|"commitment"|"identify"|"e2e",
                  "block": index or None, "samples": n, "epochs": e}.
    """
    per_sample = {
        "block": lambda j: block_train_sample_flops(arch, j),
        "commitment": lambda j: commitment_train_sample_flops(arch, j),
        "identify": lambda j: identify_sample_flops(arch, j),
        "e2e": lambda j: e2e_sample_flops(arch),
    }
    total = 0
    for rec in records:
        phase = rec["phase"]
        if phase not in per_sample:
            raise ConfigError(f"unknown training phase {phase!r}")
        total += per_sample[phase](rec.get("block")) * int(rec["samples"]) * int(rec.get("epochs", 1))
    return total


# ---------------------------------------------------------------------------
# inference-side summaries
# ---------------------------------------------------------------------------

def expected_inference_cost(arch, exit_fracs, fallback_frac, n_blocks=None):
    """Mean per-sample cost of the exit policy given where samples leave."""
    n = len(arch["blocks"]) if n_blocks is None else n_blocks
    cost = fallback_frac * full_forward_flops(arch, n)
    for i, frac in enumerate(exit_fracs):
        cost += frac * exit_path_flops(arch, i)
    return cost


def cost_report(arch):
    """Everything the accounting knows about an architecture, as a dict."""
    rows = _block_tables(arch)
    return {
        "blocks": rows,
        "exit_path": [exit_path_flops(arch, i) for i in range(len(rows))],
        "full_forward": full_forward_flops(arch),
        "backbone_forward": backbone_forward_flops(arch),
        "e2e_sample": e2e_sample_flops(arch),
    }
