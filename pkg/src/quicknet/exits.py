"""Entropy confidence and the early-exit inference policy.

The confidence of a class distribution is one minus its normalized entropy,
so it lives in [0, 1] with 1 for a one-hot prediction and 0 for uniform.
Inference walks the exits in order and stops at the first one that is both
confident (strictly above the threshold) and commitment-positive; when none
qualifies, the prediction of the most confident exit wins at full-network
cost, ties resolved toward the earliest exit.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


def confidence_rows(probabilities):
    """Vectorized 1 - normalized entropy for rows of a (batch, C) array."""
    p = probabilities
    c = p.shape[-1]
    if c == 1:
        return np.ones(p.shape[:-1], dtype=p.dtype)
    plogp = np.where(p > 0, p * np.log(np.clip(p, 1e-300, None)), 0.0)
    return 1.0 + plogp.sum(axis=-1) / np.log(c)


def confidence(probabilities):
    """Confidence of one probability vector, with contract checks."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 1:
        raise ContractError(f"confidence expects a vector, got shape {p.shape}")
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise ContractError("confidence requires a valid probability distribution")
    return float(confidence_rows(p[None, :])[0])


def choose_exit(confidences, commitment_positive, threshold):
    """First exit with confidence > threshold and positive commitment.

    Returns (exit_index, used_fallback). With no qualifying exit the most
    confident one wins (earliest index on ties) and used_fallback is True.
    """
    confidences = list(confidences)
    for i, (conf, pos) in enumerate(zip(confidences, commitment_positive)):
        if conf > threshold and pos:
            return i, False
    return int(np.argmax(confidences)), True


@dataclass
class ExitDecision:
    exit_index: int
    used_fallback: bool
    confidences: list
    predicted_class: int
    flops: int


def worker_count():
    """Evaluation parallelism; QUICKNET_THREADS=1 (default) is the reference mode."""
    raw = os.environ.get("QUICKNET_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _policy_chunk(net, inputs, threshold, use_commitment, n_blocks, path_flops, full_flops):
    n = inputs.shape[0]
    chosen = np.full(n, -1, dtype=np.int64)
    fallback = np.zeros(n, dtype=bool)
    preds = np.zeros(n, dtype=np.int64)
    flops = np.zeros(n, dtype=np.int64)

    alive = np.arange(n)
    x = inputs
    conf_hist = np.zeros((n, 0))
    pred_hist = np.zeros((n, 0), dtype=np.int64)
    evaluated = []

    for i in range(n_blocks):
        if alive.size == 0:
            evaluated.append(0)
            continue
        evaluated.append(int(alive.size))
        x_i, exit_batch = net.forward_block(i, x)
        conf = exit_batch.confidence
        pred = exit_batch.logits.argmax(axis=1)
        conf_hist = np.column_stack([conf_hist, conf])
        pred_hist = np.column_stack([pred_hist, pred])

        taken = conf > threshold
        if use_commitment:
            taken &= exit_batch.commitment_positive
        idx = alive[taken]
        chosen[idx] = i
        preds[idx] = pred[taken]
        flops[idx] = path_flops[i]

        keep = ~taken
        alive = alive[keep]
        x = x_i.data[keep]
        conf_hist = conf_hist[keep]
        pred_hist = pred_hist[keep]

    if alive.size:
        best = conf_hist.argmax(axis=1)
        rows = np.arange(alive.size)
        chosen[alive] = best
        preds[alive] = pred_hist[rows, best]
        fallback[alive] = True
        flops[alive] = full_flops
        conf_rows = conf_hist
    else:
        conf_rows = None

    return {
        "exit": chosen,
        "fallback": fallback,
        "pred": preds,
        "flops": flops,
        "evaluated": evaluated,
        "_conf_tail": conf_rows,
        "_alive_tail": alive,
    }


def evaluate_policy(net, inputs, threshold, use_commitment=True, n_blocks=None):
    """Run the exit rule over a batch; returns per-sample decision arrays.

    n_blocks limits the cascade to a trained prefix (default: every block).
    Requires the evaluated blocks to be frozen.
    """
    from . import costs  # deferred; costs sits above this module in the import graph

    n_blocks = len(net.blocks) if n_blocks is None else int(n_blocks)
    if n_blocks < 1 or n_blocks > len(net.blocks):
        raise ContractError(f"n_blocks {n_blocks} outside 1..{len(net.blocks)}")
    for i in range(n_blocks):
        if not net.blocks[i].frozen:
            raise ContractError(f"inference requires frozen blocks; block {i} is trainable")

    path_flops = [costs.exit_path_flops(net.arch, i) for i in range(n_blocks)]
    full_flops = costs.full_forward_flops(net.arch, n_blocks)

    workers = worker_count()
    if workers == 1 or inputs.shape[0] < 2 * workers:
        out = _policy_chunk(net, inputs, threshold, use_commitment, n_blocks, path_flops, full_flops)
        net.record_evaluations(out.pop("evaluated"))
        out.pop("_conf_tail")
        out.pop("_alive_tail")
        return out

    bounds = np.linspace(0, inputs.shape[0], workers + 1).astype(int)
    chunks = [inputs[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(
            pool.map(
                lambda c: _policy_chunk(net, c, threshold, use_commitment, n_blocks, path_flops, full_flops),
                chunks,
            )
        )
    merged = {
        key: np.concatenate([r[key] for r in results])
        for key in ("exit", "fallback", "pred", "flops")
    }
    counts = [r["evaluated"] for r in results]
    net.record_evaluations([sum(c[i] for c in counts) for i in range(n_blocks)])
    return merged


def decide_and_infer(net, x, threshold, use_commitment=True, n_blocks=None):
    """Single-sample exit decision with the per-exit confidences seen on the way."""
    x = np.asarray(x)
    single = x[None, ...]
    n_blocks = len(net.blocks) if n_blocks is None else int(n_blocks)
    result = evaluate_policy(net, single, threshold, use_commitment, n_blocks)

    # Replay the visited exits to report their confidences.
    confs = []
    cur = single
    last = n_blocks - 1 if result["fallback"][0] else int(result["exit"][0])
    for i in range(last + 1):
        cur_t, exit_batch = net.forward_block(i, cur)
        confs.append(float(exit_batch.confidence[0]))
        cur = cur_t.data

    return ExitDecision(
        exit_index=int(result["exit"][0]),
        used_fallback=bool(result["fallback"][0]),
        confidences=confs,
        predicted_class=int(result["pred"][0]),
        flops=int(result["flops"][0]),
    )


def threshold_sweep(net, inputs, labels, thresholds, modes=("confidence", "confidence+commitment"),
                    n_blocks=None):
    """Accuracy / mean-FLOPs / exit-histogram rows over thresholds and modes.

    Thresholds are evaluated in ascending order; rows are dicts ready for CSV.
    """
    thresholds = sorted(float(t) for t in thresholds)
    if not thresholds:
        raise ContractError("threshold_sweep needs at least one threshold")
    n_blocks = len(net.blocks) if n_blocks is None else int(n_blocks)
    labels = np.asarray(labels)

    rows = []
    for mode in modes:
        use_commitment = mode == "confidence+commitment"
        for t in thresholds:
            res = evaluate_policy(net, inputs, t, use_commitment, n_blocks)
            n = labels.shape[0]
            accuracy = float((res["pred"] == labels).mean())
            row = {
                "mode": mode,
                "threshold": t,
                "accuracy": accuracy,
                "mean_flops": float(res["flops"].mean()),
            }
            non_fallback = ~res["fallback"]
            for i in range(n_blocks):
                row[f"exit_{i}_frac"] = float(((res["exit"] == i) & non_fallback).sum() / n)
            row["fallback_frac"] = float(res["fallback"].mean())
            rows.append(row)
    return rows
