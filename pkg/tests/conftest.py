"""Shared fixtures.

The heavyweight acceptance checks all ride on one cascaded run and one
end-to-end run over the same data and backbone, so those are trained once
per session here and handed to every test that needs them.

Data resolution order for the desk-scale MLP run:

  1. MNIST IDX files under $QUICKNET_MNIST_DIR
  2. MNIST IDX files under ./data/mnist (relative to the repo root)
  3. the scikit-learn handwritten digits set (1797 real 8x8 digit scans,
     bundled with sklearn, no download) as an offline surrogate

When MNIST itself is present, a stratified 20,000-sample training subset is
used unless QUICKNET_FULL_MNIST=1 asks for the full 60,000. Tests that
assert dataset-specific accuracy floors check which substrate they got and
skip (with the measured numbers in the reason) when the floor does not
apply to the surrogate.
"""

import os
import time

import numpy as np
import pytest

import quicknet as qn
from quicknet.training import TrainConfig, train_end2end, train_quicknet

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

MNIST_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def find_mnist():
    """Directory holding the four MNIST IDX files (plain or gzipped), or None."""
    roots = []
    env = os.environ.get("QUICKNET_MNIST_DIR")
    if env:
        roots.append(env)
    roots.append(os.path.join(REPO_ROOT, "data", "mnist"))
    for root in roots:
        resolved = []
        for name in MNIST_FILES:
            for suffix in ("", ".gz"):
                path = os.path.join(root, name + suffix)
                if os.path.exists(path):
                    resolved.append(path)
                    break
        if len(resolved) == len(MNIST_FILES):
            return resolved
    return None


def load_digits_surrogate():
    """The sklearn handwritten-digits set as train/test Datasets."""
    from sklearn.datasets import load_digits

    raw = load_digits()
    inputs = (raw.images / 16.0).reshape(-1, 1, 8, 8)
    ds = qn.Dataset(
        inputs=inputs,
        labels=raw.target.astype(np.int64),
        num_classes=10,
        provenance="sklearn-digits",
    )
    return qn.split(ds, 0.8, seed=3)


@pytest.fixture(scope="session")
def substrate():
    """Train/test data plus the 3-block 150-unit MLP over it."""
    found = find_mnist()
    if found:
        train = qn.load_idx(found[0], found[1])
        test = qn.load_idx(found[2], found[3])
        if os.environ.get("QUICKNET_FULL_MNIST") == "1":
            floor = 0.97
            label = "mnist-full"
        else:
            train, _ = qn.split(train, 20000 / len(train), seed=3)
            floor = 0.95
            label = "mnist-20k"
    else:
        train, test = load_digits_surrogate()
        floor = None
        label = "sklearn-digits"
    input_dim = int(np.prod(train.inputs.shape[1:]))
    arch = qn.mlp_arch(input_dim=input_dim, width=150, blocks=3, classes=10)
    return {
        "train": train,
        "test": test,
        "arch": arch,
        "label": label,
        "floor": floor,
        "is_mnist": found is not None,
    }


RUN_SEED = 29
RUN_THRESHOLD = 0.9
RUN_BATCH = 32


def run_config():
    return TrainConfig(seed=RUN_SEED, threshold=RUN_THRESHOLD, batch_size=RUN_BATCH)


@pytest.fixture(scope="session")
def cascade_run(substrate):
    """The block-wise cascaded training run the acceptance criteria examine."""
    net = qn.QuickNet(substrate["arch"], seed=RUN_SEED)
    cfg = run_config()
    t0 = time.time()
    result = train_quicknet(net, substrate["train"], cfg, eval_dataset=substrate["test"])
    return {"net": net, "result": result, "cfg": cfg, "seconds": time.time() - t0}


@pytest.fixture(scope="session")
def e2e_run(substrate):
    """The jointly trained baseline on the same backbone and data."""
    net = qn.QuickNet(substrate["arch"], seed=RUN_SEED)
    cfg = run_config()
    t0 = time.time()
    result = train_end2end(net, substrate["train"], cfg, eval_dataset=substrate["test"])
    return {"net": net, "result": result, "cfg": cfg, "seconds": time.time() - t0}


def policy_accuracy(net, dataset, threshold, n_blocks=None, use_commitment=True):
    out = qn.evaluate_policy(
        net,
        dataset.inputs_for(net.input_shape),
        threshold,
        use_commitment=use_commitment,
        n_blocks=n_blocks,
    )
    return float((out["pred"] == dataset.labels).mean()), out
