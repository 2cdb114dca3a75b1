"""Adaptive-moment optimizer step.

Kept functional: the caller owns the learning rate (it changes under the
plateau schedule), the parameters own their moment state.
"""

import numpy as np

from .errors import ContractError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def adam_step(params, lr, beta1=BETA1, beta2=BETA2, eps=EPS):
    """Apply one update to every non-frozen parameter, then clear gradients.

    Gradients are validated before anything is mutated, so a non-finite
    gradient aborts the whole step and names the offending parameter.
    """
    live = []
    for p in params:
        if p.grad is None:
            continue
        if not p.frozen:
            if not np.isfinite(p.grad).all():
                raise ContractError(f"non-finite gradient in parameter {p.name!r}")
            live.append(p)

    for p in live:
        p.step += 1
        p.moment1 = beta1 * p.moment1 + (1.0 - beta1) * p.grad
        p.moment2 = beta2 * p.moment2 + (1.0 - beta2) * (p.grad * p.grad)
        m_hat = p.moment1 / (1.0 - beta1 ** p.step)
        v_hat = p.moment2 / (1.0 - beta2 ** p.step)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)

    for p in params:
        p.grad = None
