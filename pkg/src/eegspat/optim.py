"""Adam optimization, the hyperbolic learning-rate decay, loss functions,
and the combined L1-L2 weight penalty."""

from dataclasses import dataclass, field

import numpy as np

from .errors import LabelError, TrainingError

LOG_CLIP = 1e-12


@dataclass
class JointLossConfig:
    """Weights of the two task losses in the multi-task combination."""

    alpha1: float = 0.6  # relative-location weight
    alpha2: float = 0.4  # attended-location weight

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0 or self.alpha1 + self.alpha2 <= 0:
            raise TrainingError("joint-loss weights must be non-negative, sum > 0")


@dataclass
class RegConfig:
    """L1-L2 penalty applied to convolution kernels and dense weights only;
    biases, batch-norm scalars, and embeddings are excluded."""

    lam_l1: float = 0.001
    lam_l2: float = 0.001

    @staticmethod
    def is_regularized(param_name: str) -> bool:
        return param_name.endswith("/kernel") or param_name.endswith("/weight")


class AdamState:
    """Per-parameter first/second moment buffers plus the step counter."""

    def __init__(self, named_params, lr0=0.01, decay=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr0 = lr0
        self.decay = decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in named_params}
        self.v = {name: np.zeros_like(p) for name, p in named_params}


def lr_schedule(lr0, decay, epoch):
    """Hyperbolic per-epoch decay: lr0 / (1 + decay * epoch)."""
    return lr0 / (1.0 + decay * epoch)


def adam_step(named_params, named_grads, state: AdamState, lr=None):
    """One bias-corrected Adam update, in place on the parameter arrays."""
    if lr is None:
        lr = state.lr0
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    grads = dict(named_grads)
    for name, p in named_params:
        g = grads[name]
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p -= update.reshape(p.shape)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _check_onehot(target):
    target = np.asarray(target, dtype=np.float64)
    rows_ok = np.all(np.isin(target, (0.0, 1.0))) and np.all(target.sum(axis=-1) == 1.0)
    if not rows_ok:
        raise LabelError("target is not one-hot")
    return target


def categorical_ce(probs, target):
    """Mean cross-entropy over the batch plus the gradient on the
    probability simplex; probabilities are clipped before the log."""
    target = _check_onehot(target)
    probs = np.asarray(probs, dtype=np.float64)
    p = np.clip(probs, LOG_CLIP, 1.0 - LOG_CLIP)
    n = probs.shape[0] if probs.ndim > 1 else 1
    loss = -(target * np.log(p)).sum() / n
    grad = -(target / p) / n
    return loss, grad


def binary_ce(scores, target):
    """Per-unit binary cross-entropy averaged over the output units and the
    batch, for a two-unit sigmoid head with one-hot targets."""
    target = _check_onehot(target)
    scores = np.asarray(scores, dtype=np.float64)
    s = np.clip(scores, LOG_CLIP, 1.0 - LOG_CLIP)
    n_units = scores.shape[-1]
    n = scores.shape[0] if scores.ndim > 1 else 1
    loss = -(target * np.log(s) + (1 - target) * np.log(1 - s)).sum() / (n * n_units)
    grad = (-(target / s) + (1 - target) / (1 - s)) / (n * n_units)
    return loss, grad


def joint_loss(loss1, loss2, cfg: JointLossConfig):
    """Linear combination alpha1 * L1 + alpha2 * L2 of the two task losses.

    Regularization penalties are added by the caller once, not per task.
    """
    if not (np.isfinite(loss1) and np.isfinite(loss2)):
        raise TrainingError("joint loss requires finite task losses")
    return cfg.alpha1 * loss1 + cfg.alpha2 * loss2


def reg_penalty(named_params, cfg: RegConfig):
    """L1-L2 penalty over the regularized parameter groups.

    Returns (penalty, {name: gradient contribution}); the |w| subgradient
    at zero is taken as zero.
    """
    penalty = 0.0
    grads = {}
    for name, p in named_params:
        if not RegConfig.is_regularized(name):
            continue
        penalty += cfg.lam_l1 * np.abs(p).sum() + cfg.lam_l2 * (p * p).sum()
        grads[name] = cfg.lam_l1 * np.sign(p) + 2.0 * cfg.lam_l2 * p
    return penalty, grads
