"""Training and unlearning procedures.

Exact methods (``pretrain``, ``retrain``, ``group_dro_retrain``) train from a
fresh initialization with a per-step warmup + cosine schedule. Approximate
methods start from a frozen original checkpoint, work on a clone and use a
per-epoch cosine schedule without warmup.

Random streams are keyed by ``(seed, purpose)`` so that, for example, the
remaining-set sampler of MIU consumes exactly the same draws as plain
fine-tuning; this is what makes the reduction identities bitwise.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    GroupedDataset,
    batches_per_epoch,
    group_frequencies,
    reweight_alpha,
    round_half_up,
    sampling_distribution,
    shuffled_batches,
    weighted_batches,
)
from .mine import MarginalRule, MiBatch, draw_marginal, mine_objective, mine_value, tune_mine
from .models import (
    ModelCheckpoint,
    ModelShape,
    backward_model,
    features,
    forward_model,
    init_mine,
    predict_logits,
)
from .numeric import (
    ParameterSet,
    ScheduleState,
    clip_grad_norm,
    kl_divergence,
    lr_at,
    per_example_cross_entropy,
    sgd_step,
    softmax_cross_entropy,
)

logger = logging.getLogger(__name__)

# random stream identifiers
_INIT, _SAMPLER, _FORGET, _MINE, _LABELS = range(5)


def _stream(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, purpose])


class TrainingError(RuntimeError):
    pass


class UnlearnConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    warmup_epochs: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise UnlearnConfigError("epochs must be non-negative")


def finetune_config(**overrides) -> TrainConfig:
    """Defaults for the approximate methods: 10 epochs, no warmup."""
    base = dict(epochs=10, lr=0.01, warmup_epochs=0)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class MiuConfig:
    train: TrainConfig = field(default_factory=lambda: finetune_config(lr=0.01))
    forget_epochs: int = 5
    lam: float = 1.0
    mine_steps_first: int = 100
    mine_steps_rest: int = 10
    mine_lr: float = 0.1
    mine_batch_size: int = 256
    mine_hidden: int = 100
    forget_lr: float | None = None
    forget_batch_size: int | None = None
    clip_norm: float | None = 5.0
    reweight: bool = True
    rule: MarginalRule = MarginalRule.UNIFORM
    retain_term: bool = True
    unlearn_term: bool = True

    def validate(self) -> None:
        if self.lam < 0:
            raise UnlearnConfigError("lambda must be non-negative")
        if self.forget_epochs > self.train.epochs:
            raise UnlearnConfigError("forget_epochs cannot exceed total epochs")
        if not (self.retain_term or self.unlearn_term or self.lam > 0):
            raise UnlearnConfigError("at least one MIU term must be active")


# ---------------------------------------------------------------------------
# shared machinery


def _check_loss(loss: float, step: int) -> None:
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss} at step {step}")


def _apply(model: ModelCheckpoint, grads, lr: float, cfg: TrainConfig, masks=None) -> None:
    gb, gh = grads
    sgd_step(model.backbone, gb, lr, cfg.momentum, cfg.weight_decay, masks)
    sgd_step(model.head, gh, lr, cfg.momentum, cfg.weight_decay, masks)


def _clip_pair(gb: ParameterSet, gh: ParameterSet, max_norm: float | None) -> None:
    """Joint global-norm clip of backbone and head gradients."""
    if max_norm is None:
        return
    norm = math.hypot(clip_grad_norm(gb, None), clip_grad_norm(gh, None))
    if norm > max_norm:
        for grads in (gb, gh):
            for _, g in grads.tensors():
                g *= max_norm / norm


def _ce_grads(model: ModelCheckpoint, x, y):
    cache, logits = forward_model(model, x)
    loss, dlogits = softmax_cross_entropy(logits, y)
    return loss, cache, dlogits


def _epoch_batches(n: int, cfg: TrainConfig, rng, probabilities):
    if probabilities is None:
        return shuffled_batches(n, cfg.batch_size, rng)
    return weighted_batches(probabilities, cfg.batch_size, batches_per_epoch(n, cfg.batch_size), rng)


def reweight_probabilities(remaining: GroupedDataset, nu_train: np.ndarray) -> np.ndarray:
    alpha = reweight_alpha(nu_train, group_frequencies(remaining))
    return sampling_distribution(remaining, alpha)


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    return lr_at(ScheduleState(cfg.lr, cfg.warmup_epochs, cfg.epochs, 1, epoch))


def _require_nonempty(ds: GroupedDataset, what: str) -> None:
    if len(ds) == 0:
        raise TrainingError(f"{what} is empty")


# ---------------------------------------------------------------------------
# exact training


def _fit_from_scratch(
    ds: GroupedDataset,
    cfg: TrainConfig,
    shape: ModelShape | None,
    probabilities: np.ndarray | None,
    role: str,
    dro_eta: float | None = None,
) -> ModelCheckpoint:
    _require_nonempty(ds, "training set")
    shape = shape or ModelShape(in_dim=ds.dim, num_classes=ds.num_classes)
    model = ModelCheckpoint.init(shape, _stream(cfg.seed, _INIT))
    rng = _stream(cfg.seed, _SAMPLER)
    spe = batches_per_epoch(len(ds), cfg.batch_size)
    schedule = ScheduleState(cfg.lr, cfg.warmup_epochs, cfg.epochs, spe)
    dro = GroupDroWeights(ds.num_groups, dro_eta) if dro_eta is not None else None
    groups = ds.g
    for _ in range(cfg.epochs):
        for idx in _epoch_batches(len(ds), cfg, rng, probabilities):
            lr = lr_at(schedule)
            x, y = ds.x[idx], ds.y[idx]
            loss, cache, dlogits = _ce_grads(model, x, y)
            if dro is not None:
                scale = dro.scale(groups[idx], per_example_cross_entropy(cache.head.pre_activations[-1], y))
                dlogits = dlogits * scale[:, None]
            _check_loss(loss, schedule.current_step)
            _apply(model, backward_model(model, cache, dlogits), lr, cfg)
            schedule.current_step += 1
    model.role = role
    return model


def pretrain(train_ds: GroupedDataset, cfg: TrainConfig, shape: ModelShape | None = None) -> ModelCheckpoint:
    """Supervised training on the full training set (momentum SGD, warmup + cosine)."""
    return _fit_from_scratch(train_ds, cfg, shape, None, "pretrained")


def retrain(
    remaining_ds: GroupedDataset,
    cfg: TrainConfig,
    reweight: bool = False,
    nu_train: np.ndarray | None = None,
    shape: ModelShape | None = None,
) -> ModelCheckpoint:
    """Exact unlearning: train from scratch on the remaining set, optionally reweighted."""
    probabilities = None
    if reweight:
        if nu_train is None:
            raise UnlearnConfigError("reweighting needs the training group frequencies")
        probabilities = reweight_probabilities(remaining_ds, nu_train)
    return _fit_from_scratch(remaining_ds, cfg, shape, probabilities, "retrained")


class GroupDroWeights:
    """Exponentiated multiplicative weights over groups, kept on the simplex."""

    def __init__(self, num_groups: int, eta: float):
        self.num_groups = num_groups
        self.eta = eta
        self.log_weights = np.zeros(num_groups)
        self.weights = np.full(num_groups, 1.0 / num_groups)

    def update(self, group_losses: dict[int, float]) -> np.ndarray:
        # w[g] *= exp(eta * loss), renormalised; kept in log space so large eta cannot overflow
        for g, loss in group_losses.items():
            self.log_weights[g] += self.eta * loss
        self.log_weights -= self.log_weights.max()
        w = np.exp(self.log_weights)
        self.weights = w / w.sum()
        return self.weights

    def scale(self, groups: np.ndarray, losses: np.ndarray) -> np.ndarray:
        """Update from a batch and return the per-example loss multipliers ``|G| * w[g]``."""
        present = np.unique(groups)
        self.update({int(g): float(losses[groups == g].mean()) for g in present})
        return self.num_groups * self.weights[groups]


def group_dro_retrain(
    remaining_ds: GroupedDataset,
    cfg: TrainConfig,
    eta: float = 0.01,
    shape: ModelShape | None = None,
) -> ModelCheckpoint:
    """Retrain with online group reweighting of the loss (simplified group-DRO)."""
    return _fit_from_scratch(remaining_ds, cfg, shape, None, "retrained", dro_eta=eta)


# ---------------------------------------------------------------------------
# approximate unlearning


def _start(ckpt_o: ModelCheckpoint) -> ModelCheckpoint:
    model = ckpt_o.clone("unlearned")
    model.reset_momentum()
    return model


def _retain_probabilities(remaining_ds, reweight, nu_train):
    if not reweight:
        return None
    if nu_train is None:
        raise UnlearnConfigError("reweighting needs the training group frequencies")
    return reweight_probabilities(remaining_ds, nu_train)


def finetune(
    ckpt_o: ModelCheckpoint,
    remaining_ds: GroupedDataset,
    cfg: TrainConfig,
    reweight: bool = False,
    nu_train: np.ndarray | None = None,
) -> ModelCheckpoint:
    """Plain fine-tuning of the original model on the remaining set."""
    return l1_sparse(ckpt_o, remaining_ds, 0.0, cfg, reweight, nu_train)


def l1_gamma(gamma: float, epoch: int, total_epochs: int) -> float:
    return (1.0 - epoch / total_epochs) * gamma


def _soft_threshold(params: ParameterSet, amount: float) -> None:
    for _, arr in params.tensors():
        arr[...] = np.sign(arr) * np.maximum(np.abs(arr) - amount, 0.0)


def l1_sparse(
    ckpt_o: ModelCheckpoint,
    remaining_ds: GroupedDataset,
    gamma: float,
    cfg: TrainConfig,
    reweight: bool = False,
    nu_train: np.ndarray | None = None,
) -> ModelCheckpoint:
    """Fine-tune on the remaining set with a linearly decaying L1 penalty.

    The penalty is applied as a proximal (soft-threshold) step after each SGD
    step, which is what produces exact zeros.
    """
    if gamma < 0:
        raise UnlearnConfigError("gamma must be non-negative")
    _require_nonempty(remaining_ds, "remaining set")
    model = _start(ckpt_o)
    probabilities = _retain_probabilities(remaining_ds, reweight, nu_train)
    rng = _stream(cfg.seed, _SAMPLER)
    step = 0
    for epoch in range(cfg.epochs):
        lr = _epoch_lr(cfg, epoch)
        gamma_t = l1_gamma(gamma, epoch, cfg.epochs)
        for idx in _epoch_batches(len(remaining_ds), cfg, rng, probabilities):
            loss, cache, dlogits = _ce_grads(model, remaining_ds.x[idx], remaining_ds.y[idx])
            _check_loss(loss, step)
            _apply(model, backward_model(model, cache, dlogits), lr, cfg)
            if gamma_t > 0:
                _soft_threshold(model.backbone, lr * gamma_t)
                _soft_threshold(model.head, lr * gamma_t)
            step += 1
    return model


def saliency_mask(
    model: ModelCheckpoint, forget_ds: GroupedDataset, prune_fraction: float
) -> dict[str, np.ndarray]:
    """Keep the ``prune_fraction`` of parameters with the largest forget-set CE gradient."""
    if not 0.0 < prune_fraction <= 1.0:
        raise UnlearnConfigError("prune fraction must lie in (0, 1]")
    _, cache, dlogits = _ce_grads(model, forget_ds.x, forget_ds.y)
    gb, gh = backward_model(model, cache, dlogits)
    keys, arrays = [], []
    for params in (gb, gh):
        for key, arr in params.tensors():
            keys.append(key)
            arrays.append(arr)
    flat = np.abs(np.concatenate([a.ravel() for a in arrays]))
    k = round_half_up(prune_fraction * flat.size)
    keep = np.zeros(flat.size, dtype=bool)
    keep[np.argsort(-flat, kind="stable")[:k]] = True
    masks, offset = {}, 0
    for key, arr in zip(keys, arrays):
        masks[key] = keep[offset : offset + arr.size].reshape(arr.shape).astype(np.float64)
        offset += arr.size
    return masks


def salun_lite(
    ckpt_o: ModelCheckpoint,
    remaining_ds: GroupedDataset,
    forget_ds: GroupedDataset,
    cfg: TrainConfig,
    prune_fraction: float = 0.5,
    reweight: bool = False,
    nu_train: np.ndarray | None = None,
) -> ModelCheckpoint:
    """Saliency-masked random-label forgetting alternated with remaining-set passes."""
    _require_nonempty(forget_ds, "forget set")
    model = _start(ckpt_o)
    masks = saliency_mask(model, forget_ds, prune_fraction)
    probabilities = _retain_probabilities(remaining_ds, reweight, nu_train)
    rng = _stream(cfg.seed, _SAMPLER)
    frng = _stream(cfg.seed, _FORGET)
    lrng = _stream(cfg.seed, _LABELS)
    step = 0
    for epoch in range(cfg.epochs):
        lr = _epoch_lr(cfg, epoch)
        for idx in shuffled_batches(len(forget_ds), cfg.batch_size, frng):
            random_labels = lrng.integers(0, model.num_classes, size=len(idx))
            loss, cache, dlogits = _ce_grads(model, forget_ds.x[idx], random_labels)
            _check_loss(loss, step)
            _apply(model, backward_model(model, cache, dlogits), lr, cfg, masks)
            step += 1
        for idx in _epoch_batches(len(remaining_ds), cfg, rng, probabilities):
            loss, cache, dlogits = _ce_grads(model, remaining_ds.x[idx], remaining_ds.y[idx])
            _check_loss(loss, step)
            _apply(model, backward_model(model, cache, dlogits), lr, cfg, masks)
            step += 1
    return model


def scrub_lite(
    ckpt_o: ModelCheckpoint,
    remaining_ds: GroupedDataset,
    forget_ds: GroupedDataset,
    cfg: TrainConfig,
    stop_epoch: int = 5,
    ce_weight: float = 0.99,
    kl_weight: float = 0.001,
    reweight: bool = False,
    nu_train: np.ndarray | None = None,
) -> ModelCheckpoint:
    """Teacher-student unlearning: push away from the original on the forget set,
    stay close to it (and to the labels) on the remaining set."""
    if stop_epoch > cfg.epochs:
        raise UnlearnConfigError("stop_epoch exceeds the number of epochs")
    model = _start(ckpt_o)
    teacher = ckpt_o
    probabilities = _retain_probabilities(remaining_ds, reweight, nu_train)
    rng = _stream(cfg.seed, _SAMPLER)
    frng = _stream(cfg.seed, _FORGET)
    step = 0
    for epoch in range(cfg.epochs):
        lr = _epoch_lr(cfg, epoch)
        if epoch < stop_epoch and len(forget_ds):
            for idx in shuffled_batches(len(forget_ds), cfg.batch_size, frng):
                x = forget_ds.x[idx]
                cache, logits = forward_model(model, x)
                kl, dkl = kl_divergence(predict_logits(teacher, x), logits)
                _check_loss(kl, step)
                _apply(model, backward_model(model, cache, -dkl), lr, cfg)
                step += 1
        for idx in _epoch_batches(len(remaining_ds), cfg, rng, probabilities):
            x, y = remaining_ds.x[idx], remaining_ds.y[idx]
            cache, logits = forward_model(model, x)
            ce, dce = softmax_cross_entropy(logits, y)
            kl, dkl = kl_divergence(predict_logits(teacher, x), logits)
            _check_loss(ce_weight * ce + kl_weight * kl, step)
            _apply(model, backward_model(model, cache, ce_weight * dce + kl_weight * dkl), lr, cfg)
            step += 1
    return model


def _mine_steps(cfg: MiuConfig, epoch: int) -> int:
    return cfg.mine_steps_first if epoch == 0 else cfg.mine_steps_rest


def miu(
    ckpt_o: ModelCheckpoint,
    train_ds: GroupedDataset,
    remaining_ds: GroupedDataset,
    forget_ds: GroupedDataset,
    cfg: MiuConfig,
    nu_train: np.ndarray | None = None,
) -> ModelCheckpoint:
    """Mutual-information-aware unlearning.

    Per epoch: refresh the working estimator on the current features of the
    training set; during the first ``forget_epochs`` epochs descend the MI
    estimate on the forget set (backbone only); then take retain steps on the
    (optionally reweighted) remaining set minimising
    ``CE + lam * (MI_unlearned - MI_original)**2``.
    """
    cfg.validate()
    tcfg = cfg.train
    if cfg.unlearn_term and cfg.forget_epochs > 0:
        _require_nonempty(forget_ds, "forget set")
    num_groups = train_ds.num_groups
    nu_train = group_frequencies(train_ds) if nu_train is None else nu_train
    model = _start(ckpt_o)
    original = ckpt_o
    probabilities = _retain_probabilities(remaining_ds, cfg.reweight, nu_train)
    rng = _stream(tcfg.seed, _SAMPLER)
    frng = _stream(tcfg.seed, _FORGET)
    mrng = _stream(tcfg.seed, _MINE)

    forgetting = cfg.unlearn_term and cfg.forget_epochs > 0
    calibrating = cfg.lam > 0
    psi = psi_o = None
    train_groups = train_ds.g
    if forgetting or calibrating:
        psi_o = init_mine(model.z_dim, num_groups, cfg.mine_hidden, mrng)
        tune_mine(
            psi_o, original.backbone, train_ds.x, train_groups, num_groups,
            cfg.mine_steps_first, cfg.mine_batch_size, cfg.mine_lr, cfg.rule, mrng,
        )
        psi = psi_o.copy()
        psi.reset_momentum()

    forget_groups = forget_ds.g
    remaining_groups = remaining_ds.g
    forget_lr_scale = 1.0 if cfg.forget_lr is None else cfg.forget_lr / tcfg.lr
    step = 0
    for epoch in range(tcfg.epochs):
        lr = _epoch_lr(tcfg, epoch)
        if psi is not None:
            tune_mine(
                psi, model.backbone, train_ds.x, train_groups, num_groups,
                _mine_steps(cfg, epoch), cfg.mine_batch_size, cfg.mine_lr, cfg.rule, mrng,
            )
        if forgetting and epoch < cfg.forget_epochs:
            for idx in shuffled_batches(len(forget_ds), cfg.forget_batch_size or tcfg.batch_size, frng):
                cache, _ = forward_model(model, forget_ds.x[idx])
                g = forget_groups[idx]
                batch = MiBatch(cache.z, g, draw_marginal(g, cfg.rule, num_groups, mrng))
                value, _, dz = mine_objective(psi, batch, num_groups)
                _check_loss(value, step)
                step += 1
                if value <= 0.0:
                    # MI is non-negative; below zero the estimate has nothing left to remove
                    continue
                gb, _ = backward_model(model, cache, None, dz)
                clip_grad_norm(gb, cfg.clip_norm)
                sgd_step(model.backbone, gb, lr * forget_lr_scale, tcfg.momentum, tcfg.weight_decay)
        for idx in _epoch_batches(len(remaining_ds), tcfg, rng, probabilities):
            x, y = remaining_ds.x[idx], remaining_ds.y[idx]
            cache, logits = forward_model(model, x)
            loss, dlogits = 0.0, None
            if cfg.retain_term:
                loss, dlogits = softmax_cross_entropy(logits, y)
            grad_z = None
            if calibrating:
                g = remaining_groups[idx]
                g_bar = draw_marginal(g, cfg.rule, num_groups, mrng)
                mi_u, _, dz = mine_objective(psi, MiBatch(cache.z, g, g_bar), num_groups)
                mi_o = mine_value(psi_o, MiBatch(features(original.backbone, x), g, g_bar), num_groups)
                gap = mi_u - mi_o
                loss += cfg.lam * gap * gap
                grad_z = (2.0 * cfg.lam * gap) * dz
            _check_loss(loss, step)
            gb, gh = backward_model(model, cache, dlogits, grad_z)
            if calibrating:
                _clip_pair(gb, gh, cfg.clip_norm)
            _apply(model, (gb, gh), lr, tcfg)
            step += 1
    return model
