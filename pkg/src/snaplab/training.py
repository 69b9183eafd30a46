"""Joint training of classifier weights and the noise shape.

Every epoch runs one pass of the base adversarial-training method against the
full noisy network. Every ``update_freq`` epochs (1-based: epochs U, 2U, ...)
the per-direction noise variances are re-allocated from l2-PGD perturbations
of a fresh random subset of the training data.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .attacks import AttackSpec, fgsm, run_attack
from .data import Dataset, subset
from .errors import ConfigError
from .models import SGD, lr_schedule
from .noise import SnapNet, accumulate_projections, init_sigma
from .rng import as_rng

log = logging.getLogger(__name__)

BASES = ("pgd", "fgsm", "vanilla")


def default_update_attack():
    return AttackSpec("l2", 1.8, steps=10, restarts=1, eot_samples=4, rand_init=False)


def default_base_attack():
    return AttackSpec("linf", 0.1, alpha=0.025, steps=10, restarts=1)


@dataclass
class TrainSpec:
    base: str = "pgd"
    epochs: int = 30
    batch_size: int = 50
    lr_kind: str = "step"
    base_lr: float = 0.1
    milestones: tuple = ()
    momentum: float = 0.9
    weight_decay: float = 5e-4
    update_freq: int = 10
    update_subset_fraction: float = 0.2
    update_batch_size: int = 256  # crafting only, so it does not change the update
    update_attack: AttackSpec = field(default_factory=default_update_attack)
    base_attack: AttackSpec = field(default_factory=default_base_attack)
    train_n0: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.base not in BASES:
            raise ConfigError(f"unknown base method {self.base!r}; expected one of {BASES}")
        if self.epochs < 1 or self.batch_size < 1 or self.update_batch_size < 1:
            raise ConfigError("epochs and batch sizes must be >= 1")
        if self.update_freq < 1:
            raise ConfigError("update_freq must be >= 1")
        if not 0 < self.update_subset_fraction <= 1:
            raise ConfigError("update_subset_fraction must lie in (0, 1]")
        if self.base != "vanilla" and self.base_attack.norm != "linf":
            raise ConfigError("the base attack must be linf-bounded")
        if self.update_attack.norm != "l2":
            raise ConfigError("the noise update attack must be l2-bounded")
        if self.train_n0 < 1:
            raise ConfigError("train_n0 must be >= 1")
        self.milestones = tuple(int(m) for m in self.milestones)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class TrainResult:
    net: SnapNet
    history: list
    updates: list


def _lr(spec: TrainSpec, epoch, batch_index, n_batches):
    if spec.lr_kind == "cyclic":
        # batch midpoints keep the rate strictly positive at both ends of the triangle
        return lr_schedule("cyclic", (epoch - 1) + (batch_index + 0.5) / n_batches, spec.epochs, spec.base_lr)
    return lr_schedule(spec.lr_kind, epoch - 1, spec.epochs, spec.base_lr, spec.milestones)


def craft_base_batch(net: SnapNet, xb, yb, spec: TrainSpec, rng):
    """Adversarial inputs for one minibatch (clean inputs for the vanilla base)."""
    if spec.base == "vanilla":
        return np.asarray(xb, dtype=np.float64)
    atk = spec.base_attack
    if spec.base == "fgsm":
        return fgsm(net, xb, yb, atk.eps, atk.alpha, rng, eot_samples=spec.train_n0, box=atk.box).x_adv
    return run_attack(net, xb, yb, atk.with_(restarts=1, eot_samples=spec.train_n0), rng).x_adv


def base_at_epoch(net: SnapNet, data: Dataset, spec: TrainSpec, rng, epoch=1, optimizer=None):
    """One epoch of the base method; returns (mean train loss, last lr)."""
    rng = as_rng(rng).child("epoch", epoch)
    optimizer = optimizer or SGD(net.base.parameters(), spec.momentum, spec.weight_decay)
    order = rng.child("shuffle").generator().permutation(len(data))
    n_batches = -(-len(data) // spec.batch_size)
    losses, lr = [], spec.base_lr
    for b, (xb, yb) in enumerate(data.batches(spec.batch_size, order)):
        x_adv = craft_base_batch(net, xb, yb, spec, rng.child("attack", b))
        noise_gen = rng.child("noise", b).generator()
        logits = net.averaged_logits(np.asarray(x_adv, dtype=net.dtype), spec.train_n0, noise_gen)
        loss = T.softmax_cross_entropy(logits, yb)
        T.backward(loss)
        lr = _lr(spec, epoch, b, n_batches)
        optimizer.step(lr)
        losses.append(float(loss.value))
    return float(np.mean(losses)), lr


def snap_update_epoch(net: SnapNet, data: Dataset, spec: TrainSpec, rng, epoch=None):
    """Re-allocate noise variances from l2-PGD perturbations of a random subset.

    Returns the accumulated projections (None when the spec is frozen or has
    zero power, in which case sigma is left untouched).
    """
    noise = net.noise
    if noise.frozen or noise.p_noise == 0:
        return None
    rng = as_rng(rng).child("update", 0 if epoch is None else epoch)
    part = subset(data, rng, fraction=spec.update_subset_fraction)
    gamma = np.zeros(noise.dim)
    for b, (xb, yb) in enumerate(part.batches(spec.update_batch_size)):
        pert = run_attack(net, xb, yb, spec.update_attack, rng.child("attack", b))
        gamma = accumulate_projections(pert.delta, noise.basis, gamma)
    noise.update_from_projections(gamma)
    return gamma


def is_update_epoch(epoch, update_freq):
    return epoch % update_freq == 0


def train(net: SnapNet, data: Dataset, spec: TrainSpec, rng=None, on_epoch=None) -> TrainResult:
    """Run the full schedule; ``on_epoch(row)`` receives each metrics row."""
    rng = as_rng(spec.seed if rng is None else rng)
    if not net.noise.frozen:
        net.noise.sigma = init_sigma(net.noise.dim, net.noise.p_noise)
    optimizer = SGD(net.base.parameters(), spec.momentum, spec.weight_decay)
    history, updates = [], []
    for epoch in range(1, spec.epochs + 1):
        t0 = time.perf_counter()
        loss, lr = base_at_epoch(net, data, spec, rng, epoch, optimizer)
        t1 = time.perf_counter()
        updated = False
        if is_update_epoch(epoch, spec.update_freq):
            gamma = snap_update_epoch(net, data, spec, rng, epoch)
            updated = gamma is not None
            if updated:
                updates.append(epoch)
        t2 = time.perf_counter()
        s2 = net.noise.sigma**2
        row = {"epoch": epoch, "lr": lr, "train_loss": loss,
               "sigma_min": float(s2.min()), "sigma_mean": float(s2.mean()), "sigma_max": float(s2.max()),
               "base_seconds": t1 - t0, "update_seconds": (t2 - t1) if updated else 0.0}
        history.append(row)
        log.info("epoch %d lr=%.4g loss=%.4f sigma2[min/mean/max]=%.4g/%.4g/%.4g base=%.3fs update=%s",
                 epoch, lr, loss, row["sigma_min"], row["sigma_mean"], row["sigma_max"],
                 row["base_seconds"], f"{row['update_seconds']:.3f}s" if updated else "-")
        if on_epoch is not None:
            on_epoch(row)
    return TrainResult(net, history, updates)
