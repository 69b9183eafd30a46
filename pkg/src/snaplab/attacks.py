"""Norm-bounded white-box attacks against noise-augmented classifiers.

All attacks differentiate through the noise layer and, when ``eot_samples > 1``,
average the logits over several noise draws before taking the loss gradient.
Perturbation bookkeeping is done in float64; the model sees inputs in its own
dtype.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .noise import SnapNet, to_snapnet
from .rng import as_rng

NORMS = ("linf", "l2", "l1")


@dataclass(frozen=True)
class AttackSpec:
    norm: str
    eps: float
    alpha: float | None = None  # None -> 0.1 * eps
    steps: int = 100
    restarts: int = 1
    eot_samples: int = 1
    l1_k: int = 10
    rand_init: bool = True
    box: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ConfigError(f"unknown norm {self.norm!r}; expected one of {NORMS}")
        if self.eps < 0:
            raise ConfigError("eps must be non-negative")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 0.1 * float(self.eps))
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if self.steps >= 1 and self.eps > 0 and not self.alpha > 0:
            raise ConfigError("alpha must be positive when steps >= 1")
        if self.restarts < 1 or self.eot_samples < 1 or self.l1_k < 1:
            raise ConfigError("restarts, eot_samples and l1_k must be >= 1")
        if not self.box[0] < self.box[1]:
            raise ConfigError("box bounds must satisfy lo < hi")

    def with_(self, **changes) -> "AttackSpec":
        return replace(self, **changes)


@dataclass
class PerturbationSet:
    delta: np.ndarray
    x_adv: np.ndarray
    norm: str
    eps: float
    success: np.ndarray
    loss: np.ndarray
    meta: dict = field(default_factory=dict)

    def norms(self):
        return perturbation_norm(self.delta, self.norm)


def perturbation_norm(delta, norm):
    delta = np.atleast_2d(delta)
    if norm == "linf":
        return np.abs(delta).max(axis=1)
    if norm == "l2":
        return np.sqrt((delta**2).sum(axis=1))
    if norm == "l1":
        return np.abs(delta).sum(axis=1)
    raise ConfigError(f"unknown norm {norm!r}")


def project_l1_ball(v, eps):
    """Euclidean projection of each row of ``v`` onto {w : ||w||_1 <= eps} (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    squeeze = v.ndim == 1
    v = np.atleast_2d(v)
    if eps <= 0:
        out = np.zeros_like(v)
        return out[0] if squeeze else out
    out = v.copy()
    a = np.abs(v)
    outside = a.sum(axis=1) > eps
    if np.any(outside):
        ao = a[outside]
        u = -np.sort(-ao, axis=1)
        css = np.cumsum(u, axis=1)
        j = np.arange(1, u.shape[1] + 1)
        cond = u - (css - eps) / j > 0
        rho = u.shape[1] - np.argmax(cond[:, ::-1], axis=1)  # last index where cond holds
        theta = (css[np.arange(len(rho)), rho - 1] - eps) / rho
        out[outside] = np.sign(v[outside]) * np.maximum(ao - theta[:, None], 0.0)
    return out[0] if squeeze else out


def project_l2_ball(v, eps):
    v = np.asarray(v, dtype=np.float64)
    n = np.sqrt((np.atleast_2d(v) ** 2).sum(axis=1, keepdims=True))
    scale = np.where(n > eps, eps / np.where(n > 0, n, 1.0), 1.0)
    return (np.atleast_2d(v) * scale).reshape(v.shape)


def _as_inputs(net, x, labels):
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2:
        raise DimensionError(f"inputs must be [B, D], got {x.shape}")
    if labels.shape != (x.shape[0],):
        raise DimensionError("labels must have one entry per input row")
    return to_snapnet(net), x, labels


def _loss_and_grad(net: SnapNet, x, labels, n0, gen):
    """Summed CE on noise-averaged logits and its gradient w.r.t. ``x`` (float64 out)."""
    with net.base.frozen():
        xn = T.Node(np.asarray(x, dtype=net.dtype), requires_grad=True)
        logits = net.averaged_logits(xn, n0, gen)
        loss = T.softmax_cross_entropy(logits, labels, reduction="sum")
        T.backward(loss)
    return float(loss.value), xn.grad.astype(np.float64)


def eot_input_grad(net, x, labels, n0, rng) -> np.ndarray:
    """Input gradient of the cross-entropy of logits averaged over ``n0`` noise draws."""
    if n0 < 1:
        raise ContractError("n0 must be >= 1")
    net, x, labels = _as_inputs(net, x, labels)
    gen = rng if isinstance(rng, np.random.Generator) else as_rng(rng).generator()
    return _loss_and_grad(net, x, labels, n0, gen)[1]


def _evaluate(net: SnapNet, x_adv, labels, n0, gen):
    """Per-example CE of averaged logits and noise-averaged-softmax predictions."""
    xs = np.asarray(x_adv, dtype=net.dtype)
    b = xs.shape[0]
    with net.base.frozen():
        if net.noise.is_zero:
            logits = net.base.forward(xs).value[None]
        else:
            tiled = np.broadcast_to(xs, (n0, b, xs.shape[1])).reshape(n0 * b, -1)
            logits = net.forward(tiled, gen).value.reshape(n0, b, -1)
    loss = T.per_example_cross_entropy(logits.mean(axis=0), labels)
    pred = np.argmax(T.softmax_np(logits).mean(axis=0), axis=1)
    return loss, pred


def _box(x, delta, box):
    return np.clip(x + delta, box[0], box[1]) - x


def _init_delta(spec: AttackSpec, shape, gen):
    eps = float(spec.eps)
    if not spec.rand_init or eps == 0:
        return np.zeros(shape)
    b, d = shape
    if spec.norm == "linf":
        return gen.uniform(-eps, eps, shape)
    radius = eps * gen.uniform(0.0, 1.0, (b, 1)) ** (1.0 / d)
    if spec.norm == "l2":
        z = gen.standard_normal(shape)
        n = np.sqrt((z**2).sum(axis=1, keepdims=True))
        return z / np.where(n > 0, n, 1.0) * radius
    # l1: normalised Laplace draws are uniform on the l1 sphere
    z = gen.laplace(0.0, 1.0, shape)
    n = np.abs(z).sum(axis=1, keepdims=True)
    return z / np.where(n > 0, n, 1.0) * radius


def _step_linf(delta, g, x, spec):
    return np.clip(delta + spec.alpha * np.sign(g), -spec.eps, spec.eps)


def _step_l2(delta, g, x, spec):
    n = np.sqrt((g**2).sum(axis=1, keepdims=True))
    step = np.where(n > 0, spec.alpha * g / np.where(n > 0, n, 1.0), 0.0)
    return project_l2_ball(delta + step, spec.eps)


def _step_l1(delta, g, x, spec):
    lo, hi = spec.box
    k = min(spec.l1_k, g.shape[1])
    cur = x + delta
    pinned = ((g > 0) & (cur >= hi)) | ((g < 0) & (cur <= lo))
    score = np.where(pinned, -1.0, np.abs(g))
    idx = np.argpartition(-score, k - 1, axis=1)[:, :k]
    rows = np.arange(g.shape[0])[:, None]
    chosen = np.zeros_like(g, dtype=bool)
    chosen[rows, idx] = True
    chosen &= score > 0
    step = np.where(chosen, spec.alpha * np.sign(g) / k, 0.0)
    return project_l1_ball(delta + step, spec.eps)


_STEPS = {"linf": _step_linf, "l2": _step_l2, "l1": _step_l1}


def _finalize(x, delta, spec):
    lo, hi = spec.box
    x_adv = np.clip(x + delta, lo, hi)
    delta = x_adv - x
    if spec.norm == "linf":
        delta = np.clip(delta, -spec.eps, spec.eps)
        x_adv = np.clip(x + delta, lo, hi)
    return delta, x_adv


def run_attack(net, x, labels, spec: AttackSpec, rng) -> PerturbationSet:
    """Projected-gradient attack with restarts; dispatches on ``spec.norm``.

    Among restarts, a perturbation that flips the noise-averaged prediction is
    preferred; ties (and the no-flip case) go to the highest loss.
    """
    net, x, labels = _as_inputs(net, x, labels)
    rng = as_rng(rng)
    step = _STEPS[spec.norm]
    b = x.shape[0]
    best_delta = np.zeros_like(x)
    best_adv = x.copy()
    best_loss = np.full(b, -np.inf)
    best_flip = np.zeros(b, dtype=bool)
    for r in range(spec.restarts):
        gen = rng.child("restart", r).generator()
        delta = _box(x, _init_delta(spec, x.shape, gen), spec.box)
        if spec.eps > 0:
            for _ in range(spec.steps):
                _, g = _loss_and_grad(net, x + delta, labels, spec.eot_samples, gen)
                delta = _box(x, step(delta, g, x, spec), spec.box)
        delta, x_adv = _finalize(x, delta, spec)
        sel_gen = rng.child("select").generator()
        loss, pred = _evaluate(net, x_adv, labels, spec.eot_samples, sel_gen)
        flip = pred != labels
        better = (flip & ~best_flip) | ((flip == best_flip) & (loss > best_loss))
        best_delta[better] = delta[better]
        best_adv[better] = x_adv[better]
        best_loss[better] = loss[better]
        best_flip[better] = flip[better]
    return PerturbationSet(best_delta, best_adv, spec.norm, float(spec.eps), best_flip, best_loss,
                           {"steps": spec.steps, "restarts": spec.restarts, "alpha": spec.alpha,
                            "eot_samples": spec.eot_samples})


def pgd_linf(net, x, labels, spec: AttackSpec, rng) -> PerturbationSet:
    if spec.norm != "linf":
        raise ContractError("pgd_linf needs an linf AttackSpec")
    return run_attack(net, x, labels, spec, rng)


def pgd_l2(net, x, labels, spec: AttackSpec, rng) -> PerturbationSet:
    if spec.norm != "l2":
        raise ContractError("pgd_l2 needs an l2 AttackSpec")
    return run_attack(net, x, labels, spec, rng)


def pgd_l1(net, x, labels, spec: AttackSpec, rng) -> PerturbationSet:
    if spec.norm != "l1":
        raise ContractError("pgd_l1 needs an l1 AttackSpec")
    return run_attack(net, x, labels, spec, rng)


def fgsm(net, x, labels, eps, alpha, rng, eot_samples=1, box=(0.0, 1.0)) -> PerturbationSet:
    """Single-step linf attack from a uniform random start; ``alpha`` may exceed ``eps``."""
    spec = AttackSpec("linf", eps, alpha=alpha, steps=1, restarts=1, eot_samples=eot_samples, box=box)
    return run_attack(net, x, labels, spec, rng)


@dataclass
class UnionReport:
    nat: float
    linf: float
    l2: float
    l1: float
    union: float
    n: int
    correct: dict
    records: list

    def as_dict(self):
        return {"nat": self.nat, "linf": self.linf, "l2": self.l2, "l1": self.l1, "union": self.union}


def eval_union(net, x, labels, specs, n0_samples, rng, batch_size=500) -> UnionReport:
    """Natural, per-norm and union accuracy under the noise-averaged decision rule.

    An example counts toward the union iff it is classified correctly clean and
    under every attack. Predictions for an example reuse one noise stream, so a
    zero perturbation yields exactly the natural prediction.
    """
    net = to_snapnet(net)
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    by_norm = {s.norm: s for s in specs}
    if sorted(by_norm) != sorted(NORMS) or len(specs) != 3:
        raise ContractError("eval_union needs exactly one spec per norm (linf, l2, l1)")
    rng = as_rng(rng)
    n = x.shape[0]
    correct = {k: np.zeros(n, dtype=bool) for k in ("nat",) + NORMS}
    records = []
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        xb, yb = x[sl], labels[sl]
        bi = start // batch_size
        pred_rng = rng.child("predict", bi)
        _, pred = _evaluate(net, xb, yb, n0_samples, pred_rng.generator())
        correct["nat"][sl] = pred == yb
        for norm in NORMS:
            spec = by_norm[norm]
            pert = run_attack(net, xb, yb, spec, rng.child("attack", norm, bi))
            loss, pred = _evaluate(net, pert.x_adv, yb, n0_samples, pred_rng.generator())
            correct[norm][sl] = pred == yb
            for i in range(len(yb)):
                records.append({"example": start + i, "norm": norm, "eps": spec.eps,
                                "success": bool(pred[i] != yb[i]), "loss": float(loss[i])})
    union = correct["nat"] & correct["linf"] & correct["l2"] & correct["l1"]
    acc = {k: float(v.mean()) if n else 0.0 for k, v in correct.items()}
    return UnionReport(acc["nat"], acc["linf"], acc["l2"], acc["l1"],
                       float(union.mean()) if n else 0.0, n, {**correct, "union": union}, records)
