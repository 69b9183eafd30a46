"""Shaped-noise input layer, noise-averaged prediction and variance allocation.

The noise added to an input is ``n = V diag(sigma) n0`` where the components
of ``n0`` are i.i.d. with zero mean and unit variance, so ``sigma_j`` is the
per-direction standard deviation and ``E||n||^2 = sum(sigma**2) = p_noise``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DegenerateUpdateError, DimensionError
from .rng import Rng, as_rng

log = logging.getLogger(__name__)

DISTRIBUTIONS = ("gaussian", "uniform", "laplace")
POWER_RTOL = 1e-5
ORTHO_TOL = 1e-4


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return as_rng(rng).generator()


def unit_variance_draws(dist, size, gen: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Zero-mean, unit-variance i.i.d. samples of the given family."""
    dtype = np.dtype(dtype)
    if dist == "gaussian":
        return gen.standard_normal(size, dtype=dtype)
    if dist == "uniform":
        r = dtype.type(np.sqrt(3.0))
        return gen.random(size, dtype=dtype) * (2 * r) - r
    if dist == "laplace":
        # an Exp(1) magnitude with a fair random sign is Laplace(0, 1)
        mag = gen.standard_exponential(size, dtype=dtype)
        sign = gen.integers(0, 2, size, dtype=np.int8) * 2 - 1
        return mag * sign * dtype.type(1.0 / np.sqrt(2.0))
    raise ConfigError(f"unknown noise distribution {dist!r}; expected one of {DISTRIBUTIONS}")


def check_orthonormal(basis, tol=ORTHO_TOL):
    basis = np.asarray(basis, dtype=np.float64)
    if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
        raise DimensionError(f"basis must be square, got {basis.shape}")
    err = np.abs(basis.T @ basis - np.eye(basis.shape[0])).max()
    if err > tol:
        raise ContractError(f"basis is not orthonormal (max |V^T V - I| = {err:.3g})")
    return basis


def init_sigma(dim, p_noise):
    """Uniform allocation: every sigma_j = sqrt(p_noise / dim)."""
    if dim < 1:
        raise ContractError("dimension must be at least 1")
    if p_noise < 0:
        raise ContractError("p_noise must be non-negative")
    return np.full(int(dim), np.sqrt(p_noise / dim), dtype=np.float64)


def allocate_variances(gamma, p_noise):
    """sigma_j^2 = p_noise * sqrt(gamma_j) / sum_k sqrt(gamma_k); returns sigma."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma < 0) or not np.all(np.isfinite(gamma)):
        raise ContractError("accumulated projections must be finite and non-negative")
    root = np.sqrt(gamma)
    total = root.sum()
    if total <= 0:
        raise DegenerateUpdateError("all accumulated projections are zero")
    return np.sqrt(p_noise * (root / total))


def accumulate_projections(etas, basis=None, gamma=None):
    """gamma_j (+)= sum_i <v_j, eta_i>^2 for the columns v_j of ``basis``.

    ``basis=None`` is the identity, i.e. column-wise sums of squares.
    """
    etas = np.atleast_2d(np.asarray(etas, dtype=np.float64))
    if etas.shape[0] < 1:
        raise ContractError("need at least one perturbation")
    coords = etas if basis is None else etas @ np.asarray(basis, dtype=np.float64)
    out = (coords**2).sum(axis=0)
    return out if gamma is None else gamma + out


@dataclass
class NoiseSpec:
    dist: str
    sigma: np.ndarray
    p_noise: float
    basis: np.ndarray | None = None  # None = identity
    frozen: bool = False
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.float64).copy()
        self.p_noise = float(self.p_noise)
        if self.basis is not None:
            self.basis = np.asarray(self.basis, dtype=np.float64)
        self.validate()

    @property
    def dim(self):
        return self.sigma.shape[0]

    @property
    def is_zero(self):
        return self.p_noise == 0 or not np.any(self.sigma)

    def validate(self):
        if self.dist not in DISTRIBUTIONS:
            raise ConfigError(f"unknown noise distribution {self.dist!r}")
        if self.sigma.ndim != 1 or self.sigma.size < 1:
            raise DimensionError("sigma must be a non-empty vector")
        if np.any(self.sigma < 0) or not np.all(np.isfinite(self.sigma)):
            raise ContractError("sigma must be finite and non-negative")
        if self.p_noise < 0:
            raise ContractError("p_noise must be non-negative")
        power = float(np.sum(self.sigma**2))
        if self.p_noise == 0:
            if power != 0:
                raise ContractError("p_noise is zero but sigma is not")
        elif abs(power - self.p_noise) > POWER_RTOL * self.p_noise:
            raise ContractError(f"sum(sigma^2) = {power:.6g} violates p_noise = {self.p_noise:.6g}")
        if self.basis is not None:
            if self.basis.shape != (self.dim, self.dim):
                raise DimensionError(f"basis shape {self.basis.shape} does not match D={self.dim}")
            check_orthonormal(self.basis)

    def update_from_projections(self, gamma):
        """Apply the variance allocation in place. Returns True if sigma changed.

        Frozen (isotropic baseline) specs ignore the update; an all-zero gamma
        keeps the previous sigma and logs a warning.
        """
        if self.frozen:
            return False
        if self.p_noise == 0:
            return False
        try:
            self.sigma = allocate_variances(gamma, self.p_noise)
        except DegenerateUpdateError:
            log.warning("degenerate noise update (all projections zero); keeping previous sigma")
            return False
        return True

    def copy(self):
        return NoiseSpec(self.dist, self.sigma.copy(), self.p_noise,
                         None if self.basis is None else self.basis.copy(), self.frozen)


def make_spec(dist, dim, p_noise, basis=None, frozen=False) -> NoiseSpec:
    return NoiseSpec(dist, init_sigma(dim, p_noise), p_noise, basis, frozen)


def make_iso_spec(dist, dim, p_noise) -> NoiseSpec:
    """Isotropic baseline: uniform sigma that training never reshapes."""
    return make_spec(dist, dim, p_noise, frozen=True)


def sample_noise(spec: NoiseSpec, batch, rng, dtype=np.float64) -> np.ndarray:
    """Draw ``batch`` rows of ``V diag(sigma) n0``."""
    if spec.is_zero:
        return np.zeros((batch, spec.dim), dtype=dtype)
    gen = _generator(rng)
    n = unit_variance_draws(spec.dist, (batch, spec.dim), gen, dtype) * spec.sigma.astype(dtype)
    if spec.basis is not None:
        n = n @ spec.basis.T.astype(dtype)
    return n


class SnapNet:
    """Base classifier preceded by an additive shaped-noise layer."""

    def __init__(self, base, noise: NoiseSpec):
        if noise.dim != base.input_dim:
            raise DimensionError(f"noise dim {noise.dim} != model input dim {base.input_dim}")
        self.base = base
        self.noise = noise

    @property
    def dtype(self):
        return self.base.dtype

    def forward(self, x, rng) -> T.Node:
        """Logits of one noisy pass; gradients flow to ``x`` through the noise layer."""
        x = T.as_node(x)
        if x.value.ndim != 2 or x.shape[1] != self.base.input_dim:
            raise DimensionError(f"expected input [B, {self.base.input_dim}], got {x.shape}")
        if self.noise.is_zero:
            return self.base.forward(x)
        n = sample_noise(self.noise, x.shape[0], rng, dtype=x.dtype)
        return self.base.forward(T.add(x, n))

    __call__ = forward

    def averaged_logits(self, x, n_samples, rng) -> T.Node:
        """Mean of the logits over ``n_samples`` independent noise draws, as one graph."""
        if n_samples < 1:
            raise ContractError("n_samples must be >= 1")
        x = T.as_node(x)
        if self.noise.is_zero:
            return self.base.forward(x)
        b = x.shape[0]
        xs = T.reshape(T.add(T.reshape(x, (1, b, -1)), np.zeros((n_samples, 1, 1), dtype=x.dtype)),
                       (n_samples * b, -1))
        out = self.forward(xs, rng)
        return T.mean(T.reshape(out, (n_samples, b, -1)), axis=0)

    def mean_probabilities(self, x, n_samples, rng) -> np.ndarray:
        """Monte Carlo estimate of E_n[softmax(f(x + n))]."""
        if n_samples < 1:
            raise ContractError("n_samples must be >= 1")
        x = np.asarray(x, dtype=self.dtype)
        with self.base.frozen():
            if self.noise.is_zero:
                return T.softmax_np(self.base.forward(x).value)
            gen = _generator(rng)
            b = x.shape[0]
            xs = np.broadcast_to(x, (n_samples, b, x.shape[1])).reshape(n_samples * b, -1)
            logits = self.forward(xs, gen).value.reshape(n_samples, b, -1)
        return T.softmax_np(logits).mean(axis=0)


def predict(net: SnapNet, x, n_samples, rng) -> np.ndarray:
    """argmax_c of the noise-averaged softmax; ties go to the lowest class index."""
    return np.argmax(net.mean_probabilities(x, n_samples, rng), axis=1)


def to_snapnet(model, noise: NoiseSpec | None = None) -> SnapNet:
    if isinstance(model, SnapNet):
        return model
    if noise is None:
        noise = make_spec("laplace", model.input_dim, 0.0)
    return SnapNet(model, noise)


__all__ = [
    "DISTRIBUTIONS", "NoiseSpec", "SnapNet", "accumulate_projections", "allocate_variances",
    "check_orthonormal", "init_sigma", "make_iso_spec", "make_spec", "predict", "sample_noise",
    "to_snapnet", "unit_variance_draws",
]
