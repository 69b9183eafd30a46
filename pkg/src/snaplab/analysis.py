"""Subspace analysis of adversarial perturbations and noise-magnitude statistics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import NORMS, AttackSpec, run_attack
from .errors import ContractError, DimensionError, NumericError
from .noise import NoiseSpec, sample_noise
from .rng import as_rng

FAMILIES = NORMS  # linf (alpha), l2 (beta), l1 (gamma)


def _oriented_right_singular_vectors(m):
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    try:
        _, s, vt = np.linalg.svd(m, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    basis = vt.T.copy()
    pivot = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivot, np.arange(basis.shape[1])])
    basis *= np.where(signs == 0, 1.0, signs)
    sv = np.zeros(basis.shape[1])
    sv[: s.size] = s
    return basis, sv


def perturbation_basis(betas, return_singular_values=False):
    """Right singular vectors (columns, D x D) of the perturbation matrix.

    Columns are ordered by descending singular value; directions beyond the
    rank complete the basis. Each column is flipped so its largest-magnitude
    entry is positive.
    """
    betas = np.atleast_2d(np.asarray(betas, dtype=np.float64))
    if betas.shape[0] < 1:
        raise ContractError("need at least one perturbation")
    basis, sv = _oriented_right_singular_vectors(betas)
    return (basis, sv) if return_singular_values else basis


def raw_projections(perts, basis):
    """mean_i <p_j, delta_i>^2 for every basis column p_j."""
    perts = np.atleast_2d(np.asarray(perts, dtype=np.float64))
    basis = np.asarray(basis, dtype=np.float64)
    if perts.shape[1] != basis.shape[0]:
        raise DimensionError(f"perturbations are {perts.shape[1]}-D, basis is {basis.shape[0]}-D")
    return ((perts @ basis) ** 2).mean(axis=0)


def projection_profile(perts, basis):
    """Mean squared projections normalised by their maximum."""
    raw = raw_projections(perts, basis)
    peak = raw.max()
    if not peak > 0:
        raise ContractError("all perturbations are zero; profile undefined")
    return raw / peak


def effective_dim(msp, threshold=0.1):
    msp = np.asarray(msp)
    return int(np.count_nonzero(msp > threshold * msp.max()))


@dataclass
class SubspaceReport:
    basis: np.ndarray
    singular_values: np.ndarray
    rank: int
    msp: dict
    raw: dict
    effective_dim: dict
    threshold: float = 0.1


def subspace_report(perts_by_family: dict, threshold=0.1) -> SubspaceReport:
    """Build the l2-perturbation basis and profile every family on it."""
    basis, sv = perturbation_basis(perts_by_family["l2"], return_singular_values=True)
    tol = sv.max() * max(basis.shape) * np.finfo(np.float64).eps if sv.size else 0.0
    rank = int(np.count_nonzero(sv > tol))
    raw, msp, eff = {}, {}, {}
    for fam in FAMILIES:
        raw[fam] = raw_projections(perts_by_family[fam], basis)
        msp[fam] = projection_profile(perts_by_family[fam], basis)
        eff[fam] = effective_dim(msp[fam], threshold)
    return SubspaceReport(basis, sv, rank, msp, raw, eff, threshold)


def craft_perturbations(net, x, labels, specs, rng):
    by_norm = {s.norm: s for s in specs}
    if sorted(by_norm) != sorted(NORMS):
        raise ContractError("need one AttackSpec per norm (linf, l2, l1)")
    rng = as_rng(rng)
    return {fam: run_attack(net, x, labels, by_norm[fam], rng.child("subspace", fam)).delta
            for fam in FAMILIES}


def subspace_experiment(van_net, rob_net, x, labels, specs, rng, threshold=0.1):
    """Reports for a vanilla and a robust net on the same inputs and seed."""
    reports = []
    for net in (van_net, rob_net):
        perts = craft_perturbations(net, x, labels, specs, rng)
        reports.append(subspace_report(perts, threshold))
    return tuple(reports)


def image_basis(train_images, center=False):
    """Right singular vectors of the training-image matrix, usable as a noise basis.

    ``center=True`` subtracts the mean image first (PCA convention).
    """
    m = np.atleast_2d(np.asarray(train_images, dtype=np.float64))
    if m.shape[0] < 1:
        raise ContractError("need at least one image")
    if center:
        m = m - m.mean(axis=0, keepdims=True)
    return _oriented_right_singular_vectors(m)[0]


@dataclass
class NoiseHistogram:
    edges: np.ndarray
    counts: np.ndarray
    mean_fraction: float
    fractions: np.ndarray
    threshold: float


def noise_magnitude_histogram(spec: NoiseSpec, threshold, samples, rng, bins=50, chunk=4096):
    """Histogram over noise draws of the fraction of coordinates with |n_j| > threshold."""
    if samples < 1:
        raise ContractError("samples must be >= 1")
    gen = as_rng(rng).child("noise-hist").generator()
    fractions = np.empty(samples)
    for start in range(0, samples, chunk):
        m = min(chunk, samples - start)
        n = sample_noise(spec, m, gen)
        fractions[start:start + m] = (np.abs(n) > threshold).mean(axis=1)
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(fractions, bins=edges)
    return NoiseHistogram(edges, counts, float(fractions.mean()), fractions, float(threshold))


__all__ = [
    "AttackSpec", "NoiseHistogram", "SubspaceReport", "craft_perturbations", "effective_dim",
    "image_basis", "noise_magnitude_histogram", "perturbation_basis", "projection_profile",
    "raw_projections", "subspace_experiment", "subspace_report",
]
