"""Permutation-invariant losses, separation metrics, and ideal-mask oracles.

Metrics are built from tape ops so the same code serves as a training loss
(gradients flow) and as an evaluation metric (no tape active).  Log-ratio
metrics are capped at +/- 80 dB so colinear or orthogonal pairs stay finite;
inside the cap the value is untouched.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InputError, MetricError

DB_CAP = 80.0
MASK_FLOOR = 1e-8
IAM_CLIP = 10.0
_LOG10 = float(np.log(10.0))

MAX_SOURCES = 6  # factorial enumeration

MSE_MASK = "mse_mask"
NEG_SISNR = "neg_sisnr"


def _as_signal(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.ndim != 1:
        raise InputError(f"expected a 1-D signal, got shape {t.shape}")
    return t


def _ratio_db(target_energy: Tensor, noise_energy: Tensor) -> Tensor:
    te, ne = target_energy.item(), noise_energy.item()
    if te == 0.0:
        return Tensor(np.array(-DB_CAP))
    if ne == 0.0:
        return Tensor(np.array(DB_CAP))
    db = 10.0 * np.log10(te / ne)
    if db >= DB_CAP:
        return Tensor(np.array(DB_CAP))
    if db <= -DB_CAP:
        return Tensor(np.array(-DB_CAP))
    ratio = ad.div(target_energy, noise_energy)
    return ad.mul(ad.log(ratio), Tensor(np.array(10.0 / _LOG10)))


def _projection_db(est: Tensor, ref: Tensor, zero_mean: bool) -> Tensor:
    if est.size != ref.size:
        raise InputError(f"signal lengths differ: {est.size} vs {ref.size}")
    if zero_mean:
        est = ad.sub(est, ad.mean(est))
        ref = ad.sub(ref, ad.mean(ref))
    ref_energy = ad.sum_(ad.square(ref))
    if ref_energy.item() == 0.0:
        raise MetricError("reference has no energy; metric undefined")
    scale = ad.div(ad.sum_(ad.mul(est, ref)), ref_energy)
    target = ad.mul(ref, scale)
    noise = ad.sub(est, target)
    return _ratio_db(ad.sum_(ad.square(target)), ad.sum_(ad.square(noise)))


def sisnr(estimate, reference) -> Tensor:
    """Scale-invariant SNR in dB; both signals are mean-normalized first."""
    return _projection_db(_as_signal(estimate), _as_signal(reference), zero_mean=True)


def sdr(estimate, reference) -> Tensor:
    """Simplified two-term SDR: the same reference projection without the
    zero-mean step (the full allowed-distortion decomposition is out of scope)."""
    return _projection_db(_as_signal(estimate), _as_signal(reference), zero_mean=False)


@dataclass
class PermutationAssignment:
    """Minimizing source-to-reference mapping: estimate s matches
    references[mapping[s]] (0-based), plus the minimized loss."""

    mapping: tuple
    loss: Tensor

    @property
    def loss_value(self) -> float:
        return self.loss.item()


def upit(estimates, references, criterion: str) -> PermutationAssignment:
    """Exhaustive-minimum permutation-invariant loss over S! pairings.

    criterion "neg_sisnr": per-source time signals, loss = -mean(Si-SNR).
    criterion "mse_mask": per-source masked vs reference representations,
    loss = (1/B) * sum_s ||est_s - ref_{phi(s)}||_F^2 with B the bin count
    summed over all S sources.  Ties pick the lexicographically smallest
    permutation.
    """
    s = len(estimates)
    if s != len(references):
        raise InputError(f"{s} estimates vs {len(references)} references")
    if s > MAX_SOURCES:
        raise InputError(f"source count {s} exceeds enumeration limit {MAX_SOURCES}")

    if criterion == NEG_SISNR:
        pair = [[ad.neg(sisnr(e, r)) for r in references] for e in estimates]
        norm = float(s)
    elif criterion == MSE_MASK:
        pair = [[ad.sum_(ad.square(ad.sub(e, r))) for r in references] for e in estimates]
        norm = float(sum(e.size for e in estimates))
    else:
        raise InputError(f"unknown uPIT criterion {criterion!r}")

    values = np.array([[c.item() for c in row] for row in pair])
    best_perm, best_total = None, None
    for perm in itertools.permutations(range(s)):
        total = float(sum(values[i, perm[i]] for i in range(s)))
        if best_total is None or total < best_total:
            best_perm, best_total = perm, total

    chosen = pair[0][best_perm[0]]
    for i in range(1, s):
        chosen = ad.add(chosen, pair[i][best_perm[i]])
    loss = ad.div(chosen, Tensor(np.array(norm)))
    return PermutationAssignment(mapping=best_perm, loss=loss)


def upit_mse_mask(masks: Tensor, mixture_mag: Tensor, reference_mags) -> PermutationAssignment:
    """Applies masks to the mixture magnitude, then runs the mse_mask
    criterion against the reference magnitudes."""
    from .separator import apply_masks

    masked = apply_masks(masks, mixture_mag)
    return upit(masked, list(reference_mags), MSE_MASK)


def ideal_masks(source_mags, source_phases, mixture_mag, mixture_phase) -> dict:
    """Oracle masks {iam, ibm, irm, ipsm} from ground-truth spectra.

    source_mags/source_phases: [S x N x F]; mixture planes [N x F].
    Denominators are floored at 1e-8; IAM is clipped to [0, 10]; IPSM is
    left unclipped (it is signed by construction).
    """
    x = np.asarray(source_mags, dtype=np.float64)
    theta = np.asarray(source_phases, dtype=np.float64)
    y = np.asarray(mixture_mag, dtype=np.float64)
    theta_y = np.asarray(mixture_phase, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] < 2:
        raise InputError(f"need [S x N x F] magnitudes with S >= 2, got {x.shape}")
    if (x < 0).any() or (y < 0).any():
        raise InputError("magnitudes must be non-negative")

    y_safe = np.maximum(y, MASK_FLOOR)[None]
    total = np.maximum(x.sum(axis=0), MASK_FLOOR)[None]
    iam = np.clip(x / y_safe, 0.0, IAM_CLIP)
    irm = x / total
    winner = np.argmax(x, axis=0)  # ties resolve to the lowest index
    ibm = (winner[None] == np.arange(x.shape[0])[:, None, None]).astype(np.float64)
    ipsm = x * np.cos(theta_y[None] - theta) / y_safe
    return {"iam": iam, "ibm": ibm, "irm": irm, "ipsm": ipsm}
