"""Steganalysis detectors and distortion measures.

The detector suite mirrors the classical LSB toolkit (pair-of-values
chi-square, regular/singular group analysis, sample-pair analysis, and
their mean fusion) so the security harness is self-contained.  Scores are
suspicion probabilities in [0, 1], deterministic per image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
from scipy.stats import chi2 as chi2_dist

from stegattn.tensor_core import ImageTensor

DETECTORS = ("chi_square", "rs", "sample_pairs", "fused_mean")


class ChiSquareScore(NamedTuple):
    score: float
    degenerate: bool


@dataclass(frozen=True)
class DetectorScore:
    image_id: str
    detector: str
    score: float

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}")
        if not math.isfinite(self.score):
            raise ValueError("score must be finite")


@dataclass(frozen=True)
class RocCurve:
    """Operating points swept over thresholds 0.00..1.00 step 0.01."""

    thresholds: np.ndarray
    points: np.ndarray  # (T, 2) rows of (fpr, tpr)
    auc: float


def chi_square_attack(img: ImageTensor) -> ChiSquareScore:
    """Pair-of-values chi-square test on the byte histogram.

    Compares each even bin against the mean of its (2k, 2k+1) pair; LSB
    replacement equalizes the pairs, driving the statistic far below its
    degrees of freedom and the survival function toward 1.  A histogram
    with fewer than two populated pairs is degenerate and scores 0.
    """
    hist = np.bincount(img.pixels.reshape(-1), minlength=256).astype(np.float64)
    even = hist[0::2]
    odd = hist[1::2]
    totals = even + odd
    used = totals > 0
    if used.sum() < 2:
        return ChiSquareScore(score=0.0, degenerate=True)
    expected = totals[used] / 2.0
    stat = float((((even[used] - expected) ** 2) / expected).sum())
    df = int(used.sum()) - 1
    return ChiSquareScore(score=float(chi2_dist.sf(stat, df)), degenerate=False)


def _rs_fractions(channel: np.ndarray, group: int = 4) -> tuple[float, float, float, float]:
    """Fractions (R_m, S_m, R_-m, S_-m) over non-overlapping row groups."""
    h, w = channel.shape
    usable = (w // group) * group
    g = channel[:, :usable].reshape(-1, group).astype(np.int32)

    def smoothness(blocks):
        return np.abs(np.diff(blocks, axis=1)).sum(axis=1)

    mask = np.array([0, 1, 1, 0], dtype=np.int32)
    f0 = smoothness(g)

    flipped = g ^ mask  # LSB flip on masked positions
    f_pos = smoothness(flipped)

    shifted = np.where(mask == 1, ((g + 1) ^ 1) - 1, g)  # shifted flip
    f_neg = smoothness(shifted)

    n = g.shape[0]
    r_m = float((f_pos > f0).sum()) / n
    s_m = float((f_pos < f0).sum()) / n
    r_neg = float((f_neg > f0).sum()) / n
    s_neg = float((f_neg < f0).sum()) / n
    return r_m, s_m, r_neg, s_neg


def _rs_estimate_channel(channel: np.ndarray) -> float:
    r0, s0, rm0, sm0 = _rs_fractions(channel)
    r1, s1, rm1, sm1 = _rs_fractions(channel ^ 1)  # all LSBs flipped

    d0 = r0 - s0
    dm0 = rm0 - sm0
    d1 = r1 - s1
    dm1 = rm1 - sm1

    # Intersection of the quadratic R/S curves with the linear negative-mask
    # ones; the smaller-magnitude root maps to the message length.  Near
    # full embedding both measurement points coincide (d0, d1 -> 0 with
    # dm0 large), the discriminant dips negative, and the estimator is
    # saturated rather than informative.
    a = 2.0 * (d1 + d0)
    b = dm0 - dm1 - d1 - 3.0 * d0
    c = d0 - dm0
    if a == 0.0:
        if b == 0.0:
            return 1.0 if abs(c) > 1e-9 else 0.0
        z = -c / b
    else:
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            return 1.0
        root_pos = (-b + math.sqrt(disc)) / (2.0 * a)
        root_neg = (-b - math.sqrt(disc)) / (2.0 * a)
        z = root_pos if abs(root_pos) <= abs(root_neg) else root_neg
    if z == 0.5:
        return 1.0
    return float(np.clip(z / (z - 0.5), 0.0, 1.0))


def rs_analysis(img: ImageTensor, group: int = 4) -> float:
    """Regular/singular group estimate of the embedding rate, in [0, 1]."""
    h, w, c = img.pixels.shape
    if w < group:
        raise ValueError(f"image width {w} too small for RS groups of {group}")
    estimates = [_rs_estimate_channel(img.pixels[:, :, ch]) for ch in range(c)]
    return float(np.clip(np.mean(estimates), 0.0, 1.0))


def _spa_estimate_channel(channel: np.ndarray) -> float:
    u = channel[:, :-1].astype(np.int32).reshape(-1)
    v = channel[:, 1:].astype(np.int32).reshape(-1)

    v_even = (v & 1) == 0
    x = int(((v_even & (u < v)) | (~v_even & (u > v))).sum())
    y = int(((v_even & (u > v)) | (~v_even & (u < v))).sum())
    k = int(((u >> 1) == (v >> 1)).sum())
    pairs = u.size
    if k == 0:
        return 0.0

    # 0.5(W+Z)p^2 + (2X-P)p + (Y-X) = 0, smaller-magnitude root; a negative
    # discriminant only arises in the saturated near-full regime (clean
    # images keep Y - X near 0).
    a = 0.5 * k
    b = 2.0 * x - pairs
    c = y - x
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return 1.0
    root_pos = (-b + math.sqrt(disc)) / (2.0 * a)
    root_neg = (-b - math.sqrt(disc)) / (2.0 * a)
    root = root_pos if abs(root_pos) <= abs(root_neg) else root_neg
    return float(np.clip(root, 0.0, 1.0))


def sample_pair_analysis(img: ImageTensor) -> float:
    """Sample-pair estimate of the embedding rate, clamped to [0, 1]."""
    h, w, c = img.pixels.shape
    if w < 2:
        raise ValueError(f"image width {w} too small for sample pairs")
    estimates = [_spa_estimate_channel(img.pixels[:, :, ch]) for ch in range(c)]
    return float(np.clip(np.mean(estimates), 0.0, 1.0))


def score_image(image_id: str, img: ImageTensor) -> list[DetectorScore]:
    """All detector scores for one image, including the mean fusion."""
    chi = chi_square_attack(img).score
    rs = rs_analysis(img)
    sp = sample_pair_analysis(img)
    fused = (chi + rs + sp) / 3.0
    return [
        DetectorScore(image_id, "chi_square", chi),
        DetectorScore(image_id, "rs", rs),
        DetectorScore(image_id, "sample_pairs", sp),
        DetectorScore(image_id, "fused_mean", fused),
    ]


def roc_and_auc(scores: np.ndarray, labels: np.ndarray) -> RocCurve:
    """Threshold sweep at 0.01 resolution with trapezoidal area.

    ``labels`` marks stego images as True; both classes must be present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must align")
    if labels.all() or (~labels).all():
        raise ValueError("ROC needs both clean and stego images")

    thresholds = np.round(np.arange(0, 101) / 100.0, 2)
    stego = scores[labels]
    clean = scores[~labels]
    tpr = np.array([(stego >= t).mean() for t in thresholds])
    fpr = np.array([(clean >= t).mean() for t in thresholds])
    # integrate toward increasing fpr
    auc = float(np.trapezoid(tpr[::-1], fpr[::-1]))
    return RocCurve(thresholds=thresholds, points=np.stack([fpr, tpr], axis=1), auc=auc)


def feature_distortion_rate(cover: ImageTensor, stego: ImageTensor, extractor) -> float:
    """Relative feature change 100 * ||f(C) - f(S)|| / ||f(C)||.

    The denominator is always the cover's feature norm; a zero-norm cover
    feature vector leaves the rate undefined.
    """
    with torch.no_grad():
        f_c = extractor(cover.to_tensor())
        f_s = extractor(stego.to_tensor())
    denom = float(torch.linalg.vector_norm(f_c))
    if denom == 0.0:
        raise ValueError("cover features have zero norm; distortion rate undefined")
    return 100.0 * float(torch.linalg.vector_norm(f_c - f_s)) / denom


class AgreementResult(NamedTuple):
    agree: bool
    label_cover: int
    label_stego: int
    confidence_cover: float
    confidence_stego: float


def classification_agreement(
    cover: ImageTensor, stego: ImageTensor, classifier
) -> AgreementResult:
    """Top-1 label equality between cover and stego, with confidences."""
    classifier.eval()
    with torch.no_grad():
        p_c = torch.softmax(classifier(cover.to_tensor()[None])[0], dim=-1)
        p_s = torch.softmax(classifier(stego.to_tensor()[None])[0], dim=-1)
    label_c = int(p_c.argmax())
    label_s = int(p_s.argmax())
    return AgreementResult(
        agree=label_c == label_s,
        label_cover=label_c,
        label_stego=label_s,
        confidence_cover=float(p_c[label_c]),
        confidence_stego=float(p_s[label_s]),
    )
