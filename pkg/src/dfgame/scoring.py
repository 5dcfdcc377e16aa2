"""The two game metrics: mean-AUROC detection score and the four-term
creation score (fidelity + noise + identity + anti-detection).

The creation total is the sum, in fixed order, of

* mean SSIM between each fake and its target,
* mean noise score (toggled off for the first creation round by default),
* mean cosine between each fake's embedding and its source reference,
* ``anti_coeff * mean(1 - AUROC_j)`` over the counterparty detectors.

The first three terms do not depend on detectors, so rescoring reuses them
via a checksum-keyed cache.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import DetectorFaultError, ParameterError, ScoringError, TamperError
from .identity import TOY_PROVIDER, EmbeddingProvider, id_similarity
from .imagebuf import load_png
from .imgmetrics import DEFAULT_SIGMA_REF, estimate_noise, ssim
from .protocol import SubmissionManifest, SwapTaskList, submission_checksum
from .rocstats import AurocResult, auroc_scores

DEFAULT_ANTI_COEFF = 2.0


@dataclass(frozen=True)
class DetectionScore:
    """Per-dataset AUROCs and their mean (the detection-phase score)."""

    per_dataset: Dict[str, AurocResult]
    mean_auroc: float
    n_datasets: int

    def to_json_dict(self) -> dict:
        return {
            "mean_auroc": self.mean_auroc,
            "n_datasets": self.n_datasets,
            "per_dataset": {k: v.auroc for k, v in sorted(self.per_dataset.items())},
        }


@dataclass(frozen=True)
class CreationScoreBreakdown:
    """Term-by-term decomposition of a creation submission's score."""

    ssim_mean: float
    noise_mean: float
    id_mean: float
    anti_detection: float
    total: float
    n_detectors_used: int
    noise_term_enabled: bool
    per_detector_aurocs: Dict[str, float] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "ssim_mean": self.ssim_mean,
            "noise_mean": self.noise_mean,
            "id_mean": self.id_mean,
            "anti_detection": self.anti_detection,
            "total": self.total,
            "n_detectors_used": self.n_detectors_used,
            "noise_term_enabled": self.noise_term_enabled,
            "per_detector_aurocs": dict(sorted(self.per_detector_aurocs.items())),
        }


def compose_total(
    ssim_mean: float, noise_mean: float, id_mean: float, anti: float, noise_enabled: bool
) -> float:
    """The one accumulation order used everywhere a total is (re)computed."""
    return ssim_mean + (noise_mean if noise_enabled else 0.0) + id_mean + anti


def _score_image(detector, image) -> float:
    value = float(detector.score(image))
    if not math.isfinite(value):
        raise DetectorFaultError(
            f"detector {getattr(detector, 'id', '?')} returned {value!r} for {image}"
        )
    return value


def score_image_set(detector, images: Sequence) -> List[float]:
    """Score every image, attributing any non-finite output to its image."""
    return [_score_image(detector, img) for img in images]


def score_detection(
    detector,
    real_set: Sequence,
    fake_sets: Dict[str, Sequence],
) -> DetectionScore:
    """Mean AUROC of one detector over the submitted fake datasets.

    The shared real set is scored once and reused; datasets are averaged in
    sorted dataset-id order so the mean is bit-stable.
    """
    if not real_set:
        raise ParameterError("real set must be non-empty")
    if not fake_sets:
        raise ParameterError("need at least one fake dataset")
    real_scores = score_image_set(detector, real_set)
    per_dataset: Dict[str, AurocResult] = {}
    for ds_id in sorted(fake_sets):
        images = fake_sets[ds_id]
        if not images:
            raise ParameterError(f"fake dataset {ds_id!r} is empty")
        fake_scores = score_image_set(detector, images)
        per_dataset[ds_id] = auroc_scores(real_scores, fake_scores)
    total = 0.0
    for ds_id in sorted(per_dataset):
        total += per_dataset[ds_id].auroc
    return DetectionScore(
        per_dataset=per_dataset,
        mean_auroc=total / len(per_dataset),
        n_datasets=len(per_dataset),
    )


@dataclass
class ScoringConfig:
    noise_term_enabled: bool = True
    anti_coeff: float = DEFAULT_ANTI_COEFF
    sigma_ref: float = DEFAULT_SIGMA_REF


class CreationScorer:
    """Computes creation breakdowns, caching detector-independent terms.

    The cache key is the submission checksum: SSIM/noise/ID means are pure
    functions of the submitted bytes, so rescoring against a new detector
    set (the endgame rule) only recomputes the anti-detection term.
    """

    def __init__(self, provider: EmbeddingProvider = TOY_PROVIDER):
        self.provider = provider
        self._term_cache: Dict[str, Tuple[float, float, float]] = {}

    def _content_terms(
        self, manifest: SubmissionManifest, tasks: SwapTaskList, sigma_ref: float
    ) -> Tuple[float, float, float]:
        cached = self._term_cache.get(manifest.checksum)
        if cached is not None:
            return cached
        ssim_sum = 0.0
        noise_sum = 0.0
        id_sum = 0.0
        n = len(tasks.entries)
        for entry in tasks.entries:
            path = manifest.images[entry]
            try:
                fake = load_png(path)
            except Exception as exc:
                raise ScoringError(f"unreadable image for {entry.render()}: {exc}") from exc
            target = tasks.target_image(entry)
            ssim_sum += ssim(fake, target)
            noise_sum += estimate_noise(fake, sigma_ref).score
            id_sum += id_similarity(fake, tasks.source_refs[entry.id_s], self.provider).value
        terms = (ssim_sum / n, noise_sum / n, id_sum / n)
        self._term_cache[manifest.checksum] = terms
        return terms

    def score_creation(
        self,
        manifest: SubmissionManifest,
        tasks: SwapTaskList,
        detectors: Sequence,
        real_set: Sequence,
        cfg: Optional[ScoringConfig] = None,
    ) -> CreationScoreBreakdown:
        """Full creation score for a validated submission.

        ``detectors`` may be empty, in which case the anti-detection term is
        zero (a first creation round with no counterparty).
        """
        cfg = cfg or ScoringConfig()
        ssim_mean, noise_mean, id_mean = self._content_terms(manifest, tasks, cfg.sigma_ref)

        fake_paths = [manifest.images[e] for e in tasks.entries]
        per_detector: Dict[str, float] = {}
        anti = 0.0
        if detectors:
            one_minus_sum = 0.0
            for det in detectors:
                result = score_detection(det, real_set, {"submission": fake_paths})
                per_detector[det.id] = result.mean_auroc
                one_minus_sum += 1.0 - result.mean_auroc
            anti = cfg.anti_coeff * one_minus_sum / len(detectors)

        total = compose_total(ssim_mean, noise_mean, id_mean, anti, cfg.noise_term_enabled)
        return CreationScoreBreakdown(
            ssim_mean=ssim_mean,
            noise_mean=noise_mean,
            id_mean=id_mean,
            anti_detection=anti,
            total=total,
            n_detectors_used=len(detectors),
            noise_term_enabled=cfg.noise_term_enabled,
            per_detector_aurocs=per_detector,
        )

    def rescore(
        self,
        manifests: Sequence[SubmissionManifest],
        tasks: SwapTaskList,
        detectors: Sequence,
        real_set: Sequence,
        cfg: Optional[ScoringConfig] = None,
    ) -> List[CreationScoreBreakdown]:
        """Re-evaluate previously validated submissions against a new
        detector set, verifying the stored checksums first."""
        for manifest in manifests:
            ordered = [manifest.images[e] for e in tasks.entries]
            current = submission_checksum(ordered)
            if current != manifest.checksum:
                raise TamperError(
                    f"submission for team {manifest.team!r} changed on disk: "
                    f"checksum {current[:12]} != recorded {manifest.checksum[:12]}"
                )
        return [
            self.score_creation(m, tasks, detectors, real_set, cfg) for m in manifests
        ]


def score_report_json(
    team: str,
    phase: str,
    breakdown: Optional[CreationScoreBreakdown] = None,
    detection: Optional[DetectionScore] = None,
) -> str:
    """Stable-ordered JSON score report shared by CLI, service, and library."""
    record: dict = {"team": team, "phase": phase}
    if breakdown is not None:
        record.update(breakdown.to_json_dict())
    if detection is not None:
        record.update(detection.to_json_dict())
    return json.dumps(record, separators=(",", ":"), allow_nan=False)
