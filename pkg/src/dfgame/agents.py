"""Creator and detector agents: the attack/defense toolbox.

Detectors are handles exposing ``score(image) -> float`` (higher = more
fake) and, for white-box models, ``gradient(image)`` = the per-pixel
gradient of the fakeness logit.  The built-in trainable detector is a
logistic regression on 16x16 mean-centered downsampled luma; its gradient
is analytic and finite-difference checkable.

Creators build submission directories; the bundled ones cover the observed
competition strategies: submit stock swaps, FGSM toward the real class,
and FGSM followed by bilateral filtering blended back into the target.
"""

from __future__ import annotations

import math
import os
import queue
import subprocess
import threading
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    CapabilityError,
    ConvergenceWarning,
    DetectorFaultError,
    DivergenceError,
    ParameterError,
    ShapeError,
)
from .imagebuf import (
    LUMA_WEIGHTS,
    ImageBuf,
    as_float_array,
    bilinear_resize,
    bilinear_resize_adjoint,
    load_png,
    luma,
    save_png,
)
from .imgmetrics import bilateral_filter
from .protocol import SwapTaskList, parse_name
from .synthdata import (
    ELLIPSE_AXES,
    ELLIPSE_CENTER,
    GenConfig,
    face_ellipse_mask,
    render_swap,
)

FEATURE_GRID = 16
FEATURE_DIM = FEATURE_GRID * FEATURE_GRID
DEFAULT_EPS = 8.0 / 255.0
HANDSHAKE = "DFGC-DETECTOR 1"


def toy_features(img) -> np.ndarray:
    """Mean-centered 16x16 bilinear-downsampled luma, flattened (256 dims)."""
    cells = bilinear_resize(luma(img), (FEATURE_GRID, FEATURE_GRID)).ravel()
    return cells - cells.mean()


@dataclass
class DetectorHandle:
    """A scoring function, optionally with input gradients (white-box)."""

    id: str
    score: Callable[[object], float]
    gradient: Optional[Callable[[object], np.ndarray]] = None
    kind: str = "custom"
    spec: Optional[dict] = None

    @property
    def is_white_box(self) -> bool:
        return self.gradient is not None

    def to_spec(self) -> dict:
        if self.spec is None:
            raise CapabilityError(f"detector {self.id} has no serializable spec")
        return self.spec


@dataclass(frozen=True)
class ToyDetectorParams:
    """Logistic-regression weights over toy features plus a provenance tag."""

    weights: np.ndarray  # (256,)
    bias: float
    trained_on: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (FEATURE_DIM,):
            raise ShapeError(f"expected ({FEATURE_DIM},) weights, got {w.shape}")
        if not (np.isfinite(w).all() and math.isfinite(self.bias)):
            raise ParameterError("detector parameters must be finite")
        object.__setattr__(self, "weights", w)

    def logit(self, img) -> float:
        return float(self.weights @ toy_features(img) + self.bias)

    def prob(self, img) -> float:
        return float(expit(self.logit(img)))

    def pixel_gradient(self, img) -> np.ndarray:
        """d logit / d pixel, shape (H, W, 3).

        Mean-centering the features is equivalent to centering the weights,
        so the gradient is the resize adjoint of the centered weights spread
        over the luma coefficients.
        """
        arr = as_float_array(img)
        w_centered = self.weights - self.weights.mean()
        g2d = bilinear_resize_adjoint(
            w_centered.reshape(FEATURE_GRID, FEATURE_GRID), arr.shape[:2]
        )
        return g2d[:, :, None] * LUMA_WEIGHTS[None, None, :]


def toy_detector_handle(params: ToyDetectorParams, det_id: str = "toy") -> DetectorHandle:
    spec = {
        "kind": "toy",
        "id": det_id,
        "weights": [float(v) for v in params.weights],
        "bias": float(params.bias),
        "trained_on": params.trained_on,
    }
    return DetectorHandle(
        id=det_id,
        score=params.prob,
        gradient=params.pixel_gradient,
        kind="toy",
        spec=spec,
    )


def constant_detector_handle(value: float = 0.5, det_id: str = "constant") -> DetectorHandle:
    spec = {"kind": "constant", "id": det_id, "value": float(value)}
    return DetectorHandle(id=det_id, score=lambda img: value, kind="constant", spec=spec)


@dataclass
class TrainConfig:
    lr: float = 0.1
    iters: int = 500
    seed: int = 0


def train_toy_detector(
    real_images: Sequence,
    fake_images: Sequence,
    cfg: Optional[TrainConfig] = None,
    trained_on: str = "",
) -> ToyDetectorParams:
    """Full-batch gradient descent on binary cross-entropy (real=0, fake=1)."""
    cfg = cfg or TrainConfig()
    if not real_images or not fake_images:
        raise ParameterError("both training sets must be non-empty")
    feats = np.stack([toy_features(img) for img in list(real_images) + list(fake_images)])
    labels = np.concatenate(
        [np.zeros(len(real_images)), np.ones(len(fake_images))]
    )
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    w = rng.normal(0.0, 1e-3, FEATURE_DIM)
    b = 0.0
    if np.allclose(feats.std(axis=0), 0.0):
        warnings.warn(
            "training features are all identical; detector cannot separate classes",
            ConvergenceWarning,
        )
    n = feats.shape[0]
    for _ in range(cfg.iters):
        p = expit(feats @ w + b)
        err = p - labels
        w = w - cfg.lr * (feats.T @ err) / n
        b = b - cfg.lr * float(err.mean())
    return ToyDetectorParams(weights=w, bias=b, trained_on=trained_on)


def build_detector(spec: dict) -> DetectorHandle:
    """Rebuild a detector handle from its serializable spec."""
    kind = spec.get("kind")
    if kind == "toy":
        params = ToyDetectorParams(
            weights=np.asarray(spec["weights"], dtype=np.float64),
            bias=float(spec["bias"]),
            trained_on=spec.get("trained_on", ""),
        )
        return toy_detector_handle(params, det_id=spec.get("id", "toy"))
    if kind == "constant":
        return constant_detector_handle(float(spec["value"]), det_id=spec.get("id", "constant"))
    if kind == "external":
        return ExternalDetector(
            command=spec["command"],
            det_id=spec.get("id", "external"),
            timeout=float(spec.get("timeout", 30.0)),
            batch_size=int(spec.get("batch_size", 32)),
        )
    raise ParameterError(f"unknown detector spec kind {kind!r}")


def gradient_check(
    handle: DetectorHandle,
    img,
    n_probes: int = 10,
    h: float = 1e-3,
    seed: int = 0,
) -> float:
    """Max relative error between the handle's gradient and central finite
    differences of its logit at random probe pixels.

    Uses the float pixel domain; probe pixels step +-h in one channel.
    """
    if not handle.is_white_box:
        raise CapabilityError(f"detector {handle.id} exposes no gradient")
    x = as_float_array(img)
    grad = handle.gradient(x)
    if grad.shape != x.shape:
        raise ShapeError(f"gradient shape {grad.shape} != image shape {x.shape}")

    def logit_of(arr):
        # score is sigmoid(logit) for white-box toys; invert for FD stability
        p = float(handle.score(arr))
        p = min(max(p, 1e-12), 1 - 1e-12)
        return math.log(p / (1.0 - p))

    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for _ in range(n_probes):
        i = int(rng.integers(x.shape[0]))
        j = int(rng.integers(x.shape[1]))
        c = int(rng.integers(3))
        hi = x.copy()
        lo = x.copy()
        hi[i, j, c] += h
        lo[i, j, c] -= h
        fd = (logit_of(hi) - logit_of(lo)) / (2.0 * h)
        an = grad[i, j, c]
        denom = max(abs(fd), abs(an), 1e-8)
        worst = max(worst, abs(fd - an) / denom)
    return worst


def fgsm_attack(
    img, detector: DetectorHandle, eps: float = DEFAULT_EPS, mask: Optional[np.ndarray] = None
) -> ImageBuf:
    """One signed gradient step toward the real class:
    ``x' = clamp(x - eps * sign(grad logit) * mask, 0, 1)``.

    Pixels where the mask is zero are returned bit-identical.
    """
    if not detector.is_white_box:
        raise CapabilityError(f"detector {detector.id} is black-box; FGSM needs gradients")
    if eps < 0:
        raise ParameterError(f"eps must be >= 0, got {eps}")
    x = as_float_array(img)
    g = detector.gradient(x)
    delta = -eps * np.sign(g)
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != x.shape[:2]:
            raise ShapeError(f"mask shape {mask.shape} != image plane {x.shape[:2]}")
        delta = delta * mask[:, :, None]
    out = ImageBuf.from_floats(x + delta)
    if mask is not None and isinstance(img, ImageBuf):
        untouched = mask == 0.0
        merged = out.data.copy()
        merged[untouched] = img.data[untouched]
        out = ImageBuf(merged)
    return out


@dataclass
class PerturbationField:
    """Additive per-pixel noise with a blending mask; applied output is
    clamped to [0, 1]."""

    delta: np.ndarray  # (H, W, 3)
    mask: np.ndarray  # (H, W)

    def apply(self, img) -> ImageBuf:
        x = as_float_array(img)
        out = ImageBuf.from_floats(x + self.delta * self.mask[:, :, None])
        if isinstance(img, ImageBuf):
            untouched = self.mask == 0.0
            merged = out.data.copy()
            merged[untouched] = img.data[untouched]
            out = ImageBuf(merged)
        return out

    def max_abs(self) -> float:
        return float(np.abs(self.delta).max())


@dataclass
class AdvNoiseConfig:
    iters: int = 60
    step: float = 0.01
    lambda_reg: float = 0.01
    update_discriminators: bool = False
    seed: int = 0
    delta_budget: float = 16.0 / 255.0
    disc_lr: float = 0.02
    use_face_mask: bool = True


@dataclass
class AdvNoiseResult:
    fields: List[PerturbationField]
    l_adv_trace: List[float]
    l_total_trace: List[float]


def adv_noise_train(
    fakes: Sequence,
    reals: Sequence,
    detectors: Sequence[DetectorHandle],
    cfg: Optional[AdvNoiseConfig] = None,
) -> AdvNoiseResult:
    """Optimize additive adversarial noise against frozen classifiers.

    Minimizes ``sum_i log D_i(Y_a) + log C_i(Y_a)`` (fake-probabilities of
    the perturbed images) plus ``lambda_reg * ||delta||^2``, by forward
    gradient steps with an exact proximal shrink for the quadratic penalty
    (stable for arbitrarily large ``lambda_reg``).  When
    ``update_discriminators`` is set, each ``D_i`` starts as a copy of its
    ``C_i`` and takes interleaved steps to separate the real batch from the
    evolving fakes; the ``C_i`` stay frozen.
    """
    cfg = cfg or AdvNoiseConfig()
    if not detectors:
        raise ParameterError("need at least one detector to attack")
    for det in detectors:
        if not det.is_white_box:
            raise CapabilityError(f"detector {det.id} is black-box; trainer needs gradients")

    fake_arrays = [as_float_array(f) for f in fakes]
    shapes = {a.shape for a in fake_arrays}
    if len(shapes) != 1:
        raise ShapeError(f"fake images must share one shape, got {sorted(shapes)}")
    shape = fake_arrays[0].shape
    mask = (
        face_ellipse_mask(shape[:2], feather_px=2.0)
        if cfg.use_face_mask
        else np.ones(shape[:2])
    )

    frozen: List[ToyDetectorParams] = []
    evolving: List[ToyDetectorParams] = []
    for det in detectors:
        if det.kind != "toy":
            raise CapabilityError(
                f"adversarial-noise training supports toy detectors, got {det.kind!r}"
            )
        params = ToyDetectorParams(
            weights=np.asarray(det.spec["weights"], dtype=np.float64),
            bias=float(det.spec["bias"]),
        )
        frozen.append(params)
        evolving.append(params)  # D_i initialized to C_i; replaced if updating

    real_feats = np.stack([toy_features(r) for r in reals]) if cfg.update_discriminators else None

    deltas = [np.zeros(shape) for _ in fake_arrays]
    l_adv_trace: List[float] = []
    l_total_trace: List[float] = []

    def losses():
        l_adv = 0.0
        reg = 0.0
        for arr, delta in zip(fake_arrays, deltas):
            ya = arr + delta * mask[:, :, None]
            for d_par, c_par in zip(evolving, frozen):
                for par in (d_par, c_par):
                    p = min(max(par.prob(ya), 1e-12), 1.0 - 1e-12)
                    l_adv += math.log(p)
            reg += float(np.sum(delta * delta))
        return l_adv, l_adv + cfg.lambda_reg * reg

    l_adv0, l_tot0 = losses()
    l_adv_trace.append(l_adv0)
    l_total_trace.append(l_tot0)

    shrink = 1.0 / (1.0 + 2.0 * cfg.step * cfg.lambda_reg)
    for it in range(cfg.iters):
        for k, arr in enumerate(fake_arrays):
            ya = arr + deltas[k] * mask[:, :, None]
            grad = np.zeros(shape)
            for d_par, c_par in zip(evolving, frozen):
                for par in (d_par, c_par):
                    p = par.prob(ya)
                    grad += (1.0 - p) * par.pixel_gradient(ya)
            deltas[k] = (deltas[k] - cfg.step * grad * mask[:, :, None]) * shrink
            np.clip(deltas[k], -cfg.delta_budget, cfg.delta_budget, out=deltas[k])

        if cfg.update_discriminators:
            evolving = [
                _discriminator_step(d_par, real_feats, fake_arrays, deltas, mask, cfg.disc_lr)
                for d_par in evolving
            ]

        l_adv, l_tot = losses()
        l_adv_trace.append(l_adv)
        l_total_trace.append(l_tot)
        if (l_tot - l_tot0) > 10.0 * abs(l_tot0) + 1e-9:
            raise DivergenceError(
                f"adversarial-noise training diverged at iter {it}: "
                f"loss {l_tot:.4g} vs initial {l_tot0:.4g}"
            )

    fields = [PerturbationField(delta=d, mask=mask) for d in deltas]
    return AdvNoiseResult(fields=fields, l_adv_trace=l_adv_trace, l_total_trace=l_total_trace)


def _discriminator_step(
    params: ToyDetectorParams,
    real_feats: np.ndarray,
    fake_arrays: List[np.ndarray],
    deltas: List[np.ndarray],
    mask: np.ndarray,
    lr: float,
) -> ToyDetectorParams:
    """One descent step on ``sum log D(X) + log(1 - D(Y_a))``: push reals
    toward 0 and the evolving fakes toward 1."""
    fake_feats = np.stack(
        [toy_features(arr + d * mask[:, :, None]) for arr, d in zip(fake_arrays, deltas)]
    )
    p_real = expit(real_feats @ params.weights + params.bias)
    p_fake = expit(fake_feats @ params.weights + params.bias)
    # d/dw log p(x) = (1-p) phi(x);  d/dw log(1-p(ya)) = -p phi(ya)
    grad_w = (1.0 - p_real) @ real_feats - p_fake @ fake_feats
    grad_b = float((1.0 - p_real).sum() - p_fake.sum())
    return ToyDetectorParams(
        weights=params.weights - lr * grad_w / (len(p_real) + len(p_fake)),
        bias=params.bias - lr * grad_b / (len(p_real) + len(p_fake)),
        trained_on=params.trained_on,
    )


def blend_mask(shape: tuple[int, int], kind: str = "feathered") -> np.ndarray:
    """The three face-region blending masks: full, eroded, feathered."""
    if kind == "full":
        return face_ellipse_mask(shape, feather_px=0.0)
    if kind == "eroded":
        return face_ellipse_mask(shape, feather_px=0.0, scale=0.85)
    if kind == "feathered":
        return face_ellipse_mask(shape, feather_px=6.0)
    raise ParameterError(f"unknown mask kind {kind!r}; use full|eroded|feathered")


@dataclass
class BilateralConfig:
    spatial_sigma: float = 2.0
    range_sigma: float = 0.1
    enabled: bool = True


def blend_postprocess(
    fake,
    target,
    mask: Optional[np.ndarray] = None,
    filter_cfg: Optional[BilateralConfig] = None,
) -> ImageBuf:
    """Bilateral-filter the fake and fuse only its face region into the
    target: ``out = mask * filtered(fake) + (1 - mask) * target``."""
    f = as_float_array(fake)
    t = as_float_array(target)
    if f.shape != t.shape:
        raise ShapeError(f"dimension mismatch: {f.shape} vs {t.shape}")
    filter_cfg = filter_cfg or BilateralConfig()
    if mask is None:
        mask = blend_mask(f.shape[:2], "feathered")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != f.shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} != image plane {f.shape[:2]}")
    if filter_cfg.enabled:
        f = bilateral_filter(f, filter_cfg.spatial_sigma, filter_cfg.range_sigma).floats()
    out = mask[:, :, None] * f + (1.0 - mask[:, :, None]) * t
    return ImageBuf.from_floats(out)


@dataclass
class BlendResult:
    image: ImageBuf
    degenerate_mask: bool


def blend_augment(
    fake_fg, real_bg, mask: Optional[np.ndarray] = None, seed: int = 0
) -> BlendResult:
    """Paste a fake face region onto a real background with a seeded elastic
    deformation of the ellipse boundary; used to synthesize extra fake-class
    training images from blending artifacts."""
    f = as_float_array(fake_fg)
    r = as_float_array(real_bg)
    if f.shape != r.shape:
        raise ShapeError(f"dimension mismatch: {f.shape} vs {r.shape}")
    if mask is None:
        mask = _elastic_ellipse_mask(f.shape[:2], seed)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != f.shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} != image plane {f.shape[:2]}")
    degenerate = bool(mask.max() == 0.0)
    out = mask[:, :, None] * f + (1.0 - mask[:, :, None]) * r
    return BlendResult(image=ImageBuf.from_floats(out), degenerate_mask=degenerate)


def _elastic_ellipse_mask(shape: tuple[int, int], seed: int) -> np.ndarray:
    """Feathered face ellipse whose boundary radius wobbles with seeded
    low-order angular harmonics."""
    h, w = shape
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    cx, cy = ELLIPSE_CENTER[0] * w, ELLIPSE_CENTER[1] * h
    ax, ay = ELLIPSE_AXES[0] * w, ELLIPSE_AXES[1] * h
    rng = np.random.Generator(np.random.PCG64(seed))
    amps = rng.uniform(0.0, 0.08, size=3)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    theta = np.arctan2((ys - cy) / ay, (xs - cx) / ax)
    wobble = 1.0 + sum(a * np.cos((k + 2) * theta + p) for k, (a, p) in enumerate(zip(amps, phases)))
    r = np.sqrt(((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2) / wobble
    feather = 4.0 / min(ax, ay)
    return np.clip((1.0 + feather - r) / (2.0 * feather), 0.0, 1.0)


def aggregate_multiclass(p: Sequence[float]) -> float:
    """Fakeness score from a (real, fake, adversarial-fake) probability
    triple: ``1 - p0`` (equals ``p1 + p2`` under exact normalization)."""
    if len(p) != 3:
        raise ParameterError(f"expected a probability triple, got {len(p)} values")
    p0, p1, p2 = (float(v) for v in p)
    if min(p0, p1, p2) < 0.0:
        raise ParameterError(f"probabilities must be non-negative, got {p!r}")
    if abs(p0 + p1 + p2 - 1.0) > 1e-6:
        raise ParameterError(f"probabilities must sum to 1 within 1e-6, got {p0 + p1 + p2}")
    return 1.0 - p0


class ExternalDetector:
    """Black-box detector adapter over a line-oriented subprocess.

    Protocol (UTF-8, newline-delimited): the child prints the handshake
    line ``DFGC-DETECTOR 1`` on startup, then answers each request line
    ``SCORE<TAB>path`` with ``path<TAB>float``.  Requests are batched;
    each batch shares one timeout.  Access is serialized per handle.
    """

    kind = "external"
    gradient = None

    def __init__(
        self,
        command: Sequence[str] | str,
        det_id: str = "external",
        timeout: float = 30.0,
        batch_size: int = 32,
    ):
        if isinstance(command, str):
            command = [command]
        self.id = det_id
        self.command = [str(c) for c in command]
        self.timeout = timeout
        self.batch_size = max(1, int(batch_size))
        self.spec = {
            "kind": "external",
            "id": det_id,
            "command": self.command,
            "timeout": timeout,
            "batch_size": self.batch_size,
        }
        self._lock = threading.Lock()
        self._proc: Optional[subprocess.Popen] = None
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()

    @property
    def is_white_box(self) -> bool:
        return False

    def to_spec(self) -> dict:
        return self.spec

    def _ensure_started(self):
        if self._proc is not None and self._proc.poll() is None:
            return
        if not Path(self.command[0]).exists() and not _on_path(self.command[0]):
            raise DetectorFaultError(f"external detector executable not found: {self.command[0]}")
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._lines = queue.Queue()
        thread = threading.Thread(target=self._pump, args=(self._proc,), daemon=True)
        thread.start()
        first = self._next_line(deadline=time.monotonic() + self.timeout)
        if first != HANDSHAKE:
            self._shutdown()
            raise DetectorFaultError(
                f"external detector handshake failed: expected {HANDSHAKE!r}, got {first!r}"
            )

    def _pump(self, proc: subprocess.Popen):
        try:
            for line in proc.stdout:
                self._lines.put(line.rstrip("\n"))
        finally:
            self._lines.put(None)

    def _next_line(self, deadline: float) -> Optional[str]:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise DetectorFaultError(f"external detector {self.id} timed out")
        try:
            return self._lines.get(timeout=remaining)
        except queue.Empty:
            raise DetectorFaultError(f"external detector {self.id} timed out") from None

    def score_many(self, images: Sequence) -> List[float]:
        paths = []
        for img in images:
            if not isinstance(img, (str, Path)):
                raise CapabilityError(
                    f"external detector {self.id} scores image paths, got {type(img).__name__}"
                )
            paths.append(str(img))
        out: List[float] = []
        with self._lock:
            self._ensure_started()
            for start in range(0, len(paths), self.batch_size):
                batch = paths[start : start + self.batch_size]
                out.extend(self._score_batch(batch))
        return out

    def _score_batch(self, batch: List[str]) -> List[float]:
        try:
            for p in batch:
                self._proc.stdin.write(f"SCORE\t{p}\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise DetectorFaultError(f"external detector {self.id} pipe broken: {exc}") from exc
        deadline = time.monotonic() + self.timeout
        got: Dict[str, float] = {}
        for _ in batch:
            line = self._next_line(deadline)
            if line is None:
                raise DetectorFaultError(
                    f"external detector {self.id} exited mid-batch; "
                    f"missing {len(batch) - len(got)} response(s)"
                )
            parts = line.split("\t")
            if len(parts) != 2:
                raise DetectorFaultError(f"malformed detector response line: {line!r}")
            path, score_text = parts
            try:
                value = float(score_text)
            except ValueError:
                raise DetectorFaultError(f"non-numeric score in line: {line!r}") from None
            if not math.isfinite(value):
                raise DetectorFaultError(f"non-finite score in line: {line!r}")
            got[path] = value
        missing = [p for p in batch if p not in got]
        if missing:
            raise DetectorFaultError(
                f"external detector {self.id} never answered for: {missing[0]!r}"
            )
        return [got[p] for p in batch]

    def score(self, img) -> float:
        return self.score_many([img])[0]

    def _shutdown(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._proc = None

    def close(self):
        with self._lock:
            self._shutdown()

    def __del__(self):
        try:
            self._shutdown()
        except Exception:
            pass


def _on_path(name: str) -> bool:
    return any(
        (Path(d) / name).exists() for d in os.environ.get("PATH", "").split(os.pathsep) if d
    )


def external_detector(
    command: Sequence[str] | str,
    det_id: str = "external",
    timeout: float = 30.0,
    batch_size: int = 32,
) -> ExternalDetector:
    """Wrap an executable speaking the detector line protocol as a handle."""
    return ExternalDetector(command, det_id=det_id, timeout=timeout, batch_size=batch_size)


# ---------------------------------------------------------------------------
# Scripted agents for the game simulation.
# ---------------------------------------------------------------------------


@dataclass
class SimContext:
    """What an agent sees when asked to act in a phase."""

    dataset_root: Path
    gen_cfg: GenConfig
    workdir: Path
    counterparty: List[DetectorHandle]
    phase: str
    round: int
    seed: int


class CreatorAgent:
    """Base: subclasses implement ``build_images``; ``create`` writes the
    submission directory."""

    def __init__(self, team: str):
        self.team = team

    def create(self, tasks: SwapTaskList, ctx: SimContext) -> Path:
        out = ctx.workdir / f"{self.team}-{ctx.phase}"
        out.mkdir(parents=True, exist_ok=True)
        for entry, img in self.build_images(tasks, ctx):
            save_png(img, out / entry.render())
        return out

    def build_images(self, tasks: SwapTaskList, ctx: SimContext):
        raise NotImplementedError


class StockSwapCreator(CreatorAgent):
    """Submits the generator's stock swaps unmodified (the baseline entry)."""

    def build_images(self, tasks: SwapTaskList, ctx: SimContext):
        for entry in tasks.entries:
            yield entry, render_swap(ctx.gen_cfg, entry)


class CopyTargetCreator(CreatorAgent):
    """Degenerate creator: submits the target images themselves."""

    def build_images(self, tasks: SwapTaskList, ctx: SimContext):
        for entry in tasks.entries:
            yield entry, tasks.target_image(entry)


def _pick_whitebox(counterparty: Sequence[DetectorHandle], hint: Optional[str]):
    white = [d for d in counterparty if d.is_white_box]
    if not white:
        return None
    if hint:
        for d in white:
            if hint in d.id:
                return d
    return white[0]


class FgsmCreator(CreatorAgent):
    """Stock swaps plus one FGSM step against a counterparty white-box
    detector; per-round epsilon schedule supported."""

    def __init__(
        self,
        team: str,
        eps: float = DEFAULT_EPS,
        eps_by_round: Optional[Dict[int, float]] = None,
        target_hint: Optional[str] = None,
        mask_kind: Optional[str] = None,
    ):
        super().__init__(team)
        self.eps = eps
        self.eps_by_round = eps_by_round or {}
        self.target_hint = target_hint
        self.mask_kind = mask_kind

    def _eps_for(self, rnd: int) -> float:
        return self.eps_by_round.get(rnd, self.eps)

    def build_images(self, tasks: SwapTaskList, ctx: SimContext):
        target_det = _pick_whitebox(ctx.counterparty, self.target_hint)
        eps = self._eps_for(ctx.round)
        mask = None
        for entry in tasks.entries:
            img = render_swap(ctx.gen_cfg, entry)
            if target_det is not None and eps > 0:
                if self.mask_kind is not None and mask is None:
                    mask = blend_mask((img.height, img.width), self.mask_kind)
                img = fgsm_attack(img, target_det, eps, mask)
            yield entry, img


class BlendedFgsmCreator(FgsmCreator):
    """FGSM followed by the bilateral+mask post-processing that trades a bit
    of anti-detection for better SSIM and noise terms."""

    def __init__(self, team: str, filter_cfg: Optional[BilateralConfig] = None, **kw):
        super().__init__(team, **kw)
        self.filter_cfg = filter_cfg or BilateralConfig()

    def build_images(self, tasks: SwapTaskList, ctx: SimContext):
        for entry, img in super().build_images(tasks, ctx):
            target = tasks.target_image(entry)
            mask = blend_mask((img.height, img.width), "feathered")
            yield entry, blend_postprocess(img, target, mask, self.filter_cfg)


class DetectorAgent:
    """Base for scripted detector-track agents; ``build`` returns a
    serializable detector spec."""

    def __init__(self, team: str):
        self.team = team

    def build(self, ctx: SimContext) -> dict:
        raise NotImplementedError


class ConstantDetectorAgent(DetectorAgent):
    def __init__(self, team: str, value: float = 0.5):
        super().__init__(team)
        self.value = value

    def build(self, ctx: SimContext) -> dict:
        return {"kind": "constant", "id": f"{self.team}", "value": self.value}


def _train_images(root: Path):
    reals = sorted((root / "train" / "real").glob("*.png"))
    fakes = sorted((root / "train" / "fake").glob("*.png"))
    if not reals or not fakes:
        raise ParameterError(f"dataset {root} has no train/real or train/fake images")
    return reals, fakes


class PlainLogisticAgent(DetectorAgent):
    """Logistic detector trained on the stock training split only."""

    def __init__(self, team: str, train_cfg: Optional[TrainConfig] = None):
        super().__init__(team)
        self.train_cfg = train_cfg or TrainConfig()

    def build(self, ctx: SimContext) -> dict:
        reals, fakes = _train_images(ctx.dataset_root)
        params = train_toy_detector(reals, fakes, self.train_cfg, trained_on="train/stock")
        return toy_detector_handle(params, det_id=self.team).to_spec()


class AugmentedLogisticAgent(DetectorAgent):
    """Logistic detector whose fake class is augmented with FGSM attacks on
    a surrogate plain detector plus blended variants of those attacks (the
    adversarial-examples + blending defense)."""

    def __init__(
        self,
        team: str,
        train_cfg: Optional[TrainConfig] = None,
        eps_list: Sequence[float] = (8.0 / 255.0, 16.0 / 255.0, 24.0 / 255.0),
        blend_augment: bool = True,
    ):
        super().__init__(team)
        self.train_cfg = train_cfg or TrainConfig(lr=0.3, iters=3000)
        self.eps_list = list(eps_list)
        self.blend_augment = blend_augment

    def build(self, ctx: SimContext) -> dict:
        reals, fakes = _train_images(ctx.dataset_root)
        surrogate_cfg = TrainConfig(
            lr=self.train_cfg.lr, iters=self.train_cfg.iters, seed=self.train_cfg.seed + 1
        )
        surrogate = toy_detector_handle(
            train_toy_detector(reals, fakes, surrogate_cfg, trained_on="surrogate"),
            det_id=f"{self.team}-surrogate",
        )
        targets = {
            p: ctx.dataset_root / "train" / "real" / parse_name(p.name).target_name()
            for p in fakes
        }
        fake_bufs = [load_png(p) for p in fakes]
        augmented: List[object] = list(fake_bufs)
        for eps in self.eps_list:
            attacked = [fgsm_attack(img, surrogate, eps) for img in fake_bufs]
            augmented.extend(attacked)
            if self.blend_augment:
                augmented.extend(
                    blend_postprocess(a, load_png(targets[p]))
                    for a, p in zip(attacked, fakes)
                )
        if self.blend_augment:
            augmented.extend(
                blend_postprocess(img, load_png(targets[p]))
                for img, p in zip(fake_bufs, fakes)
            )
        params = train_toy_detector(
            reals, augmented, self.train_cfg, trained_on="train/stock+fgsm+blend"
        )
        return toy_detector_handle(params, det_id=self.team).to_spec()
