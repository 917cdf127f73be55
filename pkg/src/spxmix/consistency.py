"""Teacher-student consistency training on a per-pixel linear softmax model.

The model is deliberately tiny: each pixel is classified from a 7-dim
feature vector (its RGB, the 3x3 box-mean RGB, and a bias), so the joint
loss has an exact closed-form gradient that finite differences can verify
to high precision, while the training loop still exercises the full
pipeline: weak augmentation, superpixel mixing, teacher pseudo-labels,
consistency loss, and EMA teacher updates.

One training step:

1. draw a labeled batch, weakly augment, compute the supervised
   cross-entropy against ground truth;
2. draw unlabeled pairs, weakly augment both images, superpixel-mix each
   pair, run the teacher on the two augmented images, mix the teacher
   outputs with the *same* mask, and score the student on the mixed image
   against those mixed pseudo-labels;
3. SGD step on ``sup + lambda * cons``; the teacher never receives a
   gradient and moves only by EMA toward the student.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .imgcore import IGNORE_LABEL
from .metrics import confusion, ece, miou, nll
from .mixer import (
    MixConfig,
    donor_count,
    mask_from_superpixels,
    mix_images,
    mix_probmaps,
    sample_superpixels,
    weak_augment,
)
from .superpixel import compute_superpixels

N_FEATURES = 7
CHECKPOINT_MAGIC = b"TMDL"
PROB_FLOOR = 1e-12


class TrainingDivergedError(RuntimeError):
    """Raised when the joint loss turns non-finite."""


@dataclass
class ToyModel:
    """Per-pixel linear softmax classifier; weights are (K, 7) float64."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[1] != N_FEATURES:
            raise ValueError(f"weights must be (K, {N_FEATURES}), got {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("non-finite weights")

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "ToyModel":
        return ToyModel(self.weights.copy())

    @classmethod
    def init_random(cls, num_classes: int, rng: np.random.Generator,
                    scale: float = 0.01) -> "ToyModel":
        return cls(rng.normal(0.0, scale, size=(num_classes, N_FEATURES)))


@dataclass(frozen=True)
class TrainerConfig:
    lam: float = 1.0              # weight of the consistency term
    alpha: float = 0.99           # EMA momentum of the teacher
    lr: float = 0.1
    steps: int = 2000
    warmup_steps: int = 0         # supervised-only steps before the
                                  # consistency term switches on
    mix: MixConfig = field(default_factory=MixConfig)
    pseudo_label_mode: str = "hard"
    seed: int = 0
    batch_labeled: int = 4
    batch_unlabeled: int = 2      # unlabeled pairs per step
    crop: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.warmup_steps <= self.steps:
            raise ValueError(f"warmup_steps must be in [0, steps], "
                             f"got {self.warmup_steps}")
        if self.pseudo_label_mode not in ("hard", "soft"):
            raise ValueError(f"unknown pseudo_label_mode {self.pseudo_label_mode!r}")


# ---------------------------------------------------------------------------
# Features and forward pass


def _box_mean3(channel: np.ndarray) -> np.ndarray:
    padded = np.pad(channel, 1, mode="edge")
    h, w = channel.shape
    acc = np.zeros((h, w), dtype=np.float64)
    for dr in range(3):
        for dc in range(3):
            acc += padded[dr:dr + h, dc:dc + w]
    return acc / 9.0


def features(img: np.ndarray) -> np.ndarray:
    """(H, W, 7) float64 features: RGB/255, 3x3-mean RGB/255, bias 1."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    rgb = img.astype(np.float64) / 255.0
    means = np.stack([_box_mean3(rgb[..., c]) for c in range(3)], axis=-1)
    bias = np.ones(img.shape[:2] + (1,), dtype=np.float64)
    return np.concatenate([rgb, means, bias], axis=-1)


def _probs64(model: ToyModel, feats: np.ndarray) -> np.ndarray:
    """Float64 softmax probabilities from precomputed features."""
    logits = feats @ model.weights.T
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: ToyModel, img: np.ndarray) -> np.ndarray:
    """Per-pixel class probabilities, float32 (H, W, K)."""
    if not np.all(np.isfinite(model.weights)):
        raise ValueError("non-finite weights")
    return _probs64(model, features(img)).astype(np.float32)


def predict_labels(model: ToyModel, img: np.ndarray) -> np.ndarray:
    return _probs64(model, features(img)).argmax(axis=-1).astype(np.uint8)


# ---------------------------------------------------------------------------
# Losses


def sup_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean -ln p(ground truth) over non-ignore pixels."""
    if probs.shape[:2] != labels.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {labels.shape}")
    valid = labels != IGNORE_LABEL
    if not np.any(valid):
        raise ValueError("no labeled pixels")
    p = probs[valid].astype(np.float64)
    picked = p[np.arange(p.shape[0]), labels[valid].astype(np.int64)]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def cons_loss(student_probs: np.ndarray, target_probs: np.ndarray,
              mode: str = "hard") -> float:
    """Pixel-wise cross-entropy between mixed pseudo-labels and the student.

    hard: CE against the per-pixel argmax of the target;
    soft: -mean over pixels of sum_k target_k * ln student_k.
    """
    if student_probs.shape != target_probs.shape:
        raise ValueError(f"shape mismatch: {student_probs.shape} vs {target_probs.shape}")
    p = student_probs.astype(np.float64)
    q = target_probs.astype(np.float64)
    logp = np.log(np.maximum(p, PROB_FLOOR))
    if mode == "hard":
        hard = q.argmax(axis=-1)
        picked = np.take_along_axis(logp, hard[..., None], axis=-1)
        return float(-np.mean(picked))
    if mode == "soft":
        return float(-np.mean(np.sum(q * logp, axis=-1)))
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# One training step: batch assembly shared by loss, gradient, and trainer


@dataclass
class MixedPair:
    x1: np.ndarray            # weakly augmented first unlabeled image
    x2: np.ndarray            # weakly augmented second unlabeled image
    mixed: np.ndarray         # mix(x1, x2, mask)
    mask: np.ndarray          # the one mask applied to images and pseudo-labels
    target_probs: np.ndarray  # mix of the teacher outputs under the same mask


@dataclass
class StepBatch:
    labeled: list[tuple[np.ndarray, np.ndarray]]
    pairs: list[MixedPair]


def prepare_step(
    labeled_batch: list[tuple[np.ndarray, np.ndarray]],
    unlabeled_pairs: list[tuple[np.ndarray, np.ndarray]],
    teacher: ToyModel,
    cfg: TrainerConfig,
    rng: np.random.Generator,
) -> StepBatch:
    """Consume the step's randomness once: augment the labeled batch, then
    build each mixed pair (superpixels from the first image only) and the
    teacher's mixed pseudo-labels. The result is a deterministic function
    of the model weights from here on."""
    labeled = []
    for img, lab in labeled_batch:
        img_a, lab_a = weak_augment(img, lab, rng, cfg.crop)
        labeled.append((img_a, lab_a))

    pairs = []
    for x1, x2 in unlabeled_pairs:
        x1a, _ = weak_augment(x1, None, rng, cfg.crop)
        x2a, _ = weak_augment(x2, None, rng, cfg.crop)
        sp = compute_superpixels(x1a, cfg.mix.algo, cfg.mix.n_superpixels)
        k = donor_count(sp.n, cfg.mix.proportion, clamp=True)
        idx = sample_superpixels(sp, k, rng)
        mask = mask_from_superpixels(sp, idx)
        mixed = mix_images(x1a, x2a, mask)
        t1 = _probs64(teacher, features(x1a))
        t2 = _probs64(teacher, features(x2a))
        target = mix_probmaps(t1, t2, mask)
        pairs.append(MixedPair(x1=x1a, x2=x2a, mixed=mixed, mask=mask,
                               target_probs=target))
    return StepBatch(labeled=labeled, pairs=pairs)


def _loss_terms(model: ToyModel, batch: StepBatch, cfg: TrainerConfig) -> tuple[float, float]:
    sup = 0.0
    for img, lab in batch.labeled:
        sup += sup_loss(_probs64(model, features(img)), lab)
    sup /= max(len(batch.labeled), 1)

    cons = 0.0
    for pair in batch.pairs:
        student = _probs64(model, features(pair.mixed))
        cons += cons_loss(student, pair.target_probs, cfg.pseudo_label_mode)
    cons /= max(len(batch.pairs), 1)
    return sup, cons


def _grad_terms(model: ToyModel, batch: StepBatch, cfg: TrainerConfig) -> np.ndarray:
    """Closed-form softmax cross-entropy gradient of the joint loss.

    For one pixel with features f, probabilities p and target distribution
    q, d(-sum_k q_k ln p_k)/dW = (p - q) outer f; the batch gradient
    averages over pixels and images exactly as the losses do.
    """
    k = model.num_classes
    grad = np.zeros_like(model.weights)

    for img, lab in batch.labeled:
        feats = features(img)
        p = _probs64(model, feats)
        valid = lab != IGNORE_LABEL
        q = np.zeros_like(p)
        rows, cols = np.nonzero(valid)
        q[rows, cols, lab[valid].astype(np.int64)] = 1.0
        diff = (p - q) * valid[..., None]
        n_valid = max(int(np.count_nonzero(valid)), 1)
        grad += np.tensordot(diff, feats, axes=([0, 1], [0, 1])) / n_valid
    grad /= max(len(batch.labeled), 1)

    if cfg.lam > 0 and batch.pairs:
        cons_grad = np.zeros_like(model.weights)
        for pair in batch.pairs:
            feats = features(pair.mixed)
            p = _probs64(model, feats)
            if cfg.pseudo_label_mode == "hard":
                hard = pair.target_probs.argmax(axis=-1)
                q = np.zeros_like(p)
                hr, hc = np.meshgrid(np.arange(p.shape[0]), np.arange(p.shape[1]),
                                     indexing="ij")
                q[hr, hc, hard] = 1.0
            else:
                q = pair.target_probs
            n_pix = p.shape[0] * p.shape[1]
            cons_grad += np.tensordot(p - q, feats, axes=([0, 1], [0, 1])) / n_pix
        cons_grad /= len(batch.pairs)
        grad += cfg.lam * cons_grad
    return grad


def joint_loss(
    model: ToyModel,
    labeled_batch: list[tuple[np.ndarray, np.ndarray]],
    unlabeled_pairs: list[tuple[np.ndarray, np.ndarray]],
    teacher: ToyModel,
    cfg: TrainerConfig,
    rng: np.random.Generator,
) -> float:
    """sup + lambda * cons on one freshly assembled batch.

    The rng fully determines augmentation and mask sampling, so two calls
    with generators in the same state see the same batch; that is what
    makes finite-difference checks of :func:`grad` meaningful.
    """
    batch = prepare_step(labeled_batch, unlabeled_pairs, teacher, cfg, rng)
    sup, cons = _loss_terms(model, batch, cfg)
    return sup + cfg.lam * cons


def grad(
    model: ToyModel,
    labeled_batch: list[tuple[np.ndarray, np.ndarray]],
    unlabeled_pairs: list[tuple[np.ndarray, np.ndarray]],
    teacher: ToyModel,
    cfg: TrainerConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Exact (K, 7) gradient of :func:`joint_loss` w.r.t. the student
    weights; the teacher is treated as a constant."""
    batch = prepare_step(labeled_batch, unlabeled_pairs, teacher, cfg, rng)
    return _grad_terms(model, batch, cfg)


def ema_update(teacher: ToyModel, student: ToyModel, alpha: float) -> ToyModel:
    """phi <- alpha * phi + (1 - alpha) * theta, computed as
    theta + alpha * (phi - theta) so phi == theta stays bit-identical."""
    if teacher.weights.shape != student.weights.shape:
        raise ValueError("teacher/student shape mismatch")
    return ToyModel(student.weights + alpha * (teacher.weights - student.weights))


# ---------------------------------------------------------------------------
# Synthetic scenes


_PALETTE = np.array(
    [
        (92, 92, 92),      # textured background
        (212, 62, 62),
        (62, 204, 70),
        (66, 82, 214),
        (208, 200, 60),
        (190, 70, 200),
        (64, 200, 200),
        (230, 140, 60),
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class SynthTask:
    """Generator for labeled/unlabeled/test splits of synthetic scenes.

    Each scene is a textured background (class 0) with a few colored
    geometric shapes (classes 1..K-1) plus additive Gaussian pixel noise;
    test images get the heavier ``test_noise_sigma``. Splits are disjoint
    by construction: every image derives from (seed, split id, index).
    """

    classes: int = 4
    height: int = 32
    width: int = 32
    n_labeled: int = 3
    n_unlabeled: int = 8
    n_test: int = 6
    noise_sigma: float = 8.0
    test_noise_sigma: float = 30.0
    label_fraction: float = 1.0   # fraction of pixels carrying a label;
                                  # the rest become ignore pixels
    seed: int = 0

    def __post_init__(self) -> None:
        if not 2 <= self.classes <= len(_PALETTE):
            raise ValueError(f"classes must be in [2, {len(_PALETTE)}]")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ValueError(f"label_fraction must be in (0, 1], "
                             f"got {self.label_fraction}")

    def _scene(self, split: int, index: int, sigma: float) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([self.seed, split, index])
        h, w = self.height, self.width

        base = np.empty((h, w, 3), dtype=np.float64)
        base[:] = _PALETTE[0] + rng.normal(0, 6, size=3)
        ramp_dir = rng.random() * 2 * np.pi
        rr, cc = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w),
                             indexing="ij")
        ramp = (np.cos(ramp_dir) * rr + np.sin(ramp_dir) * cc) * rng.uniform(5, 18)
        base += ramp[..., None]

        yy = np.arange(h, dtype=np.float64)[:, None]
        xx = np.arange(w, dtype=np.float64)[None, :]
        labels = np.zeros((h, w), dtype=np.uint8)
        for _ in range(int(rng.integers(2, 5))):
            cls = int(rng.integers(1, self.classes))
            color = _PALETTE[cls] + rng.normal(0, 10, size=3)
            cy = rng.uniform(0.2 * h, 0.8 * h)
            cx = rng.uniform(0.2 * w, 0.8 * w)
            if rng.random() < 0.5:
                radius = rng.uniform(0.12, 0.27) * min(h, w)
                sel = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
            else:
                hh = rng.uniform(0.1, 0.25) * h
                ww = rng.uniform(0.1, 0.25) * w
                sel = (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= ww)
            base[sel] = color
            labels[sel] = cls

        noisy = base + rng.normal(0, sigma, size=base.shape)
        img = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
        return img, labels

    def labeled_set(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        for i in range(self.n_labeled):
            img, lab = self._scene(0, i, self.noise_sigma)
            if self.label_fraction < 1.0:
                rng = np.random.default_rng([self.seed, 3, i])
                sparse = lab.copy()
                sparse[rng.random(lab.shape) >= self.label_fraction] = IGNORE_LABEL
                if np.all(sparse == IGNORE_LABEL):
                    r = int(rng.integers(0, lab.shape[0]))
                    c = int(rng.integers(0, lab.shape[1]))
                    sparse[r, c] = lab[r, c]
                lab = sparse
            out.append((img, lab))
        return out

    def unlabeled_set(self) -> list[np.ndarray]:
        return [self._scene(1, i, self.noise_sigma)[0] for i in range(self.n_unlabeled)]

    def test_set(self, corrupted: bool = True) -> list[tuple[np.ndarray, np.ndarray]]:
        sigma = self.test_noise_sigma if corrupted else self.noise_sigma
        return [self._scene(2, i, sigma) for i in range(self.n_test)]


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainResult:
    student: ToyModel
    teacher: ToyModel
    history: list[tuple[int, float, float]]  # (step, sup_loss, cons_loss)


def train(
    task: SynthTask,
    cfg: TrainerConfig,
    step_hook=None,
    init: ToyModel | None = None,
) -> TrainResult:
    """SGD on the joint loss with an EMA teacher.

    The teacher starts as a copy of the student and is EMA-updated after
    every step; it never sees a gradient. During the first
    ``warmup_steps`` only the supervised term is optimized (the protocol
    used when labels exist for the whole training set: fit supervised
    first, then add the consistency constraint). With ``lam == 0`` the
    unlabeled pipeline is skipped entirely, so the trajectory (and the rng
    stream) is identical to a plain supervised loop with the same seed.

    ``step_hook(step, batch, student, teacher, prev_teacher)`` is an
    instrumentation point, called after the update with the new models and
    the teacher that generated this step's pseudo-labels.
    """
    rng = np.random.default_rng(cfg.seed)
    labeled = task.labeled_set()
    unlabeled = task.unlabeled_set()

    student = init.copy() if init is not None else \
        ToyModel.init_random(task.classes, rng)
    teacher = student.copy()
    history: list[tuple[int, float, float]] = []

    for step in range(cfg.steps):
        lab_idx = rng.integers(0, len(labeled), size=cfg.batch_labeled)
        labeled_batch = [labeled[int(i)] for i in lab_idx]

        unlabeled_pairs: list[tuple[np.ndarray, np.ndarray]] = []
        if cfg.lam > 0 and step >= cfg.warmup_steps:
            for _ in range(cfg.batch_unlabeled):
                i = int(rng.integers(0, len(unlabeled)))
                j = int(rng.integers(0, len(unlabeled) - 1))
                if j >= i:
                    j += 1
                unlabeled_pairs.append((unlabeled[i], unlabeled[j]))

        batch = prepare_step(labeled_batch, unlabeled_pairs, teacher, cfg, rng)
        sup, cons = _loss_terms(student, batch, cfg)
        total = sup + cfg.lam * cons
        if not np.isfinite(total):
            raise TrainingDivergedError(
                f"non-finite loss at step {step}: sup={sup}, cons={cons}")
        history.append((step, sup, cons))

        g = _grad_terms(student, batch, cfg)
        new_weights = student.weights - cfg.lr * g
        if not np.all(np.isfinite(new_weights)):
            raise TrainingDivergedError(f"non-finite weights after step {step}")
        student = ToyModel(new_weights)
        prev_teacher = teacher
        teacher = ema_update(teacher, student, cfg.alpha)

        if step_hook is not None:
            step_hook(step, batch, student, teacher, prev_teacher)

    return TrainResult(student=student, teacher=teacher, history=history)


def evaluate(model: ToyModel, samples: list[tuple[np.ndarray, np.ndarray]],
             num_classes: int) -> dict[str, float]:
    """Corpus metrics for a model: mIoU, NLL, ECE (associative accumulation)."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    all_probs = []
    all_labels = []
    for img, lab in samples:
        probs = forward(model, img)
        cm += confusion(probs.argmax(axis=-1).astype(np.uint8), lab, num_classes)
        all_probs.append(probs.reshape(1, -1, num_classes))
        all_labels.append(lab.reshape(1, -1))
    probs = np.concatenate(all_probs, axis=1)
    labels = np.concatenate(all_labels, axis=1)
    return {
        "miou": miou(cm),
        "nll": nll(probs, labels),
        "ece": ece(probs, labels),
    }


def ablation_sweep(
    task: SynthTask,
    cfg: TrainerConfig,
    n_values: tuple[int, ...] = (20, 50, 100, 200, 500, 1000),
    proportions: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
) -> dict[str, list[dict[str, float]]]:
    """Two 1-D sweeps mirroring the published ablations: vary the
    superpixel count at fixed proportion, then the proportion at fixed
    count. Returns metric rows per cell; no quantitative claims."""
    test = task.test_set(corrupted=True)

    def run(mix_cfg: MixConfig) -> dict[str, float]:
        result = train(task, replace(cfg, mix=mix_cfg))
        return evaluate(result.student, test, task.classes)

    by_n = []
    for n in n_values:
        cell = run(replace(cfg.mix, n_superpixels=n))
        cell["n_superpixels"] = n
        by_n.append(cell)

    by_prop = []
    for prop in proportions:
        cell = run(replace(cfg.mix, proportion=prop))
        cell["proportion"] = prop
        by_prop.append(cell)

    return {"by_n_superpixels": by_n, "by_proportion": by_prop}


# ---------------------------------------------------------------------------
# Checkpoints and history


def save_checkpoint(model: ToyModel, path) -> None:
    """Flat little-endian float32 dump with a 16-byte header:
    magic ``TMDL``, u32 K, u32 F, 4 reserved zero bytes."""
    k, f = model.weights.shape
    header = CHECKPOINT_MAGIC + struct.pack("<II", k, f) + b"\x00" * 4
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(model.weights.astype("<f4").tobytes())


def load_checkpoint(path) -> ToyModel:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        k, f = struct.unpack("<II", header[4:12])
        if f != N_FEATURES:
            raise ValueError(f"{path}: expected {N_FEATURES} features, got {f}")
        data = np.frombuffer(fh.read(4 * k * f), dtype="<f4")
    if data.size != k * f:
        raise ValueError(f"{path}: truncated checkpoint")
    return ToyModel(data.reshape(k, f).astype(np.float64))


def write_history_csv(history: list[tuple[int, float, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "sup_loss", "cons_loss"])
        for step, sup, cons in history:
            writer.writerow([step, f"{sup:.9g}", f"{cons:.9g}"])
