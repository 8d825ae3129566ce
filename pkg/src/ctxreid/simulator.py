"""Synthetic scene-structured worlds and the epochwise training loop.

A world places identity prototypes on the unit sphere and composes scenes of
distinct identities. Every scene also carries a shared nuisance offset drawn
from a low-dimensional subspace (lighting, background), which is what makes
raw density clustering glue different people from the same image together.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .clustering import DbscanParams, TrajectoryRow, recluster_epoch, trajectory_row
from .core import BatchSample, ClusterSet, FeatureMemory, Instance, SceneIndex, normalize_rows
from .losses import LossConfig, combined_loss, update_memory
from .metrics import ClusteringScore, RetrievalScore, memory_retrieval, pairwise_scores

logger = logging.getLogger(__name__)


class WorldConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, snapshot: "FeatureMemory | None" = None, epoch: int = -1):
        super().__init__(message)
        self.snapshot = snapshot
        self.epoch = epoch


def _span(value, name: str) -> tuple[int, int]:
    lo, hi = (value, value) if isinstance(value, int) else tuple(value)
    if lo < 1 or hi < lo:
        raise WorldConfigError(f"{name} must be a range [lo, hi] with 1 <= lo <= hi")
    return int(lo), int(hi)


@dataclass(frozen=True)
class WorldConfig:
    """``identity_separation`` is the pairwise prototype angle in degrees.

    ``scene_nuisance`` is the norm of the offset every crop of a scene shares,
    drawn from a ``nuisance_dims``-dimensional subspace orthogonal to the
    identities. Noise scales are norms of isotropic Gaussian offsets added
    before renormalization.
    """

    n_identities: int = 40
    n_scenes: int = 120
    instances_per_scene: tuple[int, int] = (2, 5)
    proposals_per_instance: tuple[int, int] = (2, 4)
    backgrounds_per_scene: tuple[int, int] = (2, 4)
    identity_separation: float = 90.0
    instance_noise: float = 0.5
    proposal_noise: float = 0.8
    scene_nuisance: float = 0.52
    nuisance_dims: int = 16
    dims: int = 64
    seed: int = 0

    def __post_init__(self):
        for name in ("instances_per_scene", "proposals_per_instance", "backgrounds_per_scene"):
            object.__setattr__(self, name, _span(getattr(self, name), name))
        if self.n_identities < 1 or self.n_scenes < 1 or self.dims < 1:
            raise WorldConfigError("n_identities, n_scenes and dims must be >= 1")
        if self.instances_per_scene[1] > self.n_identities:
            raise WorldConfigError(
                f"instances_per_scene upper bound {self.instances_per_scene[1]} exceeds "
                f"n_identities {self.n_identities}: a scene cannot hold that many distinct people")
        if not 0 <= self.nuisance_dims < self.dims:
            raise WorldConfigError("nuisance_dims must lie in [0, dims)")
        if not 0.0 < self.identity_separation <= 90.0:
            raise WorldConfigError("identity_separation must lie in (0, 90] degrees")
        for name in ("instance_noise", "proposal_noise", "scene_nuisance"):
            if getattr(self, name) < 0:
                raise WorldConfigError(f"{name} must be >= 0")


@dataclass
class World:
    """Instances are ordered by scene; slot ``s`` of every array is instance ``ids[s]``."""

    ids: np.ndarray
    scene_ids: np.ndarray
    truth: np.ndarray
    raw: np.ndarray
    proposals: list[np.ndarray]
    backgrounds: dict[int, np.ndarray]
    scenes: SceneIndex

    @property
    def count(self) -> int:
        return self.ids.size

    @property
    def dims(self) -> int:
        return self.raw.shape[1]

    def instances(self, with_truth: bool = False) -> list[Instance]:
        return [Instance(int(i), int(s), f, int(t) if with_truth else None)
                for i, s, t, f in zip(self.ids, self.scene_ids, self.truth, self.raw)]

    def slots_by_scene(self) -> dict[int, np.ndarray]:
        return {sid: np.flatnonzero(self.scene_ids == sid) for sid in self.scenes.scenes}


def _place_prototypes(rng, n: int, dims: int, angle_deg: float) -> np.ndarray:
    """``n`` unit vectors with every pairwise angle equal to ``angle_deg``.

    An orthonormal frame plus a shared axis of weight ``beta`` gives pairwise
    cosine beta^2 / (1 + beta^2).
    """
    if not 0.0 < angle_deg <= 90.0:
        raise WorldConfigError("identity_separation must lie in (0, 90] degrees")
    cos = math.cos(math.radians(angle_deg))
    if cos >= 1.0 - 1e-9:
        raise WorldConfigError("identity_separation too small: identities would coincide")
    if n + 1 > dims:
        raise WorldConfigError(
            f"cannot place {n} identities {angle_deg} degrees apart in {dims} identity "
            f"dimensions; lower n_identities or nuisance_dims, or raise dims")
    frame, _ = np.linalg.qr(rng.standard_normal((dims, n + 1)))
    beta = math.sqrt(max(cos, 0.0) / (1.0 - cos))
    protos = frame[:, :n].T + beta * frame[:, n]
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def _noise(rng, shape, scale: float, dims: int) -> np.ndarray:
    return scale * rng.standard_normal(shape) / math.sqrt(dims)


def generate_world(cfg: WorldConfig) -> World:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    d, k = cfg.dims, cfg.nuisance_dims
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    nuisance_basis, identity_basis = basis[:, :k], basis[:, k:]
    protos = _place_prototypes(rng, cfg.n_identities, d - k, cfg.identity_separation) @ identity_basis.T

    ids, scene_ids, truth, raw, proposals = [], [], [], [], []
    backgrounds: dict[int, np.ndarray] = {}
    next_id = 0
    for sid in range(cfg.n_scenes):
        if k:
            offset = nuisance_basis @ rng.standard_normal(k)
            offset *= cfg.scene_nuisance / np.linalg.norm(offset)
        else:
            offset = np.zeros(d)
        n_inst = rng.integers(cfg.instances_per_scene[0], cfg.instances_per_scene[1] + 1)
        people = rng.choice(cfg.n_identities, size=n_inst, replace=False)
        for person in people:
            canon = protos[person] + offset + _noise(rng, d, cfg.instance_noise, d)
            canon /= np.linalg.norm(canon)
            n_prop = rng.integers(cfg.proposals_per_instance[0], cfg.proposals_per_instance[1] + 1)
            extra = canon + _noise(rng, (n_prop - 1, d), cfg.proposal_noise, d)
            props = np.vstack([canon, normalize_rows(extra)]) if n_prop > 1 else canon[None]
            ids.append(next_id)
            scene_ids.append(sid)
            truth.append(int(person))
            raw.append(canon)
            proposals.append(props)
            next_id += 1
        n_bg = rng.integers(cfg.backgrounds_per_scene[0], cfg.backgrounds_per_scene[1] + 1)
        clutter = rng.standard_normal((n_bg, d - k)) @ identity_basis.T
        clutter /= np.linalg.norm(clutter, axis=1, keepdims=True)
        backgrounds[sid] = normalize_rows(clutter + offset + _noise(rng, (n_bg, d), cfg.instance_noise, d))

    ids_a = np.array(ids, dtype=np.int64)
    scene_a = np.array(scene_ids, dtype=np.int64)
    scenes = SceneIndex({sid: tuple(ids_a[scene_a == sid].tolist()) for sid in range(cfg.n_scenes)})
    return World(ids_a, scene_a, np.array(truth, dtype=np.int64), np.array(raw),
                 proposals, backgrounds, scenes)


class Encoder:
    """Affine map on mean-centred inputs followed by L2 normalization, trained with SGD.

    ``center`` is subtracted from every input before the map. The bias is only
    updated when ``train_bias`` is set: under output normalization a free bias
    lets every feature drift toward one shared direction.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray | None = None,
                 center: np.ndarray | None = None, train_bias: bool = False):
        self.weight = np.array(weight, dtype=np.float64)
        d_out, d_in = self.weight.shape
        self.bias = np.zeros(d_out) if bias is None else np.array(bias, dtype=np.float64)
        self.center = np.zeros(d_in) if center is None else np.array(center, dtype=np.float64)
        self.train_bias = train_bias

    @classmethod
    def identity(cls, dims: int, center: np.ndarray | None = None, train_bias: bool = False) -> "Encoder":
        return cls(np.eye(dims), center=center, train_bias=train_bias)

    @property
    def dims(self) -> int:
        return self.weight.shape[0]

    def forward(self, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return unit-norm outputs and the pre-normalization norms."""
        z = (np.atleast_2d(raw) - self.center) @ self.weight.T + self.bias
        n = np.linalg.norm(z, axis=1, keepdims=True)
        return z / n, n

    def __call__(self, raw: np.ndarray) -> np.ndarray:
        return self.forward(raw)[0]

    def backward(self, raw: np.ndarray, out: np.ndarray, norms: np.ndarray,
                 grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # d(z/|z|)/dz = (I - x x^T) / |z|
        gz = (grad_out - (grad_out * out).sum(axis=1, keepdims=True) * out) / norms
        return gz.T @ (np.atleast_2d(raw) - self.center), gz.sum(axis=0)

    def step(self, grad_w: np.ndarray, grad_b: np.ndarray, lr: float, weight_decay: float = 0.0) -> None:
        self.weight -= lr * (grad_w + weight_decay * self.weight)
        if self.train_bias:
            self.bias -= lr * grad_b

    def copy(self) -> "Encoder":
        return Encoder(self.weight.copy(), self.bias.copy(), self.center.copy(), self.train_bias)


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 15
    steps_per_epoch: int | None = None
    batch_scenes: int = 4
    learning_rate: float = 0.02
    weight_decay: float = 0.0
    lr_decay_epoch: int | None = None
    lr_decay_factor: float = 0.1
    use_detection_context: bool = True
    use_memory_context: bool = True
    use_scene_context: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_scenes < 1:
            raise ValueError("batch_scenes must be >= 1")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")

    def lr_at(self, epoch: int) -> float:
        if self.lr_decay_epoch is not None and epoch >= self.lr_decay_epoch:
            return self.learning_rate * self.lr_decay_factor
        return self.learning_rate


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    mean_loss: float
    n_clusters: int
    pairwise_precision: float
    pairwise_recall: float
    pairwise_f: float
    nmi: float
    retrieval_map: float
    retrieval_top1: float

    @classmethod
    def build(cls, epoch: int, mean_loss: float, score: ClusteringScore, ret: RetrievalScore) -> "EpochRow":
        return cls(epoch, mean_loss, score.n_clusters, score.pairwise_precision, score.pairwise_recall,
                   score.pairwise_f, score.nmi, ret.map, ret.top1)


@dataclass
class TrainReport:
    rows: list[EpochRow] = field(default_factory=list)
    trajectory: list[TrajectoryRow] = field(default_factory=list)
    cluster_history: list[ClusterSet] = field(default_factory=list)
    memory: FeatureMemory | None = None
    encoder: Encoder | None = None

    @property
    def final(self) -> EpochRow:
        return self.rows[-1]


def initialize_memory(world: World, encoder: Encoder) -> FeatureMemory:
    """One slot per instance: the encoder output of its canonical proposal."""
    if world.count == 0:
        raise ValueError("dataset is empty")
    return FeatureMemory(world.ids.copy(), encoder(world.raw))


def score_memory(memory: FeatureMemory, clusters: ClusterSet, truth: np.ndarray) -> tuple[ClusteringScore, RetrievalScore]:
    return (pairwise_scores(clusters.labels(memory.count), truth),
            memory_retrieval(memory.features, memory.ids, truth))


def _epoch_batches(rng, scene_ids: list[int], schedule: TrainSchedule) -> list[list[int]]:
    b = schedule.batch_scenes
    steps = schedule.steps_per_epoch or math.ceil(len(scene_ids) / b)
    batches: list[list[int]] = []
    pool: list[int] = []
    while len(batches) < steps:
        if len(pool) < b:
            # top up without repeating a scene inside one batch
            fresh = rng.permutation(scene_ids).tolist()
            head = [s for s in fresh if s not in pool][:b - len(pool)]
            pool.extend(head + [s for s in fresh if s not in head])
        batches.append(pool[:b])
        pool = pool[b:]
    return batches


def run_training(world: World, schedule: TrainSchedule, loss_cfg: LossConfig,
                 dbscan: DbscanParams, seed: int = 0, encoder: Encoder | None = None) -> TrainReport:
    """Cluster, train one epoch on the pseudo-labels, recluster; repeat.

    Row 0 of the report scores the initial clustering; row ``e`` scores the
    clustering of the memory after training epoch ``e``. Ground truth is read
    only by the scoring calls.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7EA1]))
    if encoder is None:
        encoder = Encoder.identity(world.dims, center=world.raw.mean(axis=0))
    else:
        encoder = encoder.copy()
    memory = initialize_memory(world, encoder)
    scene_slots = world.slots_by_scene()
    scene_list = sorted(scene_slots)
    truth = world.truth

    report = TrainReport()

    def recluster(epoch: int, mean_loss: float) -> ClusterSet:
        clusters = recluster_epoch(memory, world.scenes, dbscan, schedule.use_scene_context, epoch)
        memory.assign(clusters)
        report.cluster_history.append(clusters)
        report.trajectory.append(trajectory_row(clusters))
        report.rows.append(EpochRow.build(epoch, mean_loss, *score_memory(memory, clusters, truth)))
        return clusters

    clusters = recluster(0, float("nan"))
    for epoch in range(1, schedule.epochs + 1):
        lr = schedule.lr_at(epoch)
        losses = []
        for scenes in _epoch_batches(rng, scene_list, schedule):
            slots = np.concatenate([scene_slots[s] for s in scenes])
            fg_raw = np.vstack([world.proposals[s] for s in slots])
            fg_slot = np.concatenate([np.full(world.proposals[s].shape[0], s) for s in slots])
            fg_prop = np.concatenate([np.arange(world.proposals[s].shape[0]) for s in slots])
            bg_raw = np.vstack([world.backgrounds[s] for s in scenes])

            fg, fg_norm = encoder.forward(fg_raw)
            bg, bg_norm = encoder.forward(bg_raw)
            norms = np.concatenate([fg_norm.ravel(), bg_norm.ravel()])
            if not (np.all(np.isfinite(norms)) and np.all(norms > 0) and np.all(np.isfinite(fg))):
                raise TrainingDiverged(f"non-finite encoder outputs at epoch {epoch}", memory.copy(), epoch)
            batch = BatchSample(fg, world.ids[fg_slot], bg, fg_prop)
            loss = combined_loss(batch, memory.assignment[fg_slot], clusters, loss_cfg,
                                 schedule.use_detection_context, schedule.use_memory_context)
            if not np.isfinite(loss.value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", memory.copy(), epoch)
            losses.append(loss.value / batch.n_x)

            # step on the batch mean so the learning rate is independent of batch size
            gw, gb = encoder.backward(fg_raw, fg, fg_norm, loss.fg_grad / batch.n_x)
            if bg_raw.shape[0]:
                bw, bb = encoder.backward(bg_raw, bg, bg_norm, loss.bg_grad / batch.n_x)
                gw, gb = gw + bw, gb + bb
            encoder.step(gw, gb, lr, schedule.weight_decay)
            if not (np.all(np.isfinite(encoder.weight)) and np.all(np.isfinite(encoder.bias))):
                raise TrainingDiverged(f"non-finite encoder parameters at epoch {epoch}", memory.copy(), epoch)

            for row in np.flatnonzero(fg_prop == 0):
                update_memory(memory, int(fg_slot[row]), fg[row], loss_cfg.gamma)
            clusters = clusters.refreshed(memory.features)
        clusters = recluster(epoch, float(np.mean(losses)))

    report.memory = memory
    report.encoder = encoder
    return report

