# partition_manager.py: synthetic client data, non-i.i.d. partitions, IDX loading

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from csv_manager import CsvManager
from errors import ConfigError, EmptyDataError, IdxFormatError, PartitionError
from seed_manager import derive_seed, make_rng


# ---------------------------
# Logging
# ---------------------------

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SHIFT_KINDS = ("none", "rotation", "concept")
LABEL_SKEWS = ("none", "shards", "dirichlet")
PERMUTATION_STYLES = ("seeded", "cyclic")

PARTITION_STATS_HEADER = ("client_id", "class", "count")


# ---------------------------
# Datasets
# ---------------------------

@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """
    Flat feature rows with integer labels.

    image_shape is (rows, cols) when each row is a flattened image, so that
    rotations can act on the picture instead of on two raw coordinates.
    """
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    image_shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2 or features.shape[0] == 0:
            raise PartitionError(f"PARTITION: dataset needs a nonempty (n x d) feature matrix, got {features.shape}")
        if labels.shape[0] != features.shape[0]:
            raise PartitionError(f"PARTITION: {labels.shape[0]} labels for {features.shape[0]} examples")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise PartitionError(f"PARTITION: labels must lie in [0, {self.n_classes})")
        if self.image_shape is not None:
            rows, cols = (int(v) for v in self.image_shape)
            if rows * cols != features.shape[1]:
                raise PartitionError(f"PARTITION: image shape {self.image_shape} does not fit {features.shape[1]} features")
            object.__setattr__(self, "image_shape", (rows, cols))
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[indices], self.labels[indices], self.n_classes, self.image_shape)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """One client's data with its personalization / evaluation index split."""
    client_id: int
    data: LabeledDataset
    pers_idx: np.ndarray = field(default=None)
    eval_idx: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.data)
        pers = np.arange(n) if self.pers_idx is None else np.asarray(self.pers_idx, dtype=np.int64)
        held = np.zeros(0, dtype=np.int64) if self.eval_idx is None else np.asarray(self.eval_idx, dtype=np.int64)
        if np.intersect1d(pers, held).size:
            raise PartitionError(f"PARTITION: client {self.client_id} pers and eval splits overlap")
        if not np.array_equal(np.sort(np.concatenate([pers, held])), np.arange(n)):
            raise PartitionError(f"PARTITION: client {self.client_id} pers and eval splits must cover all {n} examples")
        object.__setattr__(self, "pers_idx", pers)
        object.__setattr__(self, "eval_idx", held)

    def __len__(self) -> int:
        return len(self.data)

    @property
    def pers_data(self) -> LabeledDataset:
        if self.pers_idx.size == 0:
            raise EmptyDataError(f"PARTITION: client {self.client_id} has an empty personalization split")
        return self.data.subset(self.pers_idx)

    @property
    def eval_data(self) -> LabeledDataset:
        if self.eval_idx.size == 0:
            raise EmptyDataError(f"PARTITION: client {self.client_id} has an empty evaluation split")
        return self.data.subset(self.eval_idx)


# ---------------------------
# Partition schemes
# ---------------------------

def shard_indices(labels: Sequence[int], n_clients: int, shards_per_client: int, seed: int) -> List[np.ndarray]:
    labels = np.asarray(labels)
    if n_clients < 1 or shards_per_client < 1:
        raise PartitionError("PARTITION: n_clients and shards_per_client must be >= 1")
    n_shards = n_clients * shards_per_client
    if labels.shape[0] % n_shards:
        raise PartitionError(
            f"PARTITION: {labels.shape[0]} examples cannot be cut into {n_shards} equal shards "
            f"(shard size {labels.shape[0] / n_shards:.2f}); the dataset size must be a multiple of {n_shards}"
        )
    shard_size = labels.shape[0] // n_shards
    shards = np.argsort(labels, kind="stable").reshape(n_shards, shard_size)
    order = np.random.default_rng(seed).permutation(n_shards)
    return [
        np.sort(shards[order[i * shards_per_client:(i + 1) * shards_per_client]].reshape(-1))
        for i in range(n_clients)
    ]


def shards_partition(ds: LabeledDataset, n_clients: int, shards_per_client: int, seed: int) -> List[ClientDataset]:
    """Label-sorted shards, `shards_per_client` dealt to each client by a seeded shuffle."""
    parts = shard_indices(ds.labels, n_clients, shards_per_client, seed)
    logger.debug(f"PARTITION: shards n_clients={n_clients} shards_per_client={shards_per_client}")
    return [ClientDataset(i, ds.subset(idx)) for i, idx in enumerate(parts)]


def largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    raw = np.asarray(proportions, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    remainder = int(total - counts.sum())
    if remainder > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def dirichlet_indices(labels: Sequence[int], n_classes: int, n_clients: int,
                      concentration: float, seed: int) -> List[np.ndarray]:
    labels = np.asarray(labels)
    if concentration <= 0:
        raise PartitionError(f"PARTITION: concentration must be > 0, got {concentration}")
    if n_clients < 1:
        raise PartitionError("PARTITION: n_clients must be >= 1")
    if labels.shape[0] < n_clients:
        raise PartitionError(f"PARTITION: {labels.shape[0]} examples cannot give {n_clients} clients one each")

    rng = np.random.default_rng(seed)
    pieces: List[List[np.ndarray]] = [[] for _ in range(n_clients)]
    for cls in range(n_classes):
        members = np.flatnonzero(labels == cls)
        if members.size == 0:
            continue
        members = rng.permutation(members)
        counts = largest_remainder(rng.dirichlet(np.full(n_clients, float(concentration))), members.size)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for client in range(n_clients):
            pieces[client].append(members[bounds[client]:bounds[client + 1]])

    parts = [np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=np.int64) for p in pieces]

    # the scheme never guarantees a nonempty client; repair by moving one example at a time
    while True:
        sizes = [p.size for p in parts]
        if min(sizes) > 0:
            break
        empty = sizes.index(0)
        donor = int(np.argmax(sizes))
        logger.warning(f"PARTITION: client {empty} got no data; moving one example from client {donor}")
        parts[empty] = parts[donor][-1:]
        parts[donor] = parts[donor][:-1]
    return parts


def dirichlet_partition(ds: LabeledDataset, n_clients: int, concentration: float, seed: int) -> List[ClientDataset]:
    """Per class, client proportions ~ Dir(concentration); unbalanced and non-i.i.d."""
    parts = dirichlet_indices(ds.labels, ds.n_classes, n_clients, concentration, seed)
    logger.debug(f"PARTITION: dirichlet n_clients={n_clients} concentration={concentration} sizes={[p.size for p in parts]}")
    return [ClientDataset(i, ds.subset(idx)) for i, idx in enumerate(parts)]


def split_pers_eval(cd: ClientDataset, fraction: float, seed: int) -> ClientDataset:
    """Seeded shuffle; the first ceil(fraction * n) go to pers, the rest to eval."""
    n = len(cd.data)
    if n < 2:
        raise PartitionError(f"PARTITION: client {cd.client_id} needs >= 2 examples to split, has {n}")
    if not 0.0 < fraction < 1.0:
        raise PartitionError(f"PARTITION: pers fraction must lie in (0, 1), got {fraction}")
    n_pers = min(max(math.ceil(fraction * n), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return replace(cd, pers_idx=np.sort(order[:n_pers]), eval_idx=np.sort(order[n_pers:]))


# ---------------------------
# Statistics
# ---------------------------

def label_distribution(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    return counts / total if total else np.zeros_like(counts, dtype=np.float64)


def label_heterogeneity(clients: Sequence[ClientDataset]) -> float:
    """Mean total-variation distance between each client's label distribution and the pooled one."""
    counts = np.stack([c.data.class_counts() for c in clients])
    pooled = label_distribution(counts.sum(axis=0))
    distances = [0.5 * np.abs(label_distribution(row) - pooled).sum() for row in counts]
    return float(np.mean(distances))


def partition_stats(clients: Sequence[ClientDataset]) -> List[Tuple[int, int, int]]:
    rows = []
    for client in clients:
        for cls, count in enumerate(client.data.class_counts()):
            rows.append((client.client_id, cls, int(count)))
    return rows


def write_partition_stats(clients: Sequence[ClientDataset], path: str) -> str:
    return CsvManager().write_rows(path, PARTITION_STATS_HEADER, partition_stats(clients))


# ---------------------------
# Synthetic task families
# ---------------------------

@dataclass(frozen=True)
class TaskFamilyConfig:
    """
    A family of client tasks built from N Gaussian class clusters.

    rotation_range is in degrees (the rotated-digit convention); rotations act
    on feature coordinates 0 and 1, or on the whole picture for image data.
    class_decay < 1 makes cluster c appear with weight class_decay ** c in
    every synthetic client, so label frequencies differ between concept groups.
    """
    n_clients: int = 20
    n_classes: int = 5
    samples_per_client: int = 120
    input_dim: int = 8
    shift: str = "concept"
    rotation_range: Tuple[float, float] = (0.0, 200.0)
    n_groups: int = 4
    permutation_style: str = "seeded"
    label_permutations: Optional[Tuple[Tuple[int, ...], ...]] = None
    label_skew: str = "none"
    shards_per_client: int = 2
    concentration: float = 0.3
    cluster_radius: float = 3.0
    noise: float = 0.5
    class_decay: float = 1.0
    seed: int = 0

    def validate(self) -> "TaskFamilyConfig":
        if self.n_clients < 1 or self.n_classes < 2 or self.samples_per_client < 1 or self.input_dim < 1:
            raise ConfigError(
                "TASK FAMILY: need n_clients >= 1, n_classes >= 2, samples_per_client >= 1, input_dim >= 1"
            )
        if self.shift not in SHIFT_KINDS:
            raise ConfigError(f"TASK FAMILY: shift must be one of {SHIFT_KINDS}, got '{self.shift}'")
        if self.label_skew not in LABEL_SKEWS:
            raise ConfigError(f"TASK FAMILY: label_skew must be one of {LABEL_SKEWS}, got '{self.label_skew}'")
        if self.permutation_style not in PERMUTATION_STYLES:
            raise ConfigError(f"TASK FAMILY: permutation_style must be one of {PERMUTATION_STYLES}")
        low, high = self.rotation_range
        if not 0.0 <= low <= high < 360.0:
            raise ConfigError(f"TASK FAMILY: rotation range must satisfy 0 <= low <= high < 360, got {self.rotation_range}")
        if self.shift == "rotation" and self.input_dim < 2:
            raise ConfigError("TASK FAMILY: rotation shift needs input_dim >= 2")
        if self.n_groups < 1:
            raise ConfigError(f"TASK FAMILY: n_groups must be >= 1, got {self.n_groups}")
        if self.shift == "concept" and self.permutation_style == "cyclic" and self.n_groups > self.n_classes:
            raise ConfigError("TASK FAMILY: cyclic label shifts give at most n_classes distinct groups")
        if self.label_permutations is not None:
            if len(self.label_permutations) != self.n_groups:
                raise ConfigError(
                    f"TASK FAMILY: {len(self.label_permutations)} label permutations for {self.n_groups} groups"
                )
            for perm in self.label_permutations:
                if sorted(perm) != list(range(self.n_classes)):
                    raise ConfigError(f"TASK FAMILY: {perm} is not a permutation of range({self.n_classes})")
        if self.noise < 0 or self.cluster_radius <= 0:
            raise ConfigError("TASK FAMILY: noise must be >= 0 and cluster_radius > 0")
        if self.concentration <= 0 or self.shards_per_client < 1:
            raise ConfigError("TASK FAMILY: concentration must be > 0 and shards_per_client >= 1")
        if not 0.0 < self.class_decay <= 1.0:
            raise ConfigError(f"TASK FAMILY: class_decay must lie in (0, 1], got {self.class_decay}")
        return self


def cluster_means(n_classes: int, input_dim: int, radius: float, seed: int) -> np.ndarray:
    """Class centres: evenly spaced on a circle in coordinates 0-1, seeded offsets elsewhere."""
    rng = make_rng(seed, "cluster-means")
    if input_dim == 1:
        return (radius * (np.arange(n_classes) - (n_classes - 1) / 2.0)).reshape(n_classes, 1)
    means = np.zeros((n_classes, input_dim))
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    if input_dim > 2:
        means[:, 2:] = rng.normal(0.0, radius / 2.0, size=(n_classes, input_dim - 2))
    return means


def sample_clusters(clusters: np.ndarray, means: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    return means[clusters] + noise * rng.normal(size=(clusters.shape[0], means.shape[1]))


def balanced_clusters(n: int, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % n_classes)


def class_proportions(n_classes: int, decay: float) -> np.ndarray:
    weights = decay ** np.arange(n_classes, dtype=np.float64)
    return weights / weights.sum()


def decaying_clusters(n: int, n_classes: int, decay: float, rng: np.random.Generator) -> np.ndarray:
    """n cluster indices with counts proportional to decay ** c; decay == 1 is balanced."""
    if decay == 1.0:
        return balanced_clusters(n, n_classes, rng)
    counts = largest_remainder(class_proportions(n_classes, decay), n)
    return rng.permutation(np.repeat(np.arange(n_classes), counts))


def client_rotation_angles(cfg: TaskFamilyConfig) -> np.ndarray:
    low, high = cfg.rotation_range
    return make_rng(cfg.seed, "rotation").uniform(low, high, size=cfg.n_clients)


def group_permutations(cfg: TaskFamilyConfig) -> List[np.ndarray]:
    """One label permutation per concept group; group 0 keeps the original labels."""
    if cfg.label_permutations is not None:
        return [np.asarray(p, dtype=np.int64) for p in cfg.label_permutations]
    classes = np.arange(cfg.n_classes)
    if cfg.permutation_style == "cyclic":
        return [(classes + g) % cfg.n_classes for g in range(cfg.n_groups)]

    rng = make_rng(cfg.seed, "label-permutations")
    perms = [classes]
    distinct_possible = math.factorial(cfg.n_classes)
    while len(perms) < cfg.n_groups:
        candidate = rng.permutation(cfg.n_classes)
        if len(perms) < distinct_possible and any(np.array_equal(candidate, p) for p in perms):
            continue
        perms.append(candidate)
    return perms


def client_group(client_id: int, n_groups: int) -> int:
    # round-robin handles group counts that do not divide the client count
    return client_id % n_groups


def rotate_image_rows(features: np.ndarray, degrees: float, image_shape: Tuple[int, int]) -> np.ndarray:
    """Rotate each flattened [0, 1] image about its centre; corners fill with 0."""
    rows, cols = image_shape
    rotated = np.empty_like(np.asarray(features, dtype=np.float64))
    for index, row in enumerate(features):
        pixels = np.clip(np.rint(np.asarray(row) * 255.0), 0, 255).astype(np.uint8).reshape(rows, cols)
        turned = Image.fromarray(pixels).rotate(float(degrees), resample=Image.Resampling.BILINEAR)
        rotated[index] = np.asarray(turned, dtype=np.float64).reshape(-1) / 255.0
    return rotated


def rotate_features(features: np.ndarray, degrees: float,
                    image_shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    if image_shape is not None:
        return rotate_image_rows(features, degrees, image_shape)
    theta = np.deg2rad(degrees)
    rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    rotated = np.array(features, dtype=np.float64)
    rotated[:, :2] = features[:, :2] @ rotation.T
    return rotated


def _client_pools(cfg: TaskFamilyConfig, base: Optional[LabeledDataset]) -> List[LabeledDataset]:
    """Per-client (features, cluster index) before any shift is applied."""
    if base is None:
        means = cluster_means(cfg.n_classes, cfg.input_dim, cfg.cluster_radius, cfg.seed)
        if cfg.label_skew == "none":
            pools = []
            for client_id in range(cfg.n_clients):
                rng = make_rng(cfg.seed, "client", client_id)
                clusters = decaying_clusters(cfg.samples_per_client, cfg.n_classes, cfg.class_decay, rng)
                pools.append(LabeledDataset(sample_clusters(clusters, means, cfg.noise, rng), clusters, cfg.n_classes))
            return pools
        rng = make_rng(cfg.seed, "pool")
        clusters = decaying_clusters(cfg.n_clients * cfg.samples_per_client, cfg.n_classes, cfg.class_decay, rng)
        base = LabeledDataset(sample_clusters(clusters, means, cfg.noise, rng), clusters, cfg.n_classes)

    if cfg.label_skew == "shards":
        parts = shard_indices(base.labels, cfg.n_clients, cfg.shards_per_client, derive_seed(cfg.seed, "shards"))
    elif cfg.label_skew == "dirichlet":
        parts = dirichlet_indices(base.labels, base.n_classes, cfg.n_clients, cfg.concentration,
                                  derive_seed(cfg.seed, "dirichlet"))
    else:
        order = make_rng(cfg.seed, "iid").permutation(len(base))
        parts = [np.sort(chunk) for chunk in np.array_split(order, cfg.n_clients)]
    return [base.subset(idx) for idx in parts]


def make_task_family(cfg: TaskFamilyConfig, base: Optional[LabeledDataset] = None) -> List[ClientDataset]:
    """
    Build one client dataset per client of the family.

    Without `base`, features come from seeded Gaussian class clusters; with
    `base` (e.g. IDX digits) its examples are dealt out instead. Then:
      rotation -> each client's features rotated by its own angle,
      concept  -> each client's labels remapped by its group's permutation,
      none     -> left as drawn.
    """
    cfg.validate()
    if base is not None and base.n_classes != cfg.n_classes:
        raise ConfigError(f"TASK FAMILY: base dataset has {base.n_classes} classes, config says {cfg.n_classes}")
    pools = _client_pools(cfg, base)
    angles = client_rotation_angles(cfg)
    perms = group_permutations(cfg)

    clients = []
    for client_id, pool in enumerate(pools):
        features, labels = pool.features, pool.labels
        if cfg.shift == "rotation":
            features = rotate_features(features, angles[client_id], pool.image_shape)
        elif cfg.shift == "concept":
            labels = perms[client_group(client_id, cfg.n_groups)][labels]
        clients.append(ClientDataset(client_id, LabeledDataset(features, labels, cfg.n_classes, pool.image_shape)))

    logger.info(
        f"PARTITION: built {len(clients)} clients shift={cfg.shift} label_skew={cfg.label_skew} "
        f"heterogeneity={label_heterogeneity(clients):.3f}"
    )
    return clients


# ---------------------------
# IDX files
# ---------------------------

def _read_idx(path: str, expected_magic: int, n_dims: int) -> Tuple[Tuple[int, ...], np.ndarray]:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        logger.error(f"PARTITION: cannot read IDX file {path}: {e}")
        raise
    if len(raw) < 4:
        raise IdxFormatError(f"PARTITION: {path} is too short to hold an IDX magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"PARTITION: {path} has magic {magic:#010x}, expected {expected_magic:#010x}")
    header_end = 4 + 4 * n_dims
    if len(raw) < header_end:
        raise IdxFormatError(f"PARTITION: {path} header is truncated")
    dims = struct.unpack(">" + "I" * n_dims, raw[4:header_end])
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header_end)
    if payload.size != int(np.prod(dims)):
        raise IdxFormatError(f"PARTITION: {path} holds {payload.size} bytes, header promises {int(np.prod(dims))}")
    return dims, payload


def idx_load(images_path: str, labels_path: str, n_classes: Optional[int] = None) -> LabeledDataset:
    """Parse a big-endian IDX image/label pair; pixels scaled to [0, 1] and flattened."""
    (count, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (label_count,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if count != label_count:
        raise IdxFormatError(f"PARTITION: {count} images in {images_path} but {label_count} labels in {labels_path}")
    if count == 0:
        raise IdxFormatError(f"PARTITION: {images_path} contains no images")
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    logger.info(f"PARTITION: loaded {count} IDX images of {rows}x{cols} from {images_path}")
    return LabeledDataset(features, labels, max(n_classes, 2), (rows, cols))
