"""Class prototypes in a frozen embedding space.

Classes are represented by the L2-normalized mean of their region embeddings.
A class whose embeddings are widely dispersed (average cosine distance to the
mean above a threshold) is instead represented by several k-means centroids,
so that a single averaged vector does not land between visually distinct
subgroups. Once registered, a class's vectors are never touched again; the
bank only grows, which is what makes the whole pipeline immune to forgetting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError

__all__ = [
    "UNKNOWN_CLASS",
    "RegionEmbedding",
    "ClassPrototypes",
    "PrototypeBank",
    "l2_normalize",
    "compute_prototype",
    "variance_score",
    "lloyd_kmeans",
    "kmeans_subcluster",
]

UNKNOWN_CLASS = -1

DEFAULT_VARIANCE_THRESHOLD = 0.4
DEFAULT_K = 5


@dataclass
class RegionEmbedding:
    """Unit-norm feature vector of one region, with provenance."""

    image_id: str
    region_id: int
    vector: np.ndarray  # (d,)
    gt_class: int = UNKNOWN_CLASS


@dataclass
class ClassPrototypes:
    """Immutable per-class entry: one prototype or several sub-prototypes."""

    class_id: int
    class_name: str
    prototypes: np.ndarray  # (n_prototypes, d) float32, each row unit-norm
    registered_at_step: int
    variance_score: float

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClassPrototypes):
            return NotImplemented
        return (
            self.class_id == other.class_id
            and self.class_name == other.class_name
            and self.registered_at_step == other.registered_at_step
            and self.variance_score == other.variance_score
            and self.prototypes.shape == other.prototypes.shape
            and self.prototypes.tobytes() == other.prototypes.tobytes()
        )


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale ``v`` to unit L2 norm; direction is preserved."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise DegenerateInputError("cannot normalize a zero vector")
    return v / norm


def _stack_vectors(embeddings: list[RegionEmbedding]) -> np.ndarray:
    if not embeddings:
        raise ValueError("embedding list is empty")
    dim = embeddings[0].vector.shape[0]
    classes = {e.gt_class for e in embeddings if e.gt_class != UNKNOWN_CLASS}
    if len(classes) > 1:
        raise ValueError(f"embeddings span multiple classes: {sorted(classes)}")
    out = np.empty((len(embeddings), dim), dtype=np.float64)
    for i, e in enumerate(embeddings):
        if e.vector.shape != (dim,):
            raise ValueError(
                f"embedding {i} has dim {e.vector.shape}, expected ({dim},)"
            )
        out[i] = e.vector
    return out


def compute_prototype(embeddings: list[RegionEmbedding]) -> np.ndarray:
    """L2-normalized mean of the embeddings of one class."""
    vectors = _stack_vectors(embeddings)
    return l2_normalize(vectors.mean(axis=0))


def variance_score(embeddings: list[RegionEmbedding]) -> float:
    """Average cosine distance of each embedding to the (raw) class mean.

    Returns a value in [0, 2]: 0 when all vectors point the same way, growing
    as the class spreads out on the sphere.
    """
    vectors = _stack_vectors(embeddings)
    mean = vectors.mean(axis=0)
    mean_norm = float(np.linalg.norm(mean))
    if mean_norm == 0.0:
        raise DegenerateInputError("class mean is the zero vector")
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("embedding with zero norm")
    cosines = (vectors @ mean) / (norms * mean_norm)
    score = float(np.mean(1.0 - cosines))
    return min(max(score, 0.0), 2.0)  # clamp float noise; true value is in [0, 2]


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: D^2-weighted sampling, deterministic given the rng."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[int(rng.integers(n))]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # Remaining points coincide with chosen centroids; pick uniformly.
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2 / total), rng.random()))
            idx = min(idx, n - 1)
        centroids[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def lloyd_kmeans(
    points: np.ndarray, k: int, seed: int, max_iter: int = 100
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations under squared Euclidean distance with k-means++ seeding.

    Empty clusters are re-seeded from the point farthest from its assigned
    centroid. Stops when assignments stop changing or after ``max_iter``
    rounds. Returns (centroids, assignments, per-iteration SSE); the SSE
    sequence is non-increasing.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(points, k, rng)
    prev_assign = None
    sse_history: list[float] = []
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        assign = np.argmin(d2, axis=1)
        point_cost = d2[np.arange(n), assign]
        sse_history.append(float(point_cost.sum()))
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign
        # Update step; empty clusters grab the currently worst-served point.
        claimable = point_cost.copy()
        for c in range(k):
            members = assign == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
            else:
                far = int(np.argmax(claimable))
                centroids[c] = points[far]
                claimable[far] = -1.0
    return centroids, assign, sse_history


def kmeans_subcluster(
    embeddings: list[RegionEmbedding], k: int, seed: int
) -> list[np.ndarray]:
    """Split one class into min(k, N) sub-prototypes via k-means.

    Embeddings are unit-normalized before clustering (squared Euclidean on
    the sphere orders pairs the same way cosine distance does) and centroids
    are re-normalized on the way out.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    vectors = _stack_vectors(embeddings)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("embedding with zero norm")
    vectors = vectors / norms[:, None]
    k_eff = min(k, vectors.shape[0])
    centroids, _, _ = lloyd_kmeans(vectors, k_eff, seed)
    return [l2_normalize(c) for c in centroids]


class PrototypeBank:
    """Append-only registry of class prototypes in a fixed d-dim space.

    Registration never rewrites existing entries; stored arrays are marked
    read-only so accidental mutation fails loudly.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self.classes: dict[int, ClassPrototypes] = {}
        self.step_log: list[tuple[int, int]] = []  # (step, class_id), append-only

    def __len__(self) -> int:
        return len(self.classes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PrototypeBank):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.step_log == other.step_log
            and list(self.classes) == list(other.classes)
            and self.classes == other.classes
        )

    def content_equal(self, other: "PrototypeBank") -> bool:
        """Equality ignoring step bookkeeping (step_log, registered_at_step).

        Two banks built from the same per-class embedding sets under
        different task partitions compare equal here.
        """
        if self.dim != other.dim or set(self.classes) != set(other.classes):
            return False
        for cid, mine in self.classes.items():
            theirs = other.classes[cid]
            if (
                mine.class_name != theirs.class_name
                or mine.variance_score != theirs.variance_score
                or mine.prototypes.shape != theirs.prototypes.shape
                or mine.prototypes.tobytes() != theirs.prototypes.tobytes()
            ):
                return False
        return True

    def register_class(
        self,
        class_id: int,
        class_name: str,
        embeddings: list[RegionEmbedding],
        variance_threshold: float = DEFAULT_VARIANCE_THRESHOLD,
        k: int = DEFAULT_K,
        seed: int = 0,
        step: int = 0,
    ) -> ClassPrototypes:
        """Add one class: a single mean prototype, or k-means sub-prototypes
        when the class's variance score exceeds ``variance_threshold``."""
        if class_id < 1:
            raise ValueError(f"class ids start at 1 (0 is background), got {class_id}")
        if class_id in self.classes:
            raise ValueError(f"class {class_id} is already registered")
        vectors = _stack_vectors(embeddings)
        if vectors.shape[1] != self.dim:
            raise ValueError(
                f"embedding dim {vectors.shape[1]} does not match bank dim {self.dim}"
            )
        score = variance_score(embeddings)
        if score > variance_threshold:
            protos = kmeans_subcluster(embeddings, k, seed)
        else:
            protos = [compute_prototype(embeddings)]
        stored = np.asarray(protos, dtype=np.float32)
        stored.setflags(write=False)
        entry = ClassPrototypes(
            class_id=class_id,
            class_name=class_name,
            prototypes=stored,
            registered_at_step=step,
            # quantized to the serialized precision so save/load is identity
            variance_score=float(np.float32(score)),
        )
        self.classes[class_id] = entry
        self.step_log.append((step, class_id))
        return entry
