"""Item database: feature channels, tag filtering, manifest I/O, similarity kernels.

A catalog holds N items with contiguous integer ids, a small set of
categorical tags per item (used for coarse pre-filtering), and M feature
vectors per item (one per channel).  Similarity within a channel is a
Gaussian kernel over Euclidean distance, so values live in (0, 1] with
s(x, x) = 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

# Kernel values below this are clamped up so no pair is ever "impossible".
SIMILARITY_FLOOR = 1e-300

# Pair-sample cap for the median-distance bandwidth heuristic.
BANDWIDTH_SAMPLE_PAIRS = 10_000

# Subsets up to this size get dense precomputed similarity matrices.
DENSE_THRESHOLD = 2_000


class CatalogError(ValueError):
    """Malformed manifest or inconsistent catalog data."""


@dataclass(frozen=True)
class FeatureChannel:
    """One feature axis: a named vector space with a kernel bandwidth.

    ``bandwidth`` may be None, in which case the similarity provider fills
    it in with the median pairwise distance of the active subset.
    """

    index: int
    name: str
    dim: int
    bandwidth: float | None = None

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise CatalogError(f"channel {self.name!r}: dim must be >= 1")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise CatalogError(f"channel {self.name!r}: bandwidth must be > 0")


@dataclass(frozen=True)
class Item:
    """Read-only view of a single catalog entry."""

    id: int
    tags: dict[str, str]
    features: tuple[np.ndarray, ...]


class Catalog:
    """Immutable set of items with per-channel feature matrices.

    Item ids are the row indices 0..N-1.  ``features[j]`` is the (N, dim_j)
    matrix for channel j.
    """

    def __init__(
        self,
        channels: Sequence[FeatureChannel],
        features: Sequence[np.ndarray],
        tags: Sequence[Mapping[str, str]],
        normalize: bool = False,
    ):
        if len(channels) != len(features):
            raise CatalogError("one feature matrix required per channel")
        if not channels:
            raise CatalogError("catalog needs at least one feature channel")
        mats = []
        n = None
        for ch, mat in zip(channels, features):
            mat = np.ascontiguousarray(mat, dtype=np.float64)
            if mat.ndim != 2:
                raise CatalogError(f"channel {ch.name!r}: feature matrix must be 2-D")
            if mat.shape[1] != ch.dim:
                raise CatalogError(
                    f"channel {ch.name!r}: expected dim {ch.dim}, got {mat.shape[1]}"
                )
            if n is None:
                n = mat.shape[0]
            elif mat.shape[0] != n:
                raise CatalogError("all channels must cover the same items")
            mat.setflags(write=False)
            mats.append(mat)
        if n == 0:
            raise CatalogError("empty catalog")
        if len(tags) != n:
            raise CatalogError("tags must list one mapping per item")
        self.channels: tuple[FeatureChannel, ...] = tuple(channels)
        self.features: tuple[np.ndarray, ...] = tuple(mats)
        self.tags: tuple[dict[str, str], ...] = tuple(dict(t) for t in tags)
        self.normalize = bool(normalize)

    @property
    def n_items(self) -> int:
        return self.features[0].shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def item(self, item_id: int) -> Item:
        if not 0 <= item_id < self.n_items:
            raise IndexError(f"item id {item_id} out of range")
        return Item(
            id=item_id,
            tags=dict(self.tags[item_id]),
            features=tuple(mat[item_id] for mat in self.features),
        )

    def tag_names(self) -> set[str]:
        names: set[str] = set()
        for t in self.tags:
            names.update(t)
        return names

    def tag_values(self) -> dict[str, list[str]]:
        """All labels observed per attribute, sorted."""
        values: dict[str, set[str]] = {}
        for t in self.tags:
            for k, v in t.items():
                values.setdefault(k, set()).add(v)
        return {k: sorted(vs) for k, vs in sorted(values.items())}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Catalog):
            return NotImplemented
        return (
            self.channels == other.channels
            and self.tags == other.tags
            and self.normalize == other.normalize
            and all(np.array_equal(a, b) for a, b in zip(self.features, other.features))
        )


def filter_items(catalog: Catalog, tag_query: Mapping[str, str]) -> np.ndarray:
    """Ids of items matching every (attribute, label) pair, ascending.

    An empty query matches everything.  Unknown attribute names raise,
    unknown labels just match nothing.
    """
    known = catalog.tag_names()
    for attr in tag_query:
        if attr not in known:
            raise CatalogError(f"unknown attribute {attr!r}")
    ids = [
        i
        for i, t in enumerate(catalog.tags)
        if all(t.get(a) == v for a, v in tag_query.items())
    ]
    return np.asarray(ids, dtype=np.int64)


# --- manifest I/O -----------------------------------------------------------
#
# Line-delimited JSON, UTF-8, one item per line:
#   {"id": 0, "tags": {"category": "skirt"}, "features": [[...], [...]]}
# An optional leading metadata line (recognized by the absence of "id")
# carries channel names/dims and explicit bandwidths:
#   {"channels": [{"name": "color", "dim": 3, "bandwidth": 0.8}], "normalize": false}


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "channels": [
                {"name": ch.name, "dim": ch.dim, "bandwidth": ch.bandwidth}
                for ch in catalog.channels
            ],
            "normalize": catalog.normalize,
        }
        fh.write(json.dumps(header) + "\n")
        for i in range(catalog.n_items):
            record = {
                "id": i,
                "tags": catalog.tags[i],
                "features": [mat[i].tolist() for mat in catalog.features],
            }
            fh.write(json.dumps(record) + "\n")


def load_catalog(path: str | Path) -> Catalog:
    path = Path(path)
    header: dict | None = None
    records: list[dict] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CatalogError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if "id" not in obj:
                if header is not None or records:
                    raise CatalogError(f"{path}:{lineno}: stray metadata line")
                header = obj
            else:
                records.append(obj)
    if not records:
        raise CatalogError("empty catalog")

    seen: set[int] = set()
    for rec in records:
        if rec["id"] in seen:
            raise CatalogError(f"duplicate id {rec['id']}")
        seen.add(rec["id"])
    if seen != set(range(len(records))):
        raise CatalogError("item ids must be contiguous from 0")
    records.sort(key=lambda r: r["id"])

    m = len(records[0]["features"])
    if m == 0:
        raise CatalogError("items declare no feature channels")
    dims = [len(records[0]["features"][j]) for j in range(m)]
    for rec in records:
        feats = rec["features"]
        if len(feats) != m:
            raise CatalogError(f"item {rec['id']}: expected {m} channels, got {len(feats)}")
        for j, vec in enumerate(feats):
            if len(vec) != dims[j]:
                raise CatalogError(
                    f"item {rec['id']}: channel {j} has dim {len(vec)}, expected {dims[j]}"
                )

    if header is not None:
        meta = header.get("channels", [])
        if len(meta) != m:
            raise CatalogError("metadata channel count does not match items")
        channels = [
            FeatureChannel(
                index=j,
                name=str(meta[j].get("name", f"channel{j}")),
                dim=dims[j],
                bandwidth=meta[j].get("bandwidth"),
            )
            for j in range(m)
        ]
        normalize = bool(header.get("normalize", False))
    else:
        channels = [FeatureChannel(index=j, name=f"channel{j}", dim=dims[j]) for j in range(m)]
        normalize = False

    features = [
        np.asarray([rec["features"][j] for rec in records], dtype=np.float64)
        for j in range(m)
    ]
    tags = [{str(k): str(v) for k, v in rec.get("tags", {}).items()} for rec in records]
    return Catalog(channels, features, tags, normalize=normalize)


# --- synthetic catalogs -----------------------------------------------------


def _spread_centers(pool: np.ndarray, k: int) -> np.ndarray:
    """Pick k well-separated rows of ``pool`` by farthest-point traversal.

    Few clusters land near the pool extremes (wide spacing); many clusters
    fill the region with progressively tighter spacing, which is what makes
    cluster count control a channel's between/within distance ratio.
    """
    start = int(np.argmax(np.linalg.norm(pool - pool.mean(axis=0), axis=1)))
    chosen = [start]
    dist = np.linalg.norm(pool - pool[start], axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pool - pool[nxt], axis=1))
    return pool[chosen]


def _per_channel(value, m: int, name: str) -> list:
    if np.isscalar(value):
        return [value] * m
    out = list(value)
    if len(out) != m:
        raise CatalogError(f"{name} must be scalar or length {m}")
    return out


def _nn_median_distance(vectors: np.ndarray, sample: int = 2_000) -> float:
    """Median nearest-neighbor distance; the kernel scale for exact search.

    A kernel this tight keeps similarity contrast alive between neighbors,
    which is what distinguishing one exact item from its look-alikes needs;
    the global median pairwise distance is dominated by between-cluster
    spans and washes that contrast out.
    """
    n = vectors.shape[0]
    if n < 2:
        return 1.0
    queries = vectors
    if n > sample:
        queries = vectors[np.random.default_rng(0).choice(n, size=sample, replace=False)]
    d = cdist(queries, vectors)
    d[d == 0] = np.inf
    med = float(np.median(d.min(axis=1)))
    return med if med > 0 and np.isfinite(med) else 1.0


def generate_catalog(
    n: int,
    m: int,
    dims: int | Sequence[int] = 8,
    *,
    clusters: int | Sequence[int] = 8,
    separation: float | Sequence[float] = 1.0,
    noise: float | Sequence[float] = 0.25,
    tags: Mapping[str, int] | None = None,
    channel_names: Sequence[str] | None = None,
    seed: int = 0,
    normalize: bool = False,
    cluster_tag: str | None = None,
    calibrate_bandwidth: bool = True,
) -> Catalog:
    """Deterministic clustered catalog for tests and simulation studies.

    Each channel draws ``clusters[j]`` spread-out centers and assigns every
    item to one uniformly; vectors are center + isotropic noise.  Raising
    ``separation`` (center scale) relative to ``noise`` makes a channel more
    discriminative.  Tag attributes get uniform labels, e.g. ``{"category": 4}``
    yields labels category0..category3.  ``cluster_tag="cluster"`` records
    each item's channel-j cluster under the attribute ``clusterj``.

    By default each channel carries an explicit kernel bandwidth, the
    median nearest-neighbor distance of its vectors; pass
    ``calibrate_bandwidth=False`` to fall back to the provider's median
    pairwise-distance heuristic.
    """
    if n < 1 or m < 1:
        raise CatalogError("need n >= 1 items and m >= 1 channels")
    dims_l = [int(d) for d in _per_channel(dims, m, "dims")]
    clusters_l = [int(c) for c in _per_channel(clusters, m, "clusters")]
    separation_l = [float(s) for s in _per_channel(separation, m, "separation")]
    noise_l = [float(s) for s in _per_channel(noise, m, "noise")]
    if any(c < 1 for c in clusters_l):
        raise CatalogError("cluster counts must be >= 1")
    if tags is None:
        tags = {"category": 4, "color": 9}
    if channel_names is None:
        channel_names = [f"channel{j}" for j in range(m)]

    rng = np.random.default_rng(seed)
    features = []
    assignments = []
    for j in range(m):
        d, k = dims_l[j], clusters_l[j]
        pool = rng.standard_normal((max(256, 8 * k), d))
        centers = _spread_centers(pool, k) * separation_l[j]
        assign = rng.integers(0, k, size=n)
        mat = centers[assign] + noise_l[j] * rng.standard_normal((n, d))
        features.append(mat)
        assignments.append(assign)

    tag_rows: list[dict[str, str]] = [{} for _ in range(n)]
    for attr in sorted(tags):
        count = int(tags[attr])
        labels = rng.integers(0, count, size=n)
        for i in range(n):
            tag_rows[i][attr] = f"{attr}{labels[i]}"
    if cluster_tag is not None:
        for j, assign in enumerate(assignments):
            for i in range(n):
                tag_rows[i][f"{cluster_tag}{j}"] = f"c{assign[i]}"

    channels = [
        FeatureChannel(
            index=j,
            name=str(channel_names[j]),
            dim=dims_l[j],
            bandwidth=_nn_median_distance(features[j]) if calibrate_bandwidth else None,
        )
        for j in range(m)
    ]
    return Catalog(channels, features, tag_rows, normalize=normalize)


# --- similarity -------------------------------------------------------------


class SimilarityProvider:
    """Per-channel kernel similarity over one catalog subset.

    s_j(x, y) = exp(-||f_x - f_y||^2 / (2 sigma_j^2)), clamped to stay
    strictly positive.  Immutable after construction; safe to share across
    sessions.  Item arguments are catalog ids; vectorized accessors return
    arrays in subset-position order (``ids`` ascending).
    """

    def __init__(
        self,
        catalog: Catalog,
        ids: np.ndarray | Sequence[int] | None = None,
        channels: Sequence[int] | None = None,
        dense_threshold: int = DENSE_THRESHOLD,
    ):
        if ids is None:
            ids = np.arange(catalog.n_items, dtype=np.int64)
        ids = np.unique(np.asarray(ids, dtype=np.int64))
        if ids.size == 0:
            raise CatalogError("empty subset")
        if ids[0] < 0 or ids[-1] >= catalog.n_items:
            raise CatalogError("subset ids out of range")
        if channels is None:
            channels = range(catalog.n_channels)
        self.ids = ids
        self.ids.setflags(write=False)
        self._pos = {int(i): p for p, i in enumerate(ids)}
        self.channel_names = tuple(catalog.channels[j].name for j in channels)

        self._vectors: list[np.ndarray] = []
        for j in channels:
            vecs = catalog.features[j][ids]
            if catalog.normalize:
                norms = np.linalg.norm(vecs, axis=1, keepdims=True)
                vecs = vecs / np.where(norms == 0, 1.0, norms)
            self._vectors.append(np.ascontiguousarray(vecs))

        self.bandwidths = np.array(
            [
                catalog.channels[j].bandwidth
                if catalog.channels[j].bandwidth is not None
                else self._median_bandwidth(self._vectors[pos])
                for pos, j in enumerate(channels)
            ]
        )

        self._dense: list[np.ndarray] | None = None
        self._row_cache: dict[tuple[int, int], np.ndarray] = {}
        if self.n_items <= dense_threshold:
            self._dense = [
                self._kernel(cdist(v, v, "sqeuclidean"), s)
                for v, s in zip(self._vectors, self.bandwidths)
            ]

    @staticmethod
    def _median_bandwidth(vectors: np.ndarray) -> float:
        n = vectors.shape[0]
        if n < 2:
            return 1.0
        total_pairs = n * (n - 1) // 2
        if total_pairs <= BANDWIDTH_SAMPLE_PAIRS:
            d = cdist(vectors, vectors)
            dists = d[np.triu_indices(n, k=1)]
        else:
            rng = np.random.default_rng(0)
            a = rng.integers(0, n, size=BANDWIDTH_SAMPLE_PAIRS)
            b = rng.integers(0, n, size=BANDWIDTH_SAMPLE_PAIRS)
            keep = a != b
            dists = np.linalg.norm(vectors[a[keep]] - vectors[b[keep]], axis=1)
        med = float(np.median(dists))
        return med if med > 0 else 1.0

    @staticmethod
    def _kernel(sq_dist: np.ndarray, sigma: float) -> np.ndarray:
        return np.maximum(np.exp(-sq_dist / (2.0 * sigma * sigma)), SIMILARITY_FLOOR)

    @property
    def n_items(self) -> int:
        return int(self.ids.size)

    @property
    def n_channels(self) -> int:
        return len(self._vectors)

    def position(self, item_id: int) -> int:
        try:
            return self._pos[int(item_id)]
        except KeyError:
            raise CatalogError(f"item {item_id} not in subset") from None

    def positions(self, item_ids: Iterable[int]) -> np.ndarray:
        return np.asarray([self.position(i) for i in item_ids], dtype=np.int64)

    def __contains__(self, item_id: int) -> bool:
        return int(item_id) in self._pos

    def sim_row(self, j: int, item_id: int) -> np.ndarray:
        """s_j(item, y) for every y in the subset, position order."""
        if not 0 <= j < self.n_channels:
            raise CatalogError(f"channel index {j} out of range")
        pos = self.position(item_id)
        if self._dense is not None:
            return self._dense[j][pos]
        key = (j, pos)
        row = self._row_cache.get(key)
        if row is None:
            v = self._vectors[j]
            sq = cdist(v[pos : pos + 1], v, "sqeuclidean")[0]
            row = self._kernel(sq, float(self.bandwidths[j]))
            row.setflags(write=False)
            self._row_cache[key] = row
        return row

    def sim_rows(self, j: int, item_ids: Iterable[int]) -> np.ndarray:
        """Stacked sim_row results, one row per requested item."""
        if self._dense is not None:
            return self._dense[j][self.positions(item_ids)]
        return np.vstack([self.sim_row(j, i) for i in item_ids])

    def similarity(self, j: int, x: int, y: int) -> float:
        return float(self.sim_row(j, x)[self.position(y)])


class AggregateSimilarityProvider:
    """Single-channel view averaging every base channel.

    Backs the fixed-weight baseline: one static metric, no re-weighting.
    Averages of values in (0, 1] stay in (0, 1] with unit self-similarity.
    """

    def __init__(self, base: SimilarityProvider):
        self._base = base
        self.ids = base.ids
        self.bandwidths = base.bandwidths
        self.channel_names = ("aggregate",)

    @property
    def n_items(self) -> int:
        return self._base.n_items

    @property
    def n_channels(self) -> int:
        return 1

    def position(self, item_id: int) -> int:
        return self._base.position(item_id)

    def positions(self, item_ids: Iterable[int]) -> np.ndarray:
        return self._base.positions(item_ids)

    def __contains__(self, item_id: int) -> bool:
        return item_id in self._base

    def sim_row(self, j: int, item_id: int) -> np.ndarray:
        if j != 0:
            raise CatalogError("aggregate provider has a single channel")
        rows = [self._base.sim_row(k, item_id) for k in range(self._base.n_channels)]
        return np.mean(rows, axis=0)

    def sim_rows(self, j: int, item_ids: Iterable[int]) -> np.ndarray:
        if j != 0:
            raise CatalogError("aggregate provider has a single channel")
        stacked = [self._base.sim_rows(k, item_ids) for k in range(self._base.n_channels)]
        return np.mean(stacked, axis=0)

    def similarity(self, j: int, x: int, y: int) -> float:
        return float(self.sim_row(j, x)[self.position(y)])
