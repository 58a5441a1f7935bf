"""
Per-segment clustering (KMeans, GMM, OPTICS, HDBSCAN) and internal validation metrics
"""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, Field
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from analysis.segmentation import DeltaF, SegmentMap, delta_f, encode_segment_features
from core.errors import ConvergenceFailure, PipelineError, RejectedInput, UndefinedMetric
from core.models import FeatureOrigin, LabeledDataset

EPS = 1e-12
ALGORITHMS = ("kmeans", "gmm", "optics", "hdbscan")


class ClusteringParams(BaseModel):
    algorithm: Literal["kmeans", "gmm", "optics", "hdbscan"] = "hdbscan"
    algorithms: List[str] = Field(default_factory=lambda: list(ALGORITHMS))  # metrics table
    k: int = Field(default=3, ge=1)
    max_iter: int = Field(default=100, ge=1)
    reg: float = Field(default=1e-6, gt=0)
    min_pts: int = Field(default=5, ge=1)
    eps_max: float = Field(default=float("inf"), gt=0)
    reach_threshold: float = Field(default=0.5, gt=0)
    min_cluster_size: int = Field(default=15, ge=2)
    min_samples: Optional[int] = Field(default=None, ge=1)
    min_segment_rows: int = Field(default=30, ge=2)
    max_segment_rows: int = Field(default=2000, ge=10)
    delta_f: bool = True


# ============================================
# RESULTS
# ============================================

@dataclass(frozen=True)
class ClusterLabeling:
    labels: np.ndarray  # int64, -1 = noise
    algorithm: str
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def k_effective(self) -> int:
        return int(np.unique(self.labels[self.labels >= 0]).size)

    @property
    def noise_fraction(self) -> float:
        return float((self.labels < 0).mean()) if self.labels.size else 0.0


@dataclass(frozen=True)
class KMeansResult:
    labeling: ClusterLabeling
    centroids: np.ndarray
    objective: List[float]


@dataclass(frozen=True)
class GMMResult:
    labeling: ClusterLabeling
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    responsibilities: np.ndarray
    objective: List[float]  # penalized log-likelihood per iteration
    log_likelihood: float  # unpenalized, at the final parameters


@dataclass(frozen=True)
class OpticsResult:
    labeling: ClusterLabeling
    ordering: np.ndarray
    reachability: np.ndarray  # per point, inf where undefined
    core_distances: np.ndarray


@dataclass(frozen=True)
class HdbscanResult:
    labeling: ClusterLabeling
    stability: Dict[int, float]  # per output cluster id
    mst: np.ndarray  # (n-1, 3): a, b, weight
    warnings: List[str] = field(default_factory=list)

    @property
    def mst_weight(self) -> float:
        return float(self.mst[:, 2].sum()) if self.mst.size else 0.0


@dataclass(frozen=True)
class ClusterValidation:
    silhouette: Optional[float]
    calinski_harabasz: Optional[float]
    davies_bouldin: Optional[float]
    db_capped: bool = False


def _as_matrix(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(-1, 1) if X.ndim == 1 else X


# ============================================
# KMEANS
# ============================================

def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [int(rng.integers(X.shape[0]))]
    d2 = cdist(X, X[centers], "sqeuclidean")[:, 0]
    for _ in range(1, k):
        idx = int(rng.choice(X.shape[0], p=d2 / d2.sum()))
        centers.append(idx)
        d2 = np.minimum(d2, cdist(X, X[[idx]], "sqeuclidean")[:, 0])
    return X[centers].copy()


def kmeans_fit(X: np.ndarray, k: int, seed: int, max_iter: int = 100) -> KMeansResult:
    """
    Lloyd iterations from a k-means++ start.

    Stops when an assignment step changes nothing (the result is then a
    fixed point) or after max_iter iterations.
    """
    X = _as_matrix(X)
    distinct = np.unique(X, axis=0).shape[0]
    if not 1 <= k <= distinct:
        raise RejectedInput(f"k={k} but data has {distinct} distinct rows")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(X, k, rng)

    labels = None
    history: List[float] = []
    for _ in range(max_iter):
        d2 = cdist(X, centroids, "sqeuclidean")
        new_labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(X.shape[0]), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts):
            centroids[j] = X[labels == j].mean(axis=0)

    labeling = ClusterLabeling(labels.astype(np.int64), "kmeans", {"k": k, "seed": seed})
    return KMeansResult(labeling=labeling, centroids=centroids, objective=history)


# ============================================
# GMM
# ============================================

def _gmm_m_step(X: np.ndarray, resp: np.ndarray, reg: float):
    n, d = X.shape
    nk = resp.sum(axis=0)
    if (nk < EPS).any():
        raise ConvergenceFailure("GMM component lost all responsibility", residual=float(nk.min()))
    weights = nk / n
    means = (resp.T @ X) / nk[:, None]
    covariances = np.empty((len(nk), d, d))
    for j in range(len(nk)):
        centered = X - means[j]
        covariances[j] = (resp[:, j, None] * centered).T @ centered / nk[j] + reg * np.eye(d)
    return weights, means, covariances


def _gmm_log_terms(X: np.ndarray, weights, means, covariances, reg: float) -> np.ndarray:
    """log w_j + log N(x | mu_j, S_j) - reg/2 * tr(S_j^-1), per row and component; reg = 0 drops the penalty"""
    n, d = X.shape
    out = np.empty((n, len(weights)))
    for j in range(len(weights)):
        try:
            chol = np.linalg.cholesky(covariances[j])
        except np.linalg.LinAlgError:
            raise ConvergenceFailure(f"GMM covariance {j} is not positive definite") from None
        solved = np.linalg.solve(chol, (X - means[j]).T)
        maha = np.sum(solved**2, axis=0)
        log_det = 2.0 * np.sum(np.log(np.diag(chol)))
        inv_chol = np.linalg.inv(chol)
        trace_inv = float(np.sum(inv_chol**2))
        out[:, j] = np.log(weights[j]) - 0.5 * (d * np.log(2 * np.pi) + log_det + maha) - 0.5 * reg * trace_inv
    return out


def gmm_fit(X: np.ndarray, k: int, seed: int, max_iter: int = 100, reg: float = 1e-6, tol: float = 1e-9) -> GMMResult:
    """
    Full-covariance Gaussian mixture by EM, initialized from k-means.

    The covariance update adds `reg` to the diagonal, which is the exact
    maximizer of the log-likelihood penalized by reg/2 * tr(S^-1) per point;
    that penalized objective is what is tracked, and it never decreases.
    The plain log-likelihood of the final fit is reported separately.
    """
    if reg <= 0:
        raise RejectedInput("reg must be positive")
    X = _as_matrix(X)
    init = kmeans_fit(X, k, seed, max_iter=max_iter)
    resp = np.zeros((X.shape[0], k))
    resp[np.arange(X.shape[0]), init.labeling.labels] = 1.0

    history: List[float] = []
    for _ in range(max_iter):
        weights, means, covariances = _gmm_m_step(X, resp, reg)
        log_terms = _gmm_log_terms(X, weights, means, covariances, reg)
        norm = logsumexp(log_terms, axis=1)
        resp = np.exp(log_terms - norm[:, None])
        history.append(float(norm.sum()))
        if len(history) > 1 and history[-1] - history[-2] <= tol * max(1.0, abs(history[-2])):
            break

    labels = resp.argmax(axis=1).astype(np.int64)
    labeling = ClusterLabeling(labels, "gmm", {"k": k, "seed": seed, "reg": reg})
    log_likelihood = float(logsumexp(_gmm_log_terms(X, weights, means, covariances, 0.0), axis=1).sum())
    logger.debug(
        f"GMM k={k}: {len(history)} EM iterations, objective {history[-1]:.4f}, log-likelihood {log_likelihood:.4f}"
    )
    return GMMResult(labeling, weights, means, covariances, resp, history, log_likelihood)


# ============================================
# OPTICS
# ============================================

def core_distances(D: np.ndarray, min_pts: int) -> np.ndarray:
    """Distance to the min_pts-th nearest neighbor, self excluded (inf when absent)"""
    n = D.shape[0]
    if min_pts > n - 1:
        return np.full(n, np.inf)
    return np.sort(D, axis=1)[:, min_pts]


def optics(
    X: np.ndarray, min_pts: int = 5, eps_max: float = np.inf, reach_threshold: float = 0.5
) -> OpticsResult:
    """
    OPTICS ordering with threshold extraction.

    Points whose reachability exceeds the threshold start a new cluster when
    their own core distance is within it, otherwise they are noise.
    """
    if min_pts < 1:
        raise RejectedInput(f"min_pts must be >= 1, got {min_pts}")
    X = _as_matrix(X)
    n = X.shape[0]
    D = cdist(X, X)
    core = core_distances(D, min_pts)
    core[core > eps_max] = np.inf

    reach = np.full(n, np.inf)
    processed = np.zeros(n, dtype=bool)
    order: List[int] = []

    def expand(p: int) -> None:
        processed[p] = True
        order.append(p)
        if not np.isfinite(core[p]):
            return
        open_ = ~processed & (D[p] <= eps_max)
        candidate = np.maximum(core[p], D[p])
        reach[open_] = np.minimum(reach[open_], candidate[open_])

    for start in range(n):
        if processed[start]:
            continue
        expand(start)
        while True:
            seeds = np.flatnonzero(~processed & np.isfinite(reach))
            if not seeds.size:
                break
            expand(int(seeds[np.argmin(reach[seeds])]))

    labels = np.full(n, -1, dtype=np.int64)
    current = -1
    for p in order:
        if reach[p] > reach_threshold:
            if core[p] <= reach_threshold:
                current += 1
                labels[p] = current
        else:
            labels[p] = current
    labeling = ClusterLabeling(
        labels, "optics", {"min_pts": min_pts, "eps_max": eps_max, "reach_threshold": reach_threshold}
    )
    return OpticsResult(labeling, np.array(order, dtype=np.int64), reach, core)


# ============================================
# HDBSCAN
# ============================================

def mutual_reachability(X: np.ndarray, min_samples: int) -> np.ndarray:
    """d_mreach(a, b) = max(core_a, core_b, d(a, b)), zero diagonal"""
    X = _as_matrix(X)
    D = cdist(X, X)
    core = core_distances(D, min(min_samples, X.shape[0] - 1))
    M = np.maximum(D, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(M, 0.0)
    return M


def prim_mst(M: np.ndarray) -> np.ndarray:
    """Dense Prim; rows (a, b, weight) in insertion order"""
    n = M.shape[0]
    if n < 2:
        return np.empty((0, 3))
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = M[0].copy()
    parent = np.zeros(n, dtype=np.int64)
    edges = []
    for _ in range(n - 1):
        candidates = np.where(in_tree, np.inf, best)
        j = int(np.argmin(candidates))
        edges.append((parent[j], j, best[j]))
        in_tree[j] = True
        closer = ~in_tree & (M[j] < best)
        best[closer] = M[j][closer]
        parent[closer] = j
    return np.array(edges, dtype=np.float64)


def _single_linkage(mst: np.ndarray, n: int) -> np.ndarray:
    """scipy-style linkage rows (left, right, distance, size) from MST edges"""
    edges = mst[np.argsort(mst[:, 2], kind="mergesort")]
    parent = np.arange(2 * n - 1)
    size = np.ones(2 * n - 1, dtype=np.int64)

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    linkage = np.empty((n - 1, 4))
    for i, (a, b, w) in enumerate(edges):
        ra, rb = find(int(a)), find(int(b))
        node = n + i
        parent[ra] = parent[rb] = node
        size[node] = size[ra] + size[rb]
        linkage[i] = (ra, rb, w, size[node])
    return linkage


def _condense(linkage: np.ndarray, n: int, min_cluster_size: int):
    """Condensed tree records (parent, child, lambda, size, is_cluster)"""
    sizes = np.ones(2 * n - 1, dtype=np.int64)
    children = {}
    for i, (left, right, dist, size) in enumerate(linkage):
        children[n + i] = (int(left), int(right), float(dist))
        sizes[n + i] = int(size)

    def leaves(node: int) -> List[int]:
        out, stack = [], [node]
        while stack:
            x = stack.pop()
            if x < n:
                out.append(x)
            else:
                stack.extend(children[x][:2])
        return out

    records = []
    next_label = 1
    stack = [(2 * n - 2, 0)]
    while stack:
        node, label = stack.pop()
        left, right, dist = children[node]
        lam = 1.0 / max(dist, EPS)
        big = [c for c in (left, right) if sizes[c] >= min_cluster_size]
        if len(big) == 2:
            for child in (left, right):
                records.append((label, next_label, lam, int(sizes[child]), True))
                stack.append((child, next_label))
                next_label += 1
        else:
            for child in (left, right):
                if child in big:
                    stack.append((child, label))
                else:
                    records.extend((label, leaf, lam, 1, False) for leaf in leaves(child))
    return records, next_label


def hdbscan(X: np.ndarray, min_cluster_size: int = 15, min_samples: Optional[int] = None) -> HdbscanResult:
    """
    HDBSCAN over the mutual reachability graph.

    Dense Prim MST, single-linkage merge tree, condensed tree with
    min_cluster_size and excess-of-mass selection (the root is never
    selected). Points outside every selected cluster are noise.
    """
    if min_cluster_size < 2:
        raise RejectedInput(f"min_cluster_size must be >= 2, got {min_cluster_size}")
    X = _as_matrix(X)
    n = X.shape[0]
    min_samples = min_samples or min_cluster_size
    params = {"min_cluster_size": min_cluster_size, "min_samples": min_samples}

    if n < min_cluster_size:
        message = f"{n} points < min_cluster_size {min_cluster_size}; all noise"
        logger.warning(f"⚠️ HDBSCAN: {message}")
        labeling = ClusterLabeling(np.full(n, -1, dtype=np.int64), "hdbscan", params)
        return HdbscanResult(labeling, {}, np.empty((0, 3)), [message])

    M = mutual_reachability(X, min_samples)
    mst = prim_mst(M)
    if not M.max() > 0:
        labeling = ClusterLabeling(np.zeros(n, dtype=np.int64), "hdbscan", params)
        return HdbscanResult(labeling, {0: 0.0}, mst)

    records, n_clusters = _condense(_single_linkage(mst, n), n, min_cluster_size)

    birth = np.zeros(n_clusters)
    for parent, child, lam, size, is_cluster in records:
        if is_cluster:
            birth[child] = lam
    stability = np.zeros(n_clusters)
    kids: Dict[int, List[int]] = defaultdict(list)
    own_points: Dict[int, List[int]] = defaultdict(list)
    for parent, child, lam, size, is_cluster in records:
        stability[parent] += (lam - birth[parent]) * size
        if is_cluster:
            kids[parent].append(child)
        else:
            own_points[parent].append(child)

    # excess of mass, children before parents
    effective = stability.copy()
    selected = np.zeros(n_clusters, dtype=bool)
    for c in range(n_clusters - 1, 0, -1):
        subtree = sum(effective[k] for k in kids[c])
        if kids[c] and subtree > stability[c]:
            effective[c] = subtree
        else:
            selected[c] = True
            stack = list(kids[c])
            while stack:
                d = stack.pop()
                selected[d] = False
                stack.extend(kids[d])

    points_of: Dict[int, List[int]] = {}
    for c in range(n_clusters - 1, -1, -1):
        points_of[c] = own_points[c] + [p for k in kids[c] for p in points_of[k]]

    labels = np.full(n, -1, dtype=np.int64)
    out_stability = {}
    for new_id, c in enumerate(np.flatnonzero(selected)):
        labels[points_of[int(c)]] = new_id
        out_stability[new_id] = float(stability[c])

    labeling = ClusterLabeling(labels, "hdbscan", params)
    logger.debug(f"HDBSCAN: {labeling.k_effective} clusters, noise {labeling.noise_fraction:.2%}")
    return HdbscanResult(labeling, out_stability, mst)


# ============================================
# VALIDATION METRICS
# ============================================

def _clean(X: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = _as_matrix(X)
    labels = np.asarray(labels)
    keep = labels != -1
    X, labels = X[keep], labels[keep]
    ids, codes = np.unique(labels, return_inverse=True)
    if ids.size < 2:
        raise UndefinedMetric(f"needs at least 2 non-noise clusters, got {ids.size}")
    return X, codes, ids


def silhouette(X: np.ndarray, labels: np.ndarray) -> float:
    """Mean (b - a) / max(a, b) over non-noise points; singleton clusters score 0"""
    X, codes, ids = _clean(X, labels)
    k = ids.size
    D = cdist(X, X)
    counts = np.bincount(codes, minlength=k).astype(np.float64)
    sums = np.zeros((X.shape[0], k))
    for j in range(k):
        sums[:, j] = D[:, codes == j].sum(axis=1)
    own = counts[codes]
    rows = np.arange(X.shape[0])
    a = np.where(own > 1, sums[rows, codes] / np.maximum(own - 1, 1), 0.0)
    means = sums / counts
    means[rows, codes] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def calinski_harabasz(X: np.ndarray, labels: np.ndarray) -> float:
    """[SSB / (k-1)] / [SSW / (n-k)], SSW floored at 1e-12"""
    X, codes, ids = _clean(X, labels)
    n, k = X.shape[0], ids.size
    if n <= k:
        raise UndefinedMetric(f"Calinski-Harabasz needs more points ({n}) than clusters ({k})")
    grand = X.mean(axis=0)
    ssb = ssw = 0.0
    for j in range(k):
        members = X[codes == j]
        centroid = members.mean(axis=0)
        ssb += members.shape[0] * float(np.sum((centroid - grand) ** 2))
        ssw += float(np.sum((members - centroid) ** 2))
    return (ssb / (k - 1)) / (max(ssw, EPS) / (n - k))


def davies_bouldin_detail(X: np.ndarray, labels: np.ndarray) -> Tuple[float, bool]:
    """(DB index, capped) with centroid distances floored at 1e-12"""
    X, codes, ids = _clean(X, labels)
    k = ids.size
    centroids = np.array([X[codes == j].mean(axis=0) for j in range(k)])
    spread = np.array([np.linalg.norm(X[codes == j] - centroids[j], axis=1).mean() for j in range(k)])
    sep = cdist(centroids, centroids)
    capped = bool((sep[~np.eye(k, dtype=bool)] < EPS).any())
    ratio = (spread[:, None] + spread[None, :]) / np.maximum(sep, EPS)
    np.fill_diagonal(ratio, -np.inf)
    return float(ratio.max(axis=1).mean()), capped


def davies_bouldin(X: np.ndarray, labels: np.ndarray) -> float:
    return davies_bouldin_detail(X, labels)[0]


def validate_clustering(X: np.ndarray, labels: np.ndarray) -> ClusterValidation:
    """All three metrics; an undefined metric becomes None"""
    values: Dict[str, Optional[float]] = {}
    capped = False
    for name, fn in (("silhouette", silhouette), ("calinski_harabasz", calinski_harabasz)):
        try:
            values[name] = fn(X, labels)
        except UndefinedMetric:
            values[name] = None
    try:
        values["davies_bouldin"], capped = davies_bouldin_detail(X, labels)
    except UndefinedMetric:
        values["davies_bouldin"] = None
    return ClusterValidation(db_capped=capped, **values)


def average_validation(items: Sequence[ClusterValidation]) -> ClusterValidation:
    """Mean of each metric over the items where it is defined"""
    def mean_of(attr: str) -> Optional[float]:
        vals = [getattr(v, attr) for v in items if getattr(v, attr) is not None]
        return float(np.mean(vals)) if vals else None

    return ClusterValidation(
        silhouette=mean_of("silhouette"),
        calinski_harabasz=mean_of("calinski_harabasz"),
        davies_bouldin=mean_of("davies_bouldin"),
        db_capped=any(v.db_capped for v in items),
    )


def metrics_table(results: Mapping[str, ClusterValidation]) -> pd.DataFrame:
    """`algorithm,silhouette,ch,db` plus min-max normalized companions (DB inverted)"""
    table = pd.DataFrame(
        [
            {
                "algorithm": name,
                "silhouette": v.silhouette,
                "ch": v.calinski_harabasz,
                "db": v.davies_bouldin,
            }
            for name, v in results.items()
        ],
        columns=["algorithm", "silhouette", "ch", "db"],
    )
    for column, invert in (("silhouette", False), ("ch", False), ("db", True)):
        values = table[column].astype(float)
        lo, hi = values.min(), values.max()
        if not np.isfinite(hi - lo) or hi == lo:
            norm = values.where(values.isna(), 1.0)
        else:
            norm = (values - lo) / (hi - lo)
            if invert:
                norm = 1.0 - norm
        table[f"{column}_norm"] = norm
    return table


# ============================================
# PER-SEGMENT DRIVER
# ============================================

def run_algorithm(name: str, X: np.ndarray, params: ClusteringParams, seed: int) -> ClusterLabeling:
    if name == "kmeans":
        return kmeans_fit(X, params.k, seed, params.max_iter).labeling
    if name == "gmm":
        return gmm_fit(X, params.k, seed, params.max_iter, params.reg).labeling
    if name == "optics":
        return optics(X, params.min_pts, params.eps_max, params.reach_threshold).labeling
    if name == "hdbscan":
        return hdbscan(X, params.min_cluster_size, params.min_samples).labeling
    raise RejectedInput(f"unknown clustering algorithm '{name}'", choices=list(ALGORITHMS))


def _zscore(values: np.ndarray) -> np.ndarray:
    std = values.std(axis=0)
    return (values - values.mean(axis=0)) / np.where(std > 0, std, 1.0)


def _segment_task(
    X: np.ndarray, algorithms: Sequence[str], params: ClusteringParams, seed: np.random.SeedSequence
) -> Dict[str, Tuple[np.ndarray, ClusterValidation]]:
    """Cluster one segment with every algorithm; labels cover all of X"""
    X = _as_matrix(_zscore(X))
    rng = np.random.default_rng(seed)
    fit_rows = np.arange(X.shape[0])
    if X.shape[0] > params.max_segment_rows:
        fit_rows = np.sort(rng.choice(X.shape[0], size=params.max_segment_rows, replace=False))
    fitted = X[fit_rows]
    algo_seed = int(rng.integers(2**31))

    out = {}
    for name in algorithms:
        labeling = run_algorithm(name, fitted, params, algo_seed)
        validation = validate_clustering(fitted, labeling.labels)
        if fit_rows.size < X.shape[0]:
            nearest = np.concatenate(
                [cdist(chunk, fitted).argmin(axis=1) for chunk in np.array_split(X, max(1, X.shape[0] // 2000))]
            )
            labels = labeling.labels[nearest]
        else:
            labels = labeling.labels
        out[name] = (labels, validation)
    return out


@dataclass
class SegmentClustering:
    """Per-(channel, segment) labels for every algorithm run"""

    labels: Dict[Tuple[str, int], Dict[str, np.ndarray]]
    validation: Dict[Tuple[str, int], Dict[str, ClusterValidation]]
    skipped: List[Tuple[str, int]]
    maps: Mapping[str, SegmentMap]

    def averaged(self, algorithm: str) -> ClusterValidation:
        return average_validation([v[algorithm] for v in self.validation.values() if algorithm in v])

    def per_segment_table(self) -> pd.DataFrame:
        rows = []
        for (channel, segment), per_algo in self.validation.items():
            for name, v in per_algo.items():
                rows.append(
                    {
                        "channel": channel,
                        "segment": segment,
                        "algorithm": name,
                        "silhouette": v.silhouette,
                        "ch": v.calinski_harabasz,
                        "db": v.davies_bouldin,
                    }
                )
        return pd.DataFrame(rows, columns=["channel", "segment", "algorithm", "silhouette", "ch", "db"])

    def channel_labels(self, channel: str, algorithm: str) -> Tuple[np.ndarray, np.ndarray]:
        """Row-aligned labels with ids made unique across segments; rows of skipped segments are -1"""
        smap = self.maps[channel]
        out = np.full(smap.segment_ids.size, -1, dtype=np.int64)
        offset = 0
        for segment in range(smap.n_segments):
            labels = self.labels.get((channel, segment), {}).get(algorithm)
            if labels is None:
                continue
            rows = smap.rows_of(segment)
            out[rows] = np.where(labels >= 0, labels + offset, -1)
            offset += int(labels.max()) + 1 if (labels >= 0).any() else 0
        covered = np.isin(smap.segment_ids, [s for (c, s) in self.labels if c == channel])
        return out, covered


def cluster_segments(
    dataset: LabeledDataset,
    maps: Mapping[str, SegmentMap],
    algorithms: Sequence[str],
    params: ClusteringParams,
    seed: int,
    jobs: int = 1,
) -> SegmentClustering:
    """Cluster every (channel, segment) with each algorithm, z-scoring per segment"""
    tasks = []
    skipped = []
    channel_index = {name: i for i, name in enumerate(dataset.columns)}
    for channel, smap in maps.items():
        values = dataset.matrix([channel])[:, 0]
        for segment in range(smap.n_segments):
            rows = smap.rows_of(segment)
            if rows.size < params.min_segment_rows:
                logger.warning(f"⚠️ Skipping {channel} segment {segment}: {rows.size} rows < {params.min_segment_rows}")
                skipped.append((channel, segment))
                continue
            child = np.random.SeedSequence(seed, spawn_key=(channel_index[channel], segment))
            tasks.append(((channel, segment), values[rows], child))

    def guarded(key, X, child):
        try:
            return key, _segment_task(X, algorithms, params, child)
        except (RejectedInput, ConvergenceFailure) as e:
            return key, e

    results = Parallel(n_jobs=jobs)(delayed(guarded)(key, X, child) for key, X, child in tasks)

    labels: Dict[Tuple[str, int], Dict[str, np.ndarray]] = {}
    validation: Dict[Tuple[str, int], Dict[str, ClusterValidation]] = {}
    for key, outcome in results:
        if isinstance(outcome, PipelineError):
            logger.warning(f"⚠️ Skipping {key[0]} segment {key[1]}: {outcome.message}")
            skipped.append(key)
            continue
        labels[key] = {name: lab for name, (lab, _) in outcome.items()}
        validation[key] = {name: val for name, (_, val) in outcome.items()}

    if not labels:
        raise RejectedInput("every segment was skipped; nothing to cluster")
    return SegmentClustering(labels=labels, validation=validation, skipped=sorted(skipped), maps=maps)


@dataclass
class ClusteringOutcome:
    dataset: LabeledDataset
    clustering: SegmentClustering
    metrics: pd.DataFrame
    delta_f: Dict[str, DeltaF]
    delta_f_segments: Dict[str, Dict[int, DeltaF]]


def cluster_per_segment(
    dataset: LabeledDataset,
    maps: Mapping[str, SegmentMap],
    params: Optional[ClusteringParams] = None,
    seed: int = 0,
    jobs: int = 1,
) -> ClusteringOutcome:
    """
    Cluster every channel segment, append `<channel>_subcluster` columns from
    the configured algorithm and average validation metrics across segments
    for every algorithm in `params.algorithms`. With `params.delta_f` the
    OPTICS-vs-HDBSCAN ΔF columns are appended too.
    """
    params = params or ClusteringParams()
    algorithms = list(dict.fromkeys([params.algorithm, *params.algorithms]))
    if params.delta_f:
        algorithms = list(dict.fromkeys([*algorithms, "optics", "hdbscan"]))
    clustering = cluster_segments(dataset, maps, algorithms, params, seed, jobs)

    columns = {f"{channel}_subcluster": clustering.channel_labels(channel, params.algorithm)[0] for channel in maps}
    enriched = dataset.with_columns(columns, FeatureOrigin.CLUSTER, flags={"skipped_segments": len(clustering.skipped)})

    metrics = metrics_table({name: clustering.averaged(name) for name in params.algorithms})

    per_channel: Dict[str, DeltaF] = {}
    per_segment: Dict[str, Dict[int, DeltaF]] = {}
    if params.delta_f:
        per_channel, per_segment = compute_delta_f(enriched, clustering)
        enriched = encode_segment_features(enriched, maps, per_channel)

    logger.info(
        f"🧩 Clustered {len(clustering.labels)} segments ({len(clustering.skipped)} skipped) with {', '.join(algorithms)}"
    )
    return ClusteringOutcome(enriched, clustering, metrics, per_channel, per_segment)


def compute_delta_f(
    dataset: LabeledDataset, clustering: SegmentClustering
) -> Tuple[Dict[str, DeltaF], Dict[str, Dict[int, DeltaF]]]:
    """ΔF = F(OPTICS) - F(HDBSCAN) per channel and per segment"""
    per_channel: Dict[str, DeltaF] = {}
    per_segment: Dict[str, Dict[int, DeltaF]] = {}
    for channel, smap in clustering.maps.items():
        values = dataset.matrix([channel])[:, 0]
        per_segment[channel] = {}
        for (c, segment), labels in clustering.labels.items():
            if c != channel:
                continue
            rows = smap.rows_of(segment)
            per_segment[channel][segment] = delta_f(values[rows], labels["optics"], labels["hdbscan"])
        a, covered = clustering.channel_labels(channel, "optics")
        b, _ = clustering.channel_labels(channel, "hdbscan")
        per_channel[channel] = delta_f(values[covered], a[covered], b[covered])
    return per_channel, per_segment


__all__ = [
    "ALGORITHMS",
    "ClusteringParams",
    "ClusterLabeling",
    "KMeansResult",
    "GMMResult",
    "OpticsResult",
    "HdbscanResult",
    "ClusterValidation",
    "kmeans_fit",
    "gmm_fit",
    "core_distances",
    "optics",
    "mutual_reachability",
    "prim_mst",
    "hdbscan",
    "silhouette",
    "calinski_harabasz",
    "davies_bouldin",
    "davies_bouldin_detail",
    "validate_clustering",
    "average_validation",
    "metrics_table",
    "run_algorithm",
    "SegmentClustering",
    "cluster_segments",
    "ClusteringOutcome",
    "cluster_per_segment",
    "compute_delta_f",
]
