"""
One-class SVM with an RBF kernel, solved by SMO on the ν dual
"""

from functools import lru_cache
from typing import List, Literal, Optional, Sequence, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field
from scipy.spatial.distance import cdist

from core.errors import ConvergenceFailure, RejectedInput
from detectors.artifact import ModelArtifact, ModelKind, training_metadata

SCORE_CHUNK = 4096


class OneClassParams(BaseModel):
    nu: float = Field(default=0.1, gt=0, le=1)
    gamma: Union[Literal["scale", "auto"], float] = "scale"
    tol: float = Field(default=1e-4, gt=0)
    max_iter: int = Field(default=100_000, ge=1)
    max_rows: int = Field(default=5000, ge=2)
    cache_rows: int = Field(default=256, ge=1)


def resolve_gamma(gamma: Union[str, float], X: np.ndarray) -> float:
    d = X.shape[1]
    if gamma == "auto":
        return 1.0 / d
    if gamma == "scale":
        var = float(X.var())
        return 1.0 / (d * var) if var > 0 else 1.0
    if float(gamma) <= 0:
        raise RejectedInput(f"gamma must be positive, got {gamma}")
    return float(gamma)


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(A, B, "sqeuclidean"))


def solve_one_class_dual(
    X: np.ndarray, nu: float, gamma: float, tol: float = 1e-4, max_iter: int = 100_000, cache_rows: int = 256
) -> dict:
    """
    min ½ αᵀQα  s.t.  0 <= α_i <= 1, Σα = ν·l

    Maximal-violating-pair SMO. Kernel rows are computed on demand and kept
    in an LRU cache. Returns alpha, rho, the gradient, iteration count, the
    final KKT residual and the dual objective after every sweep of l updates.
    """
    l = X.shape[0]

    @lru_cache(maxsize=cache_rows)
    def kernel_row(i: int) -> np.ndarray:
        return rbf_kernel(X, X[i : i + 1], gamma).ravel()

    n_full = int(nu * l)
    alpha = np.zeros(l)
    alpha[:n_full] = 1.0
    if n_full < l:
        alpha[n_full] = nu * l - n_full
    grad = np.zeros(l)
    for i in np.flatnonzero(alpha):
        grad += alpha[i] * kernel_row(int(i))

    objective: List[float] = [-0.5 * float(alpha @ grad)]
    residual = np.inf
    n_iter = 0
    while True:
        up = np.flatnonzero(alpha < 1.0)
        low = np.flatnonzero(alpha > 0.0)
        if not up.size or not low.size:
            # every α at one bound (ν = 1): the feasible set is a single point
            residual = 0.0
            break
        i = int(up[np.argmin(grad[up])])
        j = int(low[np.argmax(grad[low])])
        residual = float(grad[j] - grad[i])
        if residual < tol:
            break
        if n_iter >= max_iter:
            raise ConvergenceFailure(
                f"one-class SVM did not reach KKT tolerance {tol} in {max_iter} iterations",
                residual=residual,
                iterations=n_iter,
            )
        Qi, Qj = kernel_row(i), kernel_row(j)
        quad = max(Qi[i] + Qj[j] - 2.0 * Qi[j], 1e-12)
        # move mass from j to i, clipped to the box
        step = min(residual / quad, 1.0 - alpha[i], alpha[j])
        alpha[i] += step
        alpha[j] -= step
        grad += step * (Qi - Qj)
        n_iter += 1
        if n_iter % l == 0:
            objective.append(-0.5 * float(alpha @ grad))

    objective.append(-0.5 * float(alpha @ grad))
    free = (alpha > 0.0) & (alpha < 1.0)
    if free.any():
        rho = float(grad[free].mean())
    else:
        at_upper, at_lower = alpha >= 1.0, alpha <= 0.0
        # ρ lies between the largest bounded-above and smallest bounded-below gradient
        hi = grad[at_upper].max() if at_upper.any() else grad[at_lower].min()
        lo = grad[at_lower].min() if at_lower.any() else hi
        rho = float((hi + lo) / 2.0)
    return {
        "alpha": alpha,
        "rho": rho,
        "grad": grad,
        "iterations": n_iter,
        "residual": residual,
        "objective": np.array(objective),
    }


def train_ocsvm(
    X: np.ndarray,
    params: Optional[OneClassParams] = None,
    feature_names: Optional[Sequence[str]] = None,
    seed: int = 0,
) -> ModelArtifact:
    """
    Train on (presumed normal) rows. More than `max_rows` rows are replaced
    by a seeded uniform subsample.
    """
    params = params or OneClassParams()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n, d = X.shape
    if n < 1:
        raise RejectedInput("one-class SVM needs at least one training row")
    sample = X
    if n > params.max_rows:
        rows = np.sort(np.random.default_rng(seed).choice(n, size=params.max_rows, replace=False))
        sample = X[rows]
        logger.info(f"One-class SVM: subsampled {params.max_rows} of {n} rows")
    gamma = resolve_gamma(params.gamma, sample)

    solution = solve_one_class_dual(sample, params.nu, gamma, params.tol, params.max_iter, params.cache_rows)
    alpha = solution["alpha"]
    support = alpha > 0
    model = ModelArtifact(
        kind=ModelKind.OCSVM,
        params={**params.model_dump(), "gamma": gamma},
        metadata={},
        payload={
            "support_vectors": sample[support],
            "alpha": alpha[support],
            "rho": solution["rho"],
        },
    )
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(d)]
    model.metadata = training_metadata(
        names,
        seed,
        -decision_function(model, X),
        n_fit=int(sample.shape[0]),
        support_fraction=float(support.mean()),
        iterations=solution["iterations"],
        kkt_residual=solution["residual"],
        dual_objective=solution["objective"],
    )
    logger.info(
        f"🧭 One-class SVM: {support.sum()} support vectors of {sample.shape[0]} rows, "
        f"{solution['iterations']} iterations, rho={solution['rho']:.6g}"
    )
    return model


def decision_function(model: ModelArtifact, X: np.ndarray) -> np.ndarray:
    """f(x) = Σ α_i K(x_i, x) - ρ"""
    X = np.asarray(X, dtype=np.float64)
    sv, alpha = model.payload["support_vectors"], model.payload["alpha"]
    gamma = float(model.params["gamma"])
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], SCORE_CHUNK):
        block = X[start : start + SCORE_CHUNK]
        out[start : start + block.shape[0]] = alpha @ rbf_kernel(sv, block, gamma)
    return out - float(model.payload["rho"])


def score_ocsvm(model: ModelArtifact, X: np.ndarray, columns: Optional[Sequence[str]] = None) -> np.ndarray:
    """Anomaly score -f(x)"""
    return -decision_function(model, model.align(X, columns))


__all__ = [
    "OneClassParams",
    "resolve_gamma",
    "rbf_kernel",
    "solve_one_class_dual",
    "train_ocsvm",
    "decision_function",
    "score_ocsvm",
]
