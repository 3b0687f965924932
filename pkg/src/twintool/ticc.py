"""Toeplitz inverse covariance-based clustering of multivariate series.

Segments a regularly sampled (T, n) series into a fixed number of clusters,
each modeled by a sparse block-Toeplitz Gaussian graphical model over a
sliding window of w consecutive samples. Labels are assigned by a dynamic
program that charges a fixed penalty per label switch, so segments are
temporally coherent; cluster models are refit by an ADMM solver for the
Toeplitz-constrained graphical lasso.

The public surface follows the scikit-learn estimator protocol
(``TiccSegmenter().fit(X).labels_``, ``predict``), so the segmenter composes
with pipelines and model-selection utilities.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.cluster import KMeans
from sklearn.utils import check_array

MODEL_FORMAT = "twintool-ticc-model"
MODEL_VERSION = 1


def stack_windows(X: np.ndarray, w: int) -> np.ndarray:
    """Stack w consecutive n-variate samples into rows of length n*w.

    Returns a (T - w + 1, n * w) matrix; row i is the concatenation of
    samples i .. i+w-1. Raises if the series is shorter than the window.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    T, n = X.shape
    if w < 1:
        raise ValueError("window must be >= 1")
    if T < w:
        raise ValueError(f"series length {T} shorter than window {w}")
    return np.hstack([X[i:T - w + 1 + i] for i in range(w)])


def dp_segment(costs: np.ndarray, switch_penalty: float) -> np.ndarray:
    """Globally optimal labeling under per-point costs plus a per-switch penalty.

    Dynamic program over the (T, C) cost matrix; ties prefer keeping the
    previous label, then the lower cluster index.
    """
    costs = np.asarray(costs, dtype=float)
    T, C = costs.shape
    if switch_penalty < 0:
        raise ValueError("switch penalty must be >= 0")
    dp = costs[0].copy()
    parents = np.empty((T, C), dtype=np.intp)
    idx = np.arange(C)
    for t in range(1, T):
        jump_src = int(np.argmin(dp))
        jump = dp[jump_src] + switch_penalty
        stay_wins = dp <= jump
        parents[t] = np.where(stay_wins, idx, jump_src)
        dp = costs[t] + np.where(stay_wins, dp, jump)
    labels = np.empty(T, dtype=np.intp)
    labels[-1] = int(np.argmin(dp))
    for t in range(T - 1, 0, -1):
        labels[t - 1] = parents[t, labels[t]]
    return labels


def labeling_cost(costs: np.ndarray, labels: np.ndarray, switch_penalty: float) -> float:
    """Total cost of a labeling: per-point costs plus penalty per switch."""
    labels = np.asarray(labels)
    point = costs[np.arange(len(labels)), labels].sum()
    switches = int(np.count_nonzero(labels[1:] != labels[:-1]))
    return float(point + switch_penalty * switches)


def toeplitz_group_ids(n: int, w: int) -> np.ndarray:
    """Tie-group index per entry of a (w*n, w*n) block-Toeplitz symmetric matrix.

    Entries sharing a group id are constrained equal: blocks repeat along each
    block diagonal and the matrix is symmetric.
    """
    ids: dict[tuple, int] = {}
    gid = np.empty((w * n, w * n), dtype=np.intp)
    for a in range(w):
        for b in range(w):
            off = b - a
            for j in range(n):
                for k in range(n):
                    key = (off, j, k) if off > 0 or (off == 0 and j <= k) else (-off, k, j)
                    gid[a * n + j, b * n + k] = ids.setdefault(key, len(ids))
    return gid


def project_toeplitz(M: np.ndarray, group_ids: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto the tied-entry (block-Toeplitz) subspace."""
    counts = np.bincount(group_ids.ravel())
    means = np.bincount(group_ids.ravel(), weights=M.ravel()) / counts
    return means[group_ids]


def toeplitz_graphical_lasso(S: np.ndarray, lam: float, group_ids: np.ndarray,
                             rho: float = 1.0, tol: float = 1e-5,
                             max_iter: int = 1000, warm_start=None):
    """Sparse inverse covariance with exact block-Toeplitz structure via ADMM.

    Minimizes -logdet(Theta) + tr(S Theta) + lam * ||Theta||_1 subject to the
    tie groups, alternating a log-det proximal step, a grouped soft-threshold,
    and the dual update. Stops when both Frobenius residuals drop below tol.

    Returns (theta, (z, u)): theta is symmetric positive definite and exactly
    block-Toeplitz; (z, u) can warm-start the next call.
    """
    d = S.shape[0]
    flat_ids = group_ids.ravel()
    counts = np.bincount(flat_ids)
    if warm_start is not None:
        z, u = warm_start[0].copy(), warm_start[1].copy()
    else:
        z, u = np.eye(d), np.zeros((d, d))

    x = z
    for _ in range(max_iter):
        ew, ev = np.linalg.eigh(rho * (z - u) - S)
        xi = (ew + np.sqrt(ew ** 2 + 4.0 * rho)) / (2.0 * rho)
        x = (ev * xi) @ ev.T

        z_old = z
        v = x + u
        means = np.bincount(flat_ids, weights=v.ravel()) / counts
        shrunk = np.sign(means) * np.maximum(np.abs(means) - lam / rho, 0.0)
        z = shrunk[group_ids]

        u = u + x - z
        r = np.linalg.norm(x - z)
        s = np.linalg.norm(rho * (z - z_old))
        if r < tol and s < tol:
            break

    # x is PD but only approximately tied; project exactly, then renormalize
    # the spectrum if the projection nudged an eigenvalue below zero.
    theta = project_toeplitz(x, group_ids)
    theta = 0.5 * (theta + theta.T)
    min_eig = float(np.linalg.eigvalsh(theta)[0])
    if min_eig < 1e-10:
        theta = theta + (1e-8 - min_eig) * np.eye(d)
    return theta, (z, u)


@dataclass
class TiccModel:
    """Fitted per-cluster block-Toeplitz Gaussian models plus the input scaler."""

    n_clusters: int
    window: int
    variate_names: list[str]
    kept_variates: np.ndarray  # boolean mask over input variates
    scale_mean: np.ndarray
    scale_std: np.ndarray
    means: np.ndarray        # (C, n_kept * w)
    precisions: np.ndarray   # (C, n_kept * w, n_kept * w)
    switch_penalty: float
    cost_cache: np.ndarray | None = None  # assignment costs from fit, (T', C)
    logdets: np.ndarray = field(init=False)

    def __post_init__(self):
        self.logdets = np.array([self._logdet(p) for p in self.precisions])

    @staticmethod
    def _logdet(theta):
        sign, val = np.linalg.slogdet(theta)
        if sign <= 0:
            raise ValueError("cluster precision matrix is not positive definite")
        return val

    @property
    def stacked_dim(self) -> int:
        return int(np.count_nonzero(self.kept_variates)) * self.window

    def standardize(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != len(self.kept_variates):
            raise ValueError(
                f"expected {len(self.kept_variates)} variates, got {X.shape[1]}")
        kept = X[:, self.kept_variates]
        return (kept - self.scale_mean) / self.scale_std

    def assignment_costs(self, stacked: np.ndarray) -> np.ndarray:
        """Per-observation, per-cluster Gaussian fit cost (lower is better)."""
        if stacked.shape[1] != self.stacked_dim:
            raise ValueError(
                f"stacked dimension {stacked.shape[1]} != model {self.stacked_dim}")
        costs = np.empty((stacked.shape[0], self.n_clusters))
        for c in range(self.n_clusters):
            diff = stacked - self.means[c]
            quad = np.einsum("ij,jk,ik->i", diff, self.precisions[c], diff)
            costs[:, c] = quad - self.logdets[c]
        return costs


def assign(X: np.ndarray, model: TiccModel, switch_penalty: float | None = None) -> np.ndarray:
    """Label a series with a fitted model; per-second labels, length T.

    The dynamic program is globally optimal for the given switch penalty. The
    first window - 1 samples, which have no complete trailing window, inherit
    the label of the first full window.
    """
    beta = model.switch_penalty if switch_penalty is None else switch_penalty
    stacked = stack_windows(model.standardize(X), model.window)
    window_labels = dp_segment(model.assignment_costs(stacked), beta)
    return pad_labels(window_labels, model.window)


def pad_labels(window_labels: np.ndarray, window: int) -> np.ndarray:
    """Expand per-window labels (trailing-edge aligned) to per-second labels."""
    head = np.full(window - 1, window_labels[0], dtype=window_labels.dtype)
    return np.concatenate([head, window_labels])


class TiccSegmenter(ClusterMixin, BaseEstimator):
    """Temporal segmentation by sparse block-Toeplitz Gaussian mixture models.

    Parameters
    ----------
    n_clusters : int
        Number of segment classes C.
    window : int
        Samples stacked per observation (temporal context width).
    sparsity : float
        L1 weight on the per-cluster inverse covariance entries.
    switch_penalty : float
        Cost per label change in the assignment dynamic program.
    max_iter : int
        Outer EM-style iterations.
    tol : float
        Relative objective change that counts as converged.
    admm_tol, admm_max_iter :
        Inner solver stopping rule (residual threshold / iteration cap).
    random_state : int
        Seed for the k-means++ initialization; fits are deterministic.

    Attributes
    ----------
    model_ : TiccModel
    labels_ : per-sample labels, length T (leading edge padded)
    window_labels_ : labels per stacked window, length T - window + 1
    objective_history_ : objective after each outer iteration, non-increasing
    converged_ : True unless stopped by max_iter
    """

    def __init__(self, n_clusters=3, window=5, sparsity=0.11, switch_penalty=200.0,
                 max_iter=50, tol=1e-4, admm_tol=1e-5, admm_max_iter=1000,
                 random_state=0):
        self.n_clusters = n_clusters
        self.window = window
        self.sparsity = sparsity
        self.switch_penalty = switch_penalty
        self.max_iter = max_iter
        self.tol = tol
        self.admm_tol = admm_tol
        self.admm_max_iter = admm_max_iter
        self.random_state = random_state

    def fit(self, X, y=None, variate_names=None):
        X = check_array(X, ensure_min_samples=2)
        C, w = self.n_clusters, self.window
        if C < 1:
            raise ValueError("n_clusters must be >= 1")
        if X.shape[0] < C * w:
            raise ValueError(
                f"need at least n_clusters * window = {C * w} samples, got {X.shape[0]}")

        std = X.std(axis=0)
        kept = std > 1e-12
        if not kept.all():
            dropped = [i for i, k in enumerate(kept) if not k]
            warnings.warn(f"dropping zero-variance variates {dropped}")
        if kept.any():
            mean = X[:, kept].mean(axis=0)
            scale = X[:, kept].std(axis=0)
        elif C == 1:
            # A fully constant series still has a well-defined one-cluster
            # segmentation; skip standardization instead of failing.
            kept = np.ones(X.shape[1], dtype=bool)
            mean = X.mean(axis=0)
            scale = np.ones(X.shape[1])
        else:
            raise ValueError("all variates have zero variance")

        D = stack_windows((X[:, kept] - mean) / scale, w)
        if np.unique(D, axis=0).shape[0] < C:
            raise ValueError("fewer distinct stacked observations than clusters")

        names = list(variate_names) if variate_names is not None else \
            [f"x{i}" for i in range(X.shape[1])]
        labels = KMeans(n_clusters=C, init="k-means++", n_init=10,
                        random_state=self.random_state).fit_predict(D)

        group_ids = toeplitz_group_ids(int(kept.sum()), w)
        d = D.shape[1]
        means = np.zeros((C, d))
        thetas = np.tile(np.eye(d), (C, 1, 1))
        warm = [None] * C

        best = None  # (objective, labels, model)
        history = []
        self.converged_ = False
        for _ in range(self.max_iter):
            labels = self._reseed_empty(labels, D, means, thetas)

            # M-step: refit each cluster on its assigned windows. The L1
            # weight is divided by the cluster size so the solved subproblem
            # matches this cluster's share of the global objective.
            for c in range(C):
                members = D[labels == c]
                if len(members) == 0:
                    continue
                means[c] = members.mean(axis=0)
                diff = members - means[c]
                S = diff.T @ diff / len(members)
                thetas[c], warm[c] = toeplitz_graphical_lasso(
                    S, self.sparsity / len(members), group_ids,
                    tol=self.admm_tol, max_iter=self.admm_max_iter,
                    warm_start=warm[c])

            model = TiccModel(
                n_clusters=C, window=w, variate_names=names, kept_variates=kept,
                scale_mean=mean, scale_std=scale, means=means.copy(),
                precisions=thetas.copy(), switch_penalty=self.switch_penalty)
            costs = model.assignment_costs(D)
            new_labels = dp_segment(costs, self.switch_penalty)
            objective = (labeling_cost(costs, new_labels, self.switch_penalty)
                         + self.sparsity * np.abs(thetas).sum())

            if best is not None and objective > best[0] + abs(best[0]) * 1e-12 + 1e-12:
                # An approximate inner solve (or a reseed) would raise the
                # objective; keep the previous model and stop.
                break
            model.cost_cache = costs
            history.append(objective)
            if best is not None and abs(best[0] - objective) <= self.tol * max(1.0, abs(best[0])):
                best = (objective, new_labels, model)
                self.converged_ = True
                break
            converged_labels = best is not None and np.array_equal(best[1], new_labels)
            best = (objective, new_labels, model)
            if converged_labels:
                self.converged_ = True
                break
            labels = new_labels

        self.objective_history_ = np.array(history)
        self.model_ = best[2]
        self.window_labels_ = best[1]
        self.labels_ = pad_labels(best[1], w)
        self.n_iter_ = len(history)
        return self

    def _reseed_empty(self, labels, D, means, thetas):
        """Move the worst-fit window (and its neighborhood) into empty clusters."""
        counts = np.bincount(labels, minlength=self.n_clusters)
        if counts.min() > 0:
            return labels
        labels = labels.copy()
        for c in np.flatnonzero(counts == 0):
            # worst fit under the currently assigned models
            per_point = np.zeros(len(D))
            for k in range(self.n_clusters):
                sel = labels == k
                if not sel.any():
                    continue
                dk = D[sel] - means[k]
                per_point[sel] = np.einsum("ij,jk,ik->i", dk, thetas[k], dk)
            worst = int(np.argmax(per_point))
            lo = max(0, worst - self.window)
            hi = min(len(D), worst + self.window + 1)
            labels[lo:hi] = c
        return labels

    def predict(self, X):
        """Per-second labels for a new series using the fitted models."""
        self._check_fitted()
        return assign(X, self.model_)

    def assign(self, X, switch_penalty=None):
        """Like predict, with an optional switch-penalty override."""
        self._check_fitted()
        return assign(X, self.model_, switch_penalty)

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_

    def save(self, path):
        self._check_fitted()
        save_model(path, self.model_)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ValueError("segmenter is not fitted; call fit first")


def save_model(path, model: TiccModel) -> None:
    """Serialize a fitted model to a self-describing versioned JSON file."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n_clusters": model.n_clusters,
        "window": model.window,
        "variate_names": model.variate_names,
        "kept_variates": model.kept_variates.astype(int).tolist(),
        "scale_mean": model.scale_mean.tolist(),
        "scale_std": model.scale_std.tolist(),
        "switch_penalty": model.switch_penalty,
        "clusters": [
            {"mean": model.means[c].tolist(), "precision": model.precisions[c].tolist()}
            for c in range(model.n_clusters)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path) -> TiccModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {doc.get('version')}")
    return TiccModel(
        n_clusters=doc["n_clusters"],
        window=doc["window"],
        variate_names=doc["variate_names"],
        kept_variates=np.array(doc["kept_variates"], dtype=bool),
        scale_mean=np.array(doc["scale_mean"]),
        scale_std=np.array(doc["scale_std"]),
        means=np.array([c["mean"] for c in doc["clusters"]]),
        precisions=np.array([c["precision"] for c in doc["clusters"]]),
        switch_penalty=doc["switch_penalty"],
    )


def write_labels(path, labels: np.ndarray, t0: int = 0, config_hash: str | None = None) -> None:
    """Emit per-second labels as ``t,label`` delimited text."""
    with open(path, "w") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("t,label\n")
        for i, lab in enumerate(labels):
            fh.write(f"{t0 + i},{int(lab)}\n")


def read_labels(path) -> tuple[np.ndarray, int]:
    ts, labs = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("t,"):
                continue
            t, lab = line.split(",")
            ts.append(int(t))
            labs.append(int(lab))
    t0 = ts[0] if ts else 0
    return np.array(labs, dtype=np.intp), t0
