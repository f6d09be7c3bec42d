"""Model interpretation and metrics: spatial-filter extraction, scalp
topography export, per-class ERP feature maps, attention-gradient slope
analysis, per-filter classification ranking, multi-task differential-sample
analysis, and exact rank-based ROC AUC.

All operations here read frozen models and datasets; nothing is mutated, so
they are safe to run concurrently.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import MissingClassError, StructuralError
from .montage import Montage, check_weights
from .spherical import SphericalSpline

# ---------------------------------------------------------------------------
# ROC AUC
# ---------------------------------------------------------------------------


def roc_auc(scores, labels):
    """Exact one-vs-rest AUC: P(score_pos > score_neg) + 0.5 P(tie).

    Computed from midranks, which is algebraically identical to the pairwise
    definition.  Raises MissingClassError when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MissingClassError("AUC undefined: only one class present")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    starts = np.cumsum(counts) - counts
    midranks = starts[inverse] + (counts[inverse] + 1) / 2.0
    rank_sum = midranks[labels].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass
class OvrResult:
    per_class: list  # AUC per class; None where undefined
    macro: float


def macro_ovr(scores, labels):
    """Per-class one-vs-rest AUC and the unweighted mean over the classes
    that are defined on this split."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    per_class = []
    for k in range(scores.shape[1]):
        try:
            per_class.append(roc_auc(scores[:, k], labels == k))
        except MissingClassError:
            per_class.append(None)
    defined = [a for a in per_class if a is not None]
    if not defined:
        raise MissingClassError("macro AUC undefined: no class has both labels")
    return OvrResult(per_class, float(np.mean(defined)))


# ---------------------------------------------------------------------------
# spatial filters and feature maps
# ---------------------------------------------------------------------------


def _network_of(model):
    return getattr(model, "network", model)


@dataclass
class SpatialFilterSet:
    weights: np.ndarray  # (n_filters, n_channels)
    biases: np.ndarray  # (n_filters,)
    source_model: str


def extract_spatial_filters(model) -> SpatialFilterSet:
    """First-layer spatial kernels as rows of an (n_filters, channels)
    matrix, in filter order."""
    net = _network_of(model)
    for node in net.spec.nodes:
        if node.layer.kind == "spatial_conv":
            layer = net.layers[node.name]
            kernel = layer.params["kernel"]  # (channels, 1, 1, K)
            weights = kernel[:, 0, 0, :].T.copy()
            return SpatialFilterSet(
                weights=weights,
                biases=layer.params["bias"].copy(),
                source_model=getattr(model, "model_name", node.name),
            )
    raise StructuralError("model has no spatial convolution layer")


def spatial_conv_features(model, dataset, idx=None, batch_size=512):
    """Per-sample outputs of the spatial convolution only: (n, time, K)."""
    filters = extract_spatial_filters(model)
    if idx is None:
        idx = np.arange(len(dataset))
    idx = np.asarray(idx)
    kernel = np.ascontiguousarray(filters.weights.T[:, None, None, :])
    chunks = []
    for start in range(0, len(idx), batch_size):
        x = dataset.eeg[idx[start : start + batch_size]].astype(np.float64)[..., None]
        out = kernels.conv2d_forward(x, kernel, filters.biases)
        chunks.append(out[:, 0])
    return np.concatenate(chunks) if chunks else np.zeros((0, dataset.n_times, 0))


@dataclass
class ErpFeatureMap:
    values: np.ndarray  # (classes, time) in model-feature units
    times: np.ndarray  # seconds relative to onset
    task: str
    filter_index: int


def erp_feature_map(model, dataset, filter_index, task="relative",
                    idx=None) -> ErpFeatureMap:
    """Class-mean time course of one spatial filter's features."""
    if idx is None:
        idx = np.arange(len(dataset))
    idx = np.asarray(idx)
    labels = (dataset.relative if task == "relative" else dataset.side)[idx]
    n_classes = 5 if task == "relative" else 2
    feats = spatial_conv_features(model, dataset, idx)[:, :, filter_index]
    rows = []
    for k in range(n_classes):
        members = feats[labels == k]
        if len(members) == 0:
            raise MissingClassError(f"class {k} absent from the given samples")
        rows.append(members.mean(axis=0))
    return ErpFeatureMap(
        values=np.array(rows),
        times=dataset.times(),
        task=task,
        filter_index=filter_index,
    )


# ---------------------------------------------------------------------------
# slope analysis
# ---------------------------------------------------------------------------


@dataclass
class SlopeSeries:
    slopes: np.ndarray  # feature units per relative-location step
    residuals: np.ndarray  # sum of squared OLS residuals per time point
    times: np.ndarray


def slope_analysis(feature_map: ErpFeatureMap) -> SlopeSeries:
    """Per-time-point OLS slope of amplitude over the four non-target
    relative locations (classes 1-4 at positions 1..4)."""
    values = feature_map.values
    if values.shape[0] != 5:
        raise MissingClassError("slope analysis needs the 5 relative classes")
    y = values[1:5]  # (4, time)
    x = np.arange(1, 5, dtype=np.float64)
    xc = x - x.mean()
    denom = (xc * xc).sum()
    slopes = (xc[:, None] * (y - y.mean(axis=0))).sum(axis=0) / denom
    fit = y.mean(axis=0) + slopes[None, :] * xc[:, None]
    residuals = ((y - fit) ** 2).sum(axis=0)
    return SlopeSeries(slopes=slopes, residuals=residuals, times=feature_map.times)


# ---------------------------------------------------------------------------
# scalp topography
# ---------------------------------------------------------------------------


@dataclass
class TopoMap:
    grid: np.ndarray  # (n, n) interpolated values, NaN outside the head
    extent: float
    labels: list
    weights: np.ndarray
    electrodes_2d: np.ndarray


def topography_export(weights, montage: Montage, grid_n=67) -> TopoMap:
    """Project electrode weights to the 2-D scalp disc and interpolate them
    onto a regular grid with the spherical spline."""
    weights = check_weights(weights, montage)
    pts2d = montage.project_2d()
    extent = 1.05
    axis = np.linspace(-extent, extent, grid_n)
    gx, gy = np.meshgrid(axis, axis)
    r = np.hypot(gx, gy)
    inside = r <= 1.0
    polar = np.clip(r, 0, 1.0) * (np.pi / 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(r > 1e-12, gx / r, 0.0)
        uy = np.where(r > 1e-12, gy / r, 0.0)
    targets = np.column_stack(
        [
            (np.sin(polar) * ux)[inside],
            (np.sin(polar) * uy)[inside],
            np.cos(polar)[inside],
        ]
    )
    spline = SphericalSpline(montage.positions)
    values = spline.evaluate(spline.fit(weights), targets)
    grid = np.full(gx.shape, np.nan)
    grid[inside] = values
    return TopoMap(
        grid=grid,
        extent=extent,
        labels=list(montage.labels),
        weights=weights,
        electrodes_2d=pts2d,
    )


# ---------------------------------------------------------------------------
# per-filter classification ranking
# ---------------------------------------------------------------------------


def softmax_regression(x_train, y_train, n_classes, l2=1e-3, lr=0.05, iters=300):
    """Multinomial logistic regression by full-batch gradient descent with
    Adam-style moment scaling; deterministic (zero init, no shuffling)."""
    n, p = x_train.shape
    w = np.zeros((p, n_classes))
    b = np.zeros(n_classes)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y_train] = 1.0
    mw = np.zeros_like(w)
    vw = np.zeros_like(w)
    mb = np.zeros_like(b)
    vb = np.zeros_like(b)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for t in range(1, iters + 1):
        z = x_train @ w + b
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=1, keepdims=True)
        gw = x_train.T @ (probs - onehot) / n + 2 * l2 * w
        gb = (probs - onehot).mean(axis=0)
        mw = beta1 * mw + (1 - beta1) * gw
        vw = beta2 * vw + (1 - beta2) * gw * gw
        mb = beta1 * mb + (1 - beta1) * gb
        vb = beta2 * vb + (1 - beta2) * gb * gb
        w -= lr * (mw / (1 - beta1**t)) / (np.sqrt(vw / (1 - beta2**t)) + eps)
        b -= lr * (mb / (1 - beta1**t)) / (np.sqrt(vb / (1 - beta2**t)) + eps)
    return w, b


def _standardize(train, other):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd[sd == 0] = 1.0
    return (train - mu) / sd, (other - mu) / sd


def rank_filters_by_classification(model, dataset):
    """Held-out accuracy of a multinomial logistic classifier trained on
    each spatial filter's single-filter time course, sorted descending.

    Fits on the train split, scores on the test split.
    """
    tr = dataset.indices("train")
    te = dataset.indices("test")
    feats_tr = spatial_conv_features(model, dataset, tr)
    feats_te = spatial_conv_features(model, dataset, te)
    y_tr = dataset.relative[tr]
    y_te = dataset.relative[te]
    rows = []
    for f in range(feats_tr.shape[2]):
        x_tr, x_te = _standardize(feats_tr[:, :, f], feats_te[:, :, f])
        w, b = softmax_regression(x_tr, y_tr, n_classes=5)
        pred = np.argmax(x_te @ w + b, axis=1)
        accuracy = float((pred == y_te).mean())
        rows.append({"filter": f + 1, "accuracy_pct": 100.0 * accuracy})
    rows.sort(key=lambda r: (-r["accuracy_pct"], r["filter"]))
    return rows


# ---------------------------------------------------------------------------
# differential-sample analysis
# ---------------------------------------------------------------------------


@dataclass
class DiffReport:
    total: int
    by_location: dict  # speaker angle (deg) -> count
    diff_map: np.ndarray  # (time,) filter-averaged ERP of the disagreement set
    correct_map: np.ndarray  # same map for individually-correct samples
    n_correct: int
    times: np.ndarray

    def count_fields(self):
        fields = {"total": self.total}
        for angle in sorted(self.by_location):
            fields[f"location_{angle:+d}"] = self.by_location[angle]
        return fields


def differential_sample_analysis(mtm_model, attloc_model, dataset,
                                 split="test") -> DiffReport:
    """ERP map of the samples the multi-task model classifies correctly on
    the attended side while the individual model misses them.

    Samples are passed through the multi-task model's spatial filters and
    averaged over the filter count, then over samples.  Counts are broken
    down by absolute speaker location; the same map is emitted for the
    individually-correct samples as the comparison baseline.
    """
    from .data import SPEAKER_ANGLES_DEG

    idx = dataset.indices(split)
    truth = dataset.side[idx]
    mtm_pred = np.argmax(mtm_model.predict(dataset, idx)["attended"], axis=1)
    att_pred = np.argmax(attloc_model.predict(dataset, idx)["attended"], axis=1)
    mtm_ok = mtm_pred == truth
    att_ok = att_pred == truth
    disagree = idx[mtm_ok & ~att_ok]
    correct = idx[att_ok]

    def filter_averaged_map(members):
        if len(members) == 0:
            return np.zeros(dataset.n_times)
        feats = spatial_conv_features(mtm_model, dataset, members)
        return feats.mean(axis=2).mean(axis=0)

    by_location = {}
    for speaker, angle in enumerate(SPEAKER_ANGLES_DEG, start=1):
        by_location[angle] = int((dataset.speaker[disagree] == speaker).sum())
    return DiffReport(
        total=int(len(disagree)),
        by_location=by_location,
        diff_map=filter_averaged_map(disagree),
        correct_map=filter_averaged_map(correct),
        n_correct=int(len(correct)),
        times=dataset.times(),
    )
