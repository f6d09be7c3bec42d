"""The three spatial-attention decoders, their training loop, and evaluation.

``relloc`` is a four-block CNN that classifies a sound's distance from the
attended location (5 classes, softmax).  ``attloc`` is a three-block CNN
that predicts the attended side (2 sigmoid units) and merges a trainable
embedding of the absolute speaker index into the convolutional features by
elementwise multiplication.  ``mtm`` shares a three-block trunk between
both tasks and trains under a weighted joint loss.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analysis
from .data import EpochedDataset, relative_label  # noqa: F401  (re-export)
from .engine import LayerSpec, Network, NetworkSpec, NodeSpec, param_count
from .errors import ConfigError, TrainingError, UnknownModelError
from .fileio import atomic_write_text, write_csv
from .optim import (
    AdamState,
    JointLossConfig,
    RegConfig,
    adam_step,
    binary_ce,
    categorical_ce,
    joint_loss,
    lr_schedule,
    reg_penalty,
)

EMBED_VOCAB = 6  # speaker indices 1..5; index 0 reserved


def _conv_block(nodes, prev, tag, filters, width, rate, first=False):
    if first:
        nodes.append(NodeSpec(f"{tag}_spatial", LayerSpec("spatial_conv", {"filters": filters[0]}), [prev]))
        prev = f"{tag}_spatial"
        filters = filters[1]
    else:
        filters = filters[0]
    nodes.append(NodeSpec(f"{tag}_conv", LayerSpec("temporal_conv", {"filters": filters, "width": width}), [prev]))
    nodes.append(NodeSpec(f"{tag}_bn", LayerSpec("batchnorm", {}), [f"{tag}_conv"]))
    nodes.append(NodeSpec(f"{tag}_elu", LayerSpec("elu", {}), [f"{tag}_bn"]))
    nodes.append(NodeSpec(f"{tag}_pool", LayerSpec("maxpool", {"width": 3, "stride": 3}), [f"{tag}_elu"]))
    nodes.append(NodeSpec(f"{tag}_drop", LayerSpec("dropout", {"rate": rate}), [f"{tag}_pool"]))
    return f"{tag}_drop"


def build_relloc(n_channels=64, n_times=350, filters=(10, 25, 50, 100, 200),
                 widths=(10, 10, 10, 6), dropout=0.6) -> NetworkSpec:
    """Four-block relative-location classifier ending in a 5-way softmax.

    Defaults reproduce the published architecture; the size arguments exist
    so tests can build narrow variants for finite-difference checks.
    """
    nodes = []
    prev = _conv_block(nodes, "eeg", "block1", filters[:2], widths[0], dropout, first=True)
    for i in range(2, len(filters)):
        prev = _conv_block(nodes, prev, f"block{i}", (filters[i],), widths[i - 1], dropout)
    nodes.append(NodeSpec("flatten", LayerSpec("flatten", {}), [prev]))
    nodes.append(NodeSpec("dense_out", LayerSpec("dense", {"units": 5}), ["flatten"]))
    nodes.append(NodeSpec("softmax_out", LayerSpec("softmax", {}), ["dense_out"]))
    return NetworkSpec(
        inputs={"eeg": {"shape": [n_channels, n_times, 1], "dtype": "float"}},
        nodes=nodes,
        outputs={"relative": "softmax_out"},
    )


def build_attloc(n_channels=64, n_times=350, filters=(10, 25, 50, 100),
                 width=10, dropout=0.5, embed_dim=None) -> NetworkSpec:
    """Three-block attended-side classifier with a speaker-index embedding
    multiplied into the flattened convolutional features."""
    nodes = []
    prev = _conv_block(nodes, "eeg", "block1", filters[:2], width, dropout, first=True)
    for i in range(2, len(filters)):
        prev = _conv_block(nodes, prev, f"block{i}", (filters[i],), width, dropout)
    nodes.append(NodeSpec("flatten", LayerSpec("flatten", {}), [prev]))
    spec_probe = NetworkSpec(
        inputs={"eeg": {"shape": [n_channels, n_times, 1], "dtype": "float"}},
        nodes=list(nodes),
        outputs={},
    )
    from .engine import infer_shapes

    feat = infer_shapes(spec_probe)["flatten"][0] if embed_dim is None else embed_dim
    nodes.append(NodeSpec("speaker_embed", LayerSpec("embedding", {"vocab": EMBED_VOCAB, "dim": feat}), ["speaker"]))
    nodes.append(NodeSpec("embed_flatten", LayerSpec("flatten", {}), ["speaker_embed"]))
    nodes.append(NodeSpec("merge", LayerSpec("multiply", {}), ["flatten", "embed_flatten"]))
    nodes.append(NodeSpec("dense_out", LayerSpec("dense", {"units": 2}), ["merge"]))
    nodes.append(NodeSpec("sigmoid_out", LayerSpec("sigmoid", {}), ["dense_out"]))
    return NetworkSpec(
        inputs={
            "eeg": {"shape": [n_channels, n_times, 1], "dtype": "float"},
            "speaker": {"shape": [], "dtype": "int"},
        },
        nodes=nodes,
        outputs={"attended": "sigmoid_out"},
    )


def build_mtm(n_channels=64, n_times=350, filters=(15, 30, 60, 120), width=10,
              dropout=0.5, embed_dim=200) -> NetworkSpec:
    """Shared three-block trunk with a relative-location softmax head and an
    attended-side head that merges an embedded speaker index."""
    nodes = []
    prev = _conv_block(nodes, "eeg", "block1", filters[:2], width, dropout, first=True)
    for i in range(2, len(filters)):
        prev = _conv_block(nodes, prev, f"block{i}", (filters[i],), width, dropout)
    nodes.append(NodeSpec("flatten", LayerSpec("flatten", {}), [prev]))
    nodes.append(NodeSpec("rel_dense", LayerSpec("dense", {"units": 5}), ["flatten"]))
    nodes.append(NodeSpec("rel_softmax", LayerSpec("softmax", {}), ["rel_dense"]))
    nodes.append(NodeSpec("speaker_embed", LayerSpec("embedding", {"vocab": EMBED_VOCAB, "dim": embed_dim}), ["speaker"]))
    nodes.append(NodeSpec("embed_flatten", LayerSpec("flatten", {}), ["speaker_embed"]))
    nodes.append(NodeSpec("att_dense_pre", LayerSpec("dense", {"units": embed_dim}), ["flatten"]))
    nodes.append(NodeSpec("merge", LayerSpec("multiply", {}), ["att_dense_pre", "embed_flatten"]))
    nodes.append(NodeSpec("att_dense", LayerSpec("dense", {"units": 2}), ["merge"]))
    nodes.append(NodeSpec("att_sigmoid", LayerSpec("sigmoid", {}), ["att_dense"]))
    return NetworkSpec(
        inputs={
            "eeg": {"shape": [n_channels, n_times, 1], "dtype": "float"},
            "speaker": {"shape": [], "dtype": "int"},
        },
        nodes=nodes,
        outputs={"relative": "rel_softmax", "attended": "att_sigmoid"},
    )


BUILDERS = {"relloc": build_relloc, "attloc": build_attloc, "mtm": build_mtm}
DEFAULT_EPOCHS = {"relloc": 400, "attloc": 600, "mtm": 600}
MODEL_HEADS = {"relloc": ("relative",), "attloc": ("attended",), "mtm": ("relative", "attended")}

_KIND_DISPLAY = {
    "spatial_conv": "Conv2d",
    "temporal_conv": "Conv2d",
    "batchnorm": "BatchNorm",
    "elu": "ELU",
    "maxpool": "MaxPool",
    "dropout": "Dropout",
    "flatten": "Flatten",
    "dense": "Dense",
    "embedding": "Embedding",
    "multiply": "Multiply",
    "softmax": "Softmax",
    "sigmoid": "Sigmoid",
}


def table_rows(spec: NetworkSpec):
    """(display kind, per-sample shape) for every layer, with each graph
    input emitted immediately before its first consumer."""
    from .engine import infer_shapes

    shapes = infer_shapes(spec)
    rows = []
    emitted = set()
    for node in spec.nodes:
        for src in node.inputs:
            if src in spec.inputs and src not in emitted:
                shape = tuple(spec.inputs[src]["shape"]) or (1,)
                rows.append(("Input", shape))
                emitted.add(src)
        rows.append((_KIND_DISPLAY[node.layer.kind], shapes[node.name]))
    return rows


def get_spec(model_name: str) -> NetworkSpec:
    if model_name not in BUILDERS:
        raise UnknownModelError(
            f"unknown model {model_name!r}; expected one of {sorted(BUILDERS)}"
        )
    return BUILDERS[model_name]()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = None  # model default when None
    batch_size: int = 64
    lr0: float = 0.01
    decay: float = 0.001
    lam_l1: float = 0.001
    lam_l2: float = 0.001
    alpha1: float = 0.6
    alpha2: float = 0.4
    seed: int = 0

    def resolved(self, model_name):
        cfg = asdict(self)
        if cfg["epochs"] is None:
            cfg["epochs"] = DEFAULT_EPOCHS[model_name]
        cfg["model"] = model_name
        return cfg


def config_fingerprint(resolved_config: dict) -> str:
    canon = json.dumps(resolved_config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class TrainedModel:
    model_name: str
    network: Network
    history: list
    config: dict
    fingerprint: str
    provenance: str = ""

    def predict(self, dataset: EpochedDataset, idx=None, batch_size=256):
        """Inference-mode head scores for the given sample indices."""
        if idx is None:
            idx = np.arange(len(dataset))
        idx = np.asarray(idx)
        chunks = {h: [] for h in self.network.spec.outputs}
        for start in range(0, len(idx), batch_size):
            sel = idx[start : start + batch_size]
            out = self.network.forward(dataset.model_inputs(sel), train=False)
            for h, v in out.items():
                chunks[h].append(v)
        return {h: np.concatenate(v) if v else np.zeros((0,)) for h, v in chunks.items()}

    # -- persistence --------------------------------------------------------

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        atomic_write_text(os.path.join(out_dir, "spec.json"), self.network.spec.to_json())
        self.network.save_params(os.path.join(out_dir, "params.bin"))
        meta = {
            "model": self.model_name,
            "config": self.config,
            "fingerprint": self.fingerprint,
            "provenance": self.provenance,
        }
        atomic_write_text(
            os.path.join(out_dir, "meta.json"), json.dumps(meta, indent=2, sort_keys=True)
        )
        header = ["epoch", "lr", "train_loss", "val_auc_relative", "val_auc_attended"]
        rows = [
            [
                rec["epoch"],
                rec["lr"],
                rec["train_loss"],
                rec.get("val_auc_relative", ""),
                rec.get("val_auc_attended", ""),
            ]
            for rec in self.history
        ]
        write_csv(os.path.join(out_dir, "history.csv"), header, rows)

    @classmethod
    def load(cls, model_dir):
        with open(os.path.join(model_dir, "spec.json")) as fh:
            spec = NetworkSpec.from_json(fh.read())
        with open(os.path.join(model_dir, "meta.json")) as fh:
            meta = json.load(fh)
        network = Network(spec, seed=0)
        network.load_params(os.path.join(model_dir, "params.bin"))
        return cls(
            model_name=meta["model"],
            network=network,
            history=[],
            config=meta["config"],
            fingerprint=meta["fingerprint"],
            provenance=meta.get("provenance", ""),
        )


def onehot(values, n):
    values = np.asarray(values, dtype=np.int64)
    out = np.zeros((len(values), n))
    out[np.arange(len(values)), values] = 1.0
    return out


def _batch_bounds(n, batch_size):
    bounds = list(range(0, n, batch_size)) + [n]
    # a trailing single-sample batch would make batch statistics degenerate
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        bounds.pop(-2)
    return bounds


def _head_losses(model_name, outputs, targets, cfg):
    losses = {}
    grads = {}
    for head in MODEL_HEADS[model_name]:
        fn = categorical_ce if head == "relative" else binary_ce
        losses[head], grads[head] = fn(outputs[head], targets[head])
    if model_name == "mtm":
        jcfg = JointLossConfig(cfg.alpha1, cfg.alpha2)
        total = joint_loss(losses["relative"], losses["attended"], jcfg)
        grads = {
            "relative": jcfg.alpha1 * grads["relative"],
            "attended": jcfg.alpha2 * grads["attended"],
        }
    else:
        total = losses[MODEL_HEADS[model_name][0]]
    return total, grads


def train(model_name, dataset: EpochedDataset, config: TrainConfig = None,
          progress=None) -> TrainedModel:
    """Minibatch Adam training with per-epoch learning-rate decay, L1-L2
    weight penalties, and per-epoch validation macro AUC.

    Deterministic for a fixed (config.seed, dataset): initialization,
    shuffling, and dropout all derive from the one seed.
    """
    config = config or TrainConfig()
    if model_name not in BUILDERS:
        raise UnknownModelError(f"unknown model {model_name!r}")
    train_idx = dataset.indices("train")
    val_idx = dataset.indices("val")
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise ConfigError("training needs non-empty train and val splits")

    resolved = config.resolved(model_name)
    epochs = resolved["epochs"]
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    net = Network(get_spec(model_name), seed=seeds[0])
    shuffle_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])
    reg_cfg = RegConfig(config.lam_l1, config.lam_l2)
    state = AdamState(net.named_params(), lr0=config.lr0, decay=config.decay)

    history = []
    for epoch in range(epochs):
        lr = lr_schedule(config.lr0, config.decay, epoch)
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        bounds = _batch_bounds(len(order), config.batch_size)
        loss_sum = 0.0
        for bi in range(len(bounds) - 1):
            sel = order[bounds[bi] : bounds[bi + 1]]
            inputs = dataset.model_inputs(sel)
            targets = {
                "relative": onehot(dataset.relative[sel], 5),
                "attended": onehot(dataset.side[sel], 2),
            }
            outputs = net.forward(inputs, train=True, rng=dropout_rng)
            loss, out_grads = _head_losses(model_name, outputs, targets, config)
            penalty, reg_grads = reg_penalty(net.named_params(), reg_cfg)
            loss += penalty
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {bi} of {model_name}"
                )
            net.backward(out_grads)
            grads = dict(net.named_grads())
            for name, extra in reg_grads.items():
                grads[name] = grads[name] + extra
            adam_step(net.named_params(), grads.items(), state, lr=lr)
            loss_sum += loss * len(sel)
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": loss_sum / len(order),
        }
        frozen = TrainedModel(model_name, net, [], resolved, "")
        val_scores = frozen.predict(dataset, val_idx)
        for head in MODEL_HEADS[model_name]:
            labels = dataset.relative if head == "relative" else dataset.side
            macro = analysis.macro_ovr(val_scores[head], labels[val_idx]).macro
            record[f"val_auc_{head}"] = macro
        history.append(record)
        if progress is not None:
            progress(record)

    fingerprint = config_fingerprint(resolved)
    return TrainedModel(
        model_name, net, history, resolved, fingerprint, provenance=dataset.provenance
    )


@dataclass
class EvalReport:
    """Per-head one-vs-rest AUCs, macro average, and confusion matrix."""

    heads: dict = field(default_factory=dict)

    def rows(self):
        out = []
        for head, rep in sorted(self.heads.items()):
            for cls, auc in enumerate(rep["auc"]):
                out.append([head, f"class_{cls}", "" if auc is None else auc])
            out.append([head, "macro", rep["macro"]])
        return out


def evaluate(model: TrainedModel, dataset: EpochedDataset, split="test") -> EvalReport:
    """One-vs-rest ROC AUC per class, macro average, and confusion matrix
    on the given split, in inference mode."""
    idx = dataset.indices(split)
    scores = model.predict(dataset, idx)
    report = EvalReport()
    for head in MODEL_HEADS[model.model_name]:
        labels = (dataset.relative if head == "relative" else dataset.side)[idx]
        ovr = analysis.macro_ovr(scores[head], labels)
        n_cls = scores[head].shape[1]
        pred = np.argmax(scores[head], axis=1)
        confusion = np.zeros((n_cls, n_cls), dtype=np.int64)
        np.add.at(confusion, (labels, pred), 1)
        report.heads[head] = {
            "auc": ovr.per_class,
            "macro": ovr.macro,
            "confusion": confusion,
        }
    return report
