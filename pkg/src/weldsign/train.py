"""Classifier training: label-smoothed cross-entropy, momentum SGD with step
decay, deterministic initialization and the epoch loop.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import graph as G
from . import ops
from .synth import SplitMix64, to_input
from .weights import WeightStore

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 80
    lr_step: int = 50
    lr_factor: float = 0.1
    label_smoothing: float = 0.1
    batch_size: int = 32
    seed: int = 7
    stop_at_accuracy: float | None = None
    # split each batch into chunks whose gradients are summed (bounds memory);
    # BN then normalizes per chunk
    micro_batch: int | None = None
    normalization: str = "pixel/255"

    def __post_init__(self):
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label_smoothing must be in [0, 1)")
        if self.micro_batch is not None and self.micro_batch < 1:
            raise ValueError("micro_batch must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.lr_step < 1:
            raise ValueError("epochs, batch_size and lr_step must be positive")
        if self.lr0 < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("lr0, momentum and weight_decay must be non-negative")

    def to_dict(self):
        return asdict(self)


def learning_rate(cfg: TrainConfig, epoch):
    return cfg.lr0 * cfg.lr_factor ** (epoch // cfg.lr_step)


def smoothed_cross_entropy(probs, label, eps):
    """Loss and logit gradient for softmax probabilities ``probs``.

    The target is ``(1 - eps) * onehot + eps / K``; the gradient w.r.t. the
    logits is ``probs - target``. Batched when ``probs`` is 2-D.
    """
    probs = np.asarray(probs, dtype=np.float64)
    k = probs.shape[-1]
    if k < 2:
        raise ValueError("need at least two classes")
    target = np.full(probs.shape, eps / k)
    if probs.ndim == 1:
        target[label] += 1 - eps
    else:
        target[np.arange(len(probs)), np.asarray(label)] += 1 - eps
    logp = np.log(np.clip(probs, 1e-300, None))
    loss = -(target * logp).sum(axis=-1)
    return (float(loss) if probs.ndim == 1 else loss), probs - target


def sgd_step(params, grads, velocity, cfg: TrainConfig, epoch):
    """Momentum SGD with L2 weight decay; returns new ``(params, velocity)``."""
    lr = learning_rate(cfg, epoch)
    new_p, new_v = {}, {}
    for name, p in params.items():
        g = grads[name] + cfg.weight_decay * p
        v = cfg.momentum * velocity.get(name, 0.0) + g
        new_v[name] = v.astype(p.dtype, copy=False)
        new_p[name] = (p - lr * v).astype(p.dtype, copy=False)
    return new_p, new_v


def fan_in(shape):
    if len(shape) == 4:
        return shape[0] * shape[1] * shape[2]
    return shape[0]


def init_weights(graph: G.NetGraph, seed, input_shape=None):
    """Uniform(-b, b) with ``b = sqrt(6 / fan_in)`` for weights; zero biases;
    BN at identity (gamma 1, beta 0, mean 0, var 1)."""
    rng = SplitMix64(seed)
    store = WeightStore()
    for name, shape in G.param_shapes(graph, input_shape).items():
        suffix = name.rsplit(".", 1)[1]
        n = int(np.prod(shape))
        if suffix == "weight":
            bound = np.sqrt(6.0 / fan_in(shape))
            store[name] = rng.uniform(n, -bound, bound).reshape(shape)
        elif suffix in ("gamma", "running_var"):
            store[name] = np.ones(shape)
        else:
            store[name] = np.zeros(shape)
    return store


def trainable(name):
    return not name.endswith((".running_mean", ".running_var"))


def logits_layer(graph: G.NetGraph):
    out = graph.layer(graph.outputs[0])
    if out.kind != "softmax":
        raise G.GraphError("classifier graph must end in softmax")
    return out.inputs[0]


def backward(graph: G.NetGraph, weights, tape, start_id, dstart):
    """Gradients of every trainable parameter given ``d loss / d start_id``."""
    grads = {}
    dacts = {start_id: dstart}
    cache = tape["cache"]
    order = [l.id for l in graph.layers]
    stop = order.index(start_id)
    for layer in reversed(graph.layers[:stop + 1]):
        d = dacts.pop(layer.id, None)
        if d is None:
            continue
        lid, a, kind = layer.id, layer.attrs, layer.kind
        if kind in G.CONV_KINDS:
            dx, dw, db = ops.conv2d_backward(d, cache.pop(lid), weights[f"{lid}.weight"], a["stride"],
                                             a["padding"], a["groups"], a["bias"])
            grads[f"{lid}.weight"] = dw
            if a["bias"]:
                grads[f"{lid}.bias"] = db
            dins = [dx]
        elif kind == "bn":
            dx, dg, dbeta = ops.batchnorm_train_backward(d, cache.pop(lid))
            grads[f"{lid}.gamma"], grads[f"{lid}.beta"] = dg, dbeta
            dins = [dx]
        elif kind == "relu":
            dins = [ops.relu_backward(d, cache.pop(lid))]
        elif kind == "maxpool":
            dins = [ops.maxpool_backward(d, cache.pop(lid), a["kernel"], a["stride"], a["padding"])]
        elif kind == "avgpool-global":
            dins = [ops.global_avgpool_backward(d, cache.pop(lid))]
        elif kind == "fc":
            x = cache.pop(lid)
            dx, dw, db = ops.fully_connected_backward(d.reshape(len(d), -1),
                                                      x.reshape(len(x), -1), weights[f"{lid}.weight"])
            grads[f"{lid}.weight"] = dw
            if a["bias"]:
                grads[f"{lid}.bias"] = db
            dins = [dx.reshape(x.shape)]
        elif kind == "add":
            dins = list(ops.add_backward(d)) + [d] * (len(layer.inputs) - 2)
        else:
            raise G.GraphError(f"no backward for layer kind {kind!r} ({lid})")
        for src, g in zip(layer.inputs, dins):
            if src == G.INPUT:
                continue
            dacts[src] = dacts[src] + g if src in dacts else g
    return grads


def loss_and_grads(graph, weights, x, labels, eps):
    """One training-mode forward/backward; returns (mean loss, grads, probs, tape)."""
    tape = {}
    logit_id = logits_layer(graph)
    acts = G.forward(graph, weights, x, training=True, tape=tape, keep=[logit_id])
    logits = acts[logit_id].reshape(len(x), -1).astype(np.float64)
    probs = ops.softmax(logits)
    loss, dlogits = smoothed_cross_entropy(probs, labels, eps)
    dlogits = (dlogits / len(x)).astype(x.dtype).reshape(acts[logit_id].shape)
    grads = backward(graph, weights, tape, logit_id, dlogits)
    return float(np.mean(loss)), grads, probs, tape


def predict(graph, weights, images_u8, batch_size=32):
    """Class probabilities for uint8 gray images ``(N, H, W)`` in eval mode."""
    out = []
    for start in range(0, len(images_u8), batch_size):
        x = to_input(images_u8[start:start + batch_size])
        out.append(G.forward(graph, weights, x)[graph.outputs[0]].reshape(len(x), -1))
    return np.concatenate(out)


def train(graph: G.NetGraph, train_data, cfg: TrainConfig, val_data=None, on_epoch=None):
    """Train a classifier graph on ``(uint8 images (N, H, W), labels)``.

    Returns ``(best weights, per-epoch log)``; the best weights are those
    with the highest validation accuracy (training accuracy without a
    validation set). Deterministic for a fixed ``cfg.seed``.
    """
    images, labels = train_data
    if len(images) == 0:
        raise ValueError("training set is empty")
    input_shape = tuple(images.shape[1:3]) + (3,)
    weights = init_weights(graph, cfg.seed, input_shape)
    params = {k: v for k, v in weights.items() if trainable(k)}
    velocity = {}
    history = []
    best = (-1.0, None)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order_rng = SplitMix64(cfg.seed).fork(1_000_003 + epoch)
        order = np.argsort(order_rng.uniform(len(images)), kind="stable")
        losses, correct, bn_updates = [], 0, []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            step = cfg.micro_batch or len(idx)
            grads = None
            for m0 in range(0, len(idx), step):
                sub = idx[m0:m0 + step]
                x = to_input(images[sub])
                loss, g, probs, tape = loss_and_grads(graph, weights, x, labels[sub],
                                                      cfg.label_smoothing)
                del tape["cache"]
                frac = len(sub) / len(idx)
                grads = ({k: v * frac for k, v in g.items()} if grads is None
                         else {k: grads[k] + v * frac for k, v in g.items()})
                losses.append(loss * len(sub))
                correct += int((probs.argmax(axis=1) == labels[sub]).sum())
                bn_updates.append(tape.get("bn_stats", ()))
            params, velocity = sgd_step(params, grads, velocity, cfg, epoch)
            for name, p in params.items():
                weights[name] = p
            for stats in bn_updates:
                for lid, mean, var, count in stats:
                    rm, rv = ops.update_running_stats(weights[f"{lid}.running_mean"],
                                                      weights[f"{lid}.running_var"], mean, var, count)
                    weights[f"{lid}.running_mean"] = rm
                    weights[f"{lid}.running_var"] = rv
            bn_updates.clear()
        entry = {
            "epoch": epoch + 1,
            "lr": learning_rate(cfg, epoch),
            "train_loss": float(np.sum(losses) / len(images)),
            "train_accuracy": correct / len(images),
        }
        if val_data is not None:
            probs = predict(graph, weights, val_data[0], cfg.batch_size)
            entry["val_accuracy"] = float(np.mean(probs.argmax(axis=1) == val_data[1]))
        entry["seconds"] = time.perf_counter() - t0
        history.append(entry)
        log.info("epoch %d %s", epoch + 1, entry)
        if on_epoch is not None:
            on_epoch(entry)
        score = entry.get("val_accuracy", entry["train_accuracy"])
        if score > best[0]:
            best = (score, weights.copy())
        if cfg.stop_at_accuracy is not None and score >= cfg.stop_at_accuracy:
            break
    return best[1], history
