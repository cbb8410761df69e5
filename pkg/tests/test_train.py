import math

import numpy as np
import pytest

import oracles
from weldsign import graph as G
from weldsign import train as T


def test_learning_rate_schedule():
    cfg = T.TrainConfig()
    assert [T.learning_rate(cfg, e) for e in (0, 49)] == [0.1, 0.1]
    assert T.learning_rate(cfg, 50) == pytest.approx(0.01)
    assert T.learning_rate(cfg, 79) == pytest.approx(0.01)


def test_config_validation():
    with pytest.raises(ValueError):
        T.TrainConfig(label_smoothing=1.0)
    with pytest.raises(ValueError):
        T.TrainConfig(epochs=0)
    assert T.TrainConfig().to_dict()["weight_decay"] == 0.0005


def test_cross_entropy_examples():
    assert T.smoothed_cross_entropy(np.eye(4)[2], 2, 0.0)[0] == 0.0
    assert T.smoothed_cross_entropy(np.full(4, 0.25), 1, 0.0)[0] == pytest.approx(math.log(4))
    with pytest.raises(ValueError):
        T.smoothed_cross_entropy(np.ones(1), 0, 0.0)


def test_cross_entropy_gradient_finite_difference(rng):
    z = rng.normal(size=4)
    loss_of = lambda v: T.smoothed_cross_entropy(oracles.softmax(v), 3, 0.1)[0]
    _, grad = T.smoothed_cross_entropy(oracles.softmax(z), 3, 0.1)
    np.testing.assert_allclose(grad, oracles.numeric_grad(loss_of, z.copy(), 1e-5), atol=1e-4)


def test_sgd_zero_grad_no_change():
    p = {"w": np.array([1.0, -2.0])}
    new_p, _ = T.sgd_step(p, {"w": np.zeros(2)}, {}, T.TrainConfig(weight_decay=0), 0)
    np.testing.assert_array_equal(new_p["w"], p["w"])


def test_sgd_matches_recurrence():
    cfg = T.TrainConfig(lr0=0.1, momentum=0.9, weight_decay=0.01)
    p, v = {"w": np.array([2.0])}, {}
    w_ref, v_ref = 2.0, 0.0
    for step, g in enumerate((0.5, -0.25)):
        p, v = T.sgd_step(p, {"w": np.array([g])}, v, cfg, 0)
        v_ref = 0.9 * v_ref + g + 0.01 * w_ref
        w_ref = w_ref - 0.1 * v_ref
        assert p["w"][0] == w_ref and v["w"][0] == v_ref


def test_init_weights_deterministic_and_fan_in():
    g = G.build_grnet(width=0.25)
    a, b = T.init_weights(g, 3), T.init_weights(g, 3)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert T.fan_in((3, 3, 64, 64)) == 576
    assert (a["cbr.bn.gamma"] == 1).all() and (a["cbr.bn.running_var"] == 1).all()
    assert not a["cbr.bn.beta"].any() and not a["fc.bias"].any()


def test_init_weights_spread():
    g = G.build_grnet()
    w = T.init_weights(g, 0)["fc.weight"]
    bound = math.sqrt(6 / 512)
    assert np.abs(w).max() <= bound
    assert abs(w.std() - bound / math.sqrt(3)) / (bound / math.sqrt(3)) < 0.05


def toy_images(n, seed):
    """Two classes of uint8 images: bright top half vs bright bottom half."""
    r = np.random.default_rng(seed)
    imgs = r.integers(0, 40, (n, 8, 8)).astype(np.uint8)
    labels = np.arange(n) % 2
    for i, lab in enumerate(labels):
        imgs[i, :4] += 150 if lab == 0 else 0
        imgs[i, 4:] += 150 if lab == 1 else 0
    return imgs, labels


def test_fc_only_separable_reaches_full_accuracy():
    imgs, labels = toy_images(32, 0)
    layers = [G.LayerSpec("fc", "fc", ["input"], dict(units=2, bias=True)),
              G.LayerSpec("softmax", "softmax", ["fc"])]
    g = G.NetGraph("toy", layers, ["softmax"], (8, 8, 3))
    w, hist = T.train(g, (imgs, labels), T.TrainConfig(epochs=30, batch_size=8, lr0=0.05, lr_step=30))
    assert hist[-1]["train_accuracy"] == 1.0
    assert (T.predict(g, w, imgs).argmax(1) == labels).all()


def small_grnet():
    return G.build_grnet(width=1 / 16, input_size=8)


def test_one_batch_overfit():
    imgs, labels = toy_images(8, 1)
    g = small_grnet()
    _, hist = T.train(g, (imgs, labels), T.TrainConfig(epochs=30, batch_size=8, lr0=0.05))
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]


def test_zero_lr_leaves_params():
    imgs, labels = toy_images(8, 2)
    g = small_grnet()
    cfg = T.TrainConfig(epochs=2, batch_size=4, lr0=0.0, seed=5)
    w, _ = T.train(g, (imgs, labels), cfg)
    init = T.init_weights(g, 5, (8, 8, 3))
    for k in init:
        if T.trainable(k):
            assert w[k].tobytes() == init[k].tobytes(), k


def test_small_lr_loss_non_increasing_on_fixed_batch():
    imgs, labels = toy_images(8, 3)
    g = small_grnet()
    cfg = T.TrainConfig(lr0=1e-4, weight_decay=0.0, momentum=0.0)
    w = T.init_weights(g, 1, (8, 8, 3))
    params = {k: v for k, v in w.items() if T.trainable(k)}
    x = imgs.astype(np.float32)[..., None].repeat(3, -1) / 255
    losses = []
    for _ in range(10):
        loss, grads, _, _ = T.loss_and_grads(g, w, x, labels, 0.1)
        losses.append(loss)
        params, _ = T.sgd_step(params, grads, {}, cfg, 0)
        for k, v in params.items():
            w[k] = v
    assert all(b <= a + 1e-7 for a, b in zip(losses, losses[1:]))


def test_deterministic_and_logged():
    imgs, labels = toy_images(12, 4)
    g = small_grnet()
    cfg = T.TrainConfig(epochs=2, batch_size=4, lr0=0.05, seed=9)
    w1, h1 = T.train(g, (imgs, labels), cfg, (imgs, labels))
    w2, h2 = T.train(g, (imgs, labels), cfg, (imgs, labels))
    assert [e["train_loss"] for e in h1] == [e["train_loss"] for e in h2]
    assert [e["val_accuracy"] for e in h1] == [e["val_accuracy"] for e in h2]
    assert all(w1[k].tobytes() == w2[k].tobytes() for k in w1)
    assert [e["epoch"] for e in h1] == [1, 2]


def test_micro_batch_accumulation_matches_full_batch_without_bn():
    imgs, labels = toy_images(16, 5)
    g = G.NetGraph("toy", [G.LayerSpec("fc", "fc", ["input"], dict(units=2, bias=True)),
                           G.LayerSpec("softmax", "softmax", ["fc"])], ["softmax"], (8, 8, 3))
    full, _ = T.train(g, (imgs, labels), T.TrainConfig(epochs=2, batch_size=8))
    micro, _ = T.train(g, (imgs, labels), T.TrainConfig(epochs=2, batch_size=8, micro_batch=3))
    for k in full:
        np.testing.assert_allclose(micro[k], full[k], rtol=1e-5, atol=1e-7)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        T.train(small_grnet(), (np.zeros((0, 8, 8), np.uint8), np.zeros(0, int)), T.TrainConfig(epochs=1))


def test_classifier_graph_needs_softmax():
    g = G.NetGraph("r", [G.LayerSpec("r", "relu", ["input"])], ["r"], (2, 2, 1))
    with pytest.raises(G.GraphError):
        T.logits_layer(g)


def test_bn_running_stats_updated_by_training():
    imgs, labels = toy_images(8, 6)
    g = small_grnet()
    w, _ = T.train(g, (imgs, labels), T.TrainConfig(epochs=1, batch_size=8))
    assert w["cbr.bn.running_mean"].any()
    assert not np.allclose(w["cbr.bn.running_var"], 1)
