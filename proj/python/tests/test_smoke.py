import numpy as np
import pytest

import oodkit


def test_softmax_and_losses():
    p = oodkit.softmax(np.array([1.0, 2.0, 3.0]))
    assert p == pytest.approx([0.0900305731703805, 0.2447284710547976, 0.6652409557748219], abs=1e-15)

    value, grad = oodkit.ce_loss(np.zeros((2, 4)), [0, 3])
    assert value == pytest.approx(np.log(4.0))
    assert grad.shape == (2, 4)

    z = np.random.default_rng(0).normal(size=(3, 4))
    oe = np.random.default_rng(1).normal(size=(5, 4))
    zero = oodkit.oecc_loss(z, [0, 1, 2], oe, 0.0, 0.0, 0.9)
    assert zero["value"] == value_ce(z, [0, 1, 2])
    full = oodkit.oecc_loss(z, [0, 1, 2], oe, 0.5, 0.7, 0.9)
    assert full["value"] == pytest.approx(full["ce"] + 0.5 * full["confidence"] + 0.7 * full["uniformity"])


def value_ce(z, labels):
    return oodkit.ce_loss(z, labels)[0]


def test_metrics():
    assert oodkit.auroc([2.0, 3.0], [0.0, 1.0]) == 1.0
    assert oodkit.auroc([1.0], [1.0]) == 0.5
    r = oodkit.evaluate([2.0, 3.0, 4.0], [0.0, 1.0])
    assert r == {"tnr95": 1.0, "auroc": 1.0, "dacc": 1.0}
    assert oodkit.msp_scores(np.zeros((2, 4))) == pytest.approx([0.25, 0.25])
    with pytest.raises(oodkit.OodkitError):
        oodkit.auroc([], [1.0])


def test_gram():
    g = oodkit.gram(np.array([-1.0, 2.0]), 1)
    assert list(g) == [1.0, -2.0, 4.0]
    assert oodkit.gram(np.array([[1.0, 2.0]]), 2)[0] == pytest.approx(np.sqrt(17.0))


def test_generators():
    noise = oodkit.generate("uniform_noise", 3, 10)
    assert noise.shape == (10, 3, 8, 8)
    assert np.array_equal(noise, oodkit.generate("uniform_noise", 3, 10))
    ghost = oodkit.generate("rgb_ghosted", 4, 5, source=noise)
    assert ghost.shape == (5, 3, 8, 8)
    assert np.all((ghost >= 0.0) & (ghost <= 1.0))
    with pytest.raises(oodkit.OodkitError):
        oodkit.generate("inverted", 1, 2, source=np.zeros((2, 1, 8, 8)))
    with pytest.raises(oodkit.OodkitError):
        oodkit.generate("sunsets", 1, 2)


def test_dataset_round_trip(tmp_path):
    images = np.random.default_rng(2).uniform(size=(6, 3, 8, 8))
    oodkit.save_dataset(tmp_path / "ds", "toy", "d_in_train", images, [0, 1, 0, 1, 0, 1], 2)
    ds = oodkit.load_dataset(tmp_path / "ds")
    assert ds["role"] == "d_in_train"
    assert ds["labels"] == [0, 1, 0, 1, 0, 1]
    assert np.array_equal(ds["images"], images)


def test_cli_train_and_network(tmp_path):
    code, _, err = oodkit.run_cli(
        ["--out", str(tmp_path), "--seed", "1", "make-toy", "--train-per-class", "20", "--test-per-class", "10",
         "--oe-count", "50", "--val-count", "20", "--ood-count", "20"])
    assert code == 0, err
    code, _, err = oodkit.run_cli(["--config", str(tmp_path / "config.json"), "--out", str(tmp_path / "out"), "train"])
    assert code == 0, err
    net = oodkit.Network.load(tmp_path / "out" / "ce")
    ds = oodkit.load_dataset(tmp_path / "data" / "d_in_test")
    logits = net.logits(ds["images"])
    assert logits.shape == (len(ds["labels"]), net.num_classes)
    assert net.predict(ds["images"]) == list(np.argmax(logits, axis=1))
