"""Smoke tests for the compiled python module."""

import math
import os
import tempfile

import numpy as np
import pytest

import modbal


def test_presence_sampling_and_rates():
    c = modbal.sample_presence([0.2, 0.5, 0.8], 200, seed=7)
    assert c.shape == (200, 3)
    assert c.dtype == np.uint8
    rates = modbal.missing_rates(c)
    for got, want in zip(rates, [0.2, 0.5, 0.8]):
        assert abs(got - want) <= 0.05
    # determinism
    c2 = modbal.sample_presence([0.2, 0.5, 0.8], 200, seed=7)
    assert np.array_equal(c, c2)
    avail = modbal.available_modalities(c, 0)
    assert len(avail) >= 1
    assert all(c[0, m] == 1 for m in avail)


def test_generate_dataset_shapes():
    data = modbal.generate_dataset(samples=3, modalities=2, classes=3, shape=[32, 32],
                                   noise=0.05, seed=11)
    assert len(data) == 3
    s = data[0]
    assert s["label"].shape == (32, 32)
    assert len(s["images"]) == 2
    assert s["images"][0].shape == (32, 32)
    assert s["presence"].tolist() == [1, 1]
    assert set(np.unique(s["label"])) <= {0, 1, 2}


def test_dice_ce_uniform_logits():
    logits = np.zeros((2, 2, 2))
    label = np.array([[0, 1], [0, 1]], dtype=np.uint8)
    loss = modbal.dice_ce(logits, label)
    assert loss == pytest.approx(math.log(2.0) + 0.5, abs=1e-6)
    val, grad = modbal.dice_ce(logits, label, with_grad=True)
    assert val == pytest.approx(loss)
    assert grad.shape == logits.shape


def test_pixel_distill_hand_value():
    tau = 4.0
    stu = np.zeros((2, 1, 1))
    tea = np.zeros((2, 1, 1))
    tea[0, 0, 0] = tau * math.log(3.0)
    kl = modbal.pixel_distill([stu], [tea], tau=tau)
    assert kl == pytest.approx(0.14384, abs=1e-5)
    assert modbal.pixel_distill([stu], [stu], tau=tau) == pytest.approx(0.0)


def test_prototype_similarity_pipeline():
    feats = np.zeros((2, 2, 2))
    feats[0] = [[1.0, 1.0], [0.0, 0.0]]
    feats[1] = [[0.0, 0.0], [1.0, 1.0]]
    label = np.array([[0, 0], [1, 1]], dtype=np.uint8)
    protos = modbal.prototypes(feats, label)
    assert protos[0].tolist() == [1.0, 0.0]
    assert protos[1].tolist() == [0.0, 1.0]
    field = modbal.similarity_field(feats, label)
    assert field[0].shape == (2, 2)
    assert field[0][0, 0] == pytest.approx(1.0)
    assert field[1][0, 0] == pytest.approx(0.0)
    assert modbal.knowledge_gap(field, field) == pytest.approx(0.0)
    assert modbal.proto_distill(field, field) == pytest.approx(0.0)

    shifted = {k: np.clip(v - 0.5, -1, 1) for k, v in field.items()}
    gap = modbal.knowledge_gap(field, shifted)
    assert gap > 0
    assert modbal.proto_distill(field, shifted) <= gap + 1e-12

    val, grad = modbal.proto_distill_grad(feats, label, shifted)
    assert val > 0
    assert grad.shape == feats.shape


def test_relative_preference_and_beta():
    pref = modbal.relative_preference({0: 1.0, 1: 3.0}, [0, 1], 2)
    assert pref.d_bar == pytest.approx(2.0)
    assert pref.rp[0] == pytest.approx(0.5)
    assert pref.rp[1] == pytest.approx(-0.5)
    assert modbal.task_mask(pref) == {0: 0, 1: 1}

    state = modbal.PreferenceState([0.0, 0.5], gamma=0.01)
    assert state.beta == pytest.approx([1.0, 2.0])
    state.accumulate(pref)
    assert state.epoch_mean_rp() == pytest.approx([0.5, -0.5])
    state.update_beta()
    assert state.beta == pytest.approx([1.0 - 0.005, 2.0 + 0.005])
    assert state.epoch_index == 1

    total = modbal.total_loss(1.0, {0: 0.2, 1: 0.4}, {1: 0.3}, pref,
                              modbal.PreferenceState([0.5, 0.2], gamma=0.01), 0.5, 0.1)
    assert total == pytest.approx(1.48)


def test_metrics():
    a = np.zeros((8, 8), dtype=np.uint8)
    b = np.zeros((8, 8), dtype=np.uint8)
    a[0, :4] = 1
    b[0, 2:6] = 1
    assert modbal.dice_score(a, b) == pytest.approx(0.5)
    assert modbal.dice_score(a, a) == pytest.approx(1.0)

    p = np.zeros((1, 8), dtype=np.uint8)
    q = np.zeros((1, 8), dtype=np.uint8)
    p[0, 0] = 1
    q[0, 3] = 1
    assert modbal.hausdorff(p, q, variant="max") == pytest.approx(3.0)
    assert modbal.hausdorff(p, np.zeros((1, 8), dtype=np.uint8), variant="max") is None


def test_upsample_and_poly_lr():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    y = modbal.upsample(x, 2, mode="nearest")
    assert y.shape == (1, 4, 4)
    assert y[0, 0, 0] == 1.0 and y[0, 0, 3] == 2.0 and y[0, 3, 0] == 3.0
    assert modbal.poly_lr(0, 100, 2e-4) == pytest.approx(2e-4)
    assert modbal.poly_lr(100, 100, 2e-4) == 0.0


def test_run_experiment_smoke():
    cfg = "\n".join([
        "method = passion",
        "epochs = 1",
        "data.samples = 4",
        "data.modalities = 2",
        "data.classes = 2",
        "data.shape = 16x16",
        "data.noise = 0.1",
        "data.seed = 5",
        "test_samples = 2",
        "targets = 0.2,0.5",
        "backbone.width = 4",
        "backbone.levels = 2",
    ])
    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = os.path.join(tmp, "exp.cfg")
        with open(cfg_path, "w") as f:
            f.write(cfg + "\n")
        art = modbal.run_experiment(cfg_path, out_dir=os.path.join(tmp, "out"), seed=3)
        for key in ("checkpoint", "rp_log", "report_csv", "report_text",
                    "resolved_config", "rp_plot", "presence_manifest"):
            assert os.path.exists(art[key]), key
        with open(art["rp_log"]) as f:
            lines = f.read().strip().splitlines()
        assert lines[0] == "epoch,modality,mean_rp,beta"
        assert len(lines) == 1 + 2  # one epoch, two modalities
