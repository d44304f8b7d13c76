"""End-to-end smoke tests for the python surface."""

import math

import pytest

import ddrobust as dd


@pytest.fixture(scope="module")
def split():
    return dd.make_blobs(class_count=3, per_class=24, test_per_class=12,
                         resolution=8, channels=1, sigma=0.2, seed=4)


@pytest.fixture(scope="module")
def model(split):
    return dd.train(split.train, width=16, epochs=25, batch_size=24, lr=0.05,
                    val_fraction=0.0, repeats=1, seed=1)


def test_blobs_shape(split):
    assert split.train.count == 72
    assert split.test.count == 36
    assert split.train.class_count == 3
    assert len(split.train.image(0)) == 64
    assert all(0.0 <= v <= 1.0 for v in split.train.image(0))
    assert sorted(set(split.train.labels)) == [0, 1, 2]
    with pytest.raises(ValueError):
        split.train.image(72)


def test_determinism():
    a = dd.make_blobs(class_count=2, per_class=4, resolution=8, channels=1, seed=9)
    b = dd.make_blobs(class_count=2, per_class=4, resolution=8, channels=1, seed=9)
    assert a.train.image(3) == b.train.image(3)


def test_train_and_eval(model, split):
    acc = dd.clean_accuracy(model, split.test)
    assert acc >= 80.0
    assert model.family == "convnet"
    assert model.parameter_count > 0


def test_zero_epsilon_attack_is_identity(model, split):
    clean = dd.clean_accuracy(model, split.test)
    for attack in ("fgsm", "pgd", "cw", "vmifgsm", "jitter", "autoattack"):
        robust = dd.robust_accuracy(model, split.test, attack=attack, epsilon=0.0,
                                    iterations=3, square_queries=10, seed=2)
        assert robust == clean


def test_attack_reduces_or_keeps_accuracy(model, split):
    clean = dd.clean_accuracy(model, split.test)
    robust = dd.robust_accuracy(model, split.test, attack="pgd", epsilon=8 / 255,
                                iterations=5, seed=2)
    assert robust <= clean
    dr = dd.drop_rate(clean, robust)
    assert math.isclose(dr, (clean - robust) / clean * 100.0, abs_tol=1e-9)


def test_distill_then_train(split):
    d = dd.distill(split.train, method="dc", ipc=1, iterations=6, batch_real=16,
                   width=16, seed=3)
    assert d.count == 3 and d.ipc == 1
    assert len(d.loss_history) == 6
    m = dd.train(d, width=16, epochs=30, batch_size=3, lr=0.05,
                 val_fraction=0.0, seed=1)
    acc = dd.clean_accuracy(m, split.test)
    assert acc > 100.0 / 3  # beats chance
    assert acc >= 0.0 and acc <= 100.0


def test_save_load_round_trip(tmp_path, model, split):
    d = dd.distill(split.train, method="dm", ipc=1, iterations=4, batch_real=16,
                   width=16, seed=5)
    dd.write_distilled(d, tmp_path / "d.ddrb")
    back = dd.read_distilled(tmp_path / "d.ddrb")
    assert back.count == d.count and back.method == "dm"

    dd.save_model(model, tmp_path / "m.ddrw")
    loaded = dd.load_model(tmp_path / "m.ddrw")
    assert dd.clean_accuracy(loaded, split.test) == dd.clean_accuracy(model, split.test)


def test_error_mapping(split):
    with pytest.raises(ValueError):
        dd.make_blobs(class_count=0)
    with pytest.raises(ValueError):
        dd.robust_accuracy(dd.train(split.train, width=16, epochs=1, batch_size=24,
                                    val_fraction=0.0), split.test, attack="nope")
    with pytest.raises(OSError):
        dd.load_model("/nonexistent/path.ddrw")


def test_cli_round_trip(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"distill": {"iterations": 4, "batch_real": 8},\n'
                   ' "model": {"width": 12},\n'
                   ' "data": {"blobs": {"class_count": 2, "per_class": 8,'
                   ' "resolution": 8, "channels": 1, "seed": 3}}}\n')
    run = tmp_path / "run"
    assert dd.run_cli(["distill", "--method", "dc", "--dataset", "blobs", "--ipc", "1",
                       "--config", str(cfg), "--out", str(run)]) == 0
    assert dd.run_cli(["train", "--distilled-path", str(run / "distilled.ddrb"),
                       "--train-epoch", "6", "--train-batch", "2", "--model-num", "1",
                       "--config", str(cfg), "--save-path", str(tmp_path / "models")]) == 0
    assert dd.run_cli(["eval", "--weights", str(tmp_path / "models" / "model-0.ddrw"),
                       "--dataset", "blobs", "--config", str(cfg)]) == 0
    assert dd.run_cli(["bogus-subcommand"]) == 1
