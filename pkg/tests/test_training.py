import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from rawradar.checkpoint import load_checkpoint, save_checkpoint
from rawradar.data import generate_dataset, load_inputs, load_split, write_inputs
from rawradar.errors import ContractError, ShapeError
from rawradar.estimator import RadarDetector
from rawradar.numerics import step_decay_lr
from rawradar.sim import preset, synthesize_adc
from rawradar.training import (
    RunConfig,
    load_run,
    overfit_probe,
    parse_config_text,
    predict_grids,
    save_run,
    train,
)

DESK = preset("desk")
TINY = dict(epochs=2, batch_size=4, lr=1e-3, gamma=10.0)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    generate_dataset(root, DESK, (8, 4, 4), seed=5)
    return root


def test_lr_schedule():
    assert math.isclose(step_decay_lr(1e-4, 25, 0.9, 10), 8.1e-5, rel_tol=1e-12)
    assert step_decay_lr(1e-4, 9, 0.9, 10) == 1e-4


class TestConfig:
    def test_text_round_trip(self):
        cfg = RunConfig(input_mode="RD", window=False, lr=3e-4, depths="2,2,4")
        assert RunConfig.from_text(cfg.to_text()) == cfg

    def test_comments_and_blanks(self):
        assert parse_config_text("# c\n\nepochs = 3  # three\n") == {"epochs": 3}

    def test_unknown_key(self):
        with pytest.raises(ContractError, match="unknown key"):
            parse_config_text("epoch=3\n")

    def test_bad_value(self):
        with pytest.raises(ContractError):
            parse_config_text("window=maybe\n")

    def test_invalid_mode(self):
        with pytest.raises(ContractError):
            RunConfig(input_mode="XYZ")

    def test_default_batch(self):
        assert RunConfig().effective_batch == 16
        assert RunConfig(input_mode="RAD").effective_batch == 4
        assert RunConfig(preset="HD").effective_batch == 4


class TestData:
    def test_frames_match_simulator(self, dataset):
        sp = load_split(dataset, "train")
        assert sp.frames.shape == (8,) + DESK.frame_shape
        assert sp.config == DESK
        from rawradar.data import frame_seed

        again = synthesize_adc(sp.scenes[3], DESK, seed=frame_seed(5, "train", 3)).samples
        assert np.array_equal(sp.frames[3], again)

    def test_limit(self, dataset):
        assert len(load_split(dataset, "val", limit=2)) == 2

    def test_missing_split(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_split(tmp_path, "train")

    def test_truncated(self, dataset, tmp_path):
        import shutil

        shutil.copytree(dataset / "test", tmp_path / "test")
        path = tmp_path / "test" / "frames.bin"
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ContractError, match="truncated"):
            load_split(tmp_path, "test")

    def test_inputs_round_trip(self, tmp_path):
        x = np.random.default_rng(0).normal(size=(3, 4, 5, 2))
        write_inputs(tmp_path, x, {"kind": "RD"})
        back, meta = load_inputs(tmp_path)
        assert np.array_equal(back, x) and meta["kind"] == "RD"


def test_checkpoint_round_trip(tmp_path):
    r = np.random.default_rng(1)
    tensors = {"a": r.normal(size=(3, 4)), "b": r.normal(size=5) + 1j * r.normal(size=5),
               "s": np.array(2.5)}
    save_checkpoint(tmp_path / "x.ckpt", tensors, {"k": [1, 2]})
    back, meta = load_checkpoint(tmp_path / "x.ckpt")
    assert meta == {"k": [1, 2]}
    for k in tensors:
        assert back[k].dtype == tensors[k].dtype and np.array_equal(back[k], tensors[k])


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "f").write_bytes(b"hello\n")
    with pytest.raises(ContractError):
        load_checkpoint(tmp_path / "f")


class TestTraining:
    def test_deterministic_logs(self, dataset, tmp_path):
        tr, va = load_split(dataset, "train"), load_split(dataset, "val")
        cfg = RunConfig(input_mode="ADC", seed=3, **TINY)
        train(cfg, tr.frames, tr.scenes, va.frames, va.scenes, run_dir=tmp_path / "a")
        train(cfg, tr.frames, tr.scenes, va.frames, va.scenes, run_dir=tmp_path / "b")
        a = (tmp_path / "a" / "metrics.log").read_text()
        assert a and a == (tmp_path / "b" / "metrics.log").read_text()

    @pytest.mark.parametrize("mode", ["ADC", "RD", "RAD"])
    def test_checkpoint_forward_bit_exact(self, dataset, tmp_path, mode):
        tr, va = load_split(dataset, "train"), load_split(dataset, "val")
        cfg = RunConfig(input_mode=mode, seed=1, **dict(TINY, epochs=1))
        state = train(cfg, tr.frames, tr.scenes, va.frames, va.scenes, run_dir=tmp_path)
        before = predict_grids(state.model, state.pipeline.transform(va.frames))
        save_run(tmp_path / "x.ckpt", state)
        back = load_run(tmp_path / "x.ckpt")
        after = predict_grids(back.model, back.pipeline.transform(va.frames))
        for k in before:
            assert np.array_equal(before[k], after[k]), k
        assert back.optimizer.step_count == state.optimizer.step_count

    def test_best_is_kept(self, dataset):
        tr, va = load_split(dataset, "train"), load_split(dataset, "val")
        state = train(RunConfig(input_mode="RD", **dict(TINY, epochs=3)), tr.frames, tr.scenes,
                      va.frames, va.scenes)
        scores = [h["score"] for h in state.history]
        assert state.best["score"] == max(scores) >= scores[-1]

    def test_overfit_probe_reduces_loss(self, dataset):
        tr = load_split(dataset, "train", limit=4)
        losses = overfit_probe(RunConfig(input_mode="RD", gamma=10.0), tr.frames, tr.scenes, steps=15)
        assert losses[-1] < losses[0]


class TestEstimator:
    def test_params_and_clone(self):
        est = RadarDetector(input_mode="RD", epochs=3)
        assert est.get_params()["input_mode"] == "RD"
        c = clone(est)
        assert c.get_params() == est.get_params()
        est.set_params(lr=0.01)
        assert est.run_config().lr == 0.01

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            RadarDetector().predict(np.zeros((1,) + DESK.frame_shape, dtype=complex))

    def test_validation(self, dataset):
        sp = load_split(dataset, "train")
        est = RadarDetector(**TINY)
        with pytest.raises(ShapeError):
            est.fit(sp.frames[:, :32], sp.scenes)
        with pytest.raises(ContractError):
            est.fit(sp.frames.real, sp.scenes)
        with pytest.raises(ContractError):
            est.fit(sp.frames, sp.scenes[:3])

    def test_fit_predict_score_save(self, dataset, tmp_path):
        tr, va = load_split(dataset, "train"), load_split(dataset, "val")
        est = RadarDetector(input_mode="RD", **TINY).fit(tr.frames, tr.scenes, va.frames, va.scenes)
        dets = est.predict(va.frames)
        assert len(dets) == len(va)
        assert 0.0 <= est.score(va.frames, va.scenes) <= 1.0
        est.save(tmp_path / "m.ckpt")
        back = RadarDetector.load(tmp_path / "m.ckpt")
        assert back.get_params()["input_mode"] == "RD"
        g1, g2 = est.predict_grids(va.frames), back.predict_grids(va.frames)
        assert np.array_equal(g1["binary"], g2["binary"])
