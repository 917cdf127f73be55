"""End-to-end command behavior, file formats, and exit codes."""

import json

import numpy as np
import pytest

from spxmix import consistency, imgcore, metrics, mixer, superpixel
from spxmix.cli import load_probmap, main, save_probmap


def write_image(path, rng, shape=(24, 24, 3)):
    img = rng.integers(0, 256, size=shape, dtype=np.uint8)
    imgcore.save_image_u8(img, path)
    return img


class TestSuperpixelsCommand:
    def test_writes_map_and_prints_count(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        src = tmp_path / "in.png"
        out = tmp_path / "sp.png"
        write_image(src, rng)
        assert main(["superpixels", "--input", str(src), "--n", "9",
                     "--output", str(out)]) == 0
        printed = int(capsys.readouterr().out.strip())
        loaded = superpixel.load_superpixel_map(out)
        assert printed == loaded.n == 9

    def test_single_region(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        src = tmp_path / "in.png"
        out = tmp_path / "sp.png"
        write_image(src, rng)
        assert main(["superpixels", "--input", str(src), "--n", "1",
                     "--output", str(out)]) == 0
        assert capsys.readouterr().out.strip() == "1"
        assert np.all(superpixel.load_superpixel_map(out).region_ids == 0)

    def test_missing_input_exits_2(self, tmp_path, capsys):
        code = main(["superpixels", "--input", str(tmp_path / "nope.png"),
                     "--output", str(tmp_path / "out.png")])
        assert code == 2
        assert "error" in capsys.readouterr().err


class TestMixCommand:
    def test_vanishing_proportion_copies_first_input(self, tmp_path, capsys):
        rng = np.random.default_rng(2)
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        img_a = write_image(a, rng)
        write_image(b, rng)
        out = tmp_path / "mixed.png"
        assert main(["mix", "--a", str(a), "--b", str(b), "--n", "9",
                     "--proportion", "0.01", "--out", str(out)]) == 0
        assert np.array_equal(imgcore.load_image_u8(out), img_a)

    def test_same_seed_identical_bytes(self, tmp_path):
        rng = np.random.default_rng(3)
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        write_image(a, rng)
        write_image(b, rng)
        outs = []
        for name in ("m1.png", "m2.png"):
            out = tmp_path / name
            mask = tmp_path / ("mask_" + name)
            assert main(["mix", "--a", str(a), "--b", str(b), "--n", "16",
                         "--seed", "42", "--out", str(out),
                         "--mask-out", str(mask)]) == 0
            outs.append((out.read_bytes(), mask.read_bytes()))
        assert outs[0] == outs[1]

    def test_swapped_inputs_with_complemented_mask(self, tmp_path):
        rng = np.random.default_rng(4)
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        img_a = write_image(a, rng)
        img_b = write_image(b, rng)
        out, mask_out = tmp_path / "m.png", tmp_path / "mask.png"
        assert main(["mix", "--a", str(a), "--b", str(b), "--n", "16",
                     "--seed", "7", "--out", str(out),
                     "--mask-out", str(mask_out)]) == 0
        mixed = imgcore.load_image_u8(out)
        mask = mixer.load_mask(mask_out)
        assert np.array_equal(mixed, mixer.mix_images(img_b, img_a, 1 - mask))

    def test_size_mismatch_exits_2(self, tmp_path, capsys):
        rng = np.random.default_rng(5)
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        write_image(a, rng, shape=(24, 24, 3))
        write_image(b, rng, shape=(20, 24, 3))
        assert main(["mix", "--a", str(a), "--b", str(b),
                     "--out", str(tmp_path / "m.png")]) == 2


class TestEvalCommand:
    def _write_corpus(self, tmp_path, preds, gts, probmaps=None):
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir()
        gt_dir.mkdir()
        for i, (p, g) in enumerate(zip(preds, gts)):
            imgcore.save_label_map(p, pred_dir / f"s{i}.png")
            imgcore.save_label_map(g, gt_dir / f"s{i}.png")
        prob_dir = None
        if probmaps is not None:
            prob_dir = tmp_path / "probs"
            prob_dir.mkdir()
            for i, pm in enumerate(probmaps):
                save_probmap(pm, prob_dir / f"s{i}.pmap")
        return pred_dir, gt_dir, prob_dir

    def test_perfect_predictions(self, tmp_path, capsys):
        rng = np.random.default_rng(6)
        gts = [rng.integers(0, 3, size=(8, 8)).astype(np.uint8) for _ in range(2)]
        pred_dir, gt_dir, _ = self._write_corpus(tmp_path, gts, gts)
        assert main(["eval", "--pred", str(pred_dir), "--gt", str(gt_dir),
                     "--classes", "3"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["miou"] == 1.0

    def test_hand_built_corpus_with_probs(self, tmp_path, capsys):
        gt = np.array([[0, 1]], dtype=np.uint8)
        pred = np.array([[0, 0]], dtype=np.uint8)
        probs = np.array([[[0.8, 0.2], [0.6, 0.4]]], dtype=np.float32)
        pred_dir, gt_dir, prob_dir = self._write_corpus(
            tmp_path, [pred], [gt], [probs])
        assert main(["eval", "--pred", str(pred_dir), "--gt", str(gt_dir),
                     "--probs", str(prob_dir), "--classes", "2",
                     "--bins", "1"]) == 0
        report = json.loads(capsys.readouterr().out)
        # IoU_0 = 1/2 (tp=1, fp=1), IoU_1 = 0 -> miou 0.25
        assert report["miou"] == pytest.approx(0.25)
        assert report["ece"] == pytest.approx(0.2, abs=1e-6)
        expected_nll = -(np.log(0.8) + np.log(0.4)) / 2
        assert report["nll"] == pytest.approx(expected_nll, abs=1e-6)

    def test_empty_dir_exits_2(self, tmp_path):
        (tmp_path / "pred").mkdir()
        (tmp_path / "gt").mkdir()
        assert main(["eval", "--pred", str(tmp_path / "pred"),
                     "--gt", str(tmp_path / "gt"), "--classes", "2"]) == 2


class TestOodEvalCommand:
    def _write(self, tmp_path, probmaps, masks):
        prob_dir = tmp_path / "probs"
        mask_dir = tmp_path / "ood"
        prob_dir.mkdir()
        mask_dir.mkdir()
        for i, (pm, m) in enumerate(zip(probmaps, masks)):
            save_probmap(pm, prob_dir / f"s{i}.pmap")
            mixer.save_mask(m, mask_dir / f"s{i}.png")
        return prob_dir, mask_dir

    def test_perfect_separation(self, tmp_path, capsys):
        # in-distribution pixels confident, OOD pixels uncertain
        probs = np.zeros((2, 2, 2), np.float32)
        probs[0, :, 0] = 1.0                 # confident row: MCP 1.0
        probs[1, :, :] = 0.5                 # uncertain row: MCP 0.5
        ood = np.zeros((2, 2), np.uint8)
        ood[1, :] = 1
        prob_dir, mask_dir = self._write(tmp_path, [probs], [ood])
        assert main(["ood-eval", "--probs", str(prob_dir),
                     "--ood-mask", str(mask_dir)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["auc"] == 1.0
        assert report["aupr"] == 1.0
        assert report["fpr95"] == 0.0

    def test_matches_library_metrics(self, tmp_path, capsys):
        rng = np.random.default_rng(7)
        probs = rng.dirichlet(np.ones(3), size=(6, 6)).astype(np.float32)
        ood = (rng.random((6, 6)) < 0.4).astype(np.uint8)
        ood[0, 0], ood[0, 1] = 1, 0
        prob_dir, mask_dir = self._write(tmp_path, [probs], [ood])
        assert main(["ood-eval", "--probs", str(prob_dir),
                     "--ood-mask", str(mask_dir)]) == 0
        report = json.loads(capsys.readouterr().out)
        samples = metrics.ScoredSamples(
            (1.0 - metrics.mcp_confidence(probs)).reshape(-1).astype(np.float64),
            ood.reshape(-1).astype(bool))
        assert report["auc"] == pytest.approx(metrics.roc_auc(samples), abs=1e-6)
        assert report["aupr"] == pytest.approx(metrics.aupr(samples), abs=1e-6)
        assert report["fpr95"] == pytest.approx(
            metrics.fpr_at_95_tpr(samples), abs=1e-6)

    def test_single_class_mask_exits_2(self, tmp_path):
        probs = np.full((2, 2, 2), 0.5, np.float32)
        ood = np.ones((2, 2), np.uint8)
        prob_dir, mask_dir = self._write(tmp_path, [probs], [ood])
        assert main(["ood-eval", "--probs", str(prob_dir),
                     "--ood-mask", str(mask_dir)]) == 2


TRAIN_CONFIG = {
    "lambda": 0.0,
    "lr": 0.1,
    "steps": 6,
    "seed": 3,
    "batch_labeled": 2,
    "batch_unlabeled": 1,
    "n_superpixels": 6,
    "proportion": 0.5,
    "height": 16,
    "width": 16,
    "n_labeled": 2,
    "n_unlabeled": 2,
    "n_test": 1,
}


class TestTrainToyCommand:
    def test_json_config_produces_checkpoint_and_history(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(TRAIN_CONFIG))
        ckpt = tmp_path / "model.tmdl"
        hist = tmp_path / "history.csv"
        assert main(["train-toy", "--config", str(cfg_path),
                     "--checkpoint", str(ckpt), "--history", str(hist)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert set(report) == {"miou", "nll", "ece"}
        rows = hist.read_text().strip().splitlines()
        assert len(rows) == TRAIN_CONFIG["steps"] + 1
        assert ckpt.read_bytes()[:4] == b"TMDL"

    def test_lambda_zero_matches_library_supervised_run(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(TRAIN_CONFIG))
        ckpt = tmp_path / "model.tmdl"
        assert main(["train-toy", "--config", str(cfg_path),
                     "--checkpoint", str(ckpt)]) == 0

        task = consistency.SynthTask(height=16, width=16, n_labeled=2,
                                     n_unlabeled=2, n_test=1)
        cfg = consistency.TrainerConfig(
            lam=0.0, lr=0.1, steps=6, seed=3, batch_labeled=2, batch_unlabeled=1,
            mix=mixer.MixConfig(n_superpixels=6, proportion=0.5))
        result = consistency.train(task, cfg)
        ref = tmp_path / "ref.tmdl"
        consistency.save_checkpoint(result.student, ref)
        assert ckpt.read_bytes() == ref.read_bytes()

    def test_toml_config(self, tmp_path):
        lines = []
        for key, value in TRAIN_CONFIG.items():
            lines.append(f'{key} = {json.dumps(value)}')
        cfg_path = tmp_path / "cfg.toml"
        cfg_path.write_text("\n".join(lines))
        ckpt = tmp_path / "model.tmdl"
        assert main(["train-toy", "--config", str(cfg_path),
                     "--checkpoint", str(ckpt)]) == 0
        assert ckpt.exists()

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"not_a_key": 1}))
        assert main(["train-toy", "--config", str(cfg_path),
                     "--checkpoint", str(tmp_path / "x.tmdl")]) == 2


class TestVerifyBoundCommand:
    def test_default_run_all_pass(self, capsys):
        assert main(["verify-bound", "--instances", "30", "--seed", "5"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 31
        summary = json.loads(lines[-1])
        assert summary == {"total": 30, "passed": 30, "all_hold": True}

    def test_zero_instances_empty_report(self, capsys):
        assert main(["verify-bound", "--instances", "0"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert json.loads(lines[-1])["total"] == 0

    def test_fixed_seed_reproducible(self, capsys):
        main(["verify-bound", "--instances", "5", "--seed", "9"])
        first = capsys.readouterr().out
        main(["verify-bound", "--instances", "5", "--seed", "9"])
        assert capsys.readouterr().out == first


class TestGenSynthCommand:
    def test_writes_images_and_labels(self, tmp_path, capsys):
        out = tmp_path / "corpus"
        assert main(["gen-synth", "--out", str(out), "--count", "3",
                     "--seed", "1"]) == 0
        images = sorted((out / "images").iterdir())
        labels = sorted((out / "labels").iterdir())
        assert len(images) == len(labels) == 3
        img = imgcore.load_image_u8(images[0])
        lab = imgcore.load_label_map(labels[0])
        assert img.shape == (32, 32, 3)
        assert lab.shape == (32, 32)


class TestProbmapFormat:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(8)
        probs = rng.dirichlet(np.ones(5), size=(7, 9)).astype(np.float32)
        path = tmp_path / "p.pmap"
        save_probmap(probs, path)
        assert path.read_bytes()[:4] == b"PMAP"
        assert np.array_equal(load_probmap(path), probs)

    def test_rejects_junk(self, tmp_path):
        path = tmp_path / "junk.pmap"
        path.write_bytes(b"WHAT" + b"\x00" * 12)
        with pytest.raises(ValueError):
            load_probmap(path)
