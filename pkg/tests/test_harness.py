import csv
import json

import numpy as np
import pytest
import torch

from vidshadow import cli
from vidshadow import train as H
from vidshadow.checkpoint import load_checkpoint, read_manifest, save_checkpoint
from vidshadow.config import apply_overrides, load_config, parse_override
from vidshadow.maskops import read_mask, read_soft_mask
from vidshadow.model import backbone_checksum

TINY = [
    "model.image_size=32", "model.n_stages=2", "model.c_b=16", "model.c_e=16", "model.c_dec=16",
    "model.l_k=4", "model.n_heads=2", "model.c_text=8", "model.c_image=8",
    "data.synth_videos=2", "data.synth_frames=4", "data.text_tokens=3", "data.image_patches=4",
    "schedule.frames_per_clip=3", "schedule.log_every=0",
]


def tiny_cfg(tmp_path, *extra):
    return load_config(overrides=TINY + [f"paths.data={tmp_path / 'data'}",
                                         f"paths.out={tmp_path / 'out'}", *extra])


def state_of(model):
    return {k: v.clone() for k, v in model.state_dict().items()}


class TestConfig:
    def test_defaults_validate(self):
        cfg = load_config()
        assert cfg.optimizer.lr == 5e-5 and cfg.optimizer.weight_decay == 0.01
        assert cfg.schedule.batch_clips == 2 and cfg.schedule.frames_per_clip == 5
        w = cfg.losses.weights
        assert (w.lambda_sem, w.lambda_edge, w.lambda_mask) == (1.0, 0.5, 1.0)

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"optimizer": {"lr": 1e-3}, "temporal_mode": "none"}))
        cfg = load_config(path, ["optimizer.weight_decay=0", "losses.weights.lambda_edge=2"])
        assert cfg.optimizer.lr == 1e-3 and cfg.optimizer.weight_decay == 0
        assert cfg.temporal_mode == "none" and cfg.model_config().temporal_mode == "none"
        assert cfg.losses.weights.lambda_edge == 2

    @pytest.mark.parametrize("item,keys,value", [
        ("a.b=3", ["a", "b"], 3), ("x=none", ["x"], "none"), ("x=null", ["x"], None),
        ("x=[1,2]", ["x"], [1, 2]), ("x=a=b", ["x"], "a=b"),
    ])
    def test_parse_override(self, item, keys, value):
        assert parse_override(item) == (keys, value)

    @pytest.mark.parametrize("bad", ["noequals", "=3"])
    def test_bad_override_syntax(self, bad):
        with pytest.raises(ValueError):
            parse_override(bad)

    def test_override_into_scalar(self):
        with pytest.raises(ValueError):
            apply_overrides({"seed": 1}, ["seed.x=2"])

    @pytest.mark.parametrize("items", [
        ["optimizer.lrate=1"], ["bogus=1"], ["temporal_mode=frames"], ["optimizer.lr=-1"],
        ["losses.weights.lambda_sem=-1"], ["losses.edge_target=fuzzy"], ["eval.aggregation=mean"],
        ["model.image_size=30"],
    ])
    def test_invalid(self, items):
        with pytest.raises((ValueError, TypeError)):
            load_config(overrides=items)


class TestTraining:
    def test_zero_steps_checkpoint_equals_init(self, tmp_path):
        cfg = tiny_cfg(tmp_path, "schedule.steps=0")
        init = state_of(H.build_model(cfg))
        result = H.train(cfg)
        assert result.log == []
        loaded = load_checkpoint(result.checkpoint).state_dict()
        assert loaded.keys() == init.keys()
        for k in init:
            assert torch.equal(loaded[k], init[k]), k

    def test_lr_zero_freezes_parameters(self, tmp_path):
        cfg = tiny_cfg(tmp_path, "schedule.steps=4", "optimizer.lr=0", "data.flip_p=0",
                       "schedule.batch_clips=4")
        init = H.build_model(cfg)
        result = H.train(cfg, save=False)
        for (name, p0), p1 in zip(init.named_parameters(), result.model.parameters()):
            assert torch.equal(p0, p1), name
        totals = [r["total"] for r in result.log]
        # every step sees the same clips (the whole dataset) without flips
        assert max(totals) - min(totals) < 1e-6 * abs(totals[0])
        assert all(r["update_norm"] == 0 for r in result.log)

    def test_backbone_untouched(self, tmp_path):
        result = H.train(tiny_cfg(tmp_path, "schedule.steps=3", "optimizer.lr=1e-2"), save=False)
        before, after = result.backbone_checksum
        assert before == after
        assert all(r["update_norm"] > 0 for r in result.log)

    def test_nan_aborts_with_step(self, tmp_path, monkeypatch):
        real = H.compute_losses
        calls = {"n": 0}

        def poisoned(pred, targets, cfg):
            calls["n"] += 1
            parts = real(pred, targets, cfg)
            if calls["n"] == 3:
                return H.L.total_loss(parts.sem, parts.edge, parts.mask * float("nan"),
                                      cfg.losses.weights, check_finite=False)
            return parts

        monkeypatch.setattr(H, "compute_losses", poisoned)
        with pytest.raises(H.TrainingDiverged) as info:
            H.train(tiny_cfg(tmp_path, "schedule.steps=5"), save=False)
        assert info.value.step == 2
        assert np.isnan(info.value.breakdown["mask"])

    def test_total_loss_rejects_nonfinite(self):
        z = torch.zeros(())
        with pytest.raises(ValueError, match="non-finite"):
            H.L.total_loss(z, torch.tensor(float("inf")), z)

    def test_missing_data_without_synthesis(self, tmp_path):
        cfg = tiny_cfg(tmp_path, "data.synthesize_if_missing=false")
        with pytest.raises(ValueError, match="no clips"):
            H.train(cfg)

    def test_log_and_outputs(self, tmp_path):
        cfg = tiny_cfg(tmp_path, "schedule.steps=2", "schedule.eval_every=2")
        result = H.train(cfg)
        logged = json.loads((tmp_path / "out/train_log.json").read_text())
        assert len(logged["steps"]) == 2 and len(logged["evals"]) == 1
        assert set(logged["steps"][0]) >= {"step", "sem", "edge", "mask", "total", "update_norm", "clips"}
        assert len(json.loads((tmp_path / "out/timing.json").read_text())["step_seconds"]) == 2
        assert read_manifest(result.checkpoint)["extra"]["run_config"]["schedule"]["steps"] == 2

    def test_soft_edge_target(self):
        m = np.zeros((12, 12), bool)
        m[2:10, 2:10] = True
        soft = H.edge_target(m, 3, "soft")
        hard = H.edge_target(m, 3, "hard")
        assert (soft[hard == 0] == 0).all() and (soft[hard == 1] > 0).all() and soft.max() <= 1


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        cfg = tiny_cfg(tmp_path)
        model = H.build_model(cfg)
        for m in model.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.running_mean.uniform_()
                m.num_batches_tracked.fill_(7)
        path = save_checkpoint(model, tmp_path / "m.ckpt", extra={"note": 1})
        loaded = load_checkpoint(path)
        for k, v in model.state_dict().items():
            assert torch.equal(loaded.state_dict()[k], v), k
        man = read_manifest(path)
        assert man["dtype"] == "f32" and man["order"] == "row-major" and man["extra"] == {"note": 1}
        trainable = {t["name"] for t in man["tensors"] if t["trainable"]}
        assert trainable and not any(n.startswith("encoder.") for n in trainable)
        assert backbone_checksum(loaded) == backbone_checksum(model)


class TestEvaluation:
    def test_predict_covers_every_frame(self, tmp_path):
        cfg = tiny_cfg(tmp_path, "data.synth_frames=7")
        index = H.ensure_dataset(cfg)
        probs, gts = H.predict_video(H.build_model(cfg), index.videos[0], cfg, H.make_provider(cfg))
        assert probs.shape == gts.shape == (7, 32, 32)
        assert ((probs >= 0) & (probs <= 1)).all()

    def test_short_video_single_window(self, tmp_path):
        cfg = tiny_cfg(tmp_path, "data.synth_frames=2")
        index = H.ensure_dataset(cfg)
        probs, _ = H.predict_video(H.build_model(cfg), index.videos[0], cfg, H.make_provider(cfg))
        assert probs.shape[0] == 2

    def test_distractor_rate_requires_annotations(self, tmp_path):
        cfg = tiny_cfg(tmp_path)
        index = H.ensure_dataset(cfg)
        for p in (tmp_path / "data/train/distractors").rglob("*.png"):
            p.unlink()
        with pytest.raises(ValueError):
            H.distractor_false_positive_rate(H.build_model(cfg), index, cfg)

    def test_preprocess_masks(self, tmp_path):
        cfg = tiny_cfg(tmp_path)
        index = H.ensure_dataset(cfg)
        n = H.preprocess_masks(index, tmp_path / "pre", kernel=3)
        assert n == index.n_frames == 8
        video = index.videos[0]
        soft = read_soft_mask(tmp_path / "pre" / video.video_id / "00000.soft.f32")
        edge = read_mask(tmp_path / "pre" / video.video_id / "00000.edge.png")
        gt = read_mask(video.masks[0])
        assert soft.shape == edge.shape == gt.shape
        assert (soft[~gt] == 0).all() and (edge <= gt).all()


class TestAblations:
    def test_temporal_report(self, tmp_path):
        rep = H.ablate_temporal(tiny_cfg(tmp_path, "schedule.steps=1"))
        assert set(rep["modes"]) == {"tokenized", "pixel", "none"}
        assert rep["pixel_to_tokenized_cost_ratio"] == pytest.approx(639.375)
        assert rep["modes"]["none"]["reference_grid"]["attention_cost"] == 0
        assert json.loads((tmp_path / "out/ablate_temporal.json").read_text())["seed"] == 0

    def test_loss_report(self, tmp_path):
        rep = H.ablate_losses(tiny_cfg(tmp_path, "schedule.steps=2", "optimizer.lr=1e-3"))
        rows = rep["rows"]
        assert list(rows) == ["mask", "mask+edge", "all"]
        assert rows["mask"]["final_losses"]["edge"] == 0 and rows["mask"]["final_losses"]["sem"] == 0
        assert rows["all"]["changed"] == {"edge_head": True, "aux_heads": True, "shadow_head": True}


class TestCli:
    def run(self, capsys, *argv):
        code = cli.main([str(a) for a in argv])
        out = capsys.readouterr()
        return code, out.out, out.err

    def test_help_lists_commands(self, capsys):
        with pytest.raises(SystemExit):
            cli.main(["--help"])
        text = capsys.readouterr().out
        for cmd in ("train", "eval", "ablate-temporal", "ablate-losses", "preprocess-masks", "synth-data"):
            assert cmd in text

    def test_end_to_end(self, tmp_path, capsys):
        data = tmp_path / "data"
        code, out, _ = self.run(capsys, "synth-data", "--out", data, "--videos", 2, "--frames", 4,
                                "--size", 32)
        assert code == 0 and json.loads(out)["frames"] == 8

        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"schedule": {"steps": 2}}))
        sets = [x for item in TINY + [f"paths.data={data}", f"paths.out={tmp_path / 'run'}"]
                for x in ("--set", item)]
        code, out, _ = self.run(capsys, "train", "--config", cfg_path, *sets)
        assert code == 0 and json.loads(out)["steps"] == 2
        ckpt = tmp_path / "run/checkpoint.ckpt"

        code, out, _ = self.run(capsys, "eval", "--ckpt", ckpt, "--data", data, "--out",
                                tmp_path / "ev/report.json", "--csv", tmp_path / "ev/frames.csv")
        assert code == 0
        report = json.loads((tmp_path / "ev/report.json").read_text())
        assert {"dataset", "frame_count", "mae", "f_beta", "iou", "ber", "s_ber", "n_ber",
                "per_frame"} <= set(report)
        assert report["frame_count"] == 8 == len(report["per_frame"])
        with open(tmp_path / "ev/frames.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8 and {"video", "frame", "iou"} <= set(rows[0])

        code, out, _ = self.run(capsys, "eval", "--ckpt", ckpt, "--data", data, "--out",
                                tmp_path / "ev/pv.json", "--set", "eval.aggregation=per_video")
        assert code == 0

        code, out, _ = self.run(capsys, "preprocess-masks", "--data", data, "--out", tmp_path / "pre")
        assert code == 0 and json.loads(out)["masks"] == 8

    def test_error_json(self, tmp_path, capsys):
        code, out, err = self.run(capsys, "eval", "--ckpt", tmp_path / "nope.ckpt", "--data",
                                  tmp_path, "--out", tmp_path / "r.json")
        assert code == 1 and out == ""
        payload = json.loads(err)
        assert payload["command"] == "eval" and payload["error"] == "FileNotFoundError"

    def test_divergence_json(self, tmp_path, capsys, monkeypatch):
        def boom(cfg, *a, **k):
            raise H.TrainingDiverged(4, {"sem": 0.1, "edge": float("nan"), "mask": 0.2, "total": float("nan")})

        monkeypatch.setattr(H, "train", boom)
        code, _, err = self.run(capsys, "train", "--set", "schedule.steps=1")
        payload = json.loads(err)
        assert code == 1 and payload["step"] == 4 and payload["error"] == "TrainingDiverged"

    def test_bad_override_json(self, capsys):
        code, _, err = self.run(capsys, "train", "--set", "optimizer.lrate=3")
        assert code == 1 and "lrate" in json.loads(err)["message"]
