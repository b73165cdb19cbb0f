import json

import numpy as np
import pytest

from avt.harness.checkpoint import load_checkpoint, save_checkpoint
from avt.harness.config import ABLATIONS, VARIANTS, ExperimentConfig
from avt.harness.data import Dataset, gen_xor_dataset, split
from avt.harness.model import Batch, forward, init_model, predict, predict_avg
from avt.harness.optim import AdamW
from avt.harness.train import NonFiniteLoss, load_data, run_experiment, sample_batch, train_step, train_variant
from avt.numerics import ConfigError


class TestXorData:
    def test_noise_free_labels_follow_cues(self):
        d = gen_xor_dataset(200, (16, 8), (2, 8, 8, 1), 0.0, 0)
        assert np.array_equal(d.labels, d.audio_cue ^ d.video_cue)

    def test_cues_recoverable_without_noise(self):
        d = gen_xor_dataset(200, (16, 8), (2, 8, 8, 1), 0.0, 1)
        low = d.audio[:, :, :4].sum(axis=(1, 2)) < d.audio[:, :, 4:].sum(axis=(1, 2))
        assert np.array_equal(low.astype(int), d.audio_cue) or np.array_equal((~low).astype(int), d.audio_cue)
        tl = d.video[:, :, :4, :4].sum(axis=(1, 2, 3, 4)) > d.video[:, :, 4:, 4:].sum(axis=(1, 2, 3, 4))
        assert np.array_equal(tl.astype(int), d.video_cue) or np.array_equal((~tl).astype(int), d.video_cue)

    def test_label_uniform_given_either_cue(self):
        d = gen_xor_dataset(4000, (16, 8), (2, 8, 8, 1), 0.3, 2)
        for cue in (d.audio_cue, d.video_cue):
            for v in (0, 1):
                assert abs(d.labels[cue == v].mean() - 0.5) < 0.05

    def test_same_seed_same_bytes(self):
        a = gen_xor_dataset(30, (16, 8), (2, 8, 8, 1), 0.3, 5)
        b = gen_xor_dataset(30, (16, 8), (2, 8, 8, 1), 0.3, 5)
        assert a.audio.tobytes() == b.audio.tobytes() and a.video.tobytes() == b.video.tobytes()

    def test_sample_view(self):
        s = gen_xor_dataset(3, (16, 8), (2, 8, 8, 1), 0.3, 0)[1]
        assert s.label == s.audio_cue ^ s.video_cue and s.audio.values.shape == (16, 8)

    def test_split_is_80_20_and_disjoint(self):
        d = gen_xor_dataset(100, (16, 8), (2, 8, 8, 1), 0.3, 0)
        tr, va = split(d, 0.2, 0)
        assert (len(tr), len(va)) == (80, 20)
        rows = {r.tobytes() for r in tr.audio}
        assert not any(r.tobytes() in rows for r in va.audio)

    def test_save_load(self, tmp_path):
        d = gen_xor_dataset(5, (16, 8), (2, 8, 8, 1), 0.3, 0)
        d.save(tmp_path / "d.npz")
        e = Dataset.load(tmp_path / "d.npz")
        assert e.audio.tobytes() == d.audio.tobytes() and np.array_equal(e.labels, d.labels)


class TestConfig:
    def test_defaults(self):
        c = ExperimentConfig()
        assert (c.lambda1, c.lambda2, c.lambda3, c.tau) == (0.5, 0.1, 0.01, 0.07)
        assert (c.K, c.L, c.num_segments, c.mask_ratio, c.learning_rate, c.proj_dim) == (4, 4, 50, 0.04, 1e-4, 256)
        assert (c.beta1, c.beta2, c.adam_eps, c.weight_decay) == (0.9, 0.999, 1e-8, 0.01)

    def test_unknown_key_is_named(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"dim": 8, "heads": 2, "bogus_key": 1}))
        with pytest.raises(ConfigError, match="bogus_key"):
            ExperimentConfig.load(p)

    def test_env_seed_override(self, tmp_path, monkeypatch):
        p = tmp_path / "c.json"
        p.write_text("{}")
        monkeypatch.setenv("AVT_SEED", "17")
        assert ExperimentConfig.load(p).seed == 17

    def test_round_trip(self, tmp_path, tiny_cfg):
        cfg = tiny_cfg(seed=3)
        cfg.dump(tmp_path / "c.json")
        assert ExperimentConfig.load(tmp_path / "c.json") == cfg

    @pytest.mark.parametrize("bad", [{"dim": 10, "heads": 4}, {"tau": 0}, {"batch_size": 1}, {"ablations": ["nope"]}])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig(**bad)

    def test_ablation_rows(self):
        assert ABLATIONS == ("audio_only", "video_only", "avg", "avbottleneck", "+avc", "+avm", "+mav", "+masegmv")
        full = VARIANTS["+masegmv"]
        assert full.use_avc and full.use_avm and full.use_recon and full.mask_kind == "segment"
        assert VARIANTS["+mav"].mask_kind == "random"


def _batch(cfg, seed=0):
    tr, _ = load_data(cfg)
    return sample_batch(tr, None, cfg, seed + 1)


class TestTrainStep:
    def test_records_every_term(self, tiny_cfg):
        cfg = tiny_cfg()
        params = init_model(cfg)
        opt = AdamW(params, cfg.learning_rate)
        rec = train_step(_batch(cfg), params, opt, cfg, VARIANTS["+masegmv"], 1)
        assert set(rec) == {"step", "L_cls_av", "L_avc", "L_avm", "L_masegmv", "L_total"}
        want = rec["L_cls_av"] + 0.5 * rec["L_avc"] + 0.1 * rec["L_avm"] + 0.01 * rec["L_masegmv"]
        assert rec["L_total"] == pytest.approx(want, rel=1e-12)

    def test_zero_weights_reduce_to_supervised(self, tiny_cfg):
        cfg = tiny_cfg(lambda1=0.0, lambda2=0.0, lambda3=0.0)
        batch = _batch(cfg)
        p1, p2 = init_model(cfg), init_model(cfg)
        r1 = train_step(batch, p1, AdamW(p1, cfg.learning_rate), cfg, VARIANTS["+masegmv"], 1)
        r2 = train_step(batch, p2, AdamW(p2, cfg.learning_rate), cfg, VARIANTS["avbottleneck"], 1)
        assert r1["L_avc"] == r1["L_avm"] == r1["L_masegmv"] == 0.0
        assert r1["L_total"] == r1["L_cls_av"] == r2["L_cls_av"]
        assert all(p1[k].data.tobytes() == p2[k].data.tobytes() for k in p1)

    def test_rejects_single_sample(self, tiny_cfg):
        cfg = tiny_cfg()
        b = _batch(cfg)
        params = init_model(cfg)
        with pytest.raises(ValueError):
            train_step(Batch(b.video[:1], b.audio[:1], b.labels[:1]), params, AdamW(params), cfg, VARIANTS["avbottleneck"], 1)

    def test_nonfinite_aborts_with_dump(self, tiny_cfg, tmp_path):
        cfg = tiny_cfg()
        params = init_model(cfg)
        params["heads.cls_av.w"].data[:] = np.nan
        with pytest.raises(NonFiniteLoss):
            train_step(_batch(cfg), params, AdamW(params), cfg, VARIANTS["avbottleneck"], 4, tmp_path)
        dump = json.loads((tmp_path / "nonfinite_step4.json").read_text())
        assert "heads.cls_av.w" in dump["nonfinite_params"]

    def test_loss_trends_down(self, tiny_cfg):
        cfg = tiny_cfg(n_samples=200, steps=200, eval_every=1000)
        tr, va = load_data(cfg)
        hist = train_variant(cfg, VARIANTS["+masegmv"], tr, va).history
        losses = np.array([h["L_total"] for h in hist])
        ma = np.convolve(losses, np.ones(20) / 20, mode="valid")
        assert ma[-1] < ma[0]
        assert np.polyfit(np.arange(ma.size), ma, 1)[0] < 0

    def test_same_seed_same_trajectory(self, tiny_cfg):
        cfg = tiny_cfg()
        tr, va = load_data(cfg)
        a = train_variant(cfg, VARIANTS["+mav"], tr, va).history
        b = train_variant(cfg, VARIANTS["+mav"], tr, va).history
        assert json.dumps(a) == json.dumps(b)


class TestPredict:
    def test_probabilities_sum_to_one(self, tiny_cfg):
        cfg = tiny_cfg()
        b = _batch(cfg)
        for name in ("audio_only", "video_only", "+masegmv"):
            p = predict(init_model(cfg), cfg, VARIANTS[name], b.video, b.audio)
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_untrained_near_uniform(self, tiny_cfg):
        b = _batch(tiny_cfg())
        means = [predict(init_model(tiny_cfg(seed=s, init_std=0.02)), tiny_cfg(), VARIANTS["avbottleneck"], b.video, b.audio).mean(axis=0)
                 for s in range(10)]
        np.testing.assert_allclose(np.mean(means, axis=0), 0.5, atol=0.05)

    def test_independent_of_mask_ratio(self, tiny_cfg):
        b = _batch(tiny_cfg())
        params = init_model(tiny_cfg())
        outs = [predict(params, tiny_cfg(mask_ratio=r), VARIANTS["+masegmv"], b.video, b.audio) for r in (0.0, 0.04, 0.5, 1.0)]
        assert all(o.tobytes() == outs[0].tobytes() for o in outs)

    def test_chunking_does_not_change_output(self, tiny_cfg):
        cfg = tiny_cfg()
        b = _batch(cfg)
        params = init_model(cfg)
        whole = predict(params, cfg, VARIANTS["+avc"], b.video, b.audio)
        parts = predict(params, cfg, VARIANTS["+avc"], b.video, b.audio, chunk=3)
        np.testing.assert_allclose(parts, whole, atol=1e-14)

    def test_avg_is_elementwise_mean(self):
        a, v = np.array([[0.2, 0.8]]), np.array([[0.6, 0.4]])
        np.testing.assert_array_equal(predict_avg(a, v), (a + v) / 2)


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tiny_cfg, tmp_path):
        cfg = tiny_cfg()
        params = init_model(cfg)
        opt = AdamW(params, cfg.learning_rate)
        train_step(_batch(cfg), params, opt, cfg, VARIANTS["+masegmv"], 1)
        save_checkpoint(tmp_path / "c.json", params, {"step": 1}, opt.state_dict())
        loaded, meta, state = load_checkpoint(tmp_path / "c.json")
        assert meta == {"step": 1} and state["t"] == 1
        assert all(loaded[k].data.tobytes() == params[k].data.tobytes() for k in params)
        b = _batch(cfg, 3)
        p1 = predict(params, cfg, VARIANTS["+masegmv"], b.video, b.audio)
        p2 = predict(loaded, cfg, VARIANTS["+masegmv"], b.video, b.audio)
        assert p1.tobytes() == p2.tobytes()

    def test_keys_are_namespaced(self, tiny_cfg):
        prefixes = {k.split(".")[0] for k in init_model(tiny_cfg())}
        assert prefixes == {"audio_encoder", "video_encoder", "fusion", "heads", "proj", "decoder"}

    def test_rejects_foreign_file(self, tmp_path):
        (tmp_path / "x.json").write_text('{"format": "other"}')
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "x.json")


class TestRunExperiment:
    def test_layout_and_summary(self, tiny_cfg, tmp_path):
        cfg = tiny_cfg(ablations=["audio_only", "video_only", "avg", "+masegmv"])
        summary = run_experiment(cfg, tmp_path)
        assert set(summary["accuracy"]) == {"audio_only", "video_only", "avg", "+masegmv"}
        for d in ("audio_only", "video_only", "plus_masegmv"):
            lines = (tmp_path / d / "metrics.jsonl").read_text().splitlines()
            assert len(lines) == cfg.steps
            assert (tmp_path / d / "checkpoint.json").exists()
        evals = [json.loads(ln) for ln in (tmp_path / "plus_masegmv" / "metrics.jsonl").read_text().splitlines()]
        assert [e["step"] for e in evals if "val_acc" in e] == [3, 6]
        assert json.loads((tmp_path / "summary.json").read_text()) == summary

    def test_avg_row_averages_unimodal_probabilities(self, tiny_cfg, tmp_path):
        cfg = tiny_cfg(ablations=["avg"])
        summary = run_experiment(cfg, tmp_path)
        _, va = load_data(cfg)
        probs = []
        for name in ("audio_only", "video_only"):
            params, _, _ = load_checkpoint(tmp_path / name / "checkpoint.json")
            probs.append(predict(params, cfg, VARIANTS[name], va.video, va.audio))
        acc = float(np.mean(np.argmax(predict_avg(*probs), axis=1) == va.labels))
        assert summary["accuracy"]["avg"]["val"] == acc

    def test_rerun_is_byte_identical(self, tiny_cfg, tmp_path):
        cfg = tiny_cfg(ablations=["+masegmv"])
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        for f in ("plus_masegmv/metrics.jsonl", "plus_masegmv/checkpoint.json", "summary.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_resume_matches_uninterrupted(self, tiny_cfg, tmp_path, monkeypatch):
        cfg = tiny_cfg(ablations=["+mav"], steps=6, checkpoint_every=2)
        run_experiment(cfg, tmp_path / "full")

        import avt.harness.train as train_mod
        real = train_mod.train_step

        def crash_at_5(batch, params, opt, cfg, variant, step, out_dir=None):
            if step == 5:
                raise KeyboardInterrupt
            return real(batch, params, opt, cfg, variant, step, out_dir)

        monkeypatch.setattr(train_mod, "train_step", crash_at_5)
        with pytest.raises(KeyboardInterrupt):
            run_experiment(cfg, tmp_path / "resumed")
        monkeypatch.setattr(train_mod, "train_step", real)
        assert json.loads((tmp_path / "resumed/plus_mav/checkpoint.json").read_text())["meta"]["step"] == 4

        run_experiment(cfg, tmp_path / "resumed")
        for f in ("plus_mav/metrics.jsonl", "plus_mav/checkpoint.json", "summary.json"):
            assert (tmp_path / "full" / f).read_bytes() == (tmp_path / "resumed" / f).read_bytes()

    def test_no_resume_starts_over(self, tiny_cfg, tmp_path):
        cfg = tiny_cfg(ablations=["avbottleneck"])
        run_experiment(cfg, tmp_path)
        before = (tmp_path / "avbottleneck" / "metrics.jsonl").read_bytes()
        run_experiment(cfg, tmp_path, resume=False)
        assert (tmp_path / "avbottleneck" / "metrics.jsonl").read_bytes() == before


def test_forward_same_rng_same_loss(tiny_cfg):
    cfg = tiny_cfg()
    params = init_model(cfg)
    b = _batch(cfg)
    a = forward(params, cfg, VARIANTS["+masegmv"], b, np.random.default_rng(1)).total.item()
    c = forward(params, cfg, VARIANTS["+masegmv"], b, np.random.default_rng(1)).total.item()
    assert a == c
