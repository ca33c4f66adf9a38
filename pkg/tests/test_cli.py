"""Command-line tests: subcommands, file outputs, and exit codes."""

import base64
import json

import numpy as np
import pytest

from sketchgen.checkpoint import load_bundle
from sketchgen.cli import main
from sketchgen.fixtures import synth_dataset
from sketchgen.sketch import save_sketches

PL_CONFIG = {
    "stage": "PL", "steps": 6, "batch_size": 4, "lr": 1e-3, "seed": 0,
    "dataset_size": 8,
    "model": {"n_components": 3, "z_dim": 8, "n_decoder_layers": 1,
              "max_condition_points": 24,
              "gat": {"d_model": 32, "n_heads": 2, "n_blocks": 1,
                      "ffn_mult": 2}},
}
PS_CONFIG = {
    "stage": "PS", "steps": 2, "batch_size": 2, "seed": 0,
    "dataset_size": 8,
    "model": {"channels": 8, "n_patches": 2, "max_condition_points": 24,
              "gat": {"d_model": 32, "n_heads": 2, "n_blocks": 1,
                      "ffn_mult": 2}},
}


def write_json(path, payload) -> str:
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


@pytest.fixture()
def strokes_file(tmp_path):
    sketch = synth_dataset(1, seed=0)[0][0]
    path = tmp_path / "in.ndjson"
    save_sketches(path, [sketch])
    return str(path)


class TestTrain:
    def test_pl_stage_writes_a_loadable_checkpoint(self, tmp_path):
        cfg = write_json(tmp_path / "pl.json", PL_CONFIG)
        out = tmp_path / "pl.ckpt"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        bundle = load_bundle(out)
        assert bundle.locator is not None
        assert bool(bundle.locator.fitted.item())

    def test_ps_stage_needs_a_locator(self, tmp_path):
        cfg = write_json(tmp_path / "ps.json", PS_CONFIG)
        assert main(["train", "--config", cfg,
                     "--out", str(tmp_path / "x.ckpt")]) == 2

    def test_full_pipeline_train(self, tmp_path):
        pl_cfg = write_json(tmp_path / "pl.json", PL_CONFIG)
        ps_cfg = write_json(tmp_path / "ps.json", PS_CONFIG)
        pl_out, ps_out = tmp_path / "pl.ckpt", tmp_path / "creature.ckpt"
        assert main(["train", "--config", pl_cfg, "--out", str(pl_out)]) == 0
        assert main(["train", "--config", ps_cfg, "--locator", str(pl_out),
                     "--out", str(ps_out)]) == 0
        bundle = load_bundle(ps_out)
        assert bundle.sketcher is not None and bundle.locator is not None

    def test_unknown_config_key_is_validation_error(self, tmp_path):
        cfg = write_json(tmp_path / "bad.json",
                         dict(PL_CONFIG, warp_factor=9))
        assert main(["train", "--config", cfg]) == 2

    def test_missing_config_file_is_validation_error(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.json")]) == 2

    def test_stage_flag_overrides_config(self, tmp_path):
        cfg = write_json(tmp_path / "pl.json", dict(PL_CONFIG, stage="PS"))
        out = tmp_path / "pl.ckpt"
        assert main(["train", "--stage", "pl", "--config", cfg,
                     "--out", str(out)]) == 0
        assert load_bundle(out).locator is not None

    def test_data_file_feeds_training(self, tmp_path):
        data = tmp_path / "data.ndjson"
        save_sketches(data, [sk for sk, _, _ in synth_dataset(6, seed=1)])
        cfg = write_json(tmp_path / "pl.json",
                         dict(PL_CONFIG, steps=2, batch_size=2))
        assert main(["train", "--config", cfg, "--data", str(data),
                     "--out", str(tmp_path / "pl.ckpt")]) == 0

    def test_bad_data_file_is_validation_error(self, tmp_path):
        bad = tmp_path / "bad.ndjson"
        bad.write_text("definitely not json\n", encoding="utf-8")
        cfg = write_json(tmp_path / "pl.json", PL_CONFIG)
        assert main(["train", "--config", cfg, "--data", str(bad)]) == 2


class TestGenerate:
    def test_strokes_mode_writes_n_file_pairs(self, ckpt_dir, strokes_file,
                                              tmp_path):
        out = tmp_path / "out"
        code = main(["generate", "--mode", "strokes",
                     "--ckpt", str(ckpt_dir / "creature.ckpt"),
                     "--strokes", strokes_file, "--seed", "7",
                     "--n", "3", "--out", str(out)])
        assert code == 0
        for i in range(3):
            assert (out / f"sample_{i}.png").exists()
            layout = json.loads(
                (out / f"sample_{i}.layout.json").read_text())
            assert len(layout["boxes"]) == 6

    def test_single_png_target(self, ckpt_dir, strokes_file, tmp_path):
        target = tmp_path / "one.png"
        code = main(["generate", "--ckpt", str(ckpt_dir / "creature.ckpt"),
                     "--strokes", strokes_file, "--out", str(target)])
        assert code == 0
        assert target.exists()
        assert (tmp_path / "one.layout.json").exists()

    def test_outputs_deterministic_in_seed(self, ckpt_dir, strokes_file,
                                           tmp_path):
        args = ["generate", "--ckpt", str(ckpt_dir / "creature.ckpt"),
                "--strokes", strokes_file, "--seed", "5"]
        assert main(args + ["--out", str(tmp_path / "a.png")]) == 0
        assert main(args + ["--out", str(tmp_path / "b.png")]) == 0
        assert (tmp_path / "a.png").read_bytes() \
            == (tmp_path / "b.png").read_bytes()

    def test_text_mode(self, ckpt_dir, tmp_path):
        code = main(["generate", "--mode", "text",
                     "--ckpt", str(ckpt_dir / "creature.ckpt"),
                     "--text", "a bird with a long beak",
                     "--out", str(tmp_path / "bird.png")])
        assert code == 0
        assert (tmp_path / "bird.png").exists()

    def test_complete_mode(self, ckpt_dir, strokes_file, tmp_path):
        code = main(["generate", "--mode", "complete",
                     "--ckpt", str(ckpt_dir / "creature.ckpt"),
                     "--strokes", strokes_file,
                     "--out", str(tmp_path / "done.png")])
        assert code == 0

    def test_house_mode_writes_svg_too(self, ckpt_dir, tmp_path):
        diagram = write_json(tmp_path / "d.json",
                             {"rooms": [0, 1, 2], "edges": [[0, 1], [1, 2]]})
        out = tmp_path / "house"
        code = main(["generate", "--mode", "house",
                     "--ckpt", str(ckpt_dir / "house.ckpt"),
                     "--diagram", diagram, "--n", "2", "--out", str(out)])
        assert code == 0
        for i in range(2):
            assert (out / f"sample_{i}.png").exists()
            assert (out / f"sample_{i}.svg").exists()

    def test_checkpoint_dir_and_env_var(self, ckpt_dir, strokes_file,
                                        tmp_path, monkeypatch):
        monkeypatch.setenv("DOODLE_CKPT_DIR", str(ckpt_dir))
        code = main(["generate", "--strokes", strokes_file,
                     "--out", str(tmp_path / "env.png")])
        assert code == 0

    def test_missing_checkpoint_is_exit_3(self, strokes_file, tmp_path,
                                          monkeypatch):
        monkeypatch.delenv("DOODLE_CKPT_DIR", raising=False)
        assert main(["generate", "--ckpt", str(tmp_path / "none.ckpt"),
                     "--strokes", strokes_file,
                     "--out", str(tmp_path / "x")]) == 3

    def test_invalid_strokes_file_is_exit_2(self, ckpt_dir, tmp_path):
        bad = tmp_path / "bad.ndjson"
        bad.write_text('{"strokes": [[[2.5, 0.1], [0.3, 0.4]]]}\n',
                       encoding="utf-8")
        assert main(["generate", "--ckpt", str(ckpt_dir / "creature.ckpt"),
                     "--strokes", str(bad),
                     "--out", str(tmp_path / "x")]) == 2

    def test_mode_without_model_is_exit_3(self, ckpt_dir, tmp_path):
        diagram = write_json(tmp_path / "d.json", {"rooms": [0]})
        assert main(["generate", "--mode", "house",
                     "--ckpt", str(ckpt_dir / "creature.ckpt"),
                     "--diagram", diagram,
                     "--out", str(tmp_path / "x")]) == 3

    def test_missing_payload_flag_is_exit_2(self, ckpt_dir, tmp_path):
        assert main(["generate", "--mode", "text",
                     "--ckpt", str(ckpt_dir / "creature.ckpt"),
                     "--out", str(tmp_path / "x")]) == 2

    def test_png_matches_service_payload(self, ckpt_dir, strokes_file,
                                         tmp_path):
        from fastapi.testclient import TestClient

        from sketchgen.service import create_app
        from sketchgen.sketch import load_sketches, sketch_to_record

        target = tmp_path / "cli.png"
        assert main(["generate", "--ckpt", str(ckpt_dir / "creature.ckpt"),
                     "--strokes", strokes_file, "--seed", "21",
                     "--out", str(target)]) == 0
        rec = sketch_to_record(load_sketches(strokes_file)[0])
        client = TestClient(create_app(ckpt_dir))
        r = client.post("/v1/generate",
                        json={"mode": "strokes",
                              "strokes": {"strokes": rec["strokes"],
                                          "labels": rec["labels"]},
                              "seed": 21})
        served = base64.b64decode(r.json()["samples"][0]["image_png"])
        assert target.read_bytes() == served


class TestEvaluate:
    def test_report_schema(self, ckpt_dir, tmp_path):
        out = tmp_path / "report.json"
        code = main(["evaluate", "--ckpt", str(ckpt_dir / "creature.ckpt"),
                     "--n", "8", "--out", str(out)])
        assert code == 0
        report = json.loads(out.read_text())
        assert set(report) == {"fid", "gd", "cs", "sds", "sample_count"}
        assert report["sample_count"] == 8
        assert report["fid"] >= 0.0 and report["gd"] >= 0.0
        assert 0.0 <= report["cs"] <= 1.0 and report["sds"] >= 0.0

    def test_missing_checkpoint_is_exit_3(self, tmp_path):
        assert main(["evaluate", "--ckpt", str(tmp_path / "no.ckpt"),
                     "--n", "4"]) == 3

    def test_layout_only_checkpoint_is_exit_3(self, tmp_path):
        cfg = write_json(tmp_path / "pl.json", PL_CONFIG)
        out = tmp_path / "pl.ckpt"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        assert main(["evaluate", "--ckpt", str(out), "--n", "4"]) == 3


class TestParser:
    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for name in ("train", "evaluate", "generate", "serve"):
            assert name in text
