"""CLI surface: help, exit codes, and end-to-end subcommand plumbing."""

import json

import numpy as np
import pytest

from alfa.cli import main

SUBCOMMANDS = ("prompts", "adapt", "score", "bank", "eval", "descriptors", "synth")


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx")
    rc = main(["synth", "--out", str(out), "--seed", "3", "--grid", "6,6",
               "--n-normal", "4", "--n-abnormal", "4"])
    assert rc == 0
    return out


def test_help_lists_subcommands(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for sub in ("prompts", "adapt", "score", "bank", "eval", "descriptors"):
        assert sub in out


def test_missing_required_flag_is_usage_error(capsys):
    rc = main(["score"])
    assert rc == 1
    assert "--image-bundle" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error():
    assert main(["frobnicate"]) == 1


def test_data_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.alfb"
    bad.write_bytes(b"XXXX" + b"\0" * 32)
    rc = main(["adapt", "--image-bundle", str(bad), "--prompt-bundle", str(bad),
               "--out", str(tmp_path / "o.json")])
    assert rc == 2
    assert "error: data:" in capsys.readouterr().err


def test_prompts_template_only(tmp_path):
    out = tmp_path / "prompts.json"
    assert main(["prompts", "--class", "bottle", "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["class"] == "bottle"
    assert len(payload["prompts"]) == 288  # 144 per polarity, template-only


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["synth", "--out", str(d), "--seed", "11", "--grid", "4,4",
                     "--n-normal", "2", "--n-abnormal", "2"]) == 0
    for name in sorted(p.name for p in (a / "images").iterdir()):
        assert (a / "images" / name).read_bytes() == (b / "images" / name).read_bytes()
    assert (a / "prompts.alfb").read_bytes() == (b / "prompts.alfb").read_bytes()


def test_adapt_writes_diagnostics(fixture_dir, tmp_path):
    img = sorted((fixture_dir / "images").iterdir())[0]
    out = tmp_path / "adapted.json"
    rc = main(["adapt", "--image-bundle", str(img),
               "--prompt-bundle", str(fixture_dir / "prompts.alfb"),
               "--out", str(out)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert {"normal_interval", "abnormal_interval", "prompts"} <= payload.keys()
    assert any(p["kept"] for p in payload["prompts"])


def test_score_pipeline_deterministic(fixture_dir, tmp_path):
    img = sorted((fixture_dir / "images").iterdir())[0]
    outs = []
    for name in ("r1.json", "r2.json"):
        out = tmp_path / name
        mp = tmp_path / (name + ".map.alfb")
        rc = main(["score", "--image-bundle", str(img),
                   "--prompt-bundle", str(fixture_dir / "prompts.alfb"),
                   "--tau", "0.07", "--out", str(out), "--map-out", str(mp)])
        assert rc == 0
        outs.append((out.read_bytes(), mp.read_bytes()))
    assert outs[0] == outs[1]
    payload = json.loads(outs[0][0])
    assert 0.0 <= payload["score"] <= 1.0
    assert payload["kept"]["normal"] >= 1
    assert payload["kept"]["abnormal"] >= 1


def test_score_no_adapt_keeps_full_pool(fixture_dir, tmp_path):
    img = sorted((fixture_dir / "images").iterdir())[0]
    out = tmp_path / "r.json"
    rc = main(["score", "--image-bundle", str(img),
               "--prompt-bundle", str(fixture_dir / "prompts.alfb"),
               "--no-adapt", "--out", str(out)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["kept"] == {"normal": 24, "abnormal": 24}


def test_bank_build_and_refined_score(fixture_dir, tmp_path):
    bank = tmp_path / "bank.alfb"
    rc = main(["bank", "build", "--bundles", str(fixture_dir / "images"),
               "--out", str(bank)])
    assert rc == 0
    img = sorted((fixture_dir / "images").iterdir())[0]
    out = tmp_path / "r.json"
    rc = main(["score", "--image-bundle", str(img),
               "--prompt-bundle", str(fixture_dir / "prompts.alfb"),
               "--bank", str(bank), "--out", str(out)])
    assert rc == 0
    assert 0.0 <= json.loads(out.read_text())["score"] <= 1.0


def test_eval_report(fixture_dir, tmp_path):
    results = tmp_path / "results"
    results.mkdir()
    for img in sorted((fixture_dir / "images").iterdir()):
        stem = img.name[:-len(".alfb")]
        rc = main(["score", "--image-bundle", str(img),
                   "--prompt-bundle", str(fixture_dir / "prompts.alfb"),
                   "--tau", "0.07",
                   "--out", str(results / f"{stem}.result.json"),
                   "--map-out", str(results / f"{stem}.map.alfb")])
        assert rc == 0
    report = tmp_path / "report.json"
    assert main(["eval", "--results", str(results), "--out", str(report)]) == 0
    payload = json.loads(report.read_text())
    row = payload["classes"]["widget"]
    assert 0.0 <= row["image"]["auroc"] <= 1.0
    assert 0.0 <= row["pixel"]["pro"] <= 1.0
    assert payload["macro"]["image"]["auroc"] == row["image"]["auroc"]


def test_eval_parallel_matches_serial(fixture_dir, tmp_path):
    results = tmp_path / "results"
    results.mkdir()
    for img in sorted((fixture_dir / "images").iterdir())[:4]:
        stem = img.name[:-len(".alfb")]
        main(["score", "--image-bundle", str(img),
              "--prompt-bundle", str(fixture_dir / "prompts.alfb"),
              "--out", str(results / f"{stem}.result.json"),
              "--map-out", str(results / f"{stem}.map.alfb")])
    serial, parallel = tmp_path / "s.json", tmp_path / "p.json"
    assert main(["eval", "--results", str(results), "--out", str(serial)]) == 0
    assert main(["eval", "--results", str(results), "--out", str(parallel),
                 "--jobs", "4"]) == 0
    assert serial.read_bytes() == parallel.read_bytes()


def test_descriptors_ranking(fixture_dir, tmp_path):
    img = sorted((fixture_dir / "images").iterdir())[0]
    out = tmp_path / "desc.json"
    rc = main(["descriptors", "--image-bundle", str(img),
               "--desc-bundle", str(fixture_dir / "prompts.alfb"),
               "--k", "3", "--out", str(out)])
    assert rc == 0
    top = json.loads(out.read_text())["top"]
    assert len(top) == 3
    sims = [t["similarity"] for t in top]
    assert sims == sorted(sims, reverse=True)


def test_config_file_applies(fixture_dir, tmp_path):
    cfg = tmp_path / "engine.cfg"
    cfg.write_text("tau = 0.07\nsigma = 1.0  # patch units\nscales = 2,3\n")
    img = sorted((fixture_dir / "images").iterdir())[0]
    out_cfg, out_flags = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["score", "--image-bundle", str(img),
                 "--prompt-bundle", str(fixture_dir / "prompts.alfb"),
                 "--config", str(cfg), "--out", str(out_cfg)]) == 0
    assert main(["score", "--image-bundle", str(img),
                 "--prompt-bundle", str(fixture_dir / "prompts.alfb"),
                 "--tau", "0.07", "--sigma", "1.0", "--scales", "2,3",
                 "--out", str(out_flags)]) == 0
    assert out_cfg.read_bytes() == out_flags.read_bytes()


def test_subcommands_do_not_mutate_inputs(fixture_dir, tmp_path):
    img = sorted((fixture_dir / "images").iterdir())[0]
    before = img.read_bytes()
    prompts_before = (fixture_dir / "prompts.alfb").read_bytes()
    main(["score", "--image-bundle", str(img),
          "--prompt-bundle", str(fixture_dir / "prompts.alfb"),
          "--out", str(tmp_path / "r.json")])
    assert img.read_bytes() == before
    assert (fixture_dir / "prompts.alfb").read_bytes() == prompts_before
