"""Command-line interface: prompts, adapt, score, bank, eval, descriptors."""

from __future__ import annotations

import glob
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import click
import numpy as np

from . import bundle as bundlefmt
from .aligner import AlignerError
from .config import ConfigError, load_config, parse_scales
from .memory import MemoryBank, MemoryError_, build_bank
from .metrics import MetricError, PixelEval, auroc, aupr, f1_max, pixel_metrics
from .pipeline import (
    PipelineError,
    load_image_view,
    load_prompt_pool,
    result_json,
    score_image,
    write_map_bundle,
)
from .prompts import (
    PromptError,
    TemplateGrammar,
    build_vanilla_pool,
)
from .rtp import RtpConfig, RtpError, adapt_prompts
from .scoring import ScoringError, rank_descriptors
from .synth import SynthConfig, generate_fixture

DATA_ERRORS = (
    bundlefmt.BundleError, PromptError, RtpError, AlignerError, ScoringError,
    MemoryError_, MetricError, PipelineError, ConfigError,
    FileNotFoundError, KeyError, ValueError, OSError,
)


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


@click.group(name="alfa")
def cli():
    """Language-guided anomaly detection engine."""


@cli.command("prompts")
@click.option("--class", "class_name", required=True, help="Object class name.")
@click.option("--grammar", "grammar_path", default=None, type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--llm-endpoint", default=None)
@click.option("--llm-count", default=None, type=int)
@click.option("--cache", "cache_path", default=None, type=click.Path())
@click.option("--out", required=True, type=click.Path())
def prompts_cmd(class_name, grammar_path, config_path, llm_endpoint, llm_count,
                cache_path, out):
    """Generate the vanilla prompt pool as PromptSet JSON."""
    cfg = load_config(config_path)
    grammar = (TemplateGrammar.from_file(grammar_path) if grammar_path
               else TemplateGrammar())
    llm_cfg = cfg.llm()
    if llm_endpoint is not None:
        llm_cfg.endpoint = llm_endpoint
    if llm_count is not None:
        llm_cfg.count = llm_count
    if cache_path is not None:
        llm_cfg.cache_path = cache_path
    if not llm_cfg.endpoint and not llm_cfg.cache_path:
        llm_cfg.count = 0  # template-only pool without an LLM source
    pool = build_vanilla_pool(grammar, llm_cfg, class_name)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(pool.to_json())
        fh.write("\n")
    click.echo(f"wrote {len(pool.prompts)} prompts to {out}")


@cli.command("adapt")
@click.option("--image-bundle", required=True, type=click.Path(exists=True))
@click.option("--prompt-bundle", required=True, type=click.Path(exists=True))
@click.option("--k", default=1.0, show_default=True)
@click.option("--epsilon", default=1e-6, show_default=True)
@click.option("--out", required=True, type=click.Path())
def adapt_cmd(image_bundle, prompt_bundle, k, epsilon, out):
    """Filter the prompt pool for one image; write kept prompts and scores."""
    view = load_image_view(image_bundle)
    pool = load_prompt_pool(prompt_bundle)
    res = adapt_prompts(view.cls_embedding, pool.normal_embeddings,
                        pool.abnormal_embeddings, RtpConfig(k=k, epsilon=epsilon))
    texts = {"normal": pool.normal_texts, "abnormal": pool.abnormal_texts}
    payload = {
        "image": view.meta.get("source_path", image_bundle),
        "normal_interval": list(res.normal_interval),
        "abnormal_interval": list(res.abnormal_interval),
        "prompts": [
            {"text": texts[d.polarity][d.index], "polarity": d.polarity,
             "similarity": d.similarity, "score": d.score, "kept": d.kept,
             "fallback": d.fallback}
            for d in res.diagnostics
        ],
    }
    _write_json(out, payload)
    kept = sum(1 for d in res.diagnostics if d.kept)
    click.echo(f"kept {kept}/{len(res.diagnostics)} prompts -> {out}")


@cli.command("score")
@click.option("--image-bundle", required=True, type=click.Path(exists=True))
@click.option("--prompt-bundle", required=True, type=click.Path(exists=True))
@click.option("--bank", "bank_path", default=None, type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--tau", default=None, type=float)
@click.option("--scales", default=None)
@click.option("--sigma", default=None, type=float)
@click.option("--no-adapt", is_flag=True, help="Disable run-time prompt filtering.")
@click.option("--out", required=True, type=click.Path())
@click.option("--map-out", default=None, type=click.Path())
def score_cmd(image_bundle, prompt_bundle, bank_path, config_path, tau, scales,
              sigma, no_adapt, out, map_out):
    """Score one image: result JSON plus optional anomaly-map bundle."""
    cfg = load_config(config_path)
    if tau is not None:
        cfg.tau = tau
    if scales is not None:
        cfg.scales = parse_scales(scales)
    if sigma is not None:
        cfg.sigma = sigma
    view = load_image_view(image_bundle)
    pool = load_prompt_pool(prompt_bundle)
    bank = MemoryBank.load(bank_path) if bank_path else None
    result = score_image(view, pool, cfg.scoring(), cfg.rtp(), bank,
                         adapt=not no_adapt)
    _write_json(out, result_json(result))
    if map_out:
        write_map_bundle(map_out, result, view.gt_mask,
                         view.meta.get("source_path", ""),
                         view.meta.get("class", ""))
    click.echo(f"S={result.score:.4f} S_G={result.s_global:.4f} "
               f"max_local={result.max_local:.4f} -> {out}")


@cli.group("bank")
def bank_group():
    """Few-shot memory bank commands."""


@bank_group.command("build")
@click.option("--bundles", "bundles_dir", required=True, type=click.Path(exists=True))
@click.option("--scales", default="2,3", show_default=True)
@click.option("--out", required=True, type=click.Path())
def bank_build_cmd(bundles_dir, scales, out):
    """Build a bank from every image bundle in a directory."""
    paths = sorted(glob.glob(os.path.join(bundles_dir, "*.alfb")))
    if not paths:
        raise PipelineError(f"no .alfb bundles in {bundles_dir}")
    scales_t = parse_scales(scales)
    views = [load_image_view(p) for p in paths]
    bank = build_bank([v.local_cls for v in views], scales_t,
                      provenance=[v.meta.get("source_path", p)
                                  for v, p in zip(views, paths)])
    bank.save(out)
    n = bank.rows[scales_t[0]].shape[0]
    click.echo(f"bank of {n} rows per scale from {len(paths)} images -> {out}")


def _load_case(result_path):
    with open(result_path, encoding="utf-8") as fh:
        res = json.load(fh)
    map_path = result_path[:-len(".result.json")] + ".map.alfb"
    pe, label = None, None
    if os.path.exists(map_path):
        b = bundlefmt.read_bundle(map_path)
        if "gt_mask" in b and "anomaly_map" in b:
            mask = np.asarray(b["gt_mask"])
            pe = PixelEval(np.asarray(b["anomaly_map"], dtype=np.float64), mask)
            label = int(mask.any())
    return res, pe, label


@cli.command("eval")
@click.option("--results", "results_dir", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--pro-fpr", default=0.3, show_default=True)
@click.option("--jobs", default=1, show_default=True)
def eval_cmd(results_dir, out, pro_fpr, jobs):
    """Aggregate result JSONs and map bundles into per-class metric report."""
    result_paths = sorted(glob.glob(os.path.join(results_dir, "*.result.json")))
    if not result_paths:
        raise PipelineError(f"no *.result.json files in {results_dir}")
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            cases = list(ex.map(_load_case, result_paths))
    else:
        cases = [_load_case(p) for p in result_paths]

    by_class: dict[str, dict] = {}
    for res, pe, label in cases:
        cls = res.get("class") or "_default"
        entry = by_class.setdefault(cls, {"scores": [], "labels": [], "pixel": []})
        if label is None:
            continue  # no ground truth for this image
        entry["scores"].append(res["score"])
        entry["labels"].append(label)
        if pe is not None:
            entry["pixel"].append(pe)

    report: dict[str, dict] = {"classes": {}, "macro": {}}
    sums: dict[str, list[float]] = {}
    for cls, entry in sorted(by_class.items()):
        row: dict[str, dict] = {}
        if entry["scores"] and 0 < sum(entry["labels"]) < len(entry["labels"]):
            row["image"] = {
                "auroc": auroc(entry["scores"], entry["labels"]),
                "aupr": aupr(entry["scores"], entry["labels"]),
                "f1_max": f1_max(entry["scores"], entry["labels"]),
            }
        if entry["pixel"] and any(ev.mask.any() for ev in entry["pixel"]):
            pauroc, pro_v, pf1 = pixel_metrics(entry["pixel"], pro_fpr)
            row["pixel"] = {"pauroc": pauroc, "pro": pro_v, "pf1_max": pf1}
        report["classes"][cls] = row
        for level, vals in row.items():
            for name, v in vals.items():
                sums.setdefault(f"{level}.{name}", []).append(v)
    for key, vals in sums.items():
        level, name = key.split(".")
        report["macro"].setdefault(level, {})[name] = float(np.mean(vals))
    _write_json(out, report)
    click.echo(f"evaluated {len(result_paths)} results over "
               f"{len(by_class)} classes -> {out}")


@cli.command("descriptors")
@click.option("--image-bundle", required=True, type=click.Path(exists=True))
@click.option("--desc-bundle", required=True, type=click.Path(exists=True))
@click.option("--k", default=5, show_default=True)
@click.option("--out", required=True, type=click.Path())
def descriptors_cmd(image_bundle, desc_bundle, k, out):
    """Rank descriptor texts by similarity to the image embedding."""
    view = load_image_view(image_bundle)
    pool = load_prompt_pool(desc_bundle)
    descriptors = (
        list(zip(pool.normal_texts, pool.normal_embeddings))
        + list(zip(pool.abnormal_texts, pool.abnormal_embeddings)))
    top = rank_descriptors(view.cls_embedding, descriptors, k)
    _write_json(out, {"image": view.meta.get("source_path", image_bundle),
                      "top": [{"text": t, "similarity": s} for t, s in top]})
    click.echo(f"top-{len(top)} descriptors -> {out}")


@cli.command("synth")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--d", default=64, show_default=True)
@click.option("--grid", default="15,15", show_default=True)
@click.option("--separation", default=1.0, show_default=True)
@click.option("--n-normal", default=100, show_default=True)
@click.option("--n-abnormal", default=100, show_default=True)
@click.option("--poison", default=0.0, show_default=True,
              help="Fraction of abnormal prompts placed in the normal cone.")
@click.option("--scales", default="2,3", show_default=True)
def synth_cmd(out_dir, seed, d, grid, separation, n_normal, n_abnormal, poison,
              scales):
    """Generate the deterministic synthetic fixture."""
    gh, gw = (int(p) for p in grid.split(","))
    cfg = SynthConfig(seed=seed, d=d, grid=(gh, gw), separation=separation,
                      n_normal=n_normal, n_abnormal=n_abnormal,
                      poison_fraction=poison, scales=parse_scales(scales))
    fx = generate_fixture(out_dir, cfg)
    click.echo(f"wrote {len(fx.image_bundles)} image bundles and "
               f"{fx.prompt_bundle}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"error: usage: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except DATA_ERRORS as exc:
        click.echo(f"error: data: {type(exc).__name__}: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
