"""Command line interface: ``alfa-export image|text|dataset``."""

import sys

import click

from .encoders import EncoderError, make_encoder
from .export import ExportConfig, ExportError, export_dataset, export_image, export_text
from .preprocess import PreprocessError

DATA_ERRORS = (ExportError, EncoderError, PreprocessError, OSError)


def _config(model, scales, layer, tiling, out):
    try:
        parsed = tuple(int(s) for s in scales.split(","))
    except ValueError:
        raise click.UsageError(f"bad --scales value {scales!r}")
    return ExportConfig(model=model, scales=parsed, layer=layer,
                        tiling=tiling, out_dir=out)


def _model_options(fn):
    fn = click.option("--model", default="ViT-B-16-plus-240", show_default=True,
                      help="Encoder id, or 'stub[:d]' for the test backend.")(fn)
    fn = click.option("--scales", default="2,3", show_default=True)(fn)
    fn = click.option("--layer", default=-1, show_default=True, type=int)(fn)
    fn = click.option("--tiling/--no-tiling", default=True, show_default=True)(fn)
    fn = click.option("--out", default=".", show_default=True,
                      help="Output directory.")(fn)
    return fn


@click.group()
def cli():
    """Export contrastive-encoder embeddings as engine bundles."""


@cli.command("image")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--mask", "mask_path", default=None, type=click.Path(exists=True))
@click.option("--class-name", default="")
@_model_options
def image_cmd(image_path, mask_path, class_name, model, scales, layer, tiling, out):
    """Export one image (one bundle per tile)."""
    cfg = _config(model, scales, layer, tiling, out)
    for path in export_image(image_path, cfg, mask_path=mask_path,
                             class_name=class_name):
        click.echo(path)


@cli.command("text")
@click.option("--prompts", "prompt_json", required=True, type=click.Path(exists=True))
@_model_options
def text_cmd(prompt_json, model, scales, layer, tiling, out):
    """Embed a prompt-set JSON into a text bundle."""
    cfg = _config(model, scales, layer, tiling, out)
    click.echo(export_text(prompt_json, cfg))


@cli.command("dataset")
@click.option("--root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--classes", required=True, help="Comma-separated class names.")
@_model_options
def dataset_cmd(root, classes, model, scales, layer, tiling, out):
    """Export the test split of each class plus a manifest."""
    cfg = _config(model, scales, layer, tiling, out)
    click.echo(export_dataset(root, classes.split(","), cfg))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        click.echo(f"error: usage: {exc.format_message()}", err=True)
        return 1
    except click.exceptions.Abort:
        return 1
    except DATA_ERRORS as exc:
        click.echo(f"error: data: {exc}", err=True)
        return 2


def entry() -> None:
    sys.exit(main())
