"""Command-line interface.

Every command exits 0 on success; failures print one machine-readable JSON
object on stderr and exit nonzero.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from .data import prepare_training_set
from .errors import TextMelError
from .fixtures import generate_fixtures
from .infer import benchmark_rtf, load_pipeline, synthesize_mel
from .plots import save_bench_figure
from .tenio import read_ten1, write_ten1
from .text import Vocab, insert_blanks, tokenize


def _fail(exc: TextMelError) -> None:
    sys.stderr.write(json.dumps(exc.to_json()) + "\n")
    sys.exit(1)


@click.group()
def main():
    """Text-to-mel pipeline: preparation, training, alignment, inference."""


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
def fixtures(out_dir, seed):
    """Generate the synthetic fixture corpus (wavs, lattices, manifest)."""
    try:
        summary = generate_fixtures(out_dir, seed=seed)
    except TextMelError as exc:
        _fail(exc)
    click.echo(json.dumps({"utterances": len(summary["utterances"]), "out": str(out_dir)}))


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--lattices", "lattice_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def prepare(manifest, lattice_dir, out_dir):
    """Extract features and alignment targets for a manifest."""
    try:
        summary = prepare_training_set(manifest, lattice_dir, out_dir)
    except TextMelError as exc:
        _fail(exc)
    click.echo(json.dumps(summary))


@main.command()
@click.argument("kind", type=click.Choice(["duration", "pitch", "mel"]))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def train(kind, data_dir, config_path, out_path):
    """Train one model on a prepared dataset."""
    from .train import TrainConfig
    from .train import train as run_train
    try:
        data = {}
        if config_path:
            with open(config_path, encoding="utf-8") as fh:
                data = json.load(fh)
        data["kind"] = kind
        cfg = TrainConfig.from_json(data)
        result = run_train(cfg, data_dir, out_path)
    except TextMelError as exc:
        _fail(exc)
    click.echo(json.dumps({"kind": kind, "steps": result["steps"],
                           "best_loss": result["best_loss"], "out": str(out_path)}))


@main.command()
@click.option("--text", required=True)
@click.option("--ckpt-dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--durations-scale", default=1.0, show_default=True)
def infer(text, ckpt_dir, out_path, durations_scale):
    """Synthesize a mel spectrogram (TEN1) for one text."""
    try:
        pipe = load_pipeline(ckpt_dir)
        mel = synthesize_mel(text, pipe, durations_scale)
        write_ten1(out_path, mel.astype(np.float32))
    except TextMelError as exc:
        _fail(exc)
    click.echo(json.dumps({"frames": int(mel.shape[1]), "out": str(out_path)}))


@main.command()
@click.option("--lattice", "lattice_path", required=True, type=click.Path(exists=True))
@click.option("--text", required=True)
@click.option("--vocab", "vocab_path", required=True, type=click.Path(exists=True))
def align(lattice_path, text, vocab_path):
    """Viterbi-align one lattice against a text; print the duration record."""
    from .align import alignment_to_record, viterbi_align
    try:
        vocab = Vocab.load(vocab_path)
        target = insert_blanks(tokenize(text, vocab))
        lattice = read_ten1(lattice_path)
        result = viterbi_align(lattice, target)
    except TextMelError as exc:
        _fail(exc)
    click.echo(json.dumps(alignment_to_record(result, Path(lattice_path).stem, target)))


@main.command()
@click.option("--seed", default=0, show_default=True)
def gradcheck(seed):
    """Finite-difference gradient checks on layers and assembled models."""
    try:
        results = run_gradcheck(seed)
    except TextMelError as exc:
        _fail(exc)
    click.echo(json.dumps(results))
    if not results["ok"]:
        sys.exit(1)


def run_gradcheck(seed: int = 0) -> dict:
    from .models import (
        DurationModel, DurationModelConfig,
        MelModel, MelModelConfig,
        PitchModel, PitchModelConfig,
        batch_gaussian_weights,
    )
    from .nn import SubBlock, finite_diff_gradcheck, scalar_projection_loss

    results = {}
    rng = np.random.default_rng(seed)
    sb = SubBlock(3, 4, 3, 0.0, rng, np.float64)
    x = rng.normal(size=(2, 3, 7))

    def sb_closure():
        y = sb.forward(x)
        loss, dy = scalar_projection_loss(y, seed)
        sb.backward(dy)
        return loss

    results["subblock"] = finite_diff_gradcheck(
        sb_closure, [p for _, p in sb.named_params()], seed=seed)

    dur = DurationModel(DurationModelConfig(vocab_size=8, scale=0.03, dropout=0.0),
                        seed=seed, dtype=np.float64)
    ids = np.array([[0, 3, 0, 5, 0]])

    def dur_closure():
        pred = dur.forward(ids, training=True)
        loss, dpred = scalar_projection_loss(pred, seed)
        dur.backward(dpred)
        return loss

    results["duration_model"] = finite_diff_gradcheck(
        dur_closure, dur.params(), seed=seed, coords_per_param=1)

    pit = PitchModel(PitchModelConfig(vocab_size=8, scale=0.03, dropout=0.0),
                     seed=seed, dtype=np.float64)
    weights, mask = batch_gaussian_weights([np.array([1, 2, 0, 2, 1])])

    def pit_closure():
        p_nv, p_body = pit.forward(ids, weights, mask, training=True)
        l1, d1 = scalar_projection_loss(p_nv, seed)
        l2, d2 = scalar_projection_loss(p_body, seed + 1)
        pit.backward(d1, d2)
        return l1 + l2

    results["pitch_model"] = finite_diff_gradcheck(
        pit_closure, pit.params(), seed=seed, coords_per_param=1)

    mel = MelModel(MelModelConfig(vocab_size=8, scale=0.01, dropout=0.0),
                   seed=seed, dtype=np.float64)
    w3, m3 = batch_gaussian_weights([np.array([2, 2, 1])])
    ids3 = np.array([[0, 3, 0]])
    pitch = rng.normal(size=(1, 5))

    def mel_closure():
        out = mel.forward(ids3, w3, pitch, m3, training=True)
        loss, dout = scalar_projection_loss(out, seed)
        mel.backward(dout)
        return loss

    results["mel_model"] = finite_diff_gradcheck(
        mel_closure, mel.params(), seed=seed, coords_per_param=1)

    ok = results["subblock"] < 1e-4 and all(
        results[k] < 1e-3 for k in ("duration_model", "pitch_model", "mel_model"))
    return {"ok": bool(ok), **{k: float(v) for k, v in results.items()}}


@main.command()
@click.option("--ckpt-dir", required=True, type=click.Path(exists=True))
@click.option("--batch", default=1, show_default=True)
@click.option("--out-dir", "out_dir", type=click.Path(), default=None,
              help="Where to write bench.csv and bench.png (default: ckpt dir).")
def bench(ckpt_dir, batch, out_dir):
    """Measure inference real-time factor over a spread of text lengths."""
    try:
        pipe = load_pipeline(ckpt_dir)
        texts = _bench_texts()
        report = benchmark_rtf(texts, pipe, batch=batch)
        out_dir = Path(out_dir) if out_dir else Path(ckpt_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "bench.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["text_chars", "frames", "wall_ms"])
            writer.writeheader()
            writer.writerows(report["rows"])
        save_bench_figure([r["frames"] for r in report["rows"]],
                          [r["wall_ms"] for r in report["rows"]],
                          out_dir / "bench.png", "inference wall time vs output frames")
    except TextMelError as exc:
        _fail(exc)
    summary = {k: report[k] for k in report if k != "rows"}
    summary["csv"] = str(out_dir / "bench.csv")
    summary["figure"] = str(out_dir / "bench.png")
    click.echo(json.dumps(summary))


def _bench_texts() -> list[str]:
    base = "the quick brown fox jumps over the lazy dog "
    return [base[:12], base[:22], base, base * 2, base * 3, base * 4]


if __name__ == "__main__":
    main()
