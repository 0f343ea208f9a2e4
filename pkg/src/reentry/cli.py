"""Command-line workflows: synth | ingest | labels | stats | split | train |
eval | gradcheck.

Every file-producing run also writes a manifest (config echo, seed, input
hashes, output paths) so reruns are reproducible byte for byte; exit codes
are 0 on success, 1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from reentry import __version__, corpus, labeling, model, reporting, synth, training
from reentry import numerics as nm
from reentry.evaluation import classify_metrics, pattern_breakdown

logger = logging.getLogger("reentry")


def friendly_errors(fn):
    """Turn expected runtime failures into exit-code-1 diagnostics."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, OSError, RuntimeError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def write_manifest(path: Path, subcommand: str, seed: int | None, config: dict,
                   inputs: dict[str, Path], outputs: list[Path]) -> None:
    manifest = {
        "version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "config": config,
        "input_hashes": {name: corpus.file_sha256(p) for name, p in sorted(inputs.items())},
        "outputs": sorted(str(p) for p in outputs),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


@click.group()
@click.version_option(version=__version__, prog_name="reentry")
def main():
    """Conversation re-entry prediction: data tooling, training, evaluation."""
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")


@main.command("synth")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              help="SynthConfig JSON; defaults to the built-in pattern mix.")
@click.option("--n", "n_conversations", type=int, default=None,
              help="Override the number of conversations.")
@click.option("--seed", type=int, default=None, help="Override the generator seed.")
@friendly_errors
def synth_cmd(out_path: Path, config_path: Path | None, n_conversations: int | None,
              seed: int | None):
    """Generate a synthetic conversation corpus (JSONL + config echo)."""
    if config_path is not None:
        config = synth.SynthConfig.from_json(config_path.read_text(encoding="utf-8"))
    else:
        config = synth.default_config()
    if n_conversations is not None:
        config.n_conversations = n_conversations
    if seed is not None:
        config.seed = seed
    conversations = synth.generate_corpus(config)
    corpus.write_corpus_jsonl(conversations, out_path)
    echo_path = out_path.with_name(out_path.name + ".config.json")
    echo_path.write_text(config.to_json() + "\n", encoding="utf-8")
    write_manifest(out_path.with_name(out_path.name + ".manifest.json"), "synth",
                   config.seed, json.loads(config.to_json()),
                   inputs={} if config_path is None else {"config": config_path},
                   outputs=[out_path, echo_path])
    click.echo(f"wrote {len(conversations)} conversations to {out_path}")


@main.command("ingest")
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--reddit-clean", is_flag=True,
              help="Replace links with URL and drop tokens without letters.")
@friendly_errors
def ingest_cmd(input_path: Path, out_path: Path, reddit_clean: bool):
    """Normalize a raw corpus: tokenize, lowercase, optional cleaning."""
    conversations = corpus.ingest_jsonl(input_path, reddit_clean=reddit_clean)
    corpus.write_corpus_jsonl(conversations, out_path)
    write_manifest(out_path.with_name(out_path.name + ".manifest.json"), "ingest",
                   None, {"reddit_clean": reddit_clean},
                   inputs={"input": input_path}, outputs=[out_path])
    click.echo(f"ingested {len(conversations)} conversations to {out_path}")


@main.command("labels")
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--instances-in", is_flag=True,
              help="Input is an instance dump, not a conversation corpus.")
@click.option("--min-prefix", type=int, default=2, show_default=True)
@click.option("--histories", "with_histories", is_flag=True,
              help="Attach chatting histories drawn from the same corpus.")
@click.option("--history-cap", type=int, default=10, show_default=True)
@click.option("--invert", "invert_spec", default="", show_default=True,
              help="Comma-separated tasks whose labels to flip (sp,rt,ta).")
@friendly_errors
def labels_cmd(input_path: Path, out_path: Path, instances_in: bool, min_prefix: int,
               with_histories: bool, history_cap: int, invert_spec: str):
    """Derive (or re-derive) instances with all task labels, as JSONL."""
    invert = labeling.parse_tasks(invert_spec)
    if instances_in:
        instances = corpus.read_instances_jsonl(input_path)
    else:
        conversations = corpus.ingest_jsonl(input_path)
        instances = corpus.extract_instances(conversations, min_prefix)
        if with_histories:
            corpus.build_histories(instances, conversations, history_cap)
    if invert:
        instances = [labeling.invert_labels(ins, invert) for ins in instances]
    corpus.write_instances_jsonl(instances, out_path)
    write_manifest(out_path.with_name(out_path.name + ".manifest.json"), "labels",
                   None, {"min_prefix": min_prefix, "histories": with_histories,
                          "history_cap": history_cap, "invert": sorted(invert),
                          "instances_in": instances_in},
                   inputs={"input": input_path}, outputs=[out_path])
    click.echo(f"wrote {len(instances)} instances to {out_path}")


@main.command("stats")
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--min-prefix", type=int, default=2, show_default=True)
@click.option("--output", "out_path", type=click.Path(path_type=Path),
              help="Write the TSV here instead of stdout.")
@click.option("--figure", "figure_path", type=click.Path(path_type=Path),
              help="Render the frequency/re-entry-rate chart to this file.")
@friendly_errors
def stats_cmd(input_path: Path, min_prefix: int, out_path: Path | None,
              figure_path: Path | None):
    """Thread-pattern table: pattern, instance count, re-entry rate."""
    conversations = corpus.ingest_jsonl(input_path)
    instances = corpus.extract_instances(conversations, min_prefix)
    stats = labeling.pattern_stats(instances)
    tsv = reporting.stats_tsv(stats)
    if out_path:
        out_path.write_text(tsv, encoding="utf-8")
        click.echo(f"wrote pattern stats to {out_path}")
    else:
        click.echo(tsv, nl=False)
    if figure_path:
        reporting.pattern_stats_figure(stats, figure_path)
        click.echo(f"wrote figure to {figure_path}")
    if out_path or figure_path:
        primary = out_path or figure_path
        write_manifest(primary.with_name(primary.name + ".manifest.json"), "stats",
                       None, {"min_prefix": min_prefix},
                       inputs={"input": input_path},
                       outputs=[p for p in (out_path, figure_path) if p])


@main.command("split")
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--outdir", required=True, type=click.Path(path_type=Path))
@click.option("--ratios", default="0.8,0.1,0.1", show_default=True,
              help="train,valid,test fractions summing to 1.")
@click.option("--seed", type=int, default=7, show_default=True)
@friendly_errors
def split_cmd(input_path: Path, outdir: Path, ratios: str, seed: int):
    """Deterministic conversation-level train/valid/test split."""
    try:
        parts = tuple(float(r) for r in ratios.split(","))
    except ValueError as exc:
        raise ValueError(f"could not parse ratios {ratios!r}") from exc
    conversations = corpus.ingest_jsonl(input_path)
    train, valid, test = corpus.split_corpus(conversations, parts, seed)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, subset in (("train", train), ("valid", valid), ("test", test)):
        path = outdir / f"{name}.jsonl"
        corpus.write_corpus_jsonl(subset, path)
        outputs.append(path)
    write_manifest(outdir / "manifest.json", "split", seed,
                   {"ratios": list(parts)}, inputs={"input": input_path},
                   outputs=outputs)
    click.echo(f"split {len(conversations)} conversations into "
               f"{len(train)}/{len(valid)}/{len(test)} under {outdir}")


@main.command("train")
@click.option("--train", "train_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--valid", "valid_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--outdir", required=True, type=click.Path(path_type=Path))
@click.option("--tasks", "tasks_spec", default="", show_default=True,
              help="Auxiliary tasks to train jointly (subset of sp,rt,ta).")
@click.option("--invert", "invert_spec", default="", show_default=True,
              help="Tasks whose labels are flipped before training.")
@click.option("--no-history", is_flag=True, help="Zero-init the target turn encoder.")
@click.option("--no-attention", is_flag=True, help="Mean pooling instead of attention.")
@click.option("--attention-over", type=click.Choice(["conv", "turn"]), default="conv",
              show_default=True, help="Score conversation-encoder outputs or turn vectors.")
@click.option("--aux-weight-mode", type=click.Choice(["paper", "inverse"]),
              default="paper", show_default=True,
              help="Auxiliary class weight: #pos/#neg (paper) or #neg/#pos.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--embed-dim", type=int, default=200, show_default=True)
@click.option("--hidden-dim", type=int, default=200, show_default=True)
@click.option("--dropout", type=float, default=0.2, show_default=True)
@click.option("--history-cap", type=int, default=10, show_default=True)
@click.option("--min-count", type=int, default=1, show_default=True,
              help="Vocabulary frequency threshold.")
@click.option("--min-prefix", type=int, default=2, show_default=True)
@click.option("--embeddings", "embeddings_path",
              type=click.Path(exists=True, path_type=Path),
              help="Pretrained embedding text file to initialize the table.")
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--epochs", type=int, default=20, show_default=True)
@click.option("--patience", type=int, default=5, show_default=True)
@click.option("--l2", type=float, default=1e-5, show_default=True)
@click.option("--alpha-sp", type=float, default=0.2, show_default=True)
@click.option("--alpha-rt", type=float, default=0.2, show_default=True)
@click.option("--alpha-ta", type=float, default=0.2, show_default=True)
@click.option("--lambda-main", type=float, default=None,
              help="Positive-class weight for the main loss; default #neg/#pos.")
@click.option("--mu-main", type=float, default=1.0, show_default=True)
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--stop-at-f1", type=float, default=None,
              help="Stop once validation F1 reaches this value.")
@click.option("--dtype", type=click.Choice(["float64", "float32"]), default="float64",
              show_default=True)
@friendly_errors
def train_cmd(train_path: Path, valid_path: Path, outdir: Path, tasks_spec: str,
              invert_spec: str, no_history: bool, no_attention: bool,
              attention_over: str, aux_weight_mode: str, seed: int, embed_dim: int,
              hidden_dim: int, dropout: float, history_cap: int, min_count: int,
              min_prefix: int, embeddings_path: Path | None, lr: float,
              batch_size: int, epochs: int, patience: int, l2: float,
              alpha_sp: float, alpha_rt: float, alpha_ta: float,
              lambda_main: float | None, mu_main: float, threshold: float,
              stop_at_f1: float | None, dtype: str):
    """Train the model; writes checkpoint, vocab, epoch log and curves."""
    nm.set_dtype(dtype)
    tasks = labeling.parse_tasks(tasks_spec)
    invert = labeling.parse_tasks(invert_spec)
    train_convs = corpus.ingest_jsonl(train_path)
    valid_convs = corpus.ingest_jsonl(valid_path)
    vocab = corpus.build_vocab(train_convs, min_count)
    effective_cap = 0 if no_history else history_cap
    train_set, valid_set = training.build_datasets(
        train_convs, valid_convs, vocab, min_prefix=min_prefix,
        history_cap=effective_cap, invert=frozenset(invert))

    model_config = model.ModelConfig(
        vocab_size=len(vocab), embed_dim=embed_dim, hidden_dim=hidden_dim,
        dropout=dropout, history_cap=history_cap, attention_over=attention_over,
        use_history=not no_history, use_attention=not no_attention)
    table = None
    if embeddings_path is not None:
        table = corpus.load_embedding_file(embeddings_path, vocab, embed_dim, seed=seed)
    params = model.ModelParams(model_config, seed=seed, embeddings=table)

    train_config = training.TrainConfig(
        learning_rate=lr, batch_size=batch_size, max_epochs=epochs,
        patience=patience, l2=l2, seed=seed, tasks=frozenset(tasks),
        invert=frozenset(invert), aux_weight_mode=aux_weight_mode,
        alpha_sp=alpha_sp, alpha_rt=alpha_rt, alpha_ta=alpha_ta,
        lambda_main=lambda_main, mu_main=mu_main, threshold=threshold,
        stop_at_f1=stop_at_f1)

    outdir.mkdir(parents=True, exist_ok=True)
    vocab_path = outdir / "vocab.txt"
    vocab.save(vocab_path)
    checkpoint_path = outdir / "model.ckpt"
    log_path = outdir / "log.jsonl"
    result = training.train(params, train_set, valid_set, train_config,
                            vocab_hash=vocab.content_hash(),
                            checkpoint_path=checkpoint_path, log_path=log_path,
                            checkpoint_extra={"min_prefix": min_prefix})
    curves_path = outdir / "curves.png"
    reporting.training_curves_figure(result.log, curves_path)
    config_echo = {
        "model": model_config.to_dict(),
        "train": train_config.to_dict(),
        "min_prefix": min_prefix,
        "min_count": min_count,
        "dtype": dtype,
        "loss_weights": vars(result.weights),
    }
    write_manifest(outdir / "manifest.json", "train", seed, config_echo,
                   inputs={"train": train_path, "valid": valid_path,
                           **({"embeddings": embeddings_path} if embeddings_path else {})},
                   outputs=[checkpoint_path, vocab_path, log_path, curves_path])
    click.echo(f"best valid F1 {result.best_valid_f1:.4f} at epoch {result.best_epoch} "
               f"({result.steps} steps); artifacts in {outdir}")


@main.command("eval")
@click.option("--checkpoint", "checkpoint_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True, path_type=Path))
@click.option("--train-corpus", "train_corpus_path",
              type=click.Path(exists=True, path_type=Path),
              help="Corpus supplying chatting histories (the training split).")
@click.option("--vocab", "vocab_path", type=click.Path(path_type=Path),
              help="Vocabulary file; defaults to vocab.txt next to the checkpoint.")
@click.option("--min-prefix", type=int, default=None,
              help="Override the instance cut recorded at training time.")
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.option("--pattern-breakdown", "breakdown_path",
              type=click.Path(path_type=Path),
              help="Write a per-pattern metrics TSV to this file.")
@click.option("--min-pattern-count", type=int, default=5, show_default=True,
              help="Patterns with fewer instances merge into 'other'.")
@click.option("--figure", "figure_path", type=click.Path(path_type=Path),
              help="Render the per-pattern F1 chart to this file.")
@click.option("--output", "out_path", type=click.Path(path_type=Path),
              help="Write the metrics row here instead of stdout.")
@friendly_errors
def eval_cmd(checkpoint_path: Path, data_path: Path, train_corpus_path: Path | None,
             vocab_path: Path | None, min_prefix: int | None, threshold: float,
             as_json: bool, breakdown_path: Path | None, min_pattern_count: int,
             figure_path: Path | None, out_path: Path | None):
    """Score a corpus with a trained model and report AUC/Acc/Pre/Rec/F1."""
    params, header = model.load_checkpoint(checkpoint_path)
    if vocab_path is None:
        vocab_path = checkpoint_path.parent / "vocab.txt"
    vocab = corpus.Vocabulary.load(vocab_path)
    if vocab.content_hash() != header["vocab_hash"]:
        raise ValueError(f"vocabulary {vocab_path} does not match the checkpoint "
                         f"(hash mismatch)")
    cut = min_prefix if min_prefix is not None else \
        header.get("extra", {}).get("min_prefix", 2)

    conversations = corpus.ingest_jsonl(data_path)
    instances = corpus.extract_instances(conversations, cut)
    if params.config.use_history:
        if train_corpus_path is not None:
            history_source = corpus.ingest_jsonl(train_corpus_path)
            corpus.build_histories(instances, history_source, params.config.history_cap)
        else:
            logger.warning("no --train-corpus given; evaluating with empty histories")
    dataset = model.encode_dataset(instances, vocab)
    scores = model.predict_scores(params, dataset)
    labels_main = [e.label_reentry for e in dataset]
    report = classify_metrics(scores, labels_main, threshold)

    if as_json:
        rendered = json.dumps(report.as_dict(), sort_keys=True) + "\n"
    else:
        rendered = reporting.metrics_tsv(report)
    if out_path:
        out_path.write_text(rendered, encoding="utf-8")
        click.echo(f"wrote metrics to {out_path}")
    else:
        click.echo(rendered, nl=False)

    breakdown = None
    if breakdown_path or figure_path:
        breakdown = pattern_breakdown(dataset, scores, threshold, min_pattern_count)
    if breakdown_path:
        breakdown_path.write_text(reporting.breakdown_tsv(breakdown), encoding="utf-8")
        click.echo(f"wrote pattern breakdown to {breakdown_path}")
    if figure_path:
        reporting.pattern_f1_figure(breakdown, figure_path)
        click.echo(f"wrote figure to {figure_path}")
    file_outputs = [p for p in (out_path, breakdown_path, figure_path) if p]
    if file_outputs:
        write_manifest(file_outputs[0].with_name(file_outputs[0].name + ".manifest.json"),
                       "eval", None,
                       {"threshold": threshold, "min_prefix": cut,
                        "min_pattern_count": min_pattern_count},
                       inputs={"checkpoint": checkpoint_path, "data": data_path,
                               **({"train_corpus": train_corpus_path}
                                  if train_corpus_path else {})},
                       outputs=file_outputs)


@main.command("gradcheck")
@click.option("--eps", type=float, default=1e-5, show_default=True)
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("--entries", type=int, default=300, show_default=True,
              help="Total parameter entries to sample across instances.")
@click.option("--instances", "n_instances", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@friendly_errors
def gradcheck_cmd(eps: float, tol: float, entries: int, n_instances: int, seed: int):
    """Check full-model gradients against central finite differences."""
    nm.set_dtype("float64")
    config = synth.SynthConfig(
        pattern_weights={"ABA": 0.4, "ABC": 0.3, "AB": 0.3},
        reentry_rates={"ABA": 0.8, "ABC": 0.2, "AB": 0.3},
        n_conversations=max(4, n_instances + 2), vocab_size=12,
        turn_len_range=(1, 3), user_pool_size=12, seed=seed)
    conversations = synth.generate_corpus(config)
    instances = corpus.extract_instances(conversations)
    corpus.build_histories(instances, conversations, cap=2)
    vocab = corpus.build_vocab(conversations)
    dataset = model.encode_dataset(instances, vocab)
    rng = np.random.default_rng(seed)
    picked = [dataset[i] for i in rng.choice(len(dataset), size=n_instances, replace=False)]

    model_config = model.ModelConfig(vocab_size=len(vocab), embed_dim=6, hidden_dim=5,
                                     dropout=0.0, history_cap=2)
    params = model.ModelParams(model_config, seed=seed)
    weights = training.LossWeights(lambda_sp=0.7, lambda_rt=1.2)
    per_instance = max(1, -(-entries // len(picked)))  # ceil division

    failures = 0
    for idx, enc in enumerate(picked):
        def loss(enc=enc):
            out = model.forward(params, enc)
            parts = training.instance_losses(out, enc, weights, {"sp", "rt", "ta"})
            return training.loss_total(parts, weights)

        report = nm.grad_check(loss, params.all_params(), eps=eps, tol=tol,
                               max_entries=per_instance, rng=rng)
        status = "ok" if report.passed else "FAIL"
        click.echo(f"instance {idx + 1} ({enc.pattern}): {report.checked} entries, "
                   f"max rel err {report.max_rel_err:.3e} [{status}]")
        for name, flat_idx, analytic, numeric, rel in report.violations[:5]:
            click.echo(f"  violator {name}[{flat_idx}]: analytic {analytic:.6e} "
                       f"vs numeric {numeric:.6e} (rel {rel:.2e})")
        failures += len(report.violations)
    if failures:
        raise click.ClickException(f"{failures} gradient entries exceeded tolerance {tol}")
    click.echo(f"all gradients within tolerance {tol}")


if __name__ == "__main__":
    main()
