"""Command-line entry point: ``gmn <command>``."""

from __future__ import annotations

import logging
import sys
import time
from functools import wraps
from pathlib import Path

import click
import numpy as np

from .embed import ShapeError
from .experiments import DESK_CONFIG, SynthSource, fixed_source, run_ablation, run_sweep
from .gradcheck import check_gradients, micro_problem
from .graph import Kind, LogFormatError, ingest_logs, load_graph, save_graph
from .metrics import MetricError, MetricsReport
from .model import GMN
from .params import ConfigError, GMNConfig, load_checkpoint, save_checkpoint
from .retrieve import export_embeddings, retrieve_topk
from .synth import make_synthetic, read_samples, write_synthetic
from .train import evaluate, fit

VALIDATION_ERRORS = (ConfigError, LogFormatError, MetricError, ShapeError, KeyError, ValueError)


def _guard(fn):
    """Map validation failures to exit code 2 and I/O failures to exit code 1."""

    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except VALIDATION_ERRORS as e:
            click.echo(f"error: {e.args[0] if isinstance(e, KeyError) and e.args else e}", err=True)
            sys.exit(2)
        except OSError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(1)

    return wrapper


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _emit(text: str, out: str | None) -> None:
    click.echo(text, nl=False)
    if out:
        Path(out).write_text(text, encoding="utf-8")


def _load_model(checkpoint: str, graph: str) -> GMN:
    params, config = load_checkpoint(checkpoint)
    g = load_graph(graph)
    expected = {f"emb/{f}" for kind in Kind for f, _ in g.schema()[kind]}
    missing = expected - set(params.names())
    if missing:
        raise ConfigError(f"checkpoint lacks embedding tables {sorted(missing)} required by the graph")
    return GMN(g, config, params)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log training progress to stderr.")
def main(verbose: bool) -> None:
    """Graph matching network retrieval over a dual user-video / user-item graph."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


@main.command("build-graph")
@click.option("--videos", "uv_log", required=True, type=click.Path(exists=True), help="user\\tvideo\\ttimestamp log")
@click.option("--items", "ui_log", required=True, type=click.Path(exists=True), help="user\\titem\\ttimestamp log")
@click.option("--features", type=click.Path(exists=True), help="key\\tfield:id ... feature table")
@click.option("--out", required=True, type=click.Path())
@_guard
def build_graph(uv_log, ui_log, features, out):
    """Ingest interaction logs into a binary graph (plus a .keys sidecar)."""
    with open(uv_log, encoding="utf-8") as fv, open(ui_log, encoding="utf-8") as fi:
        if features:
            with open(features, encoding="utf-8") as ff:
                g = ingest_logs(fv, fi, ff)
        else:
            g = ingest_logs(fv, fi)
    save_graph(g, out)
    r = g.report
    click.echo(f"users\t{g.n_users}\nvideos\t{g.n_videos}\nitems\t{g.n_items}")
    click.echo(f"uv_edges\t{g.n_uv_edges}\nui_edges\t{g.n_ui_edges}")
    click.echo(f"duplicates\t{r.duplicates}\nskipped_unknown\t{r.skipped_unknown}")


@main.command()
@click.option("--users", default=5000, show_default=True)
@click.option("--videos", default=2000, show_default=True)
@click.option("--items", default=5000, show_default=True)
@click.option("--topics", default=20, show_default=True)
@click.option("--signal", default=0.8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_guard
def synth(users, videos, items, topics, signal, seed, out):
    """Generate a synthetic dual graph with a validation sample file."""
    data = make_synthetic(users, videos, items, topics, signal, seed=seed)
    write_synthetic(data, out)
    pos = int(data.val[:, 2].sum())
    click.echo(f"wrote {out}: {data.graph.n_uv_edges} train video edges, {data.graph.n_ui_edges} item edges, "
               f"{pos} validation positives ({len(data.val)} samples)")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--graph", required=True, type=click.Path(exists=True))
@click.option("--val", type=click.Path(exists=True), help="Validation samples for early stopping.")
@click.option("--out", required=True, type=click.Path(), help="Checkpoint path.")
@click.option("--epochs", type=int)
@click.option("--no-early-stopping", is_flag=True)
@_guard
def train(config_path, graph, val, out, epochs, no_early_stopping):
    """Train with BPR and Adam, then save a checkpoint."""
    config = GMNConfig.from_file(config_path)
    g = load_graph(graph)
    samples = read_samples(g, val) if val else None
    model = GMN(g, config)
    t0 = time.perf_counter()
    hist = fit(model, samples, epochs=epochs, early_stopping=not no_early_stopping)
    save_checkpoint(model.params, config, out)
    click.echo("epoch\tbpr_loss\t" + "\t".join(MetricsReport.HEADER))
    for n, stats in enumerate(hist.epochs):
        cols = hist.val[n].row() if n < len(hist.val) else []
        click.echo("\t".join([str(n + 1), f"{stats.mean_loss:.4f}", *cols]))
    click.echo(f"# {time.perf_counter() - t0:.1f}s, checkpoint {out}", err=True)


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--graph", required=True, type=click.Path(exists=True))
@click.option("--samples", required=True, type=click.Path(exists=True), help="user\\tvideo\\tlabel file")
@_guard
def eval_cmd(checkpoint, graph, samples):
    """Report AUC, precision, recall, BCE loss and hit@1 (all x100)."""
    model = _load_model(checkpoint, graph)
    report = evaluate(model, read_samples(model.graph, samples))
    click.echo("\t".join(MetricsReport.HEADER))
    click.echo("\t".join(report.row()))
    for flag in report.flags:
        click.echo(f"# flag: {flag}", err=True)


def _dump_matrix(title, rows, cols, m):
    click.echo(f"# {title}")
    click.echo("\t" + "\t".join(cols))
    for label, r in zip(rows, m):
        click.echo(label + "\t" + "\t".join(f"{x:.6g}" for x in r))


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--graph", required=True, type=click.Path(exists=True))
@click.option("--user", "user_key", required=True)
@click.option("--k", default=10, show_default=True)
@click.option("--dump-relevance", is_flag=True, help="Print the user's node-level relevance matrices.")
@click.option("--dump-preference", is_flag=True, help="Print the user's preference-level relevance matrices.")
@_guard
def retrieve(checkpoint, graph, user_key, k, dump_relevance, dump_preference):
    """Score every video for one user and print the top k."""
    model = _load_model(checkpoint, graph)
    g = model.graph
    u = g.node(Kind.USER, user_key)
    res = retrieve_topk(model, u, k)
    for key, s in res.rows():
        click.echo(f"{key}\t{s:.7g}")
    if res.truncated:
        click.echo(f"# flag: k={k} exceeds the {g.n_videos} videos; all returned", err=True)
    if dump_relevance or dump_preference:
        videos, items, node, pref = model.inspect_user(u.index)
        vkeys = [g.keys[Kind.VIDEO][v] for v in videos]
        ikeys = [g.keys[Kind.ITEM][i] for i in items]
        if dump_relevance:
            if node is None:
                click.echo("# node matching disabled in this checkpoint")
            else:
                for title, m in zip(("raw", "row-normalised", "column-normalised"), node):
                    _dump_matrix(f"node relevance ({title})", vkeys, ikeys, m)
        if dump_preference:
            if pref is None:
                click.echo("# preference matching disabled in this checkpoint")
            else:
                for title, m in zip(("raw", "row-normalised", "column-normalised"), pref):
                    _dump_matrix(f"preference relevance ({title})", [f"video_pref{j}" for j in range(m.shape[0])],
                                 [f"item_pref{j}" for j in range(m.shape[1])], m)


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--graph", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@_guard
def export(checkpoint, graph, out):
    """Write videos.emb and users.emb (key, then float32 values)."""
    model = _load_model(checkpoint, graph)
    for path in export_embeddings(model, out):
        click.echo(str(path))


@main.command()
@click.option("--d", default=8, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--k", default=2, show_default=True, help="Preference count on both sides.")
@click.option("--rounds", default=1, show_default=True)
@click.option("--hidden", default=16, show_default=True, help="MLP hidden width.")
@click.option("--tol", default=1e-4, show_default=True)
@_guard
def gradcheck(d, seed, k, rounds, hidden, tol):
    """Compare analytic gradients with central finite differences."""
    t0 = time.perf_counter()
    model, batch, pos, negs = micro_problem(d=d, seed=seed, k=k, rounds=rounds, hidden=hidden)
    results = check_gradients(model, batch, pos, negs)
    click.echo("tensor\tsize\trel_error\tabs_error\tstatus")
    for r in results:
        click.echo(f"{r.name}\t{r.size}\t{r.rel_error:.3e}\t{r.abs_error:.3e}\t{'ok' if r.ok(tol) else 'FAIL'}")
    failed = [r.name for r in results if not r.ok(tol)]
    click.echo(f"# {len(results)} tensors, {len(failed)} failed, {time.perf_counter() - t0:.2f}s")
    if failed:
        sys.exit(2)


def _data_options(fn):
    opts = [
        click.option("--data", type=click.Path(exists=True), help="Directory with graph.gmng and val.tsv."),
        click.option("--users", default=5000, show_default=True),
        click.option("--videos", default=2000, show_default=True),
        click.option("--items", default=5000, show_default=True),
        click.option("--topics", default=20, show_default=True),
        click.option("--signal", default=0.8, show_default=True),
        click.option("--config", "config_path", type=click.Path(exists=True), help="Defaults to the desk preset."),
        click.option("--seeds", default="0", show_default=True, help="Comma-separated seeds."),
        click.option("--out", type=click.Path(), help="Also write the table here."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _source(data, users, videos, items, topics, signal):
    if data:
        g = load_graph(Path(data) / "graph.gmng")
        return fixed_source(g, read_samples(g, Path(data) / "val.tsv"))
    return SynthSource(users, videos, items, topics, signal)


@main.command()
@click.option("--variants", default="full,no-node-matching,no-pref-matching,no-uv-graph,no-ui-graph", show_default=True)
@_data_options
@_guard
def ablate(variants, data, users, videos, items, topics, signal, config_path, seeds, out):
    """Train ablation variants with shared seeds and data; print a TSV table."""
    config = GMNConfig.from_file(config_path) if config_path else DESK_CONFIG
    names = [v.strip() for v in variants.split(",") if v.strip()]
    table = run_ablation(config, names, _source(data, users, videos, items, topics, signal), _ints(seeds))
    _emit(table.to_tsv(), out)


@main.command()
@click.option("--knob", required=True, help="preference_count (k) or metric_rank (p).")
@click.option("--values", required=True, help="Comma-separated integers.")
@_data_options
@_guard
def sweep(knob, values, data, users, videos, items, topics, signal, config_path, seeds, out):
    """One train/evaluate per knob value; print a TSV table."""
    config = GMNConfig.from_file(config_path) if config_path else DESK_CONFIG
    table = run_sweep(config, knob, _ints(values), _source(data, users, videos, items, topics, signal), _ints(seeds))
    _emit(table.to_tsv(), out)


if __name__ == "__main__":
    main()
