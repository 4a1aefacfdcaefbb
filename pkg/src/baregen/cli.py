"""Operator surface: generate -> analyze -> ir -> compare.

Exit codes: 0 success, 2 config error, 3 generation budget exhausted,
4 transport exhausted. Reports are written as JSON/CSV with a rendered
figure next to each, under ``<run_dir>/reports/``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys
from pathlib import Path

import click

from . import datastore, figures, metrics
from .client import ModelClient, RetryPolicy
from .config import RunConfig, load_run_config
from .datastore import ResponseCache, RunDirectory
from .errors import (
    BaregenError,
    BudgetExhausted,
    ConfigError,
    MissingReport,
    TransportError,
)
from .prompting import load_template_text
from .strategies import GenerationEngine
from .types import Dataset, RunManifest, canonical_json, sha256_hex

_EXIT_CONFIG = 2
_EXIT_BUDGET = 3
_EXIT_TRANSPORT = 4


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn):
    try:
        fn()
    except ConfigError as exc:
        _fail(str(exc), _EXIT_CONFIG)
    except BudgetExhausted as exc:
        _fail(str(exc), _EXIT_BUDGET)
    except TransportError as exc:
        _fail(str(exc), _EXIT_TRANSPORT)
    except BaregenError as exc:
        _fail(str(exc), 1)


@click.group()
def main():
    """Synthetic dataset generation and evaluation."""


def _make_client(cache_dir: Path, *, seed: int, concurrency: int,
                 batch_size: int = 1000, retry: RetryPolicy | None = None) -> ModelClient:
    return ModelClient(cache=ResponseCache(cache_dir), concurrency_limit=concurrency,
                       embed_batch_size=batch_size, mock_seed=seed, retry=retry)


def _execute_strategy(cfg: RunConfig, engine: GenerationEngine) -> Dataset:
    s, spec, eps, shots = cfg.strategy, cfg.domain, cfg.endpoints, cfg.few_shot_examples
    if s.name == "independent":
        return engine.generate_independent(s, spec, eps[s.generator], shots)
    if s.name == "persona":
        return engine.generate_persona(s, spec, eps["instruct"], shots)
    if s.name == "sequential":
        return engine.generate_sequential(s, spec, eps["instruct"], shots)
    if s.name == "in_one":
        return engine.generate_in_one(s, spec, eps["instruct"], shots)
    if s.name == "dynamic_fewshot":
        return engine.generate_dynamic_fewshot(s, spec, eps["instruct"])
    if s.name == "bare":
        return engine.generate_bare(s, spec, eps["base"], eps["refine"], shots)
    if s.name == "instruct_refine":
        return engine.generate_instruct_refine(s, spec, eps["instruct"], eps["refine"], shots)
    raise ConfigError(f"unknown strategy {s.name!r}")


def run_generate(config_path: str | Path) -> RunDirectory:
    """Config in, fully populated run directory out."""
    cfg = load_run_config(config_path)
    run_dir = RunDirectory(Path(cfg.output_dir)).initialize()
    client = _make_client(run_dir.cache_dir, seed=cfg.global_seed,
                          concurrency=cfg.concurrency_limit,
                          batch_size=cfg.embed_batch_size,
                          retry=RetryPolicy(max_attempts=cfg.retry_max_attempts,
                                            base_delay=cfg.retry_base_delay))
    engine = GenerationEngine(client, cfg.global_seed, cfg.templates_dir)

    # Provenance lands on disk before any dataset row does.
    skeleton = RunManifest(requested_n=cfg.strategy.n, domain=cfg.domain.name,
                           strategy=cfg.strategy.name, global_seed=cfg.global_seed,
                           domain_spec=cfg.domain)
    datastore.write_manifest(skeleton, run_dir)

    try:
        ds = _execute_strategy(cfg, engine)
    finally:
        # Keep whatever happened for post-mortem, even on failure.
        datastore.append_events(run_dir, engine.sorted_events())

    extra = {name: ep for name, ep in cfg.endpoints.items()
             if name in ("embedding", "judge") and name not in ds.manifest.endpoints}
    if extra:
        manifest = dataclasses.replace(
            ds.manifest, endpoints={**ds.manifest.endpoints, **extra})
        ds = dataclasses.replace(ds, manifest=manifest)

    datastore.write_dataset(ds, run_dir)
    for filename in ds.manifest.prompt_hashes:
        text = load_template_text(filename, cfg.domain.name, cfg.templates_dir)
        (run_dir.prompts_dir / filename).write_text(text, encoding="utf-8")
    return run_dir


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
def generate(config_path):
    """Run the configured strategy; print the run directory."""
    def body():
        run_dir = run_generate(config_path)
        click.echo(str(run_dir.root))
    _guard(body)


def run_analyze(run_dir_path: str | Path, bin_width: float,
                same_class_only: bool) -> dict:
    run_dir = RunDirectory(Path(run_dir_path))
    ds = datastore.read_dataset(run_dir)
    spec = ds.manifest.domain_spec
    if spec is None:
        raise ConfigError("manifest carries no domain spec; cannot analyze")
    embed_ep = ds.manifest.endpoints.get("embedding")
    if embed_ep is None:
        raise ConfigError("run manifest has no embedding endpoint")
    client = _make_client(run_dir.cache_dir, seed=ds.manifest.global_seed,
                          concurrency=8)
    texts = [r.final_text for r in ds.records]
    embeddings = client.embed(texts, embed_ep)
    labels = [r.class_label for r in ds.records]
    report = metrics.pairwise_similarity(
        embeddings, labels=labels if any(l is not None for l in labels) else None,
        class_restricted=same_class_only, bin_width=bin_width)

    run_dir.reports_dir.mkdir(parents=True, exist_ok=True)
    (run_dir.reports_dir / "similarity.json").write_text(
        canonical_json(report.to_dict()) + "\n", encoding="utf-8")
    with open(run_dir.reports_dir / "similarity_hist.csv", "w", newline="",
              encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_lower", "count"])
        for lo, count in report.histogram:
            writer.writerow([f"{lo:.6g}", count])
    figures.save_similarity_histogram(
        report, run_dir.reports_dir / "similarity_hist.png",
        title=f"{ds.manifest.strategy} on {ds.manifest.domain}")

    out = {"similarity": report}
    if spec.class_set:
        coverage = metrics.class_coverage(ds, spec)
        (run_dir.reports_dir / "coverage.json").write_text(
            canonical_json(coverage.to_dict()) + "\n", encoding="utf-8")
        figures.save_coverage_chart(coverage, spec.class_set,
                                    run_dir.reports_dir / "coverage.png")
        out["coverage"] = coverage
    datastore.append_events(run_dir, [{
        "kind": "analyze", "bin_width": bin_width,
        "class_restricted": same_class_only,
        "dataset_digest": ds.manifest.dataset_digest,
        "mean_similarity": report.mean_similarity,
    }])
    return out


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--bin-width", default=metrics.DEFAULT_BIN_WIDTH, show_default=True,
              help="Histogram bin width over [-1, 1].")
@click.option("--same-class-only", is_flag=True,
              help="Average only same-class pairs (for class-conditioned domains).")
def analyze(run_dir, bin_width, same_class_only):
    """Embed the dataset and report pairwise similarity (+ coverage)."""
    def body():
        out = run_analyze(run_dir, bin_width, same_class_only)
        report = out["similarity"]
        click.echo(f"mean similarity {report.mean_similarity:.4f} "
                   f"over {report.pair_count} pairs")
        if "coverage" in out:
            cov = out["coverage"]
            click.echo(f"coverage {cov.coverage_fraction:.2%} "
                       f"({len(cov.covered)}/{cov.class_set_size})")
    _guard(body)


def run_ir(run_dir_path: str | Path, real_pool_path: str | Path,
           trials: int | None, k: int, seed: int | None = None) -> metrics.IRReport:
    run_dir = RunDirectory(Path(run_dir_path))
    ds = datastore.read_dataset(run_dir)
    spec = ds.manifest.domain_spec
    judge_ep = ds.manifest.endpoints.get("judge")
    if judge_ep is None:
        raise ConfigError("run manifest has no judge endpoint")
    pool_examples = datastore.read_examples(real_pool_path, spec) if spec else []
    pool = [datastore.example_text(e) for e in pool_examples]
    client = _make_client(run_dir.cache_dir, seed=ds.manifest.global_seed,
                          concurrency=8)
    report = metrics.indistinguishability_rate(
        client, ds, pool, judge_ep, k=k, trials=trials,
        seed=seed if seed is not None else ds.manifest.global_seed)
    run_dir.reports_dir.mkdir(parents=True, exist_ok=True)
    (run_dir.reports_dir / "ir.json").write_text(
        canonical_json(report.to_dict()) + "\n", encoding="utf-8")
    figures.save_ir_chart(report, run_dir.reports_dir / "ir.png")
    datastore.append_events(run_dir, [{
        "kind": "ir", "k": k, "trials": report.trials,
        "seed": seed if seed is not None else ds.manifest.global_seed,
        "pool_digest": sha256_hex(canonical_json(sorted(pool))),
        "rate": report.rate,
    }])
    return report


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("real_pool", type=click.Path(exists=True, dir_okay=False))
@click.option("--trials", default=None, type=int,
              help="Judge trials (default: min(dataset size, 200)).")
@click.option("--k", default=metrics.DEFAULT_PANEL_SIZE, show_default=True,
              help="Panel size: 1 synthetic + k-1 real entries.")
def ir(run_dir, real_pool, trials, k):
    """Measure the indistinguishability rate with the configured judge."""
    def body():
        report = run_ir(run_dir, real_pool, trials, k)
        click.echo(f"IR {report.rate:.4f} ({report.fooled} fooled, "
                   f"{report.unparseable} unparseable, {report.trials} trials)")
    _guard(body)


def run_compare(run_dirs: list[str | Path], out_path: str | Path) -> list[dict]:
    rows = []
    for d in run_dirs:
        run_dir = RunDirectory(Path(d))
        manifest = datastore.read_manifest(run_dir)
        sim_path = run_dir.reports_dir / "similarity.json"
        if not sim_path.is_file():
            raise MissingReport(f"{d}: no similarity report; run analyze first")
        sim = json.loads(sim_path.read_text(encoding="utf-8"))
        row = {
            "run": Path(d).name,
            "strategy": manifest.strategy,
            "mean_similarity": sim["mean_similarity"],
            "ir_rate": None,
            "coverage": None,
            "discard_count": manifest.discard_count,
        }
        ir_path = run_dir.reports_dir / "ir.json"
        if ir_path.is_file():
            row["ir_rate"] = json.loads(ir_path.read_text(encoding="utf-8"))["rate"]
        else:
            click.echo(f"warning: {d} has no ir.json; leaving the IR cell empty",
                       err=True)
        cov_path = run_dir.reports_dir / "coverage.json"
        if cov_path.is_file():
            row["coverage"] = json.loads(
                cov_path.read_text(encoding="utf-8"))["coverage_fraction"]
        rows.append(row)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["run", "strategy", "mean_similarity", "ir_rate",
                         "coverage", "discard_count"])
        for row in rows:
            writer.writerow([
                row["run"], row["strategy"], f"{row['mean_similarity']:.6f}",
                "" if row["ir_rate"] is None else f"{row['ir_rate']:.6f}",
                "" if row["coverage"] is None else f"{row['coverage']:.4f}",
                row["discard_count"],
            ])
    figures.save_comparison_chart(rows, out_path.with_suffix(".png"))
    return rows


@main.command()
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--out", default="comparison.csv", show_default=True,
              type=click.Path(dir_okay=False))
def compare(run_dirs, out):
    """Tabulate similarity/IR/coverage across runs, in argument order."""
    def body():
        rows = run_compare(list(run_dirs), out)
        click.echo(f"wrote {len(rows)} rows to {out}")
    _guard(body)


@main.group()
def cache():
    """Response cache maintenance."""


@cache.command("clear")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def cache_clear(run_dir):
    """Delete every cached response under a run directory."""
    def body():
        count = ResponseCache(RunDirectory(Path(run_dir)).cache_dir).clear()
        click.echo(f"removed {count} cache entries")
    _guard(body)


if __name__ == "__main__":
    main()
