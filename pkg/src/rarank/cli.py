"""Command-line orchestration for batch runs.

Subcommands: build-memory, build-index, retrieve, predict, eval,
gen-finetune, crop-regions. Option precedence is flags > config file
(YAML, --config) > environment (RAR_RANKER_URL) > defaults.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 backend unreachable
(every query fell back).
"""
from __future__ import annotations

import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor, as_completed

import click
import numpy as np
import yaml

from . import runlog
from .datagen import DatagenParams, generate_ranking_dataset, write_entries_jsonl
from .errors import RarankError
from .index import HnswIndex
from .metrics import build_report, load_buckets
from .rank import (
    IdentityRanker,
    OracleRanker,
    PromptStyle,
    RemoteRanker,
    rerank,
)
from .regions import BBox, RegionParams, preprocess_region
from .retrieve import (
    RetrievalMode,
    TextBank,
    retrieve_categories_i2i,
    retrieve_categories_i2t,
)
from .store import load_records_jsonl, read_memory_file, write_memory_file
from .validation import normalize

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3


@click.group()
def cli():
    """Retrieve-and-rank batch tooling."""


def _load_queries(path) -> list[dict]:
    queries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "id" not in obj or "vector" not in obj:
                raise RarankError(f"{path}:{lineno}: query needs 'id' and 'vector'")
            queries.append(
                {
                    "id": int(obj["id"]),
                    "vector": normalize(np.asarray(obj["vector"], dtype=np.float32)),
                    "label": obj.get("label"),
                    "image_ref": obj.get("image_ref"),
                }
            )
    if not queries:
        raise RarankError(f"{path}: no queries")
    return queries


def _resolve(flag_value, config: dict, key: str, env_var: str | None, default):
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    if env_var and os.environ.get(env_var):
        return os.environ[env_var]
    return default


def _read_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        loaded = yaml.safe_load(fh) or {}
    if not isinstance(loaded, dict):
        raise RarankError(f"{path}: config file must be a mapping")
    return loaded


@cli.command("build-memory")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="Line-delimited records: id, modality, label, vector.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--no-normalize", is_flag=True, help="Trust vectors to be unit-norm already.")
def build_memory(input_path, out_path, no_normalize):
    """Ingest interchange records into a binary memory file."""
    store = load_records_jsonl(input_path, renormalize=not no_normalize)
    written = write_memory_file(store, out_path)
    click.echo(f"wrote {out_path}: {len(store)} records, d={store.dimension}, {written} bytes")


@cli.command("build-index")
@click.option("--memory", "memory_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--m", default=16, show_default=True)
@click.option("--ef-construction", default=200, show_default=True)
@click.option("--ef-search", default=256, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--reduce", "reduce_mode", type=click.Choice(["auto", "always", "never"]),
              default="auto", show_default=True,
              help="Project to out-dim before graph construction.")
@click.option("--out-dim", default=None, type=int, help="Reduced dimension (default d/9 rounded up).")
def build_index(memory_path, out_path, m, ef_construction, ef_search, seed, reduce_mode, out_dim):
    """Build the graph index for a memory file."""
    store = read_memory_file(memory_path)
    reduce = {"auto": "auto", "always": True, "never": False}[reduce_mode]
    index = HnswIndex(
        m=m, ef_construction=ef_construction, ef_search=ef_search, seed=seed,
        reduce=reduce, out_dim=out_dim,
    ).fit(store)
    written = index.save(out_path)
    reduced = "none" if index.projection_ is None else f"{store.dimension}->{index.projection_.out_dim_}"
    click.echo(f"wrote {out_path}: {len(store)} nodes, projection {reduced}, {written} bytes")


def _prepare_retrieval(memory_path, index_path, mode: RetrievalMode):
    store = read_memory_file(memory_path)
    if mode is RetrievalMode.IMAGE_TO_IMAGE:
        if index_path is None:
            raise RarankError("i2i mode needs --index")
        index = HnswIndex.load(index_path, store)
        return store, index, None
    return store, None, TextBank.from_store(store)


def _retrieve_one(mode, index, bank, vector, k):
    if mode is RetrievalMode.IMAGE_TO_IMAGE:
        return retrieve_categories_i2i(index, vector, k)
    return retrieve_categories_i2t(bank, vector, k)


@cli.command("retrieve")
@click.option("--memory", "memory_path", required=True, type=click.Path(exists=True))
@click.option("--index", "index_path", default=None, type=click.Path(exists=True))
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True))
@click.option("--k", default=5, show_default=True)
@click.option("--mode", type=click.Choice(["i2i", "i2t"]), default="i2i", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def retrieve_cmd(memory_path, index_path, queries_path, k, mode, out_path):
    """Write top-k candidate categories per query, no ranking."""
    mode = RetrievalMode(mode)
    _, index, bank = _prepare_retrieval(memory_path, index_path, mode)
    queries = _load_queries(queries_path)
    with open(out_path, "w", encoding="utf-8") as fh:
        for q in queries:
            cands = _retrieve_one(mode, index, bank, q["vector"], k)
            fh.write(runlog.canonical_json({
                "query_id": q["id"],
                "label": q["label"],
                "mode": mode.value,
                "candidates": [[name, sim] for name, sim in cands.candidates],
                "insufficient": cands.insufficient,
            }) + "\n")
    click.echo(f"wrote {out_path}: {len(queries)} queries")


@cli.command("predict")
@click.option("--memory", "memory_path", required=True, type=click.Path(exists=True))
@click.option("--index", "index_path", default=None, type=click.Path(exists=True))
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True))
@click.option("--k", default=None, type=int, help="Candidates per query [default: 5].")
@click.option("--mode", type=click.Choice(["i2i", "i2t"]), default=None)
@click.option("--backend", type=click.Choice(["identity", "oracle", "remote"]), default=None,
              help="Ranker backend [default: identity].")
@click.option("--ranker-url", default=None, help="Remote backend root (or RAR_RANKER_URL).")
@click.option("--ranker-timeout", default=None, type=float, help="Per-request timeout [default: 60s].")
@click.option("--ranker-retries", default=None, type=int, help="Retries after the first attempt [default: 3].")
@click.option("--prompt-style", type=click.Choice(["plain", "in_context"]), default=None)
@click.option("--seed", default=None, type=int)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True),
              help="YAML config; flags override it, it overrides env/defaults.")
@click.option("--workers", default=None, type=int,
              help="Parallel queries [default: cpu count]. Use 1 for byte-stable log order.")
@click.option("--timing", is_flag=True,
              help="Record per-query wall time (makes logs non-reproducible).")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def predict(ctx, memory_path, index_path, queries_path, k, mode, backend, ranker_url,
            ranker_timeout, ranker_retries, prompt_style, seed, config_path, workers,
            timing, out_path):
    """Retrieve candidates and rank them; one log line per query."""
    file_cfg = _read_config_file(config_path)
    k = int(_resolve(k, file_cfg, "k", None, 5))
    mode_name = _resolve(mode, file_cfg, "mode", None, "i2i")
    backend_name = _resolve(backend, file_cfg, "backend", None, "identity")
    ranker_url = _resolve(ranker_url, file_cfg, "ranker_url", "RAR_RANKER_URL", None)
    ranker_timeout = float(_resolve(ranker_timeout, file_cfg, "ranker_timeout", None, 60.0))
    ranker_retries = int(_resolve(ranker_retries, file_cfg, "ranker_retries", None, 3))
    style_name = _resolve(prompt_style, file_cfg, "prompt_style", None, "plain")
    seed = int(_resolve(seed, file_cfg, "seed", None, 0))
    workers = int(_resolve(workers, file_cfg, "workers", None, os.cpu_count() or 1))

    mode_enum = RetrievalMode(mode_name)
    style = PromptStyle(style_name)
    queries = _load_queries(queries_path)
    _, index, bank = _prepare_retrieval(memory_path, index_path, mode_enum)

    if backend_name == "identity":
        ranker = IdentityRanker()
    elif backend_name == "oracle":
        ranker = OracleRanker({q["id"]: q["label"] for q in queries if q["label"] is not None})
    elif backend_name == "remote":
        if not ranker_url:
            raise click.UsageError("remote backend needs --ranker-url or RAR_RANKER_URL")
        ranker = RemoteRanker(ranker_url, timeout=ranker_timeout, retries=ranker_retries)
    else:  # pragma: no cover - click restricts choices
        raise click.UsageError(f"unknown backend {backend_name}")

    config = {
        "memory": str(memory_path),
        "index": None if index_path is None else str(index_path),
        "queries": str(queries_path),
        "k": k,
        "mode": mode_enum.value,
        "backend": backend_name,
        "ranker_url": ranker_url,
        "prompt_style": style.value,
        "seed": seed,
    }

    def run_one(q):
        started = time.perf_counter()
        try:
            cands = _retrieve_one(mode_enum, index, bank, q["vector"], k)
            pred = rerank(cands, ranker, style=style, image_ref=q["image_ref"], query_id=q["id"])
        except RarankError as exc:
            return q, None, 0.0, str(exc)
        elapsed = (time.perf_counter() - started) * 1000.0
        return q, pred, elapsed, None

    fell_back_unreachable = 0
    failures = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(runlog.header_line(config) + "\n")
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            futures = [pool.submit(run_one, q) for q in queries]
            # Single worker keeps submission order, so logs are byte-stable;
            # otherwise lines land in completion order (content still per-query
            # deterministic).
            iterator = futures if workers <= 1 else as_completed(futures)
            for fut in iterator:
                q, pred, elapsed, error = fut.result()
                if error is not None:
                    failures += 1
                    click.echo(f"query {q['id']} failed: {error}", err=True)
                    fh.write(runlog.query_error_line(q["id"], error) + "\n")
                    continue
                if pred.error is not None:
                    fell_back_unreachable += 1
                fh.write(
                    runlog.prediction_line(
                        q["id"], pred, label=q["label"], image_ref=q["image_ref"],
                        elapsed_ms=elapsed if timing else None,
                    )
                    + "\n"
                )
    click.echo(f"wrote {out_path}: {len(queries)} queries, {failures} failures")
    if backend_name == "remote" and fell_back_unreachable == len(queries):
        raise SystemExit(EXIT_BACKEND)


def _embedding_name_sim(url: str, names):
    """Build a name-similarity function from an /embed wire-contract service.

    Category names are embedded once as text; similarity is their cosine
    clamped to [0, 1].
    """
    import requests

    ordered = sorted(set(names))
    items = [{"id": i, "kind": "text", "payload": name} for i, name in enumerate(ordered)]
    try:
        resp = requests.post(f"{url.rstrip('/')}/embed", json={"items": items}, timeout=60)
        resp.raise_for_status()
        vectors = np.asarray(resp.json()["vectors"], dtype=np.float64)
    except (requests.RequestException, KeyError, ValueError) as exc:
        raise RarankError(f"name-similarity service failed: {exc}") from None
    lookup = {name: vectors[i] for i, name in enumerate(ordered)}

    def sim(a: str, b: str) -> float:
        va, vb = lookup.get(a), lookup.get(b)
        if va is None or vb is None:
            return 1.0 if a == b else 0.0
        return max(0.0, float(va @ vb))

    return sim


@cli.command("eval")
@click.option("--log", "log_path", required=True, type=click.Path(exists=True))
@click.option("--buckets", "buckets_path", default=None, type=click.Path(exists=True),
              help="name<TAB>rare|common|frequent lines; enables bucketed AP.")
@click.option("--name-sim-url", default=None,
              help="/embed service root; sACC then uses embedding cosine "
                   "instead of exact name match.")
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Write the machine-readable report here.")
def eval_cmd(log_path, buckets_path, name_sim_url, out_path):
    """Compute metrics from a run log (header fingerprint must verify)."""
    header, records, errors = runlog.read_log(log_path)
    if errors:
        click.echo(f"note: {len(errors)} queries failed during the run", err=True)
    preds = runlog.labeled_predictions(records)
    buckets = load_buckets(buckets_path) if buckets_path else None
    name_sim = None
    if name_sim_url:
        names = {p.ground_truth for p in preds} | {p.predicted_ordering[0] for p in preds}
        name_sim = _embedding_name_sim(name_sim_url, names)
    report = build_report(
        preds, max_k=int(header["config"].get("k", 5)), buckets=buckets, name_sim=name_sim
    )
    click.echo(report.to_text())
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(
                {"fingerprint": header["fingerprint"], "report": report.to_dict()},
                fh, indent=2, sort_keys=True,
            )
            fh.write("\n")
        click.echo(f"wrote {out_path}")


@cli.command("gen-finetune")
@click.option("--memory-a", "memory_a", required=True, type=click.Path(exists=True))
@click.option("--memory-b", "memory_b", required=True, type=click.Path(exists=True))
@click.option("--pool", default=20, show_default=True)
@click.option("--sets", "sets_per_query", default=16, show_default=True)
@click.option("--k", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--gt-first", is_flag=True,
              help="Alternative target order: ground truth first instead of similarity order.")
@click.option("--image-ref-template", default="{id}", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def gen_finetune(memory_a, memory_b, pool, sets_per_query, k, seed, gt_first,
                 image_ref_template, out_path):
    """Generate the ranking fine-tuning dataset from two disjoint memories."""
    store_a = read_memory_file(memory_a)
    store_b = read_memory_file(memory_b)
    params = DatagenParams(
        pool=pool, sets_per_query=sets_per_query, k=k, seed=seed,
        target_order="gt_first" if gt_first else "similarity",
    )
    entries = generate_ranking_dataset(store_a, store_b, params, image_ref_template)
    written = write_entries_jsonl(entries, out_path)
    click.echo(f"wrote {out_path}: {len(entries)} entries, {written} bytes")


@cli.command("crop-regions")
@click.option("--proposals", "proposals_path", required=True, type=click.Path(exists=True),
              help="TSV lines: image path, x0, y0, x1, y1, label.")
@click.option("--out-dir", "out_dir", required=True, type=click.Path())
@click.option("--crop-scale", default=1.6, show_default=True)
@click.option("--blur/--no-blur", default=True, show_default=True)
@click.option("--blur-sigma", default=10.0, show_default=True)
@click.option("--out-size", default=224, show_default=True)
def crop_regions(proposals_path, out_dir, crop_scale, blur, blur_sigma, out_size):
    """Preprocess proposal boxes into fixed-size crops plus a manifest."""
    from PIL import Image

    params = RegionParams(crop_scale=crop_scale, blur=blur, blur_sigma=blur_sigma, out_size=out_size)
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    count = 0
    with open(proposals_path, "r", encoding="utf-8") as fh, \
            open(manifest_path, "w", encoding="utf-8") as manifest:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise RarankError(
                    f"{proposals_path}:{lineno}: expected 6 tab-separated fields, got {len(parts)}"
                )
            image_path, x0, y0, x1, y1, label = parts
            box = BBox(int(x0), int(y0), int(x1), int(y1))
            image = np.asarray(Image.open(image_path).convert("RGB"))
            crop = preprocess_region(image, box, params)
            out_name = f"crop_{count:06d}.png"
            Image.fromarray(crop).save(os.path.join(out_dir, out_name))
            manifest.write(runlog.canonical_json({
                "image": image_path,
                "bbox": [box.x0, box.y0, box.x1, box.y1],
                "label": label,
                "crop": out_name,
                "crop_scale": params.crop_scale,
                "blur": params.blur,
                "blur_sigma": params.blur_sigma,
                "out_size": params.out_size,
            }) + "\n")
            count += 1
    click.echo(f"wrote {count} crops to {out_dir}")


def main(argv=None) -> int:
    """Entry point mapping failures onto the documented exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    except (RarankError, OSError, json.JSONDecodeError, yaml.YAMLError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
