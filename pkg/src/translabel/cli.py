"""Command-line entry points.

Subcommands: run (the full loop), transduct (single-shot inference), mine
(confusion report from a saved result), gen-attrs (static bootstrap or
pairwise generation), metrics, export-bank.  Option precedence is
defaults < flags < --config file, i.e. the config file wins.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import io as tio
from .attributes import ChatCompletionClient, LlmConfig, generate_for_pairs
from .confusion import mine as mine_report
from .confusion import select_pairs
from .graph import AffinityGraph, build_graph
from .mocks import HashEmbedder
from .pipeline import (
    RunConfig,
    apply_fewshot,
    bootstrap_static_bank,
    run,
)
from .solver import SolverConfig, transduct
from .state import ORIGIN_DYNAMIC, AttributeRecord


def _solver_from(ns) -> SolverConfig:
    return SolverConfig(
        lam=ns.lam,
        max_outer_iters=ns.max_outer_iters,
        z_tol=ns.z_tol,
        inner_z_iters=ns.inner_z_iters,
        gmm_weight_mode=ns.gmm_weight_mode,
        per_class_variance=ns.per_class_variance,
    )


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lam", type=float, default=1.0, help="text-prior weight")
    p.add_argument("--max-outer-iters", type=int, default=25)
    p.add_argument("--z-tol", type=float, default=1e-6)
    p.add_argument("--inner-z-iters", type=int, default=3)
    p.add_argument("--gmm-weight-mode", choices=["as-written", "unnormalized"],
                   default="as-written")
    p.add_argument("--per-class-variance", action="store_true")


def _add_io_flags(p: argparse.ArgumentParser, output=True) -> None:
    p.add_argument("--features", required=True, help="EMB1 embedding file")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--bank", default=None, help="attribute bank JSON")
    if output:
        p.add_argument("--output", required=True, help="result JSON path")


def _llm_from(ns) -> LlmConfig | None:
    if not ns.llm_url:
        return None
    return LlmConfig(
        endpoint_url=ns.llm_url,
        model_name=ns.llm_model,
        max_tokens=ns.llm_max_tokens,
        temperature=ns.llm_temperature,
    )


def _add_llm_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--llm-url", default=None, help="chat-completions endpoint")
    p.add_argument("--llm-model", default="llama-3.1")
    p.add_argument("--llm-max-tokens", type=int, default=500)
    p.add_argument("--llm-temperature", type=float, default=0.7)


def _cmd_run(ns) -> int:
    cfg = RunConfig(
        mode=ns.mode,
        iterations=ns.iterations,
        top_k=ns.top_k,
        alpha=ns.alpha,
        coverage_fraction=ns.coverage_fraction,
        knn=ns.knn,
        temperature=ns.temperature,
        solver=_solver_from(ns),
        llm=_llm_from(ns),
        bridge_url=ns.bridge,
        attribute_mode=ns.attribute_mode,
        enable_transduct=not ns.no_transduct,
        enable_adapt=ns.adapt,
        internal_transduct=not ns.single_transduct,
        allow_mock_embedder=ns.allow_mock_embedder,
        mock_embedder_dim=ns.mock_embedder_dim,
        adapt_steps=ns.adapt_steps,
        store_z=ns.store_z,
        seed=ns.seed,
        checkpoint_dir=ns.checkpoint_dir,
        features_path=ns.features,
        manifest_path=ns.manifest,
        bank_path=ns.bank,
        output_path=ns.output,
    )
    if ns.config:
        with open(ns.config, "r", encoding="utf-8") as f:
            overrides = json.load(f)
        for key, value in overrides.items():
            if key == "solver":
                for sk, sv in value.items():
                    setattr(cfg.solver, sk, sv)
            elif key == "llm":
                cfg.llm = LlmConfig(**value)
            elif hasattr(cfg, key):
                setattr(cfg, key, value)
            else:
                raise SystemExit(f"unknown config key {key!r}")
    result = run(cfg, resume_from=ns.resume)
    if result.metrics:
        print(json.dumps(result.metrics, indent=1))
    print(f"wrote {ns.output}")
    return 0


def _cmd_transduct(ns) -> int:
    manifest = tio.load_manifest(ns.manifest)
    features = tio.load_features(ns.features, manifest=manifest)
    bank = tio.load_bank(ns.bank)
    n = features.n
    graph = build_graph(features, min(ns.knn, n - 1)) if n >= 2 else AffinityGraph.empty(n)
    clamps = None
    if ns.fewshot:
        seed = apply_fewshot(manifest, np.full((n, manifest.num_classes),
                                               1.0 / manifest.num_classes))
        clamps = (seed.clamped, seed.clamp_labels)
    z, _gmm, trace = transduct(features, bank, graph, clamps=clamps,
                               cfg=_solver_from(ns), temperature=ns.temperature)
    labels = z.labels()
    metrics = None
    if manifest.truth() is not None:
        metrics = tio.compute_metrics(labels, manifest)
        print(json.dumps(metrics, indent=1))
    result = tio.RunResult(
        image_ids=list(features.ids),
        labels=labels,
        z=z.z if ns.store_z else None,
        metrics=metrics,
        objective_traces=[trace.objective_values],
    )
    tio.save_result(result, ns.output)
    print(f"wrote {ns.output}")
    return 0


def _cmd_mine(ns) -> int:
    result = tio.load_result(ns.result)
    if result.z is None:
        raise SystemExit("result has no z matrix; rerun with --store-z")
    report = mine_report(result.z, ns.alpha)
    report.coverage_fraction = ns.coverage_fraction
    report.selected_pairs = select_pairs(report, ns.coverage_fraction)
    tio.save_confusion_report(report, ns.output)
    print(f"{report.total_entries} confused images, "
          f"{len(report.pair_counts)} pairs, {len(report.selected_pairs)} selected")
    print(f"wrote {ns.output}")
    return 0


def _cmd_gen_attrs(ns) -> int:
    manifest = tio.load_manifest(ns.manifest)
    llm_cfg = _llm_from(ns)
    if llm_cfg is None:
        raise SystemExit("gen-attrs needs --llm-url")
    llm = ChatCompletionClient(llm_cfg)
    if ns.mock_embedder_dim:
        embedder = HashEmbedder(ns.mock_embedder_dim)
    elif ns.bridge:
        from .bridge_client import BridgeClient

        embedder = BridgeClient(ns.bridge).embed_text
    else:
        raise SystemExit("gen-attrs needs --bridge or --mock-embedder-dim")

    if ns.static:
        bank = bootstrap_static_bank(manifest.classes, manifest.domain_word, llm, embedder)
    else:
        if not ns.bank or not ns.report:
            raise SystemExit("pairwise generation needs --bank and --report")
        bank = tio.load_bank(ns.bank)
        report = tio.load_confusion_report(ns.report)
        pairs = [tuple(p) for p in report.selected_pairs]
        generated = generate_for_pairs(pairs, bank, llm, manifest.domain_word)
        new_items = [(g.class_index, t) for g in generated for t in g.texts]
        if new_items:
            embs = embedder([t for _, t in new_items])
            for (j, text), emb in zip(new_items, embs):
                bank.add(j, AttributeRecord(text, emb, ORIGIN_DYNAMIC, ns.iteration))
    tio.save_bank(bank, ns.output)
    print(f"wrote {ns.output}")
    return 0


def _cmd_metrics(ns) -> int:
    result = tio.load_result(ns.result)
    manifest = tio.load_manifest(ns.manifest)
    print(json.dumps(tio.compute_metrics(result.labels, manifest), indent=1))
    return 0


def _cmd_export_bank(ns) -> int:
    bank = tio.load_bank(ns.bank)
    emb_path, meta_path = tio.export_bank_embeddings(bank, ns.out_prefix)
    print(f"wrote {emb_path} and {meta_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="translabel",
        description="Transductive labeling over vision-language embeddings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full iterative loop")
    _add_io_flags(p)
    _add_solver_flags(p)
    _add_llm_flags(p)
    p.add_argument("--config", default=None, help="JSON overrides (win over flags)")
    p.add_argument("--mode", choices=["zero-shot", "few-shot", "seen-classes"],
                   default="zero-shot")
    p.add_argument("--iterations", "-T", type=int, default=30)
    p.add_argument("--top-k", type=int, default=8)
    p.add_argument("--alpha", type=float, default=0.1,
                   help="confusion margin threshold (use 0.05 for very large runs)")
    p.add_argument("--coverage-fraction", type=float, default=0.05)
    p.add_argument("--knn", type=int, default=3)
    p.add_argument("--temperature", type=float, default=0.01)
    p.add_argument("--bridge", default=None, help="encoder bridge base URL")
    p.add_argument("--attribute-mode", choices=["dynamic", "static", "class-prompts"],
                   default="dynamic")
    p.add_argument("--no-transduct", action="store_true")
    p.add_argument("--adapt", action="store_true")
    p.add_argument("--single-transduct", action="store_true",
                   help="skip the transduction before attribute generation")
    p.add_argument("--allow-mock-embedder", action="store_true")
    p.add_argument("--mock-embedder-dim", type=int, default=None)
    p.add_argument("--adapt-steps", type=int, default=None)
    p.add_argument("--store-z", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-dir", default=None)
    p.add_argument("--resume", default=None, help="checkpoint JSON to resume from")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("transduct", help="single-shot transductive inference")
    _add_io_flags(p)
    _add_solver_flags(p)
    p.add_argument("--knn", type=int, default=3)
    p.add_argument("--temperature", type=float, default=0.01)
    p.add_argument("--fewshot", action="store_true",
                   help="clamp rows listed in the manifest fewshot labels")
    p.add_argument("--store-z", action="store_true")
    p.set_defaults(func=_cmd_transduct)

    p = sub.add_parser("mine", help="confusion report from a stored result")
    p.add_argument("--result", required=True, help="result JSON with a z matrix")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--coverage-fraction", type=float, default=0.05)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_mine)

    p = sub.add_parser("gen-attrs", help="generate attributes into a bank")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bank", default=None)
    p.add_argument("--report", default=None, help="confusion report JSON")
    p.add_argument("--static", action="store_true",
                   help="bootstrap the per-class static attributes")
    p.add_argument("--iteration", type=int, default=0)
    p.add_argument("--bridge", default=None)
    p.add_argument("--mock-embedder-dim", type=int, default=None)
    p.add_argument("--output", required=True)
    _add_llm_flags(p)
    p.set_defaults(func=_cmd_gen_attrs)

    p = sub.add_parser("metrics", help="accuracy of a stored result")
    p.add_argument("--result", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("export-bank", help="dump bank embeddings + metadata")
    p.add_argument("--bank", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_export_bank)

    return parser


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
