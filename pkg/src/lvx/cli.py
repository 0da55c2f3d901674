"""Command-line harness.

    lvx build-tree|refine|explain|baseline|evaluate|stability|export-dot
        --config <path> [--k N] [--t-max N] [--epsilon X] [--seed N]
        [--replay <transcript>]

Exit codes: 0 success, 2 validation error, 3 data mismatch, 4 upstream
(LLM) error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

from . import baselines as bl
from .config import ConfigError, RunConfig, load_config, write_manifest
from .dot import to_dot
from .embeddings import (EmbeddingError, EmbeddingStore, load_embeddings)
from .llm import (LlmClient, LlmError, PromptKind, RequestKey, Transcript,
                  parse_attribute_response, render_prompt)
from .metrics import MetricReport, evaluate_pairs, mscd
from .refine import (FileSupportSource, NullSupportSource, RefinementError,
                     refine)
from .routing import RoutingError, explain, rank_nodes
from .tree import (AttributeTree, TreeError, TreeNode, parse_tree,
                   serialize_tree, tree_to_obj)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3
EXIT_UPSTREAM = 4


class DataMismatchError(Exception):
    pass


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def _load_trees(dir_path: str) -> dict[str, AttributeTree]:
    if not os.path.isdir(dir_path):
        raise ConfigError(f"trees directory not found: {dir_path}")
    trees: dict[str, AttributeTree] = {}
    for fname in sorted(os.listdir(dir_path)):
        if not fname.endswith(".json"):
            continue
        with open(os.path.join(dir_path, fname), "r", encoding="utf-8") as fh:
            t = parse_tree(fh.read())
        trees[t.category] = t
    if not trees:
        raise ConfigError(f"no tree files in {dir_path}")
    return trees


def _write_trees(trees: dict[str, AttributeTree], dir_path: str) -> None:
    os.makedirs(dir_path, exist_ok=True)
    for cat in sorted(trees):
        path = os.path.join(dir_path, _slug(cat) + ".json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(serialize_tree(trees[cat]) + "\n")


def _make_llm(cfg: RunConfig) -> LlmClient:
    transcript_path = cfg.resolve(cfg.paths.transcript)
    if cfg.llm_mode == "replay":
        if not transcript_path or not os.path.exists(transcript_path):
            raise ConfigError(
                f"replay mode requires an existing transcript, got "
                f"{transcript_path!r}")
        return LlmClient(mode="replay",
                         transcript=Transcript.load(transcript_path))
    return LlmClient(mode="live")


def _support_source(cfg: RunConfig, store: EmbeddingStore):
    manifest = cfg.resolve(cfg.paths.support_manifest)
    if not manifest:
        return NullSupportSource()
    with open(manifest, "r", encoding="utf-8") as fh:
        mapping = json.load(fh)
    sup_path = cfg.resolve(cfg.paths.support_embeddings)
    if sup_path:
        sup_store = load_embeddings(sup_path)
        for emb in sup_store.items():
            if emb.id not in store:
                store.add(emb)
    return FileSupportSource(store, mapping)


def _distance_store(cfg: RunConfig) -> EmbeddingStore:
    """Embeddings used for support-set distances: the training file plus
    any separate support-embedding file."""
    store = load_embeddings(cfg.resolve(cfg.paths.embeddings)) \
        if cfg.paths.embeddings else EmbeddingStore()
    sup_path = cfg.resolve(cfg.paths.support_embeddings)
    if sup_path and os.path.exists(sup_path):
        for emb in load_embeddings(sup_path).items():
            if emb.id not in store:
                store.add(emb)
    return store


def _labeled_samples(store: EmbeddingStore):
    return [(emb, emb.label) for emb in sorted(store.items(), key=lambda e: e.id)
            if emb.label]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_build_tree(cfg: RunConfig) -> int:
    if not cfg.classes:
        raise ConfigError("build-tree requires a nonempty 'classes' list")
    llm = _make_llm(cfg)
    trees: dict[str, AttributeTree] = {}
    for cls in cfg.classes:
        key = RequestKey(kind=PromptKind.INITIAL_ATTRIBUTES.value,
                         category=cls, node="", iteration=0)
        prompt = render_prompt(PromptKind.INITIAL_ATTRIBUTES,
                               {"class_name": cls}, llm.in_context_example)
        response = llm.complete(key, prompt)
        t = parse_attribute_response(response)
        if t.category != cls:
            # anchor the root at the requested class name
            root = t.nodes[t.root_id]
            t.nodes[t.root_id] = TreeNode(id=root.id, label=cls, kind=root.kind,
                                          children=root.children,
                                          support_ref=root.support_ref)
            t = AttributeTree(category=cls, nodes=t.nodes, root_id=t.root_id)
        trees[cls] = t
    out_dir = cfg.resolve(cfg.paths.output_dir)
    _write_trees(trees, os.path.join(out_dir, "trees"))
    if cfg.llm_mode == "live":
        llm.transcript.save(os.path.join(out_dir, "transcript.jsonl"))
    write_manifest(cfg, "build-tree", out_dir)
    return EXIT_OK


def cmd_refine(cfg: RunConfig) -> int:
    trees = _load_trees(cfg.resolve(cfg.paths.trees_dir))
    store = load_embeddings(cfg.resolve(cfg.paths.embeddings))
    samples = _labeled_samples(store)
    samples = [(q, cat) for q, cat in samples if cat in trees]
    llm = _make_llm(cfg)
    source = _support_source(cfg, store)
    refined = refine(trees, samples, store, llm, source, cfg.refinement,
                     cfg.distance)
    out_dir = cfg.resolve(cfg.paths.output_dir)
    _write_trees(refined, os.path.join(out_dir, "trees-refined"))
    if cfg.llm_mode == "live":
        llm.transcript.save(os.path.join(out_dir, "transcript.jsonl"))
    write_manifest(cfg, "refine", out_dir)
    return EXIT_OK


def _explanation_record(sample_id: str, predicted: str, method: str,
                        expl, node_distances) -> dict:
    return {
        "sample_id": sample_id,
        "predicted": predicted,
        "method": method,
        "explanation": tree_to_obj(expl),
        "node_distances": [{"label": lbl, "distance": d}
                           for lbl, d in node_distances],
    }


def cmd_explain(cfg: RunConfig) -> int:
    trees = _load_trees(cfg.resolve(cfg.paths.trees_dir))
    store = _distance_store(cfg)
    test_store = load_embeddings(cfg.resolve(cfg.paths.test_embeddings))
    out_dir = cfg.resolve(cfg.paths.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "explanations.jsonl")
    with open(out_path, "w", encoding="utf-8") as fh:
        for q, predicted in _labeled_samples(test_store):
            if predicted not in trees:
                raise DataMismatchError(
                    f"sample {q.id!r}: no tree for predicted {predicted!r}")
            t = trees[predicted]
            expl = explain(q, predicted, trees, store, cfg.routing,
                           cfg.distance)
            ranked = rank_nodes(q, t, store, cfg.distance)[:cfg.routing.k]
            dists = [(t.nodes[nid].label, d) for nid, d in ranked]
            fh.write(json.dumps(_explanation_record(
                q.id, predicted, "lvx", expl, dists)) + "\n")
    write_manifest(cfg, "explain", out_dir)
    return EXIT_OK


def cmd_baseline(cfg: RunConfig, method: str) -> int:
    trees = _load_trees(cfg.resolve(cfg.paths.trees_dir))
    initial_dir = cfg.resolve(cfg.paths.initial_trees_dir) \
        or cfg.resolve(cfg.paths.trees_dir)
    initial_trees = _load_trees(initial_dir)
    store = _distance_store(cfg)
    test_store = load_embeddings(cfg.resolve(cfg.paths.test_embeddings))
    samples = _labeled_samples(test_store)

    subtree_cache: dict[str, object] = {}
    out_dir = cfg.resolve(cfg.paths.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, f"explanations-{method}.jsonl")
    with open(out_path, "w", encoding="utf-8") as fh:
        for q, predicted in samples:
            if method == "random":
                sample_seed = int(hashlib.sha256(
                    f"{cfg.seed}:{q.id}".encode()).hexdigest()[:8], 16)
                expl = bl.random_baseline(trees[predicted],
                                          n_nodes=cfg.baseline_n_nodes,
                                          seed=sample_seed)
            elif method == "constant":
                expl = bl.constant_baseline(predicted, initial_trees)
            elif method == "subtree":
                if predicted not in subtree_cache:
                    held = [p for p, cat in samples if cat == predicted]
                    subtree_cache[predicted] = bl.subtree_baseline(
                        predicted, held, trees, store, cfg.routing,
                        cfg.distance)
                expl = subtree_cache[predicted]
            else:
                raise ConfigError(f"unknown baseline method {method!r}")
            fh.write(json.dumps(_explanation_record(
                q.id, predicted, method, expl, [])) + "\n")
    write_manifest(cfg, f"baseline-{method}", out_dir)
    return EXIT_OK


def _load_explanations(path: str) -> dict[str, AttributeTree]:
    out: dict[str, AttributeTree] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out[str(obj["sample_id"])] = parse_tree(
                json.dumps(obj["explanation"]))
    return out


def _load_ground_truth(path: str) -> dict[str, AttributeTree]:
    out: dict[str, AttributeTree] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            tree_obj = obj.get("tree", obj.get("explanation"))
            out[str(obj["sample_id"])] = parse_tree(json.dumps(tree_obj))
    return out


def cmd_evaluate(cfg: RunConfig) -> int:
    out_dir = cfg.resolve(cfg.paths.output_dir)
    gt = _load_ground_truth(cfg.resolve(cfg.paths.ground_truth))
    methods = ["lvx"] + list(cfg.baselines)
    aggregate: dict[str, dict] = {}
    for method in methods:
        fname = ("explanations.jsonl" if method == "lvx"
                 else f"explanations-{method}.jsonl")
        path = os.path.join(out_dir, fname)
        if not os.path.exists(path):
            if method == "lvx":
                raise ConfigError(f"predictions file not found: {path}")
            continue
        preds = _load_explanations(path)
        shared = sorted(set(preds) & set(gt))
        if not shared:
            raise DataMismatchError(
                f"no sample ids shared between {path} and ground truth; "
                f"predictions: {sorted(preds)[:5]}..., "
                f"ground truth: {sorted(gt)[:5]}...")
        missing = sorted(set(gt) ^ set(preds))
        if missing:
            logger.warning("evaluate(%s): %d unmatched sample ids: %s",
                           method, len(missing), missing[:10])
        report = evaluate_pairs(
            [(sid, preds[sid], gt[sid]) for sid in shared], cfg.metrics)
        if cfg.paths.test_embeddings:
            test_store = load_embeddings(cfg.resolve(cfg.paths.test_embeddings))
            store = _distance_store(cfg)
            try:
                samples = [(test_store.get(sid), preds[sid])
                           for sid in shared if sid in test_store]
                if samples:
                    report.mscd = mscd(samples, store, cfg.distance)
            except EmbeddingError as e:
                logger.warning("evaluate(%s): skipping MSCD: %s", method, e)
        suffix = "" if method == "lvx" else f"-{method}"
        report.write_csv(os.path.join(out_dir, f"report{suffix}.csv"))
        aggregate[method] = report.aggregates()
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(cfg, "evaluate", out_dir)
    return EXIT_OK


def cmd_stability(cfg: RunConfig, clean_path: str, perturbed_path: str) -> int:
    trees = _load_trees(cfg.resolve(cfg.paths.trees_dir))
    store = _distance_store(cfg)
    clean = load_embeddings(clean_path)
    perturbed = load_embeddings(perturbed_path)
    clean_samples = dict((q.id, (q, cat)) for q, cat in _labeled_samples(clean))
    pert_samples = dict((q.id, (q, cat)) for q, cat in _labeled_samples(perturbed))
    unpaired = sorted(set(clean_samples) ^ set(pert_samples))
    if unpaired:
        raise DataMismatchError(f"unpaired sample ids: {unpaired[:10]}")
    pairs = []
    for sid in sorted(clean_samples):
        (qc, cat) = clean_samples[sid]
        (qp, _) = pert_samples[sid]
        ec = explain(qc, cat, trees, store, cfg.routing, cfg.distance)
        ep = explain(qp, cat, trees, store, cfg.routing, cfg.distance)
        pairs.append((sid, ep, ec))
    report = evaluate_pairs(pairs, cfg.metrics)
    out_dir = cfg.resolve(cfg.paths.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    report.write_csv(os.path.join(out_dir, "stability.csv"))
    report.write_json(os.path.join(out_dir, "stability.json"))
    write_manifest(cfg, "stability", out_dir)
    return EXIT_OK


def cmd_export_dot(input_path: str, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    with open(input_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            sid = str(obj["sample_id"])
            t = parse_tree(json.dumps(obj["explanation"]))
            with open(os.path.join(out_dir, _slug(sid) + ".dot"), "w",
                      encoding="utf-8") as out:
                out.write(to_dot(t, name=sid))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lvx", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True)
        sp.add_argument("--k", type=int)
        sp.add_argument("--t-max", type=int, dest="t_max")
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replay", help="transcript path (forces replay mode)")

    for name in ("build-tree", "refine", "explain", "evaluate"):
        common(sub.add_parser(name))
    sp = sub.add_parser("baseline")
    common(sp)
    sp.add_argument("--method", required=True,
                    choices=["random", "constant", "subtree"])
    sp = sub.add_parser("stability")
    common(sp)
    sp.add_argument("--clean", required=True)
    sp.add_argument("--perturbed", required=True)
    sp = sub.add_parser("export-dot")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    return p


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> None:
    if getattr(args, "k", None) is not None:
        cfg.routing.k = args.k
    if getattr(args, "t_max", None) is not None:
        cfg.refinement.t_max = args.t_max
    if getattr(args, "epsilon", None) is not None:
        cfg.distance.epsilon = args.epsilon
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "replay", None):
        cfg.llm_mode = "replay"
        cfg.paths.transcript = os.path.abspath(args.replay)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "export-dot":
            return cmd_export_dot(args.input, args.out)
        cfg = load_config(args.config)
        _apply_overrides(cfg, args)
        if args.command == "build-tree":
            return cmd_build_tree(cfg)
        if args.command == "refine":
            return cmd_refine(cfg)
        if args.command == "explain":
            return cmd_explain(cfg)
        if args.command == "baseline":
            return cmd_baseline(cfg, args.method)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "stability":
            return cmd_stability(cfg, args.clean, args.perturbed)
        raise ConfigError(f"unknown command {args.command!r}")
    except DataMismatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except LlmError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_UPSTREAM
    except (ConfigError, TreeError, EmbeddingError, RefinementError,
            RoutingError, bl.BaselineError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
