"""Batch command-line interface.

Commands cover the whole pipeline: ``synth`` (make a corpus with known
boundaries), ``featurize`` (WAV to features), ``train-gas`` (pretrain the
gate-signal autoencoder), ``train`` (iterative two-phase training),
``segment``, ``embed``, ``search``, ``eval-seg``, ``eval-std``, and
``gradcheck``.  All randomness sits behind an explicit ``--seed``; settings
come from an optional ``key = value`` config file overridden by repeatable
``--set key=value`` flags.
"""

import argparse
import os
import sys

import numpy as np

from . import nn, reporting, storage
from .configfile import (build_dataclass, dataclass_to_mapping, format_config,
                         load_config_file, parse_config_text, validate_keys)
from .errors import CompatibilityError, ConfigError, InputError, SegawError
from .evaluation import corpus_prf, mean_average_precision, random_segment
from .features import FeatureConfig, FeatureMatrix, compute_mfcc, featurize_wav
from .gas import (GasConfig, GasModel, extract_gas, gas_segment,
                  train_gas_autoencoder)
from .matching import dtw_score, subsequence_score
from .segments import BoundarySet
from .segmental import (SsaeConfig, SsaeParams, encode_segments, gate_forward,
                        gate_logprob_grads, greedy_boundaries, init_ssae,
                        autoencoder_loss_and_grads)
from .synth import SynthConfig, generate_corpus, select_queries
from .training import TrainConfig, train_iterative, train_phase1

SECTIONS = {
    "synth.": SynthConfig,
    "gas.": GasConfig,
    "model.": SsaeConfig,
    "train.": TrainConfig,
    "features.": FeatureConfig,
}

GAS_PREFIX = "gasmodel."


def gather_mapping(args):
    mapping = {}
    if getattr(args, "config", None):
        mapping.update(load_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    validate_keys(mapping, SECTIONS)
    return mapping


# ---------------------------------------------------------------------------
# Checkpoint composition: an "ssae" checkpoint also carries its gate-signal
# model so segmentation/embedding need a single file.
# ---------------------------------------------------------------------------

def save_ssae_checkpoint(path, params, gas_model, train_cfg, seed):
    values = dict(params.values)
    for key, arr in gas_model.values.items():
        values[GAS_PREFIX + key] = arr
    cfg_map = dataclass_to_mapping(params.config, "model.")
    cfg_map.update(dataclass_to_mapping(gas_model.config, "gas."))
    if train_cfg is not None:
        cfg_map.update(dataclass_to_mapping(train_cfg, "train."))
    storage.save_checkpoint(path, "ssae", format_config(cfg_map), seed, values)


def load_ssae_checkpoint(path):
    kind, cfg_text, seed, values = storage.load_checkpoint(path)
    if kind != "ssae":
        raise CompatibilityError(f"{path} holds a '{kind}' model, expected 'ssae'")
    mapping = parse_config_text(cfg_text, source=str(path))
    model_cfg = build_dataclass(SsaeConfig, mapping, "model.")
    gas_cfg = build_dataclass(GasConfig, mapping, "gas.")
    gas_values = {k[len(GAS_PREFIX):]: v for k, v in values.items()
                  if k.startswith(GAS_PREFIX)}
    ssae_values = {k: v for k, v in values.items()
                   if not k.startswith(GAS_PREFIX)}
    params = SsaeParams(model_cfg, ssae_values)
    gas_model = GasModel(gas_cfg, gas_values, trained=True)
    return params, gas_model, mapping, seed


def load_gas_checkpoint(path):
    kind, cfg_text, seed, values = storage.load_checkpoint(path)
    if kind == "ssae":
        _, gas_model, _, _ = load_ssae_checkpoint(path)
        return gas_model, seed
    if kind != "gas":
        raise CompatibilityError(f"{path} holds a '{kind}' model, expected 'gas'")
    mapping = parse_config_text(cfg_text, source=str(path))
    cfg = build_dataclass(GasConfig, mapping, "gas.")
    return GasModel(cfg, values, trained=True), seed


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    mapping = gather_mapping(args)
    cfg = build_dataclass(SynthConfig, mapping, "synth.", seed=args.seed)
    corpus = generate_corpus(cfg)
    out = args.out
    storage.save_feature_dir(os.path.join(out, "train"),
                             [u.feats for u in corpus.train])
    storage.save_feature_dir(os.path.join(out, "test"),
                             [u.feats for u in corpus.test])
    for split, utts in (("train", corpus.train), ("test", corpus.test)):
        storage.save_manifest(
            os.path.join(out, f"{split}_manifest.tsv"),
            [(u.feats.utterance_id, u.bounds, u.word_ids) for u in utts])
    q_rng = np.random.default_rng(np.random.SeedSequence(args.seed,
                                                         spawn_key=(1000,)))
    queries = select_queries(corpus, q_rng)
    storage.save_feature_dir(os.path.join(out, "queries"),
                             [q.feats for q in queries])
    lines = "".join(f"{q.query_id}\t{q.word_id}\n" for q in queries)
    storage.atomic_write(os.path.join(out, "queries", "queries.tsv"),
                         lines.encode("utf-8"))
    storage.atomic_write(os.path.join(out, "corpus.cfg"),
                         format_config(dataclass_to_mapping(cfg, "synth."))
                         .encode("utf-8"))
    print(f"wrote {len(corpus.train)} train / {len(corpus.test)} test "
          f"utterances, {len(queries)} queries, word rate "
          f"{corpus.word_rate:.4f} -> {out}")
    return 0


def cmd_featurize(args):
    mapping = gather_mapping(args)
    cfg = build_dataclass(FeatureConfig, mapping, "features.")
    cmvn = not args.no_cmvn
    if os.path.isdir(args.wav):
        os.makedirs(args.out, exist_ok=True)
        names = sorted(n for n in os.listdir(args.wav) if n.endswith(".wav"))
        if not names:
            raise InputError(f"no .wav files in {args.wav}")
        for name in names:
            uid = os.path.splitext(name)[0]
            feat = featurize_wav(os.path.join(args.wav, name), uid, cfg, cmvn)
            storage.save_features(os.path.join(args.out, f"{uid}.feat"), feat)
        print(f"featurized {len(names)} files -> {args.out}")
    else:
        uid = os.path.splitext(os.path.basename(args.wav))[0]
        feat = featurize_wav(args.wav, uid, cfg, cmvn)
        storage.save_features(args.out, feat)
        print(f"featurized {args.wav} -> {args.out} "
              f"({feat.n_frames} x {feat.dim})")
    return 0


def cmd_train_gas(args):
    mapping = gather_mapping(args)
    feats = storage.load_feature_dir(args.features)
    cfg = build_dataclass(GasConfig, mapping, "gas.",
                          feature_dim=feats[0].dim)
    rng = np.random.default_rng(args.seed)
    model, history = train_gas_autoencoder(feats, cfg, rng)
    cfg_text = format_config(dataclass_to_mapping(cfg, "gas."))
    storage.save_checkpoint(args.out, "gas", cfg_text, args.seed, model.values)
    if args.metrics:
        records = [{"epoch": i + 1, "loss": loss}
                   for i, loss in enumerate(history["epoch_loss"])]
        records.append({"holdout_initial": history["holdout_initial"],
                        "holdout_final": history["holdout_final"]})
        reporting.append_metrics(args.metrics, records)
    print(f"gate-signal model: holdout mse "
          f"{history['holdout_initial']:.4f} -> {history['holdout_final']:.4f}; "
          f"saved {args.out}")
    return 0


def _gas_sequences(gas_model, feats):
    return [extract_gas(gas_model, f) for f in feats]


def cmd_train(args):
    mapping = gather_mapping(args)
    feats = storage.load_feature_dir(args.features)
    gas_model, _ = load_gas_checkpoint(args.gas_model)
    model_cfg = build_dataclass(SsaeConfig, mapping, "model.",
                                feature_dim=feats[0].dim,
                                gas_dim=gas_model.config.hidden_dim)
    train_cfg = build_dataclass(TrainConfig, mapping, "train.", seed=args.seed)
    gas_seqs = _gas_sequences(gas_model, feats)
    pairs = list(zip(feats, gas_seqs))

    refs = None
    if args.ref_manifest:
        manifest = storage.load_manifest(args.ref_manifest)
        refs = [manifest[f.utterance_id][0] for f in feats]

    if args.fixed_boundaries:
        manifest = storage.load_manifest(args.fixed_boundaries)
        bounds = [manifest[f.utterance_id][0] for f in feats]
        params = init_ssae(np.random.default_rng(
            np.random.SeedSequence(args.seed)), model_cfg)
        losses = train_phase1(params, pairs, train_cfg,
                              np.random.default_rng(args.seed),
                              boundaries=bounds)
        metrics = [{"iteration": 1, "phase": 1, "loss": losses[-1],
                    "epoch_losses": losses}]
    else:
        eval_hook = None
        if refs is not None:
            def eval_hook(iteration, params):
                hyps = [greedy_boundaries(params, f, g) for f, g in pairs]
                counts = corpus_prf(hyps, refs)
                nts = [len(h) / h.n_frames for h in hyps]
                return {"f1": counts.f1, "precision": counts.precision,
                        "recall": counts.recall,
                        "greedy_nt": float(np.mean(nts))}
        result = train_iterative(pairs, model_cfg, train_cfg,
                                 eval_hook=eval_hook)
        params, metrics = result.params, result.metrics

    save_ssae_checkpoint(args.out, params, gas_model, train_cfg, args.seed)
    metrics_path = args.metrics or f"{os.path.splitext(args.out)[0]}.metrics.jsonl"
    reporting.append_metrics(metrics_path, metrics)
    reporting.training_figure(metrics, reporting.figure_path(metrics_path),
                              word_rate=args.word_rate)
    last2 = [m for m in metrics if m.get("phase") == 2]
    if last2:
        print(f"trained {train_cfg.outer_iterations} iterations; final "
              f"mean reward {last2[-1]['mean_r']:.3f}, sampled N/T "
              f"{last2[-1]['mean_nt']:.4f}; saved {args.out}")
    else:
        print(f"trained encoder/decoder on fixed boundaries "
              f"(final loss {metrics[-1]['loss']:.3f}); saved {args.out}")
    return 0


def cmd_segment(args):
    feats = storage.load_feature_dir(args.features)
    entries = []
    if args.policy == "gate":
        params, gas_model, _, _ = load_ssae_checkpoint(args.model)
        for f in feats:
            bounds = greedy_boundaries(params, f, extract_gas(gas_model, f))
            entries.append((f.utterance_id, bounds))
    elif args.policy == "random":
        if args.seed is None or args.rate is None:
            raise ConfigError("--policy random needs --seed and --rate")
        rng = np.random.default_rng(args.seed)
        for f in feats:
            entries.append((f.utterance_id,
                            random_segment(f.n_frames, args.rate, rng)))
    elif args.policy == "gas":
        gas_model, _ = load_gas_checkpoint(args.model)
        for f in feats:
            bounds = gas_segment(extract_gas(gas_model, f),
                                 min_gap=args.min_gap)
            entries.append((f.utterance_id, bounds))
    else:
        raise ConfigError(f"unknown segmentation policy: {args.policy}")
    storage.save_segmentation(args.out, entries)
    n_bounds = sum(len(b.interior_ends) for _, b in entries)
    print(f"segmented {len(entries)} utterances "
          f"({n_bounds} interior boundaries) -> {args.out}")
    return 0


def cmd_embed(args):
    feats = storage.load_feature_dir(args.features)
    params, gas_model, _, _ = load_ssae_checkpoint(args.model)
    fixed = storage.load_manifest(args.boundaries) if args.boundaries else None
    docs = []
    for f in feats:
        if fixed is not None:
            bounds = fixed[f.utterance_id][0]
        else:
            bounds = greedy_boundaries(params, f, extract_gas(gas_model, f))
        emb = encode_segments(params, f, bounds)
        docs.append((f.utterance_id, bounds, emb))
    fingerprint = storage.checkpoint_fingerprint(args.model)
    storage.save_index(args.out, fingerprint, params.config.hidden_dim, docs)
    print(f"indexed {len(docs)} documents "
          f"({sum(len(b) for _, b, _ in docs)} segments) -> {args.out}")
    return 0


def _load_queries(path):
    if os.path.isdir(path):
        return storage.load_feature_dir(path)
    return [storage.load_features(path)]


def _rank_lines(scored):
    """``scored``: list of (doc_id, score, offset) -> sorted TSV lines."""
    scored = sorted(scored, key=lambda x: (-x[1], x[0]))
    return "".join(f"{d}\t{s:.9f}\t{o}\n" for d, s, o in scored)


def cmd_search(args):
    queries = _load_queries(args.queries)
    rankings = {}
    if args.mode == "embed":
        if not args.index or not args.model:
            raise ConfigError("--mode embed needs --index and --model")
        params, gas_model, _, _ = load_ssae_checkpoint(args.model)
        fingerprint, dim, docs = storage.load_index(args.index)
        if fingerprint != storage.checkpoint_fingerprint(args.model):
            raise CompatibilityError(
                f"index {args.index} was not built from checkpoint {args.model}")
        for q in queries:
            if args.whole_query:
                bounds = BoundarySet.from_ends([], q.n_frames)
            else:
                bounds = greedy_boundaries(params, q, extract_gas(gas_model, q))
            q_emb = encode_segments(params, q, bounds)
            scored = []
            for doc_id, _, d_emb in docs:
                result = subsequence_score(q_emb, d_emb)
                scored.append((doc_id, result.score, result.best_offset))
            rankings[q.utterance_id] = scored
    elif args.mode == "dtw":
        if not args.docs:
            raise ConfigError("--mode dtw needs --docs")
        docs = storage.load_feature_dir(args.docs)
        for q in queries:
            rankings[q.utterance_id] = [
                (d.utterance_id, dtw_score(q.frames, d.frames), 0)
                for d in docs]
    elif args.mode == "random":
        if not args.docs or args.seed is None:
            raise ConfigError("--mode random needs --docs and --seed")
        docs = storage.load_feature_dir(args.docs)
        rng = np.random.default_rng(args.seed)
        for q in queries:
            rankings[q.utterance_id] = [
                (d.utterance_id, float(rng.random()), 0) for d in docs]
    else:
        raise ConfigError(f"unknown search mode: {args.mode}")

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for qid in sorted(rankings):
            storage.atomic_write(os.path.join(args.out, f"{qid}.tsv"),
                                 _rank_lines(rankings[qid]).encode("utf-8"))
        print(f"ranked {len(rankings)} queries -> {args.out}")
    else:
        for qid in sorted(rankings):
            sys.stdout.write(_rank_lines(rankings[qid]))
    return 0


def cmd_eval_seg(args):
    hyps = storage.load_segmentation(args.hyp)
    refs = storage.load_manifest(args.ref)
    missing = sorted(set(hyps) - set(refs))
    if missing:
        raise InputError(f"no reference for utterances: {missing[:5]}")
    ids = sorted(hyps)
    counts = corpus_prf([hyps[i] for i in ids],
                        [refs[i][0] for i in ids], tolerance=args.tolerance)
    report = {
        "n_utterances": len(ids),
        "n_hyp_boundaries": counts.n_hyp,
        "n_ref_boundaries": counts.n_ref,
        "n_matched": counts.matched,
        "tolerance_frames": args.tolerance,
        "precision": counts.precision,
        "recall": counts.recall,
        "f1": counts.f1,
    }
    reporting.write_report(args.out, report)
    reporting.segmentation_figure(report, reporting.figure_path(args.out))
    sys.stdout.write(reporting.format_report(report))
    return 0


def cmd_eval_std(args):
    q_words = {}
    with open(args.queries_manifest, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                qid, wid = line.split("\t")
                q_words[qid] = int(wid)
    docs = storage.load_manifest(args.docs_manifest)
    rankings = {}
    for name in sorted(os.listdir(args.rankings)):
        if not name.endswith(".tsv") or name == "queries.tsv":
            continue
        qid = name[:-4]
        with open(os.path.join(args.rankings, name), "r", encoding="utf-8") as f:
            rankings[qid] = [line.split("\t")[0] for line in f if line.strip()]
    unknown = sorted(set(rankings) - set(q_words))
    if unknown:
        raise InputError(f"rankings for unknown queries: {unknown[:5]}")
    relevance = {}
    for qid in rankings:
        wid = q_words[qid]
        relevance[qid] = {doc_id for doc_id, (_, words) in docs.items()
                          if words and wid in words}
    result = mean_average_precision(rankings, relevance)
    report = {"n_queries": len(rankings),
              "n_queries_scored": result.n_queries_scored,
              "map": result.map}
    for qid in sorted(result.per_query_ap):
        report[f"ap.{qid}"] = result.per_query_ap[qid]
    reporting.write_report(args.out, report)
    reporting.retrieval_figure(result.per_query_ap, result.map,
                               reporting.figure_path(args.out))
    sys.stdout.write(reporting.format_report(report))
    return 0


def cmd_gradcheck(args):
    from .features import FeatureMatrix as FM
    from .gas import _reconstruct, init_gas_model
    from .segments import BoundarySet as BS

    rng = np.random.default_rng(args.seed)
    checks = {}

    params = {"p": rng.standard_normal(4)}
    checks["quadratic"] = nn.finite_diff_check(
        lambda ps: 0.5 * float(np.sum(ps["p"] ** 2)),
        lambda ps: {"p": ps["p"].copy()}, params)

    gcfg = GasConfig(feature_dim=3, hidden_dim=3)
    gmodel = init_gas_model(rng, gcfg)
    gframes = rng.standard_normal((5, 3))
    checks["gas_autoencoder"] = nn.finite_diff_check(
        lambda ps: _reconstruct(gmodel, gframes, want_grads=False)[0],
        lambda ps: _reconstruct(gmodel, gframes, want_grads=True)[1],
        gmodel.values)

    scfg = SsaeConfig(feature_dim=3, gas_dim=2, hidden_dim=4,
                      gate_hidden=3, gate_layers=2)
    sparams = init_ssae(rng, scfg)
    feats = FM("g", rng.standard_normal((6, 3)))
    gas = rng.uniform(0.2, 0.8, (6, 2))
    bounds = BS.from_ends([2], 6)
    for label, tf in (("reconstruction_free_running", False),
                      ("reconstruction_teacher_forced", True)):
        checks[label] = nn.finite_diff_check(
            lambda ps, tf=tf: autoencoder_loss_and_grads(
                sparams, feats, bounds, teacher_forcing=tf)[0],
            lambda ps, tf=tf: autoencoder_loss_and_grads(
                sparams, feats, bounds, teacher_forcing=tf)[1],
            sparams.subset(sparams.autoencoder_names()))

    actions = rng.integers(0, 2, 6).astype(np.uint8)

    def gate_loss(ps):
        policy = gate_forward(sparams, feats, gas, actions)
        taken = np.where(actions == 1, policy[:, 0], policy[:, 1])
        return float(np.sum(np.log(taken)))

    checks["gate_log_policy"] = nn.finite_diff_check(
        gate_loss,
        lambda ps: gate_logprob_grads(sparams, feats, gas, actions, 1.0)[1],
        sparams.subset(sparams.gate_names()))

    failed = False
    for name, result in checks.items():
        ok = result.max_rel_error < 1e-4
        failed = failed or not ok
        print(f"{name} = {result.max_rel_error:.3e} "
              f"[{'pass' if ok else 'FAIL'}] (worst: {result.worst_param})")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_config_args(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="segaw",
        description="Unsupervised word segmentation and segment embeddings "
                    "over speech features, with query-by-example search.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("featurize", help="WAV -> feature files")
    p.add_argument("--wav", required=True, help="a .wav file or a directory")
    p.add_argument("--out", required=True)
    p.add_argument("--no-cmvn", action="store_true")
    _add_config_args(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train-gas", help="pretrain the gate-signal autoencoder")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--metrics")
    _add_config_args(p)
    p.set_defaults(func=cmd_train_gas)

    p = sub.add_parser("train", help="iterative two-phase training")
    p.add_argument("--features", required=True)
    p.add_argument("--gas-model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--metrics")
    p.add_argument("--ref-manifest",
                   help="score greedy segmentation per iteration against this")
    p.add_argument("--fixed-boundaries",
                   help="train encoder/decoder only, on this manifest's "
                        "segmentation (no gate updates)")
    p.add_argument("--word-rate", type=float,
                   help="true word rate drawn on the training figure")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="write greedy/baseline segmentations")
    p.add_argument("--features", required=True)
    p.add_argument("--model", help="checkpoint (gate and gas policies)")
    p.add_argument("--out", required=True)
    p.add_argument("--policy", choices=("gate", "random", "gas"),
                   default="gate")
    p.add_argument("--seed", type=int)
    p.add_argument("--rate", type=float, help="random policy boundary rate")
    p.add_argument("--min-gap", type=int, default=4)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("embed", help="build an embedding index")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--boundaries",
                   help="use this manifest's boundaries instead of the gate")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("search", help="rank documents for spoken queries")
    p.add_argument("--queries", required=True, help="a .feat file or directory")
    p.add_argument("--mode", choices=("embed", "dtw", "random"),
                   default="embed")
    p.add_argument("--index")
    p.add_argument("--model")
    p.add_argument("--docs", help="document features (dtw/random modes)")
    p.add_argument("--whole-query", action="store_true",
                   help="embed each query as one segment")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for per-query rankings")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval-seg", help="boundary precision/recall/F1")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--tolerance", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("eval-std", help="retrieval mean average precision")
    p.add_argument("--rankings", required=True)
    p.add_argument("--queries-manifest", required=True)
    p.add_argument("--docs-manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_std)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SegawError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
