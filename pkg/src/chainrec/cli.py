"""Command-line entry points: data generation, pretraining, training,
evaluation, ablations, the HTTP service, and a terminal chat mode."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .agent import load_checkpoint, save_checkpoint
from .catalog import SynthConfig, generate_synthetic, load_catalog, save_catalog, \
    split_interactions, validate_catalog
from .env import OptionKind, RewardConfig
from .evaluate import ScriptedPolicy, evaluate_policy, write_episode_jsonl, \
    write_report_json, write_sr_csv
from .kg_embed import TransEConfig, load_embeddings, pretrain_transe_trace, \
    save_embeddings, training_subgraph
from .training import ABLATION_VARIANTS, TrainConfig, run_ablation, train, \
    write_history_csv


def _load_train_config(args) -> TrainConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise SystemExit(f"error: cannot read config {args.config}: {exc}")
    for key in ("episodes", "gamma", "lr", "batch_size", "buffer_capacity",
                "epsilon_start", "epsilon_end", "epsilon_decay_episodes",
                "t_max", "k_p", "k_v", "prune_items", "prune_attrs", "seed",
                "target_sync"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    try:
        return TrainConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise SystemExit(f"error: bad config: {exc}")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with training settings")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    for flag, kind in (("episodes", int), ("gamma", float), ("lr", float),
                       ("batch-size", int), ("buffer-capacity", int),
                       ("epsilon-start", float), ("epsilon-end", float),
                       ("epsilon-decay-episodes", int), ("t-max", int),
                       ("k-p", int), ("k-v", int), ("prune-items", int),
                       ("prune-attrs", int), ("target-sync", int)):
        parser.add_argument(f"--{flag}", type=kind, dest=flag.replace("-", "_"))


def _load_world(args):
    catalog = load_catalog(args.data)
    split = split_interactions(catalog, seed=args.split_seed)
    return catalog, split


def cmd_data_gen(args) -> int:
    cfg = SynthConfig(
        num_users=args.users, num_items=args.items, num_attributes=args.attributes,
        num_types=args.types, attrs_per_item=args.attrs_per_item,
        interactions_per_user=args.interactions_per_user, attr_skew=args.attr_skew)
    catalog = generate_synthetic(cfg, seed=args.seed if args.seed is not None else 0)
    if args.labels:
        catalog.labels = {
            "attribute": {a: f"attribute {a}" for a in range(catalog.num_attributes)},
            "type": {t: f"type {t}" for t in range(catalog.num_types)},
            "item": {v: f"item {v}" for v in range(catalog.num_items)},
        }
    save_catalog(catalog, args.out)
    print(json.dumps(catalog.counts()))
    return 0


def cmd_data_validate(args) -> int:
    catalog = load_catalog(args.data)
    issues = validate_catalog(catalog)
    print(json.dumps({"counts": catalog.counts(), "issues": issues}, indent=2))
    return 0 if not issues else 1


def cmd_embed(args) -> int:
    catalog, split = _load_world(args)
    graph = training_subgraph(catalog, split.train) if args.train_only else catalog
    cfg = TransEConfig(dim=args.dim, margin=args.margin, lr=args.lr,
                       epochs=args.epochs, batch=args.batch)
    seed = args.seed if args.seed is not None else 0
    table, losses = pretrain_transe_trace(graph, cfg, seed)
    save_embeddings(args.out, table, seed)
    print(json.dumps({"entities": table.entity_vectors.shape[0], "dim": table.dim,
                      "final_epoch_loss": losses[-1] if losses else None}))
    return 0


def cmd_train(args) -> int:
    catalog, split = _load_world(args)
    table, _ = load_embeddings(args.embeddings)
    cfg = _load_train_config(args)
    params, history = train(catalog, split, cfg, table, progress=args.progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.npz", params,
                    extra_meta={"config": cfg.to_dict()})
    write_history_csv(out / "history.csv", history)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    final = history[-1]["rolling_SR"] if history else None
    print(json.dumps({"checkpoint": str(out / "checkpoint.npz"),
                      "episodes": cfg.episodes, "rolling_SR": final}))
    return 0


def _eval_config(args, meta: dict | None) -> TrainConfig:
    if getattr(args, "config", None) or meta is None or "config" not in meta:
        return _load_train_config(args)
    cfg = TrainConfig.from_dict(meta["config"])
    if args.seed is not None:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": args.seed,
                                     "rewards": cfg.to_dict()["rewards"]})
    return cfg


def cmd_eval(args) -> int:
    catalog, split = _load_world(args)
    pairs = getattr(split, args.split)
    if args.limit:
        pairs = pairs[:args.limit]
    if args.baseline:
        table, _ = load_embeddings(args.embeddings)
        params = None
        if args.checkpoint:
            params, _ = load_checkpoint(args.checkpoint)
        policy = ScriptedPolicy(args.baseline, table, params=params)
        cfg = _load_train_config(args)
    else:
        if not args.checkpoint:
            raise SystemExit("error: --checkpoint or --baseline is required")
        params, meta = load_checkpoint(args.checkpoint)
        policy = params
        cfg = _eval_config(args, meta)
    report = evaluate_policy(policy, catalog, pairs, cfg,
                             seed=args.seed if args.seed is not None else 0)
    write_report_json(args.out, report)
    if args.sr_csv:
        write_sr_csv(args.sr_csv, report)
    if args.episodes_out:
        write_episode_jsonl(args.episodes_out, report.episode_logs)
    print(json.dumps(report.to_dict()["sr_curve"][-1:] and {
        "sr": report.sr, "at": report.average_turn, "hdcg": report.hdcg,
        "episodes": report.episodes}))
    return 0


def cmd_ablate(args) -> int:
    catalog, split = _load_world(args)
    table, _ = load_embeddings(args.embeddings)
    cfg = _load_train_config(args)
    params = None
    if args.checkpoint:
        params, _ = load_checkpoint(args.checkpoint)
    _, report = run_ablation(catalog, split, cfg, args.variant, table,
                             eval_seed=args.seed if args.seed is not None else 0,
                             params=params)
    write_report_json(args.out, report)
    print(json.dumps({"variant": args.variant, "sr": report.sr,
                      "at": report.average_turn}))
    return 0


def cmd_serve(args) -> int:
    from .service import SessionService, make_server

    catalog = load_catalog(args.data)
    params, meta = load_checkpoint(args.checkpoint)
    cfg = _eval_config(args, meta)
    service = SessionService(params, catalog, cfg,
                             seed=args.seed if args.seed is not None else 0,
                             ttl_seconds=args.ttl)
    server = make_server(service, host=args.host, port=args.port)
    print(f"serving on http://{args.host}:{server.server_address[1]}/api/sessions")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_chat(args) -> int:
    from .service import SessionService

    catalog = load_catalog(args.data)
    params, meta = load_checkpoint(args.checkpoint)
    cfg = _eval_config(args, meta)
    service = SessionService(params, catalog, cfg,
                             seed=args.seed if args.seed is not None else 0)
    print("You are the user. Answer each choice with y (accept) or n (reject).")
    try:
        initial = int(input("initial preferred attribute id: ").strip())
    except (ValueError, EOFError):
        print("error: need an attribute id", file=sys.stderr)
        return 1
    status, payload = service.handle_request(
        "POST", "/api/sessions", {"initial_attribute_id": initial})
    if status != 200:
        print(f"error: {payload.get('error')}", file=sys.stderr)
        return 1
    session_id = payload["session_id"]
    question = payload["question"]
    while question is not None:
        print(f"\nturn {question['turn']} ({question['option']}), "
              f"{question['candidate_count']} items still match:")
        answers = []
        for card in question["choices"]:
            suffix = f" [{card['type_label']}]" if card.get("type_label") else ""
            while True:
                raw = input(f"  {card['label']}{suffix}? [y/n] ").strip().lower()
                if raw in ("y", "n"):
                    answers.append(raw == "y")
                    break
        status, payload = service.handle_request(
            "POST", f"/api/sessions/{session_id}/responses", {"accepted": answers})
        if status != 200:
            print(f"error: {payload.get('error')}", file=sys.stderr)
            return 1
        if payload["status"] == "success":
            print(f"\nfound it at turn {payload['turn']} (rank {payload['rank']}).")
            return 0
        if payload["status"] == "timeout":
            print(f"\nno luck within {payload['turn']} turns.")
            return 0
        question = payload["question"]
    print("nothing left to ask or recommend.")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chainrec",
        description="Multi-choice conversational recommender: synthesize data, "
                    "pretrain embeddings, train, evaluate, ablate, serve, chat.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_data = sub.add_parser("data", help="catalog utilities")
    data_sub = p_data.add_subparsers(dest="data_command", required=True)
    p_gen = data_sub.add_parser("gen", help="generate a synthetic catalog")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--users", type=int, default=20)
    p_gen.add_argument("--items", type=int, default=100)
    p_gen.add_argument("--attributes", type=int, default=30)
    p_gen.add_argument("--types", type=int, default=6)
    p_gen.add_argument("--attrs-per-item", type=int, default=3)
    p_gen.add_argument("--interactions-per-user", type=int, default=25)
    p_gen.add_argument("--attr-skew", type=float, default=1.6)
    p_gen.add_argument("--labels", action="store_true",
                       help="also write placeholder labels.jsonl")
    p_gen.add_argument("--seed", type=int)
    p_gen.add_argument("--config", help=argparse.SUPPRESS)
    p_gen.set_defaults(func=cmd_data_gen)
    p_val = data_sub.add_parser("validate", help="check catalog invariants")
    p_val.add_argument("--data", required=True)
    p_val.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    p_val.add_argument("--config", help=argparse.SUPPRESS)
    p_val.set_defaults(func=cmd_data_validate)

    p_embed = sub.add_parser("embed", help="pretrain translation embeddings")
    p_embed.add_argument("--data", required=True)
    p_embed.add_argument("--out", required=True)
    p_embed.add_argument("--dim", type=int, default=24)
    p_embed.add_argument("--margin", type=float, default=1.0)
    p_embed.add_argument("--lr", type=float, default=0.02)
    p_embed.add_argument("--epochs", type=int, default=60)
    p_embed.add_argument("--batch", type=int, default=32)
    p_embed.add_argument("--split-seed", type=int, default=0)
    p_embed.add_argument("--train-only", action="store_true", default=True,
                         help="pretrain on the training subgraph (default)")
    p_embed.add_argument("--full-graph", dest="train_only", action="store_false",
                         help="pretrain on every KG triple")
    p_embed.add_argument("--seed", type=int)
    p_embed.add_argument("--config", help=argparse.SUPPRESS)
    p_embed.set_defaults(func=cmd_embed)

    p_train = sub.add_parser("train", help="train the agent")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--embeddings", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--split-seed", type=int, default=0)
    p_train.add_argument("--progress", action="store_true")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint or baseline")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--baseline",
                        choices=("abs_greedy", "max_entropy", "topk_no_chain",
                                 "random"))
    p_eval.add_argument("--embeddings", help="needed for baselines")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--sr-csv")
    p_eval.add_argument("--episodes-out")
    p_eval.add_argument("--split", choices=("train", "validation", "test"),
                        default="test")
    p_eval.add_argument("--split-seed", type=int, default=0)
    p_eval.add_argument("--limit", type=int)
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="train/evaluate an ablated variant")
    p_ablate.add_argument("--data", required=True)
    p_ablate.add_argument("--embeddings", required=True)
    p_ablate.add_argument("--variant", required=True,
                          choices=sorted(ABLATION_VARIANTS))
    p_ablate.add_argument("--checkpoint",
                          help="evaluate these weights instead of retraining")
    p_ablate.add_argument("--out", required=True)
    p_ablate.add_argument("--split-seed", type=int, default=0)
    _add_config_flags(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_serve = sub.add_parser("serve", help="run the HTTP session API")
    p_serve.add_argument("--data", required=True)
    p_serve.add_argument("--checkpoint", required=True)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.add_argument("--ttl", type=float, default=1800.0)
    _add_config_flags(p_serve)
    p_serve.set_defaults(func=cmd_serve)

    p_chat = sub.add_parser("chat", help="terminal chat against a checkpoint")
    p_chat.add_argument("--data", required=True)
    p_chat.add_argument("--checkpoint", required=True)
    _add_config_flags(p_chat)
    p_chat.set_defaults(func=cmd_chat)

    return parser


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
