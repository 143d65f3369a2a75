"""Success-rate/turn/ranking metrics, scripted baselines, evaluation runs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import AgentParams, FULL_BEHAVIOR, PolicyBehavior, evaluate_state
from .catalog import Catalog
from .env import (
    Choice,
    ChoiceChain,
    EpisodeStatus,
    OptionKind,
    SessionState,
    advance_turn,
    apply_choice_outcome,
    candidate_sets,
    episode_status,
    reset_session,
    simulate_user_response,
)
from .graph_state import attribute_preference_scores, item_preference_scores, \
    prune_candidates
from .kg_embed import EmbeddingTable
from .training import TrainConfig, run_episode

FORMULA_VERSION = "v1"
BASELINE_KINDS = ("abs_greedy", "max_entropy", "topk_no_chain", "random")


@dataclass
class MetricsReport:
    sr_curve: list[float]  # SR@1 .. SR@T_max
    average_turn: float
    hdcg: float
    episodes: int
    formula_version: str = FORMULA_VERSION
    episode_logs: list[dict] = field(default_factory=list, repr=False)

    @property
    def sr(self) -> float:
        return self.sr_curve[-1] if self.sr_curve else 0.0

    def sr_at(self, t: int) -> float:
        return self.sr_curve[t - 1]

    def to_dict(self) -> dict:
        return {
            "sr_curve": self.sr_curve,
            "at": self.average_turn,
            "hdcg": self.hdcg,
            "episodes": self.episodes,
            "formula_version": self.formula_version,
        }


def hdcg_single(success_turn: int, success_rank: int, t_max: int = 15,
                k_max: int = 10) -> float:
    """Turn-and-rank discounted credit for one successful episode.

    1/log2(t+2) + (1/log2(t+1)) * (1/log2(k+1)); failures contribute 0 and
    never reach this function.
    """
    if not 1 <= success_turn <= t_max:
        raise ValueError(f"success turn {success_turn} outside [1, {t_max}]")
    if not 1 <= success_rank <= k_max:
        raise ValueError(f"success rank {success_rank} outside [1, {k_max}]")
    turn_part = 1.0 / math.log2(success_turn + 2)
    rank_part = (1.0 / math.log2(success_turn + 1)) * (1.0 / math.log2(success_rank + 1))
    return turn_part + rank_part


def compute_metrics(logs: list[dict], t_max: int, k_max: int = 10) -> MetricsReport:
    """SR@t curve, average terminating turn (timeouts count as t_max), and
    mean per-episode discounted credit."""
    if not logs:
        raise ValueError("no episode logs to aggregate")
    n = len(logs)
    sr_curve = []
    for t in range(1, t_max + 1):
        wins = sum(1 for log in logs
                   if log["success_turn"] is not None and log["success_turn"] <= t)
        sr_curve.append(wins / n)
    turns = [log["success_turn"] if log["success_turn"] is not None else t_max
             for log in logs]
    scores = [
        hdcg_single(log["success_turn"], log["success_rank"], t_max, k_max)
        if log["success_turn"] is not None and log["success_rank"] is not None else 0.0
        for log in logs
    ]
    return MetricsReport(
        sr_curve=sr_curve,
        average_turn=float(np.mean(turns)),
        hdcg=float(np.mean(scores)),
        episodes=n,
        episode_logs=logs,
    )


# ---------------------------------------------------------------------------
# scripted baselines


def _presence_entropy(catalog: Catalog, cand_items: np.ndarray,
                      attrs: np.ndarray) -> np.ndarray:
    """Entropy of each attribute's presence ratio among candidate items."""
    mask = np.zeros(catalog.num_items, dtype=bool)
    mask[cand_items] = True
    ent = np.zeros(attrs.shape[0])
    n = cand_items.shape[0]
    for i, a in enumerate(attrs):
        rows = catalog.attr_indices[catalog.attr_indptr[a]:catalog.attr_indptr[a + 1]]
        rho = mask[rows].sum() / n
        if 0.0 < rho < 1.0:
            ent[i] = -rho * np.log(rho) - (1 - rho) * np.log(1 - rho)
    return ent


def baseline_step(kind: str, state: SessionState, catalog: Catalog,
                  table: EmbeddingTable, cfg: TrainConfig,
                  rng: np.random.Generator,
                  params: AgentParams | None = None) -> tuple[OptionKind, ChoiceChain]:
    """One scripted turn. ``topk_no_chain`` needs trained parameters; the
    others work from preference scores or pure chance."""
    items, attrs = candidate_sets(state, catalog)
    if items.shape[0] == 0 and attrs.shape[0] == 0:
        raise ValueError("both candidate spaces are empty")

    def rec_by_score() -> tuple[OptionKind, ChoiceChain]:
        scores = item_preference_scores(state, table, catalog, items)
        ids = prune_candidates(items, scores, cfg.k_v)
        return OptionKind.REC, ChoiceChain(
            OptionKind.REC, tuple(Choice("item", int(v)) for v in ids))

    if kind == "abs_greedy":
        return rec_by_score()

    if kind == "max_entropy":
        ask_turn = attrs.shape[0] > 0 and (items.shape[0] == 0 or rng.random() < 0.5)
        if not ask_turn:
            return rec_by_score()
        ent = _presence_entropy(catalog, items, attrs)
        ids = prune_candidates(attrs, ent, cfg.k_p)
        return OptionKind.ASK, ChoiceChain(
            OptionKind.ASK, tuple(Choice("attribute", int(a)) for a in ids))

    if kind == "topk_no_chain":
        if params is None:
            raise ValueError("topk_no_chain needs trained parameters")
        ev = evaluate_state(state, params, catalog, cfg.prune_items, cfg.prune_attrs)
        available = ev.available_options()
        option = available[0]
        for o in available[1:]:
            if ev.q_omega[o] > ev.q_omega[option]:
                option = o
        order = np.argsort(-ev.q[option], kind="stable")[:cfg.max_len(option)]
        ids = [int(ev.candidates(option)[i]) for i in order]
        return option, ChoiceChain(
            option, tuple(Choice(option.choice_kind, v) for v in ids))

    if kind == "random":
        pools = [(OptionKind.ASK, attrs), (OptionKind.REC, items)]
        pools = [(o, pool) for o, pool in pools if pool.shape[0] > 0]
        option, pool = pools[int(rng.integers(len(pools)))]
        width = min(cfg.max_len(option), pool.shape[0])
        ids = rng.choice(pool, size=width, replace=False)
        return option, ChoiceChain(
            option, tuple(Choice(option.choice_kind, int(v)) for v in ids))

    raise ValueError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")


class ScriptedPolicy:
    """Baseline wrapper with the same evaluation surface as the agent."""

    def __init__(self, kind: str, table: EmbeddingTable,
                 params: AgentParams | None = None):
        if kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline kind {kind!r}")
        self.kind = kind
        self.table = table
        self.params = params

    def run_episode(self, catalog: Catalog, pair: tuple[int, int], cfg: TrainConfig,
                    rng: np.random.Generator) -> dict:
        state = reset_session(catalog, pair[0], pair[1], rng)
        turns = []
        success_turn = None
        success_rank = None
        while True:
            items, attrs = candidate_sets(state, catalog)
            if items.shape[0] == 0 and attrs.shape[0] == 0:
                break
            option, chain = baseline_step(self.kind, state, catalog, self.table,
                                          cfg, rng, params=self.params)
            responses = []
            for i, choice in enumerate(chain.choices):
                accepted = simulate_user_response(state, choice)
                responses.append(accepted)
                state = apply_choice_outcome(state, choice, accepted, catalog,
                                             enforce_candidate=False)
                if option is OptionKind.REC and accepted:
                    break
            state = advance_turn(state)
            if state.success:
                success_turn = state.turn
                success_rank = responses.index(True) + 1
            turns.append({"option": option.value,
                          "choices": chain.ids()[:len(responses)],
                          "accepted": [bool(r) for r in responses]})
            if episode_status(state, cfg.t_max) is not EpisodeStatus.ONGOING:
                break
        status = episode_status(state, cfg.t_max)
        if status is EpisodeStatus.ONGOING:
            status = EpisodeStatus.TIMEOUT
        return {"user": pair[0], "target": pair[1], "turns": turns,
                "status": status.value, "success_turn": success_turn,
                "success_rank": success_rank, "num_turns": state.turn}


def evaluate_policy(
    policy: AgentParams | ScriptedPolicy,
    catalog: Catalog,
    pairs: list[tuple[int, int]],
    cfg: TrainConfig,
    seed: int,
    behavior: PolicyBehavior = FULL_BEHAVIOR,
) -> MetricsReport:
    """Play every (user, target) pair once, deterministically per seed.

    Episode RNGs derive from (seed, index), so the loop order never matters
    and runs may be parallelized without changing results.
    """
    if not pairs:
        raise ValueError("empty evaluation split")
    logs = []
    for idx, pair in enumerate(pairs):
        rng = np.random.default_rng([seed, idx])
        if hasattr(policy, "run_episode"):  # scripted baselines and test oracles
            record = policy.run_episode(catalog, pair, cfg, rng)
        else:
            record, _ = run_episode(catalog, pair, policy, cfg, rng, "eval",
                                    behavior=behavior)
        record["episode"] = idx
        logs.append(record)
    return compute_metrics(logs, cfg.t_max, k_max=cfg.k_v)


# ---------------------------------------------------------------------------
# report files


def write_report_json(path: str | Path, report: MetricsReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_sr_csv(path: str | Path, report: MetricsReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("turn,sr\n")
        for t, sr in enumerate(report.sr_curve, start=1):
            fh.write(f"{t},{sr!r}\n")


def write_episode_jsonl(path: str | Path, logs: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for log in logs:
            fh.write(json.dumps(log, sort_keys=True) + "\n")
