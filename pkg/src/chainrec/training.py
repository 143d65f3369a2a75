"""Per-option replay, TD targets, the three losses, and the training loop.

Each turn of a training episode stores one experience per answered choice
into the acting option's buffer, then runs one optimization round: the
Q/state-encoder parameters on a TD-error minibatch, the termination head on
a second minibatch, and the feedback heads on one minibatch from every
nonempty buffer. Targets come from a periodically synced parameter snapshot
and are treated as constants (semi-gradient).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .agent import (
    AgentParams,
    pair_features,
    FULL_BEHAVIOR,
    PolicyBehavior,
    StateEval,
    evaluate_state,
    expected_option_value,
    generate_choice_chain,
    init_agent_params,
    select_option,
    termination_probability,
    _mlp_head,
)
from .autodiff import Tape, Tensor, backward
from .catalog import Catalog, InteractionSplit
from .env import (
    Choice,
    EpisodeStatus,
    OptionKind,
    RewardConfig,
    SessionState,
    advance_turn,
    apply_choice_outcome,
    choice_reward,
    episode_status,
    reset_session,
    simulate_user_response,
)
from .graph_state import build_dynamic_graph, encode_states_batch, pruned_candidates
from .kg_embed import EmbeddingTable


@dataclass(frozen=True)
class Snapshot:
    """Observable part of a session state (no target leaks into replay)."""

    user: int
    acc_attrs: tuple[int, ...]
    rej_attrs: tuple[int, ...]
    rej_items: tuple[int, ...]
    turn: int
    timestep: int


def snapshot_of(state: SessionState) -> Snapshot:
    return Snapshot(state.user, state.acc_attrs, state.rej_attrs,
                    state.rej_items, state.turn, state.timestep)


def state_of(snap: Snapshot) -> SessionState:
    return SessionState(user=snap.user, target=None, acc_attrs=snap.acc_attrs,
                        rej_attrs=snap.rej_attrs, rej_items=snap.rej_items,
                        turn=snap.turn, timestep=snap.timestep)


@dataclass
class Experience:
    state_before: Snapshot
    cands_before: dict[OptionKind, np.ndarray]  # pruned action space at selection
    choice: Choice
    accepted: bool
    reward: float
    state_after: Snapshot
    next_candidates: dict[OptionKind, np.ndarray]  # pruned action space at s'
    option: OptionKind
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity ring with strictly FIFO eviction."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Experience] = []
        self._next = 0

    def push(self, exp: Experience) -> None:
        if len(self._items) < self.capacity:
            self._items.append(exp)
        else:
            self._items[self._next] = exp
            self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, idx: int) -> Experience:
        return self._items[idx]


def sample_minibatch(buf: ReplayBuffer, size: int,
                     rng: np.random.Generator) -> list[Experience]:
    """Uniform sample: with replacement only when the buffer is smaller than
    the requested size."""
    if len(buf) == 0:
        raise ValueError("cannot sample from an empty buffer")
    replace_draws = size > len(buf)
    idx = rng.choice(len(buf), size=size, replace=replace_draws)
    return [buf[int(i)] for i in idx]


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 3000
    gamma: float = 0.999
    lr: float = 1e-4
    batch_size: int = 128
    buffer_capacity: int = 50_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.01
    epsilon_decay_episodes: int = 0  # 0 -> first 20% of episodes
    t_max: int = 15
    k_p: int = 3  # max choices per ask turn
    k_v: int = 10  # max items per recommendation turn
    prune_items: int = 10
    prune_attrs: int = 10
    rewards: RewardConfig = field(default_factory=RewardConfig)
    seed: int = 0
    target_sync: int = 20  # turns between target snapshots; 0 disables

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon schedule must be nonincreasing")

    def epsilon_at(self, episode: int) -> float:
        decay = self.epsilon_decay_episodes or max(1, int(0.2 * self.episodes))
        frac = min(1.0, episode / decay)
        return self.epsilon_start - (self.epsilon_start - self.epsilon_end) * frac

    def max_len(self, option: OptionKind) -> int:
        return self.k_p if option is OptionKind.ASK else self.k_v

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "rewards"}
        out["rewards"] = dict(self.rewards.__dict__)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        rewards = data.pop("rewards", None)
        cfg = cls(**data) if rewards is None else cls(
            rewards=RewardConfig(**rewards), **data)
        return cfg


# ---------------------------------------------------------------------------
# value targets


def u_value(state: SessionState | Snapshot, option: OptionKind, params: AgentParams,
            catalog: Catalog, k_item: int = 10, k_attr: int = 10,
            cands: dict[OptionKind, np.ndarray] | None = None,
            beta_override: float | None = None) -> float:
    """Value of arriving in a state while the given option is active:
    (1 - beta) * Q_opt + beta * max_opt' Q_opt'.

    Exhausted current option forces the switch term; returns 0 when both
    options are exhausted (terminal convention).
    """
    if isinstance(state, Snapshot):
        state = state_of(state)
    ev = evaluate_state(state, params, catalog, k_item, k_attr, cands=cands)
    available = ev.available_options()
    if not available:
        return 0.0
    best = max(ev.q_omega[o] for o in available)
    if ev.q_omega[option] is None:
        return best
    beta = ev.beta[option] if beta_override is None else beta_override
    return (1.0 - beta) * ev.q_omega[option] + beta * best


def td_target(exp: Experience, params: AgentParams, catalog: Catalog,
              cfg: TrainConfig) -> float:
    """r_t, plus the discounted continuation value for non-terminal steps."""
    if exp.terminal:
        return exp.reward
    cont = u_value(exp.state_after, exp.option, params, catalog,
                   cfg.prune_items, cfg.prune_attrs, cands=exp.next_candidates)
    return exp.reward + cfg.gamma * cont


def _graphs_for(exps: list[Experience], which: str, params: AgentParams,
                catalog: Catalog):
    table = params.table()
    graphs = []
    for e in exps:
        snap = e.state_before if which == "before" else e.state_after
        cands = e.cands_before if which == "before" else e.next_candidates
        graphs.append(build_dynamic_graph(
            state_of(snap), table, catalog,
            cand_items=cands[OptionKind.REC], cand_attrs=cands[OptionKind.ASK]))
    return graphs


def _head_rows(x: np.ndarray, params: AgentParams, prefix: str) -> np.ndarray:
    return _mlp_head(Tensor(x), params.store, prefix, None).data


def _q_rows(state_rows: np.ndarray, option: OptionKind, reps: np.ndarray,
            params: AgentParams) -> np.ndarray:
    tiled = np.repeat(state_rows, reps.shape[0], axis=0)
    value = _head_rows(state_rows, params, "value/")[0, 0]
    adv = _head_rows(np.hstack([tiled, reps, tiled * reps]), params,
                     f"adv/{option.value}/")[:, 0]
    return value + adv


def td_targets(batch: list[Experience], params: AgentParams, catalog: Catalog,
               cfg: TrainConfig) -> np.ndarray:
    """Batched targets against the given (target) parameters."""
    y = np.array([e.reward for e in batch], dtype=np.float64)
    live = [i for i, e in enumerate(batch) if not e.terminal]
    if not live:
        return y
    graphs = _graphs_for([batch[i] for i in live], "after", params, catalog)
    svecs, nreps, offsets = encode_states_batch(
        graphs, params.entities(), params.store, None, params.heads)
    for j, i in enumerate(live):
        e, g, off = batch[i], graphs[j], offsets[j]
        svec = svecs.data[j:j + 1]
        q_omega: dict[OptionKind, float | None] = {}
        for option in OptionKind:
            pos = g.candidate_positions(option)
            if pos.shape[0] == 0:
                q_omega[option] = None
            else:
                q = _q_rows(svec, option, nreps.data[pos + off], params)
                q_omega[option] = expected_option_value(q)
        available = [o for o in OptionKind if q_omega[o] is not None]
        if not available:
            continue  # u = 0 by terminal convention
        best = max(q_omega[o] for o in available)
        if q_omega[e.option] is None:
            u = best
        else:
            beta = float(termination_probability(
                Tensor(svec), e.option, params).data[0, 0])
            u = (1.0 - beta) * q_omega[e.option] + beta * best
        y[i] += cfg.gamma * u
    return y


# ---------------------------------------------------------------------------
# losses


def _single_option(batch: list[Experience]) -> OptionKind:
    option = batch[0].option
    if any(e.option is not option for e in batch):
        raise ValueError("loss minibatch mixes options")
    return option


def _action_positions(batch, graphs, offsets) -> np.ndarray:
    positions = np.zeros(len(batch), dtype=np.int64)
    for i, (e, g, off) in enumerate(zip(batch, graphs, offsets)):
        ids = g.candidate_ids(e.option)
        where = np.nonzero(ids == e.choice.id)[0]
        if where.shape[0] == 0:
            raise ValueError(f"stored action {e.choice} missing from its "
                             f"candidate list {ids}")
        positions[i] = off + g.candidate_positions(e.option)[int(where[0])]
    return positions


def q_loss(batch: list[Experience], params: AgentParams, catalog: Catalog,
           targets: np.ndarray, tape: Tape | None, graphs=None) -> Tensor:
    """Mean squared TD error; gradients reach the Q heads, the state encoder
    and the layer-0 embeddings.

    Graphs (with their preference-score edge weights) are constants of the
    loss; pass prebuilt ones to hold them fixed across re-evaluations.
    """
    if not batch:
        raise ValueError("empty minibatch")
    option = _single_option(batch)
    if graphs is None:
        graphs = _graphs_for(batch, "before", params, catalog)
    svecs, nreps, offsets = encode_states_batch(
        graphs, params.entities(), params.store, tape, params.heads)
    apos = _action_positions(batch, graphs, offsets)
    areps = ad.gather_rows(nreps, apos, tape)
    value = _mlp_head(svecs, params.store, "value/", tape)
    adv = _mlp_head(pair_features(svecs, areps, tape), params.store,
                    f"adv/{option.value}/", tape)
    q = ad.add(value, adv, tape)
    y = Tensor(targets[:, None])
    return ad.mean_all(ad.square(ad.sub(y, q, tape), tape), tape)


def termination_loss(batch: list[Experience], params: AgentParams,
                     catalog: Catalog, tape: Tape | None, graphs=None) -> Tensor:
    """beta(s') times the (constant) advantage of sticking with the option;
    only the termination head receives gradients."""
    if not batch:
        raise ValueError("empty minibatch")
    option = _single_option(batch)
    if graphs is None:
        graphs = _graphs_for(batch, "after", params, catalog)
    svecs, nreps, offsets = encode_states_batch(
        graphs, params.entities(), params.store, None, params.heads)
    adv = np.zeros((len(batch), 1))
    for i, (e, g, off) in enumerate(zip(batch, graphs, offsets)):
        pos = g.candidate_positions(option)
        if pos.shape[0] == 0:
            continue  # option exhausted at s': no termination signal
        svec = svecs.data[i:i + 1]
        q = _q_rows(svec, option, nreps.data[pos + off], params)
        value = _head_rows(svec, params, "value/")[0, 0]
        adv[i, 0] = expected_option_value(q) - value
    beta = ad.sigmoid(_mlp_head(Tensor(svecs.data), params.store,
                                f"term/{option.value}/", tape), tape)
    return ad.mean_all(ad.mul_const(beta, adv, tape), tape)


def feedback_loss(batch: list[Experience], params: AgentParams, catalog: Catalog,
                  tape: Tape | None, graphs=None) -> Tensor:
    """Squared error between predicted acceptance and the stored label;
    only the feedback head receives gradients."""
    if not batch:
        raise ValueError("empty minibatch")
    option = _single_option(batch)
    if graphs is None:
        graphs = _graphs_for(batch, "before", params, catalog)
    svecs, nreps, offsets = encode_states_batch(
        graphs, params.entities(), params.store, None, params.heads)
    apos = _action_positions(batch, graphs, offsets)
    reps = nreps.data[apos]
    x = Tensor(np.hstack([svecs.data, reps, svecs.data * reps]))
    prob = ad.sigmoid(_mlp_head(x, params.store, f"fb/{option.value}/", tape), tape)
    labels = Tensor(np.array([[1.0 if e.accepted else 0.0] for e in batch]))
    return ad.mean_all(ad.square(ad.sub(labels, prob, tape), tape), tape)


# ---------------------------------------------------------------------------
# episodes


def run_episode(
    catalog: Catalog,
    episode: tuple[int, int],
    params: AgentParams,
    cfg: TrainConfig,
    rng: np.random.Generator,
    mode: str,  # train | eval
    epsilon: float = 0.0,
    behavior: PolicyBehavior = FULL_BEHAVIOR,
    on_turn_end=None,
) -> tuple[dict, list[Experience]]:
    """Play one full episode; returns the episode log record plus (train
    mode) the experiences it produced, in storage order."""
    user, target = episode
    state = reset_session(catalog, user, target, rng)
    table = params.table()
    experiences: list[Experience] = []
    turns = []
    success_turn = None
    success_rank = None

    while True:
        ev = evaluate_state(state, params, catalog, cfg.prune_items, cfg.prune_attrs)
        if not ev.available_options():
            break  # nothing left to ask or recommend: give up
        option = select_option(ev, epsilon if mode == "train" else 0.0, rng,
                               mode=behavior.option_mode)
        chain, steps = generate_choice_chain(
            state, option, params, catalog, mode,
            feedback_source="oracle" if mode == "train" else "predictor",
            max_len=cfg.max_len(option), rng=rng,
            k_item=cfg.prune_items, k_attr=cfg.prune_attrs,
            behavior=behavior, first_eval=ev,
        )

        if mode == "train":
            turn_exps = []
            prev = state
            prev_cands = {o: ev.candidates(o) for o in OptionKind}
            for step in steps:
                after_cands = pruned_candidates(step.state_after, table, catalog,
                                                cfg.prune_items, cfg.prune_attrs)
                turn_exps.append(Experience(
                    state_before=snapshot_of(prev),
                    cands_before=prev_cands,
                    choice=step.choice,
                    accepted=step.assumed_accepted,
                    reward=choice_reward(option, step.assumed_accepted, cfg.rewards),
                    state_after=snapshot_of(step.state_after),
                    next_candidates=after_cands,
                    option=option,
                    terminal=False,
                ))
                prev = step.state_after
                prev_cands = after_cands
            state = steps[-1].state_after
            responses = [s.assumed_accepted for s in steps]
        else:
            # present the generated chain; the user answers one by one
            responses = []
            for i, choice in enumerate(chain.choices):
                accepted = simulate_user_response(state, choice)
                responses.append(accepted)
                state = apply_choice_outcome(state, choice, accepted, catalog,
                                             enforce_candidate=False)
                if option is OptionKind.REC and accepted:
                    break
            turn_exps = []

        state = advance_turn(state)
        if state.success:
            success_turn = state.turn
            accepted_at = responses.index(True) if option is OptionKind.REC else None
            if option is OptionKind.REC:
                success_rank = accepted_at + 1
        turns.append({
            "option": option.value,
            "choices": chain.ids()[:len(responses)],
            "accepted": [bool(r) for r in responses],
        })
        status = episode_status(state, cfg.t_max)

        if mode == "train" and turn_exps:
            if status is not EpisodeStatus.ONGOING:
                turn_exps[-1] = replace_terminal(turn_exps[-1])
            for exp in turn_exps:
                experiences.append(exp)
            if on_turn_end is not None:
                on_turn_end(option, turn_exps)
        if status is not EpisodeStatus.ONGOING:
            break

    final_status = episode_status(state, cfg.t_max)
    if final_status is EpisodeStatus.ONGOING:
        final_status = EpisodeStatus.TIMEOUT  # both spaces exhausted early
    record = {
        "user": user,
        "target": target,
        "turns": turns,
        "status": final_status.value,
        "success_turn": success_turn,
        "success_rank": success_rank,
        "num_turns": state.turn,
    }
    return record, experiences


def replace_terminal(exp: Experience) -> Experience:
    return Experience(exp.state_before, exp.cands_before, exp.choice, exp.accepted,
                      exp.reward, exp.state_after, exp.next_candidates, exp.option,
                      terminal=True)


# ---------------------------------------------------------------------------
# training loop


def _filtered(grads: dict[str, np.ndarray], prefixes: tuple[str, ...]) -> dict:
    return {k: v for k, v in grads.items() if k.startswith(prefixes)}


def train(
    catalog: Catalog,
    split: InteractionSplit,
    cfg: TrainConfig,
    table: EmbeddingTable,
    behavior: PolicyBehavior = FULL_BEHAVIOR,
    progress: bool = False,
) -> tuple[AgentParams, list[dict]]:
    """Full online training: one optimization round per played turn.

    Deterministic for a fixed config seed. Returns final parameters and one
    history row per episode.
    """
    from .optim import AdamState, adam_step

    if not split.train:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    params = init_agent_params(table, rng)
    target_params = _clone_params(params) if cfg.target_sync > 0 else params
    buffers = {o: ReplayBuffer(cfg.buffer_capacity) for o in OptionKind}
    adam = AdamState()
    history: list[dict] = []
    recent_success: list[bool] = []
    turn_counter = 0

    for episode_idx in range(cfg.episodes):
        epsilon = cfg.epsilon_at(episode_idx)
        pair = split.train[int(rng.integers(len(split.train)))]
        losses: list[tuple[float, float, float]] = []

        def optimize(option: OptionKind, turn_exps: list[Experience]) -> None:
            nonlocal turn_counter, target_params
            for exp in turn_exps:
                buffers[option].push(exp)
            turn_counter += 1
            if cfg.target_sync > 0 and turn_counter % cfg.target_sync == 1:
                target_params = _clone_params(params)

            batch = sample_minibatch(buffers[option], cfg.batch_size, rng)
            targets = td_targets(batch, target_params, catalog, cfg)
            tape = Tape()
            loss_q = q_loss(batch, params, catalog, targets, tape)
            grads = backward(tape, loss_q, params.store)
            adam_step(params.store, _filtered(grads, params.q_prefixes(option)),
                      adam, cfg.lr)

            batch = sample_minibatch(buffers[option], cfg.batch_size, rng)
            tape = Tape()
            loss_t = termination_loss(batch, params, catalog, tape)
            grads = backward(tape, loss_t, params.store)
            adam_step(params.store, _filtered(grads, (f"term/{option.value}/",)),
                      adam, cfg.lr)

            fb_losses = []
            for fb_option, buf in buffers.items():
                if len(buf) == 0:
                    continue
                batch = sample_minibatch(buf, cfg.batch_size, rng)
                tape = Tape()
                loss_f = feedback_loss(batch, params, catalog, tape)
                grads = backward(tape, loss_f, params.store)
                adam_step(params.store,
                          _filtered(grads, (f"fb/{fb_option.value}/",)),
                          adam, cfg.lr)
                fb_losses.append(float(loss_f.data))
            losses.append((float(loss_q.data), float(loss_t.data),
                           float(np.mean(fb_losses)) if fb_losses else 0.0))

        record, _ = run_episode(catalog, pair, params, cfg, rng, "train",
                                epsilon=epsilon, behavior=behavior,
                                on_turn_end=optimize)
        recent_success.append(record["status"] == "success")
        if len(recent_success) > 100:
            recent_success.pop(0)
        mean = np.mean(losses, axis=0) if losses else (np.nan, np.nan, np.nan)
        history.append({
            "episode": episode_idx,
            "q_loss": float(mean[0]),
            "term_loss": float(mean[1]),
            "fb_loss": float(mean[2]),
            "rolling_SR": float(np.mean(recent_success)),
            "epsilon": epsilon,
        })
        if progress and (episode_idx + 1) % 100 == 0:
            print(f"episode {episode_idx + 1}/{cfg.episodes} "
                  f"rolling_SR={history[-1]['rolling_SR']:.3f} "
                  f"epsilon={epsilon:.3f}")
    return params, history


def _clone_params(params: AgentParams) -> AgentParams:
    return AgentParams(
        store=params.store.copy(), dim=params.dim, heads=params.heads,
        num_entities=params.num_entities, num_relations=params.num_relations,
        relation_vectors=params.relation_vectors,
    )


def write_history_csv(path: str | Path, history: list[dict]) -> None:
    columns = ["episode", "q_loss", "term_loss", "fb_loss", "rolling_SR", "epsilon"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in history:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in columns])


# ---------------------------------------------------------------------------
# ablations


ABLATION_VARIANTS = {
    "no_long_policy": PolicyBehavior(option_mode="random"),
    "no_intra_ask": PolicyBehavior(ask_mode="oneshot"),
    "no_intra_rec": PolicyBehavior(rec_mode="oneshot"),
    "no_termination": PolicyBehavior(termination="never"),
    "no_feedback": PolicyBehavior(feedback="coin"),
}


def run_ablation(catalog: Catalog, split: InteractionSplit, cfg: TrainConfig,
                 variant: str, table: EmbeddingTable, eval_seed: int = 0,
                 params: AgentParams | None = None):
    """Train (unless given parameters) and evaluate with one component
    replaced by its degraded stand-in. Returns (params, MetricsReport)."""
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}; "
                         f"expected one of {sorted(ABLATION_VARIANTS)}")
    from .evaluate import evaluate_policy

    behavior = ABLATION_VARIANTS[variant]
    if params is None:
        params, _ = train(catalog, split, cfg, table, behavior=behavior)
    report = evaluate_policy(params, catalog, split.test, cfg, seed=eval_seed,
                             behavior=behavior)
    return params, report
