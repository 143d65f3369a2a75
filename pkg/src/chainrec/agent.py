"""Decision core: dueling Q-values, option selection, chain generation.

Each option owns its advantage, termination and feedback heads (two-layer
perceptrons of hidden width d); the state value head is shared. The
embedding table rides along as trainable layer-0 features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Tensor
from .catalog import Catalog
from .env import (
    Choice,
    ChoiceChain,
    OptionKind,
    SessionState,
    apply_choice_outcome,
    simulate_user_response,
)
from .graph_state import (
    DynamicGraph,
    build_dynamic_graph,
    encode_state,
    gcn_encode,
    init_encoder_params,
)
from .kg_embed import EmbeddingTable

CHECKPOINT_VERSION = 1
FEEDBACK_THRESHOLD = 0.5  # exact 0.5 counts as accept
TERMINATION_THRESHOLD = 0.5

HEAD_PREFIXES = {
    "value": ("value/",),
    "advantage": ("adv/ask/", "adv/rec/"),
    "termination": ("term/ask/", "term/rec/"),
    "feedback": ("fb/ask/", "fb/rec/"),
}


@dataclass
class AgentParams:
    store: ParamStore
    dim: int
    heads: int = 2
    num_entities: int = 0
    num_relations: int = 0
    relation_vectors: np.ndarray | None = None  # kept for checkpoint fidelity

    def entities(self) -> Tensor:
        return self.store["embed/entities"]

    def table(self) -> EmbeddingTable:
        """Current embedding values as a plain (gradient-free) table."""
        rel = self.relation_vectors
        if rel is None:
            rel = np.zeros((max(self.num_relations, 1), self.dim))
        return EmbeddingTable(self.store["embed/entities"].data, rel)

    def q_prefixes(self, option: OptionKind) -> tuple[str, ...]:
        return ("value/", f"adv/{option.value}/", "gcn/", "attn/", "ffn/", "ln/",
                "embed/")


TERMINATION_BIAS_INIT = -1.0  # fresh agents lean toward longer chains


def _init_head(store: ParamStore, prefix: str, in_dim: int, hidden: int,
               rng: np.random.Generator, bias_out: float = 0.0) -> None:
    limit1 = np.sqrt(6.0 / (in_dim + hidden))
    limit2 = np.sqrt(6.0 / (hidden + 1))
    store.add(prefix + "w1", rng.uniform(-limit1, limit1, size=(in_dim, hidden)))
    store.add(prefix + "b1", np.zeros(hidden))
    store.add(prefix + "w2", rng.uniform(-limit2, limit2, size=(hidden, 1)))
    store.add(prefix + "b2", np.full(1, bias_out))


def init_agent_params(table: EmbeddingTable, rng: np.random.Generator,
                      heads: int = 2) -> AgentParams:
    dim = table.dim
    store = ParamStore()
    store.add("embed/entities", table.entity_vectors.copy())
    init_encoder_params(store, dim, rng)
    _init_head(store, "value/", dim, dim, rng)
    for option in OptionKind:
        _init_head(store, f"adv/{option.value}/", 3 * dim, dim, rng)
        _init_head(store, f"term/{option.value}/", dim, dim, rng,
                   bias_out=TERMINATION_BIAS_INIT)
        _init_head(store, f"fb/{option.value}/", 3 * dim, dim, rng)
    return AgentParams(
        store=store, dim=dim, heads=heads,
        num_entities=table.entity_vectors.shape[0],
        num_relations=table.relation_vectors.shape[0],
        relation_vectors=table.relation_vectors.copy(),
    )


def _mlp_head(x: Tensor, store: ParamStore, prefix: str, tape: Tape | None) -> Tensor:
    h = ad.relu(ad.affine(x, store[prefix + "w1"], store[prefix + "b1"], tape), tape)
    return ad.affine(h, store[prefix + "w2"], store[prefix + "b2"], tape)


def pair_features(state_rows: Tensor, action_reps: Tensor,
                  tape: Tape | None) -> Tensor:
    """(n, 3d) state-action rows: state, action, and their elementwise
    product (the product term lets the heads express similarity directly)."""
    inter = ad.mul(state_rows, action_reps, tape)
    return ad.concat_cols([state_rows, action_reps, inter], tape)


def _pair_rows(state_vec: Tensor, action_reps: Tensor, tape: Tape | None) -> Tensor:
    """pair_features with a single state row broadcast over all actions."""
    n = action_reps.data.shape[0]
    tiled = ad.gather_rows(state_vec, np.zeros(n, dtype=np.int64), tape)
    return pair_features(tiled, action_reps, tape)


def q_values(state_vec: Tensor, option: OptionKind, action_reps: Tensor,
             params: AgentParams, tape: Tape | None = None) -> Tensor:
    """Dueling Q for each action row: f_V(state) + f_A(state, action).

    The advantage term is used as-is (no mean-centering across actions).
    """
    n = action_reps.data.shape[0]
    value = _mlp_head(state_vec, params.store, "value/", tape)
    value_rows = ad.gather_rows(value, np.zeros(n, dtype=np.int64), tape)
    adv = _mlp_head(_pair_rows(state_vec, action_reps, tape), params.store,
                    f"adv/{option.value}/", tape)
    return ad.add(value_rows, adv, tape)


def q_u(state_vec: Tensor, option: OptionKind, action_rep: Tensor,
        params: AgentParams, tape: Tape | None = None) -> Tensor:
    """Q of a single action; returns a (1, 1) tensor."""
    return q_values(state_vec, option, action_rep, params, tape)


def termination_probability(state_vec: Tensor, option: OptionKind,
                            params: AgentParams, tape: Tape | None = None) -> Tensor:
    return ad.sigmoid(_mlp_head(state_vec, params.store, f"term/{option.value}/", tape),
                      tape)


def predict_feedback(state_vec: Tensor, option: OptionKind, action_reps: Tensor,
                     params: AgentParams, tape: Tape | None = None) -> Tensor:
    rows = _pair_rows(state_vec, action_reps, tape)
    return ad.sigmoid(_mlp_head(rows, params.store, f"fb/{option.value}/", tape), tape)


def softmax_1d(q: np.ndarray) -> np.ndarray:
    e = np.exp(q - q.max())
    return e / e.sum()


def expected_option_value(q: np.ndarray) -> float:
    """Softmax-weighted mean of the Q values (the option-level Q)."""
    p = softmax_1d(q)
    return float(p @ q)


@dataclass
class StateEval:
    """Everything the policy needs about one state, computed without a tape."""

    state: SessionState
    graph: DynamicGraph
    node_reps: np.ndarray
    state_vec: np.ndarray  # (1, d)
    q: dict[OptionKind, np.ndarray]
    probs: dict[OptionKind, np.ndarray]
    q_omega: dict[OptionKind, float | None]  # None when the option is exhausted
    beta: dict[OptionKind, float]

    def candidates(self, option: OptionKind) -> np.ndarray:
        return self.graph.candidate_ids(option)

    def available_options(self) -> list[OptionKind]:
        return [o for o in OptionKind if self.candidates(o).shape[0] > 0]


def evaluate_state(state: SessionState, params: AgentParams, catalog: Catalog,
                   k_item: int, k_attr: int,
                   cands: dict[OptionKind, np.ndarray] | None = None) -> StateEval:
    """One forward pass over the session graph (numpy only, no tape)."""
    table = params.table()
    graph = build_dynamic_graph(
        state, table, catalog, k_item, k_attr,
        cand_items=None if cands is None else cands[OptionKind.REC],
        cand_attrs=None if cands is None else cands[OptionKind.ASK],
    )
    node_reps = gcn_encode(graph, params.entities(), params.store)
    state_vec = encode_state(state, node_reps, params.store, heads=params.heads,
                             acc_positions=graph.acc_positions)
    q: dict[OptionKind, np.ndarray] = {}
    probs: dict[OptionKind, np.ndarray] = {}
    q_omega: dict[OptionKind, float | None] = {}
    beta: dict[OptionKind, float] = {}
    for option in OptionKind:
        pos = graph.candidate_positions(option)
        if pos.shape[0] == 0:
            q[option] = np.zeros(0)
            probs[option] = np.zeros(0)
            q_omega[option] = None
        else:
            reps = Tensor(node_reps.data[pos])
            qv = q_values(state_vec, option, reps, params).data[:, 0]
            q[option] = qv
            probs[option] = softmax_1d(qv)
            q_omega[option] = expected_option_value(qv)
        beta[option] = float(termination_probability(state_vec, option, params).data[0, 0])
    return StateEval(state, graph, node_reps.data, state_vec.data, q, probs,
                     q_omega, beta)


def intra_option_distribution(ev: StateEval, option: OptionKind) -> np.ndarray:
    """Softmax policy over the option's pruned candidates."""
    if ev.candidates(option).shape[0] == 0:
        raise ValueError(f"no candidates for option {option.value}")
    return ev.probs[option]


def q_omega(ev: StateEval, option: OptionKind) -> float:
    value = ev.q_omega[option]
    if value is None:
        raise ValueError(f"option {option.value} is exhausted")
    return value


def select_option(ev: StateEval, epsilon: float, rng: np.random.Generator,
                  mode: str = "learned") -> OptionKind:
    """Epsilon-soft argmax over option values; exhausted options are never
    selected; Q ties resolve to ask."""
    available = ev.available_options()
    if not available:
        raise ValueError("both options are exhausted")
    if len(available) == 1:
        return available[0]
    if mode == "random" or (epsilon > 0 and rng.random() < epsilon):
        return available[int(rng.integers(len(available)))]
    best = available[0]
    for option in available[1:]:
        if ev.q_omega[option] > ev.q_omega[best]:
            best = option
    return best


@dataclass(frozen=True)
class PolicyBehavior:
    """Behavioral switches used by the ablation variants."""

    option_mode: str = "learned"  # learned | random
    ask_mode: str = "chain"  # chain | oneshot
    rec_mode: str = "chain"
    termination: str = "learned"  # learned | never
    feedback: str = "predictor"  # predictor | coin

    def chain_mode(self, option: OptionKind) -> str:
        return self.ask_mode if option is OptionKind.ASK else self.rec_mode


FULL_BEHAVIOR = PolicyBehavior()


@dataclass
class PredictedStep:
    choice: Choice
    feedback_prob: float
    assumed_accepted: bool
    state_after: SessionState


def _predict_for(ev: StateEval, option: OptionKind, position: int,
                 params: AgentParams) -> float:
    rep = Tensor(ev.node_reps[position][None, :])
    return float(predict_feedback(Tensor(ev.state_vec), option, rep, params).data[0, 0])


def generate_choice_chain(
    state: SessionState,
    option: OptionKind,
    params: AgentParams,
    catalog: Catalog,
    mode: str,  # train | eval
    feedback_source: str,  # oracle | predictor
    max_len: int,
    rng: np.random.Generator,
    k_item: int = 10,
    k_attr: int = 10,
    behavior: PolicyBehavior = FULL_BEHAVIOR,
    first_eval: StateEval | None = None,
) -> tuple[ChoiceChain, list[PredictedStep]]:
    """Build one turn's multi-choice question step by step.

    Each step samples (train) or argmaxes (eval) a choice, obtains feedback
    (true simulator response or thresholded prediction), advances a working
    state, and stops on termination, max_len, candidate exhaustion, or a
    recommendation acceptance. The returned steps record the working-state
    trajectory.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    ev = first_eval if first_eval is not None else evaluate_state(
        state, params, catalog, k_item, k_attr)
    if ev.candidates(option).shape[0] == 0:
        raise ValueError(f"no initial candidates for option {option.value}")

    work = state
    choices: list[Choice] = []
    steps: list[PredictedStep] = []

    def answer(choice: Choice, fb_prob: float) -> bool:
        if feedback_source == "oracle":
            return simulate_user_response(work, choice)
        if behavior.feedback == "coin":
            return bool(rng.integers(2))
        return fb_prob >= FEEDBACK_THRESHOLD

    if behavior.chain_mode(option) == "oneshot":
        # whole question picked from the initial Q ranking, no intermediate
        # reasoning; feedback probabilities all come from the first pass
        order = np.argsort(-ev.q[option], kind="stable")[:max_len]
        positions = ev.graph.candidate_positions(option)
        for i in order:
            chosen = int(ev.candidates(option)[i])
            choice = Choice(option.choice_kind, chosen)
            fb_prob = _predict_for(ev, option, int(positions[i]), params)
            accepted = answer(choice, fb_prob)
            work = apply_choice_outcome(work, choice, accepted, catalog,
                                        enforce_candidate=False)
            choices.append(choice)
            steps.append(PredictedStep(choice, fb_prob, accepted, work))
            if option is OptionKind.REC and accepted:
                break
        return ChoiceChain(option, tuple(choices)), steps

    while True:
        cands = ev.candidates(option)
        if mode == "train":
            idx = int(rng.choice(cands.shape[0], p=ev.probs[option]))
        else:
            idx = int(np.argmax(ev.q[option]))
        chosen = int(cands[idx])
        position = int(ev.graph.candidate_positions(option)[idx])
        choice = Choice(option.choice_kind, chosen)
        fb_prob = _predict_for(ev, option, position, params)
        accepted = answer(choice, fb_prob)
        work = apply_choice_outcome(work, choice, accepted, catalog,
                                    enforce_candidate=False)
        choices.append(choice)
        steps.append(PredictedStep(choice, fb_prob, accepted, work))

        if option is OptionKind.REC and accepted:
            break
        if len(choices) >= max_len:
            break
        ev = evaluate_state(work, params, catalog, k_item, k_attr)
        if ev.candidates(option).shape[0] == 0:
            break
        if behavior.termination == "learned":
            beta = ev.beta[option]
            terminate = (rng.random() < beta) if mode == "train" \
                else beta >= TERMINATION_THRESHOLD
            if terminate:
                break
    return ChoiceChain(option, tuple(choices)), steps


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, params: AgentParams,
                    extra_meta: dict | None = None) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "dim": params.dim,
        "heads": params.heads,
        "num_entities": params.num_entities,
        "num_relations": params.num_relations,
    }
    if extra_meta:
        meta.update(extra_meta)
    arrays = {"param/" + name: t.data for name, t in params.store.items()}
    if params.relation_vectors is not None:
        arrays["relations"] = params.relation_vectors
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(),
                                   dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path) -> tuple[AgentParams, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        store = ParamStore()
        for key in data.files:
            if key.startswith("param/"):
                store.add(key[len("param/"):], np.asarray(data[key], dtype=np.float64))
        relations = np.asarray(data["relations"], dtype=np.float64) \
            if "relations" in data.files else None
    params = AgentParams(
        store=store, dim=meta["dim"], heads=meta["heads"],
        num_entities=meta["num_entities"], num_relations=meta["num_relations"],
        relation_vectors=relations,
    )
    return params, meta
