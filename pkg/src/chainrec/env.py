"""Session state, candidate spaces, transitions, rewards, and the simulated user.

One user-visible turn presents a chain of choices; the user answers them one
by one, and each answer advances the fine-grained timestep. States are
immutable: applying an outcome returns a new state, so any state doubles as
a snapshot.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .catalog import Catalog


class OptionKind(enum.Enum):
    ASK = "ask"
    REC = "rec"

    @property
    def choice_kind(self) -> str:
        return "attribute" if self is OptionKind.ASK else "item"


class EpisodeStatus(enum.Enum):
    ONGOING = "ongoing"
    SUCCESS = "success"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Choice:
    kind: str  # "attribute" | "item"
    id: int

    def __post_init__(self):
        if self.kind not in ("attribute", "item"):
            raise ValueError(f"unknown choice kind {self.kind!r}")


@dataclass(frozen=True)
class ChoiceChain:
    option: OptionKind
    choices: tuple[Choice, ...]

    def __post_init__(self):
        if not self.choices:
            raise ValueError("a choice chain holds at least one choice")
        if any(c.kind != self.option.choice_kind for c in self.choices):
            raise ValueError(f"chain for {self.option.value} may only hold "
                             f"{self.option.choice_kind} choices")
        ids = [c.id for c in self.choices]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate choice ids in chain: {ids}")

    def ids(self) -> list[int]:
        return [c.id for c in self.choices]


@dataclass(frozen=True)
class RewardConfig:
    rec_suc: float = 1.0
    ask_acc: float = 1e-2
    ask_rej: float = -1e-4
    rec_rej: float = -1e-4

    def validate(self) -> list[str]:
        issues = []
        if not self.rec_suc > self.ask_acc > 0:
            issues.append("expected rec_suc > ask_acc > 0")
        if not (self.ask_rej < 0 and self.rec_rej < 0):
            issues.append("expected negative ask_rej and rec_rej")
        return issues


# the MovieLens profile flattens the ask reward (retrieving accepted
# attributes barely narrows that catalog)
MOVIELENS_REWARDS = RewardConfig(ask_acc=1e-5)


@dataclass(frozen=True)
class SessionState:
    user: int
    target: int | None  # hidden from the agent; None in human mode
    acc_attrs: tuple[int, ...]  # acceptance order
    rej_attrs: tuple[int, ...] = ()
    rej_items: tuple[int, ...] = ()
    turn: int = 0  # completed turns
    timestep: int = 0
    success: bool = False
    history: tuple[tuple[int, str, int, bool], ...] = field(default=())
    # history entries: (turn number, option value, choice id, accepted)
    target_attrs: tuple[int, ...] | None = None

    def answered_attrs(self) -> frozenset[int]:
        return frozenset(self.acc_attrs) | frozenset(self.rej_attrs)


def reset_session(catalog: Catalog, user: int, target: int | None,
                  rng: np.random.Generator | int) -> SessionState:
    """Fresh session with one preferred attribute drawn from the target."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    if target is None:
        raise ValueError("simulator sessions need a target; see start_human_session")
    attrs = catalog.item_attrs(target)
    if attrs.shape[0] == 0:
        raise ValueError(f"target item {target} has no attributes")
    p0 = int(attrs[rng.integers(attrs.shape[0])])
    return SessionState(user=user, target=target, acc_attrs=(p0,),
                        target_attrs=tuple(int(a) for a in attrs))


def start_human_session(user: int, initial_attr: int, catalog: Catalog) -> SessionState:
    """Human plays the user: no hidden target, initial preference supplied."""
    if not 0 <= initial_attr < catalog.num_attributes:
        raise ValueError(f"unknown attribute id {initial_attr}")
    return SessionState(user=user, target=None, acc_attrs=(initial_attr,))


def candidate_items_mask(state: SessionState, catalog: Catalog) -> np.ndarray:
    required = np.asarray(sorted(state.acc_attrs), dtype=np.int64)
    excluded = np.zeros(catalog.num_items, dtype=bool)
    if state.rej_items:
        excluded[list(state.rej_items)] = True
    return _kernels.items_with_attrs(catalog.attr_indptr, catalog.attr_indices,
                                     required, excluded)


def candidate_sets(state: SessionState, catalog: Catalog) -> tuple[np.ndarray, np.ndarray]:
    """(candidate item ids, candidate attribute ids), both ascending."""
    items = np.nonzero(candidate_items_mask(state, catalog))[0]
    attr_mask = _kernels.attrs_of_items(catalog.item_indptr, catalog.item_indices,
                                        items, catalog.num_attributes)
    for a in state.acc_attrs:
        attr_mask[a] = False
    for a in state.rej_attrs:
        attr_mask[a] = False
    return items, np.nonzero(attr_mask)[0]


def candidate_actions(state: SessionState, option: OptionKind,
                      catalog: Catalog) -> np.ndarray:
    """Legal choice ids for one option, ascending (empty output is legal)."""
    items, attrs = candidate_sets(state, catalog)
    return items if option is OptionKind.REC else attrs


def simulate_user_response(state: SessionState, choice: Choice) -> bool:
    """Truthful per-choice feedback against the hidden target."""
    if state.target is None:
        raise ValueError("no target: human mode answers come from the client")
    if choice.kind == "item":
        return choice.id == state.target
    return choice.id in (state.target_attrs or ())


def apply_choice_outcome(state: SessionState, choice: Choice, accepted: bool,
                         catalog: Catalog, enforce_candidate: bool = True,
                         ) -> SessionState:
    """Advance one timestep with the user's (or predicted) verdict.

    ``enforce_candidate=False`` is used when replaying true answers to a
    chain generated under predicted feedback, where the realized state may
    have drifted from the simulated one.
    """
    if state.success:
        raise ValueError("session already ended in success")
    if choice.kind == "attribute":
        if choice.id in state.acc_attrs or choice.id in state.rej_attrs:
            raise ValueError(f"attribute {choice.id} already answered")
    elif choice.id in state.rej_items:
        raise ValueError(f"item {choice.id} already rejected")
    if enforce_candidate:
        option = OptionKind.ASK if choice.kind == "attribute" else OptionKind.REC
        legal = candidate_actions(state, option, catalog)
        if int(choice.id) not in legal:
            raise ValueError(f"{choice.kind} {choice.id} not in the candidate space")

    event = (state.turn + 1, _option_of(choice).value, choice.id, bool(accepted))
    updates: dict = {
        "timestep": state.timestep + 1,
        "history": state.history + (event,),
    }
    if choice.kind == "attribute":
        if accepted:
            updates["acc_attrs"] = state.acc_attrs + (choice.id,)
        else:
            updates["rej_attrs"] = state.rej_attrs + (choice.id,)
    else:
        if accepted:
            updates["success"] = True
        else:
            updates["rej_items"] = state.rej_items + (choice.id,)
    return replace(state, **updates)


def _option_of(choice: Choice) -> OptionKind:
    return OptionKind.ASK if choice.kind == "attribute" else OptionKind.REC


def advance_turn(state: SessionState) -> SessionState:
    return replace(state, turn=state.turn + 1)


def choice_reward(option: OptionKind, accepted: bool, cfg: RewardConfig) -> float:
    if option is OptionKind.ASK:
        return cfg.ask_acc if accepted else cfg.ask_rej
    return cfg.rec_suc if accepted else cfg.rec_rej


def episode_status(state: SessionState, t_max: int) -> EpisodeStatus:
    if state.success:
        return EpisodeStatus.SUCCESS
    if state.turn >= t_max:
        return EpisodeStatus.TIMEOUT
    return EpisodeStatus.ONGOING


def replay_history(catalog: Catalog, user: int, target: int | None, p0: int,
                   history: tuple[tuple[int, str, int, bool], ...]) -> SessionState:
    """Rebuild a state from its event history (determinism oracle)."""
    target_attrs = None
    if target is not None:
        target_attrs = tuple(int(a) for a in catalog.item_attrs(target))
    state = SessionState(user=user, target=target, acc_attrs=(p0,),
                         target_attrs=target_attrs)
    for turn, option_value, choice_id, accepted in history:
        while state.turn < turn - 1:
            state = advance_turn(state)
        kind = "attribute" if option_value == OptionKind.ASK.value else "item"
        state = apply_choice_outcome(state, Choice(kind, choice_id), accepted,
                                     catalog, enforce_candidate=False)
    return state
