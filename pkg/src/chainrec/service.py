"""HTTP session API: a human plays the user against a trained agent.

Sessions live in memory. Requests for distinct sessions run concurrently;
requests for one session serialize on its lock. The checkpoint, catalog and
config are shared read-only. Question generation is deterministic given the
server seed and the request sequence, so an accepted request log can be
replayed bit-for-bit against a fresh server.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .agent import AgentParams, evaluate_state, generate_choice_chain, select_option
from .catalog import Catalog
from .env import (
    ChoiceChain,
    EpisodeStatus,
    OptionKind,
    SessionState,
    advance_turn,
    apply_choice_outcome,
    candidate_sets,
    episode_status,
    start_human_session,
)
from .training import TrainConfig

API_VERSION = 1
DEFAULT_TTL_SECONDS = 30 * 60


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass
class ApiSession:
    session_id: str
    state: SessionState
    rng: np.random.Generator
    created_at: float
    last_active: float
    pending: ChoiceChain | None = None
    status: str = "active"  # active | success | timeout | closed
    success_turn: int | None = None
    success_rank: int | None = None
    turns: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class SessionService:
    """Transport-independent request handling (the HTTP layer delegates here)."""

    def __init__(self, params: AgentParams, catalog: Catalog, cfg: TrainConfig,
                 seed: int = 0, ttl_seconds: float = DEFAULT_TTL_SECONDS,
                 clock=time.time):
        self.params = params
        self.catalog = catalog
        self.cfg = cfg
        self.seed = seed
        self.ttl = ttl_seconds
        self.clock = clock
        self._sessions: dict[str, ApiSession] = {}
        self._registry_lock = threading.Lock()
        self._counter = 0

    # -- plumbing ----------------------------------------------------------

    def _session(self, session_id: str) -> ApiSession:
        with self._registry_lock:
            session = self._sessions.get(session_id)
            if session is not None and self.clock() - session.last_active > self.ttl:
                del self._sessions[session_id]
                session = None
        if session is None:
            raise ApiError(404, f"unknown session {session_id!r}")
        return session

    def _label(self, kind: str, entity_id: int) -> str:
        label = self.catalog.label(kind, entity_id)
        if label is not None:
            return label
        return f"{kind} #{entity_id}"

    def _choice_payload(self, chain: ChoiceChain) -> list[dict]:
        cards = []
        for choice in chain.choices:
            card = {"id": choice.id, "kind": choice.kind,
                    "label": self._label(choice.kind, choice.id)}
            if choice.kind == "attribute":
                type_id = int(self.catalog.attr_type[choice.id])
                card["type_id"] = type_id
                card["type_label"] = self._label("type", type_id)
            cards.append(card)
        return cards

    def _next_question(self, session: ApiSession) -> dict | None:
        """Generate the next chain for the session, or None when no option
        has candidates left."""
        ev = evaluate_state(session.state, self.params, self.catalog,
                            self.cfg.prune_items, self.cfg.prune_attrs)
        if not ev.available_options():
            return None
        option = select_option(ev, 0.0, session.rng)
        chain, _ = generate_choice_chain(
            session.state, option, self.params, self.catalog, mode="eval",
            feedback_source="predictor", max_len=self.cfg.max_len(option),
            rng=session.rng, k_item=self.cfg.prune_items,
            k_attr=self.cfg.prune_attrs, first_eval=ev)
        session.pending = chain
        items, _ = candidate_sets(session.state, self.catalog)
        return {
            "option": option.value,
            "turn": session.state.turn + 1,
            "choices": self._choice_payload(chain),
            "candidate_count": int(items.shape[0]),
        }

    def _summary(self, session: ApiSession) -> dict:
        items, _ = candidate_sets(session.state, self.catalog)
        pending = None
        if session.pending is not None and session.status == "active":
            pending = {
                "option": session.pending.option.value,
                "turn": session.state.turn + 1,
                "choices": self._choice_payload(session.pending),
                "candidate_count": int(items.shape[0]),
            }
        return {
            "api_version": API_VERSION,
            "session_id": session.session_id,
            "status": session.status,
            "turn": session.state.turn,
            "accepted_attributes": list(session.state.acc_attrs),
            "rejected_attributes": list(session.state.rej_attrs),
            "rejected_items": list(session.state.rej_items),
            "candidate_count": int(items.shape[0]),
            "turns": session.turns,
            "pending": pending,
            "success_turn": session.success_turn,
            "success_rank": session.success_rank,
        }

    # -- endpoints ----------------------------------------------------------

    def create_session(self, body: dict) -> dict:
        if not isinstance(body, dict) or "initial_attribute_id" not in body:
            raise ApiError(400, "body must carry initial_attribute_id")
        try:
            attr = int(body["initial_attribute_id"])
        except (TypeError, ValueError):
            raise ApiError(400, "initial_attribute_id must be an integer") from None
        if not 0 <= attr < self.catalog.num_attributes:
            raise ApiError(422, f"unknown attribute id {attr}")
        user = int(body.get("user_id", 0))
        if not 0 <= user < self.catalog.num_users:
            raise ApiError(422, f"unknown user id {user}")
        with self._registry_lock:
            index = self._counter
            self._counter += 1
            session_id = f"s{index:06d}"
            session = ApiSession(
                session_id=session_id,
                state=start_human_session(user, attr, self.catalog),
                rng=np.random.default_rng([self.seed, index]),
                created_at=self.clock(),
                last_active=self.clock(),
            )
            self._sessions[session_id] = session
        with session.lock:
            question = self._next_question(session)
            if question is None:
                session.status = "timeout"
            return {"api_version": API_VERSION, "session_id": session_id,
                    "question": question}

    def get_session(self, session_id: str) -> dict:
        session = self._session(session_id)
        with session.lock:
            session.last_active = self.clock()
            return self._summary(session)

    def post_responses(self, session_id: str, body: dict) -> dict:
        session = self._session(session_id)
        with session.lock:
            session.last_active = self.clock()
            if session.status != "active":
                raise ApiError(409, f"session is {session.status}")
            if session.pending is None:
                raise ApiError(409, "no question is pending")
            if not isinstance(body, dict) or "accepted" not in body \
                    or not isinstance(body["accepted"], list) \
                    or not all(isinstance(b, bool) for b in body["accepted"]):
                raise ApiError(400, "body must carry accepted: [bool, ...]")
            answers = body["accepted"]
            chain = session.pending
            if len(answers) != len(chain.choices):
                raise ApiError(409, f"expected {len(chain.choices)} responses, "
                                    f"got {len(answers)}")

            state = session.state
            applied = []
            rank = None
            for i, (choice, accepted) in enumerate(zip(chain.choices, answers)):
                state = apply_choice_outcome(state, choice, accepted, self.catalog,
                                             enforce_candidate=False)
                applied.append(bool(accepted))
                if chain.option is OptionKind.REC and accepted:
                    rank = i + 1
                    break
            state = advance_turn(state)
            session.state = state
            session.turns.append({
                "option": chain.option.value,
                "choices": [c.id for c in chain.choices[:len(applied)]],
                "accepted": applied,
            })
            session.pending = None

            if state.success:
                session.status = "success"
                session.success_turn = state.turn
                session.success_rank = rank
                return {"api_version": API_VERSION, "status": "success",
                        "turn": state.turn, "rank": rank}
            if episode_status(state, self.cfg.t_max) is EpisodeStatus.TIMEOUT:
                session.status = "timeout"
                return {"api_version": API_VERSION, "status": "timeout",
                        "turn": state.turn}
            question = self._next_question(session)
            if question is None:
                session.status = "timeout"
                return {"api_version": API_VERSION, "status": "timeout",
                        "turn": state.turn}
            return {"api_version": API_VERSION, "status": "active",
                    "turn": state.turn, "question": question}

    def delete_session(self, session_id: str) -> dict:
        session = self._session(session_id)
        with session.lock:
            session.status = "closed"
        with self._registry_lock:
            self._sessions.pop(session_id, None)
        return {"api_version": API_VERSION, "closed": session_id}

    # -- request routing ----------------------------------------------------

    def handle_request(self, method: str, path: str, body: dict | None) -> tuple[int, dict]:
        """Route one request; returns (status code, response body)."""
        try:
            parts = [p for p in path.split("/") if p]
            if len(parts) >= 2 and parts[0] == "api" and parts[1] == "sessions":
                if len(parts) == 2 and method == "POST":
                    return 200, self.create_session(body or {})
                if len(parts) == 3:
                    if method == "GET":
                        return 200, self.get_session(parts[2])
                    if method == "DELETE":
                        return 200, self.delete_session(parts[2])
                if len(parts) == 4 and parts[3] == "responses" and method == "POST":
                    return 200, self.post_responses(parts[2], body or {})
            return 404, {"error": f"no route for {method} {path}"}
        except ApiError as exc:
            return exc.status, {"error": exc.message, "api_version": API_VERSION}


class _Handler(BaseHTTPRequestHandler):
    service: SessionService  # set by make_server

    def _send(self, status: int, payload: dict) -> None:
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()
        self.wfile.write(data)

    def _dispatch(self, method: str) -> None:
        body = None
        length = int(self.headers.get("Content-Length") or 0)
        if length:
            raw = self.rfile.read(length)
            try:
                body = json.loads(raw)
            except json.JSONDecodeError:
                self._send(400, {"error": "malformed JSON body"})
                return
        status, payload = self.service.handle_request(method, self.path, body)
        self._send(status, payload)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_DELETE(self):
        self._dispatch("DELETE")

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def log_message(self, fmt, *args):  # quiet by default
        pass


def make_server(service: SessionService, host: str = "127.0.0.1",
                port: int = 8080) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)
