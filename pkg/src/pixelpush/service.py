"""Session server: drive the simulator + planner over HTTP and stream step
events over a WebSocket, so a browser client can designate pixels and goals
on live frames and watch the planner work.

Endpoints:
  POST /session                 create session (body: scene config JSON,
                                optional "steps", "goal", "predictor")
  POST /session/{id}/goal       replace the goal pairs (at next step boundary)
  POST /session/{id}/step       execute exactly one planned step
  POST /session/{id}/run        run until pause or the episode ends
  POST /session/{id}/pause      stop after the in-flight step
  GET  /session/{id}/frame      current frame
  GET  /session/{id}/events     WebSocket upgrade; pushes one event per step

Frames travel as base64 8-bit grayscale (row-major). Heatmaps are quantized
with a largest-remainder scheme so the dequantized mass still sums to 1.
"""

from __future__ import annotations

import base64
import hashlib
import json
import queue
import struct
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import flowmodel, pushsim
from .errors import NoGoal, OutOfBounds
from .imgrid import Image, PixelDistribution
from .planner import GoalSpec, MpcDriver, PlanConfig

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


# ---------------------------------------------------------------------------
# Wire encoding
# ---------------------------------------------------------------------------

def encode_frame(img: Image) -> dict:
    data = np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)
    return {"width": img.width, "height": img.height,
            "data": base64.b64encode(data.tobytes()).decode()}


def decode_frame(payload: dict) -> Image:
    raw = np.frombuffer(base64.b64decode(payload["data"]), dtype=np.uint8)
    grid = raw.reshape(payload["height"], payload["width"]).astype(np.float64) / 255.0
    return Image(grid)


def encode_heatmap(dist: PixelDistribution) -> dict:
    """8-bit quantization whose levels sum to exactly 255 (largest remainder),
    so the dequantized distribution sums to 1."""
    flat = dist.mass.ravel()
    scaled = flat * 255.0
    floors = np.floor(scaled).astype(np.int64)
    short = 255 - int(floors.sum())
    if short > 0:
        remainders = scaled - floors
        top = np.argsort(-remainders, kind="stable")[:short]
        floors[top] += 1
    elif short < 0:  # defensive: cannot happen for a normalized distribution
        top = np.argsort(-floors, kind="stable")[:-short]
        floors[top] -= 1
    data = floors.astype(np.uint8).reshape(dist.mass.shape)
    return {"width": dist.width, "height": dist.height,
            "data": base64.b64encode(data.tobytes()).decode()}


def decode_heatmap(payload: dict) -> PixelDistribution:
    raw = np.frombuffer(base64.b64decode(payload["data"]), dtype=np.uint8)
    grid = raw.reshape(payload["height"], payload["width"]).astype(np.float64) / 255.0
    return PixelDistribution(grid)


def _goal_to_json(goal: GoalSpec | None):
    if goal is None:
        return []
    return [[list(d), list(g)] for d, g in goal.pairs]


def _goal_from_json(pairs) -> GoalSpec:
    return GoalSpec(tuple((tuple(int(v) for v in d), tuple(int(v) for v in g))
                          for d, g in pairs))


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------

@dataclass
class Session:
    sid: str
    scene: dict
    predictor_spec: str
    steps_limit: int
    seed: int
    plan_cfg: PlanConfig
    predictor: object
    mode: str = "idle"
    goal: GoalSpec | None = None
    pending_goal: GoalSpec | None = None
    driver: MpcDriver | None = None
    env: pushsim.WorldState = None
    events: list = field(default_factory=list)
    subscribers: list = field(default_factory=list)
    lock: threading.RLock = field(default_factory=threading.RLock)
    step_lock: threading.Lock = field(default_factory=threading.Lock)
    run_flag: threading.Event = field(default_factory=threading.Event)
    worker: threading.Thread | None = None

    def reset(self, scene: dict | None = None):
        self.run_flag.clear()
        with self.step_lock:  # wait out any in-flight step
            with self.lock:
                if scene is not None:
                    self.scene = scene
                self.env = pushsim.scene_from_config(self.scene)
                self.driver = None
                self.goal = None
                self.pending_goal = None
                self.mode = "idle"
                self.events = []
        return pushsim.render(self.env)

    def set_goal(self, goal: GoalSpec) -> None:
        goal.validate_bounds(self.env.width, self.env.height)
        with self.lock:
            if self.driver is None:
                self.goal = goal
            else:
                self.pending_goal = goal  # applied at the next step boundary

    def subscribe(self) -> queue.Queue:
        q = queue.Queue()
        with self.lock:
            self.subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self.lock:
            if q in self.subscribers:
                self.subscribers.remove(q)

    def _broadcast(self, event: dict) -> None:
        with self.lock:
            subs = list(self.subscribers)
            self.events.append(event)
        for q in subs:
            q.put(event)

    def _ensure_driver(self):
        if self.driver is None:
            if self.goal is None:
                raise NoGoal("no goal pairs designated")
            self.driver = MpcDriver(self.env, self.predictor, self.goal,
                                    self.plan_cfg, np.random.default_rng(self.seed))

    def execute_step(self) -> dict:
        """One planned step; serialized per session by step_lock."""
        with self.step_lock:
            with self.lock:
                self._ensure_driver()
                if self.pending_goal is not None:
                    self.driver.set_goal(self.pending_goal)
                    self.goal = self.pending_goal
                    self.pending_goal = None
                driver = self.driver
            ev = driver.step_once()
            self.env = driver.env
            event = {
                "type": "step",
                "step": ev.index,
                "action": [float(v) for v in ev.action],
                "objective": ev.objective,
                "pixels": [list(p) for p in ev.pixels],
                "pusher": [float(v) for v in ev.pusher_state],
                "goal": _goal_to_json(GoalSpec(ev.goal_pairs)),
                "frame": encode_frame(ev.image),
                "heatmaps": [encode_heatmap(h) for h in ev.heatmaps],
            }
            self._broadcast(event)
            return event

    def run_loop(self):
        while self.run_flag.is_set():
            with self.lock:
                done = self.driver is not None and self.driver.t >= self.steps_limit
            if done:
                with self.lock:
                    self.mode = "idle"
                    self.run_flag.clear()
                break
            try:
                self.execute_step()
            except NoGoal:
                with self.lock:
                    self.mode = "idle"
                    self.run_flag.clear()
                break

    def start_run(self):
        with self.lock:
            if self.mode == "running":
                return
            if self.goal is None and self.driver is None:
                raise NoGoal("no goal pairs designated")
            self.mode = "running"
            self.run_flag.set()
            self.worker = threading.Thread(target=self.run_loop, daemon=True)
            self.worker.start()

    def pause(self):
        with self.lock:
            if self.mode != "running":
                return
            self.run_flag.clear()
            self.mode = "paused"

    def state_json(self) -> dict:
        with self.lock:
            return {
                "session": self.sid,
                "mode": self.mode,
                "step": self.driver.t if self.driver else 0,
                "steps_limit": self.steps_limit,
                "grid": [self.env.width, self.env.height],
                "goal": _goal_to_json(self.goal),
                "predictor": self.predictor_spec,
            }


class ServiceState:
    def __init__(self, model: str = "oracle", grid: int = 32, seed: int = 0):
        self.model = model
        self.grid = grid
        self.seed = seed
        self.sessions: dict[str, Session] = {}
        self.counter = 0
        self.lock = threading.Lock()

    def make_predictor(self, spec: str):
        if spec == "oracle":
            return flowmodel.OraclePredictor(kappa=flowmodel.DEFAULT_KAPPA)
        return flowmodel.LearnedPredictor(flowmodel.load_params(spec))

    def create_session(self, body: dict) -> Session:
        scene = dict(body.get("scene", {}))
        scene.setdefault("grid", self.grid)
        scene.setdefault("seed", body.get("seed", self.seed))
        scene.setdefault("objects", 1)
        spec = body.get("predictor", self.model)
        with self.lock:
            self.counter += 1
            sid = f"s{self.counter}"
        session = Session(
            sid=sid, scene=scene, predictor_spec=spec,
            steps_limit=int(body.get("steps", 15)),
            seed=int(body.get("seed", self.seed)),
            plan_cfg=PlanConfig.from_dict(body.get("plan", {})),
            predictor=self.make_predictor(spec),
        )
        session.reset()
        if body.get("goal"):
            session.set_goal(_goal_from_json(body["goal"]))
        with self.lock:
            self.sessions[sid] = session
        return session


# ---------------------------------------------------------------------------
# HTTP / WebSocket plumbing
# ---------------------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    state: ServiceState = None

    def log_message(self, fmt, *args):
        pass

    def _json(self, code: int, payload: dict):
        body = json.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, code: int, kind: str, detail: str):
        self._json(code, {"error": kind, "detail": detail})

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        return json.loads(self.rfile.read(length) or b"{}")

    def _session(self, sid: str) -> Session | None:
        return self.state.sessions.get(sid)

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_POST(self):
        parts = [p for p in self.path.split("/") if p]
        try:
            body = self._body()  # always drain: keep-alive must not desync
            if parts == ["session"]:
                session = self.state.create_session(body)
                frame = pushsim.render(session.env)
                self._json(200, {**session.state_json(), "frame": encode_frame(frame)})
                return
            if len(parts) == 3 and parts[0] == "session":
                session = self._session(parts[1])
                if session is None:
                    return self._error(404, "UnknownSession", parts[1])
                verb = parts[2]
                if verb == "goal":
                    goal = _goal_from_json(body["pairs"])
                    session.set_goal(goal)
                    return self._json(200, {"ok": True, "pairs": _goal_to_json(goal)})
                if verb == "step":
                    if session.mode == "running":
                        return self._error(409, "Busy", "session is running")
                    event = session.execute_step()
                    return self._json(200, event)
                if verb == "run":
                    session.start_run()
                    return self._json(200, session.state_json())
                if verb == "pause":
                    session.pause()
                    return self._json(200, session.state_json())
                if verb == "reset":
                    frame = session.reset(body.get("scene"))
                    return self._json(200, {**session.state_json(),
                                            "frame": encode_frame(frame)})
            self._error(404, "UnknownPath", self.path)
        except NoGoal as exc:
            self._error(409, "NoGoal", str(exc))
        except OutOfBounds as exc:
            self._error(400, "OutOfBounds", str(exc))
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            self._error(400, "BadRequest", str(exc))

    def do_GET(self):
        parts = [p for p in self.path.split("/") if p]
        if len(parts) == 3 and parts[0] == "session":
            session = self._session(parts[1])
            if session is None:
                return self._error(404, "UnknownSession", parts[1])
            if parts[2] == "frame":
                frame = pushsim.render(session.env)
                return self._json(200, {**session.state_json(),
                                        "frame": encode_frame(frame)})
            if parts[2] == "events":
                return self._websocket(session)
            if parts[2] == "log":
                return self._json(200, {"events": session.events})
        self._error(404, "UnknownPath", self.path)

    # -- WebSocket ----------------------------------------------------------

    def _websocket(self, session: Session):
        key = self.headers.get("Sec-WebSocket-Key")
        if self.headers.get("Upgrade", "").lower() != "websocket" or not key:
            return self._error(400, "ExpectedWebSocket", "upgrade required")
        accept = base64.b64encode(
            hashlib.sha1((key + WS_GUID).encode()).digest()).decode()
        self.send_response(101, "Switching Protocols")
        self.send_header("Upgrade", "websocket")
        self.send_header("Connection", "Upgrade")
        self.send_header("Sec-WebSocket-Accept", accept)
        self.end_headers()
        conn = self.connection
        conn.settimeout(0.25)
        q = session.subscribe()
        try:
            while True:
                try:
                    event = q.get(timeout=0.25)
                    _ws_send(conn, json.dumps(event))
                except queue.Empty:
                    pass
                msg = _ws_poll(conn)
                if msg == "close":
                    break
        except (OSError, BrokenPipeError, ConnectionResetError):
            pass
        finally:
            session.unsubscribe(q)
            self.close_connection = True


def _ws_send(conn, text: str) -> None:
    payload = text.encode()
    n = len(payload)
    if n < 126:
        header = struct.pack("!BB", 0x81, n)
    elif n < 65536:
        header = struct.pack("!BBH", 0x81, 126, n)
    else:
        header = struct.pack("!BBQ", 0x81, 127, n)
    conn.sendall(header + payload)


def _ws_poll(conn):
    """Read one client frame if available: returns 'close', text, or None."""
    try:
        head = conn.recv(2)
    except TimeoutError:
        return None
    except OSError:
        return None
    if len(head) < 2:
        return "close" if head == b"" else None
    opcode = head[0] & 0x0F
    masked = head[1] & 0x80
    length = head[1] & 0x7F
    conn.settimeout(2.0)
    try:
        if length == 126:
            length = struct.unpack("!H", conn.recv(2))[0]
        elif length == 127:
            length = struct.unpack("!Q", conn.recv(8))[0]
        mask = conn.recv(4) if masked else b"\x00" * 4
        data = b""
        while len(data) < length:
            chunk = conn.recv(length - len(data))
            if not chunk:
                break
            data += chunk
    finally:
        conn.settimeout(0.25)
    decoded = bytes(b ^ mask[i % 4] for i, b in enumerate(data))
    if opcode == 0x8:
        return "close"
    if opcode == 0x9:  # ping -> pong
        conn.sendall(struct.pack("!BB", 0x8A, len(decoded)) + decoded)
        return None
    if opcode == 0x1:
        return decoded.decode()
    return None


def make_server(port: int = 8642, model: str = "oracle", grid: int = 32,
                seed: int = 0) -> ThreadingHTTPServer:
    state = ServiceState(model=model, grid=grid, seed=seed)
    handler = type("BoundHandler", (_Handler,), {"state": state})
    server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    server.state = state
    return server


def serve(port: int = 8642, model: str = "oracle", grid: int = 32, seed: int = 0):
    server = make_server(port=port, model=model, grid=grid, seed=seed)
    print(f"pixelpush service on http://127.0.0.1:{port} "
          f"(model={model}, grid={grid}, seed={seed})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


if __name__ == "__main__":
    serve()
