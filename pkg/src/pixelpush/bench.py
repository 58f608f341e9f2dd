"""Self-supervised data collection, baseline controllers, the seeded task
suite and the benchmark report.

The three baselines deliberately use no model of object motion:
  random       uniform random commanded positions
  servo-goal   drive the pusher straight to the goal pixel's workspace
               position (the render is identity-calibrated: pixel (x, y)
               is workspace point (x, y))
  servo-vector drive the pusher along the vector from the tracked pixel to
               the goal, re-tracking the pixel every step
The planner never uses the pixel-to-workspace calibration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import flowmodel, planner, pushsim, tracker
from .errors import PlacementFailure
from .imgrid import Dataset, EpisodeRecord
from .planner import EpisodeLog, GoalSpec, PlanConfig, StepEvent


def collect_random(n_episodes: int, steps: int, seed: int, width: int = 32,
                   height: int = 32, kappa: int = flowmodel.DEFAULT_KAPPA) -> Dataset:
    """Random-push episodes: seeded scenes, uniform in-bounds commanded poses."""
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    rng = np.random.default_rng(seed)
    episodes = []
    for i in range(n_episodes):
        scene_seed = int(rng.integers(0, 2 ** 31 - 1))
        n_obj = int(rng.integers(2, 4))
        state = pushsim.random_scene(scene_seed, n_obj, width=width, height=height)
        images, states, actions = [], [], []
        for _ in range(steps):
            images.append(pushsim.render(state).data)
            states.append(state.pusher)
            act = (rng.uniform(0.0, width - 1.0), rng.uniform(0.0, height - 1.0))
            actions.append(act)
            state = pushsim.step(state, pushsim.Action(act))
        episodes.append(EpisodeRecord(images=np.asarray(images),
                                      states=np.asarray(states),
                                      actions=np.asarray(actions)))
    return Dataset(tuple(episodes), height, width, kappa, seed)


def episode_motion_events(ep: EpisodeRecord, pusher_intensity: float = 1.0) -> int:
    """Frames in which some non-pusher pixel changed (object motion proxy)."""
    events = 0
    for t in range(ep.steps - 1):
        a, b = ep.images[t], ep.images[t + 1]
        moved = (a != b) & (a != pusher_intensity) & (b != pusher_intensity) & ((a > 0) | (b > 0))
        if moved.any():
            events += 1
    return events


# ---------------------------------------------------------------------------
# Scripted baselines (same logging shape as MPC episodes)
# ---------------------------------------------------------------------------

def _run_policy_episode(env: pushsim.WorldState, goal: GoalSpec, steps: int,
                        policy, track_cfg: tracker.TrackConfig) -> EpisodeLog:
    goal.validate_bounds(env.width, env.height)
    frame = pushsim.render(env)
    pixels = tuple(goal.designated)
    log = EpisodeLog(width=env.width, height=env.height, goal=goal,
                     initial_image=frame, initial_state=tuple(env.pusher),
                     initial_pixels=pixels)
    for t in range(steps):
        action = policy(env, pixels)
        env = pushsim.step(env, pushsim.Action(action))
        new_frame = pushsim.render(env)
        pixels = tuple(tracker.track(frame, new_frame, p, track_cfg) for p in pixels)
        log.steps.append(StepEvent(index=t + 1, action=tuple(action),
                                   objective=float("nan"), pixels=pixels,
                                   image=new_frame, pusher_state=tuple(env.pusher),
                                   goal_pairs=goal.pairs, heatmaps=[]))
        frame = new_frame
    return log


def baseline_random(env: pushsim.WorldState, goal: GoalSpec, steps: int,
                    rng: np.random.Generator,
                    track_cfg: tracker.TrackConfig = tracker.TrackConfig()) -> EpisodeLog:
    def policy(state, pixels):
        return (rng.uniform(0.0, state.width - 1.0), rng.uniform(0.0, state.height - 1.0))
    return _run_policy_episode(env, goal, steps, policy, track_cfg)


def baseline_servo_goal(env: pushsim.WorldState, goal: GoalSpec, steps: int,
                        track_cfg: tracker.TrackConfig = tracker.TrackConfig()) -> EpisodeLog:
    gx, gy = goal.goals[0]

    def policy(state, pixels):
        return (float(gx), float(gy))
    return _run_policy_episode(env, goal, steps, policy, track_cfg)


def baseline_servo_vector(env: pushsim.WorldState, goal: GoalSpec, steps: int,
                          gain: float = pushsim.V_MAX,
                          track_cfg: tracker.TrackConfig = tracker.TrackConfig()) -> EpisodeLog:
    """Move the pusher parallel to the tracked-pixel-to-goal vector, with
    continuous re-tracking; holds position once the pixel is within 1 px."""
    gx, gy = goal.goals[0]

    def policy(state, pixels):
        dx_, dy_ = pixels[0]
        vec = np.array([gx - dx_, gy - dy_], dtype=float)
        dist = float(np.hypot(*vec))
        if dist < 1.0:
            return (float(state.pusher[0]), float(state.pusher[1]))
        target = np.asarray(state.pusher, dtype=float) + vec * min(gain, dist) / dist
        target[0] = float(np.clip(target[0], 0.0, state.width - 1.0))
        target[1] = float(np.clip(target[1], 0.0, state.height - 1.0))
        return (target[0], target[1])
    return _run_policy_episode(env, goal, steps, policy, track_cfg)


# ---------------------------------------------------------------------------
# Task suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskSpec:
    label: str
    seed: int
    scene: dict
    goal: GoalSpec
    steps: int = 15

    def build_env(self) -> pushsim.WorldState:
        return pushsim.scene_from_config(self.scene)

    def to_dict(self) -> dict:
        return {"label": self.label, "seed": self.seed, "scene": self.scene,
                "steps": self.steps,
                "goal": [[list(d), list(g)] for d, g in self.goal.pairs]}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(label=d["label"], seed=int(d["seed"]), scene=d["scene"],
                   goal=GoalSpec(tuple((tuple(p[0]), tuple(p[1])) for p in d["goal"])),
                   steps=int(d.get("steps", 15)))


def _object_pixel(env: pushsim.WorldState, obj_index: int, rng: np.random.Generator,
                  toward: tuple | None = None):
    """A pixel on the given object: biased toward the center, or toward the
    leading side when a direction is given (keeps the tracked patch away
    from the pusher contact side)."""
    ids = pushsim.surface_map(env)
    ys, xs = np.nonzero(ids == obj_index)
    if len(xs) == 0:
        raise ValueError(f"object {obj_index} is not visible")
    c = env.objects[obj_index].center
    if toward is None:
        score = (xs - c[0]) ** 2 + (ys - c[1]) ** 2
    else:
        score = -((xs - c[0]) * toward[0] + (ys - c[1]) * toward[1])
    order = np.argsort(score, kind="stable")
    pick = order[int(rng.integers(0, max(1, len(order) // 4)))]
    return int(xs[pick]), int(ys[pick])


def _translate_task(seed: int, grid: int, rng: np.random.Generator) -> TaskSpec:
    """Push an object pixel 4-6 px. The pusher starts within striking range
    but off the ideal push line, so approach positioning matters; the goal
    direction keeps the push inside the workspace."""
    scale = grid / 32.0
    shape = "disc" if rng.random() < 0.5 else "square"
    extent = float(rng.uniform(2.2, 3.0)) * scale
    margin = extent * (1.5 if shape == "square" else 1.0) + 8.0 * scale
    cx = float(rng.uniform(margin, grid - 1 - margin))
    cy = float(rng.uniform(margin, grid - 1 - margin))
    push_ang = float(rng.uniform(0, 2 * np.pi))
    # keep the push pointed away from the nearest walls
    to_center = np.arctan2(grid / 2 - cy, grid / 2 - cx)
    push_ang = float(to_center + rng.uniform(-0.9, 0.9))
    obj = {"shape": shape, "center": [cx, cy], "intensity": float(rng.uniform(0.4, 0.8)),
           "mass": float(rng.uniform(1.5, 1.65))}
    if shape == "disc":
        obj["radius"] = extent
    else:
        obj["half_extent"] = extent
        obj["angle"] = float(rng.uniform(0, np.pi / 2))
    # rad off the push line; beyond ~1 rad the planning horizon cannot see
    # contact and every method degenerates
    approach_off = float(rng.uniform(0.4, 1.0)) * (1.0 if rng.random() < 0.5 else -1.0)
    back = push_ang + np.pi + approach_off
    rb = extent * (np.sqrt(2.0) if shape == "square" else 1.0)
    gap = float(rng.uniform(1.0, 2.0))
    px = float(np.clip(cx + (rb + pushsim.PUSHER_RADIUS + gap) * np.cos(back), 0, grid - 1))
    py = float(np.clip(cy + (rb + pushsim.PUSHER_RADIUS + gap) * np.sin(back), 0, grid - 1))
    scene = {"grid": grid, "seed": seed, "pusher": [px, py], "objects": [obj]}
    env = pushsim.scene_from_config(scene)
    d = _object_pixel(env, 0, rng, toward=(np.cos(push_ang), np.sin(push_ang)))
    dist = float(rng.uniform(2.5, 3.5)) * scale
    g = (int(np.clip(round(d[0] + dist * np.cos(push_ang)), 1, grid - 2)),
         int(np.clip(round(d[1] + dist * np.sin(push_ang)), 1, grid - 2)))
    return TaskSpec(label="translate", seed=seed, scene=scene,
                    goal=GoalSpec(((d, g),)))


def scenario_rotation(seed: int, grid: int = 32) -> TaskSpec:
    """A square with two designated pixels near opposite corners and goals
    displaced in opposing directions. Goals come from simulating a feasible
    off-center push, so a coordinated rotation that reaches them exists; the
    scene is re-drawn (deterministically) until such a push is found."""
    for attempt in range(20):
        task = _rotation_attempt(seed, attempt, grid)
        if task is not None:
            return task
    raise PlacementFailure(f"no rotatable scene found for seed {seed}")


def _rotation_attempt(seed: int, attempt: int, grid: int):
    rng = np.random.default_rng((seed, attempt))
    scale = grid / 32.0
    he = 3.2 * scale
    cx = grid / 2.0 + float(rng.uniform(-2.5, 2.5))
    cy = grid / 2.0 + float(rng.uniform(-2.5, 2.5))
    angle = float(rng.uniform(0.0, np.pi / 8))
    gap = float(rng.uniform(1.0, 2.0))
    side_ang = float(rng.uniform(0, 2 * np.pi))
    px = float(np.clip(cx + (he * np.sqrt(2) + pushsim.PUSHER_RADIUS + gap) * np.cos(side_ang),
                       1, grid - 2))
    py = float(np.clip(cy + (he * np.sqrt(2) + pushsim.PUSHER_RADIUS + gap) * np.sin(side_ang),
                       1, grid - 2))
    scene = {
        "grid": grid, "seed": seed,
        "pusher": [px, py],
        "objects": [{"shape": "square", "half_extent": he, "center": [cx, cy],
                     "intensity": 0.6, "mass": 1.5, "angle": angle}],
    }
    env = pushsim.scene_from_config(scene)

    r = he * 0.75 * np.sqrt(2)  # designated pixels sit inside the corners
    corners = []
    for corner in (np.pi / 4, np.pi / 4 + np.pi):
        a0 = angle + corner
        corners.append((int(round(cx + r * np.cos(a0))), int(round(cy + r * np.sin(a0)))))

    c0 = np.array([cx, cy])

    def corner_moves(state):
        obj = state.objects[0]
        dth = obj.angle - angle
        rot_m = np.array([[np.cos(dth), -np.sin(dth)], [np.sin(dth), np.cos(dth)]])
        return [np.array(obj.center) + rot_m @ (np.array(d, float) - c0) for d in corners]

    candidates = []
    for frac in (0.5, 0.65, 0.8, 0.95, 1.1):
        for sign in (1.0, -1.0):
            lever = frac * he * sign
            s = env
            through = c0 + _perp_offset(np.array(s.pusher) - c0, lever)
            for _ in range(4):
                tgt = np.clip(2 * through - np.array(s.pusher), 1, grid - 2)
                s = pushsim.step(s, pushsim.Action((float(tgt[0]), float(tgt[1]))))
                spin = abs(s.objects[0].angle - angle)
                drift = float(np.hypot(*(np.array(s.objects[0].center) - c0)))
                moved = corner_moves(s)
                reach = max(float(np.hypot(*(m - np.array(d, float))))
                            for m, d in zip(moved, corners))
                candidates.append((spin, drift, reach, moved))
    feasible = [c for c in candidates if c[0] >= 0.2 and c[2] <= 4.0]
    if not feasible:
        return None
    spin, _, _, moved = max(feasible, key=lambda c: c[0] - 0.25 * c[1])
    pairs = []
    changed = False
    for d, m in zip(corners, moved):
        g = (int(np.clip(round(m[0]), 0, grid - 1)), int(np.clip(round(m[1]), 0, grid - 1)))
        changed = changed or g != d
        pairs.append((d, g))
    if not changed:
        return None
    return TaskSpec(label="rotate", seed=seed, scene=scene, goal=GoalSpec(tuple(pairs)))


def _perp_offset(v: np.ndarray, lever: float) -> np.ndarray:
    """Offset perpendicular to v with magnitude |lever| and sign of lever."""
    n = np.hypot(*v)
    if n < 1e-9:
        return np.array([lever, 0.0])
    perp = np.array([-v[1], v[0]]) / n
    return perp * lever


def scenario_occlusion(seed: int, grid: int = 32) -> TaskSpec:
    """Stay-put goal on an object while a second pair walks the pusher along
    a grazing line right over that pixel. The object is heavy and the graze
    shallow, so predicted object motion rounds to zero and the planner
    happily transits; the pusher disc still sweeps over the protected pixel
    and occludes its patch: the tracker-capture failure mode."""
    rng = np.random.default_rng(seed)
    scale = grid / 32.0
    cy = grid / 2.0 + float(rng.uniform(-2, 2))
    cx = grid / 2.0 + float(rng.uniform(-1, 1))
    radius = 2.8 * scale
    graze = 1.1 + float(rng.uniform(0.0, 0.3))
    line_y = cy - radius - pushsim.PUSHER_RADIUS + graze
    scene = {
        "grid": grid, "seed": seed,
        "pusher": [cx - 4.5 * scale, line_y],
        "objects": [{"shape": "disc", "radius": radius,
                     "center": [cx, cy], "intensity": 0.55, "mass": 4.0}],
    }
    env = pushsim.scene_from_config(scene)
    ids = pushsim.surface_map(env)
    ys, xs = np.nonzero(ids == 0)
    near = np.argmin((ys - line_y) ** 2 * 4.0 + (xs - cx) ** 2)
    obj_pix = (int(xs[near]), int(ys[near]))
    pusher_pix = (int(round(env.pusher[0])), int(round(env.pusher[1])))
    # just past the protected pixel, within the clipped predicted reach
    far_goal = (int(np.clip(obj_pix[0] + 1, 1, grid - 2)), pusher_pix[1])
    return TaskSpec(label="stay", seed=seed, scene=scene,
                    goal=GoalSpec(((obj_pix, obj_pix), (pusher_pix, far_goal))))


def _stay_task(seed: int, grid: int, rng: np.random.Generator) -> TaskSpec:
    scene = {"grid": grid, "seed": seed, "objects": 1}
    env = pushsim.scene_from_config(scene)
    d = _object_pixel(env, 0, rng)
    return TaskSpec(label="stay", seed=seed, scene=scene, goal=GoalSpec(((d, d),)))


def make_task_suite(grid: int = 32, base_seed: int = 2024) -> list:
    """The 10-task quantitative suite: 6 translations, 2 rotations, 2 stays.

    The occlusion probe (scenario_occlusion) is a failure-mode demonstration
    and lives outside the quantitative suite.
    """
    rng = np.random.default_rng(base_seed)
    tasks = []
    for i in range(6):
        tasks.append(_translate_task(base_seed + 10 + i, grid, rng))
    tasks.append(scenario_rotation(base_seed + 20, grid))
    tasks.append(scenario_rotation(base_seed + 21, grid))
    tasks.append(_stay_task(base_seed + 30, grid, rng))
    tasks.append(_stay_task(base_seed + 31, grid, rng))
    return tasks


def save_tasks(tasks, path, grid: int = 32) -> None:
    doc = {"grid": grid, "tasks": [t.to_dict() for t in tasks]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tasks(path):
    with open(path) as fh:
        doc = json.load(fh)
    return [TaskSpec.from_dict(d) for d in doc["tasks"]]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class BenchReport:
    grid: int
    methods: list
    task_labels: list
    distances: dict          # method -> [per-task mean final distance]
    config: dict
    seeds: dict

    def mean(self, method: str) -> float:
        return float(np.mean(self.distances[method]))

    def std(self, method: str) -> float:
        return float(np.std(self.distances[method]))

    def to_json_dict(self) -> dict:
        return {
            "grid": self.grid,
            "task_labels": self.task_labels,
            "per_task": {m: [round(v, 6) for v in self.distances[m]] for m in self.methods},
            "summary": {m: {"mean": round(self.mean(m), 6), "std": round(self.std(m), 6)}
                        for m in self.methods},
            "config": self.config,
            "seeds": self.seeds,
        }

    def to_text(self) -> str:
        lines = [f"pixel-goal pushing bench  (grid {self.grid}x{self.grid}, "
                 f"{len(self.task_labels)} tasks)"]
        lines.append("")
        header = "method".ljust(22) + "mean".rjust(8) + "std".rjust(8) + "  per-task"
        lines.append(header)
        lines.append("-" * len(header))
        for m in self.methods:
            per = " ".join(f"{v:5.2f}" for v in self.distances[m])
            lines.append(f"{m:<22}{self.mean(m):8.3f}{self.std(m):8.3f}  {per}")
        lines.append("")
        lines.append("tasks: " + " ".join(self.task_labels))
        return "\n".join(lines) + "\n"


def evaluate(methods: dict, tasks, base_seed: int = 0,
             plan_cfg: PlanConfig | None = None) -> BenchReport:
    """Run every method on every task with paired seeds.

    methods maps name -> fn(task, env, seed) -> EpisodeLog. The report is a
    pure function of the logs; identical inputs give identical reports.
    """
    distances = {name: [] for name in methods}
    for t_idx, task in enumerate(tasks):
        for name, fn in methods.items():
            env = task.build_env()
            log = fn(task, env, base_seed * 1000 + t_idx)
            distances[name].append(log.mean_final_distance())
    return BenchReport(
        grid=tasks[0].build_env().width if tasks else 0,
        methods=list(methods),
        task_labels=[t.label for t in tasks],
        distances=distances,
        config={"plan": plan_cfg.__dict__ if plan_cfg is not None else None},
        seeds={"base": base_seed, "tasks": [t.seed for t in tasks]},
    )


def standard_methods(predictor, plan_cfg: PlanConfig,
                     track_cfg: tracker.TrackConfig = tracker.TrackConfig()) -> dict:
    """The Table-style method set: initial distance, three baselines, MPC."""

    def m_initial(task, env, seed):
        return _run_policy_episode(env, task.goal, 0, None, track_cfg)

    def m_random(task, env, seed):
        return baseline_random(env, task.goal, task.steps,
                               np.random.default_rng(seed), track_cfg)

    def m_servo_goal(task, env, seed):
        return baseline_servo_goal(env, task.goal, task.steps, track_cfg)

    def m_servo_vector(task, env, seed):
        return baseline_servo_vector(env, task.goal, task.steps, track_cfg=track_cfg)

    def m_visual_mpc(task, env, seed):
        return planner.run_mpc_episode(env, predictor, task.goal, plan_cfg,
                                       task.steps, np.random.default_rng(seed),
                                       track_cfg)

    return {
        "initial": m_initial,
        "random": m_random,
        "servo-goal": m_servo_goal,
        "servo-vector": m_servo_vector,
        "visual-mpc": m_visual_mpc,
    }


def write_report(report: BenchReport, path: str) -> None:
    """Delimited text table at path, machine-readable JSON at path + '.json'."""
    with open(path, "w") as fh:
        fh.write(report.to_text())
    with open(path + ".json", "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
