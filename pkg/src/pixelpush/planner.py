"""Pixel-goal planning: probabilistic evaluation of action sequences through
predicted flows, cross-entropy-method optimization, and the full MPC loop
with per-step replanning and tracker updates.

A task is a set of (designated pixel, goal pixel) pairs. An action sequence
is scored by propagating a delta distribution at each designated pixel
through the predicted flow fields and summing the log of the mass that lands
on each goal pixel (floored to keep the objective finite).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import flowmodel, pushsim, tracker
from .errors import DegenerateCovariance, OutOfBounds
from .imgrid import EpisodeRecord, Image, PixelDistribution


@dataclass(frozen=True)
class GoalSpec:
    """Pairs of ((x_d, y_d), (x_g, y_g)) integer pixels."""

    pairs: tuple

    def __post_init__(self):
        pairs = tuple((tuple(int(v) for v in d), tuple(int(v) for v in g))
                      for d, g in self.pairs)
        if not pairs:
            raise ValueError("goal needs at least one pixel pair")
        object.__setattr__(self, "pairs", pairs)

    def validate_bounds(self, width: int, height: int):
        for d, g in self.pairs:
            for x, y in (d, g):
                if not (0 <= x < width and 0 <= y < height):
                    raise OutOfBounds(f"goal pixel ({x}, {y}) outside {width}x{height} grid")

    @property
    def designated(self):
        return tuple(d for d, _ in self.pairs)

    @property
    def goals(self):
        return tuple(g for _, g in self.pairs)

    @classmethod
    def parse(cls, text: str) -> "GoalSpec":
        """Parse "xd,yd->xg,yg[;...]" into a GoalSpec."""
        pairs = []
        for part in text.split(";"):
            part = part.strip()
            if not part:
                continue
            d_str, g_str = part.split("->")
            d = tuple(int(v) for v in d_str.split(","))
            g = tuple(int(v) for v in g_str.split(","))
            pairs.append((d, g))
        return cls(tuple(pairs))


@dataclass(frozen=True)
class PlanConfig:
    horizon: int = 3
    init_iters: int = 4
    init_samples: int = 40
    elites: int = 10
    replan_iters: int = 1
    replan_samples: int = 20
    cov_reg: float = 1e-4
    prob_floor: float = 1e-9
    tie_actions: bool = True
    warm_start: bool = False
    action_low: tuple | None = None   # per-coordinate box; None = full workspace
    action_high: tuple | None = None
    v_max: float = pushsim.V_MAX

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.elites > max(self.init_samples, self.replan_samples):
            raise ValueError("elite count exceeds sample count")
        if self.prob_floor <= 0:
            raise ValueError("probability floor must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "PlanConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class PlanResult:
    actions: np.ndarray              # (H, 2) best sequence
    objective: float                 # best over every evaluated sample
    iterations: list                 # per-iteration elite statistics
    final_distributions: list        # per designated pixel, for visualization


def init_distribution(pixel, height: int, width: int) -> PixelDistribution:
    """Delta distribution at the designated pixel."""
    x, y = int(pixel[0]), int(pixel[1])
    if not (0 <= x < width and 0 <= y < height):
        raise OutOfBounds(f"pixel ({x}, {y}) outside {width}x{height} grid")
    mass = np.zeros((height, width))
    mass[y, x] = 1.0
    return PixelDistribution(mass)


def propagate_pixel(flows, pixel, height: int, width: int) -> PixelDistribution:
    dist = init_distribution(pixel, height, width)
    for flow in flows:
        dist = flowmodel.advect_distribution(flow, dist, mode="scatter")
    return dist


def success_logprob(predictor, img_prev: Image, img_cur: Image, x_prev, x_cur,
                    actions, goal: GoalSpec, pixels, cfg: PlanConfig,
                    return_distributions: bool = False):
    """Sum over goal pairs of log mass at the goal pixel after propagating
    the designated-pixel delta through the predicted flows. One rollout is
    shared by all pairs."""
    h, w = img_cur.height, img_cur.width
    flows, _ = flowmodel.predict_rollout(predictor, img_prev, img_cur,
                                         x_prev, x_cur, actions, v_max=cfg.v_max)
    total = 0.0
    dists = []
    for (d_pix, g_pix) in zip(pixels, goal.goals):
        dist = propagate_pixel(flows, d_pix, h, w)
        mass = float(dist.mass[g_pix[1], g_pix[0]])
        total += float(np.log(max(mass, cfg.prob_floor)))
        if return_distributions:
            dists.append(dist)
    if return_distributions:
        return total, dists
    return total


# ---------------------------------------------------------------------------
# Cross-entropy method
# ---------------------------------------------------------------------------

def _draw(sampler, m: int, rng: np.random.Generator) -> np.ndarray:
    kind = sampler[0]
    if kind == "uniform":
        _, low, high = sampler
        return rng.uniform(low, high, size=(m, len(low)))
    _, mean, cov = sampler
    return rng.multivariate_normal(mean, cov, size=m)


def cem_iteration(objective, sampler, m: int, k: int, cov_reg: float,
                  low, high, rng: np.random.Generator):
    """One sample / select-elites / refit round.

    Draws m samples from the sampler, clips to the action box, evaluates in
    order (ties break toward the lower sample index), fits mean and full
    covariance of the top-k and regularizes with cov_reg * I. Returns
    (next sampler, best sample, best value, all values, all samples).
    """
    low = np.asarray(low, float)
    high = np.asarray(high, float)
    samples = np.clip(_draw(sampler, m, rng), low, high)
    values = np.array([objective(s) for s in samples])
    order = np.argsort(-values, kind="stable")
    elite = samples[order[:min(k, m)]]
    mean = elite.mean(axis=0)
    cov = np.cov(elite.T, ddof=0).reshape(len(mean), len(mean))
    cov = cov + cov_reg * np.eye(len(mean))
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise DegenerateCovariance(f"elite fit produced non-finite moments: {mean}, {cov}")
    best = int(order[0])
    return ("gaussian", mean, cov), samples[best], float(values[best]), values, samples


def _expand(sample: np.ndarray, horizon: int, tie: bool) -> np.ndarray:
    if tie:
        return np.tile(sample.reshape(1, 2), (horizon, 1))
    return sample.reshape(horizon, 2)


def plan(predictor, img_prev: Image, img_cur: Image, x_prev, x_cur,
         goal: GoalSpec, pixels, cfg: PlanConfig, phase: str,
         rng: np.random.Generator, sampler=None) -> PlanResult:
    """CEM search for the action sequence maximizing success_logprob.

    Iteration 1 samples uniformly over the action box unless a warm-start
    sampler is passed; later iterations sample the fitted Gaussians. The
    returned objective is the best over every sample evaluated in any
    iteration.
    """
    h, w = img_cur.height, img_cur.width
    low = np.asarray(cfg.action_low if cfg.action_low is not None else (0.0, 0.0))
    high = np.asarray(cfg.action_high if cfg.action_high is not None
                      else (w - 1.0, h - 1.0))
    if cfg.tie_actions:
        box_low, box_high = low, high
    else:
        box_low = np.tile(low, cfg.horizon)
        box_high = np.tile(high, cfg.horizon)

    if phase == "initial":
        iters, m = cfg.init_iters, cfg.init_samples
    elif phase == "replan":
        iters, m = cfg.replan_iters, cfg.replan_samples
    else:
        raise ValueError(f"unknown phase {phase!r}")

    def objective(sample: np.ndarray) -> float:
        actions = _expand(sample, cfg.horizon, cfg.tie_actions)
        return success_logprob(predictor, img_prev, img_cur, x_prev, x_cur,
                               actions, goal, pixels, cfg)

    if sampler is None:
        sampler = ("uniform", box_low, box_high)
    best_sample = None
    best_value = -np.inf
    best_dist = np.inf
    x_now = np.asarray(x_cur, float)
    stats = []
    for j in range(iters):
        sampler, _, it_value, values, samples = cem_iteration(
            objective, sampler, m, cfg.elites, cfg.cov_reg, box_low, box_high, rng)
        for i in range(len(samples)):
            # among exactly tied objectives prefer the action nearest the
            # pusher, so a signal-free plan holds position instead of kicking
            dist = float(np.hypot(*(samples[i][:2] - x_now)))
            if values[i] > best_value or (values[i] == best_value and dist < best_dist):
                best_value = float(values[i])
                best_dist = dist
                best_sample = samples[i]
        stats.append({"iteration": j, "mean": sampler[1].copy(),
                      "best_value": it_value, "best_so_far": best_value})

    actions = _expand(best_sample, cfg.horizon, cfg.tie_actions)
    _, dists = success_logprob(predictor, img_prev, img_cur, x_prev, x_cur,
                               actions, goal, pixels, cfg, return_distributions=True)
    return PlanResult(actions=actions, objective=best_value,
                      iterations=stats, final_distributions=dists)


# ---------------------------------------------------------------------------
# MPC loop
# ---------------------------------------------------------------------------

@dataclass
class StepEvent:
    index: int
    action: tuple
    objective: float
    pixels: tuple            # tracked designated pixels after the step
    image: Image             # observation after the step
    pusher_state: tuple      # pusher position after the step
    goal_pairs: tuple        # goal in force during the step
    heatmaps: list           # final predicted distribution per designated pixel


@dataclass
class EpisodeLog:
    width: int
    height: int
    goal: GoalSpec
    initial_image: Image
    initial_state: tuple
    initial_pixels: tuple
    steps: list = field(default_factory=list)

    @property
    def final_pixels(self):
        return self.steps[-1].pixels if self.steps else self.initial_pixels

    def final_goal_pairs(self):
        return self.steps[-1].goal_pairs if self.steps else self.goal.pairs

    def final_distances(self):
        goals = tuple(g for _, g in self.final_goal_pairs())
        return tuple(
            float(np.hypot(p[0] - g[0], p[1] - g[1]))
            for p, g in zip(self.final_pixels, goals))

    def mean_final_distance(self) -> float:
        d = self.final_distances()
        return float(np.mean(d))

    def to_episode_record(self) -> EpisodeRecord:
        """Frames/states/actions in collection layout: entry t holds the
        observation before action t."""
        t = len(self.steps)
        h, w = self.initial_image.data.shape
        if t == 0:
            return EpisodeRecord(images=np.zeros((0, h, w)), states=np.zeros((0, 2)),
                                 actions=np.zeros((0, 2)))
        images = [self.initial_image.data] + [ev.image.data for ev in self.steps[:-1]]
        states = [self.initial_state] + [ev.pusher_state for ev in self.steps[:-1]]
        actions = [ev.action for ev in self.steps]
        return EpisodeRecord(images=np.asarray(images), states=np.asarray(states),
                             actions=np.asarray(actions))

    def summary(self) -> dict:
        return {
            "steps": len(self.steps),
            "goal": [list(map(list, pair)) for pair in self.goal.pairs],
            "final_pixels": [list(p) for p in self.final_pixels],
            "final_distances": list(self.final_distances()),
            "mean_final_distance": self.mean_final_distance(),
            "objectives": [ev.objective for ev in self.steps],
        }


class MpcDriver:
    """Shared stepping engine for offline episodes and the live service.

    Holds the environment, observation history and tracked pixel estimates;
    step_once() plans, executes the first action, re-tracks every designated
    pixel on the new frame and returns the step event. Goal edits apply at
    the next step boundary.
    """

    def __init__(self, env: pushsim.WorldState, predictor, goal: GoalSpec,
                 cfg: PlanConfig, rng: np.random.Generator,
                 track_cfg: tracker.TrackConfig = tracker.TrackConfig()):
        goal.validate_bounds(env.width, env.height)
        self.env = env
        self.predictor = predictor
        self.goal = goal
        self.cfg = cfg
        self.rng = rng
        self.track_cfg = track_cfg
        self.t = 0
        frame = pushsim.render(env)
        self.img_prev = frame
        self.img_cur = frame
        self.x_prev = np.asarray(env.pusher, float)
        self.x_cur = np.asarray(env.pusher, float)
        self.pixels = tuple(goal.designated)
        self.log = EpisodeLog(width=env.width, height=env.height, goal=goal,
                              initial_image=frame, initial_state=tuple(env.pusher),
                              initial_pixels=self.pixels)

    def set_goal(self, goal: GoalSpec):
        goal.validate_bounds(self.env.width, self.env.height)
        self.goal = goal
        self.pixels = tuple(goal.designated)

    def step_once(self) -> StepEvent:
        phase = "initial" if self.t == 0 else "replan"
        bound = self.predictor.bind_world(self.env)
        result = plan(bound, self.img_prev, self.img_cur, self.x_prev, self.x_cur,
                      self.goal, self.pixels, self.cfg, phase, self.rng)
        action = tuple(float(v) for v in result.actions[0])
        self.env = pushsim.step(self.env, pushsim.Action(action))
        new_frame = pushsim.render(self.env)
        self.pixels = tuple(
            tracker.track(self.img_cur, new_frame, p, self.track_cfg)
            for p in self.pixels)
        self.img_prev, self.img_cur = self.img_cur, new_frame
        self.x_prev, self.x_cur = self.x_cur, np.asarray(self.env.pusher, float)
        self.t += 1
        event = StepEvent(index=self.t, action=action, objective=result.objective,
                          pixels=self.pixels, image=new_frame,
                          pusher_state=tuple(self.env.pusher),
                          goal_pairs=self.goal.pairs,
                          heatmaps=result.final_distributions)
        self.log.steps.append(event)
        return event


def run_mpc_episode(env: pushsim.WorldState, predictor, goal: GoalSpec,
                    cfg: PlanConfig, steps: int, rng: np.random.Generator,
                    track_cfg: tracker.TrackConfig = tracker.TrackConfig(),
                    goal_schedule: dict | None = None) -> EpisodeLog:
    """Full closed loop: plan, execute the first action, observe, re-track.

    goal_schedule optionally maps step index t -> GoalSpec applied before
    that step is planned (mirrors live re-designation in the service).
    """
    driver = MpcDriver(env, predictor, goal, cfg, rng, track_cfg)
    for t in range(steps):
        if goal_schedule and t in goal_schedule:
            driver.set_goal(goal_schedule[t])
        driver.step_once()
    return driver.log
