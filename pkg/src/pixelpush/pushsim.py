"""Deterministic 2D quasi-static pushing environment.

A disc-shaped pusher servos toward commanded target positions (at most v_max
px per step) and displaces rigid objects on contact. The contact rule is
displacement-driven: on overlap the object translates by the contact-normal
component of the pusher's substep displacement scaled by 1/mass, squares also
rotate in proportion to the tangential lever arm, and any remaining
penetration is resolved by retracting the *pusher* (the position-controlled
arm stalls against heavy objects, so objects never move faster than
v_max / mass and never interpenetrate the pusher at step end).

World coordinates are identical to pixel coordinates: the point (x, y) is
sampled by pixel (x, y) when rendering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import OutOfBounds, PlacementFailure, RadiusTooSmall
from .imgrid import FlowField, Image

V_MAX = 3.0            # pusher travel per step, px
TORQUE_GAIN = 0.08     # rad of square rotation per px lever arm per px push
ROT_CAP = 0.3          # max |rotation| per step, rad
SUBSTEP = 0.5          # contact resolution granularity, px
PUSHER_RADIUS = 2.0
PUSHER_INTENSITY = 1.0


@dataclass(frozen=True)
class Action:
    """Commanded pusher position in grid units."""

    target: tuple


@dataclass(frozen=True)
class ObjectSpec:
    """A rigid scene object: disc or (rotatable) square.

    shape: "disc" uses radius = extent; "square" uses half-extent = extent
    plus an orientation angle in radians.
    """

    shape: str
    extent: float
    center: tuple
    intensity: float
    mass: float = 1.5
    angle: float = 0.0

    def __post_init__(self):
        if self.shape not in ("disc", "square"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.extent < 1.5:
            raise ValueError(f"object extent {self.extent} < 1.5 px")
        if not (0.0 < self.intensity <= 1.0):
            raise ValueError(f"intensity {self.intensity} outside (0, 1]")
        if self.mass <= 0:
            raise ValueError(f"mass factor {self.mass} must be positive")

    @property
    def bound_radius(self) -> float:
        """Radius of the orientation-independent bounding circle."""
        return self.extent if self.shape == "disc" else self.extent * math.sqrt(2.0)


@dataclass(frozen=True)
class WorldState:
    """Immutable simulator state; step() returns a successor."""

    width: int
    height: int
    pusher: tuple
    pusher_radius: float
    objects: tuple
    step_index: int = 0
    seed: int = 0
    v_max: float = V_MAX
    torque_gain: float = TORQUE_GAIN

    def __post_init__(self):
        object.__setattr__(self, "pusher", (float(self.pusher[0]), float(self.pusher[1])))
        object.__setattr__(self, "objects", tuple(self.objects))


def _validate_target(state: WorldState, target) -> tuple:
    x, y = float(target[0]), float(target[1])
    if not (0.0 <= x < state.width and 0.0 <= y < state.height):
        raise OutOfBounds(f"action target ({x}, {y}) outside [0,{state.width}) x [0,{state.height})")
    return x, y


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _contact(q: np.ndarray, r_p: float, obj: ObjectSpec):
    """Penetration depth, push normal (from pusher toward object) and contact
    point on the object surface, or None when the pusher disc at q is clear."""
    c = np.array(obj.center)
    if obj.shape == "disc":
        d = c - q
        dist = float(np.hypot(*d))
        pen = (r_p + obj.extent) - dist
        if pen <= 0:
            return None
        n = d / dist if dist > 1e-12 else np.array([1.0, 0.0])
        return pen, n, c - n * obj.extent
    # square: work in the object frame
    he = obj.extent
    rel = _rot(-obj.angle) @ (q - c)
    clamped = np.clip(rel, -he, he)
    if np.all(np.abs(rel) < he):  # pusher center inside the square
        gap = he - np.abs(rel)
        axis = int(np.argmin(gap))
        n_frame = np.zeros(2)
        n_frame[axis] = -math.copysign(1.0, rel[axis]) if rel[axis] != 0 else -1.0
        pen = r_p + float(gap[axis])
        cp_frame = rel.copy()
        cp_frame[axis] = math.copysign(he, rel[axis])
    else:
        diff = rel - clamped
        dist = float(np.hypot(*diff))
        pen = r_p - dist
        if pen <= 0:
            return None
        n_frame = -diff / dist
        cp_frame = clamped
    rot = _rot(obj.angle)
    return pen, rot @ n_frame, c + rot @ cp_frame


def _clamp_object(obj_center: np.ndarray, rb: float, state: WorldState) -> np.ndarray:
    lo = np.array([rb, rb])
    hi = np.array([state.width - 1 - rb, state.height - 1 - rb])
    return np.minimum(np.maximum(obj_center, lo), hi)


def step(state: WorldState, action: Action) -> WorldState:
    """Advance the world by one commanded step (deterministic)."""
    target = np.array(_validate_target(state, action.target))
    p0 = np.array(state.pusher)
    delta = target - p0
    dist = float(np.hypot(*delta))
    move = delta if dist <= state.v_max else delta * (state.v_max / dist)

    n_sub = max(1, math.ceil(float(np.hypot(*move)) / SUBSTEP))
    d_sub = move / n_sub
    q = p0.copy()
    centers = [np.array(o.center, dtype=float) for o in state.objects]
    angles = [o.angle for o in state.objects]
    spins = [0.0] * len(state.objects)  # per-step rotation budget tracking

    for _ in range(n_sub):
        q = q + d_sub
        for i, obj in enumerate(state.objects):
            cur = replace(obj, center=tuple(centers[i]), angle=angles[i])
            hit = _contact(q, state.pusher_radius, cur)
            if hit is None:
                continue
            _, n, cp = hit
            push = max(0.0, float(d_sub @ n)) / obj.mass
            centers[i] = centers[i] + push * n
            if obj.shape == "square" and push > 0:
                arm = cp - np.array(cur.center)
                lever = float(arm[0] * n[1] - arm[1] * n[0])
                # tau rad per px of lever offset per px of applied push
                spin = state.torque_gain * lever * push
                room = ROT_CAP - abs(spins[i])
                spin = max(-room, min(room, spin))
                spins[i] += spin
                angles[i] += spin
            centers[i] = _clamp_object(centers[i], obj.bound_radius, state)
            # resolve what the object could not absorb: the pusher stalls
            cur = replace(obj, center=tuple(centers[i]), angle=angles[i])
            hit = _contact(q, state.pusher_radius, cur)
            if hit is not None:
                pen, n, _ = hit
                q = q - pen * n

    # final cleanup: separating from one object may have nudged the pusher
    # into another; retract until every contact is resolved
    for _ in range(8):
        clean = True
        for i, obj in enumerate(state.objects):
            cur = replace(obj, center=tuple(centers[i]), angle=angles[i])
            hit = _contact(q, state.pusher_radius, cur)
            if hit is not None and hit[0] > 1e-12:
                q = q - hit[0] * hit[1]
                clean = False
        if clean:
            break

    q = np.clip(q, [0.0, 0.0], [state.width - 1.0, state.height - 1.0])
    new_objects = tuple(
        replace(o, center=(float(c[0]), float(c[1])), angle=a)
        for o, c, a in zip(state.objects, centers, angles))
    return replace(state, pusher=(float(q[0]), float(q[1])), objects=new_objects,
                   step_index=state.step_index + 1)


# ---------------------------------------------------------------------------
# Rendering and ground-truth flow
# ---------------------------------------------------------------------------

def _grid_points(state: WorldState):
    ys, xs = np.mgrid[0:state.height, 0:state.width]
    return xs.astype(float), ys.astype(float)


def _object_mask(obj: ObjectSpec, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    cx, cy = obj.center
    if obj.shape == "disc":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= obj.extent ** 2
    c, s = math.cos(-obj.angle), math.sin(-obj.angle)
    rx = c * (xs - cx) - s * (ys - cy)
    ry = s * (xs - cx) + c * (ys - cy)
    return (np.abs(rx) <= obj.extent) & (np.abs(ry) <= obj.extent)


def _pusher_mask(state: WorldState, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    px, py = state.pusher
    return (xs - px) ** 2 + (ys - py) ** 2 <= state.pusher_radius ** 2


def surface_map(state: WorldState) -> np.ndarray:
    """Topmost surface id per pixel: -1 background, 0..n-1 objects (later
    objects drawn over earlier), n = pusher."""
    xs, ys = _grid_points(state)
    ids = np.full((state.height, state.width), -1, dtype=np.int64)
    for i, obj in enumerate(state.objects):
        ids[_object_mask(obj, xs, ys)] = i
    ids[_pusher_mask(state, xs, ys)] = len(state.objects)
    return ids


TEXTURE_AMPLITUDE = 0.3


def _texture(obj: ObjectSpec, xs: np.ndarray, ys: np.ndarray, phase: float) -> np.ndarray:
    """Deterministic modulation in the object frame, so it moves rigidly with
    the object and gives the block-matching tracker something to lock onto.
    Incommensurate wave frequencies avoid repeats within the search window."""
    cx, cy = obj.center
    c, s = math.cos(-obj.angle), math.sin(-obj.angle)
    u = c * (xs - cx) - s * (ys - cy)
    v = s * (xs - cx) + c * (ys - cy)
    p = (np.sin(1.7 * u + 0.6 * v + phase) * np.sin(0.9 * v - 0.4 * u + 2.0 * phase + 1.0)
         + 0.5 * np.sin(2.6 * u + 2.9 * v + 1.7 * phase))
    return p / 1.5


def render(state: WorldState) -> Image:
    """Rasterize: background 0, objects at their (textured) base intensity,
    pusher at fixed intensity 1.0 drawn last so it occludes objects."""
    xs, ys = _grid_points(state)
    img = np.zeros((state.height, state.width))
    for i, obj in enumerate(state.objects):
        mask = _object_mask(obj, xs, ys)
        shade = obj.intensity * (1.0 + TEXTURE_AMPLITUDE * _texture(obj, xs, ys, 1.3 * i))
        # intensity 1.0 is reserved for the pusher
        img[mask] = np.clip(shade[mask], 0.05, 0.98)
    img[_pusher_mask(state, xs, ys)] = PUSHER_INTENSITY
    return Image(img)


def pixel_displacements(state: WorldState, action: Action):
    """Per-pixel (dx, dy) of each pixel's topmost surface under step(), plus
    the successor state. Background pixels have zero displacement."""
    after = step(state, action)
    xs, ys = _grid_points(state)
    ids = surface_map(state)
    dx = np.zeros_like(xs)
    dy = np.zeros_like(ys)
    for i, (before_o, after_o) in enumerate(zip(state.objects, after.objects)):
        mask = ids == i
        if not mask.any():
            continue
        c0 = np.array(before_o.center)
        c1 = np.array(after_o.center)
        dth = after_o.angle - before_o.angle
        rel_x = xs[mask] - c0[0]
        rel_y = ys[mask] - c0[1]
        c, s = math.cos(dth), math.sin(dth)
        dx[mask] = c1[0] + (c * rel_x - s * rel_y) - xs[mask]
        dy[mask] = c1[1] + (s * rel_x + c * rel_y) - ys[mask]
    pm = ids == len(state.objects)
    dx[pm] = after.pusher[0] - state.pusher[0]
    dy[pm] = after.pusher[1] - state.pusher[1]
    return dx, dy, after


def ground_truth_flow(state: WorldState, action: Action, kappa: int,
                      strict: bool = False) -> FlowField:
    """Oracle flow: a delta kernel per pixel at that pixel's rounded surface
    displacement. Offsets beyond kappa are clipped; strict=True raises
    RadiusTooSmall instead."""
    dx, dy, _ = pixel_displacements(state, action)
    kx = np.rint(dx).astype(np.int64)
    ky = np.rint(dy).astype(np.int64)
    worst = max(np.abs(kx).max(), np.abs(ky).max()) if kx.size else 0
    if strict and worst > kappa:
        raise RadiusTooSmall(f"true displacement {worst} px exceeds kernel radius {kappa}")
    kx = np.clip(kx, -kappa, kappa)
    ky = np.clip(ky, -kappa, kappa)
    side = 2 * kappa + 1
    kernels = np.zeros((state.height, state.width, side, side))
    ys, xs = np.mgrid[0:state.height, 0:state.width]
    kernels[ys, xs, ky + kappa, kx + kappa] = 1.0
    return FlowField(kernels)


# ---------------------------------------------------------------------------
# Scene generation
# ---------------------------------------------------------------------------

def random_scene(seed: int, n_objects: int, width: int = 32, height: int = 32,
                 pusher_radius: float = PUSHER_RADIUS) -> WorldState:
    """Seeded scene: pusher on the border band, non-overlapping objects fully
    inside bounds with >= 1 px clearance."""
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    rng = np.random.default_rng(seed)
    side = int(rng.integers(0, 4))
    border = pusher_radius + rng.uniform(0.0, 1.0)
    along = rng.uniform(pusher_radius, (width if side < 2 else height) - 1 - pusher_radius)
    if side == 0:
        pusher = (along, border)
    elif side == 1:
        pusher = (along, height - 1 - border)
    elif side == 2:
        pusher = (border, along)
    else:
        pusher = (width - 1 - border, along)

    scale = min(width, height) / 32.0
    objects = []
    attempts = 0
    while len(objects) < n_objects:
        attempts += 1
        if attempts > 1000:
            raise PlacementFailure(f"placed {len(objects)}/{n_objects} objects in 1000 attempts")
        if rng.random() < 0.5:
            shape, extent = "disc", rng.uniform(2.0, 3.5) * scale
        else:
            shape, extent = "square", rng.uniform(1.8, 2.8) * scale
        extent = max(extent, 1.5)
        cand = ObjectSpec(
            shape=shape, extent=extent,
            center=(0.0, 0.0),
            intensity=float(rng.uniform(0.35, 0.9)),
            mass=float(rng.uniform(1.5, 3.0)),
            angle=float(rng.uniform(0.0, math.pi / 2)) if shape == "square" else 0.0,
        )
        rb = cand.bound_radius
        lo_x, hi_x = rb + 1.0, width - 2.0 - rb
        lo_y, hi_y = rb + 1.0, height - 2.0 - rb
        if lo_x >= hi_x or lo_y >= hi_y:
            continue
        center = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)])
        if np.hypot(*(center - np.array(pusher))) < rb + pusher_radius + 1.0:
            continue
        clear = all(
            np.hypot(*(center - np.array(o.center))) >= rb + o.bound_radius + 1.0
            for o in objects)
        if not clear:
            continue
        objects.append(replace(cand, center=(float(center[0]), float(center[1]))))

    return WorldState(width=width, height=height, pusher=pusher,
                      pusher_radius=pusher_radius, objects=tuple(objects), seed=seed)


def scene_from_config(cfg: dict) -> WorldState:
    """Build a world from a JSON-style config.

    Either {"grid": N, "seed": S, "objects": K} for a random scene, or an
    explicit scene with "pusher": [x, y] and "objects": [{shape, ...}, ...].
    """
    grid = cfg.get("grid", 32)
    if isinstance(grid, (list, tuple)):
        width, height = int(grid[0]), int(grid[1])
    else:
        width = height = int(grid)
    seed = int(cfg.get("seed", 0))
    objects = cfg.get("objects", 1)
    if isinstance(objects, int):
        return random_scene(seed, objects, width=width, height=height,
                            pusher_radius=float(cfg.get("pusher_radius", PUSHER_RADIUS)))
    specs = []
    for o in objects:
        specs.append(ObjectSpec(
            shape=o["shape"],
            extent=float(o.get("radius", o.get("half_extent", o.get("extent", 2.5)))),
            center=(float(o["center"][0]), float(o["center"][1])),
            intensity=float(o.get("intensity", 0.6)),
            mass=float(o.get("mass", 1.5)),
            angle=float(o.get("angle", 0.0)),
        ))
    pusher = cfg.get("pusher", [1.0 + PUSHER_RADIUS, 1.0 + PUSHER_RADIUS])
    return WorldState(width=width, height=height,
                      pusher=(float(pusher[0]), float(pusher[1])),
                      pusher_radius=float(cfg.get("pusher_radius", PUSHER_RADIUS)),
                      objects=tuple(specs), seed=seed,
                      v_max=float(cfg.get("v_max", V_MAX)),
                      torque_gain=float(cfg.get("torque_gain", TORQUE_GAIN)))
