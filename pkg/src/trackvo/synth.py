"""Synthetic scene generation: smooth camera paths, static/dynamic 3D points,
rectangular occluders, exact ground-truth tracks, and procedural test images."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import Intrinsics, Pose

MIN_CLEARANCE = 0.1


class InfeasibleScene(Exception):
    pass


@dataclass
class OccluderRect:
    """Finite 3D rectangle: center +/- edge_u +/- edge_v, active on all frames
    unless a frame range is given."""

    center: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    frames: tuple | None = None  # inclusive (first, last) or None for always

    def active(self, s):
        return self.frames is None or (self.frames[0] <= s <= self.frames[1])

    def blocks(self, origin, target, s):
        """True when the segment origin->target crosses the rectangle."""
        return bool(self.blocks_many(origin, np.asarray(target)[None], s)[0])

    def blocks_many(self, origin, targets, s):
        """Vectorized segment tests: (N, 3) targets -> (N,) bool."""
        targets = np.atleast_2d(targets)
        if not self.active(s):
            return np.zeros(len(targets), dtype=bool)
        d = targets - origin
        n = np.cross(self.edge_u, self.edge_v)
        denom = d @ n
        safe = np.where(np.abs(denom) < 1e-12, 1.0, denom)
        t = ((self.center - origin) @ n) / safe
        hit = (np.abs(denom) >= 1e-12) & (t > 1e-6) & (t < 1.0 - 1e-6)
        q = origin + t[:, None] * d - self.center
        alpha = (q @ self.edge_u) / (self.edge_u @ self.edge_u)
        beta = (q @ self.edge_v) / (self.edge_v @ self.edge_v)
        return hit & (np.abs(alpha) <= 1.0) & (np.abs(beta) <= 1.0)


@dataclass
class DynamicPoint:
    """World point with scripted independent motion (m per frame index)."""

    base: np.ndarray
    velocity: np.ndarray
    motion: str = "linear"  # or "sinusoidal"
    freq: float = 0.15

    def position(self, s):
        if self.motion == "linear":
            return self.base + s * self.velocity
        return self.base + self.velocity * np.sin(2.0 * np.pi * self.freq * s) / (
            2.0 * np.pi * self.freq
        )


@dataclass
class SceneSpec:
    poses: list  # S camera-to-world Pose
    static_points: np.ndarray  # (Ns, 3)
    dynamic_points: list  # DynamicPoint
    occluders: list  # OccluderRect
    intrinsics: Intrinsics
    image_size: tuple  # (width, height)
    texture_seed: int = 0

    @property
    def n_frames(self):
        return len(self.poses)

    @property
    def n_points(self):
        return len(self.static_points) + len(self.dynamic_points)

    @property
    def dynamic_labels(self):
        return np.concatenate(
            [
                np.zeros(len(self.static_points), dtype=int),
                np.ones(len(self.dynamic_points), dtype=int),
            ]
        )

    def point_position(self, idx, s):
        ns = len(self.static_points)
        if idx < ns:
            return np.asarray(self.static_points[idx], dtype=float)
        return self.dynamic_points[idx - ns].position(s)

    def to_json(self):
        return json.dumps(
            {
                "poses": [p.matrix().tolist() for p in self.poses],
                "static_points": np.asarray(self.static_points).tolist(),
                "dynamic_points": [
                    {
                        "base": d.base.tolist(),
                        "velocity": d.velocity.tolist(),
                        "motion": d.motion,
                        "freq": d.freq,
                    }
                    for d in self.dynamic_points
                ],
                "occluders": [
                    {
                        "center": o.center.tolist(),
                        "edge_u": o.edge_u.tolist(),
                        "edge_v": o.edge_v.tolist(),
                        "frames": list(o.frames) if o.frames else None,
                    }
                    for o in self.occluders
                ],
                "intrinsics": [
                    self.intrinsics.fx,
                    self.intrinsics.fy,
                    self.intrinsics.cx,
                    self.intrinsics.cy,
                ],
                "image_size": list(self.image_size),
                "texture_seed": self.texture_seed,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            poses=[Pose.from_matrix(np.array(m)) for m in d["poses"]],
            static_points=np.array(d["static_points"], dtype=float),
            dynamic_points=[
                DynamicPoint(
                    base=np.array(p["base"]),
                    velocity=np.array(p["velocity"]),
                    motion=p["motion"],
                    freq=p["freq"],
                )
                for p in d["dynamic_points"]
            ],
            occluders=[
                OccluderRect(
                    center=np.array(o["center"]),
                    edge_u=np.array(o["edge_u"]),
                    edge_v=np.array(o["edge_v"]),
                    frames=tuple(o["frames"]) if o["frames"] else None,
                )
                for o in d["occluders"]
            ],
            intrinsics=Intrinsics(*d["intrinsics"]),
            image_size=tuple(d["image_size"]),
            texture_seed=d["texture_seed"],
        )


@dataclass
class GroundTruthTracks:
    xy: np.ndarray  # (Q, S, 2) exact projections
    vis: np.ndarray  # (Q, S) in {0, 1}
    dynamic_label: np.ndarray  # (Q,) in {0, 1}
    depth: np.ndarray  # (Q, S) camera-frame depth


@dataclass
class SceneConfig:
    n_frames: int = 30
    n_static: int = 120
    n_dynamic: int = 0
    image_width: int = 320
    image_height: int = 240
    focal: float = 240.0
    trans_amplitude: float = 0.8
    rot_amplitude_deg: float = 3.0
    box_depth: tuple = (5.0, 12.0)
    dynamic_speed: float = 0.15  # m per frame
    dynamic_motion: str = "linear"
    n_occluders: int = 0

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _euler(yaw, pitch, roll):
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    return ry @ rx @ rz


def generate_scene(config: SceneConfig, seed=0) -> SceneSpec:
    """Reproducible scene: Lissajous camera path looking down +Z with points
    scattered in a box in front of every camera position."""
    rng = np.random.default_rng(seed)
    s_count = config.n_frames
    if s_count < 2:
        raise InfeasibleScene("need at least 2 frames")
    if config.n_static < 8:
        raise InfeasibleScene("need at least 8 static points")
    z0, z1 = config.box_depth
    if z0 <= MIN_CLEARANCE:
        raise InfeasibleScene("point box reaches behind the camera")

    amp = config.trans_amplitude
    rot = np.deg2rad(config.rot_amplitude_deg)
    phases = rng.uniform(0, 2 * np.pi, size=6)
    poses = []
    for s in range(s_count):
        u = s / max(s_count - 1, 1)
        t = amp * np.array(
            [
                np.sin(2 * np.pi * 1.0 * u + phases[0]),
                0.6 * np.sin(2 * np.pi * 2.0 * u + phases[1]),
                0.4 * np.sin(2 * np.pi * 1.0 * u + phases[2]),
            ]
        )
        t -= amp * np.array(
            [np.sin(phases[0]), 0.6 * np.sin(phases[1]), 0.4 * np.sin(phases[2])]
        )
        r = _euler(
            rot * np.sin(2 * np.pi * u + phases[3]),
            rot * np.sin(2 * np.pi * 2 * u + phases[4]),
            0.5 * rot * np.sin(2 * np.pi * u + phases[5]),
        )
        poses.append(Pose(r, t))

    # lateral extent chosen so points stay inside a generous frustum margin
    half_x = 0.55 * z0 * (config.image_width / 2) / config.focal
    half_y = 0.55 * z0 * (config.image_height / 2) / config.focal
    static = np.column_stack(
        [
            rng.uniform(-half_x, half_x, config.n_static),
            rng.uniform(-half_y, half_y, config.n_static),
            rng.uniform(z0, z1, config.n_static),
        ]
    )
    for pose in poses:
        cam = (static - pose.translation) @ pose.rotation
        if cam[:, 2].min() < MIN_CLEARANCE:
            raise InfeasibleScene("static point too close to a camera")

    dynamic = []
    for _ in range(config.n_dynamic):
        base = np.array(
            [
                rng.uniform(-half_x, half_x),
                rng.uniform(-half_y, half_y),
                rng.uniform(z0, z1),
            ]
        )
        direction = rng.normal(size=3)
        direction[2] *= 0.2  # mostly fronto-parallel motion, stays in frustum
        direction /= np.linalg.norm(direction)
        dynamic.append(
            DynamicPoint(
                base=base,
                velocity=config.dynamic_speed * direction,
                motion=config.dynamic_motion,
            )
        )

    occluders = []
    for _ in range(config.n_occluders):
        center = np.array(
            [rng.uniform(-half_x, half_x), rng.uniform(-half_y, half_y), z0 * 0.6]
        )
        first = int(rng.integers(0, max(s_count - 4, 1)))
        occluders.append(
            OccluderRect(
                center=center,
                edge_u=np.array([0.4, 0.0, 0.0]),
                edge_v=np.array([0.0, 0.3, 0.0]),
                frames=(first, first + 2),
            )
        )

    intr = Intrinsics(
        config.focal, config.focal, config.image_width / 2.0, config.image_height / 2.0
    )
    return SceneSpec(
        poses=poses,
        static_points=static,
        dynamic_points=dynamic,
        occluders=occluders,
        intrinsics=intr,
        image_size=(config.image_width, config.image_height),
        texture_seed=seed,
    )


def render_tracks(scene: SceneSpec) -> GroundTruthTracks:
    """Exact pinhole projections with frustum / image-bounds / occluder visibility."""
    q, s_count = scene.n_points, scene.n_frames
    w, h = scene.image_size
    k = scene.intrinsics
    xy = np.zeros((q, s_count, 2))
    vis = np.zeros((q, s_count))
    depth = np.zeros((q, s_count))
    for s, pose in enumerate(scene.poses):
        p_world = np.array([scene.point_position(i, s) for i in range(q)])
        p_cam = (p_world - pose.translation) @ pose.rotation
        z = p_cam[:, 2]
        depth[:, s] = z
        front = z > MIN_CLEARANCE
        zs = np.where(front, z, 1.0)
        pix = np.column_stack(
            [k.fx * p_cam[:, 0] / zs + k.cx, k.fy * p_cam[:, 1] / zs + k.cy]
        )
        xy[front, s] = pix[front]
        ok = front & (pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)
        for occ in scene.occluders:
            ok &= ~occ.blocks_many(pose.translation, p_world, s)
        vis[ok, s] = 1.0
    return GroundTruthTracks(
        xy=xy, vis=vis, dynamic_label=scene.dynamic_labels, depth=depth
    )


def value_noise_image(shape, seed, octaves=4, base_cells=4):
    """Multi-octave bilinear value noise in [0, 1]; deterministic from seed."""
    h, w = shape
    rng = np.random.default_rng(seed)
    out = np.zeros((h, w))
    total = 0.0
    for o in range(octaves):
        cells = base_cells * (2**o)
        grid = rng.random((cells + 1, cells + 1))
        ys = np.linspace(0, cells, h, endpoint=False)
        xs = np.linspace(0, cells, w, endpoint=False)
        yi = ys.astype(int)
        xi = xs.astype(int)
        fy = (ys - yi)[:, None]
        fx = (xs - xi)[None, :]
        g00 = grid[np.ix_(yi, xi)]
        g01 = grid[np.ix_(yi, xi + 1)]
        g10 = grid[np.ix_(yi + 1, xi)]
        g11 = grid[np.ix_(yi + 1, xi + 1)]
        layer = (
            g00 * (1 - fy) * (1 - fx)
            + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx)
            + g11 * fy * fx
        )
        weight = 0.5**o
        out += weight * layer
        total += weight
    return out / total


def shift_image(img, dx, dy):
    """Bilinear subpixel shift; content moves by (+dx, +dy) pixels."""
    h, w = img.shape
    xs = np.arange(w)[None, :] - dx
    ys = np.arange(h)[:, None] - dy
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    return (
        img[y0, x0] * (1 - fy) * (1 - fx)
        + img[y0, x0 + 1] * (1 - fy) * fx
        + img[y0 + 1, x0] * fy * (1 - fx)
        + img[y0 + 1, x0 + 1] * fy * fx
    )


def render_images(scene: SceneSpec, bg_depth=9.0, splat_sigma=1.5):
    """Procedural frames: value-noise background on a fronto-parallel plane at
    bg_depth plus Gaussian splats at projected point locations."""
    w, h = scene.image_size
    tracks = render_tracks(scene)
    rng = np.random.default_rng(scene.texture_seed + 1)
    amp = rng.uniform(0.35, 0.6, size=scene.n_points)
    sign = rng.choice([-1.0, 1.0], size=scene.n_points)
    tex_cells = 6
    tex_rng = np.random.default_rng(scene.texture_seed)
    tex = [tex_rng.random((tex_cells * 2**o + 1,) * 2) for o in range(4)]

    def sample_plane(px, py):
        """Noise value at world plane coordinates (meters)."""
        val = np.zeros_like(px)
        total = 0.0
        for o, grid in enumerate(tex):
            n = grid.shape[0] - 1
            # 1 meter per base cell
            gx = (px * 2**o) % n
            gy = (py * 2**o) % n
            x0 = np.floor(gx).astype(int)
            y0 = np.floor(gy).astype(int)
            fx = gx - x0
            fy = gy - y0
            layer = (
                grid[y0, x0] * (1 - fy) * (1 - fx)
                + grid[y0, x0 + 1] * (1 - fy) * fx
                + grid[y0 + 1, x0] * fy * (1 - fx)
                + grid[y0 + 1, x0 + 1] * fy * fx
            )
            wgt = 0.55**o
            val += wgt * layer
            total += wgt
        return val / total

    k = scene.intrinsics
    frames = []
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    rays = np.stack(
        [(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones_like(us)], axis=-1
    )
    for s, pose in enumerate(scene.poses):
        dirs = rays @ pose.rotation.T
        o = pose.translation
        # intersect each ray with the z = bg_depth world plane
        tz = (bg_depth - o[2]) / np.where(np.abs(dirs[..., 2]) < 1e-9, 1e-9, dirs[..., 2])
        px = o[0] + tz * dirs[..., 0]
        py = o[1] + tz * dirs[..., 1]
        img = sample_plane(px, py)
        for i in range(scene.n_points):
            if tracks.vis[i, s] < 0.5:
                continue
            cx, cy = tracks.xy[i, s]
            x0 = int(max(0, np.floor(cx - 4)))
            x1 = int(min(w, np.ceil(cx + 5)))
            y0 = int(max(0, np.floor(cy - 4)))
            y1 = int(min(h, np.ceil(cy + 5)))
            if x0 >= x1 or y0 >= y1:
                continue
            gx, gy = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1))
            blob = np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2 * splat_sigma**2))
            img[y0:y1, x0:x1] += sign[i] * amp[i] * blob
        frames.append(np.clip(img, 0.0, 1.0))
    return frames
