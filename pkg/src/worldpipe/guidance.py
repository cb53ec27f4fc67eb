"""Keyboard-to-camera guidance arithmetic.

Maps WASD + arrow-key states to camera commands (with standby drift when
idle), integrates camera poses exactly over time, and provides the
token-shape, sliding-window, dynamic-mask, and key-frame helpers used by
the guidance stage of the stream simulator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .mmpl import AnchorSet


class InvalidTimestep(ValueError):
    pass


class InvalidFrame(ValueError):
    pass


MOVEMENT_KEYS = ("W", "A", "S", "D")
VIEW_KEYS = ("UP", "DOWN", "LEFT", "RIGHT")


@dataclass(frozen=True)
class KeyState:
    movement: frozenset[str] = frozenset()
    view: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.movement <= set(MOVEMENT_KEYS):
            raise ValueError(f"unknown movement keys: {self.movement}")
        if not self.view <= set(VIEW_KEYS):
            raise ValueError(f"unknown view keys: {self.view}")


class Move(str, Enum):
    FORWARD = "forward"
    LEFT = "left"
    BACKWARD = "backward"
    RIGHT = "right"
    FORWARD_LEFT = "forward_left"
    FORWARD_RIGHT = "forward_right"
    BACKWARD_RIGHT = "backward_right"
    BACKWARD_LEFT = "backward_left"
    STILL = "still"


class View(str, Enum):
    TURN_RIGHT = "turn_right"
    TURN_LEFT = "turn_left"
    TILT_UP = "tilt_up"
    TILT_DOWN = "tilt_down"
    TILT_UP_TURN_RIGHT = "tilt_up_turn_right"
    TILT_DOWN_TURN_RIGHT = "tilt_down_turn_right"
    TILT_DOWN_TURN_LEFT = "tilt_down_turn_left"
    # Not in the published table; included for axis symmetry.
    TILT_UP_TURN_LEFT = "tilt_up_turn_left"
    STILL = "still"


@dataclass(frozen=True)
class CameraCommand:
    move: Move = Move.STILL
    view: View = View.STILL
    standby: bool = False


_MOVE_TABLE = {
    (1, 0): Move.FORWARD, (0, 1): Move.LEFT,
    (-1, 0): Move.BACKWARD, (0, -1): Move.RIGHT,
    (1, 1): Move.FORWARD_LEFT, (1, -1): Move.FORWARD_RIGHT,
    (-1, -1): Move.BACKWARD_RIGHT, (-1, 1): Move.BACKWARD_LEFT,
    (0, 0): Move.STILL,
}

_VIEW_TABLE = {
    (0, 1): View.TURN_RIGHT, (0, -1): View.TURN_LEFT,
    (1, 0): View.TILT_UP, (-1, 0): View.TILT_DOWN,
    (1, 1): View.TILT_UP_TURN_RIGHT, (-1, 1): View.TILT_DOWN_TURN_RIGHT,
    (-1, -1): View.TILT_DOWN_TURN_LEFT, (1, -1): View.TILT_UP_TURN_LEFT,
    (0, 0): View.STILL,
}


def map_keys(keys: KeyState) -> CameraCommand:
    """Total mapping from any key state to a camera command.

    Opposing keys on one axis cancel; an entirely empty state enters
    standby (slow forward drift applied during integration).
    """
    if not keys.movement and not keys.view:
        return CameraCommand(standby=True)
    fwd = ("W" in keys.movement) - ("S" in keys.movement)
    left = ("A" in keys.movement) - ("D" in keys.movement)
    tilt = ("UP" in keys.view) - ("DOWN" in keys.view)
    turn = ("RIGHT" in keys.view) - ("LEFT" in keys.view)
    return CameraCommand(move=_MOVE_TABLE[(fwd, left)],
                         view=_VIEW_TABLE[(tilt, turn)])


@dataclass(frozen=True)
class Pose:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0    # [-pi, pi), 0 = +x, counterclockwise positive
    pitch: float = 0.0  # clamped inside (-pi/2, pi/2)


@dataclass(frozen=True)
class SpeedConfig:
    move_speed: float = 1.0        # m/s
    turn_rate: float = math.pi / 4  # rad/s
    tilt_rate: float = math.pi / 6  # rad/s
    standby_drift_speed: float = 0.05

    def __post_init__(self):
        for f_ in ("move_speed", "turn_rate", "tilt_rate", "standby_drift_speed"):
            if getattr(self, f_) < 0:
                raise ValueError(f"{f_} must be >= 0")
        if self.standby_drift_speed > self.move_speed:
            raise ValueError("standby drift must not exceed move_speed")


_PITCH_LIMIT = math.pi / 2 - 1e-9

_MOVE_DIRS = {  # body-frame (forward, left) unit vectors
    Move.FORWARD: (1.0, 0.0), Move.BACKWARD: (-1.0, 0.0),
    Move.LEFT: (0.0, 1.0), Move.RIGHT: (0.0, -1.0),
}
_D = math.sqrt(0.5)
_MOVE_DIRS.update({
    Move.FORWARD_LEFT: (_D, _D), Move.FORWARD_RIGHT: (_D, -_D),
    Move.BACKWARD_LEFT: (-_D, _D), Move.BACKWARD_RIGHT: (-_D, -_D),
})


def _wrap(angle: float) -> float:
    return (angle + math.pi) % (2 * math.pi) - math.pi


def integrate_pose(pose: Pose, cmd: CameraCommand, dt: float,
                   speeds: SpeedConfig = SpeedConfig()) -> Pose:
    """Advance the pose by dt seconds under a constant command.

    Uses the exact flow of the constant-rate motion (a circular arc while
    turning, a straight line otherwise), so integrating dt then dt' equals
    integrating dt+dt' whenever no pitch clamp activates.  Translation
    stays in the horizontal plane along the yaw-defined heading.
    """
    if dt < 0:
        raise InvalidTimestep(f"dt must be >= 0, got {dt}")

    turn = {View.TURN_RIGHT: -1, View.TILT_UP_TURN_RIGHT: -1,
            View.TILT_DOWN_TURN_RIGHT: -1, View.TURN_LEFT: 1,
            View.TILT_DOWN_TURN_LEFT: 1, View.TILT_UP_TURN_LEFT: 1}.get(cmd.view, 0)
    tilt = {View.TILT_UP: 1, View.TILT_UP_TURN_RIGHT: 1,
            View.TILT_UP_TURN_LEFT: 1, View.TILT_DOWN: -1,
            View.TILT_DOWN_TURN_RIGHT: -1, View.TILT_DOWN_TURN_LEFT: -1}.get(cmd.view, 0)

    omega = turn * speeds.turn_rate
    pitch = max(-_PITCH_LIMIT, min(_PITCH_LIMIT,
                                   pose.pitch + tilt * speeds.tilt_rate * dt))

    if cmd.standby:
        speed, direction = speeds.standby_drift_speed, _MOVE_DIRS[Move.FORWARD]
    elif cmd.move is Move.STILL:
        speed, direction = 0.0, _MOVE_DIRS[Move.FORWARD]
    else:
        speed, direction = speeds.move_speed, _MOVE_DIRS[cmd.move]

    phi = pose.yaw + math.atan2(direction[1], direction[0])
    if speed == 0.0:
        dx = dy = 0.0
    elif omega == 0.0:
        dx = speed * dt * math.cos(phi)
        dy = speed * dt * math.sin(phi)
    else:
        dx = speed / omega * (math.sin(phi + omega * dt) - math.sin(phi))
        dy = -speed / omega * (math.cos(phi + omega * dt) - math.cos(phi))

    return Pose(pose.x + dx, pose.y + dy, pose.z,
                _wrap(pose.yaw + omega * dt), pitch)


@dataclass(frozen=True)
class TokenShape:
    batch: int
    frames: int
    spatial: int
    width: int

    def __post_init__(self):
        for f_ in ("batch", "frames", "spatial", "width"):
            if getattr(self, f_) < 1:
                raise ValueError(f"{f_} must be positive")

    @property
    def token_count(self) -> int:
        return self.batch * self.frames * self.spatial


def guidance_token_shape(shape: TokenShape) -> TokenShape:
    """Frame-dimension concatenation of guidance and target tokens: 2f."""
    return TokenShape(shape.batch, 2 * shape.frames, shape.spatial, shape.width)


def sliding_window(t: int, n: int, total_frames: int) -> set[int]:
    """Temporal neighbor indices {t-n..t-1, t+1..t+n} clipped to [1, T]."""
    if not 1 <= t <= total_frames:
        raise InvalidFrame(f"frame {t} outside [1, {total_frames}]")
    lo = max(1, t - n)
    hi = min(total_frames, t + n)
    return set(range(lo, t)) | set(range(t + 1, hi + 1))


@dataclass
class SaliencyField:
    values: np.ndarray  # (frames, h, w)
    threshold: float
    window_radius: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("saliency field must be (frames, h, w)")


def dynamic_mask(field: SaliencyField, t: int) -> np.ndarray:
    """Boolean motion mask for frame t: saliency strictly above threshold."""
    if not 1 <= t <= field.values.shape[0]:
        raise InvalidFrame(f"frame {t} outside field range")
    return field.values[t - 1] > field.threshold


def keyframe_recon_frames(anchors: AnchorSet) -> set[int]:
    """Reconstruction consumes the three anchor frames only."""
    return {anchors.t_a, anchors.t_b, anchors.t_c}


# --- key-trace replay -------------------------------------------------------

@dataclass(frozen=True)
class KeyEvent:
    t_ms: int
    keys: KeyState


def parse_key_trace(text: str) -> list[KeyEvent]:
    """Parse a replay file: `<t_ms> <movement '+'-joined or '-'> <view ...>`."""
    events: list[KeyEvent] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 3 fields, got {len(parts)}")
        t_ms = int(parts[0])

        def keyset(token: str) -> frozenset[str]:
            if token == "-":
                return frozenset()
            return frozenset(k.upper() for k in token.split("+"))

        events.append(KeyEvent(t_ms, KeyState(keyset(parts[1]), keyset(parts[2]))))
    if any(b.t_ms < a.t_ms for a, b in zip(events, events[1:])):
        raise ValueError("key trace timestamps must be non-decreasing")
    return events


def replay_key_trace(events: list[KeyEvent], start: Pose = Pose(),
                     speeds: SpeedConfig = SpeedConfig()) -> list[tuple[int, Pose]]:
    """Fold a key trace into a pose log, one row per event timestamp.

    Each event's key state holds until the next event; the final event
    marks the end of the trace and contributes no motion.
    """
    log: list[tuple[int, Pose]] = []
    pose = start
    for ev, nxt in zip(events, events[1:]):
        log.append((ev.t_ms, pose))
        cmd = map_keys(ev.keys)
        pose = integrate_pose(pose, cmd, (nxt.t_ms - ev.t_ms) / 1000.0, speeds)
    if events:
        log.append((events[-1].t_ms, pose))
    return log
