"""Disturbance Estimation and Compensation (DEC) balance controller.

One servo module per joint. Each module adds the angle equivalents of the
estimated disturbances (gravity, support tilt, translation, push) to its
controlled error and runs the sum through a delayed PD; an undelayed passive
PD on the joint angle is added on top::

    T = G * PD(-eps + a_grav + a_trans + a_push) delayed by dt_lump
        + Kp_pass * q + Kd_pass * dq/dt

``T`` is the corrective torque (positive when resisting forward lean); the
torque handed to the plant is ``-T``.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError
from .plant import PlantParams, SensorReadout, com_angle_and_rate

CONTROL_RATE = 100.0
CONFIG_SCHEMA = "swaybench.controller/1"


@dataclass(frozen=True)
class JointGains:
    kp: float
    kd: float
    kp_pass: float = 0.0
    kd_pass: float = 0.0
    gain: float = 1.2
    g_ext: float = 0.5
    w_ext: float = 5.0
    delay: float = 0.01
    # dead-band of the foot-in-space velocity estimate (rad/s); ankle module only
    threshold: float = math.radians(0.17)
    controlled: str = "joint"

    def __post_init__(self):
        for name in ("kp", "kd", "kp_pass", "kd_pass", "gain", "g_ext", "w_ext", "delay", "threshold"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigurationError(name, f"must be finite and >= 0, got {value}")
        if self.controlled not in ("com", "joint"):
            raise ConfigurationError("controlled", "must be 'com' or 'joint'")


# Sagittal-plane gains of the robot; the passive terms are viscous joint
# friction.
TABLE_GAINS = {
    "ankle": JointGains(kp=119.57, kd=11.95, kd_pass=20.0, controlled="com"),
    "knee": JointGains(kp=55.72, kd=0.4458, kd_pass=10.0),
    "hip": JointGains(kp=22.71, kd=5.67, kd_pass=5.0),
    "pelvis": JointGains(kp=10.59, kd=0.07, kd_pass=2.0, g_ext=0.0),
}


@dataclass(frozen=True)
class DecParams:
    joints: tuple
    names: tuple = ("ankle", "knee", "hip", "pelvis")
    rate: float = CONTROL_RATE

    def __post_init__(self):
        if len(self.joints) != len(self.names[: len(self.joints)]):
            raise ConfigurationError("joints", "one gain set per joint")
        object.__setattr__(self, "names", tuple(self.names[: len(self.joints)]))
        if not self.rate > 0:
            raise ConfigurationError("rate", "must be > 0")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def delay_ticks(self, j: int) -> int:
        return int(round(self.joints[j].delay * self.rate))

    def to_dict(self) -> dict:
        return {
            "schema": CONFIG_SCHEMA,
            "rate": self.rate,
            # a list keeps the proximal-to-distal order through sorted JSON
            "joints": [{"name": name, **asdict(g)} for name, g in zip(self.names, self.joints)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DecParams":
        if data.get("schema", CONFIG_SCHEMA) != CONFIG_SCHEMA:
            raise ConfigurationError("schema", f"unsupported controller schema {data.get('schema')!r}")
        joints = [dict(j) for j in data.get("joints", ())]
        if not joints or any("name" not in j for j in joints):
            raise ConfigurationError("joints", "expected a list of named joint entries")
        names = tuple(j.pop("name") for j in joints)
        try:
            gains = tuple(JointGains(**j) for j in joints)
        except TypeError as exc:
            raise ConfigurationError("joints", str(exc)) from exc
        return cls(gains, names, float(data.get("rate", CONTROL_RATE)))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DecParams":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_joint(self, name: str, **changes) -> "DecParams":
        idx = self.names.index(name)
        joints = list(self.joints)
        joints[idx] = replace(joints[idx], **changes)
        return replace(self, joints=tuple(joints))

    def with_gain(self, gain: float) -> "DecParams":
        return replace(self, joints=tuple(replace(j, gain=gain) for j in self.joints))


def default_dec_params(n_joints: int = 4) -> DecParams:
    names = ("ankle", "knee", "hip", "pelvis")[:n_joints]
    return DecParams(tuple(TABLE_GAINS[n] for n in names), names)


def preset(name: str, n_joints: int = 4) -> DecParams:
    """The five test configurations: standard, no-d, double-d, gain-1.0, gain-0.8."""
    base = default_dec_params(n_joints)
    ankle_kd = base.joints[0].kd
    if name == "standard":
        return base
    if name == "no-d":
        return base.with_joint("ankle", kd=0.0)
    if name == "double-d":
        return base.with_joint("ankle", kd=2.0 * ankle_kd)
    if name == "gain-1.0":
        return base.with_gain(1.0)
    if name == "gain-0.8":
        return base.with_gain(0.8)
    raise ConfigurationError("preset", f"unknown preset {name!r}; choose from {PRESETS}")


PRESETS = ("standard", "no-d", "double-d", "gain-1.0", "gain-0.8")


def deadband(x: float, theta: float) -> float:
    """Odd dead-band: zero inside [-theta, theta], shifted identity outside."""
    if theta < 0:
        raise ConfigurationError("theta", "must be >= 0")
    if x > theta:
        return x - theta
    if x < -theta:
        return x + theta
    return 0.0


class FootInSpaceEstimate(NamedTuple):
    angle: float = 0.0
    rate: float = 0.0


def estimate_foot_in_space(readout: SensorReadout, params: DecParams,
                           previous: FootInSpaceEstimate) -> FootInSpaceEstimate:
    """Integrate the dead-banded support rotation velocity (trapezoid rule).

    The velocity is reconstructed as head-in-space velocity minus the sum of
    all joint velocities.
    """
    rate = deadband(readout.foot_in_space_velocity, params.joints[0].threshold)
    dt = 1.0 / params.rate
    return FootInSpaceEstimate(previous.angle + 0.5 * dt * (previous.rate + rate), rate)


class DelayLine:
    """Fixed-length FIFO returning the value pushed ``length`` ticks earlier."""

    def __init__(self, length: int):
        self.length = length
        self._buf = deque([0.0] * length)

    def push(self, value: float) -> float:
        if self.length == 0:
            return value
        self._buf.append(value)
        if len(self._buf) <= self.length:
            raise RuntimeError("delay buffer underrun")
        return self._buf.popleft()


class PushFilter:
    """First-order Butterworth low-pass (bilinear transform, prewarped)."""

    def __init__(self, cutoff: float, dt: float):
        self.enabled = cutoff > 0
        if self.enabled:
            k = math.tan(cutoff * dt / 2.0)
            self.b = k / (1.0 + k)
            self.a = (k - 1.0) / (k + 1.0)
        self.x_prev = 0.0
        self.y = 0.0

    def update(self, x: float) -> float:
        if not self.enabled:
            return 0.0
        self.y = self.b * (x + self.x_prev) - self.a * self.y
        self.x_prev = x
        return self.y


@dataclass(frozen=True)
class Disturbances:
    grav: float
    trans: float
    push: float
    foot_in_space: float
    grav_rate: float = 0.0
    push_rate: float = 0.0


def servo_torque(gains: JointGains, error: float, error_rate: float, dist: Disturbances,
                 joint_angle: float, joint_velocity: float, delay: DelayLine) -> tuple[float, float]:
    """Corrective joint torque. Returns (total, delayed active part)."""
    x = -error + dist.grav + dist.trans + dist.push
    xd = -error_rate + dist.grav_rate + dist.push_rate
    active = delay.push(gains.gain * (gains.kp * x + gains.kd * xd))
    passive = gains.kp_pass * joint_angle + gains.kd_pass * joint_velocity
    return active + passive, active


@dataclass
class ControllerState:
    fs: FootInSpaceEstimate
    delays: list
    push_filters: list
    ticks: int = 0
    last_active: np.ndarray = field(default_factory=lambda: np.zeros(0))
    last_disturbances: list = field(default_factory=list)


class DecController:
    """Stateful DEC controller for one simulated trial."""

    def __init__(self, params: DecParams, plant: PlantParams):
        if params.n_joints != plant.n_links:
            raise ConfigurationError("joints", f"controller has {params.n_joints} modules, "
                                               f"plant has {plant.n_links} joints")
        self.params = params
        self.plant = plant
        self.masses, self.coms, self.lengths, _ = plant.arrays()
        self.state = self.initial_state()

    def initial_state(self, foot_in_space: float = 0.0) -> ControllerState:
        dt = 1.0 / self.params.rate
        return ControllerState(
            FootInSpaceEstimate(foot_in_space, 0.0),
            [DelayLine(self.params.delay_ticks(j)) for j in range(self.params.n_joints)],
            [PushFilter(g.w_ext if g.g_ext > 0 else 0.0, dt) for g in self.params.joints],
            last_active=np.zeros(self.params.n_joints),
        )

    def reset(self, readout: SensorReadout | None = None):
        """Clear buffers; seed the tilt estimate with the measured support angle."""
        self.state = self.initial_state(readout.foot_in_space if readout is not None else 0.0)

    def _above(self, j, phi, phid):
        """COM angle/rate of segments j.. about joint j."""
        return com_angle_and_rate(phi[j:], phid[j:], self.masses[j:], self.coms[j:], self.lengths[j:])

    def tick(self, readout: SensorReadout) -> np.ndarray:
        torques, self.state = controller_tick(readout, self, self.state)
        return torques


def controller_tick(readout: SensorReadout, controller: DecController,
                    state: ControllerState) -> tuple[np.ndarray, ControllerState]:
    """Run the estimators and all joint modules; returns plant-convention torques."""
    params = controller.params
    fs = estimate_foot_in_space(readout, params, state.fs)
    phi = readout.segment_angles
    phid = readout.segment_velocities
    # proprioceptive chain referenced to the reconstructed support orientation
    q, qd = readout.joint_angles, readout.joint_velocities
    phi_hat = fs.angle + np.cumsum(q)
    phid_hat = fs.rate + np.cumsum(qd)
    torques = np.empty(params.n_joints)
    active = np.empty(params.n_joints)
    dists = []
    for j, gains in enumerate(params.joints):
        grav, grav_rate = controller._above(j, phi, phid)
        if gains.controlled == "com":
            sway_hat, sway_hat_rate = controller._above(j, phi_hat, phid_hat)
            error, error_rate = -sway_hat, -sway_hat_rate
        else:
            error, error_rate = -q[j], -qd[j]
        filt = state.push_filters[j]
        push = push_rate = 0.0
        if filt.enabled and gains.kp > 0:
            prev = filt.y
            y = filt.update(readout.external_torque)
            push = gains.g_ext * y / gains.kp
            push_rate = gains.g_ext * (y - prev) * params.rate / gains.kp
        dist = Disturbances(grav, 0.0, push, fs.angle, grav_rate, push_rate)
        total, active[j] = servo_torque(gains, error, error_rate, dist, q[j], qd[j], state.delays[j])
        torques[j] = -total
        dists.append(dist)
    state.fs = fs
    state.ticks += 1
    state.last_active = active
    state.last_disturbances = dists
    return torques, state
