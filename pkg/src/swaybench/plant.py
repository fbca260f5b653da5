"""Sagittal N-link inverted pendulum standing on a tilting support.

Segments are numbered from the ankle up (shank, thigh, pelvis, trunk). The
support rotates about the ankle axis, so the ankle stays fixed in space and
the tilt only reaches the body through the ankle joint angle. Angles are
positive for forward lean; joint angle ``q[j]`` is segment ``j`` relative to
segment ``j-1`` (the support for ``j = 0``); joint torque ``tau[j]`` acts
positive in the direction of increasing ``q[j]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .errors import ConfigurationError, FallEvent

GRAVITY = 9.81
FALL_SWAY = 0.5
FALL_JOINT = math.pi / 2
JOINT_NAMES = ("ankle", "knee", "hip", "pelvis")

# Robot anthropometrics (kg, m). Shank and thigh COM heights are measured
# from the proximal joint.
BODY_MASS = 15.30
UPPER_BODY_MASS = 9.50
THIGH_MASS = 2.80
SHANK_MASS = 3.00
TOTAL_HEIGHT = 1.52
BODY_COM_HEIGHT = 0.68
SHANK_COM = 0.32
THIGH_COM = 0.31
# Split of the upper body and pelvis length (not in the anthropometric table).
TRUNK_MASS = 3.00
TRUNK_COM = 0.20
PELVIS_LENGTH = 0.30
# Geared joints carry the rotor inertia times the squared gear ratio.
ARMATURE = 0.10


@dataclass(frozen=True)
class PlantParams:
    masses: tuple
    com_heights: tuple
    lengths: tuple
    inertias: tuple
    gravity: float = GRAVITY
    locked: tuple = ()
    names: tuple = JOINT_NAMES
    foot: dict = field(default_factory=lambda: {"length": 0.20, "ankle_height": 0.06})
    derived: dict = field(default_factory=dict)
    # reflected actuator inertia about each joint (kg m^2); empty means none
    armature: tuple = ()

    def __post_init__(self):
        n = len(self.masses)
        if not 1 <= n <= 4:
            raise ConfigurationError("masses", "1 to 4 links are supported")
        for name in ("com_heights", "lengths", "inertias"):
            if len(getattr(self, name)) != n:
                raise ConfigurationError(name, f"expected {n} entries")
        if any(m <= 0 for m in self.masses):
            raise ConfigurationError("masses", "must be > 0")
        if any(c > l + 1e-12 for c, l in zip(self.com_heights, self.lengths)):
            raise ConfigurationError("com_heights", "COM height exceeds segment length")
        if any(i < 0 for i in self.inertias):
            raise ConfigurationError("inertias", "must be >= 0")
        if 0 in self.locked:
            raise ConfigurationError("locked", "the ankle cannot be locked")
        if any(not 0 < j < n for j in self.locked):
            raise ConfigurationError("locked", f"joint indices must be in 1..{n - 1}")
        object.__setattr__(self, "names", tuple(self.names[:n]))
        armature = tuple(float(a) for a in self.armature) or (0.0,) * n
        if len(armature) != n or any(a < 0 for a in armature):
            raise ConfigurationError("armature", f"expected {n} entries >= 0")
        object.__setattr__(self, "armature", armature)

    @property
    def n_links(self) -> int:
        return len(self.masses)

    @property
    def total_mass(self) -> float:
        return float(sum(self.masses))

    def arrays(self):
        return (np.asarray(self.masses, float), np.asarray(self.com_heights, float),
                np.asarray(self.lengths, float), np.asarray(self.inertias, float))

    def first_moments(self) -> np.ndarray:
        """a_i = m_i c_i + l_i * (mass of all segments above i)."""
        m, c, l, _ = self.arrays()
        above = np.concatenate([np.cumsum(m[::-1])[::-1][1:], [0.0]])
        return m * c + l * above

    def coupling_matrix(self) -> np.ndarray:
        """Constant K with M_ij(phi) = K_ij cos(phi_i - phi_j)."""
        m, c, l, inertia = self.arrays()
        n = self.n_links
        a = self.first_moments()
        above = np.concatenate([np.cumsum(m[::-1])[::-1][1:], [0.0]])
        k = np.empty((n, n))
        for i in range(n):
            k[i, i] = inertia[i] + m[i] * c[i] ** 2 + l[i] ** 2 * above[i]
            for j in range(i + 1, n):
                k[i, j] = k[j, i] = l[i] * a[j]
        return k

    def armature_matrix(self) -> np.ndarray:
        """Constant mass-matrix term of the joint armatures in segment-angle coordinates."""
        n = self.n_links
        diff = np.eye(n) - np.eye(n, k=-1)
        return diff.T @ np.diag(self.armature) @ diff

    def free_basis(self) -> np.ndarray:
        """Columns map free coordinates (shank angle, unlocked joints) to segment angles."""
        lower = np.tril(np.ones((self.n_links, self.n_links)))
        free = [0] + [j for j in range(1, self.n_links) if j not in self.locked]
        return np.ascontiguousarray(lower[:, free])

    def com_height(self) -> float:
        """Upright whole-body COM height above the ankle."""
        m, c, l, _ = self.arrays()
        base = np.concatenate([[0.0], np.cumsum(l)[:-1]])
        return float(np.sum(m * (base + c)) / m.sum())

    def lumped(self, n_links: int) -> "PlantParams":
        """Merge segments ``n_links-1 ..`` into one rigid body (upright posture)."""
        if not 1 <= n_links <= self.n_links:
            raise ConfigurationError("n_links", f"must be in 1..{self.n_links}")
        m, c, l, inertia = self.arrays()
        keep = n_links - 1
        base = np.concatenate([[0.0], np.cumsum(l[keep:])[:-1]])
        mm = m[keep:]
        mass = mm.sum()
        com = float(np.sum(mm * (base + c[keep:])) / mass)
        rot = float(np.sum(inertia[keep:] + mm * (base + c[keep:] - com) ** 2))
        return replace(
            self,
            masses=tuple(m[:keep]) + (float(mass),),
            com_heights=tuple(c[:keep]) + (com,),
            lengths=tuple(l[:keep]) + (float(l[keep:].sum()),),
            inertias=tuple(inertia[:keep]) + (rot,),
            locked=tuple(j for j in self.locked if j < keep),
            armature=self.armature[:n_links],
            names=self.names[:n_links],
        )

    def to_dict(self) -> dict:
        return {
            "n_links": self.n_links,
            "names": list(self.names),
            "masses": list(self.masses),
            "com_heights": list(self.com_heights),
            "lengths": list(self.lengths),
            "inertias": list(self.inertias),
            "gravity": self.gravity,
            "locked": list(self.locked),
            "foot": dict(self.foot),
            "derived": dict(self.derived),
            "armature": list(self.armature),
            "total_mass": self.total_mass,
            "body_com_height": self.com_height(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PlantParams":
        if "masses" not in data:
            return default_params(int(data.get("n_links", 4)))
        try:
            return cls(
                tuple(data["masses"]), tuple(data["com_heights"]), tuple(data["lengths"]),
                tuple(data["inertias"]), float(data.get("gravity", GRAVITY)),
                tuple(data.get("locked", ())), tuple(data.get("names", JOINT_NAMES)),
                dict(data.get("foot", {"length": 0.20, "ankle_height": 0.06})),
                dict(data.get("derived", {})),
                tuple(data.get("armature", ())),
            )
        except KeyError as exc:
            raise ConfigurationError(str(exc.args[0]), "missing from plant configuration") from exc


def default_params(n_links: int = 4) -> PlantParams:
    """Robot defaults, lumped to ``n_links`` segments.

    Shank and thigh lengths equal their COM heights; the pelvis COM is solved
    so that the whole-body COM sits at 0.68 m; the trunk fills the remaining
    height to 1.52 m. Inertias are uniform thin rods about the segment COM and
    every joint carries ``ARMATURE`` of reflected rotor inertia.
    """
    pelvis_mass = UPPER_BODY_MASS - TRUNK_MASS
    l_shank, l_thigh = SHANK_COM, THIGH_COM
    hip = l_shank + l_thigh
    l_trunk = TOTAL_HEIGHT - hip - PELVIS_LENGTH
    moment = BODY_MASS * BODY_COM_HEIGHT
    moment -= SHANK_MASS * SHANK_COM + THIGH_MASS * (l_shank + THIGH_COM)
    moment -= TRUNK_MASS * (hip + PELVIS_LENGTH + TRUNK_COM)
    pelvis_com = moment / pelvis_mass - hip
    masses = (SHANK_MASS, THIGH_MASS, pelvis_mass, TRUNK_MASS)
    lengths = (l_shank, l_thigh, PELVIS_LENGTH, l_trunk)
    coms = (SHANK_COM, THIGH_COM, pelvis_com, TRUNK_COM)
    inertias = tuple(m * l * l / 12.0 for m, l in zip(masses, lengths))
    derived = {
        "shank_length": l_shank,
        "thigh_length": l_thigh,
        "pelvis_length": PELVIS_LENGTH,
        "trunk_length": l_trunk,
        "pelvis_mass": pelvis_mass,
        "trunk_mass": TRUNK_MASS,
        "pelvis_com": pelvis_com,
        "trunk_com": TRUNK_COM,
        "inertia_model": "uniform thin rod about segment COM",
    }
    params = PlantParams(masses, coms, lengths, inertias, derived=derived,
                         armature=(ARMATURE,) * 4)
    return params.lumped(n_links) if n_links < 4 else params


@dataclass(frozen=True)
class PlantState:
    q: np.ndarray
    qd: np.ndarray
    alpha: float = 0.0
    alpha_dot: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "qd", np.asarray(self.qd, dtype=float))
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qd))
                and math.isfinite(self.alpha) and math.isfinite(self.alpha_dot)):
            raise ValueError("plant state must be finite")

    @classmethod
    def upright(cls, n_links: int, alpha: float = 0.0) -> "PlantState":
        return cls(np.concatenate([[-alpha], np.zeros(n_links - 1)]), np.zeros(n_links), alpha)

    @property
    def phi(self) -> np.ndarray:
        """Segment angles in space."""
        return self.alpha + np.cumsum(self.q)

    @property
    def phid(self) -> np.ndarray:
        return self.alpha_dot + np.cumsum(self.qd)

    @classmethod
    def from_absolute(cls, phi, phid, alpha, alpha_dot, t) -> "PlantState":
        q = np.diff(np.concatenate([[alpha], phi]))
        qd = np.diff(np.concatenate([[alpha_dot], phid]))
        return cls(q, qd, float(alpha), float(alpha_dot), float(t))


@numba.njit(cache=True)
def _acceleration(phi, phid, q_force, kmat, cmat, ga, basis):
    n = phi.size
    nf = basis.shape[1]
    rhs = np.empty(n)
    mass = np.empty((n, n))
    for i in range(n):
        acc = q_force[i] + ga[i] * math.sin(phi[i])
        for j in range(n):
            d = phi[i] - phi[j]
            mass[i, j] = kmat[i, j] * math.cos(d) + cmat[i, j]
            acc -= kmat[i, j] * math.sin(d) * phid[j] * phid[j]
        rhs[i] = acc
    # reduced system  B^T M B x'' = B^T rhs, solved by Cholesky
    mr = basis.T @ mass @ basis
    br = basis.T @ rhs
    low = np.zeros((nf, nf))
    for i in range(nf):
        for j in range(i + 1):
            s = mr[i, j]
            for k in range(j):
                s -= low[i, k] * low[j, k]
            if i == j:
                low[i, i] = math.sqrt(s)
            else:
                low[i, j] = s / low[j, j]
    y = np.empty(nf)
    for i in range(nf):
        s = br[i]
        for k in range(i):
            s -= low[i, k] * y[k]
        y[i] = s / low[i, i]
    x = np.empty(nf)
    for i in range(nf - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, nf):
            s -= low[k, i] * x[k]
        x[i] = s / low[i, i]
    return basis @ x


@numba.njit(cache=True)
def _com_angle(phi, masses, coms, lengths):
    x = 0.0
    y = 0.0
    bx = 0.0
    by = 0.0
    for i in range(phi.size):
        s = math.sin(phi[i])
        c = math.cos(phi[i])
        x += masses[i] * (bx + coms[i] * s)
        y += masses[i] * (by + coms[i] * c)
        bx += lengths[i] * s
        by += lengths[i] * c
    return math.atan2(x, y)


@numba.njit(cache=True)
def _integrate(phi, phid, tau, alpha_path, dt, kmat, cmat, ga, basis, masses, coms, lengths, guard):
    """RK4 over len(alpha_path) substeps with constant joint torques.

    Returns (phi, phid, steps_done, reason) with reason 0 = ok, 1 = sway
    guard, 2 = joint guard.
    """
    n = phi.size
    q_force = np.empty(n)
    for i in range(n):
        q_force[i] = tau[i] - (tau[i + 1] if i + 1 < n else 0.0)
    p = phi.copy()
    v = phid.copy()
    for step in range(alpha_path.size):
        a1 = _acceleration(p, v, q_force, kmat, cmat, ga, basis)
        p2 = p + 0.5 * dt * v
        v2 = v + 0.5 * dt * a1
        a2 = _acceleration(p2, v2, q_force, kmat, cmat, ga, basis)
        p3 = p + 0.5 * dt * v2
        v3 = v + 0.5 * dt * a2
        a3 = _acceleration(p3, v3, q_force, kmat, cmat, ga, basis)
        p4 = p + dt * v3
        v4 = v + dt * a3
        a4 = _acceleration(p4, v4, q_force, kmat, cmat, ga, basis)
        p = p + dt / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
        v = v + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        if guard:
            if abs(_com_angle(p, masses, coms, lengths)) >= 0.5:
                return p, v, step + 1, 1
            prev = alpha_path[step]
            for i in range(n):
                if abs(p[i] - prev) >= math.pi / 2:
                    return p, v, step + 1, 2
                prev = p[i]
    return p, v, alpha_path.size, 0


class Plant:
    """Fixed-step simulator bound to one parameter set."""

    def __init__(self, params: PlantParams, guard: bool = True):
        self.params = params
        self.guard = guard
        m, c, l, _ = params.arrays()
        self._masses, self._coms, self._lengths = m, c, l
        self._kmat = params.coupling_matrix()
        self._ga = params.gravity * params.first_moments()
        self._cmat = params.armature_matrix()
        self._basis = params.free_basis()

    def advance(self, state: PlantState, joint_torques, alpha_path, dt: float) -> PlantState:
        """Integrate one substep per entry of ``alpha_path`` (support tilt, rad).

        The support angle at the end of substep ``i`` is exactly ``alpha_path[i]``.
        """
        if not 0 < dt <= 0.01:
            raise ConfigurationError("dt", f"must be in (0, 0.01], got {dt}")
        tau = np.asarray(joint_torques, dtype=float)
        if tau.shape != (self.params.n_links,) or not np.all(np.isfinite(tau)):
            raise ConfigurationError("joint_torques", "need one finite torque per joint")
        path = np.atleast_1d(np.asarray(alpha_path, dtype=float))
        phi = state.phi
        phid = state.phid
        if self.params.locked:
            # locked joints carry no relative velocity
            qd = state.qd.copy()
            qd[list(self.params.locked)] = 0.0
            phid = state.alpha_dot + np.cumsum(qd)
        p, v, done, reason = _integrate(phi, phid, tau, path, dt, self._kmat, self._cmat, self._ga,
                                        self._basis, self._masses, self._coms,
                                        self._lengths, self.guard)
        prev_alpha = path[done - 2] if done >= 2 else state.alpha
        alpha = path[done - 1]
        new = PlantState.from_absolute(p, v, alpha, (alpha - prev_alpha) / dt, state.t + done * dt)
        if reason:
            why = "COM sway beyond 0.5 rad" if reason == 1 else "joint angle beyond pi/2"
            raise FallEvent(new.t, new, why)
        return new

    def com_sway(self, state: PlantState) -> float:
        return float(_com_angle(state.phi, self._masses, self._coms, self._lengths))

    def energy(self, state: PlantState) -> float:
        phi, phid = state.phi, state.phid
        mass = self._kmat * np.cos(phi[:, None] - phi[None, :]) + self._cmat
        return float(0.5 * phid @ mass @ phid + np.sum(self._ga * np.cos(phi)))


def step(state: PlantState, joint_torques, support_tilt_command: float, dt: float,
         params: PlantParams) -> PlantState:
    """Advance by a single ``dt`` with the support driven to ``support_tilt_command``."""
    return Plant(params).advance(state, joint_torques, [support_tilt_command], dt)


def com_sway(state: PlantState, params: PlantParams) -> float:
    """Space-referenced angle of the whole-body COM about the ankle (rad)."""
    m, c, l, _ = params.arrays()
    return float(_com_angle(state.phi, m, c, l))


def com_angle_and_rate(phi, phid, masses, coms, lengths):
    """COM angle about the chain base and its time derivative."""
    s, c = np.sin(phi), np.cos(phi)
    base_x = np.concatenate([[0.0], np.cumsum(lengths * s)[:-1]])
    base_y = np.concatenate([[0.0], np.cumsum(lengths * c)[:-1]])
    base_vx = np.concatenate([[0.0], np.cumsum(lengths * c * phid)[:-1]])
    base_vy = np.concatenate([[0.0], np.cumsum(-lengths * s * phid)[:-1]])
    x = masses @ (base_x + coms * s)
    y = masses @ (base_y + coms * c)
    vx = masses @ (base_vx + coms * c * phid)
    vy = masses @ (base_vy - coms * s * phid)
    r2 = x * x + y * y
    return math.atan2(x, y), (y * vx - x * vy) / r2


@dataclass(frozen=True)
class NoiseConfig:
    """Additive white Gaussian noise standard deviations per channel."""

    joint_angle: float = 0.0
    joint_velocity: float = 0.0
    vestibular_angle: float = 0.0
    vestibular_velocity: float = 0.0
    torque: float = 0.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ConfigurationError(name, "noise std must be >= 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SensorReadout:
    joint_angles: np.ndarray
    joint_velocities: np.ndarray
    head_angle: float
    head_velocity: float
    ankle_torque: float = 0.0
    external_torque: float = 0.0
    t: float = 0.0

    @property
    def segment_angles(self) -> np.ndarray:
        """Segment angles in space from the vestibular signal down the proprioceptive chain."""
        q = self.joint_angles
        above = np.concatenate([np.cumsum(q[::-1])[::-1][1:], [0.0]])
        return self.head_angle - above

    @property
    def segment_velocities(self) -> np.ndarray:
        qd = self.joint_velocities
        above = np.concatenate([np.cumsum(qd[::-1])[::-1][1:], [0.0]])
        return self.head_velocity - above

    @property
    def foot_in_space(self) -> float:
        return float(self.head_angle - self.joint_angles.sum())

    @property
    def foot_in_space_velocity(self) -> float:
        return float(self.head_velocity - self.joint_velocities.sum())


def read_sensors(state: PlantState, noise: NoiseConfig | None = None, rng=None,
                 ankle_torque: float = 0.0) -> SensorReadout:
    """Ideal readouts plus seeded Gaussian noise; the head is the top segment."""
    n = state.q.size
    q = state.q.copy()
    qd = state.qd.copy()
    head = float(state.phi[-1])
    head_v = float(state.phid[-1])
    torque = float(ankle_torque)
    if noise is not None and rng is not None:
        draw = rng.standard_normal(2 * n + 3)
        q += noise.joint_angle * draw[:n]
        qd += noise.joint_velocity * draw[n:2 * n]
        head += noise.vestibular_angle * draw[2 * n]
        head_v += noise.vestibular_velocity * draw[2 * n + 1]
        torque += noise.torque * draw[2 * n + 2]
    return SensorReadout(q, qd, head, head_v, torque, 0.0, state.t)
