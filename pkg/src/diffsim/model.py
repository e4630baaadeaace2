"""Kinematic trees, parameter bindings and the JSON model format."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ad import value
from .spatial import (
    QUAT_IDENTITY,
    SpatialInertia,
    SpatialTransform,
    quat_from_axis_angle,
    quat_normalize,
)

JOINT_KINDS = ("revolute", "prismatic", "fixed")
DEFAULT_GRAVITY = (0.0, 0.0, -9.81)


class ModelError(ValueError):
    """Invalid model description or parameter assignment."""


class ModelSyntaxError(ModelError):
    def __init__(self, msg, line, column):
        super().__init__(f"{msg} (line {line}, column {column})")
        self.line = line
        self.column = column


class CycleError(ModelError):
    pass


class NonPhysicalError(ModelError):
    pass


@dataclass(frozen=True)
class Joint:
    """Connects body ``parent`` (``-1`` = world) to its child body.

    ``offset`` and ``rotation`` give the pose of the joint frame in the
    parent body frame; the child body frame coincides with the joint frame
    at ``q = 0``.
    """

    kind: str
    axis: tuple = (0.0, 0.0, 1.0)
    parent: int = -1
    offset: tuple = (0.0, 0.0, 0.0)
    rotation: tuple = QUAT_IDENTITY
    limits: tuple | None = None

    @property
    def parent_to_joint(self) -> SpatialTransform:
        return SpatialTransform(self.rotation, self.offset)

    @property
    def dof(self) -> int:
        return 0 if self.kind == "fixed" else 1


@dataclass(frozen=True)
class Body:
    """Rigid body; ``inertia_com`` is the 3x3 rotational inertia about the com."""

    name: str
    mass: object
    com: tuple = (0.0, 0.0, 0.0)
    inertia_com: tuple = (0.0,) * 9

    @property
    def inertia(self) -> SpatialInertia:
        return SpatialInertia.from_com(self.mass, self.com, self.inertia_com)


@dataclass(frozen=True)
class Model:
    bodies: tuple
    joints: tuple
    gravity: tuple = DEFAULT_GRAVITY
    qidx: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        idx, k = [], 0
        for j in self.joints:
            if j.dof:
                idx.append(k)
                k += 1
            else:
                idx.append(-1)
        object.__setattr__(self, "qidx", tuple(idx))

    @property
    def parent(self) -> tuple:
        return tuple(j.parent for j in self.joints)

    @property
    def dof(self) -> int:
        return sum(j.dof for j in self.joints)

    @property
    def n_bodies(self) -> int:
        return len(self.bodies)

    def body_index(self, name: str) -> int:
        for i, b in enumerate(self.bodies):
            if b.name == name:
                return i
        raise KeyError(name)

    def replace_body(self, i, **changes) -> Model:
        bodies = list(self.bodies)
        bodies[i] = dataclasses.replace(bodies[i], **changes)
        return dataclasses.replace(self, bodies=tuple(bodies))

    def replace_joint(self, i, **changes) -> Model:
        joints = list(self.joints)
        joints[i] = dataclasses.replace(joints[i], **changes)
        return dataclasses.replace(self, joints=tuple(joints))


def validate_model(m: Model) -> Model:
    n = len(m.bodies)
    if len(m.joints) != n:
        raise ModelError(f"{n} bodies but {len(m.joints)} joints")
    for i, j in enumerate(m.joints):
        if j.kind not in JOINT_KINDS:
            raise ModelError(f"joint {i}: unknown joint kind {j.kind!r}")
        if not -1 <= j.parent < n:
            raise ModelError(f"joint {i}: dangling parent reference {j.parent}")
        if j.kind != "fixed":
            a = [value(c) for c in j.axis]
            if abs(math.sqrt(sum(c * c for c in a)) - 1.0) > 1e-9:
                raise ModelError(f"joint {i}: axis must be unit length")
    for i in range(n):
        seen = set()
        k = i
        while k != -1:
            if k in seen:
                raise CycleError(f"cycle detected through body {i}")
            seen.add(k)
            k = m.joints[k].parent
    for i, j in enumerate(m.joints):
        if j.parent >= i:
            raise ModelError(f"joint {i}: parent {j.parent} must precede its child")
    for b in m.bodies:
        if not value(b.mass) > 0:
            raise NonPhysicalError(f"body {b.name!r}: non-positive mass {value(b.mass)}")
    return m


# -- JSON format ---------------------------------------------------------------

def _sym_from6(v):
    xx, xy, xz, yy, yz, zz = (float(c) for c in v)
    return (xx, xy, xz, xy, yy, yz, xz, yz, zz)


def _six_from_sym(M):
    return [M[0], M[1], M[2], M[4], M[5], M[8]]


def _vec(obj, key, n, where, default=None):
    if key not in obj:
        if default is None:
            raise ModelError(f"{where}: missing {key!r}")
        return default
    v = obj[key]
    if not isinstance(v, list) or len(v) != n:
        raise ModelError(f"{where}: {key!r} must be a list of {n} numbers")
    return tuple(float(c) for c in v)


def parse_model(text: str) -> Model:
    """Parse and validate a model document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelSyntaxError(e.msg, e.lineno, e.colno) from None
    if not isinstance(doc, dict):
        raise ModelError("top level must be an object")
    gravity = _vec(doc, "gravity", 3, "model", DEFAULT_GRAVITY)
    bodies_doc = doc.get("bodies", [])
    joints_doc = doc.get("joints", [])
    bodies = []
    for i, b in enumerate(bodies_doc):
        where = f"body {i}"
        if "mass" not in b:
            raise ModelError(f"{where}: missing 'mass'")
        bodies.append(Body(
            name=str(b.get("name", f"body{i}")),
            mass=float(b["mass"]),
            com=_vec(b, "com", 3, where, (0.0, 0.0, 0.0)),
            inertia_com=_sym_from6(_vec(b, "inertia", 6, where, (0.0,) * 6)),
        ))
    joints = []
    for i, j in enumerate(joints_doc):
        where = f"joint {i}"
        kind = j.get("kind")
        if kind not in JOINT_KINDS:
            raise ModelError(f"{where}: unknown joint kind {kind!r}")
        parent = j.get("parent", -1)
        if not isinstance(parent, int) or not -1 <= parent < len(bodies_doc):
            raise ModelError(f"{where}: dangling parent reference {parent!r}")
        limits = j.get("limits")
        joints.append(Joint(
            kind=kind,
            axis=_vec(j, "axis", 3, where, (0.0, 0.0, 1.0)),
            parent=parent,
            offset=_vec(j, "offset", 3, where, (0.0, 0.0, 0.0)),
            rotation=_vec(j, "rotation", 4, where, QUAT_IDENTITY),
            limits=tuple(float(c) for c in limits) if limits is not None else None,
        ))
    return validate_model(Model(tuple(bodies), tuple(joints), gravity))


def model_to_dict(m: Model) -> dict:
    out = {"gravity": [value(g) for g in m.gravity], "bodies": [], "joints": []}
    for b in m.bodies:
        out["bodies"].append({
            "name": b.name,
            "mass": value(b.mass),
            "com": [value(c) for c in b.com],
            "inertia": [value(c) for c in _six_from_sym(b.inertia_com)],
        })
    for j in m.joints:
        d = {
            "kind": j.kind,
            "axis": [value(c) for c in j.axis],
            "parent": j.parent,
            "offset": [value(c) for c in j.offset],
        }
        if tuple(j.rotation) != QUAT_IDENTITY:
            d["rotation"] = [value(c) for c in j.rotation]
        if j.limits is not None:
            d["limits"] = list(j.limits)
        out["joints"].append(d)
    return out


def dump_model(m: Model) -> str:
    return json.dumps(model_to_dict(m), indent=2)


def load_model(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


# -- parameter binding -------------------------------------------------------

SELECTOR_KINDS = ("length", "mass", "com", "inertia")


@dataclass(frozen=True)
class Selector:
    """Addresses one scalar model field.

    ``length`` targets a joint (magnitude of its offset, direction kept);
    ``mass``, ``com`` and ``inertia`` target a body.  ``component`` picks
    the coordinate for ``com`` and the diagonal entry for ``inertia``.
    """

    kind: str
    target: int
    component: int = 0


@dataclass(frozen=True)
class ParameterBinding:
    """Maps entries of a parameter vector onto model fields.

    Each entry is ``(selector, index, scale, power)``; the field receives
    ``scale * theta[index] ** power``.  ``scale`` and ``power`` default to 1.
    """

    entries: tuple = ()

    @classmethod
    def of(cls, *entries) -> ParameterBinding:
        norm = []
        for e in entries:
            sel, idx, *rest = e
            if not isinstance(sel, Selector):
                sel = Selector(*sel)
            scale = float(rest[0]) if rest else 1.0
            power = int(rest[1]) if len(rest) > 1 else 1
            if scale == 0.0 or power < 1:
                raise ModelError("binding scale must be non-zero and power a positive integer")
            norm.append((sel, int(idx), scale, power))
        return cls(tuple(norm))

    @property
    def arity(self) -> int:
        return 1 + max((e[1] for e in self.entries), default=-1)

    def validate(self, m: Model) -> None:
        used = set()
        seen = set()
        for sel, idx, *_ in self.entries:
            if sel.kind not in SELECTOR_KINDS:
                raise ModelError(f"unknown selector kind {sel.kind!r}")
            limit = len(m.joints) if sel.kind == "length" else len(m.bodies)
            if not 0 <= sel.target < limit:
                raise ModelError(f"selector {sel} references a missing {('joint' if sel.kind == 'length' else 'body')}")
            if sel.kind in ("com", "inertia") and not 0 <= sel.component < 3:
                raise ModelError(f"selector {sel}: component must be 0..2")
            if sel.kind == "length":
                off = np.array([value(c) for c in m.joints[sel.target].offset])
                if np.linalg.norm(off) == 0.0:
                    raise ModelError(f"joint {sel.target}: length needs a non-zero offset direction")
            key = (sel.kind, sel.target, sel.component if sel.kind in ("com", "inertia") else 0)
            if key in seen:
                raise ModelError(f"field {key} bound twice")
            seen.add(key)
            used.add(idx)
        missing = set(range(self.arity)) - used
        if missing:
            raise ModelError(f"parameters {sorted(missing)} are not bound to any field")

    def read(self, m: Model) -> np.ndarray:
        """Current parameter values stored in ``m``."""
        theta = np.zeros(self.arity)
        for sel, idx, scale, power in reversed(self.entries):
            v = _read_field(m, sel) / scale
            theta[idx] = v if power == 1 else math.copysign(abs(v) ** (1.0 / power), v)
        return theta

    def names(self, m: Model) -> list[str]:
        out = [""] * self.arity
        for sel, idx, *_ in self.entries:
            if not out[idx]:
                if sel.kind == "length":
                    out[idx] = f"length[{sel.target}]"
                elif sel.kind == "mass":
                    out[idx] = f"mass[{m.bodies[sel.target].name}]"
                else:
                    out[idx] = f"{sel.kind}[{m.bodies[sel.target].name}].{'xyz'[sel.component]}"
        return out


def _read_field(m: Model, sel: Selector) -> float:
    if sel.kind == "length":
        return float(np.linalg.norm([value(c) for c in m.joints[sel.target].offset]))
    b = m.bodies[sel.target]
    if sel.kind == "mass":
        return value(b.mass)
    if sel.kind == "com":
        return value(b.com[sel.component])
    return value(b.inertia_com[4 * sel.component])


def apply_parameters(m: Model, binding: ParameterBinding, theta: Sequence) -> Model:
    """Copy of ``m`` with bound fields overwritten by ``theta``.

    ``theta`` may hold any scalar type of the tower; the returned model then
    carries those scalars in its fields.
    """
    if len(theta) != binding.arity:
        raise ModelError(f"expected {binding.arity} parameters, got {len(theta)}")
    if not binding.entries:
        return m
    bodies = [dict(mass=b.mass, com=list(b.com), inertia_com=list(b.inertia_com)) for b in m.bodies]
    offsets = [None] * len(m.joints)
    for sel, idx, scale, power in binding.entries:
        v = theta[idx]
        for _ in range(power - 1):
            v = v * theta[idx]
        if scale != 1.0:
            v = scale * v
        if sel.kind == "length":
            off = np.array([value(c) for c in m.joints[sel.target].offset])
            u = off / np.linalg.norm(off)
            offsets[sel.target] = tuple(v * float(c) for c in u)
        elif sel.kind == "mass":
            if not value(v) > 0:
                raise NonPhysicalError(f"body {m.bodies[sel.target].name!r}: non-positive mass {value(v)}")
            bodies[sel.target]["mass"] = v
        elif sel.kind == "com":
            bodies[sel.target]["com"][sel.component] = v
        else:
            bodies[sel.target]["inertia_com"][4 * sel.component] = v
    new_bodies = tuple(
        dataclasses.replace(b, mass=d["mass"], com=tuple(d["com"]), inertia_com=tuple(d["inertia_com"]))
        for b, d in zip(m.bodies, bodies))
    new_joints = tuple(
        j if off is None else dataclasses.replace(j, offset=off)
        for j, off in zip(m.joints, offsets))
    return dataclasses.replace(m, bodies=new_bodies, joints=new_joints)


# -- Denavit-Hartenberg chains ---------------------------------------------

@dataclass(frozen=True)
class DHParams:
    """Standard DH design scalars per joint; joint angles stay runtime coordinates."""

    d: tuple
    a: tuple
    alpha: tuple

    def __post_init__(self):
        if not len(self.d) == len(self.a) == len(self.alpha):
            raise ValueError("d, a and alpha must have equal length")

    @property
    def n(self) -> int:
        return len(self.d)

    def flat(self) -> np.ndarray:
        """Design vector laid out as (d_i, a_i, alpha_i) per joint."""
        return np.array([[value(self.d[i]), value(self.a[i]), value(self.alpha[i])]
                         for i in range(self.n)]).ravel()

    @classmethod
    def from_flat(cls, x) -> DHParams:
        n = len(x) // 3
        return cls(tuple(x[3 * i] for i in range(n)),
                   tuple(x[3 * i + 1] for i in range(n)),
                   tuple(x[3 * i + 2] for i in range(n)))


Z_AXIS = (0.0, 0.0, 1.0)
X_AXIS = (1.0, 0.0, 0.0)


def model_from_dh(dh: DHParams, gravity=DEFAULT_GRAVITY) -> Model:
    """Serial revolute chain with standard DH geometry.

    Body ``i`` is frame ``i-1`` turned by ``q_i`` about its z axis.  The
    fixed part ``Tz(d_i) Tx(a_i) Rx(alpha_i)`` of link ``i`` becomes the
    offset of the next joint; a final fixed body marks the end effector.
    """
    if dh.n < 1:
        raise ValueError("need at least one joint")
    bodies, joints = [], []
    for i in range(dh.n + 1):
        if i == 0:
            offset, rot = (0.0, 0.0, 0.0), QUAT_IDENTITY
        else:
            offset = (dh.a[i - 1], 0.0, dh.d[i - 1])
            rot = quat_normalize(quat_from_axis_angle(X_AXIS, dh.alpha[i - 1]))
        kind = "revolute" if i < dh.n else "fixed"
        joints.append(Joint(kind=kind, axis=Z_AXIS, parent=i - 1, offset=offset, rotation=rot))
        name = f"link{i + 1}" if i < dh.n else "end_effector"
        bodies.append(Body(name=name, mass=1.0))
    return Model(tuple(bodies), tuple(joints), tuple(gravity))


def dh_matrix(d, theta, a, alpha) -> np.ndarray:
    """Standard 4x4 DH homogeneous transform (float)."""
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array([[ct, -st * ca, st * sa, a * ct],
                     [st, ct * ca, -ct * sa, a * st],
                     [0.0, sa, ca, d],
                     [0.0, 0.0, 0.0, 1.0]])


# -- stock systems -----------------------------------------------------------

Y_AXIS = (0.0, 1.0, 0.0)


def rod_inertia(mass, length):
    """Thin rod along z, inertia about its centre."""
    i = mass * length * length / 12.0
    return (i, 0.0, 0.0, 0.0, i, 0.0, 0.0, 0.0, 0.0)


def capsule_inertia(mass, length, radius):
    """Solid capsule along z (cylinder plus hemispherical caps), inertia about its centre.

    ``length`` is the overall length, caps included.
    """
    if not 0 < 2 * radius <= length:
        raise ValueError("capsule needs 0 < 2 radius <= length")
    h = length - 2.0 * radius
    v_cyl = math.pi * radius * radius * h
    v_cap = 2.0 / 3.0 * math.pi * radius ** 3
    m_cyl = mass * v_cyl / (v_cyl + 2.0 * v_cap)
    m_cap = 0.5 * (mass - m_cyl)
    r2 = radius * radius
    izz = 0.5 * m_cyl * r2 + 2.0 * (0.4 * m_cap * r2)
    d = 0.5 * h + 3.0 * radius / 8.0
    ixx = m_cyl * (r2 / 4.0 + h * h / 12.0) + 2.0 * m_cap * (83.0 / 320.0 * r2 + d * d)
    return (ixx, 0.0, 0.0, 0.0, ixx, 0.0, 0.0, 0.0, izz)


def pendulum_chain(n: int, lengths=None, masses=None, gravity=DEFAULT_GRAVITY) -> Model:
    """Planar compound pendulum of uniform rods hanging along -z at q = 0.

    All joints rotate about y; each rod's com sits at its midpoint.
    """
    lengths = [1.0] * n if lengths is None else list(lengths)
    masses = [1.0] * n if masses is None else list(masses)
    bodies, joints = [], []
    for k in range(n):
        offset = (0.0, 0.0, 0.0) if k == 0 else (0.0, 0.0, -lengths[k - 1])
        joints.append(Joint("revolute", Y_AXIS, k - 1, offset))
        bodies.append(Body(f"link{k + 1}", masses[k], (0.0, 0.0, -0.5 * lengths[k]),
                           rod_inertia(masses[k], lengths[k])))
    return Model(tuple(bodies), tuple(joints), tuple(gravity))


def pendulum_length_binding(n: int, masses=None) -> ParameterBinding:
    """theta_k = length of rod k.

    Moves the next joint, the rod's com and rescales its inertia, so the
    model at ``theta`` equals ``pendulum_chain(n, theta, masses)``.
    """
    masses = [1.0] * n if masses is None else list(masses)
    entries = []
    for k in range(n):
        if k + 1 < n:
            entries.append((Selector("length", k + 1), k))
        entries.append((Selector("com", k, 2), k, -0.5))
        entries.append((Selector("inertia", k, 0), k, masses[k] / 12.0, 2))
        entries.append((Selector("inertia", k, 1), k, masses[k] / 12.0, 2))
    return ParameterBinding.of(*entries)


def _pole_inertia(kind, mass, length, radius):
    if kind == "rod":
        return rod_inertia(mass, length)
    if kind == "capsule":
        return capsule_inertia(mass, length, radius)
    return (0.0,) * 9


def cartpole(n_poles: int, cart_mass=1.0, pole_masses=None, pole_lengths=None,
             com_fraction=0.5, pivot_height=0.1, gravity=DEFAULT_GRAVITY,
             inertia: str = "rod", capsule_radius: float = 0.02) -> Model:
    """Cart on a rail along x carrying a chain of poles.

    Poles rotate about y and point along +z at q = 0 (upright).  Each pole's
    com sits at ``com_fraction`` of its length.  ``inertia`` selects the
    rotational inertia of the poles about their com: ``"rod"`` (thin rod),
    ``"capsule"`` (solid capsule of ``capsule_radius``) or ``"point"`` (none).
    """
    if inertia not in ("rod", "capsule", "point"):
        raise ValueError(f"unknown pole inertia {inertia!r}")
    pole_masses = [0.5] * n_poles if pole_masses is None else list(pole_masses)
    pole_lengths = [0.5] * n_poles if pole_lengths is None else list(pole_lengths)
    bodies = [Body("cart", cart_mass, (0.0, 0.0, 0.0), (0.01, 0, 0, 0, 0.01, 0, 0, 0, 0.01))]
    joints = [Joint("prismatic", X_AXIS, -1, (0.0, 0.0, 0.0))]
    for k in range(n_poles):
        offset = (0.0, 0.0, pivot_height) if k == 0 else (0.0, 0.0, pole_lengths[k - 1])
        joints.append(Joint("revolute", Y_AXIS, k, offset))
        bodies.append(Body(f"pole{k + 1}", pole_masses[k],
                           (0.0, 0.0, com_fraction * pole_lengths[k]),
                           _pole_inertia(inertia, pole_masses[k], pole_lengths[k], capsule_radius)))
    return Model(tuple(bodies), tuple(joints), tuple(gravity))


def cartpole_binding(n_poles: int, mass_unit: float = 1.0, length_unit: float = 1.0) -> ParameterBinding:
    """Masses, link lengths (joint offsets) and 3-D com of every body.

    Double cartpole: 3 masses + 2 lengths + 9 com coordinates = 14.  Entries
    are expressed in multiples of ``mass_unit`` and ``length_unit``.
    """
    entries = []
    k = 0
    for b in range(n_poles + 1):
        entries.append((Selector("mass", b), k, mass_unit))
        k += 1
    for j in range(1, n_poles + 1):
        entries.append((Selector("length", j), k, length_unit))
        k += 1
    for b in range(n_poles + 1):
        for c in range(3):
            entries.append((Selector("com", b, c), k, length_unit))
            k += 1
    return ParameterBinding.of(*entries)
