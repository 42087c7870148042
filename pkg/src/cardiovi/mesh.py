"""Anatomical heart mesh: synthetic generation, text I/O and conduction graphs.

A mesh is a set of 3D vertices (mm) joined by undirected edges. Every vertex
carries a wall-layer label and every edge an anisotropy class that selects
which conduction velocity applies when activation crosses it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DisconnectionError, MeshParseError, ParameterError, ValidationError

LAYERS = ("endo", "myo", "epi")
AXES = ("fiber", "sheet", "normal")
HEADER = "cardiomesh 1"


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HeartMesh:
    """Vertices in mm, undirected edges, per-vertex layer, per-edge axis class.

    ``layer`` holds indices into :data:`LAYERS`, ``axis`` indices into
    :data:`AXES`. Construction validates every invariant and fails fast.
    """

    vertices: np.ndarray
    edges: np.ndarray
    layer: np.ndarray
    axis: np.ndarray
    edge_length: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, float).reshape(-1, 3))
        object.__setattr__(self, "edges", _frozen(self.edges, np.int64).reshape(-1, 2))
        object.__setattr__(self, "layer", _frozen(self.layer, np.int8))
        object.__setattr__(self, "axis", _frozen(self.axis, np.int8))
        self._validate()
        d = self.vertices[self.edges[:, 0]] - self.vertices[self.edges[:, 1]]
        object.__setattr__(self, "edge_length", _frozen(np.sqrt((d * d).sum(axis=1)), float))
        if not np.all(self.edge_length > 0):
            bad = int(np.argmin(self.edge_length))
            raise ValidationError(f"edge {bad} {tuple(self.edges[bad])} has zero length")

    def _validate(self):
        n = len(self.vertices)
        if n == 0:
            raise ValidationError("mesh has no vertices")
        if len(self.layer) != n:
            raise ValidationError("layer labels must match vertex count")
        if len(self.axis) != len(self.edges):
            raise ValidationError("axis labels must match edge count")
        if not np.all(np.isfinite(self.vertices)):
            raise ValidationError("vertex coordinates must be finite")
        if self.layer.size and (self.layer.min() < 0 or self.layer.max() >= len(LAYERS)):
            raise ValidationError("unknown layer code")
        if self.axis.size and (self.axis.min() < 0 or self.axis.max() >= len(AXES)):
            raise ValidationError("unknown axis code")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= n):
            raise ValidationError("edge index out of range")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise ValidationError("self-loop edge")
        if not np.any(self.layer == 0):
            raise ValidationError("endocardium is empty")
        sizes = component_sizes(n, self.edges)
        if len(sizes) > 1:
            raise DisconnectionError(sizes)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def endocardial(self):
        """Sorted indices of endocardial vertices."""
        return np.flatnonzero(self.layer == 0)

    def layer_names(self):
        return [LAYERS[i] for i in self.layer]

    def axis_names(self):
        return [AXES[i] for i in self.axis]

    def same_as(self, other):
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.layer, other.layer)
            and np.array_equal(self.axis, other.axis)
        )


def component_sizes(n, edges):
    edges = np.asarray(edges).reshape(-1, 2)
    adj = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    ncomp, labels = connected_components(adj, directed=False)
    return np.bincount(labels, minlength=ncomp).tolist()


def generate_ellipsoid_shell(
    n_theta,
    n_phi,
    inner_radii=(20.0, 20.0, 40.0),
    wall_thickness=6.0,
    n_layers=2,
    seed=0,
    theta_max=0.5 * np.pi,
    jitter=0.05,
):
    """Build a truncated (open-top) ellipsoidal shell of stacked layers.

    Rings of constant polar angle run from near the apex (``z = -c``) up to
    ``theta_max``; each ring holds ``n_phi`` vertices. Layer ``j`` sits on the
    ellipsoid with every semi-axis grown by ``j * wall_thickness / (n_layers - 1)``.
    Circumferential edges are ``fiber``, apex-to-base edges ``sheet`` and
    transmural edges ``normal``. ``jitter`` perturbs each vertex's azimuth by
    up to that fraction of the azimuthal step (seeded), staying on the surface.
    Coordinates are rounded to 6 decimals so the mesh survives text round-trips.
    """
    if n_theta < 4 or n_phi < 4 or n_layers < 2:
        raise ParameterError("need n_theta >= 4, n_phi >= 4, n_layers >= 2")
    radii = np.asarray(inner_radii, dtype=float)
    if radii.shape != (3,) or np.any(radii <= 0) or wall_thickness <= 0:
        raise ParameterError("radii and wall thickness must be positive")
    if not 0 < theta_max <= np.pi or not 0 <= jitter < 0.5:
        raise ParameterError("theta_max must lie in (0, pi] and jitter in [0, 0.5)")

    rng = np.random.default_rng(seed)
    theta = theta_max * (np.arange(n_theta) + 0.5) / n_theta
    dphi = 2 * np.pi / n_phi
    phi = dphi * np.arange(n_phi)[None, :] + jitter * dphi * rng.uniform(-1, 1, (n_theta, n_phi))

    verts = []
    for j in range(n_layers):
        a, b, c = radii + j * wall_thickness / (n_layers - 1)
        st = np.sin(theta)[:, None]
        x = a * st * np.cos(phi)
        y = b * st * np.sin(phi)
        z = np.broadcast_to(-c * np.cos(theta)[:, None], phi.shape)
        verts.append(np.stack([x, y, z], axis=-1).reshape(-1, 3))
    vertices = np.round(np.concatenate(verts), 6)

    def vid(j, i, k):
        return (j * n_theta + i) * n_phi + k % n_phi

    edges, axis = [], []
    for j in range(n_layers):
        for i in range(n_theta):
            for k in range(n_phi):
                edges.append((vid(j, i, k), vid(j, i, k + 1)))
                axis.append(0)
                if i + 1 < n_theta:
                    edges.append((vid(j, i, k), vid(j, i + 1, k)))
                    axis.append(1)
                if j + 1 < n_layers:
                    edges.append((vid(j, i, k), vid(j + 1, i, k)))
                    axis.append(2)

    layer = np.ones(len(vertices), dtype=np.int8)
    per_layer = n_theta * n_phi
    layer[:per_layer] = 0
    layer[-per_layer:] = 2
    return HeartMesh(vertices, edges, layer, axis)


def serialize_mesh(mesh):
    """Render ``mesh`` in the ``cardiomesh 1`` text format."""
    lines = [HEADER]
    for (x, y, z), lab in zip(mesh.vertices, mesh.layer):
        lines.append(f"v {x:.6f} {y:.6f} {z:.6f} {LAYERS[lab]}")
    for (i, j), ax in zip(mesh.edges, mesh.axis):
        lines.append(f"e {i} {j} {AXES[ax]}")
    return "\n".join(lines) + "\n"


def load_mesh(text):
    """Parse ``cardiomesh 1`` text into a validated :class:`HeartMesh`.

    Parse problems raise :class:`MeshParseError` carrying the 1-based line
    number; a disconnected graph raises :class:`DisconnectionError`.
    """
    verts, layer, edges, axis = [], [], [], []
    seen_header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not seen_header:
            if " ".join(line.split()) != HEADER:
                raise MeshParseError(f"expected header {HEADER!r}", lineno)
            seen_header = True
            continue
        tok = line.split()
        if tok[0] == "v":
            if edges:
                raise MeshParseError("vertex record after edge records", lineno)
            if len(tok) != 5:
                raise MeshParseError("vertex record needs 'v x y z layer'", lineno)
            try:
                xyz = [float(t) for t in tok[1:4]]
            except ValueError:
                raise MeshParseError("bad vertex coordinate", lineno) from None
            if tok[4] not in LAYERS:
                raise MeshParseError(f"unknown layer label {tok[4]!r}", lineno)
            verts.append(xyz)
            layer.append(LAYERS.index(tok[4]))
        elif tok[0] == "e":
            if len(tok) != 4:
                raise MeshParseError("edge record needs 'e i j axis'", lineno)
            try:
                i, j = int(tok[1]), int(tok[2])
            except ValueError:
                raise MeshParseError("bad edge index", lineno) from None
            for idx in (i, j):
                if not 0 <= idx < len(verts):
                    raise MeshParseError(f"edge index {idx} out of range (0..{len(verts) - 1})", lineno)
            if i == j:
                raise MeshParseError("self-loop edge", lineno)
            if tok[3] not in AXES:
                raise MeshParseError(f"unknown axis label {tok[3]!r}", lineno)
            edges.append((i, j))
            axis.append(AXES.index(tok[3]))
        else:
            raise MeshParseError(f"unknown record type {tok[0]!r}", lineno)
    if not seen_header:
        raise MeshParseError("missing header", None)
    return HeartMesh(np.asarray(verts, float).reshape(-1, 3), np.asarray(edges, np.int64).reshape(-1, 2), layer, axis)


@dataclass(frozen=True)
class Conductivities:
    """Conduction velocities in mm/ms.

    ``endo`` is the fast endocardial pair ``(along fiber-class edges, along
    other edges)``; a scalar is broadcast to both. ``aniso`` is the ordered
    ``(v_fiber, v_sheet, v_normal)`` triple for the rest of the wall.
    """

    endo: tuple
    aniso: tuple

    def __post_init__(self):
        endo = np.broadcast_to(np.asarray(self.endo, float), (2,))
        aniso = np.asarray(self.aniso, float)
        if aniso.shape != (3,):
            raise ParameterError("aniso must be a (fiber, sheet, normal) triple")
        if not (np.all(endo > 0) and np.all(aniso > 0) and np.all(np.isfinite(endo))):
            raise ParameterError("velocities must be strictly positive")
        if not aniso[0] >= aniso[1] >= aniso[2]:
            raise ParameterError(f"aniso velocities must be ordered fiber >= sheet >= normal, got {aniso}")
        if np.min(endo) < aniso[0]:
            raise ParameterError("endocardial velocity must be >= fiber velocity")
        object.__setattr__(self, "endo", tuple(endo.tolist()))
        object.__setattr__(self, "aniso", tuple(aniso.tolist()))

    def scaled(self, s):
        return Conductivities(tuple(s * v for v in self.endo), tuple(s * v for v in self.aniso))


@dataclass(frozen=True, eq=False)
class ConductionGraph:
    n_vertices: int
    edges: np.ndarray
    times: np.ndarray

    def to_csr(self):
        """Symmetric sparse matrix of traversal times.

        Parallel edges collapse to the fastest one; a plain COO build would
        add their times together instead.
        """
        n = self.n_vertices
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        times = np.concatenate([self.times, self.times])
        keys = rows.astype(np.int64) * n + cols
        order = np.lexsort((times, keys))
        keys, times = keys[order], times[order]
        first = np.r_[True, keys[1:] != keys[:-1]]
        keys, times = keys[first], times[first]
        return csr_matrix((times, (keys // n, keys % n)), shape=(n, n))


def edge_velocities(mesh, c):
    both_endo = (mesh.layer[mesh.edges[:, 0]] == 0) & (mesh.layer[mesh.edges[:, 1]] == 0)
    v = np.asarray(c.aniso)[mesh.axis]
    v_endo = np.where(mesh.axis == 1, c.endo[1], c.endo[0])
    return np.where(both_endo, v_endo, v)


def build_conduction_graph(mesh, c):
    """Weight each edge by traversal time = length / velocity (ms).

    Edges with both ends on the endocardium use the endocardial velocity
    (second component on sheet-class edges); all others use the anisotropic
    velocity picked by the edge's axis class.
    """
    times = mesh.edge_length / edge_velocities(mesh, c)
    times.setflags(write=False)
    return ConductionGraph(mesh.n_vertices, mesh.edges, times)


def generate_cylinder_strip(n_around, n_along, radius=20.0, angle=0.9 * np.pi, height=60.0, seed=0, jitter=0.3):
    """Single-layer strip of a cylinder wall, all vertices endocardial.

    The surface is intrinsically flat, so geodesic distances are known in
    closed form (see :func:`cylinder_geodesics`); handy for checking the
    embedding. ``jitter`` moves vertices within the surface by up to that
    fraction of the grid step (seeded).
    """
    if n_around < 2 or n_along < 2 or radius <= 0 or height <= 0 or not 0 < angle < 2 * np.pi:
        raise ParameterError("invalid cylinder strip dimensions")
    rng = np.random.default_rng(seed)
    da, dz = angle / (n_around - 1), height / (n_along - 1)
    phi = da * np.arange(n_around)[None, :] + jitter * da * rng.uniform(-1, 1, (n_along, n_around))
    z = dz * np.arange(n_along)[:, None] + jitter * dz * rng.uniform(-1, 1, (n_along, n_around))
    vertices = np.round(np.stack([radius * np.cos(phi), radius * np.sin(phi), z], -1).reshape(-1, 3), 6)
    edges, axis = [], []
    for i in range(n_along):
        for k in range(n_around):
            v = i * n_around + k
            if k + 1 < n_around:
                edges.append((v, v + 1))
                axis.append(0)
            if i + 1 < n_along:
                edges.append((v, v + n_around))
                axis.append(1)
    return HeartMesh(vertices, edges, np.zeros(len(vertices), np.int8), axis)


def cylinder_geodesics(vertices, radius):
    """Exact geodesic distances between points on a cylinder strip (angle < pi)."""
    v = np.asarray(vertices, float)
    phi = np.arctan2(v[:, 1], v[:, 0])
    arc = radius * np.abs(phi[:, None] - phi[None, :])
    dz = v[:, 2][:, None] - v[:, 2][None, :]
    return np.sqrt(arc**2 + dz**2)
