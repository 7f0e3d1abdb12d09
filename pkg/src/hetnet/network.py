"""Heteroclinic-network specifications: saddles, charts, connections, built-in systems.

A network is a set of hyperbolic critical points (saddles) with real simple
eigenvalues, each carrying an affine eigen-chart, plus a binary branching
structure: every saddle has exactly two outgoing connections (signs + and -)
that either lead to another saddle or terminate at an exit leaf on a domain
boundary.  Networks come in two modes:

* ``concrete`` -- a vector field and diffusion matrix are attached, so the
  network can be simulated and connection geometry (travel times, entry
  points, fundamental matrices) can be computed by the flow module;
* ``abstract`` -- predictor-only: connections carry a chart-to-chart
  transport matrix instead of integrated geometry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "SaddleSpec",
    "ConnectionSpec",
    "VectorField",
    "NetworkSpec",
    "ValidationReport",
    "Violation",
    "validate_network",
    "chart_to_local",
    "chart_from_local",
    "builtin_system",
    "load_network",
    "save_network",
    "ChartDomainError",
]

PLUS, MINUS = 1, -1

_SIGN_STR = {1: "+", -1: "-"}
_STR_SIGN = {"+": 1, "-": -1}


class ChartDomainError(ValueError):
    """Point lies outside the chart domain of a saddle."""


@dataclass
class SaddleSpec:
    """One hyperbolic critical point with its affine eigen-chart.

    ``eigenvalues`` are sorted strictly decreasing; ``nu`` is the 1-based
    index of the first negative one (2 <= nu <= d).  ``eigenvectors`` holds
    unit column vectors, column k paired with eigenvalue k.  The chart is
    y = V^{-1} (x - z); its domain is the cube max_k |y^k| <= chart_extent.
    """

    id: int
    position: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    nu: int
    radius: float
    chart_extent: Optional[float] = None  # default: 3 * radius

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        self.eigenvectors = np.asarray(self.eigenvectors, dtype=float)
        if self.chart_extent is None:
            self.chart_extent = 3.0 * self.radius
        self._vinv = None

    @property
    def d(self) -> int:
        return self.position.shape[0]

    @property
    def vinv(self) -> np.ndarray:
        if self._vinv is None:
            self._vinv = np.linalg.inv(self.eigenvectors)
        return self._vinv

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])


@dataclass
class ConnectionSpec:
    """Outgoing branch of a saddle: either to another saddle or to an exit leaf.

    ``entrance_nu_coord`` is the nu-coordinate, in the target saddle's chart,
    of the point where the connecting orbit enters the target box; it must be
    nonzero.  Concrete-mode geometry (``travel_time``, ``entry_point``,
    ``fundamental_matrix``, ``entry_gauss_cov``, ``orbit``) is populated by
    ``flow.populate_network``.  Abstract connections instead carry
    ``transport``, the linear map taking exit fluctuations in the source
    chart to entrance fluctuations in the target chart.
    """

    source: int
    sign: int
    target: Optional[int] = None
    exit_point: Optional[np.ndarray] = None
    leaf_name: Optional[str] = None
    entrance_nu_coord: Optional[float] = None
    transport: Optional[np.ndarray] = None
    # populated by flow.populate_network in concrete mode:
    travel_time: Optional[float] = None
    entry_point: Optional[np.ndarray] = None
    fundamental_matrix: Optional[np.ndarray] = None
    entry_gauss_cov: Optional[np.ndarray] = None
    orbit: Optional[np.ndarray] = None  # polyline samples q^± -> entry point

    def __post_init__(self):
        if self.exit_point is not None:
            self.exit_point = np.asarray(self.exit_point, dtype=float)
        if self.transport is not None:
            self.transport = np.asarray(self.transport, dtype=float)

    @property
    def is_leaf(self) -> bool:
        return self.target is None

    @property
    def key(self) -> str:
        return f"{self.source}{_SIGN_STR[self.sign]}"


@dataclass
class VectorField:
    """Drift b, Jacobian Db and diffusion matrix sigma of a concrete system.

    ``b`` accepts arrays shaped (..., d) and returns the same shape; ``jac``
    returns (..., d, d).  ``sigma`` is a constant d x d matrix here; spatially
    varying diffusions enter through ``sigma_fn`` (then ``sigma`` is ignored
    for simulation but kept as a typical scale).
    """

    name: str
    b: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    sigma: np.ndarray
    sigma_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)

    def sigma_at(self, x: np.ndarray) -> np.ndarray:
        if self.sigma_fn is not None:
            return self.sigma_fn(x)
        return self.sigma


@dataclass
class NetworkSpec:
    mode: str  # "abstract" | "concrete"
    saddles: list
    connections: list
    fld: Optional[VectorField] = None
    builtin: Optional[str] = None
    params: dict = field(default_factory=dict)
    root_nu_coord: Optional[float] = None  # abstract mode: nu-coord of theta_0's entry

    def __post_init__(self):
        self._conn_index = {(c.source, c.sign): c for c in self.connections}
        self._saddle_index = {s.id: s for s in self.saddles}

    @property
    def d(self) -> int:
        return self.saddles[0].d

    def saddle(self, i: int) -> SaddleSpec:
        return self._saddle_index[i]

    def connection(self, i: int, sign: int) -> ConnectionSpec:
        return self._conn_index[(i, sign)]

    def out_connections(self, i: int):
        return [self._conn_index[(i, PLUS)], self._conn_index[(i, MINUS)]]

    @property
    def min_radius(self) -> float:
        return min(s.radius for s in self.saddles)

    @property
    def lambda_max(self) -> float:
        return max(float(np.max(np.abs(s.eigenvalues))) for s in self.saddles)

    @property
    def is_concrete(self) -> bool:
        return self.mode == "concrete"


# ---------------------------------------------------------------------------
# charts


def chart_to_local(saddle: SaddleSpec, x: np.ndarray, check_domain: bool = True) -> np.ndarray:
    """Affine eigen-chart y = V^{-1}(x - z); coordinate k is the component
    of the displacement along eigenvector v_k."""
    y = saddle.vinv @ (np.asarray(x, dtype=float) - saddle.position)
    if check_domain and np.max(np.abs(y)) > saddle.chart_extent + 1e-12:
        raise ChartDomainError(
            f"point at local radius {np.max(np.abs(y)):.3g} exceeds chart extent "
            f"{saddle.chart_extent:.3g} of saddle {saddle.id}"
        )
    return y


def chart_from_local(saddle: SaddleSpec, y: np.ndarray) -> np.ndarray:
    return saddle.position + saddle.eigenvectors @ np.asarray(y, dtype=float)


# ---------------------------------------------------------------------------
# validation


@dataclass
class Violation:
    kind: str
    subject: str
    message: str

    def __str__(self):
        return f"[{self.kind}] {self.subject}: {self.message}"


@dataclass
class ValidationReport:
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "network valid"
        return "\n".join(str(v) for v in self.violations)


def validate_network(spec: NetworkSpec) -> ValidationReport:
    """Check every structural invariant; violations are report entries, never raises."""
    out = []

    def bad(kind, subject, message):
        out.append(Violation(kind, subject, message))

    for s in spec.saddles:
        sid = f"saddle {s.id}"
        lam = s.eigenvalues
        if np.any(np.diff(lam) >= 0):
            bad("eigenvalues", sid, "eigenvalues not strictly decreasing")
        if np.any(lam == 0.0):
            bad("eigenvalues", sid, "zero eigenvalue (not hyperbolic)")
        if not (2 <= s.nu <= s.d):
            bad("nu", sid, f"nu={s.nu} outside 2..d")
        else:
            if not (lam[s.nu - 2] > 0 > lam[s.nu - 1]):
                bad("nu", sid, "nu does not mark the first negative eigenvalue")
        norms = np.linalg.norm(s.eigenvectors, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            bad("eigenvectors", sid, "eigenvector columns not unit norm")
        if abs(np.linalg.det(s.eigenvectors)) < 1e-12:
            bad("eigenvectors", sid, "eigenvector matrix singular")
        if not s.radius > 0:
            bad("radius", sid, "radius must be positive")

    # box disjointness (concrete mode; conservative bound on box circumradius)
    if spec.is_concrete:
        for i, a in enumerate(spec.saddles):
            for b in spec.saddles[i + 1 :]:
                ra = a.radius * np.linalg.norm(a.eigenvectors, 2) * math.sqrt(a.d)
                rb = b.radius * np.linalg.norm(b.eigenvectors, 2) * math.sqrt(b.d)
                if np.linalg.norm(a.position - b.position) <= ra + rb:
                    bad(
                        "boxes",
                        f"saddles {a.id},{b.id}",
                        "box neighborhoods may overlap (reduce radii)",
                    )

    seen = {}
    for c in spec.connections:
        cid = f"connection {c.key}"
        if c.source not in spec._saddle_index:
            bad("topology", cid, "source saddle does not exist")
            continue
        if (c.source, c.sign) in seen:
            bad("topology", cid, "duplicate (source, sign) connection")
        seen[(c.source, c.sign)] = c
        if c.is_leaf:
            if c.exit_point is None:
                bad("leaf", cid, "exit leaf without exit point")
            continue
        if c.target not in spec._saddle_index:
            bad("topology", cid, f"target saddle {c.target} does not exist")
            continue
        if c.entrance_nu_coord is not None and c.entrance_nu_coord == 0.0:
            bad(
                "nondegeneracy",
                cid,
                "entrance nu-coordinate is zero: incoming orbit has no component "
                "along the target's leading stable direction",
            )
        if spec.mode == "abstract" and c.transport is not None:
            tgt = spec.saddle(c.target)
            col = c.transport[:, spec.saddle(c.source).nu - 1]
            if abs(col[0]) < 1e-14:
                bad(
                    "nondegeneracy",
                    cid,
                    "transport maps the source nu-direction to zero first "
                    "coordinate at the target",
                )
        if spec.is_concrete and c.entry_point is not None:
            tgt = spec.saddle(c.target)
            y = chart_to_local(tgt, c.entry_point, check_domain=False)
            if abs(np.max(np.abs(y)) - tgt.radius) > 1e-6 * max(1.0, tgt.radius):
                bad("geometry", cid, "entry point not on the target box boundary")

    for s in spec.saddles:
        signs = sorted(c.sign for c in spec.connections if c.source == s.id)
        if signs != [MINUS, PLUS]:
            bad(
                "topology",
                f"saddle {s.id}",
                "saddle must have exactly two outgoing connections (+ and -)",
            )

    if spec.is_concrete and spec.fld is None:
        bad("mode", "network", "concrete network without a vector field")

    return ValidationReport(out)


# ---------------------------------------------------------------------------
# built-in systems


def _krupa_field(a: tuple, sigma_scale: float = 1.0) -> VectorField:
    a1, a2, a3 = a
    coef = np.array(
        [[a1, a2, a3], [a3, a1, a2], [a2, a3, a1]], dtype=float
    )  # row k: coefficients of (x1^2, x2^2, x3^2) in dx_k / x_k

    def b(x):
        x = np.asarray(x, dtype=float)
        sq = x * x
        return x * (1.0 + sq @ coef.T)

    def jac(x):
        x = np.asarray(x, dtype=float)
        sq = x * x
        diag = 1.0 + sq @ coef.T + 2.0 * coef.diagonal() * sq
        J = 2.0 * coef * (x[..., :, None] * x[..., None, :])
        for k in range(3):
            J[..., k, k] = diag[..., k]
        return J

    return VectorField(
        name="krupa-cubic",
        b=b,
        jac=jac,
        sigma=sigma_scale * np.eye(3),
        params={"a": list(a), "sigma_scale": sigma_scale},
    )


def _krupa_network(a=(-1.0, -2.0, -0.5), radius=None, sigma_scale=1.0) -> NetworkSpec:
    a1, a2, a3 = (float(v) for v in a)
    if a1 >= 0:
        raise ValueError("a1 must be negative")
    if not (a3 > a1 and a2 < a1):
        raise ValueError("saddle conditions require a3 > a1 and a2 < a1")
    s = math.sqrt(-1.0 / a1)
    lam_unstable = (a1 - a3) / a1
    lam_weak = (a1 - a2) / a1  # negative by a2 < a1
    if radius is None:
        radius = 0.1 * s * math.sqrt(2.0)  # 0.1 of inter-saddle distance

    # positions: saddle 2k + (0 if +, 1 if -) is z_{k+1}^{+/-} on axis e_k
    saddles = []
    connections = []
    eye = np.eye(3)
    for axis in range(3):
        unstable_axis = (axis + 1) % 3
        weak_axis = (axis + 2) % 3
        # eigenvalues sorted decreasing: (lam_unstable, lam_weak, -2)
        lam_sorted = np.array([lam_unstable, lam_weak, -2.0])
        order = np.argsort(lam_sorted)[::-1]
        lam_sorted = lam_sorted[order]
        vecs = np.stack([eye[unstable_axis], eye[weak_axis], eye[axis]], axis=1)[:, order]
        nu = 1 + int(np.argmax(lam_sorted < 0))
        for sgn_idx, zsign in enumerate((1.0, -1.0)):
            sid = 2 * axis + sgn_idx
            saddles.append(
                SaddleSpec(
                    id=sid,
                    position=zsign * s * eye[axis],
                    eigenvalues=lam_sorted.copy(),
                    eigenvectors=vecs.copy(),
                    nu=nu,
                    radius=radius,
                )
            )
            # branch sign sg exits along sg * v1 = sg * e_{unstable_axis}
            # and flows to the saddle on that axis with matching sign.
            for sg in (PLUS, MINUS):
                connections.append(
                    ConnectionSpec(
                        source=sid,
                        sign=sg,
                        target=2 * unstable_axis + (0 if sg == PLUS else 1),
                    )
                )

    return NetworkSpec(
        mode="concrete",
        saddles=saddles,
        connections=connections,
        fld=_krupa_field((a1, a2, a3), sigma_scale),
        builtin="krupa-cubic",
        params={"a": [a1, a2, a3], "radius": radius, "sigma_scale": sigma_scale},
    )


def _linear_saddle_network(lambdas=(1.0, -2.0), radius=1.0, sigma_scale=1.0) -> NetworkSpec:
    lam = np.asarray(lambdas, dtype=float)
    if not (lam[0] > 0 > lam[1]):
        raise ValueError("linear-saddle-2d needs lambda1 > 0 > lambda2")
    A = np.diag(lam)

    def b(x):
        return np.asarray(x, dtype=float) @ A.T

    def jac(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(A, x.shape + (2,)).copy()

    fld = VectorField(
        name="linear-saddle-2d",
        b=b,
        jac=jac,
        sigma=sigma_scale * np.eye(2),
        params={"lambdas": list(map(float, lam)), "sigma_scale": sigma_scale},
    )
    saddle = SaddleSpec(
        id=0,
        position=np.zeros(2),
        eigenvalues=lam,
        eigenvectors=np.eye(2),
        nu=2,
        radius=radius,
    )
    connections = [
        ConnectionSpec(
            source=0,
            sign=sg,
            target=None,
            exit_point=np.array([sg * radius, 0.0]),
            leaf_name=f"x1={'+' if sg == PLUS else '-'}{radius:g}",
        )
        for sg in (PLUS, MINUS)
    ]
    return NetworkSpec(
        mode="concrete",
        saddles=[saddle],
        connections=connections,
        fld=fld,
        builtin="linear-saddle-2d",
        params={"lambdas": list(map(float, lam)), "radius": radius, "sigma_scale": sigma_scale},
    )


_CELLULAR_REGIMES = {"contraction": -2.0, "expansion": -0.5, "boundary": -1.0}

# Transport shear: exit fluctuations along the source's stable direction pick
# up a positive component along the target's unstable direction.  Any matrix
# with a nonzero (1, nu) entry satisfies the nondegeneracy condition; the
# sign fixes which branch the locked-in process takes in the expansion regime.
_CELLULAR_TRANSPORT = np.array([[1.0, 1.0], [0.0, 1.0]])


def _cellular_network(regime="contraction", radius=0.25) -> NetworkSpec:
    if regime not in _CELLULAR_REGIMES:
        raise ValueError(f"unknown cellular regime {regime!r}")
    lam2 = _CELLULAR_REGIMES[regime]
    lam = np.array([1.0, lam2])
    saddles = [
        SaddleSpec(
            id=i,
            position=np.array([float(i + 1), 0.0]),
            eigenvalues=lam.copy(),
            eigenvectors=np.eye(2),
            nu=2,
            radius=radius,
        )
        for i in range(3)
    ]
    leaf_pts = {
        "y1": np.array([1.0, 1.0]),
        "y2": np.array([2.0, 1.0]),
        "y3": np.array([3.0, 1.0]),
        "y4": np.array([3.0, -1.0]),
    }
    connections = [
        ConnectionSpec(source=0, sign=MINUS, exit_point=leaf_pts["y1"], leaf_name="y1"),
        ConnectionSpec(
            source=0,
            sign=PLUS,
            target=1,
            entrance_nu_coord=0.5,
            transport=_CELLULAR_TRANSPORT.copy(),
        ),
        ConnectionSpec(source=1, sign=MINUS, exit_point=leaf_pts["y2"], leaf_name="y2"),
        ConnectionSpec(
            source=1,
            sign=PLUS,
            target=2,
            entrance_nu_coord=0.5,
            transport=_CELLULAR_TRANSPORT.copy(),
        ),
        ConnectionSpec(source=2, sign=MINUS, exit_point=leaf_pts["y3"], leaf_name="y3"),
        ConnectionSpec(source=2, sign=PLUS, exit_point=leaf_pts["y4"], leaf_name="y4"),
    ]
    return NetworkSpec(
        mode="abstract",
        saddles=saddles,
        connections=connections,
        builtin="cellular-2d",
        params={"regime": regime, "radius": radius},
        root_nu_coord=1.0,
    )


_BUILTINS = {
    "krupa-cubic": _krupa_network,
    "linear-saddle-2d": _linear_saddle_network,
    "cellular-2d": _cellular_network,
}

PRESETS = {
    "krupa-markov": ("krupa-cubic", {"a": (-1.0, -2.0, -0.5)}),
    "krupa-cycling": ("krupa-cubic", {"a": (-1.0, -1.2, -0.5)}),
    "linear-saddle": ("linear-saddle-2d", {}),
    "cellular-contraction": ("cellular-2d", {"regime": "contraction"}),
    "cellular-expansion": ("cellular-2d", {"regime": "expansion"}),
    "cellular-boundary": ("cellular-2d", {"regime": "boundary"}),
}


def builtin_system(name: str, params: Optional[dict] = None) -> NetworkSpec:
    """Build one of the shipped systems; ``name`` may also be a preset alias."""
    params = dict(params or {})
    if name in PRESETS:
        base, preset_params = PRESETS[name]
        merged = dict(preset_params)
        merged.update(params)
        return _BUILTINS[base](**merged)
    if name not in _BUILTINS:
        raise ValueError(f"unknown builtin system {name!r}")
    return _BUILTINS[name](**params)


# ---------------------------------------------------------------------------
# file format


def _matrix(m):
    return None if m is None else np.asarray(m).tolist()


def save_network(spec: NetworkSpec, path) -> None:
    doc = {
        "mode": spec.mode,
        "builtin": spec.builtin,
        "params": _jsonable(spec.params),
        "saddles": [
            {
                "id": s.id,
                "position": s.position.tolist(),
                "eigenvalues": s.eigenvalues.tolist(),
                "eigenvectors": s.eigenvectors.tolist(),
                "nu": s.nu,
                "radius": s.radius,
            }
            for s in spec.saddles
        ],
        "connections": [
            {
                "from": c.source,
                "sign": _SIGN_STR[c.sign],
                "to": c.target,
                "exit_point": _matrix(c.exit_point),
                "leaf_name": c.leaf_name,
                "entrance_nu_coord": c.entrance_nu_coord,
                "transport": _matrix(c.transport),
            }
            for c in spec.connections
        ],
    }
    if spec.fld is not None:
        doc["field"] = {"kind": spec.fld.name, "params": _jsonable(spec.fld.params)}
    if spec.root_nu_coord is not None:
        doc["root_nu_coord"] = spec.root_nu_coord
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def load_network(path) -> NetworkSpec:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("builtin"):
        return builtin_system(doc["builtin"], doc.get("params") or {})
    saddles = [
        SaddleSpec(
            id=s["id"],
            position=np.array(s["position"], dtype=float),
            eigenvalues=np.array(s["eigenvalues"], dtype=float),
            eigenvectors=np.array(s["eigenvectors"], dtype=float),
            nu=int(s["nu"]),
            radius=float(s["radius"]),
        )
        for s in doc["saddles"]
    ]
    connections = [
        ConnectionSpec(
            source=c["from"],
            sign=_STR_SIGN[c["sign"]],
            target=c.get("to"),
            exit_point=None if c.get("exit_point") is None else np.array(c["exit_point"]),
            leaf_name=c.get("leaf_name"),
            entrance_nu_coord=c.get("entrance_nu_coord"),
            transport=None if c.get("transport") is None else np.array(c["transport"]),
        )
        for c in doc["connections"]
    ]
    fld = None
    if doc.get("field"):
        kind = doc["field"]["kind"]
        fparams = doc["field"].get("params") or {}
        if kind == "krupa-cubic":
            fld = _krupa_field(tuple(fparams["a"]), fparams.get("sigma_scale", 1.0))
        elif kind == "linear":
            A = np.array(fparams["matrix"], dtype=float)
            sig = np.array(fparams.get("sigma", np.eye(len(A))), dtype=float)
            fld = VectorField(
                name="linear",
                b=lambda x, A=A: np.asarray(x, dtype=float) @ A.T,
                jac=lambda x, A=A: np.broadcast_to(A, np.shape(x) + (len(A),)).copy(),
                sigma=sig,
                params=fparams,
            )
        else:
            raise ValueError(f"unknown field kind {kind!r}")
    return NetworkSpec(
        mode=doc["mode"],
        saddles=saddles,
        connections=connections,
        fld=fld,
        params=doc.get("params") or {},
        root_nu_coord=doc.get("root_nu_coord"),
    )
