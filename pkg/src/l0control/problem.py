"""Grids, fields, data of the control problem and config parsing.

A grid is an axis-aligned box in 1D or 2D with homogeneous Dirichlet
data on its boundary.  All fields (controls, states, adjoints, directions)
live on the interior nodes and are stored as flat float arrays in C order
of the interior index grid.  Integrals use node-wise quadrature, i.e.
``sum(f) * cell_volume``.
"""

import csv
import dataclasses
import math
from pathlib import Path

import numpy as np

from . import expressions
from .pointwise import CostParams


class ConfigError(ValueError):
    """Raised when a problem description violates the standing assumptions."""


@dataclasses.dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on ``[0, extent_0] x ... x [0, extent_{dim-1}]``.

    ``nodes`` counts nodes per axis including the two boundary nodes.
    """

    nodes: tuple
    extents: tuple

    def __post_init__(self):
        nodes = tuple(int(n) for n in self.nodes)
        extents = tuple(float(e) for e in self.extents)
        if len(nodes) not in (1, 2) or len(nodes) != len(extents):
            raise ConfigError("grid must be 1D or 2D with one extent per axis")
        if min(nodes) < 3:
            raise ConfigError("need at least 3 nodes per axis")
        if min(extents) <= 0 or not all(math.isfinite(e) for e in extents):
            raise ConfigError("grid extents must be positive and finite")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "extents", extents)

    @classmethod
    def unit(cls, dim, interior):
        """Unit interval/square with ``interior`` interior nodes per axis."""
        return cls((interior + 2,) * dim, (1.0,) * dim)

    @property
    def dim(self):
        return len(self.nodes)

    @property
    def spacing(self):
        return tuple(e / (n - 1) for e, n in zip(self.extents, self.nodes))

    @property
    def interior_shape(self):
        return tuple(n - 2 for n in self.nodes)

    @property
    def size(self):
        """Number of interior nodes N."""
        return int(np.prod(self.interior_shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def volume(self):
        return float(np.prod(self.extents))

    def axes(self, full=False):
        """Coordinates along each axis, interior only unless ``full``."""
        out = []
        for n, h in zip(self.nodes, self.spacing):
            idx = np.arange(n) if full else np.arange(1, n - 1)
            out.append(idx * h)
        return out

    def coordinates(self, full=False):
        """Dict of coordinate arrays (``x`` and, in 2D, ``y``).

        Interior coordinates are flattened in field order; the full-grid
        variant keeps the nodal array shape.
        """
        mesh = np.meshgrid(*self.axes(full), indexing="ij")
        names = ("x", "y")[: self.dim]
        if full:
            return dict(zip(names, mesh))
        return {name: m.ravel() for name, m in zip(names, mesh)}

    def boundary_mask(self):
        """Boolean nodal array marking boundary nodes of the full grid."""
        mask = np.zeros(self.nodes, dtype=bool)
        for axis in range(self.dim):
            index = [slice(None)] * self.dim
            index[axis] = 0
            mask[tuple(index)] = True
            index[axis] = -1
            mask[tuple(index)] = True
        return mask

    def interior_index(self):
        """Flat full-grid indices of the interior nodes in field order."""
        full = np.arange(int(np.prod(self.nodes))).reshape(self.nodes)
        inner = tuple(slice(1, -1) for _ in range(self.dim))
        return full[inner].ravel()

    def boundary_index(self):
        return np.flatnonzero(self.boundary_mask().ravel())

    # discrete norms and inner product, node-wise quadrature
    def inner(self, f, g):
        return float(np.dot(f, g)) * self.cell_volume

    def norm_l2(self, f):
        return math.sqrt(float(np.dot(f, f)) * self.cell_volume)

    def norm_l1(self, f):
        return float(np.sum(np.abs(f))) * self.cell_volume

    def integrate(self, f):
        return float(np.sum(f)) * self.cell_volume


@dataclasses.dataclass
class GridField:
    """Values on the interior nodes of ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size != self.grid.size:
            raise ValueError(
                f"field has {self.values.size} values, grid has {self.grid.size} interior nodes"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def to_csv(self, path):
        write_field_csv(path, self.grid, self.values)

    @classmethod
    def from_csv(cls, path, grid):
        return cls(grid, read_field_csv(path, grid))


def write_field_csv(path, grid, values, name="value"):
    coords = grid.coordinates()
    names = list(coords)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", *names, name])
        for i, v in enumerate(values):
            writer.writerow([i, *(repr(float(coords[n][i])) for n in names), repr(float(v))])


def read_field_csv(path, grid):
    """Read the last column of a field CSV written by :func:`write_field_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty field file")
    body = rows[1:]
    values = np.empty(len(body))
    for row in body:
        values[int(row[0])] = float(row[-1])
    if values.size != grid.size:
        raise ValueError(f"{path}: {values.size} rows, expected {grid.size}")
    return values


NONLINEARITY_FAMILIES = ("linear", "cubic", "arctan")


@dataclasses.dataclass(frozen=True)
class Nonlinearity:
    """Monotone nonlinearity ``a(x, y)`` from a fixed family.

    * ``linear``: ``c0 * y``
    * ``cubic``: ``c0 * y + c3 * y**3``
    * ``arctan``: ``c0 * arctan(y)``

    ``c0`` and ``c3`` are nonnegative nodal arrays on the interior nodes.
    """

    family: str
    c0: np.ndarray
    c3: np.ndarray

    def __post_init__(self):
        if self.family not in NONLINEARITY_FAMILIES:
            raise ConfigError(f"unknown nonlinearity family {self.family!r}")
        for name in ("c0", "c3"):
            arr = np.array(getattr(self, name), dtype=float)
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ConfigError(f"nonlinearity coefficient {name} must be finite and >= 0")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def value(self, y):
        if self.family == "linear":
            return self.c0 * y
        if self.family == "cubic":
            return self.c0 * y + self.c3 * y**3
        return self.c0 * np.arctan(y)

    def d1(self, y):
        if self.family == "linear":
            return self.c0 * np.ones_like(y)
        if self.family == "cubic":
            return self.c0 + 3.0 * self.c3 * y**2
        return self.c0 / (1.0 + y**2)

    def d2(self, y):
        if self.family == "linear":
            return np.zeros_like(y)
        if self.family == "cubic":
            return 6.0 * self.c3 * y
        return -2.0 * self.c0 * y / (1.0 + y**2) ** 2

    @property
    def is_affine(self):
        return self.family == "linear" or (self.family == "cubic" and not np.any(self.c3))


@dataclasses.dataclass(frozen=True)
class Objective:
    """Tracking integrand ``L(x, y) = (y - y_d(x))**2 / 2``."""

    target: np.ndarray

    def __post_init__(self):
        arr = np.array(self.target, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ConfigError("target must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "target", arr)

    def value(self, y):
        return 0.5 * (y - self.target) ** 2

    def d1(self, y):
        return y - self.target

    def d2(self, y):
        return np.ones_like(y)


@dataclasses.dataclass(frozen=True)
class ProblemSpec:
    """Discretized sparse control problem.

    ``kappa`` is the isotropic diffusion coefficient on the full nodal grid
    (boundary nodes included, they enter the face averages).
    """

    grid: Grid
    kappa: np.ndarray
    nonlinearity: Nonlinearity
    objective: Objective
    alpha: float
    beta: float
    gamma: float
    lambda_a: float = None

    def __post_init__(self):
        kappa = np.array(self.kappa, dtype=float)
        if kappa.ndim == 0:
            kappa = np.full(self.grid.nodes, float(kappa))
        if kappa.shape != self.grid.nodes:
            raise ConfigError(f"kappa must have nodal shape {self.grid.nodes}")
        if not np.all(np.isfinite(kappa)) or np.any(kappa <= 0):
            raise ConfigError("kappa must be finite and strictly positive (ellipticity)")
        kappa.setflags(write=False)
        object.__setattr__(self, "kappa", kappa)
        lam = float(kappa.min()) if self.lambda_a is None else float(self.lambda_a)
        if lam <= 0 or lam > kappa.min():
            raise ConfigError(f"declared ellipticity constant {lam} not in (0, min kappa]")
        object.__setattr__(self, "lambda_a", lam)
        # raises on invalid alpha/beta/gamma combinations
        self.cost
        n = self.grid.size
        for name, arr in (
            ("c0", self.nonlinearity.c0),
            ("c3", self.nonlinearity.c3),
            ("target", self.objective.target),
        ):
            if arr.shape != (n,):
                raise ConfigError(f"{name} must have one value per interior node ({n})")

    @property
    def cost(self):
        try:
            return CostParams(self.alpha, self.beta, self.gamma)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def zero_tol(self):
        """Threshold below which a control value counts as zero."""
        gamma = self.gamma if math.isfinite(self.gamma) else 1.0
        return 1e-12 * max(1.0, gamma)

    def cached(self, key, build):
        """Memoize derived data (operators) on this immutable instance."""
        store = self.__dict__.setdefault("_derived", {})
        if key not in store:
            store[key] = build()
        return store[key]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def echo(self):
        """JSON-compatible summary of the problem data."""
        target = self.objective.target
        return {
            "dim": self.grid.dim,
            "nodes": list(self.grid.nodes),
            "extents": list(self.grid.extents),
            "interior_nodes": self.grid.size,
            "kappa_min": float(self.kappa.min()),
            "kappa_max": float(self.kappa.max()),
            "lambda_a": self.lambda_a,
            "nonlinearity": self.nonlinearity.family,
            "c0_max": float(self.nonlinearity.c0.max()),
            "c3_max": float(self.nonlinearity.c3.max()),
            "target_min": float(target.min()),
            "target_max": float(target.max()),
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "gamma": _jsonable_float(self.gamma),
            "regime": self.cost.regime,
        }


def _jsonable_float(v):
    v = float(v)
    return v if math.isfinite(v) else "inf"


def l0_norm(grid, u, tol=1e-12):
    """Measure of the support ``{|u| > tol}``."""
    return float(np.count_nonzero(np.abs(u) > tol)) * grid.cell_volume


def uad_project(u, gamma):
    """Pointwise projection onto ``[-gamma, gamma]``."""
    u = np.asarray(u, dtype=float)
    if math.isinf(gamma):
        return u.copy()
    return np.clip(u, -gamma, gamma)


# --- config handling --------------------------------------------------------

CONFIG_KEYS = {
    "dim": "1 or 2",
    "nodes": "nodes per axis including boundary (int, or 'n1,n2')",
    "extent": "physical length per axis (float, or 'l1,l2'), default 1",
    "kappa": "diffusion coefficient: number or expression in x[,y]",
    "lambda_a": "declared ellipticity constant, default min(kappa)",
    "nonlinearity": "linear | cubic | arctan",
    "c0": "coefficient c0: number or expression, default 0",
    "c3": "coefficient c3 (cubic): number or expression, default 0",
    "target": "y_d: number, expression, or file:<path to field csv>",
    "alpha": "L2 weight, >= 0",
    "beta": "L0 weight, > 0",
    "gamma": "control bound, > 0 or inf",
}


def parse_config_text(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_config(path):
    path = Path(path)
    config = parse_config_text(path.read_text())
    config.setdefault("_base_dir", str(path.parent))
    return config


def _float(value, name):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a number, got {value!r}") from None
    if math.isnan(v):
        raise ConfigError(f"{name}: NaN is not allowed")
    return v


def _per_axis(value, dim, cast, default=None):
    if value is None:
        return (default,) * dim
    if isinstance(value, (int, float)):
        return (cast(value),) * dim
    parts = [p for p in str(value).replace("x", ",").split(",") if p.strip()]
    if len(parts) == 1:
        return (cast(parts[0]),) * dim
    if len(parts) != dim:
        raise ConfigError(f"expected {dim} comma-separated values, got {value!r}")
    return tuple(cast(p) for p in parts)


def _field(value, grid, name, base_dir=".", full=False):
    if isinstance(value, np.ndarray):
        return value.astype(float)
    if isinstance(value, (int, float)):
        shape = grid.nodes if full else (grid.size,)
        return np.full(shape, float(value))
    text = str(value).strip()
    if text.startswith("file:"):
        if full:
            raise ConfigError(f"{name}: file input is only supported for interior fields")
        path = Path(text[5:].strip())
        if not path.is_absolute():
            path = Path(base_dir) / path
        return read_field_csv(path, grid)
    try:
        return np.full(grid.nodes if full else (grid.size,), float(text))
    except ValueError:
        pass
    try:
        return expressions.evaluate(text, grid.coordinates(full=full))
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def build_problem(config):
    """Build a validated :class:`ProblemSpec` from a key-value mapping.

    Values may be strings (as read from a config file) or numbers/arrays.
    Keys outside :data:`CONFIG_KEYS` are ignored so run settings can share
    the file.
    """
    config = dict(config)
    base_dir = config.pop("_base_dir", ".")
    dim = int(_float(config.get("dim", 1), "dim"))
    if dim not in (1, 2):
        raise ConfigError("dim must be 1 or 2")
    if "nodes" not in config:
        raise ConfigError("missing required key 'nodes'")
    nodes = _per_axis(config["nodes"], dim, lambda v: int(_float(v, "nodes")))
    extents = _per_axis(config.get("extent"), dim, lambda v: _float(v, "extent"), 1.0)
    grid = Grid(nodes, extents)

    for key in ("alpha", "beta", "gamma"):
        if key not in config:
            raise ConfigError(f"missing required key {key!r}")
    alpha = _float(config["alpha"], "alpha")
    beta = _float(config["beta"], "beta")
    gamma = _float(config["gamma"], "gamma")

    kappa = _field(config.get("kappa", 1.0), grid, "kappa", base_dir, full=True)
    family = str(config.get("nonlinearity", "linear")).strip()
    c0 = _field(config.get("c0", 0.0), grid, "c0", base_dir)
    c3 = _field(config.get("c3", 0.0), grid, "c3", base_dir)
    target = _field(config.get("target", 0.0), grid, "target", base_dir)
    lambda_a = config.get("lambda_a")
    if lambda_a is not None:
        lambda_a = _float(lambda_a, "lambda_a")

    spec = ProblemSpec(
        grid=grid,
        kappa=kappa,
        nonlinearity=Nonlinearity(family, c0, c3),
        objective=Objective(target),
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        lambda_a=lambda_a,
    )
    return spec
