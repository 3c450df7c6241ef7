"""Experiment configuration: TOML loading, validation and reference partitions.

A configuration file has the sections ``[mesh]``, ``[problem]``,
``[optimizer]``, ``[solver]`` and ``[output]``; every key is optional and
falls back to the defaults below, which reproduce the two-material desk run.

The reference partition is either a preset name (``"two_material"`` or
``"three_material"``) or a list of at most M-1 predicates in x, y, z.  A
face gets the label of the first predicate that holds at its centroid, and
the next label if none does::

    [problem]
    reference = ["x < 0 and y < 0", "x < 0 and y > 0"]
"""

from __future__ import annotations

import ast
import dataclasses
import operator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import fem
from .formats import import_msh
from .levelset import NORMALIZE_MODES, OptimConfig
from .mesh import Mesh, generate_ellipsoid_mesh
from .problem import DirichletProblem

PRESETS = {
    "two_material": ["y**2 + z**2 < 0.1"],
    "three_material": ["x < 0 and y < 0", "x < 0 and y > 0"],
}


class ConfigError(ValueError):
    pass


@dataclass
class MeshConfig:
    axes: list = field(default_factory=lambda: [1.0, 0.5, 1.0])
    n: int = 10
    path: str | None = None  # MSH 2.2 file; overrides the generator when set


@dataclass
class ProblemConfig:
    M: int = 3
    alpha: list = field(default_factory=lambda: [0.1, 10.0, 3.0])
    lower: list | None = None
    upper: list | None = None
    lam: float = 0.0
    source: float = 1.0
    reference: str | list = "two_material"


@dataclass
class SolverConfig:
    rtol: float = fem.DEFAULT_RTOL


@dataclass
class OutputConfig:
    directory: str = "output"
    snapshot_every: int = 5
    figures: bool = True


@dataclass
class ExperimentConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    base_dir: Path = field(default_factory=Path.cwd, repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        p = self.problem
        if p.M not in (2, 3):
            raise ConfigError(f"problem.M must be 2 or 3, got {p.M}")
        if len(p.alpha) != p.M:
            raise ConfigError(f"problem.alpha needs {p.M} values, got {len(p.alpha)}")
        for name in ("lower", "upper"):
            bound = getattr(p, name)
            if bound is not None and len(bound) != p.M:
                raise ConfigError(f"problem.{name} needs {p.M} values, got {len(bound)}")
        lower, upper = self.bounds()
        if np.any(lower > upper):
            raise ConfigError(f"problem.lower exceeds problem.upper: {lower} > {upper}")
        if p.lam < 0:
            raise ConfigError(f"problem.lam must be >= 0, got {p.lam}")
        if self.optimizer.optimize_alpha and p.lam == 0:
            raise ConfigError("optimizer.optimize_alpha needs problem.lam > 0")
        reference_predicates(p.reference, p.M)
        if self.mesh.path is None:
            if len(self.mesh.axes) != 3 or min(self.mesh.axes) <= 0:
                raise ConfigError(f"mesh.axes must be three positive lengths, got {self.mesh.axes}")
            if self.mesh.n < 2:
                raise ConfigError(f"mesh.n must be >= 2, got {self.mesh.n}")
        if not self.solver.rtol > 0:
            raise ConfigError(f"solver.rtol must be positive, got {self.solver.rtol}")
        if self.output.snapshot_every < 1:
            raise ConfigError(f"output.snapshot_every must be >= 1, got {self.output.snapshot_every}")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        M = self.problem.M
        lower = self.problem.lower if self.problem.lower is not None else [-np.inf] * M
        upper = self.problem.upper if self.problem.upper is not None else [np.inf] * M
        return np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)

    def to_dict(self) -> dict:
        """Plain dict suitable for TOML; unset optional keys are dropped."""
        out = {}
        for name in ("mesh", "problem", "optimizer", "solver", "output"):
            section = dataclasses.asdict(getattr(self, name))
            out[name] = {k: v for k, v in section.items() if v is not None}
        return out


def _section(cls, data: dict, name: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def config_from_dict(data: dict, base_dir=None) -> ExperimentConfig:
    sections = {"mesh": MeshConfig, "problem": ProblemConfig, "optimizer": OptimConfig,
                "solver": SolverConfig, "output": OutputConfig}
    unknown = sorted(set(data) - set(sections))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    parts = {name: _section(cls, data.get(name, {}), name) for name, cls in sections.items()}
    if parts["optimizer"].normalize not in NORMALIZE_MODES:
        raise ConfigError(f"optimizer.normalize must be one of {NORMALIZE_MODES}")
    return ExperimentConfig(**parts, base_dir=Path(base_dir) if base_dir else Path.cwd())


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    with path.open("rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, base_dir=path.parent)


def save_config(config: ExperimentConfig, path) -> None:
    data = config.to_dict()
    if config.mesh.path is not None:
        data["mesh"]["path"] = str((config.base_dir / config.mesh.path).resolve())
    with Path(path).open("wb") as fh:
        tomli_w.dump(data, fh)


# safe predicate evaluation ---------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_CMPOPS = {ast.Lt: operator.lt, ast.LtE: operator.le, ast.Gt: operator.gt,
           ast.GtE: operator.ge, ast.Eq: operator.eq, ast.NotEq: operator.ne}
_FUNCS = {"abs": np.abs, "sqrt": np.sqrt}


def compile_predicate(text: str):
    """Parse a face predicate such as ``"x < 0 and y**2 < 0.5"``.

    Only arithmetic, comparisons, ``and``/``or``/``not``, numeric literals,
    the names x, y, z and the functions abs and sqrt are allowed.  Returns a
    function of an (n, 3) coordinate array giving a boolean mask.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse predicate {text!r}: {exc.msg}") from exc

    def ev(node, env):
        if isinstance(node, ast.Expression):
            return ev(node.body, env)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in env:
            return env[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left, env), ev(node.right, env))
        if isinstance(node, ast.UnaryOp):
            if isinstance(node.op, ast.USub):
                return -ev(node.operand, env)
            if isinstance(node.op, ast.UAdd):
                return ev(node.operand, env)
            if isinstance(node.op, ast.Not):
                return np.logical_not(ev(node.operand, env))
        if isinstance(node, ast.BoolOp):
            combine = np.logical_and if isinstance(node.op, ast.And) else np.logical_or
            result = ev(node.values[0], env)
            for value in node.values[1:]:
                result = combine(result, ev(value, env))
            return result
        if isinstance(node, ast.Compare):
            left = ev(node.left, env)
            result = True
            for op, right_node in zip(node.ops, node.comparators):
                if type(op) not in _CMPOPS:
                    break
                right = ev(right_node, env)
                result = np.logical_and(result, _CMPOPS[type(op)](left, right))
                left = right
            else:
                return result
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and not node.keywords and len(node.args) == 1:
            return _FUNCS[node.func.id](ev(node.args[0], env))
        raise ConfigError(f"unsupported expression {ast.unparse(node)!r} in predicate {text!r}")

    # validate once on a dummy point so errors surface at load time
    try:
        with np.errstate(all="ignore"):
            ev(tree, {"x": np.zeros(1), "y": np.zeros(1), "z": np.zeros(1)})
    except ArithmeticError as exc:
        raise ConfigError(f"predicate {text!r} fails to evaluate: {exc}") from exc

    def predicate(points):
        points = np.asarray(points, dtype=float)
        env = {"x": points[:, 0], "y": points[:, 1], "z": points[:, 2]}
        return np.broadcast_to(np.asarray(ev(tree, env), dtype=bool), (len(points),))

    return predicate


def reference_predicates(reference, M: int) -> list:
    if isinstance(reference, str):
        if reference not in PRESETS:
            raise ConfigError(f"unknown reference preset {reference!r}; known: {', '.join(PRESETS)}")
        texts = PRESETS[reference]
    else:
        texts = list(reference)
    if len(texts) > M - 1:
        raise ConfigError(f"reference needs at most {M - 1} predicates for M = {M}, got {len(texts)}")
    return [compile_predicate(t) for t in texts]


def reference_labels(reference, M: int, centroids) -> np.ndarray:
    """Label of the first predicate holding at each centroid.

    Faces matching no predicate get one past the last predicate's label, so
    the two-material preset yields labels {1, 2} even for M = 3.
    """
    centroids = np.asarray(centroids, dtype=float)
    predicates = reference_predicates(reference, M)
    labels = np.full(len(centroids), len(predicates) + 1, dtype=np.int64)
    undecided = np.ones(len(centroids), dtype=bool)
    for label, predicate in enumerate(predicates, start=1):
        hit = undecided & predicate(centroids)
        labels[hit] = label
        undecided &= ~hit
    return labels


def build_mesh(config: ExperimentConfig) -> Mesh:
    if config.mesh.path is not None:
        return import_msh(config.base_dir / config.mesh.path)
    return generate_ellipsoid_mesh(*config.mesh.axes, config.mesh.n)


def build_problem(config: ExperimentConfig, mesh: Mesh) -> DirichletProblem:
    return DirichletProblem(mesh, source=config.problem.source, lam=config.problem.lam,
                            rtol=config.solver.rtol)


def build_reference(config: ExperimentConfig, mesh: Mesh, problem: DirichletProblem | None = None):
    """Reference partition at face centroids and the state it produces.

    Returns ``(labels, u_ref)``.
    """
    labels = reference_labels(config.problem.reference, config.problem.M, mesh.face_centroids)
    problem = problem or build_problem(config, mesh)
    return labels, problem.state(labels, np.asarray(config.problem.alpha, dtype=float))
