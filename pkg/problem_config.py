"""
Problem Configuration
=======================
Loads a discrimination problem from an INI file and validates it.

    [design_space]   lo, hi, grid_n
    [model1]         mean, theta                 (θ̄₁ fixed)
    [model2]         mean, box = lo:hi, lo:hi …  (Θ₂)
    [density1]       kind, variance, half_width | quantiles
    [density2]       kind, variance, …
    [density1:KL]    per-criterion override of [density1] (likewise density2)
    [criterion]      tag = T | KLNORMAL | KL | SKL_A | SKL_B
    [optimizer]      max_outer_iters, stop_tol, merge_tol, weight_floor, refine_every
    [solver]         delta, beta, max_iter
    [inner]          n_starts, seed, threads

Syntax errors report the line; validation errors report section.field and,
where the key exists in the file, its line.

Requirements:
    pip install pydantic

Usage:
    python problem_config.py configs/example-otsu.ini
"""

from __future__ import annotations

import re
import sys
import json
import logging
import configparser
from pathlib import Path
from typing import Annotated, Optional

from pydantic import BaseModel, BeforeValidator, Field, ValidationError, field_validator, model_validator

from criteria import DEFAULT_SEED, THREADS, CriterionKind, Design, DiscriminationProblem, InnerConfig
from design_optimizer import OptimizerConfig
from errors import ConfigError
from lambda_solver import SolverConfig
from models import DensityFamily, DensityKind, DesignSpace, ModelSpec, parse_mean
from quadrature import Interval

# ─── Configuration ────────────────────────────────────────────────────────────

KNOWN_SECTIONS = {
    "design_space", "model1", "model2", "density1", "density2",
    "criterion", "optimizer", "solver", "inner",
}
_OVERRIDE_RE = re.compile(r"^(density[12]):([A-Za-z_]+)$")

# ─── Logging ──────────────────────────────────────────────────────────────────

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)-7s | %(message)s",
    datefmt="%H:%M:%S",
)
log = logging.getLogger("problem_config")

# ─── Data Models ──────────────────────────────────────────────────────────────


def _split_floats(v):
    if isinstance(v, str):
        return [float(s) for s in v.replace(";", ",").split(",") if s.strip()]
    return v


FloatList = Annotated[list[float], BeforeValidator(_split_floats)]
FloatPair = Annotated[tuple[float, float], BeforeValidator(_split_floats)]


class DesignSpaceSection(BaseModel):
    lo: float
    hi: float
    grid_n: int = Field(default=401, ge=2)

    @model_validator(mode="after")
    def check_order(self):
        if not self.lo < self.hi:
            raise ValueError(f"lo must be < hi, got lo={self.lo}, hi={self.hi}")
        return self


class Model1Section(BaseModel):
    mean: str
    theta: FloatList = Field(default_factory=list)


class Model2Section(BaseModel):
    mean: str
    box: list[tuple[float, float]]

    @field_validator("box", mode="before")
    @classmethod
    def parse_box(cls, v):
        if not isinstance(v, str):
            return v
        out = []
        for part in v.split(","):
            if not part.strip():
                continue
            lo, sep, hi = part.partition(":")
            if not sep:
                raise ValueError(f"box entry {part.strip()!r} is not 'lo:hi'")
            out.append((float(lo), float(hi)))
        return out

    @field_validator("box")
    @classmethod
    def check_box_order(cls, v):
        for lo, hi in v:
            if not lo < hi:
                raise ValueError(f"box interval {lo}:{hi} needs lo < hi")
        return v


class DensitySection(BaseModel):
    kind: DensityKind
    variance: str = "1"
    half_width: Optional[float] = Field(default=None, gt=0)
    quantiles: Optional[FloatPair] = None

    @field_validator("kind", mode="before")
    @classmethod
    def normalize_kind(cls, v):
        if isinstance(v, str) and "_" not in v:
            v = re.sub(r"(?<!^)(?=[A-Z])", "_", v.strip())
        return v.strip().lower() if isinstance(v, str) else v

    @model_validator(mode="after")
    def check_truncation(self):
        if self.kind is DensityKind.TRUNCATED_NORMAL and self.half_width is None:
            raise ValueError("truncated_normal needs half_width")
        if self.kind is DensityKind.TRUNCATED_LOGNORMAL:
            if self.quantiles is None:
                raise ValueError("truncated_lognormal needs quantiles = p_lo, p_hi")
            p_lo, p_hi = self.quantiles
            if not 0 < p_lo < p_hi < 1:
                raise ValueError("quantiles need 0 < p_lo < p_hi < 1")
        return self

    def build(self) -> DensityFamily:
        return DensityFamily(self.kind, parse_mean(self.variance), self.half_width, self.quantiles)


class CriterionSection(BaseModel):
    tag: CriterionKind = CriterionKind.T

    @field_validator("tag", mode="before")
    @classmethod
    def normalize_tag(cls, v):
        return v.strip().upper() if isinstance(v, str) else v


class OptimizerSection(BaseModel):
    max_outer_iters: int = Field(default=500, ge=1)
    stop_tol: float = Field(default=1e-5, gt=0)
    merge_tol: Optional[float] = Field(default=None, gt=0)
    weight_floor: float = Field(default=1e-4, gt=0, lt=1)
    refine_every: int = Field(default=25, ge=1)


class SolverSection(BaseModel):
    delta: float = Field(default=1e-8, gt=0, lt=1)
    beta: float = Field(default=50.0, gt=0)
    max_iter: int = Field(default=200, ge=1)


class InnerSection(BaseModel):
    n_starts: int = Field(default=16, ge=1)
    seed: int = DEFAULT_SEED
    threads: int = Field(default=THREADS, ge=1)


class ProblemConfig(BaseModel):
    design_space: DesignSpaceSection
    model1: Model1Section
    model2: Model2Section
    density1: Optional[DensitySection] = None
    density2: Optional[DensitySection] = None
    overrides: dict[str, dict[str, DensitySection]] = Field(default_factory=dict)
    criterion: CriterionSection = Field(default_factory=CriterionSection)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    inner: InnerSection = Field(default_factory=InnerSection)
    source: str = "<string>"

    @property
    def kind(self) -> CriterionKind:
        return self.criterion.tag

    def densities_for(self, kind: CriterionKind) -> tuple[Optional[DensitySection], Optional[DensitySection]]:
        over = self.overrides.get(kind.value, {})
        return over.get("density1", self.density1), over.get("density2", self.density2)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(delta=self.solver.delta, beta=self.solver.beta, max_iter=self.solver.max_iter)

    def inner_config(self) -> InnerConfig:
        return InnerConfig(n_starts=self.inner.n_starts, seed=self.inner.seed, threads=self.inner.threads)

    def optimizer_config(self) -> OptimizerConfig:
        o = self.optimizer
        return OptimizerConfig(
            grid_n=self.design_space.grid_n,
            max_outer_iters=o.max_outer_iters,
            stop_tol=o.stop_tol,
            merge_tol=o.merge_tol,
            weight_floor=o.weight_floor,
            refine_every=o.refine_every,
        )

    def problem(self, kind: CriterionKind | None = None) -> DiscriminationProblem:
        """Build the numerical problem for *kind* (default: the configured criterion)."""
        kind = kind or self.kind
        d1, d2 = self.densities_for(kind)
        mean1 = _parse(self.model1.mean, "model1.mean")
        mean2 = _parse(self.model2.mean, "model2.mean")
        if len(self.model1.theta) != mean1.arity:
            raise ConfigError(f"theta has {len(self.model1.theta)} value(s); {self.model1.mean!r} uses "
                              f"{mean1.arity}", field="model1.theta")
        if len(self.model2.box) != mean2.arity:
            raise ConfigError(f"box has {len(self.model2.box)} interval(s); {self.model2.mean!r} uses "
                              f"{mean2.arity}", field="model2.box")
        try:
            model2 = ModelSpec(mean2, mean2.arity, tuple(Interval(lo, hi) for lo, hi in self.model2.box))
        except ValueError as exc:
            raise ConfigError(str(exc), field="model2.box") from exc
        try:
            space = DesignSpace(Interval(self.design_space.lo, self.design_space.hi), self.design_space.grid_n)
        except ValueError as exc:
            raise ConfigError(str(exc), field="design_space") from exc
        problem = DiscriminationProblem(
            mean1=mean1,
            theta1=tuple(self.model1.theta),
            model2=model2,
            space=space,
            density1=_build_density(d1, "density1") if d1 is not None else None,
            density2=_build_density(d2, "density2") if d2 is not None else None,
            solver=self.solver_config(),
        )
        problem.require(kind)
        return problem


def _parse(source: str, where: str):
    try:
        return parse_mean(source)
    except ConfigError as exc:
        raise ConfigError(str(exc), field=where) from exc


def _build_density(section: DensitySection, where: str) -> DensityFamily:
    try:
        return section.build()
    except ConfigError as exc:
        raise ConfigError(str(exc), field=f"{where}.variance") from exc


# ─── Loading ──────────────────────────────────────────────────────────────────


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return n
            continue
        if current == section and key and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return n
    return None


def parse_config(text: str, source: str = "<string>", criterion: str | None = None) -> ProblemConfig:
    """
    Parse INI text into a validated ProblemConfig; *criterion* overrides [criterion] tag.

    Raises:
        ConfigError: syntax, unknown section, type/range or cross-field errors.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ConfigError(f"{source}: malformed line", line=lineno) from exc
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ConfigError(f"{source}: {exc.message}", line=exc.lineno) from exc
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}: content before the first [section]", line=exc.lineno) from exc
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    data: dict = {"source": source, "overrides": {}}
    for name in parser.sections():
        values = dict(parser.items(name))
        m = _OVERRIDE_RE.match(name)
        if m:
            tag = CriterionKind.parse(m.group(2)).value
            data["overrides"].setdefault(tag, {})[m.group(1)] = values
        elif name in KNOWN_SECTIONS:
            data[name] = values
        else:
            raise ConfigError(f"{source}: unknown section [{name}]", line=_line_of(text, name, None))
    if criterion:
        data.setdefault("criterion", {})["tag"] = criterion

    try:
        cfg = ProblemConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = [str(p) for p in err["loc"]]
        if loc and loc[0] == "overrides" and len(loc) >= 3:
            section, key = f"{loc[2]}:{loc[1]}", (loc[3] if len(loc) > 3 else None)
        else:
            section, key = (loc[0] if loc else ""), (loc[1] if len(loc) > 1 else None)
        raise ConfigError(f"{source}: {err['msg']}", field=".".join(loc),
                          line=_line_of(text, section, key)) from exc

    cfg.problem()
    log.debug("Loaded %s (%s)", source, cfg.kind.value)
    return cfg


def load_config(path: str | Path, criterion: str | None = None) -> ProblemConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, source=str(path), criterion=criterion)


# ─── Designs ─────────────────────────────────────────────────────────────────


def read_design(spec: str, space: DesignSpace | None = None) -> tuple[Design, dict]:
    """
    A design from a JSON file path, a JSON literal ``{"points": […], "weights": […]}``
    or a pair list ``x:w, x:w, …``, plus the document's other top-level fields
    (``criterion``, ``value`` … as written by ``cli.py solve``).
    """
    text = spec.strip()
    try:
        path = Path(text)
        if not text.startswith("{") and path.is_file():
            text = path.read_text().strip()
    except OSError:
        pass
    meta: dict = {}
    try:
        if text.startswith("{"):
            doc = json.loads(text)
            design = doc.get("design", doc)
            points, weights = design["points"], design["weights"]
            meta = {k: v for k, v in doc.items() if k not in ("design", "points", "weights")}
        else:
            pairs = [p.split(":") for p in text.split(",") if p.strip()]
            if not pairs or any(len(p) != 2 for p in pairs):
                raise ValueError("expected 'x:w, x:w, …'")
            points = [float(p[0]) for p in pairs]
            weights = [float(p[1]) for p in pairs]
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise ConfigError(f"malformed design {spec[:60]!r}: {exc}", origin="design") from exc
    return Design.from_user(points, weights, space), meta


# ─── Entry Point ──────────────────────────────────────────────────────────────

if __name__ == "__main__":
    if len(sys.argv) < 2:
        print("Usage:  python problem_config.py <config.ini>")
        sys.exit(1)
    try:
        cfg = load_config(sys.argv[1])
    except ConfigError as exc:
        print(f"❌  {exc}", file=sys.stderr)
        sys.exit(exc.exit_code)
    print(json.dumps(cfg.model_dump(mode="json"), indent=2))
