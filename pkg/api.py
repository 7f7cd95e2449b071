"""
FastAPI Backend
=================
REST API over the design solver.

Endpoints:
    GET  /health       — Health-check
    GET  /configs      — Bundled example problems
    POST /solve        — Optimal design for a problem (INI text or bundled name)
    POST /verify       — Equivalence-theorem check of a given design
    POST /efficiency   — Cross-criterion efficiency matrix

Configuration errors come back as 422, numerical failures as 500.

Requirements:
    pip install fastapi uvicorn pydantic numpy scipy

Usage:
    python api.py                       # start on port 8000
    python api.py --port 8080           # custom port
    python api.py --test                # offline self-test
"""

import os
import sys
import math
import time
import logging
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field, model_validator
import uvicorn

from cli import efficiency_matrix
from criteria import CriterionKind, Design, round_design
from design_optimizer import solve_design
from equivalence import VERIFY_TOL, verify
from errors import ConfigError, NumericalError
from problem_config import ProblemConfig, load_config, parse_config

# ─── Configuration ────────────────────────────────────────────────────────────

HOST = os.getenv("API_HOST", "0.0.0.0")
PORT = int(os.getenv("API_PORT", "8000"))
CONFIG_DIR = Path(os.getenv("DISCRIMAX_CONFIG_DIR", Path(__file__).parent / "configs"))

# ─── Logging ──────────────────────────────────────────────────────────────────

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)-7s | %(message)s",
    datefmt="%H:%M:%S",
)
log = logging.getLogger("api")

# ─── Shared State ─────────────────────────────────────────────────────────────

_bundled: dict[str, Path] = {}


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Index the bundled example configs once at startup."""
    _bundled.clear()
    if CONFIG_DIR.is_dir():
        _bundled.update({p.stem: p for p in sorted(CONFIG_DIR.glob("*.ini"))})
    log.info("Ready — %d bundled config(s) in %s", len(_bundled), CONFIG_DIR)
    yield
    log.info("Shutting down.")


# ─── App ──────────────────────────────────────────────────────────────────────

app = FastAPI(
    title="Discrimax",
    description="Optimal designs for discriminating between two regression models.",
    version="1.0.0",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["*"],
    allow_headers=["*"],
)


# ─── Request / Response Models ────────────────────────────────────────────────


class ProblemRequest(BaseModel):
    config: str | None = Field(default=None, description="Problem config as INI text")
    config_name: str | None = Field(default=None, examples=["example-sec5-2-t"])
    criterion: str | None = Field(default=None, description="Override the config's criterion tag")

    @model_validator(mode="after")
    def one_source(self):
        if (self.config is None) == (self.config_name is None):
            raise ValueError("give exactly one of 'config' and 'config_name'")
        return self


class DesignIn(BaseModel):
    points: list[float] = Field(..., min_length=1)
    weights: list[float] = Field(..., min_length=1)
    criterion: str | None = Field(default=None, description="Criterion this design is optimal for")


class SolveRequest(ProblemRequest):
    n: int = Field(default=0, ge=0, description="Round the design to n observations (0 = off)")
    tol: float = Field(default=VERIFY_TOL, gt=0)


class VerifyRequest(ProblemRequest):
    design: DesignIn
    tol: float = Field(default=VERIFY_TOL, gt=0)


class EfficiencyRequest(ProblemRequest):
    designs: list[DesignIn] = Field(..., min_length=1)
    criteria: list[str] = Field(default_factory=lambda: ["T", "KL", "SKL_A"], min_length=1)


class VerifyResponse(BaseModel):
    criterion: str
    verdict: str
    value: float
    theta2_star: list[float]
    max_violation: float | None
    argmax_x: float
    efficiency_bound: float | None = None
    qualifiers: list[str] = []


class SolveResponse(BaseModel):
    points: list[float]
    weights: list[float]
    criterion: str
    value: float
    theta2_star: list[float]
    verification: VerifyResponse
    trace: dict = Field(default_factory=dict)
    rounding: list[int] | None = None


class EfficiencyResponse(BaseModel):
    criteria: list[str]
    efficiency: list[list[float]]


class HealthResponse(BaseModel):
    status: str
    configs: int


# ─── Helpers ──────────────────────────────────────────────────────────────────


def _load(req: ProblemRequest) -> ProblemConfig:
    if req.config is not None:
        return parse_config(req.config, source="<request>", criterion=req.criterion)
    path = _bundled.get(req.config_name)
    if path is None:
        raise HTTPException(status_code=404, detail=f"Unknown config {req.config_name!r}")
    return load_config(path, req.criterion)


def _verdict(sens) -> VerifyResponse:
    s = sens.summary()
    if not math.isfinite(s["max_violation"]):
        s["max_violation"] = None
    return VerifyResponse(**{k: s[k] for k in VerifyResponse.model_fields})


def _fail(exc: Exception) -> HTTPException:
    if isinstance(exc, ConfigError):
        return HTTPException(status_code=422, detail=str(exc))
    log.error("Numerical failure: %s", exc)
    return HTTPException(status_code=500, detail=str(exc))


# ─── Endpoints ────────────────────────────────────────────────────────────────


@app.get("/health", response_model=HealthResponse, tags=["system"])
async def health_check():
    """Lightweight health-check."""
    return HealthResponse(status="ok", configs=len(_bundled))


@app.get("/configs", tags=["system"])
async def list_configs():
    """Names of the bundled example problems."""
    return {"configs": sorted(_bundled)}


@app.post("/solve", response_model=SolveResponse, tags=["design"])
def solve(req: SolveRequest):
    """Run the exchange algorithm and certify the result."""
    t0 = time.time()
    try:
        cfg = _load(req)
        kind = cfg.kind
        problem = cfg.problem(kind)
        inner_cfg = cfg.inner_config()
        design, report, trace = solve_design(kind, problem, cfg.optimizer_config(), inner_cfg)
        sens = verify(kind, design, problem, req.tol, inner_cfg=inner_cfg, report=report)
    except (ConfigError, NumericalError) as exc:
        raise _fail(exc)
    log.info("POST /solve  %s → %s in %.1fs", kind.value, sens.verdict.value, time.time() - t0)
    return SolveResponse(
        points=list(design.points),
        weights=list(design.weights),
        criterion=kind.value,
        value=report.value,
        theta2_star=list(report.theta2_star),
        verification=_verdict(sens),
        trace=trace.summary(),
        rounding=round_design(design, req.n) if req.n else None,
    )


@app.post("/verify", response_model=VerifyResponse, tags=["design"])
def verify_design(req: VerifyRequest):
    """Sensitivity-function check of a user design."""
    try:
        cfg = _load(req)
        problem = cfg.problem(cfg.kind)
        design = Design.from_user(req.design.points, req.design.weights, problem.space)
        sens = verify(cfg.kind, design, problem, req.tol, inner_cfg=cfg.inner_config())
    except (ConfigError, NumericalError) as exc:
        raise _fail(exc)
    log.info("POST /verify  %s → %s", cfg.kind.value, sens.verdict.value)
    return _verdict(sens)


@app.post("/efficiency", response_model=EfficiencyResponse, tags=["design"])
def efficiency(req: EfficiencyRequest):
    """Efficiency of each design under each criterion (rows: criteria)."""
    try:
        cfg = _load(req)
        kinds = [CriterionKind.parse(c) for c in req.criteria]
        space = cfg.problem(kinds[0]).space
        designs = [Design.from_user(d.points, d.weights, space) for d in req.designs]
        metas = [{"criterion": d.criterion} if d.criterion else {} for d in req.designs]
        matrix = efficiency_matrix(cfg, designs, metas, kinds)
    except (ConfigError, NumericalError) as exc:
        raise _fail(exc)
    return EfficiencyResponse(criteria=[k.value for k in kinds], efficiency=matrix)


# ─── Self-Test ────────────────────────────────────────────────────────────────


def _self_test():
    """Validate request/response models without starting the server."""
    log.info("Running API self-test …")

    req = SolveRequest(config_name="example-sec5-2-t", n=20)
    assert req.tol == VERIFY_TOL
    try:
        ProblemRequest()
    except ValueError:
        pass
    else:
        raise AssertionError("ProblemRequest without a config must fail")
    log.info("  SolveRequest parsing … OK")

    eff = EfficiencyRequest(config_name="x", designs=[DesignIn(points=[0.1, 5], weights=[0.5, 0.5])])
    assert eff.criteria == ["T", "KL", "SKL_A"]
    log.info("  EfficiencyRequest defaults … OK")

    assert _fail(ConfigError("bad")).status_code == 422
    assert _fail(NumericalError("boom")).status_code == 500
    log.info("  error mapping … OK")

    log.info("API self-test PASSED.")


# ─── Entry Point ──────────────────────────────────────────────────────────────

if __name__ == "__main__":
    if "--test" in sys.argv:
        _self_test()
        sys.exit(0)

    port = PORT
    if "--port" in sys.argv:
        idx = sys.argv.index("--port")
        if idx + 1 < len(sys.argv):
            port = int(sys.argv[idx + 1])

    log.info("Starting server on %s:%d …", HOST, port)
    uvicorn.run("api:app", host=HOST, port=port, reload=False, log_level="info")
