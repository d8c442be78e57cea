"""HTTP service wrapping the simulator, data generator, and variance tools.

Endpoints return full artifacts in the response body (metrics CSV text, JSON
summaries, generated CSV datasets); persisting them to disk is the caller's
job. Error payloads carry a ``kind`` so clients can tell configuration
mistakes ("config"), failed analysis preconditions ("analysis"), and runtime
faults ("runtime") apart without parsing message text.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .config import ExperimentConfig
from .data import dataset_csv_text, synth_blobs
from .errors import AnalysisError, ConfigError, InputError, SimulatorError
from .experiment import SCHEMA_VERSION, run_config
from .variance import check_bound, estimator_variance, keep_probs, mc_sparsify, solve_r

app = FastAPI(title="feddropsim", version=__version__)


def _error(status: int, kind: str, message: str) -> HTTPException:
    return HTTPException(status_code=status, detail={"kind": kind, "message": message})


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: ExperimentConfig
    seeds: list[int] | None = None  # overrides config.seeds when given


class RunResponse(BaseModel):
    schema_version: int
    summary: dict
    metrics_csv: str
    gradients: dict[str, list[float]]  # seed -> flattened final global gradient


@app.post("/experiments/run", response_model=RunResponse)
def run_experiment_endpoint(req: RunRequest) -> RunResponse:
    try:
        result = run_config(req.config, req.seeds)
    except ConfigError as exc:
        raise _error(400, "config", str(exc)) from exc
    except InputError as exc:
        raise _error(400, "config", str(exc)) from exc
    except SimulatorError as exc:
        raise _error(500, "runtime", str(exc)) from exc
    return RunResponse(
        schema_version=SCHEMA_VERSION,
        summary=result.summary,
        metrics_csv=result.metrics_csv,
        gradients={str(s): [float(v) for v in g] for s, g in result.gradients.items()},
    )


class VarianceRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gradient: list[float] = Field(min_length=1)
    k: int = Field(ge=0)
    epsilon: float = Field(gt=0)
    mc_samples: int = Field(default=0, ge=0)
    seed: int = Field(default=0, ge=0)


class KeepProbsSummary(BaseModel):
    kept_surely: int  # coordinates with p = 1
    min: float
    mean: float
    sum: float


class BoundReport(BaseModel):
    holds: bool
    lhs: float
    rhs: float
    slack: float


class McReport(BaseModel):
    samples: int
    empirical_second_moment: float
    max_abs_mean_error: float


class VarianceResponse(BaseModel):
    schema_version: int
    m: int
    k: int
    epsilon: float
    r: float
    constraint_violations: list[int]
    keep_probs: KeepProbsSummary
    baseline_second_moment: float  # sum g_i^2, the no-dropout floor
    estimator_second_moment: float  # sum g_i^2 / p_i
    bound: BoundReport
    mc: McReport | None = None


def _mc_report(g: np.ndarray, p: np.ndarray, samples: int, seed: int) -> McReport:
    """Chunked Monte-Carlo moments of the sparsified estimator, one stream."""
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    scaled = np.divide(g, p, out=np.zeros_like(g), where=p > 0)
    mean_acc = np.zeros_like(g)
    second_acc = 0.0
    done = 0
    while done < samples:
        chunk = min(samples - done, max(1, 1_000_000 // g.size))
        draws = (rng.random((chunk, g.size)) < p) * scaled
        mean_acc += draws.sum(axis=0)
        second_acc += float((draws**2).sum())
        done += chunk
    return McReport(
        samples=samples,
        empirical_second_moment=second_acc / samples,
        max_abs_mean_error=float(np.abs(mean_acc / samples - g).max()),
    )


@app.post("/analysis/variance", response_model=VarianceResponse, response_model_exclude_none=True)
def analyze_variance_endpoint(req: VarianceRequest) -> VarianceResponse:
    g = np.asarray(req.gradient, dtype=np.float64)
    try:
        solution = solve_r(g, req.k, req.epsilon)
        p = keep_probs(g, req.k, solution.r) if solution.r > 0 else np.ones(g.size)
        bound = check_bound(g, req.k, req.epsilon)
        second_moment = estimator_variance(g, p)
    except AnalysisError as exc:
        raise _error(400, "analysis", str(exc)) from exc
    except InputError as exc:
        raise _error(400, "config", str(exc)) from exc
    mc = _mc_report(g, p, req.mc_samples, req.seed) if req.mc_samples > 0 else None
    return VarianceResponse(
        schema_version=SCHEMA_VERSION,
        m=g.size,
        k=req.k,
        epsilon=req.epsilon,
        r=solution.r,
        constraint_violations=list(solution.violations),
        keep_probs=KeepProbsSummary(
            kept_surely=int(np.sum(p >= 1.0)),
            min=float(p.min()),
            mean=float(p.mean()),
            sum=float(p.sum()),
        ),
        baseline_second_moment=float(np.sum(g**2)),
        estimator_second_moment=second_moment,
        bound=BoundReport(holds=bound.holds, lhs=bound.lhs, rhs=bound.rhs, slack=bound.slack),
        mc=mc,
    )


class GenDataRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default=0, ge=0)
    classes: int = Field(default=3, ge=2)
    dim: int = Field(default=8, ge=2)
    n_per_class: int = Field(default=200, ge=1)
    spread: float = Field(default=0.6, gt=0)


class GenDataResponse(BaseModel):
    rows: int
    dim: int
    class_count: int
    csv: str


@app.post("/datasets/generate", response_model=GenDataResponse)
def gen_data_endpoint(req: GenDataRequest) -> GenDataResponse:
    try:
        ds = synth_blobs(req.seed, req.classes, req.dim, req.n_per_class, req.spread)
    except InputError as exc:
        raise _error(400, "config", str(exc)) from exc
    return GenDataResponse(
        rows=ds.n, dim=ds.dim, class_count=ds.class_count, csv=dataset_csv_text(ds)
    )
