"""HTTP front end over a loaded store and (optionally) a trained estimator."""

from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from .exact import EnumerationBudgetExceeded, UnsupportedQuery, brute_force_cardinality, exact_cardinality
from .hrqe import Hrqe
from .query import InvalidQuery, Query, QueryFormatError, check, from_dict
from .sampling import estimate_sampling
from .store import Hkg, stats


class FactPatternModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    s: str
    p: str
    o: str
    quals: list[tuple[str, str]] = Field(default_factory=list)


class QueryModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str = ""
    pattern: Optional[str] = None
    facts: list[FactPatternModel]
    card: Optional[int] = None

    def to_query(self) -> Query:
        try:
            return from_dict(self.model_dump())
        except QueryFormatError as exc:
            raise HTTPException(422, str(exc)) from exc


class CardinalityRequest(BaseModel):
    query: QueryModel
    mode: Literal["exact", "brute"] = "exact"


class CardinalityResponse(BaseModel):
    id: str
    card: int
    mode: str


class EstimateRequest(BaseModel):
    query: QueryModel
    method: Literal["sampling", "hrqe"] = "sampling"
    samples: int = Field(1000, gt=0)
    seed: int = 0


class EstimateResponse(BaseModel):
    id: str
    estimate: float
    method: str


class StatsResponse(BaseModel):
    fact_count: int
    qualified_fraction: float
    entity_count: int
    relation_count: int


class HealthResponse(BaseModel):
    status: str
    model_loaded: bool


def _checked(model: QueryModel) -> Query:
    q = model.to_query()
    try:
        check(q)
    except InvalidQuery as exc:
        raise HTTPException(422, "; ".join(exc.errors)) from exc
    return q


def create_app(hkg: Hkg, model: Optional[Hrqe] = None, brute_budget: int = 5_000_000) -> FastAPI:
    app = FastAPI(title="hkgce", version="0.1.0")

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", model_loaded=model is not None)

    @app.get("/stats", response_model=StatsResponse)
    def get_stats():
        st = stats(hkg)
        return StatsResponse(fact_count=st.fact_count, qualified_fraction=st.qualified_fraction,
                             entity_count=st.entity_count, relation_count=st.relation_count)

    @app.post("/cardinality", response_model=CardinalityResponse)
    def cardinality(req: CardinalityRequest):
        q = _checked(req.query)
        try:
            if req.mode == "exact":
                card = exact_cardinality(hkg, q)
            else:
                card = brute_force_cardinality(hkg, q, budget=brute_budget)
        except UnsupportedQuery as exc:
            raise HTTPException(422, f"unsupported by the exact engine: {exc}") from exc
        except EnumerationBudgetExceeded as exc:
            raise HTTPException(413, str(exc)) from exc
        return CardinalityResponse(id=q.id, card=card, mode=req.mode)

    @app.post("/estimate", response_model=EstimateResponse)
    def estimate(req: EstimateRequest):
        q = _checked(req.query)
        if req.method == "sampling":
            value = estimate_sampling(hkg, q, req.samples, np.random.default_rng(req.seed))
        else:
            if model is None:
                raise HTTPException(409, "no HRQE model loaded")
            value = float(model.estimate(q))
        return EstimateResponse(id=q.id, estimate=value, method=req.method)

    return app
