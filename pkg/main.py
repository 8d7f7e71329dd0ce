from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
import uvicorn

from app.core.config import get_settings
from app.core.logging import configure_logging
from app.routers import cpm, maps, runs, scenarios

SERVICE = "GEVBEV API"
VERSION = "1.0.0"

settings = get_settings()

app = FastAPI(
    title=SERVICE,
    description="Gaussian-evidential BEV maps and uncertainty-gated CPM selection",
    version=VERSION,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.cors_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.on_event("startup")
async def startup_event():
    configure_logging(settings.log_level)


app.include_router(scenarios.router, prefix="/api/scenarios", tags=["scenarios"])
app.include_router(runs.router, prefix="/api/runs", tags=["runs"])
app.include_router(maps.router, prefix="/api/maps", tags=["maps"])
app.include_router(cpm.router, prefix="/api/cpm", tags=["cpm"])

# ==================== ROOT ====================

@app.get("/")
async def root():
    return {
        "status": "ok",
        "service": SERVICE,
        "message": "Backend online",
        "version": VERSION,
    }

# ==================== HEALTH ====================

@app.get("/health")
async def health_check():
    return {
        "status": "healthy",
        "service": SERVICE,
        "version": VERSION,
        "threads": settings.worker_count,
    }


if __name__ == "__main__":
    uvicorn.run(app, host=settings.host, port=settings.port)
