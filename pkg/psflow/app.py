"""
FastAPI results service for psflow runs
"""
import os

import uvicorn
from fastapi import FastAPI

import config
from utils.logging_config import get_logger, setup_logging

setup_logging(log_level=config.LOG_LEVEL, log_file=config.LOG_FILE)

logger = get_logger(__name__)

from api.runs import router as runs_router

app = FastAPI(
    title="psflow",
    description="Prototype flow, intrinsic scaling and p-Sobolev flow runs",
    version=config.VERSION,
    docs_url="/docs" if os.getenv("ENVIRONMENT") != "production" else None,
    redoc_url="/redoc" if os.getenv("ENVIRONMENT") != "production" else None
)

try:
    app.include_router(runs_router, prefix="/api", tags=["runs"])
    logger.info("API routers configured successfully")
except Exception as e:
    logger.error(f"Failed to configure API routers: {str(e)}")
    raise


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {
        "status": "healthy",
        "version": config.VERSION,
        "artifact_root": str(config.PSFLOW_OUT or config.DEFAULT_OUT),
    }


def serve(host: str = "127.0.0.1", port: int = 8000, reload: bool = False):
    logger.info(f"Starting results service on {host}:{port}")
    uvicorn.run("app:app", host=host, port=port, reload=reload, log_level="info")


if __name__ == "__main__":
    serve(reload=True)
