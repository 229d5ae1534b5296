"""
Runs API: execute pipeline commands and read back verification reports
"""
import logging
from pathlib import Path
from typing import List, Optional

from fastapi import APIRouter, HTTPException, Query
from pydantic import BaseModel, Field, model_validator

import config
from pipeline.commands import COMMANDS, run_command
from utils.snapshot_io import read_json

router = APIRouter()
logger = logging.getLogger(__name__)

MAX_CONFIG_LENGTH = 100_000

# exit code -> HTTP status for failed commands
STATUS_FOR_EXIT = {
    config.EXIT_CONFIG: 400,
    config.EXIT_INCOMPLETE: 409,
    config.EXIT_INVARIANT: 422,
    config.EXIT_UNEXPECTED: 500,
}


class RunRequest(BaseModel):
    config_text: Optional[str] = Field(None, max_length=MAX_CONFIG_LENGTH)
    config_path: Optional[str] = None
    out_dir: Optional[str] = None

    @model_validator(mode="after")
    def one_source(self):
        if (self.config_text is None) == (self.config_path is None):
            raise ValueError("give exactly one of config_text and config_path")
        return self


class RunResponse(BaseModel):
    command: str
    exit_code: int
    out_dir: str
    artifacts: List[str] = []


@router.post("/runs/{command}", response_model=RunResponse)
def run(command: str, request: RunRequest):
    """Run one command synchronously"""
    if command not in COMMANDS:
        raise HTTPException(status_code=404, detail=f"Unknown command. Supported: {sorted(COMMANDS)}")
    config_path = Path(request.config_path) if request.config_path else None
    if config_path is not None and not config_path.is_file():
        raise HTTPException(status_code=400, detail="Config file not found")

    result = run_command(command, config_path=config_path, config_text=request.config_text,
                         out=Path(request.out_dir) if request.out_dir else None)
    if result.exit_code != config.EXIT_OK:
        status = STATUS_FOR_EXIT.get(result.exit_code, 500)
        logger.error(f"API run {command} failed with exit code {result.exit_code}")
        raise HTTPException(status_code=status, detail={"exit_code": result.exit_code,
                                                        "message": result.message})
    return RunResponse(
        command=command,
        exit_code=result.exit_code,
        out_dir=str(result.out_dir),
        artifacts=[str(a) for a in result.artifacts],
    )


@router.get("/runs/report")
def get_report(out_dir: str = Query(..., description="Output directory of a verify run")):
    """Return the verification report of an output directory"""
    path = Path(out_dir) / config.REPORT_NAME
    if not path.is_file():
        raise HTTPException(status_code=404, detail="No verification report in this directory")
    try:
        return read_json(path)
    except ValueError as e:
        logger.error(f"Unreadable report {path}: {str(e)}")
        raise HTTPException(status_code=500, detail="Verification report is unreadable")
