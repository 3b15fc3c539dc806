import json
import logging
import os
import tempfile
from pathlib import Path

import uvicorn
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import HTMLResponse
from pydantic import BaseModel, Field

from targetexec import __version__
from targetexec.cli import MANIFEST, run_experiment
from targetexec.config import ConfigError, parse_config, with_overrides
from targetexec.presets import PRESETS

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")
logger = logging.getLogger(__name__)

app = FastAPI(title="targetexec", version=__version__)

# Allow CORS for all origins
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class ExperimentRequest(BaseModel):
    preset: str = "baseline"
    document: str | None = Field(None, description="YAML config document")
    n_paths: int | None = None
    seed: int | None = None
    dt: float | None = None
    strategy: str | None = None
    output_directory: str | None = None


def collect_outputs(out_dir: Path) -> dict:
    """Read back the manifest, the JSON reports and the standalone CSV tables."""
    manifest = json.loads((out_dir / MANIFEST).read_text())
    reports, tables = {}, {}
    report_csvs = set()
    for name in manifest["files"]:
        if name.endswith("_report.json"):
            stem = name.removesuffix("_report.json")
            reports[stem] = json.loads((out_dir / name).read_text())
            report_csvs.update(f"{stem}_{part}.csv" for part in ("moments", "probabilities", "histogram"))
    for name in manifest["files"]:
        if name.endswith(".csv") and name not in report_csvs:
            tables[name.removesuffix(".csv")] = (out_dir / name).read_text()
    return {"manifest": manifest, "reports": reports, "tables": tables}


def _run(req: ExperimentRequest, out_dir: str) -> dict:
    config = parse_config(req.document or "", req.preset)
    config = with_overrides(
        config,
        run={"n_paths": req.n_paths, "master_seed": req.seed, "dt": req.dt, "strategy": req.strategy},
        output={"directory": out_dir},
    )
    run_experiment(config)
    return collect_outputs(Path(out_dir))


@app.post("/api/experiments")
def run_experiment_endpoint(req: ExperimentRequest):
    if req.preset not in PRESETS:
        raise HTTPException(status_code=400, detail=f"unknown preset {req.preset!r}")
    try:
        if req.output_directory:
            return _run(req, req.output_directory)
        with tempfile.TemporaryDirectory(prefix="targetexec-") as tmp:
            return _run(req, tmp)
    except (ConfigError, ValueError) as e:
        logger.warning(f"Experiment {req.preset} rejected: {e}")
        raise HTTPException(status_code=400, detail=str(e)) from e


@app.get("/api/presets")
def list_presets():
    return {"presets": [{"name": p.name, "description": p.description} for p in PRESETS.values()]}


@app.get("/health")
def health_check():
    return {"status": "healthy", "message": "targetexec API is running", "version": __version__}


@app.get("/")
def serve_frontend():
    """Minimal page: pick a preset, run it, show the manifest."""
    options = "".join(f'<option value="{p.name}">{p.name}: {p.description}</option>' for p in PRESETS.values())
    html_content = f"""
    <!DOCTYPE html>
    <html lang="en">
    <head>
        <meta charset="UTF-8">
        <title>targetexec experiments</title>
    </head>
    <body>
        <h1>targetexec</h1>
        <select id="preset">{options}</select>
        <input id="paths" type="number" value="1000" min="1">
        <button id="runBtn">Run</button>
        <pre id="result"></pre>
        <script>
            document.getElementById('runBtn').addEventListener('click', async () => {{
                const out = document.getElementById('result');
                out.textContent = 'Running...';
                const response = await fetch('/api/experiments', {{
                    method: 'POST',
                    headers: {{'Content-Type': 'application/json'}},
                    body: JSON.stringify({{
                        preset: document.getElementById('preset').value,
                        n_paths: parseInt(document.getElementById('paths').value),
                    }}),
                }});
                const data = await response.json();
                out.textContent = JSON.stringify(response.ok ? data.manifest : data, null, 2);
            }});
        </script>
    </body>
    </html>
    """
    return HTMLResponse(content=html_content)


if __name__ == "__main__":
    port = int(os.environ.get("PORT", 8000))
    uvicorn.run(app, host="0.0.0.0", port=port)
