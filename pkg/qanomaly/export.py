"""
Persistence of experiment records: CSV tables through pandas, JSON sidecars and
manifests, the resolved config, and plot-ready series.
"""
import json
import logging
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Union

import pandas as pd

from .analysis import rescale_collapse
from .config import Settings, settings as default_settings
from .errors import NotFoundError
from .schemas import DiffusionEstimate, ExperimentRecord, SpectralSamples, SpreadingCurve

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CURVE_COLUMNS = ["t", "dE2_mean", "dE2_stderr", "n_realizations"]
ESTIMATE_COLUMNS = ["s0", "fdot", "eps", "t_eps", "D", "D_stderr", "X", "Y", "quality"]
SPECTRAL_COLUMNS = ["omega", "C_value", "count"]


def curve_frame(curve: SpreadingCurve) -> pd.DataFrame:
    return pd.DataFrame({
        "t": curve.times,
        "dE2_mean": curve.variance,
        "dE2_stderr": curve.stderr,
        "n_realizations": [curve.n_realizations] * len(curve.times),
    }, columns=CURVE_COLUMNS)


def estimates_frame(estimates: Sequence[DiffusionEstimate]) -> pd.DataFrame:
    rows = [{
        "s0": e.s0,
        "fdot": e.fdot,
        "eps": e.eps,
        "t_eps": e.t_eps,
        "D": e.D,
        "D_stderr": e.stderr,
        "X": e.X,
        "Y": e.Y,
        "quality": e.quality,
    } for e in estimates]
    return pd.DataFrame(rows, columns=ESTIMATE_COLUMNS)


def spectral_frame(samples: SpectralSamples) -> pd.DataFrame:
    return pd.DataFrame({
        "omega": samples.omega_bins,
        "C_value": samples.values,
        "count": samples.counts,
    }, columns=SPECTRAL_COLUMNS)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_curve(curve: SpreadingCurve, directory: PathLike) -> Path:
    """<label>.csv with the averaged series plus <label>.json with parameters and seeds."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{curve.label}.csv"
    curve_frame(curve).to_csv(csv_path, index=False)
    _write_json(directory / f"{curve.label}.json", {
        "label": curve.label,
        "mode": curve.mode,
        "params": curve.params.model_dump(mode="json"),
        "n_realizations": curve.n_realizations,
        "excluded_seeds": curve.excluded_seeds,
        "survival": curve.survival,
    })
    return csv_path


def record_dir(record: ExperimentRecord, output_dir: Optional[PathLike] = None) -> Path:
    base = Path(output_dir) if output_dir is not None else Path(record.config.output_dir)
    return base / record.kind


def save_record(record: ExperimentRecord, output_dir: Optional[PathLike] = None, source: Optional[Settings] = None) -> Path:
    """
    Write record.json, curves/, estimates.csv, spectra/ and resolved_config.env.
    Returns the run directory.
    """
    directory = record_dir(record, output_dir)
    directory.mkdir(parents=True, exist_ok=True)

    (directory / "record.json").write_text(record.model_dump_json(indent=2) + "\n")
    for curve in record.curves:
        write_curve(curve, directory / "curves")
    if record.estimates:
        estimates_frame(record.estimates).to_csv(directory / "estimates.csv", index=False)
    if record.spectra:
        spectra_dir = directory / "spectra"
        spectra_dir.mkdir(exist_ok=True)
        for name, samples in sorted(record.spectra.items()):
            spectral_frame(samples).to_csv(spectra_dir / f"{name}.csv", index=False)

    source = source or default_settings
    resolved = source.model_copy(update=record.config.settings_update(record.kind))
    (directory / "resolved_config.env").write_text("\n".join(resolved.to_env_lines()) + "\n")

    logger.info(f"Saved {record.kind} record to {directory}")
    return directory


def load_record(path: PathLike) -> ExperimentRecord:
    """Load from a run directory or a record.json file."""
    path = Path(path)
    if path.is_dir():
        path = path / "record.json"
    if not path.exists():
        raise NotFoundError(f"no experiment record at {path}")
    return ExperimentRecord.model_validate_json(path.read_text())


def _emit_fig1(record: ExperimentRecord, directory: Path) -> List[Path]:
    written, manifest = [], []
    for curve in record.curves:
        rescaled = rescale_collapse([curve])[0]
        path = directory / f"{curve.label}.csv"
        pd.DataFrame({"t_over_t_eps": rescaled.x, "dE2_scaled": rescaled.y}).to_csv(path, index=False)
        written.append(path)
        manifest.append({
            "file": path.name,
            "label": curve.label,
            "mode": curve.mode,
            "s0": curve.params.s0,
            "fdot": curve.params.fdot,
            "eps": curve.params.eps,
            "t_eps": rescaled.t_eps,
        })
    manifest_path = directory / "manifest.json"
    _write_json(manifest_path, {"kind": "fig1", "series": manifest})
    return written + [manifest_path]


def _emit_fig2(record: ExperimentRecord, directory: Path) -> List[Path]:
    table = estimates_frame(record.estimates)
    written, manifest = [], []
    for s0, group in table.groupby("s0", sort=True):
        path = directory / f"fig2_s0-{s0:g}.csv"
        series = group.sort_values("X")[["X", "Y", "D_stderr", "fdot", "quality"]]
        series.to_csv(path, index=False)
        written.append(path)
        manifest.append({"file": path.name, "s0": float(s0), "points": int(len(series))})
    manifest_path = directory / "manifest.json"
    _write_json(manifest_path, {"kind": "fig2", "series": manifest})
    return written + [manifest_path]


def emit_plotdata(record: ExperimentRecord, which: Literal["fig1", "fig2"], output_dir: PathLike) -> List[Path]:
    """
    Plot-ready CSV series: fig1 -> (t/t_eps, dE2 t_eps^2/hbar^2) per curve,
    fig2 -> (X, Y) per s0. Re-emission rewrites identical bytes.
    """
    if which not in ("fig1", "fig2"):
        raise NotFoundError(f"unknown plot data {which}")
    if record.kind != which:
        raise NotFoundError(f"record holds a {record.kind} experiment, not {which}")
    if which == "fig1" and not record.curves:
        raise NotFoundError("record has no spreading curves")
    if which == "fig2" and not record.estimates:
        raise NotFoundError("record has no diffusion estimates")

    directory = Path(output_dir) / which
    directory.mkdir(parents=True, exist_ok=True)
    written = _emit_fig1(record, directory) if which == "fig1" else _emit_fig2(record, directory)
    logger.info(f"Emitted {len(written)} {which} files to {directory}")
    return written
