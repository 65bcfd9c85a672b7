"""File formats: perturbation CSV + sidecar, influence-matrix CSV, run manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
from pathlib import Path

import numpy as np

from .perturb import PerturbationDataset
from .sparse_fit import InfluenceMatrix


class FormatError(ValueError):
    """An input file could not be parsed."""


def _r(x: float) -> str:
    return f"{x:.17g}"


def dataset_to_csv(ds: PerturbationDataset) -> tuple[str, str]:
    """Return ``(csv_text, sidecar_json)``; the CSV carries the raw deltas."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "latent", "dz"] + [f"da_{n}" for n in ds.attribute_names])
    for k in range(len(ds)):
        w.writerow([int(ds.sample_id[k]), int(ds.latent[k]), _r(ds.dz[k])] + [_r(v) for v in ds.da_raw[k]])
    sidecar = {
        "attr_scales": {n: float(s) for n, s in zip(ds.attribute_names, ds.attr_scales)},
        "inert_attrs": ds.inert_attrs,
        "latent_dim": ds.latent_dim,
    }
    return buf.getvalue(), json.dumps(sidecar, indent=2)


def dataset_from_csv(text: str, sidecar: str | None = None) -> PerturbationDataset:
    try:
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        if header[:3] != ["sample_id", "latent", "dz"] or not all(h.startswith("da_") for h in header[3:]):
            raise FormatError(f"unexpected perturbation header {header}")
        names = [h[3:] for h in header[3:]]
        body = rows[1:]
        sample_id = np.array([int(r[0]) for r in body], dtype=np.int64)
        latent = np.array([int(r[1]) for r in body], dtype=np.int64)
        dz = np.array([float(r[2]) for r in body])
        da = np.array([[float(v) for v in r[3:]] for r in body]).reshape(len(body), len(names))
    except (IndexError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed perturbation CSV: {exc}") from exc
    meta = json.loads(sidecar) if sidecar else {}
    d = int(meta.get("latent_dim", latent.max() + 1 if len(latent) else 0))
    ds = PerturbationDataset.from_raw(names, d, sample_id, latent, dz, da)
    if "attr_scales" in meta:
        scales = np.array([float(meta["attr_scales"][n]) for n in names])
        inert = np.array([n in set(meta.get("inert_attrs", [])) for n in names])
        ds.attr_scales, ds.inert = scales, inert
    return ds


def matrix_to_csv(W: InfluenceMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["attr"] + [f"z{k}" for k in W.latents])
    for name, row in zip(W.attribute_names, W.values):
        w.writerow([name] + [_r(v) for v in row])
    return buf.getvalue()


def matrix_from_csv(text: str) -> InfluenceMatrix:
    try:
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        if header[0] != "attr" or not all(h.startswith("z") for h in header[1:]):
            raise FormatError(f"unexpected matrix header {header}")
        latents = [int(h[1:]) for h in header[1:]]
        names = [r[0] for r in rows[1:]]
        vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(names), len(latents))
        return InfluenceMatrix(vals, names, latents)
    except FormatError:
        raise
    except (IndexError, ValueError) as exc:
        raise FormatError(f"malformed influence matrix CSV: {exc}") from exc


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def write_manifest(command: str, config: dict, inputs, outputs) -> Path:
    """Write ``<first output>.manifest.json`` describing one CLI stage."""
    from . import __version__
    from ._accel import backend, numba_version

    outputs = [Path(p) for p in outputs]
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "versions": {
            "perturblearn": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "numba": numba_version(),
            "backend": backend(),
        },
    }
    path = outputs[0].with_name(outputs[0].name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
