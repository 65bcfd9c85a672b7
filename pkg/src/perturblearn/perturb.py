"""Single-latent perturbation experiments against an SCM oracle."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .scm import ScmSpec, evaluate


@dataclass(frozen=True)
class PerturbConfig:
    B: float = 3.0
    samples_per_latent: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError("B must be positive")
        if self.samples_per_latent < 1:
            raise ValueError("samples_per_latent must be >= 1")


@dataclass(frozen=True)
class PerturbationRecord:
    sample_id: int
    latent_index: int
    dz: float
    da: np.ndarray


@dataclass
class PerturbationDataset:
    """Pooled perturbation records, one row per (base sample, perturbed latent).

    ``da_raw`` holds ``a(z) - a(z~)``; ``da`` is the same matrix divided
    column-wise by ``attr_scales``.
    """

    attribute_names: tuple[str, ...]
    latent_dim: int
    sample_id: np.ndarray
    latent: np.ndarray
    dz: np.ndarray
    da_raw: np.ndarray
    attr_scales: np.ndarray
    inert: np.ndarray

    @property
    def da(self) -> np.ndarray:
        return self.da_raw / self.attr_scales

    @property
    def inert_attrs(self) -> list[str]:
        return [n for n, f in zip(self.attribute_names, self.inert) if f]

    def __len__(self):
        return len(self.dz)

    def records(self):
        for k in range(len(self)):
            yield PerturbationRecord(int(self.sample_id[k]), int(self.latent[k]), float(self.dz[k]), self.da_raw[k])

    @classmethod
    def from_raw(cls, attribute_names, latent_dim, sample_id, latent, dz, da_raw):
        da_raw = np.asarray(da_raw, dtype=np.float64)
        _, scales, inert = standardize(da_raw)
        return cls(
            attribute_names=tuple(attribute_names),
            latent_dim=int(latent_dim),
            sample_id=np.asarray(sample_id, dtype=np.int64),
            latent=np.asarray(latent, dtype=np.int64),
            dz=np.asarray(dz, dtype=np.float64),
            da_raw=da_raw,
            attr_scales=scales,
            inert=inert,
        )


def standardize(raw):
    """Divide each column by its sample standard deviation (ddof=1).

    No centring. Columns with zero (or undefined) spread keep scale 1 and are
    flagged inert. Returns ``(scaled, scales, inert)``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.size == 0:
        raise ValueError("standardize expects a nonempty 2-d matrix")
    if raw.shape[0] > 1:
        sd = raw.std(axis=0, ddof=1)
    else:
        sd = np.zeros(raw.shape[1])
    inert = ~(sd > 0)
    scales = np.where(inert, 1.0, sd)
    return raw / scales, scales, inert


def _perturb_latent(spec, cfg, i, seed_seq):
    rng = np.random.default_rng(seed_seq)
    n = cfg.samples_per_latent
    z = rng.standard_normal((n, spec.latent_dim))
    z_tilde = z.copy()
    z_tilde[:, i] = rng.uniform(-cfg.B, cfg.B, size=n)
    da = evaluate(spec, z) - evaluate(spec, z_tilde)
    return z[:, i] - z_tilde[:, i], da


def run_perturbations(spec: ScmSpec, cfg: PerturbConfig, workers: int = 1) -> PerturbationDataset:
    """Perturb each latent coordinate in turn and pool the attribute deltas.

    Every latent gets its own child seed, so output bytes do not depend on
    ``workers``.
    """
    d, n = spec.latent_dim, cfg.samples_per_latent
    seeds = np.random.SeedSequence(cfg.seed).spawn(d)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda i: _perturb_latent(spec, cfg, i, seeds[i]), range(d)))
    else:
        blocks = [_perturb_latent(spec, cfg, i, seeds[i]) for i in range(d)]
    dz = np.concatenate([b[0] for b in blocks])
    da_raw = np.vstack([b[1] for b in blocks])
    return PerturbationDataset.from_raw(
        spec.attribute_names,
        d,
        sample_id=np.arange(d * n),
        latent=np.repeat(np.arange(d), n),
        dz=dz,
        da_raw=da_raw,
    )
