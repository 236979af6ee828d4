"""Workload generation: synthetic catalogs, Zipf popularity, client arrivals.
All draws come from named seeded streams."""

from __future__ import annotations

import numpy as np

from pcdnsim import model
from pcdnsim.simnet.config import CatalogConfig, WorkloadConfig

US_PER_S = 1_000_000


def build_catalog(cfg: CatalogConfig, rng: np.random.Generator) -> list[model.VideoCatalogEntry]:
    if cfg.mode == "file":
        return model.load_catalog(cfg.path)
    if cfg.mode == "inline":
        return [model.VideoCatalogEntry.create(str(v[0]), float(v[1]), int(v[2]))
                for v in cfg.videos]
    lo, hi = cfg.duration_s
    entries = []
    for i in range(cfg.count):
        duration = round(float(rng.uniform(lo, hi)), 1)
        entries.append(model.VideoCatalogEntry.create(f"v{i:04d}", duration, cfg.bitrate_bps))
    return entries


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, n + 1, dtype=np.float64)
    w = ranks ** -exponent
    return w / w.sum()


def pick_weighted(rng: np.random.Generator, names: list[str], weights: dict[str, float]) -> str:
    keys = sorted(weights)
    total = sum(weights[k] for k in keys)
    p = [weights[k] / total for k in keys]
    return keys[int(rng.choice(len(keys), p=p))]


def arrival_times(cfg: WorkloadConfig, rng: np.random.Generator) -> list[int]:
    """Poisson arrivals for the configured client count, clipped to the
    workload window."""
    out = []
    t = 0.0
    for _ in range(cfg.clients):
        t += float(rng.exponential(1.0 / cfg.arrival_rate_per_s))
        if t >= cfg.duration_s:
            break
        out.append(int(t * US_PER_S))
    return out
