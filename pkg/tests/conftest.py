import os

# single-threaded BLAS before numpy loads: the solver interleaves small
# kernels where thread spin-up costs far more than it buys
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

import flcellfree as fl  # noqa: E402


@pytest.fixture(scope="session")
def small_cfg():
    return fl.SystemConfig(M=4, N=2, K=2, D_km=0.3)


@pytest.fixture(scope="session")
def small_stats(small_cfg):
    topo = fl.generate_topology(small_cfg, seed=3)
    return fl.channel_stats(topo, small_cfg, seed=5)


def rand_instance(M, N, K, seed, D_km=0.4):
    cfg = fl.SystemConfig(M=M, N=N, K=K, D_km=D_km)
    topo = fl.generate_topology(cfg, seed=seed)
    stats = fl.channel_stats(topo, cfg, seed=seed + 9999)
    return cfg, stats
