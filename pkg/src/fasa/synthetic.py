"""Seeded synthetic datasets for tests and demos.

``cic_like_frame`` imitates the layout of a CICFlowMeter SYN-day export
(padded header names, identifier columns, constant columns, ``-1`` initial
window values, ``Infinity``/``NaN`` rates). The values are invented; only the
shape of the cleaning problem is realistic.
"""

from __future__ import annotations

import numpy as np
import pandas as pd


def separable_2d(n: int = 2000, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Uniform points in the unit square split by the line x0 + 0.7 x1 = 0.85."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, (n, 2))
    return X, (X[:, 0] + 0.7 * X[:, 1] > 0.85).astype(np.int64)


def xor_2d(n: int = 2000, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Uniform points labelled by which diagonal quadrant pair they fall in."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, (n, 2))
    return X, ((X[:, 0] > 0.5) ^ (X[:, 1] > 0.5)).astype(np.int64)


def single_rule_data(n_inputs: int, n: int = 200, seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(X, y, theta) with y = X @ theta[:-1] + theta[-1] exactly."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, n_inputs))
    theta = rng.normal(size=n_inputs + 1)
    return X, X @ theta[:-1] + theta[-1], theta


def cic_like_frame(n_benign: int = 1000, n_syn: int = 6000, seed: int = 0) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    n = n_benign + n_syn
    syn = np.r_[np.zeros(n_benign, bool), np.ones(n_syn, bool)]
    rng.shuffle(syn)

    fwd_pkts = np.where(syn, rng.integers(1, 3, n), rng.integers(1, 40, n))
    fwd_len = np.where(
        syn,
        np.where(rng.random(n) < 0.9, 0.0, rng.integers(1, 12, n) * 6.0),
        np.round(rng.lognormal(6.0, 1.2, n)),
    )
    fwd_mean = fwd_len / fwd_pkts
    duration = np.where(syn, rng.integers(0, 200, n), rng.integers(1, 5_000_000, n))
    ack = np.where(syn, rng.random(n) < 0.02, rng.random(n) < 0.75).astype(int)
    urg = np.where(syn, 0, rng.random(n) < 0.25).astype(int)
    init_fwd = np.where(
        syn,
        rng.choice([5840, 29200, 8192], n),
        np.where(rng.random(n) < 0.2, -1, rng.integers(256, 65536, n)),
    )
    init_bwd = np.where(rng.random(n) < 0.5, -1, rng.integers(0, 65536, n))
    min_seg = np.where(syn, 20, rng.choice([20, 32, 40], n))
    inbound = np.where(syn, rng.random(n) < 0.99, rng.random(n) < 0.3).astype(int)
    with np.errstate(divide="ignore", invalid="ignore"):
        bytes_s = fwd_len / (duration / 1e6)
    bytes_s_txt = np.where(
        duration == 0, np.where(fwd_len == 0, "NaN", "Infinity"), np.char.mod("%.6f", np.nan_to_num(bytes_s))
    )

    def ip(k):
        return [f"192.168.{a}.{b}" for a, b in zip(k // 256 % 256, k % 256)]

    src = rng.integers(0, 65536, n)
    dst = rng.integers(0, 65536, n)
    frame = pd.DataFrame(
        {
            "Unnamed: 0": np.arange(n),
            "Flow ID": [f"f{i}" for i in range(n)],
            " Source IP": ip(src),
            " Source Port": rng.integers(1024, 65536, n),
            " Destination IP": ip(dst),
            " Destination Port": rng.choice([80, 443, 53], n),
            " Protocol": 6,
            " Timestamp": [f"2018-12-01 13:{i // 600 % 60:02d}:{i // 10 % 60:02d}" for i in range(n)],
            " Flow Duration": duration,
            " Total Fwd Packets": fwd_pkts,
            " Total Backward Packets": rng.integers(0, 30, n),
            "Total Length of Fwd Packets": fwd_len,
            " Total Length of Bwd Packets": np.round(rng.lognormal(5.0, 1.5, n)),
            " Fwd Packet Length Max": fwd_mean * rng.uniform(1.0, 1.1, n),
            " Fwd Packet Length Mean": fwd_mean,
            " Bwd Packet Length Mean": rng.uniform(0, 500, n),
            "Flow Bytes/s": bytes_s_txt,
            " Flow IAT Mean": rng.exponential(1e4, n),
            "Bwd PSH Flags": 0,
            " Fwd URG Flags": 0,
            " Bwd URG Flags": 0,
            "FIN Flag Count": 0,
            " PSH Flag Count": 0,
            " ACK Flag Count": ack,
            " URG Flag Count": urg,
            " ECE Flag Count": 0,
            " Fwd Avg Bytes/Bulk": 0,
            " Fwd Avg Packets/Bulk": 0,
            " Fwd Avg Bulk Rate": 0,
            " Bwd Avg Bytes/Bulk": 0,
            " Bwd Avg Packets/Bulk": 0,
            "Bwd Avg Bulk Rate": 0,
            "Init_Win_bytes_forward": init_fwd,
            " Init_Win_bytes_backward": init_bwd,
            " min_seg_size_forward": min_seg,
            "SimillarHTTP": 0,
            " Inbound": inbound,
            " Label": np.where(syn, "Syn", "BENIGN"),
        }
    )
    return frame


def write_cic_like(path, n_benign: int = 1000, n_syn: int = 6000, seed: int = 0) -> None:
    cic_like_frame(n_benign, n_syn, seed).to_csv(path, index=False)
