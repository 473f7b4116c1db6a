"""Monte Carlo campaigns over the exact per-trial outcome distribution.

Per-trial outcomes are drawn from the 4x4 table computed once per
setting by the protocol module, using a counter-based generator keyed by
(master seed, stream, chunk): identical (config, trials, seed) produce
byte-identical click logs regardless of worker count or chunking.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .devices import ProtocolConfig
from .protocol import TrialModel, build_trial_model

# fixed chunk size: results must not depend on worker count
CHUNK_TRIALS = 1 << 20

WINDOW_PUMP = 0
WINDOW_READ = 1
_WINDOW_NAMES = {WINDOW_PUMP: "pump", WINDOW_READ: "read"}
_WINDOW_CODES = {v: k for k, v in _WINDOW_NAMES.items()}


class CampaignError(ValueError):
    pass


def atomic_write(path, text: str) -> None:
    """Write-then-rename so readers never observe partial files."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-",
                               suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def worker_count() -> int:
    env = os.environ.get("MECHLINK_THREADS", "")
    try:
        cap = int(env) if env else 0
    except ValueError:
        cap = 0
    avail = os.cpu_count() or 1
    if cap > 0:
        return max(1, min(cap, avail))
    return max(1, min(4, avail))


@dataclass
class ClickLog:
    """Sparse per-trial click records plus campaign metadata.

    Rows are sorted by (trial, window, detector); `trial` is the trial
    index, `detector` is 1 or 2, `window` is WINDOW_PUMP or WINDOW_READ.
    """

    n_trials: int
    seed: int
    stream: int
    trial: np.ndarray
    detector: np.ndarray
    window: np.ndarray
    config_snapshot: dict = field(default_factory=dict)

    def __post_init__(self):
        self.trial = np.asarray(self.trial, dtype=np.int64)
        self.detector = np.asarray(self.detector, dtype=np.int8)
        self.window = np.asarray(self.window, dtype=np.int8)
        if not (len(self.trial) == len(self.detector) == len(self.window)):
            raise CampaignError("click columns must have equal length")
        self._validate_rows()

    def _validate_rows(self):
        if len(self.trial) == 0:
            return
        if self.trial.min() < 0 or self.trial.max() >= self.n_trials:
            raise CampaignError("trial index outside campaign range")
        if not (np.isin(self.detector, (1, 2)).all()):
            raise CampaignError("detector must be 1 or 2")
        if not (np.isin(self.window, (WINDOW_PUMP, WINDOW_READ)).all()):
            raise CampaignError("unknown window code")
        key = (self.trial * 4 + self.window * 2 + (self.detector - 1)).astype(np.int64)
        if np.any(np.diff(key) <= 0):
            raise CampaignError("rows must be strictly ordered by (trial, window, detector)")

    def __len__(self):
        return len(self.trial)

    # -- serialization ------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["trial", "detector", "window"])
        names = _WINDOW_NAMES
        for t, d, w in zip(self.trial, self.detector, self.window):
            writer.writerow([int(t), int(d), names[int(w)]])
        return buf.getvalue()

    def metadata(self) -> dict:
        from . import __version__
        return {
            "n_trials": int(self.n_trials),
            "seed": int(self.seed),
            "stream": int(self.stream),
            "clicks": int(len(self)),
            "config": self.config_snapshot,
            "version": __version__,
        }

    def save(self, csv_path, meta_path) -> None:
        atomic_write(csv_path, self.to_csv())
        atomic_write(meta_path, json.dumps(self.metadata(), indent=2,
                                           sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, csv_path, meta_path=None) -> "ClickLog":
        meta = {}
        if meta_path is not None:
            with open(meta_path) as fh:
                meta = json.load(fh)
        trials, dets, wins = [], [], []
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["trial", "detector", "window"]:
                raise CampaignError(f"unexpected click-log header: {header}")
            for row in reader:
                trials.append(int(row[0]))
                dets.append(int(row[1]))
                if row[2] not in _WINDOW_CODES:
                    raise CampaignError(f"unknown window label {row[2]!r}")
                wins.append(_WINDOW_CODES[row[2]])
        n_trials = meta.get("n_trials", (max(trials) + 1) if trials else 0)
        return cls(n_trials=n_trials, seed=meta.get("seed", 0),
                   stream=meta.get("stream", 0),
                   trial=np.array(trials, dtype=np.int64),
                   detector=np.array(dets, dtype=np.int8),
                   window=np.array(wins, dtype=np.int8),
                   config_snapshot=meta.get("config", {}))


# ---------------------------------------------------------------------------
# sampling


def _chunk_rng(seed: int, stream: int, chunk_index: int) -> np.random.Generator:
    key = np.array([np.uint64(seed), np.uint64((stream << 32) | chunk_index)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _sample_chunk(model_tables, seed, stream, chunk_index, start, count):
    """Outcome codes for trials [start, start+count): (pump, read) per trial."""
    pump_cdf, read_cdf = model_tables
    rng = _chunk_rng(seed, stream, chunk_index)
    u = rng.random((count, 2))
    pump_idx = np.searchsorted(pump_cdf, u[:, 0], side="right").astype(np.int8)
    rows = read_cdf[pump_idx]
    read_idx = (u[:, 1, None] >= rows).sum(axis=1).astype(np.int8)
    return pump_idx, read_idx


def _clicks_from_outcomes(start, pump_idx, read_idx):
    """Sparse (trial, detector, window) rows, ordered, from outcome codes."""
    rows_t, rows_d, rows_w = [], [], []
    for window, idx in ((WINDOW_PUMP, pump_idx), (WINDOW_READ, read_idx)):
        for det in (1, 2):
            hits = np.nonzero((idx & det) != 0)[0]
            rows_t.append(hits + start)
            rows_d.append(np.full(len(hits), det, dtype=np.int8))
            rows_w.append(np.full(len(hits), window, dtype=np.int8))
    t = np.concatenate(rows_t)
    d = np.concatenate(rows_d)
    w = np.concatenate(rows_w)
    order = np.lexsort((d, w, t))
    return t[order], d[order], w[order]


def run_campaign(cfg: ProtocolConfig, n_trials: int, seed: int,
                 stream: int = 0, model: TrialModel | None = None,
                 workers: int | None = None,
                 config_snapshot: dict | None = None) -> ClickLog:
    """Sample `n_trials` of the protocol; deterministic in (cfg, n, seed, stream).

    The exact outcome table is computed once; trials are sampled in
    fixed-size chunks whose generators are keyed by chunk index, so any
    worker count yields identical logs.
    """
    if n_trials < 0:
        raise CampaignError("trial count must be non-negative")
    if not 0 <= stream < (1 << 32):
        raise CampaignError("stream must fit in 32 bits")
    if model is None:
        model = build_trial_model(cfg)
    pump_cdf = np.cumsum(model.pump_marginal)
    pump_cdf[-1] = 1.0 + 1e-12
    read_cdf = np.cumsum(model.read_given_pump, axis=1)
    read_cdf[:, -1] = 1.0 + 1e-12
    tables = (pump_cdf, read_cdf)

    n_chunks = math.ceil(n_trials / CHUNK_TRIALS) if n_trials else 0
    jobs = []
    for c in range(n_chunks):
        start = c * CHUNK_TRIALS
        count = min(CHUNK_TRIALS, n_trials - start)
        jobs.append((c, start, count))

    def work(job):
        c, start, count = job
        pump_idx, read_idx = _sample_chunk(tables, seed, stream, c, start, count)
        return _clicks_from_outcomes(start, pump_idx, read_idx)

    n_workers = workers if workers is not None else worker_count()
    if n_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(work, jobs))
    else:
        parts = [work(j) for j in jobs]

    if parts:
        trial = np.concatenate([p[0] for p in parts])
        det = np.concatenate([p[1] for p in parts])
        win = np.concatenate([p[2] for p in parts])
    else:
        trial = np.zeros(0, dtype=np.int64)
        det = np.zeros(0, dtype=np.int8)
        win = np.zeros(0, dtype=np.int8)

    return ClickLog(n_trials=n_trials, seed=seed, stream=stream,
                    trial=trial, detector=det, window=win,
                    config_snapshot=config_snapshot or {})
