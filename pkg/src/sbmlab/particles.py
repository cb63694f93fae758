"""Branching Brownian particle approximation of the measure-valued diffusion.

A population of equal-mass particles performs independent Gaussian steps; after
each move every particle independently dies or splits into two, each with
probability rate*dt/2. With rate equal to the particle count per unit mass this
discretizes the critical measure-valued branching diffusion whose total-mass
variance grows linearly in time.

Replicate RNG streams are counter-split from the master seed:
stream(replicate) = PCG64(SeedSequence(seed, spawn_key=(replicate,))), a
deterministic function of (seed, replicate) only, so results are independent
of worker count and scheduling order.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from joblib import Parallel, delayed

from .kernels import KernelBatch, KernelDescriptor, SingularHitError

DEFAULT_T_CAP = 50.0


@dataclass(frozen=True)
class SimConfig:
    """Immutable simulation parameters; hash-identified for reproducibility."""

    dim: int = 3
    n_init: int = 1000                       # particles per unit of initial mass
    dt: float | None = None                  # default: 1 / (4 * branching_rate)
    t_max: float | None = 1.0                # None: run to extinction (t_cap censored)
    t_cap: float = DEFAULT_T_CAP
    seed: int = 0
    branching_rate: float | None = None      # default: n_init
    initial_measure: tuple = ((1.0, None),)  # (mass, point); None = origin
    report_times: tuple = ()
    singular_floor: float = 1e-8
    functional_stride: int = 1               # evaluate kernels every k-th step

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        rate = self.branching_rate if self.branching_rate is not None else self.n_init
        if rate <= 0:
            raise ValueError("branching_rate must be positive")
        dt = self.dt if self.dt is not None else 1.0 / (4.0 * rate)
        if dt > 1.0 / (4.0 * rate) + 1e-15:
            raise ValueError("dt must satisfy dt <= 1/(4*branching_rate)")
        if self.functional_stride < 1:
            raise ValueError("functional_stride must be >= 1")
        atoms = []
        for mass, point in self.initial_measure:
            if mass <= 0:
                raise ValueError("atom masses must be positive")
            if point is None:
                point = (0.0,) * self.dim
            point = tuple(float(c) for c in point)
            if len(point) != self.dim:
                raise ValueError("atom location has wrong dimension")
            atoms.append((float(mass), point))
        object.__setattr__(self, "initial_measure", tuple(atoms))
        object.__setattr__(self, "report_times", tuple(float(t) for t in self.report_times))

    @property
    def rate(self) -> float:
        return self.branching_rate if self.branching_rate is not None else float(self.n_init)

    @property
    def step(self) -> float:
        return self.dt if self.dt is not None else 1.0 / (4.0 * self.rate)

    @property
    def horizon(self) -> float:
        return self.t_cap if self.t_max is None else self.t_max

    def config_hash(self) -> str:
        payload = {
            "dim": self.dim, "n_init": self.n_init, "dt": self.step,
            "t_max": self.t_max, "t_cap": self.t_cap, "seed": self.seed,
            "rate": self.rate, "initial_measure": self.initial_measure,
            "report_times": self.report_times, "floor": self.singular_floor,
            "stride": self.functional_stride,
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ParticleCloud:
    """Weighted empirical measure: positions plus the uniform particle mass."""

    time: float
    positions: np.ndarray
    unit_mass: float

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def total_mass(self) -> float:
        return self.count * self.unit_mass

    @property
    def extinct(self) -> bool:
        return self.count == 0


def measure_apply(cloud: ParticleCloud, kernel: KernelDescriptor,
                  floor: float | None = None) -> float:
    """X_t(phi) = unit_mass * sum of kernel values over particles.

    floor=None raises on a singular-kernel hit at its center.
    """
    if cloud.count == 0:
        return 0.0
    values, _ = kernel.evaluate(cloud.positions, floor=floor)
    return cloud.unit_mass * float(values.sum())


@dataclass
class PathRecord:
    """Per-path summaries: functionals at report times plus running occupation
    integrals, the extinction time, and floored-singularity diagnostics.
    Snapshot particle positions are retained only when requested."""

    config_hash: str
    replicate: int
    report_times: np.ndarray
    mass: np.ndarray
    functionals: dict
    accumulators: dict
    extinction_time: float | None
    censored: bool
    floored_hits: dict
    final_count: int
    snapshots: dict | None = None   # report time -> (count, dim) positions

    def record_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.config_hash.encode())
        h.update(np.ascontiguousarray(self.report_times).tobytes())
        h.update(np.ascontiguousarray(self.mass).tobytes())
        for kid in sorted(self.functionals):
            h.update(kid.encode())
            h.update(np.ascontiguousarray(self.functionals[kid]).tobytes())
            h.update(np.ascontiguousarray(self.accumulators[kid]).tobytes())
        h.update(str(self.extinction_time).encode())
        return h.hexdigest()[:16]

    def to_json(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "replicate": self.replicate,
            "report_times": [float(t) for t in self.report_times],
            "mass": [float(v) for v in self.mass],
            "functionals": {k: [float(x) for x in v]
                            for k, v in sorted(self.functionals.items())},
            "accumulators": {k: [float(x) for x in v]
                             for k, v in sorted(self.accumulators.items())},
            "extinction_time": self.extinction_time,
            "censored": self.censored,
            "floored_hits": dict(sorted(self.floored_hits.items())),
            "final_count": self.final_count,
            "record_hash": self.record_hash(),
        }


def write_path_json(record: PathRecord, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(record.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_snapshots_csv(record: PathRecord, path: str) -> None:
    """Raw snapshot dump: one row per (t, particle index, coordinates)."""
    if not record.snapshots:
        raise ValueError("record carries no snapshots; simulate with "
                         "keep_positions=True")
    with open(path, "w") as fh:
        dim = next(iter(record.snapshots.values())).shape[1]
        fh.write("t,particle," + ",".join(f"x{i}" for i in range(dim)) + "\n")
        for t in sorted(record.snapshots):
            for idx, row in enumerate(record.snapshots[t]):
                fh.write(f"{t!r},{idx}," + ",".join(repr(float(c)) for c in row)
                         + "\n")


def occupation_integral(path: PathRecord, kernel_id: str, t: float | None = None) -> float:
    """Accumulated integral of X_s(kernel) up to report time t (default: last)."""
    if kernel_id not in path.accumulators:
        raise KeyError(f"kernel {kernel_id!r} was not registered before simulation")
    series = path.accumulators[kernel_id]
    if t is None:
        return float(series[-1])
    idx = int(np.argmin(np.abs(path.report_times - t)))
    if abs(path.report_times[idx] - t) > 1e-9 + 1e-6 * max(t, 1.0):
        raise ValueError(f"t={t} is not a report time of this record")
    return float(series[idx])


def functional_at(path: PathRecord, kernel_id: str, t: float | None = None) -> float:
    """Snapshot functional X_t(kernel) at a report time (default: last)."""
    if kernel_id not in path.functionals:
        raise KeyError(f"kernel {kernel_id!r} was not registered before simulation")
    series = path.functionals[kernel_id]
    if t is None:
        return float(series[-1])
    idx = int(np.argmin(np.abs(path.report_times - t)))
    if abs(path.report_times[idx] - t) > 1e-9 + 1e-6 * max(t, 1.0):
        raise ValueError(f"t={t} is not a report time of this record")
    return float(series[idx])


def _rng_for(seed: int, replicate: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(replicate,))
    return np.random.Generator(np.random.SFC64(ss))


class _NoiseBuffer:
    """Block-buffered Gaussian increments, pre-scaled by sqrt(dt).

    Drawing normals in large blocks amortizes generator call overhead; the
    consumption order is a pure function of (stream, request sizes), so paths
    stay deterministic.
    """

    def __init__(self, rng: np.random.Generator, dim: int, scale: float):
        self._rng = rng
        self._dim = dim
        self._scale = scale
        self._buf = np.empty(0)
        self._ptr = 0

    def take(self, n: int) -> np.ndarray:
        need = n * self._dim
        if self._ptr + need > self._buf.size:
            size = max(need, self._dim * 16 * max(n, 1024))
            self._buf = self._rng.standard_normal(size)
            self._buf *= self._scale
            self._ptr = 0
        out = self._buf[self._ptr:self._ptr + need].reshape(n, self._dim)
        self._ptr += need
        return out


def _initial_positions(config: SimConfig) -> np.ndarray:
    parts = []
    for mass, point in config.initial_measure:
        count = int(round(mass * config.n_init))
        if count == 0:
            raise ValueError(f"atom of mass {mass} rounds to zero particles")
        parts.append(np.tile(np.asarray(point), (count, 1)))
    return np.concatenate(parts, axis=0)


def simulate_block(config: SimConfig,
                   kernels: Mapping[str, KernelDescriptor] | None,
                   n_reps: int, stream_index: int = 0,
                   replicate_base: int = 0,
                   keep_positions: bool = False) -> list[PathRecord]:
    """Run n_reps independent paths off one RNG stream, stepped together.

    Per step every particle takes a Gaussian move of per-coordinate variance
    dt, then dies or splits in two, each with probability rate*dt/2. All
    replicates share the flat particle arrays (grouped contiguously per
    replicate), which amortizes per-step costs; kernel functionals are
    evaluated every functional_stride-th step (and at report steps) with
    trapezoid time integration on the evaluation grid.
    """
    kernels = dict(kernels or {})
    batch = KernelBatch(kernels, config.dim, floor=config.singular_floor)
    rng = _rng_for(config.seed, stream_index)
    dt = config.step
    q_half = 0.5 * config.rate * dt
    unit_mass = 1.0 / config.n_init
    run_to_extinction = config.t_max is None
    stride = config.functional_stride
    n_steps = max(1, int(round(config.horizon / dt)))

    def snap(t: float) -> int:
        i = min(n_steps, max(1, int(round(t / dt))))
        return min(n_steps, max(1, stride * int(round(i / stride)) or stride))

    report_idx = sorted({snap(t) for t in config.report_times}) or [n_steps]
    report_set = {i: k for k, i in enumerate(report_idx)}
    n_rep_times = len(report_idx)

    init = _initial_positions(config)
    m0 = init.shape[0]
    positions = np.tile(init, (n_reps, 1))
    rep_ids = np.repeat(np.arange(n_reps, dtype=np.int32), m0)
    k = batch.n_kernels

    def eval_now():
        bounds = np.searchsorted(rep_ids, np.arange(n_reps, dtype=np.int32))
        res, hits = batch.segment_sums(positions, bounds)
        counts = np.diff(np.append(bounds, rep_ids.size))
        return res, hits, counts

    sums_prev, _, counts = eval_now()
    t_prev_eval = 0.0
    acc = np.zeros((n_reps, k))
    hits_total = np.zeros(k, dtype=int)
    ext_time = np.full(n_reps, np.nan)

    out_mass = np.zeros((n_rep_times, n_reps))
    out_fun = np.zeros((n_rep_times, n_reps, k))
    out_acc = np.zeros((n_rep_times, n_reps, k))
    filled = np.zeros(n_rep_times, dtype=bool)
    snapshots: dict = {j: {} for j in range(n_rep_times)} if keep_positions else {}

    noise = _NoiseBuffer(rng, config.dim, math.sqrt(dt))
    last_step = n_steps
    for step_i in range(1, n_steps + 1):
        m = positions.shape[0]
        positions += noise.take(m)
        u = rng.random(m)
        offspring = (u >= q_half).view(np.int8) + (u >= 1.0 - q_half)
        positions = np.repeat(positions, offspring, axis=0)
        rep_ids = np.repeat(rep_ids, offspring)
        if step_i % stride == 0 or step_i in report_set or positions.shape[0] == 0:
            t_cur = step_i * dt
            sums_cur, hits, counts = eval_now()
            hits_total += hits
            acc += (0.5 * (t_cur - t_prev_eval)) * (sums_prev + sums_cur)
            sums_prev = sums_cur
            t_prev_eval = t_cur
            newly_dead = np.isnan(ext_time) & (counts == 0)
            ext_time[newly_dead] = t_cur
            if step_i in report_set:
                j = report_set[step_i]
                out_mass[j] = counts * unit_mass
                out_fun[j] = sums_prev * unit_mass
                out_acc[j] = acc * unit_mass
                filled[j] = True
                if keep_positions:
                    for rpt in range(n_reps):
                        snapshots[j][rpt] = positions[rep_ids == rpt].copy()
            if positions.shape[0] == 0:
                last_step = step_i
                break

    # freeze remaining report rows (only reachable when everything died early)
    for idx_step, j in report_set.items():
        if not filled[j]:
            out_acc[j] = acc * unit_mass
    final_counts = np.bincount(rep_ids, minlength=n_reps)

    cfg_hash = config.config_hash()
    times = np.array(report_idx, dtype=float) * dt
    ids = batch.ids
    records = []
    for rpt in range(n_reps):
        et = None if math.isnan(ext_time[rpt]) else float(ext_time[rpt])
        snaps = None
        if keep_positions:
            empty = np.zeros((0, config.dim))
            snaps = {float(times[j]): snapshots[j].get(rpt, empty)
                     for j in range(n_rep_times)}
        records.append(PathRecord(
            config_hash=cfg_hash,
            replicate=replicate_base + rpt,
            report_times=times,
            mass=out_mass[:, rpt].copy(),
            functionals={kid: out_fun[:, rpt, i].copy() for i, kid in enumerate(ids)},
            accumulators={kid: out_acc[:, rpt, i].copy() for i, kid in enumerate(ids)},
            extinction_time=et,
            censored=run_to_extinction and et is None,
            floored_hits={kid: int(hits_total[i]) for i, kid in enumerate(ids)},
            final_count=int(final_counts[rpt]),
            snapshots=snaps,
        ))
    return records


def simulate(config: SimConfig, kernels: Mapping[str, KernelDescriptor] | None = None,
             replicate: int = 0, keep_positions: bool = False) -> PathRecord:
    """Run one path; deterministic given (config, replicate)."""
    return simulate_block(config, kernels, 1, stream_index=replicate,
                          replicate_base=replicate,
                          keep_positions=keep_positions)[0]


DEFAULT_BLOCK_SIZE = 16


def run_replicates(config: SimConfig, kernels: Mapping[str, KernelDescriptor] | None,
                   n_replicates: int, workers: int = 1,
                   block_size: int = DEFAULT_BLOCK_SIZE) -> list[PathRecord]:
    """Simulate replicates 0..n-1 in fixed blocks of block_size.

    Block b covers replicates [b*block_size, ...) and consumes the RNG stream
    SeedSequence(seed, spawn_key=(b,)); results are therefore identical for
    any worker count (the block partition, not the scheduling, fixes the
    randomness).
    """
    blocks = [(b, min(block_size, n_replicates - b * block_size))
              for b in range((n_replicates + block_size - 1) // block_size)]
    if workers <= 1:
        parts = [simulate_block(config, kernels, n, stream_index=b,
                                replicate_base=b * block_size)
                 for b, n in blocks]
    else:
        parts = Parallel(n_jobs=workers)(
            delayed(simulate_block)(config, kernels, n, b, b * block_size)
            for b, n in blocks)
    out = [rec for part in parts for rec in part]
    return sorted(out, key=lambda r: r.replicate)


class ClusterBudgetError(RuntimeError):
    def __init__(self, tries: int, rate_estimate: float):
        super().__init__(
            f"no surviving cluster within {tries} tries "
            f"(acceptance rate ~ {rate_estimate:.2e})")
        self.tries = tries
        self.rate_estimate = rate_estimate


@dataclass
class ClusterSample:
    """A single-ancestor path accepted on survival past the threshold."""

    ancestor: tuple
    delta: float
    record: PathRecord
    rejects: int


def sample_cluster(x0, delta: float, config: SimConfig,
                   kernels: Mapping[str, KernelDescriptor] | None = None,
                   max_tries: int = 200_000, start_trial: int = 0) -> ClusterSample:
    """Rejection-sample one single-ancestor path conditioned to survive delta.

    One particle of mass 1/n_init starts at x0; trials run until the recorded
    extinction time exceeds delta. Trial index doubles as the replicate stream
    index, so resampling with a different start_trial is deterministic.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    x0 = tuple(float(c) for c in x0)
    single = replace(config, initial_measure=((1.0 / config.n_init, x0),))
    if single.horizon < delta:
        raise ValueError("horizon shorter than the survival threshold")
    for trial in range(start_trial, start_trial + max_tries):
        rec = simulate(single, kernels, replicate=trial)
        if rec.extinction_time is None or rec.extinction_time > delta:
            return ClusterSample(ancestor=x0, delta=delta, record=rec,
                                 rejects=trial - start_trial)
    expected = 2.0 / (config.n_init * delta)
    raise ClusterBudgetError(max_tries, min(expected, 1.0))


def survival_probability(total_mass: float, t: float) -> float:
    """Limit law P(extinction after t) = 1 - exp(-2 * mass / t)."""
    return 1.0 - math.exp(-2.0 * total_mass / t)
