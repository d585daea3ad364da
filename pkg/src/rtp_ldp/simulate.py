"""Exact event-driven simulation of the interacting run-and-tumble system.

Dynamics: each particle at (x, sigma) jumps to (x + sigma, sigma) at rate N
and flips to (x, -sigma) at the mean-field rate c(sigma, m).  The tilted
model multiplies each rate by exp of the increment of a smooth potential H.
Simulation is exact: event times are exponential with the instantaneous
total rate, and time-dependent tilts are handled by thinning against
per-class envelope rates.

Path functionals are accumulated along the way:

* ``log_radon_nikodym``: (1/N) log of the density of the tilted path law
  against the plain one, for a designated test field (which need not be the
  simulation tilt);
* Dynkin residuals M_t(phi) = <pi_t, phi> - <pi_0, phi> - int L <pi_s, phi> ds
  and their quadratic variation, the time integral of the carre du champ.

Fields constant in time are integrated exactly in O(1) per event inside the
compiled kernel; time-dependent fields require event recording and are
evaluated by replay with adaptive Gauss-Legendre quadrature in t.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import _kernels
from .fields import DensityField, PerturbationField, UniformProfile
from .lattice import LatticeConfiguration, empirical_density
from .rates import SwitchRateFamily
from .rng import Xoshiro, replica_seed, rng_init

__all__ = [
    "SimulationSpec", "PathRecord", "EventLog", "Event",
    "sample_initial", "step_event", "run_path", "replica_ensemble",
    "log_radon_nikodym", "dynkin_residual", "quadratic_variation",
    "aggregate_rates", "empirical_trajectory", "run_batch",
]


@dataclass(frozen=True)
class SimulationSpec:
    """Everything needed to reproduce one path (or a replica family)."""

    n_sites: int
    t_final: float
    seed: int
    initial: object = field(default_factory=lambda: UniformProfile(1.0, 1.0))
    rate_family: SwitchRateFamily = field(default_factory=SwitchRateFamily.constant)
    tilt: PerturbationField | None = None
    snapshot_times: tuple = ()
    log_weight_field: PerturbationField | None = None
    test_functions: Mapping[str, PerturbationField] = field(default_factory=dict)
    record_events: bool = False
    initial_configuration: LatticeConfiguration | None = None

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("n_sites must be positive")
        if self.t_final < 0:
            raise ValueError("t_final must be nonnegative")
        times = tuple(float(t) for t in self.snapshot_times) or (self.t_final,)
        if any(t < 0 or t > self.t_final + 1e-12 for t in times):
            raise ValueError("snapshot times must lie in [0, t_final]")
        if tuple(sorted(times)) != times:
            raise ValueError("snapshot times must be sorted")
        object.__setattr__(self, "snapshot_times", times)
        for name, phi in self.test_functions.items():
            if not phi.is_time_constant():
                raise ValueError(f"test function {name!r} must be constant in time")
        if self.initial_configuration is not None and \
                self.initial_configuration.n_sites != self.n_sites:
            raise ValueError("initial configuration size mismatch")


@dataclass(frozen=True)
class EventLog:
    """Accepted events of one path; enough to replay any path functional."""

    times: np.ndarray
    kinds: np.ndarray   # 0 = active jump, 1 = internal-state flip
    sites: np.ndarray
    layers: np.ndarray  # 0 = sigma +1, 1 = sigma -1

    def __len__(self) -> int:
        return self.times.shape[0]


@dataclass(frozen=True)
class Event:
    kind: str
    site: int
    sigma: int
    time: float


@dataclass
class PathRecord:
    spec: SimulationSpec
    initial: LatticeConfiguration
    snapshot_times: np.ndarray
    snapshots: list
    magnetization_series: np.ndarray
    jump_series: np.ndarray
    flip_series: np.ndarray
    log_radon_nikodym: float | None
    dynkin_residuals: dict
    quadratic_variation: dict
    events: EventLog | None

    @property
    def jump_counts(self) -> dict:
        return {"active": int(self.jump_series[-1]), "flip": int(self.flip_series[-1])}

    @property
    def final(self) -> LatticeConfiguration:
        return self.snapshots[-1]


# ---------------------------------------------------------------------------
# table construction


def _site_positions(n_sites: int) -> np.ndarray:
    return np.arange(n_sites) / n_sites


def _field_site_tables(fld: PerturbationField, n_sites: int, t: float = 0.0):
    """Per-site values, jump increments and flip increments of a field."""
    xs = _site_positions(n_sites)
    vals = np.stack([fld.evaluate(t, xs, 1), fld.evaluate(t, xs, -1)], axis=1)
    jump_inc = np.empty_like(vals)
    jump_inc[:, 0] = np.roll(vals[:, 0], -1) - vals[:, 0]   # x -> x+1
    jump_inc[:, 1] = np.roll(vals[:, 1], 1) - vals[:, 1]    # x -> x-1
    tilde = vals[:, 0] - vals[:, 1]
    flip_inc = np.stack([-tilde, tilde], axis=1)            # value(-sigma) - value(sigma)
    return vals, jump_inc, flip_inc


def _pack_field_modes(fld: PerturbationField):
    modes = [(0, m) for m in fld.plus] + [(1, m) for m in fld.minus]
    if not modes:
        return (np.zeros(0, np.int64), np.zeros(0), np.zeros((0, 1)), np.zeros((0, 1)))
    deg = max(max(len(m.cos), len(m.sin), 1) for _, m in modes)
    layer = np.array([s for s, _ in modes], dtype=np.int64)
    ks = np.array([float(m.k) for _, m in modes])
    cosc = np.zeros((len(modes), deg))
    sinc = np.zeros((len(modes), deg))
    for i, (_, m) in enumerate(modes):
        cosc[i, :len(m.cos)] = m.cos
        sinc[i, :len(m.sin)] = m.sin
    return layer, ks, cosc, sinc


def _tilt_arrays(spec: SimulationSpec):
    """Kernel inputs describing the simulation tilt, plus thinning envelopes."""
    n = spec.n_sites
    zero2 = np.zeros((n, 2))
    packed = (np.zeros(0, np.int64), np.zeros(0), np.zeros((0, 1)), np.zeros((0, 1)))
    if spec.tilt is None or spec.tilt.is_zero():
        return 0, np.ones((n, 2)), np.ones((n, 2)), packed, np.ones(2), np.ones(2)
    tilt = spec.tilt
    if tilt.is_time_constant():
        _, jump_inc, flip_inc = _field_site_tables(tilt, n)
        tjump = np.exp(jump_inc)
        tflip = np.exp(flip_inc)
        env_jump = tjump.max(axis=0)
        env_flip = tflip.max(axis=0)
        return 1, tjump, tflip, packed, env_jump, env_flip
    # time-varying: envelopes from coefficient bounds, rates evaluated at
    # proposal time inside the kernel
    bp = tilt.sup_bound(spec.t_final, 1)
    bm = tilt.sup_bound(spec.t_final, -1)
    env_jump = np.array([math.exp(2.0 * bp), math.exp(2.0 * bm)])
    env_flip = np.array([math.exp(bp + bm), math.exp(bp + bm)])
    return 2, np.ones((n, 2)), np.ones((n, 2)), _pack_field_modes(tilt), env_jump, env_flip


def _weight_arrays(spec: SimulationSpec):
    n = spec.n_sites
    w = spec.log_weight_field
    if w is None or not w.is_time_constant():
        z = np.zeros((n, 2))
        return 0, z, z, z
    vals, jump_inc, flip_inc = _field_site_tables(w, n)
    return 1, vals, np.expm1(jump_inc), np.expm1(flip_inc)


def _phi_arrays(spec: SimulationSpec):
    names = list(spec.test_functions.keys())
    n = spec.n_sites
    nphi = len(names)
    phs = np.zeros((nphi, n, 2))
    phj = np.zeros((nphi, n, 2))
    phf = np.zeros((nphi, n, 2))
    phj2 = np.zeros((nphi, n, 2))
    phf2 = np.zeros((nphi, n, 2))
    if nphi:
        if spec.tilt is not None and not spec.tilt.is_time_constant():
            raise ValueError(
                "Dynkin accumulators need a time-constant tilt; "
                "record events and use replay instead")
        if spec.tilt is None or spec.tilt.is_zero():
            tj = np.ones((n, 2))
            tf = np.ones((n, 2))
        else:
            _, jump_inc, flip_inc = _field_site_tables(spec.tilt, n)
            tj = np.exp(jump_inc)
            tf = np.exp(flip_inc)
        for i, name in enumerate(names):
            vals, jump_inc, flip_inc = _field_site_tables(spec.test_functions[name], n)
            phs[i] = vals
            phj[i] = tj * jump_inc
            phf[i] = tf * flip_inc
            phj2[i] = tj * jump_inc ** 2
            phf2[i] = tf * flip_inc ** 2
    return names, phs, phj, phf, phj2, phf2


def _rate_arrays(family: SwitchRateFamily):
    return (np.int64(family.kind), float(family.beta),
            np.asarray(family.table_m, dtype=float),
            np.asarray(family.table_plus, dtype=float),
            np.asarray(family.table_minus, dtype=float),
            float(family.c_max))


def _intensity_table(spec: SimulationSpec) -> np.ndarray:
    xs = _site_positions(spec.n_sites)
    if isinstance(spec.initial, DensityField):
        plus = spec.initial.evaluate_at(xs, 1)
        minus = spec.initial.evaluate_at(xs, -1)
    else:
        plus = spec.initial.evaluate(xs, 1)
        minus = spec.initial.evaluate(xs, -1)
    lam = np.stack([plus, minus], axis=1).astype(float)
    if np.any(lam < 0):
        raise ValueError("initial intensity must be nonnegative")
    return lam


# ---------------------------------------------------------------------------
# public operations


def sample_initial(spec: SimulationSpec, rng_state=None) -> LatticeConfiguration:
    """Draw the product-Poisson initial configuration with means rho(x/N, sigma).

    With the default rng_state (derived from spec.seed) this reproduces the
    initial configuration used by ``run_path`` for the same spec.
    """
    if spec.initial_configuration is not None:
        return spec.initial_configuration.copy()
    if rng_state is None:
        rng_state = rng_init(np.uint64(spec.seed & 0xFFFFFFFFFFFFFFFF))
    elif isinstance(rng_state, Xoshiro):
        rng_state = rng_state.state
    lam = _intensity_table(spec)
    return LatticeConfiguration(_kernels.poisson_counts(rng_state, lam))


def aggregate_rates(cfg: LatticeConfiguration, family: SwitchRateFamily,
                    tilt: PerturbationField | None = None, t: float = 0.0) -> dict:
    """Exact aggregate event rates of the current configuration.

    Untilted: active jumps run at N per particle and flips at c(sigma, m)
    per particle, so the totals are N * n(sigma) and c(sigma, m) * n(sigma).
    """
    n = cfg.n_sites
    m = cfg.magnetization()
    cp = family.rate(1, m)
    cm = family.rate(-1, m)
    if tilt is None or tilt.is_zero():
        jump_plus = float(n * cfg.n_plus)
        jump_minus = float(n * cfg.n_minus)
        flip_plus = cp * cfg.n_plus
        flip_minus = cm * cfg.n_minus
    else:
        _, jump_inc, flip_inc = _field_site_tables(tilt, n, t)
        counts = cfg.counts
        jump_plus = float(n * (counts[:, 0] * np.exp(jump_inc[:, 0])).sum())
        jump_minus = float(n * (counts[:, 1] * np.exp(jump_inc[:, 1])).sum())
        flip_plus = float(cp * (counts[:, 0] * np.exp(flip_inc[:, 0])).sum())
        flip_minus = float(cm * (counts[:, 1] * np.exp(flip_inc[:, 1])).sum())
    total = jump_plus + jump_minus + flip_plus + flip_minus
    return {"jump_plus": jump_plus, "jump_minus": jump_minus,
            "flip_plus": flip_plus, "flip_minus": flip_minus, "total": total}


def step_event(cfg: LatticeConfiguration, spec: SimulationSpec, clock: float,
               rng: Xoshiro):
    """Reference single-event step; mutates cfg and returns (event, new_clock).

    Returns (None, inf) when the configuration is empty (no events possible).
    Uses the same exponential-clock plus thinning construction as the
    compiled kernel, with O(N) site selection.
    """
    n = cfg.n_sites
    if cfg.total == 0:
        return None, math.inf
    family = spec.rate_family
    tilted = spec.tilt is not None and not spec.tilt.is_zero()
    while True:
        m = cfg.magnetization()
        cp = family.rate(1, m)
        cm = family.rate(-1, m)
        if not tilted:
            rates = np.array([n * cfg.n_plus, n * cfg.n_minus,
                              cp * cfg.n_plus, cm * cfg.n_minus], dtype=float)
        else:
            bp = spec.tilt.sup_bound(spec.t_final, 1)
            bm = spec.tilt.sup_bound(spec.t_final, -1)
            env_jump = (math.exp(2 * bp), math.exp(2 * bm))
            env_flip = math.exp(bp + bm)
            rates = np.array([
                n * cfg.n_plus * env_jump[0], n * cfg.n_minus * env_jump[1],
                family.c_max * env_flip * cfg.n_plus,
                family.c_max * env_flip * cfg.n_minus])
        total = rates.sum()
        clock = clock + rng.exponential() / total
        u = rng.uniform() * total
        cat = int(np.searchsorted(np.cumsum(rates), u, side="right"))
        cat = min(cat, 3)
        s = cat % 2
        kind = "jump" if cat < 2 else "flip"
        sigma = 1 if s == 0 else -1
        weights = cfg.counts[:, s].astype(float)
        target = rng.uniform() * weights.sum()
        x = int(np.searchsorted(np.cumsum(weights), target, side="right"))
        x = min(x, n - 1)
        if tilted:
            xs = np.array([x / n])
            if kind == "jump":
                y = (x + sigma) % n
                factor = math.exp(
                    float(spec.tilt.evaluate(clock, np.array([y / n]), sigma)[0])
                    - float(spec.tilt.evaluate(clock, xs, sigma)[0]))
                bound = env_jump[s]
            else:
                c_now = cp if s == 0 else cm
                factor = c_now * math.exp(-sigma * float(spec.tilt.tilde(clock, xs)[0]))
                bound = family.c_max * env_flip
            if rng.uniform() * bound >= factor:
                continue
        if kind == "jump":
            y = (x + sigma) % n
            cfg.counts[x, s] -= 1
            cfg.counts[y, s] += 1
            return Event("jump", x, sigma, clock), clock
        cfg.counts[x, s] -= 1
        cfg.counts[x, 1 - s] += 1
        if s == 0:
            cfg.n_plus -= 1
            cfg.n_minus += 1
        else:
            cfg.n_plus += 1
            cfg.n_minus -= 1
        return Event("flip", x, sigma, clock), clock


def _needs_replay(spec: SimulationSpec) -> bool:
    w = spec.log_weight_field
    return w is not None and not w.is_time_constant()


def run_path(spec: SimulationSpec) -> PathRecord:
    """Simulate one path; deterministic given the spec (including its seed)."""
    n = spec.n_sites
    record_events = spec.record_events or _needs_replay(spec)

    rate_args = _rate_arrays(spec.rate_family)
    tilt_mode, tjump, tflip, packed, env_jump, env_flip = _tilt_arrays(spec)
    w_on, wsite, wjump, wflip = _weight_arrays(spec)
    phi_names, phs, phj, phf, phj2, phf2 = _phi_arrays(spec)

    snap = np.asarray(spec.snapshot_times, dtype=float)
    btimes = snap.copy()
    brec = np.ones(btimes.size, dtype=np.int8)
    if btimes.size == 0 or btimes[-1] < spec.t_final:
        btimes = np.append(btimes, spec.t_final)
        brec = np.append(brec, np.int8(0))

    lam = _intensity_table(spec)
    cap = 4096
    if record_events:
        if spec.initial_configuration is not None:
            particles = float(spec.initial_configuration.total)
        else:
            particles = lam.sum() + 4.0 * math.sqrt(lam.sum() + 1.0)
        per_particle = n * float(env_jump.max()) + spec.rate_family.c_max * float(env_flip.max())
        cap = int(1.5 * particles * per_particle * spec.t_final) + 4096

    while True:
        state = rng_init(np.uint64(spec.seed & 0xFFFFFFFFFFFFFFFF))
        if spec.initial_configuration is not None:
            counts = spec.initial_configuration.counts.copy()
        else:
            counts = _kernels.poisson_counts(state, lam)
        initial = LatticeConfiguration(counts.copy())

        nsnap = snap.size
        snap_counts = np.zeros((nsnap, n, 2), dtype=np.int64)
        m_series = np.zeros(nsnap)
        jumps_series = np.zeros(nsnap, dtype=np.int64)
        flips_series = np.zeros(nsnap, dtype=np.int64)
        dynk_series = np.zeros((len(phi_names), nsnap))
        qv_out = np.zeros(len(phi_names))
        if record_events:
            ev_t = np.zeros(cap)
            ev_kind = np.zeros(cap, dtype=np.int8)
            ev_site = np.zeros(cap, dtype=np.int32)
            ev_layer = np.zeros(cap, dtype=np.int8)
        else:
            ev_t = np.zeros(0)
            ev_kind = np.zeros(0, dtype=np.int8)
            ev_site = np.zeros(0, dtype=np.int32)
            ev_layer = np.zeros(0, dtype=np.int8)

        logz, n_events, status = _kernels.run_path_kernel(
            n, spec.t_final, counts,
            *rate_args,
            tilt_mode, tjump, tflip,
            *packed,
            env_jump, env_flip,
            w_on, wsite, wjump, wflip,
            phs, phj, phf, phj2, phf2,
            btimes, brec,
            state,
            1 if record_events else 0, ev_t, ev_kind, ev_site, ev_layer,
            snap_counts, m_series, jumps_series, flips_series, dynk_series, qv_out,
        )
        if status == _kernels.STATUS_EVENT_OVERFLOW:
            cap *= 2
            continue
        break

    events = None
    if record_events:
        events = EventLog(ev_t[:n_events].copy(), ev_kind[:n_events].copy(),
                          ev_site[:n_events].copy(), ev_layer[:n_events].copy())

    record = PathRecord(
        spec=spec,
        initial=initial,
        snapshot_times=snap,
        snapshots=[LatticeConfiguration(snap_counts[i].copy()) for i in range(nsnap)],
        magnetization_series=m_series,
        jump_series=jumps_series,
        flip_series=flips_series,
        log_radon_nikodym=float(logz) if w_on else None,
        dynkin_residuals={name: dynk_series[i].copy() for i, name in enumerate(phi_names)},
        quadratic_variation={name: float(qv_out[i]) for i, name in enumerate(phi_names)},
        events=events,
    )
    if _needs_replay(spec):
        record.log_radon_nikodym = _replay_log_radon_nikodym(record, spec.log_weight_field)
    return record


def replica_ensemble(spec: SimulationSpec, n_replicas: int,
                     reducer: Callable[[PathRecord], object] | None = None) -> list:
    """Run independent replicas (seed XOR index) and fold in index order."""
    if n_replicas < 1:
        raise ValueError("n_replicas must be at least 1")
    out = []
    for i in range(n_replicas):
        rec = run_path(replace(spec, seed=replica_seed(spec.seed, i)))
        out.append(reducer(rec) if reducer is not None else rec)
    return out


def run_batch(spec: SimulationSpec, n_paths: int, keep_final_counts: bool = False):
    """Compact, threaded replica driver for large ensembles.

    Returns a dict of per-path arrays: final magnetization, log density
    value, Dynkin residuals at T, quadratic variation, particle totals at 0
    and T, and optionally the final occupation numbers.  Path i uses seed
    spec.seed XOR i, identical to ``replica_ensemble``.
    """
    n = spec.n_sites
    rate_args = _rate_arrays(spec.rate_family)
    tilt_mode, tjump, tflip, packed, env_jump, env_flip = _tilt_arrays(spec)
    w_on, wsite, wjump, wflip = _weight_arrays(spec)
    if _needs_replay(spec):
        raise ValueError("run_batch needs a time-constant log weight field")
    phi_names, phs, phj, phf, phj2, phf2 = _phi_arrays(spec)
    lam = _intensity_table(spec)

    if spec.initial_configuration is not None:
        fixed = spec.initial_configuration.counts
        use_fixed = 1
    else:
        fixed = np.zeros((n, 2), dtype=np.int64)
        use_fixed = 0

    nphi = len(phi_names)
    out_m = np.zeros(n_paths)
    out_logz = np.zeros(n_paths)
    out_dynk = np.zeros((n_paths, nphi))
    out_qv = np.zeros((n_paths, nphi))
    out_counts = np.zeros((n_paths if keep_final_counts else 1, n, 2), dtype=np.int64)
    out_total0 = np.zeros(n_paths, dtype=np.int64)
    out_total1 = np.zeros(n_paths, dtype=np.int64)

    _kernels.run_batch_kernel(
        n, spec.t_final, lam, fixed, use_fixed,
        *rate_args,
        tilt_mode, tjump, tflip,
        *packed,
        env_jump, env_flip,
        w_on, wsite, wjump, wflip,
        phs, phj, phf, phj2, phf2,
        np.uint64(spec.seed & 0xFFFFFFFFFFFFFFFF), n_paths,
        1 if keep_final_counts else 0,
        out_m, out_logz, out_dynk, out_qv, out_counts, out_total0, out_total1,
    )
    result = {
        "magnetization": out_m,
        "logz": out_logz if w_on else None,
        "dynkin": {name: out_dynk[:, i] for i, name in enumerate(phi_names)},
        "quadratic_variation": {name: out_qv[:, i] for i, name in enumerate(phi_names)},
        "total_initial": out_total0,
        "total_final": out_total1,
    }
    if keep_final_counts:
        result["final_counts"] = out_counts
    return result


def empirical_trajectory(record: PathRecord, grid_size: int):
    """Bin the snapshot series into a density trajectory on a uniform grid."""
    from .fields import DensityTrajectory

    fields = np.stack([empirical_density(s, grid_size).values for s in record.snapshots])
    return DensityTrajectory(record.snapshot_times.copy(), fields)


# ---------------------------------------------------------------------------
# event-log replay of path functionals


def _gauss_legendre(f, a: float, b: float, rel_tol: float = 1e-10) -> float:
    """Adaptive composite 8-node Gauss-Legendre, doubling panels to tolerance."""
    if b <= a:
        return 0.0
    nodes, weights = np.polynomial.legendre.leggauss(8)
    prev = None
    panels = 1
    while True:
        edges = np.linspace(a, b, panels + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * (edges[1] - edges[0])
        ts = (mid[:, None] + half * nodes[None, :]).ravel()
        vals = f(ts).reshape(panels, nodes.size)
        total = float(half * (vals * weights[None, :]).sum())
        if prev is not None and abs(total - prev) <= rel_tol * (abs(total) + 1e-30):
            return total
        if panels >= 256:
            return total
        prev = total
        panels *= 2


def _iter_constant_intervals(record: PathRecord):
    """Yield (t0, t1, counts) with the configuration constant on [t0, t1)."""
    if record.events is None:
        raise RuntimeError("path was recorded without an event log")
    counts = record.initial.counts.copy()
    t = 0.0
    ev = record.events
    n = record.spec.n_sites
    for i in range(len(ev)):
        t1 = float(ev.times[i])
        if t1 > t:
            yield t, t1, counts
        x = int(ev.sites[i])
        s = int(ev.layers[i])
        if ev.kinds[i] == _kernels.EV_JUMP:
            y = (x + 1) % n if s == 0 else (x - 1) % n
            counts[x, s] -= 1
            counts[y, s] += 1
        else:
            counts[x, s] -= 1
            counts[x, 1 - s] += 1
        t = t1
    if record.spec.t_final > t:
        yield t, record.spec.t_final, counts


def _final_counts(record: PathRecord) -> np.ndarray:
    """Configuration at t_final reconstructed from the event log."""
    if record.events is None:
        raise RuntimeError("path was recorded without an event log")
    counts = record.initial.counts.copy()
    ev = record.events
    n = record.spec.n_sites
    for i in range(len(ev)):
        x = int(ev.sites[i])
        s = int(ev.layers[i])
        if ev.kinds[i] == _kernels.EV_JUMP:
            y = (x + 1) % n if s == 0 else (x - 1) % n
            counts[x, s] -= 1
            counts[y, s] += 1
        else:
            counts[x, s] -= 1
            counts[x, 1 - s] += 1
    return counts


def _pairing(counts: np.ndarray, fld: PerturbationField, t: float, n: int) -> float:
    xs = _site_positions(n)
    vals = counts[:, 0] @ fld.evaluate(t, xs, 1) + counts[:, 1] @ fld.evaluate(t, xs, -1)
    return float(vals) / n


def _replay_log_radon_nikodym(record: PathRecord, w: PerturbationField) -> float:
    """Replay (1/N) log Z_T^W from the event log, exact between events.

    Between events the configuration is frozen, so the integrand reduces to
    sums of analytic functions of t over occupied sites, integrated with
    adaptive Gauss-Legendre panels.
    """
    spec = record.spec
    n = spec.n_sites
    xs = _site_positions(n)
    family = spec.rate_family

    def integrand_factory(counts):
        cnt = counts.copy()
        occ_p = np.nonzero(cnt[:, 0])[0]
        occ_m = np.nonzero(cnt[:, 1])[0]
        total = cnt.sum()
        m = 0.0 if total == 0 else (cnt[:, 0].sum() - cnt[:, 1].sum()) / total
        cp = family.rate(1, m)
        cm = family.rate(-1, m)

        def h(ts):
            out = np.zeros_like(ts)
            for k, t in enumerate(ts):
                acc = 0.0
                if occ_p.size:
                    wp = w.evaluate(t, xs, 1)
                    cph = cnt[occ_p, 0]
                    acc += cph @ w.d_dt(t, xs[occ_p], 1)
                    acc += n * (cph @ np.expm1(wp[(occ_p + 1) % n] - wp[occ_p]))
                if occ_m.size:
                    wm = w.evaluate(t, xs, -1)
                    cmh = cnt[occ_m, 1]
                    acc += cmh @ w.d_dt(t, xs[occ_m], -1)
                    acc += n * (cmh @ np.expm1(wm[(occ_m - 1) % n] - wm[occ_m]))
                if occ_p.size or occ_m.size:
                    til = w.evaluate(t, xs, 1) - w.evaluate(t, xs, -1)
                    acc += cp * (cnt[occ_p, 0] @ np.expm1(-til[occ_p]))
                    acc += cm * (cnt[occ_m, 1] @ np.expm1(til[occ_m]))
                out[k] = acc
            return out

        return h

    integral = 0.0
    for t0, t1, counts in _iter_constant_intervals(record):
        integral += _gauss_legendre(integrand_factory(counts), t0, t1)
    boundary = _pairing(_final_counts(record), w, spec.t_final, n) \
        - _pairing(record.initial.counts, w, 0.0, n)
    return boundary - integral / n


def _generator_applied(counts: np.ndarray, g: PerturbationField, t, n: int,
                       family: SwitchRateFamily, tilt: PerturbationField | None):
    """(d/ds + L) <pi, g> at times t for a frozen configuration."""
    xs = _site_positions(n)
    total = counts.sum()
    m = 0.0 if total == 0 else (counts[:, 0].sum() - counts[:, 1].sum()) / total
    cp = family.rate(1, m)
    cm = family.rate(-1, m)
    out = np.zeros_like(np.asarray(t, dtype=float))
    for k, tk in enumerate(np.atleast_1d(t)):
        gp = g.evaluate(tk, xs, 1)
        gm = g.evaluate(tk, xs, -1)
        jump_p = np.roll(gp, -1) - gp
        jump_m = np.roll(gm, 1) - gm
        if tilt is not None and not tilt.is_zero():
            hp = tilt.evaluate(tk, xs, 1)
            hm = tilt.evaluate(tk, xs, -1)
            ej_p = np.exp(np.roll(hp, -1) - hp)
            ej_m = np.exp(np.roll(hm, 1) - hm)
            til = hp - hm
            ef_p = np.exp(-til)
            ef_m = np.exp(til)
        else:
            ej_p = ej_m = ef_p = ef_m = 1.0
        acc = counts[:, 0] @ (ej_p * jump_p) + counts[:, 1] @ (ej_m * jump_m)
        acc += (cp * (counts[:, 0] @ (ef_p * (gm - gp)))
                + cm * (counts[:, 1] @ (ef_m * (gp - gm)))) / n
        acc += (counts[:, 0] @ g.d_dt(tk, xs, 1) + counts[:, 1] @ g.d_dt(tk, xs, -1)) / n
        out[k] = acc
    return out


def dynkin_residual(record: PathRecord, test_function) -> np.ndarray:
    """Series M_t(phi) at the snapshot times.

    Accepts a name registered in spec.test_functions (returns the exactly
    accumulated series) or a PerturbationField (replayed from the event log).
    """
    if isinstance(test_function, str):
        return record.dynkin_residuals[test_function]
    g = test_function
    for name, phi in record.spec.test_functions.items():
        if phi == g:
            return record.dynkin_residuals[name]
    if record.events is None:
        raise RuntimeError("unregistered test function and no event log recorded")
    spec = record.spec
    n = spec.n_sites
    samples = record.snapshot_times
    out = np.zeros(samples.size)
    integral = 0.0
    si = 0
    pair0 = _pairing(record.initial.counts, g, 0.0, n)
    for t0, t1, counts in _iter_constant_intervals(record):
        while si < samples.size and t0 <= samples[si] <= t1:
            part = _gauss_legendre(
                lambda ts: _generator_applied(counts, g, ts, n, spec.rate_family, spec.tilt),
                t0, float(samples[si]))
            out[si] = _pairing(counts, g, float(samples[si]), n) - pair0 - (integral + part)
            si += 1
        integral += _gauss_legendre(
            lambda ts: _generator_applied(counts, g, ts, n, spec.rate_family, spec.tilt),
            t0, t1)
    while si < samples.size:
        out[si] = out[si - 1] if si else 0.0
        si += 1
    return out


def quadratic_variation(record: PathRecord, test_function) -> float:
    """Integral of the carre du champ of <pi, phi> along the path."""
    if isinstance(test_function, str):
        return record.quadratic_variation[test_function]
    g = test_function
    for name, phi in record.spec.test_functions.items():
        if phi == g:
            return record.quadratic_variation[name]
    if record.events is None:
        raise RuntimeError("unregistered test function and no event log recorded")
    spec = record.spec
    n = spec.n_sites
    xs = _site_positions(n)
    family = spec.rate_family
    tilt = spec.tilt

    def gamma_factory(counts):
        cnt = counts.copy()
        total = cnt.sum()
        m = 0.0 if total == 0 else (cnt[:, 0].sum() - cnt[:, 1].sum()) / total
        cp = family.rate(1, m)
        cm = family.rate(-1, m)

        def gamma(ts):
            out = np.zeros_like(ts)
            for k, t in enumerate(ts):
                gp = g.evaluate(t, xs, 1)
                gm = g.evaluate(t, xs, -1)
                jump_p = np.roll(gp, -1) - gp
                jump_m = np.roll(gm, 1) - gm
                if tilt is not None and not tilt.is_zero():
                    hp = tilt.evaluate(t, xs, 1)
                    hm = tilt.evaluate(t, xs, -1)
                    ej_p = np.exp(np.roll(hp, -1) - hp)
                    ej_m = np.exp(np.roll(hm, 1) - hm)
                    til = hp - hm
                    ef_p = np.exp(-til)
                    ef_m = np.exp(til)
                else:
                    ej_p = ej_m = ef_p = ef_m = 1.0
                acc = (cnt[:, 0] @ (ej_p * jump_p ** 2)
                       + cnt[:, 1] @ (ej_m * jump_m ** 2)) / n
                acc += (cp * (cnt[:, 0] @ (ef_p * (gm - gp) ** 2))
                        + cm * (cnt[:, 1] @ (ef_m * (gp - gm) ** 2))) / (n * n)
                out[k] = acc
            return out

        return gamma

    total = 0.0
    for t0, t1, counts in _iter_constant_intervals(record):
        total += _gauss_legendre(gamma_factory(counts), t0, t1)
    return total


def log_radon_nikodym(record: PathRecord, test_field: PerturbationField) -> float:
    """(1/N) log Z_T for the given test field on this path.

    Uses the exactly accumulated value when the field matches the spec's
    designated log weight field; otherwise replays the event log.
    """
    if test_field.is_zero():
        return 0.0
    if record.spec.log_weight_field is not None and test_field == record.spec.log_weight_field:
        assert record.log_radon_nikodym is not None
        return record.log_radon_nikodym
    if record.events is None:
        raise RuntimeError(
            "field differs from the designated log weight field and no event log was recorded")
    return _replay_log_radon_nikodym(record, test_field)
