"""Named verification suites tying the three layers of the package together.

Each suite runs a self-contained experiment with a pinned seed and returns a
machine-readable report: per-check measured values, thresholds, and pass
flags.  ``quick=True`` shrinks ensembles and system sizes for smoke testing;
default parameters are the full, documented configurations also exercised by
the acceptance test module.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .fields import (DensityField, PerturbationField, FourierMode, SineProfile,
                     UniformProfile, cell_centers)
from .hydro import (SolverSpec, integrate_magnetization_ode, l1_distance,
                    picard_iterate, solve_hydrodynamic, solve_perturbed)
from .lattice import LatticeConfiguration, empirical_density
from .ldp import (dynamic_rate_exact, dynamic_rate_with_G, flux_extraction,
                  psi_reconstruction, psi_values, static_rate, total_rate,
                  variational_lower_bound_sweep)
from .rates import SwitchRateFamily, curie_weiss_fixed_points
from .rng import replica_seed
from .simulate import (SimulationSpec, empirical_trajectory, run_batch, run_path)

SUITE_NAMES = ("conservation", "martingale", "convergence", "fixed-points",
               "ldp-roundtrip", "picard", "master-oracle")


def _check(name: str, value: float, threshold: float, op: str = "<") -> dict:
    ops = {
        "<": value < threshold,
        "<=": value <= threshold,
        ">": value > threshold,
        ">=": value >= threshold,
        "==": value == threshold,
    }
    return {"name": name, "value": float(value), "threshold": float(threshold),
            "op": op, "passed": bool(ops[op])}


def _report(suite: str, checks: list, t0: float, **params) -> dict:
    return {
        "suite": suite,
        "passed": all(c["passed"] for c in checks),
        "checks": checks,
        "elapsed_seconds": time.time() - t0,
        "params": params,
    }


# ---------------------------------------------------------------------------
# labeled two-particle master equation oracle


def _pair_index(n_sites: int, x1: int, s1: int, x2: int, s2: int) -> int:
    return ((x1 * 2 + s1) * n_sites + x2) * 2 + s2


def labeled_pair_generator(n_sites: int, family: SwitchRateFamily,
                           tilt: PerturbationField | None = None,
                           t: float = 0.0) -> np.ndarray:
    """Generator matrix of two labeled particles under the same dynamics.

    State index runs over (x1, s1, x2, s2); the mean-field rate sees the
    magnetization of the pair.  Used as an exact law oracle at small sizes.
    """
    n = n_sites
    nstates = (n * 2) ** 2
    q = np.zeros((nstates, nstates))

    def h_val(x: int, sigma: int) -> float:
        if tilt is None or tilt.is_zero():
            return 0.0
        return float(tilt.evaluate(t, np.array([x / n]), sigma)[0])

    for x1, s1, x2, s2 in itertools.product(range(n), range(2), range(n), range(2)):
        i = _pair_index(n, x1, s1, x2, s2)
        sig1 = 1 if s1 == 0 else -1
        sig2 = 1 if s2 == 0 else -1
        m = (sig1 + sig2) / 2.0
        y1 = (x1 + sig1) % n
        q[i, _pair_index(n, y1, s1, x2, s2)] += n * math.exp(h_val(y1, sig1) - h_val(x1, sig1))
        y2 = (x2 + sig2) % n
        q[i, _pair_index(n, x1, s1, y2, s2)] += n * math.exp(h_val(y2, sig2) - h_val(x2, sig2))
        q[i, _pair_index(n, x1, 1 - s1, x2, s2)] += \
            family.rate(sig1, m) * math.exp(h_val(x1, -sig1) - h_val(x1, sig1))
        q[i, _pair_index(n, x1, s1, x2, 1 - s2)] += \
            family.rate(sig2, m) * math.exp(h_val(x2, -sig2) - h_val(x2, sig2))
    np.fill_diagonal(q, q.diagonal() - q.sum(axis=1))
    return q


def labeled_pair_law(n_sites: int, family: SwitchRateFamily, t_final: float,
                     start: tuple, tilt: PerturbationField | None = None) -> np.ndarray:
    """Exact time-T law of the labeled pair started from a fixed state."""
    (x1, sig1), (x2, sig2) = start
    s1 = 0 if sig1 == 1 else 1
    s2 = 0 if sig2 == 1 else 1
    p0 = np.zeros((n_sites * 2) ** 2)
    p0[_pair_index(n_sites, x1, s1, x2, s2)] = 1.0
    if tilt is None or tilt.is_time_constant():
        q = labeled_pair_generator(n_sites, family, tilt)
        return expm(q.T * t_final) @ p0
    sol = solve_ivp(lambda t, p: labeled_pair_generator(n_sites, family, tilt, t).T @ p,
                    (0.0, t_final), p0, rtol=1e-10, atol=1e-12)
    return sol.y[:, -1]


def configuration_law_from_labeled(p: np.ndarray, n_sites: int) -> dict:
    """Project the labeled-pair law onto unordered particle configurations."""
    law: dict = {}
    for x1, s1, x2, s2 in itertools.product(range(n_sites), range(2),
                                            range(n_sites), range(2)):
        key = tuple(sorted(((x1, s1), (x2, s2))))
        law[key] = law.get(key, 0.0) + p[_pair_index(n_sites, x1, s1, x2, s2)]
    return law


def configuration_key(counts: np.ndarray) -> tuple:
    sites = []
    for x in range(counts.shape[0]):
        for s in range(2):
            sites.extend([(x, s)] * int(counts[x, s]))
    return tuple(sorted(sites))


def tv_distance(law_a: dict, law_b: dict) -> float:
    keys = set(law_a) | set(law_b)
    return 0.5 * sum(abs(law_a.get(k, 0.0) - law_b.get(k, 0.0)) for k in keys)


def kmc_configuration_law(n_sites: int, family: SwitchRateFamily, t_final: float,
                          start: tuple, n_paths: int, seed: int,
                          tilt: PerturbationField | None = None) -> dict:
    """Empirical configuration law over independent simulated paths."""
    counts0 = np.zeros((n_sites, 2), dtype=np.int64)
    for x, sigma in start:
        counts0[x, 0 if sigma == 1 else 1] += 1
    spec = SimulationSpec(n_sites=n_sites, t_final=t_final, seed=seed,
                          initial_configuration=LatticeConfiguration(counts0),
                          rate_family=family, tilt=tilt)
    out = run_batch(spec, n_paths, keep_final_counts=True)
    law: dict = {}
    for p in range(n_paths):
        key = configuration_key(out["final_counts"][p])
        law[key] = law.get(key, 0) + 1
    return {k: v / n_paths for k, v in law.items()}


# ---------------------------------------------------------------------------
# suites


def suite_fixed_points(quick: bool = False, seed: int = 60301) -> dict:
    """Flocking: tanh fixed points, ODE and PDE relaxation, simulated bands."""
    t0 = time.time()
    n = 512 if quick else 4096
    t_final = 4.0 if quick else 10.0
    checks = []

    for beta in (0.5, 1.0, 2.0):
        roots = curie_weiss_fixed_points(beta, tol=1e-12)
        res = max(abs(r - math.tanh(beta * r)) for r in roots)
        checks.append(_check(f"residual beta={beta}", res, 1e-9))
        checks.append(_check(f"n_roots beta={beta}", len(roots), 1.0 if beta <= 1 else 3.0, "=="))

    m_star = float(curie_weiss_fixed_points(2.0, tol=1e-12)[-1])
    checks.append(_check("m* vs 0.957504", abs(m_star - 0.957504), 1e-6))

    fam2 = SwitchRateFamily.curie_weiss(2.0)
    ode = integrate_magnetization_ode(fam2, 0.1, t_final, dt=1e-3)
    checks.append(_check("ODE limit vs m*", abs(ode.final - m_star), 1e-6))

    grid = 256
    init = UniformProfile(0.55, 0.45).to_density_field(grid)
    traj = solve_hydrodynamic(SolverSpec(grid, t_final, init, fam2,
                                         store_stride=int(t_final * grid)))
    m_pde = float(traj.magnetization_series()[-1])
    checks.append(_check("PDE vs ODE magnetization", abs(m_pde - ode.final), 1e-5))

    spec = SimulationSpec(n_sites=n, t_final=t_final, seed=seed,
                          initial=UniformProfile(0.55, 0.45), rate_family=fam2)
    rec = run_path(spec)
    m_sim = float(rec.magnetization_series[-1])
    band = (0.8, 1.0) if quick else (0.93, 0.98)
    checks.append(_check("simulated flocking m_T lower", abs(m_sim), band[0], ">"))
    checks.append(_check("simulated flocking m_T upper", abs(m_sim), band[1], "<"))

    spec_sub = replace(spec, rate_family=SwitchRateFamily.curie_weiss(0.5))
    rec_sub = run_path(spec_sub)
    checks.append(_check("subcritical |m_T|", abs(float(rec_sub.magnetization_series[-1])), 0.05))

    return _report("fixed-points", checks, t0, n_sites=n, t_final=t_final, seed=seed)


def suite_convergence(quick: bool = False, seed: int = 60302) -> dict:
    """Empirical measure to solution of the limit equations, three sizes."""
    t0 = time.time()
    sizes = (64, 256, 1024) if quick else (256, 1024, 4096)
    bin_grid = 32
    fam = SwitchRateFamily.constant()
    profile = SineProfile(1.0, 0.5, "plus")

    ref = solve_hydrodynamic(SolverSpec(512, 1.0, profile.to_density_field(512), fam,
                                        store_stride=512))
    ref_t = DensityField(ref.fields[-1]).coarsen(bin_grid)
    total_mass = profile.to_density_field(512).total_mass()

    errs = {}
    for n in sizes:
        spec = SimulationSpec(n_sites=n, t_final=1.0, seed=seed, initial=profile,
                              rate_family=fam)
        rec = run_path(spec)
        emp = empirical_density(rec.snapshots[-1], bin_grid)
        errs[n] = l1_distance(emp, ref_t)

    err_budget = 0.25 if quick else 0.10
    checks = [
        _check(f"err({sizes[2]}) < err({sizes[1]})", errs[sizes[2]], errs[sizes[1]]),
        _check(f"err({sizes[1]}) < err({sizes[0]})", errs[sizes[1]], errs[sizes[0]]),
        _check(f"err({sizes[2]}) vs {err_budget} mass", errs[sizes[2]], err_budget * total_mass),
    ]

    # magnetization: closed-form decay at c == 1
    ode = integrate_magnetization_ode(fam, 0.5, 1.0, dt=1e-3)
    checks.append(_check("ODE vs 0.5 e^-2", abs(ode.final - 0.5 * math.exp(-2.0)), 1e-8))
    n_mag = sizes[2]
    spec_m = SimulationSpec(n_sites=n_mag, t_final=1.0, seed=seed + 1,
                            initial=UniformProfile(1.5, 0.5), rate_family=fam)
    rec_m = run_path(spec_m)
    checks.append(_check("simulated m(1) vs ODE",
                         abs(float(rec_m.magnetization_series[-1]) - ode.final), 0.05))

    return _report("convergence", checks, t0,
                   sizes=list(sizes), bin_grid=bin_grid, errors={str(k): v for k, v in errs.items()},
                   seed=seed)


def suite_martingale(quick: bool = False, seed: int = 60303) -> dict:
    """Mean-one of the path density exponent, plus the Dynkin diagnostics."""
    t0 = time.time()
    n = 64
    n_rep = 1000 if quick else 10000
    w_field = PerturbationField.single_mode(1, cos_amp=0.3, layer="plus")
    spec = SimulationSpec(n_sites=n, t_final=0.5, seed=seed,
                          initial=UniformProfile(0.25, 0.25),
                          log_weight_field=w_field)
    out = run_batch(spec, n_rep)
    z = np.exp(n * out["logz"])
    z_mean = float(z.mean())
    z_se = float(z.std(ddof=1) / math.sqrt(n_rep))
    checks = [_check("mean exp(N logZ) vs 1", abs(z_mean - 1.0), 3.0 * z_se)]

    # Dynkin residual and quadratic variation, phi(x, sigma) = sigma cos(2 pi x)
    n_d = 256
    n_paths = 200 if quick else 1000
    phi = PerturbationField(plus=(FourierMode(1, cos=(1.0,)),),
                            minus=(FourierMode(1, cos=(-1.0,)),))
    spec_d = SimulationSpec(n_sites=n_d, t_final=0.5, seed=seed + 1,
                            initial=UniformProfile(0.5, 0.5),
                            test_functions={"phi": phi})
    out_d = run_batch(spec_d, n_paths)
    mt = out_d["dynkin"]["phi"]
    qv = out_d["quadratic_variation"]["phi"]
    mean_se = float(mt.std(ddof=1) / math.sqrt(n_paths))
    checks.append(_check("Dynkin mean vs 0", abs(float(mt.mean())), 4.0 * mean_se))
    var_ratio = float(mt.var(ddof=1) / qv.mean())
    checks.append(_check("Var(M_T) / mean int Gamma vs 1", abs(var_ratio - 1.0), 0.2))
    checks.append(_check("min QV", float(qv.min()), -1e-15, ">="))

    return _report("martingale", checks, t0, n_replicas=n_rep, dynkin_paths=n_paths,
                   seed=seed, z_mean=z_mean, z_se=z_se, var_ratio=var_ratio)


def suite_ldp_roundtrip(quick: bool = False, seed: int = 60304) -> dict:
    """Tilt recovery, variational consistency, zero rate, and the path bridge."""
    t0 = time.time()
    fam = SwitchRateFamily.constant()
    tilt = PerturbationField.single_mode(1, cos_amp=0.4, layer="plus")
    checks = []

    # tilt recovery from the perturbed solution at two resolutions
    errs = {}
    traj_fine = None
    for grid in (256, 512):
        init = UniformProfile(1.0, 1.0).to_density_field(grid)
        traj = solve_perturbed(SolverSpec(grid, 0.5, init, fam, tilt))
        flux = flux_extraction(traj)
        tilde = psi_reconstruction(traj, flux, fam)
        target = 0.4 * np.cos(2.0 * np.pi * cell_centers(grid))
        errs[grid] = float(np.abs(tilde - target[None, :]).max())
        psi_p, psi_m = psi_values(traj, flux, fam)
        checks.append(_check(f"Psi reciprocal M={grid}",
                             float(np.abs(psi_p * psi_m - 1.0).max()), 1e-10))
        if grid == 512:
            traj_fine = traj
    checks.append(_check("tilt sup error M=256", errs[256], 0.02))
    checks.append(_check("tilt error improvement", errs[256] / errs[512], 2.0, ">="))

    # variational consistency on the fine trajectory
    i_exact = dynamic_rate_exact(traj_fine, tilt, fam)
    at_h = dynamic_rate_with_G(traj_fine, tilt, fam)
    checks.append(_check("value at G=H vs exact", abs(at_h - i_exact), 1e-4))
    rng = np.random.default_rng(seed)
    n_fields = 10 if quick else 50
    worst = -math.inf
    for _ in range(n_fields):
        k = int(rng.integers(1, 5))
        g = PerturbationField.single_mode(k, cos_amp=float(rng.uniform(-0.6, 0.6)),
                                          sin_amp=float(rng.uniform(-0.6, 0.6)),
                                          layer="plus" if rng.uniform() < 0.5 else "minus")
        worst = max(worst, dynamic_rate_with_G(traj_fine, g, fam) - i_exact)
    checks.append(_check("sup domination violation", worst, 1e-4))

    # zero rate at typicality
    init = SineProfile(1.0, 0.5, "plus").to_density_field(256)
    traj_h = solve_hydrodynamic(SolverSpec(256, 1.0, init, fam))
    report = total_rate(traj_h, init, fam)
    checks.append(_check("typical-path total rate", report.total, 1e-5))
    checks.append(_check("static_rate(rho, rho)", static_rate(init, init), 0.0, "=="))

    # path bridge: (1/N) log Z vs the variational value on the binned path
    bridge_h = PerturbationField.single_mode(1, cos_amp=0.5, layer="plus")
    t_b = 0.5
    k_slices = 250
    n_paths = 20 if quick else 100

    def median_gap(n_sites: int, base: int) -> float:
        snaps = tuple(np.linspace(0.0, t_b, k_slices + 1))
        spec = SimulationSpec(n_sites=n_sites, t_final=t_b, seed=base,
                              initial=UniformProfile(1.0, 1.0), rate_family=fam,
                              tilt=bridge_h, snapshot_times=snaps,
                              log_weight_field=bridge_h)
        gaps = []
        for i in range(n_paths):
            rec = run_path(replace(spec, seed=replica_seed(base, i)))
            traj = empirical_trajectory(rec, n_sites)
            gaps.append(abs(rec.log_radon_nikodym - dynamic_rate_with_G(traj, bridge_h, fam)))
        return float(np.median(gaps))

    gap_small = median_gap(128, seed + 10)
    gap_large = median_gap(256, seed + 11)
    factor = gap_small / gap_large
    checks.append(_check("bridge factor lower", factor, 1.3, ">="))
    checks.append(_check("bridge factor upper", factor, 3.0, "<="))

    return _report("ldp-roundtrip", checks, t0, seed=seed, tilt_errors=errs,
                   bridge_gaps={"128": gap_small, "256": gap_large}, bridge_factor=factor)


def suite_picard(quick: bool = False, seed: int = 60305) -> dict:
    """Contraction of the fixed-point iteration at a short horizon."""
    t0 = time.time()
    grid = 128 if quick else 256
    fam = SwitchRateFamily.curie_weiss(2.0)
    xs = cell_centers(grid)
    init = DensityField(np.stack([1.3 + 0.3 * np.sin(2.0 * np.pi * xs),
                                  0.7 * np.ones(grid)], axis=1))
    spec = SolverSpec(grid, 0.2, init, fam)
    iters = picard_iterate(spec, 7)
    dists = [l1_distance(iters[i + 1], iters[i]) for i in range(6)]
    ratios = [dists[i + 1] / dists[i] for i in range(5)]
    checks = [_check(f"ratio d{i + 2}/d{i + 1}", r, 1.0) for i, r in enumerate(ratios)]
    direct = solve_perturbed(spec)
    checks.append(_check("limit vs direct solver", l1_distance(iters[-1], direct), 1e-6))
    return _report("picard", checks, t0, grid=grid,
                   effective_t_final=spec.effective_t_final,
                   distances=dists, ratios=ratios)


def suite_master_oracle(quick: bool = False, seed: int = 60306) -> dict:
    """Exact 64-state law of a labeled pair versus the simulator."""
    t0 = time.time()
    n = 4
    fam = SwitchRateFamily.curie_weiss(1.0)
    t_final = 0.5
    start = ((0, 1), (2, -1))
    n_paths = 10000 if quick else 100000

    p_t = labeled_pair_law(n, fam, t_final, start)
    exact = configuration_law_from_labeled(p_t, n)
    emp = kmc_configuration_law(n, fam, t_final, start, n_paths, seed)
    tv = tv_distance(exact, emp)
    checks = [
        _check("probability mass", abs(sum(exact.values()) - 1.0), 1e-9),
        _check("TV(exact, KMC)", tv, 0.05 if quick else 0.02),
    ]
    return _report("master-oracle", checks, t0, n_paths=n_paths, seed=seed, tv=tv)


def suite_conservation(quick: bool = False, seed: int = 60307) -> dict:
    """Particle conservation, determinism, and solver mass drift."""
    t0 = time.time()
    n = 128 if quick else 512
    spec = SimulationSpec(n_sites=n, t_final=0.5, seed=seed,
                          initial=UniformProfile(1.0, 1.0),
                          rate_family=SwitchRateFamily.curie_weiss(1.5),
                          snapshot_times=tuple(np.linspace(0.0, 0.5, 6)),
                          log_weight_field=PerturbationField.single_mode(1, cos_amp=0.2))
    rec1 = run_path(spec)
    rec2 = run_path(spec)
    totals = [s.total for s in rec1.snapshots]
    checks = [
        _check("|eta| spread over snapshots", max(totals) - min(totals), 0.0, "=="),
        _check("deterministic snapshots",
               0.0 if all(np.array_equal(a.counts, b.counts)
                          for a, b in zip(rec1.snapshots, rec2.snapshots)) else 1.0,
               0.0, "=="),
        _check("deterministic logZ",
               0.0 if rec1.log_radon_nikodym == rec2.log_radon_nikodym else 1.0, 0.0, "=="),
        _check("jump counts nondecreasing",
               0.0 if (np.all(np.diff(rec1.jump_series) >= 0)
                       and np.all(np.diff(rec1.flip_series) >= 0)) else 1.0,
               0.0, "=="),
    ]

    init = SineProfile(1.0, 0.5, "plus").to_density_field(256)
    traj = solve_hydrodynamic(SolverSpec(256, 1.0, init, SwitchRateFamily.curie_weiss(2.0)))
    checks.append(_check("PDE relative mass drift", traj.mass_drift(), 1e-12))

    return _report("conservation", checks, t0, n_sites=n, seed=seed)


SUITES = {
    "conservation": suite_conservation,
    "martingale": suite_martingale,
    "convergence": suite_convergence,
    "fixed-points": suite_fixed_points,
    "ldp-roundtrip": suite_ldp_roundtrip,
    "picard": suite_picard,
    "master-oracle": suite_master_oracle,
}


def run_suite(name: str, quick: bool = False) -> dict:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](quick=quick)
