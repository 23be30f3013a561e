"""Experiment runners: fan out seeded replicas, call the estimators and write
summary.json, CSV tables and manifest.json into the output directory."""
from __future__ import annotations

import csv
import hashlib
import json
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _jit
from . import coupling as ck
from .config import ExperimentConfig
from .env import Box, make_environment
from .estimators import (
    HeatKernelAccumulator,
    InsufficientSamples,
    SeparationConfig,
    derive_seed,
    draw_separation_pairs,
    evaluate_separation,
    offset_for_norm,
    Replica,
    velocity_report,
)
from .pathstats import lemma5_witness, path_stats_report
from .regen import RegenConfig, detect_tau, extract_slabs, lookahead_study, write_slabs_jsonl
from .walk import CoinField, simulate


@dataclass
class Outputs:
    root: Path
    files: list = field(default_factory=list)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.root / name

    def csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    def json(self, name: str, obj) -> None:
        with open(self.path(name), "w", encoding="utf-8") as fh:
            fh.write(dumps(obj) + "\n")

    def two_column(self, name: str, xs, ys) -> None:
        with open(self.path(name), "w", encoding="utf-8") as fh:
            for x, y in zip(xs, ys):
                fh.write(f"{x!r} {y!r}\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2)


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def replica_seeds(cfg: ExperimentConfig, n: int | None = None) -> list[int]:
    return [derive_seed(cfg.seed, i) for i in range(cfg.replicas if n is None else n)]


def _map(fn, args: list, jobs: int) -> list:
    if jobs <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, args))


def _environment(cfg: ExperimentConfig, seed: int):
    spec = cfg.env_spec(seed=seed)
    box = Box(cfg.box_lo, cfg.box_hi) if cfg.family == "gibbs" else None
    return make_environment(spec, box)


def _walk(cfg: ExperimentConfig, rs: int):
    """Trajectory of one replica seeded by ``rs``."""
    env = _environment(cfg, derive_seed(rs, 0, _jit.DERIVE_STREAM))
    coins = CoinField(derive_seed(rs, 1, _jit.DERIVE_STREAM), cfg.kappa, cfg.dim)
    start = np.zeros(cfg.dim, dtype=np.int64)
    if cfg.family == "gibbs":
        start = np.clip(start, cfg.box_lo, cfg.box_hi)
    traj = simulate(env, coins, start, cfg.n_steps, derive_seed(rs, 2, _jit.DERIVE_STREAM))
    return env, traj


def _regen_cfg(cfg: ExperimentConfig, direction: int | None = None) -> RegenConfig:
    return RegenConfig(L=cfg.L, direction=cfg.direction if direction is None else direction,
                       c5=cfg.c5, horizon=cfg.horizon, lookahead=cfg.lookahead)


# ---------------------------------------------------------------------------
# experiments


def run_simulate(cfg, out: Outputs, jobs: int) -> dict:
    seeds = replica_seeds(cfg)
    trajs = _map(_simulate_one, [(cfg, s) for s in seeds], jobs)
    reps = []
    for i, tr in enumerate(trajs):
        tr.to_csv(out.path(f"trajectory_{i:03d}.csv"))
        reps.append({
            "replica": i,
            "final": tr.positions[-1].tolist(),
            "coin_fraction": float(tr.coins.mean()) if tr.n_steps else None,
        })
    return {"replicas": reps}


def _simulate_one(arg):
    cfg, s = arg
    return _walk(cfg, s)[1]


def run_pathstats(cfg, out: Outputs, jobs: int) -> dict:
    reports = []
    for i, s in enumerate(replica_seeds(cfg)):
        _, tr = _walk(cfg, s)
        rep = path_stats_report(tr, cfg.c5, direction=cfg.direction)
        rep.write_csv(out.path(f"pathstats_{i:03d}.csv"))
        reports.append(rep.to_json())
    return {"replicas": reports}


def run_regen(cfg, out: Outputs, jobs: int) -> dict:
    rows, summary = [], []
    rc = _regen_cfg(cfg)
    for i, s in enumerate(replica_seeds(cfg)):
        env, tr = _walk(cfg, s)
        rec = detect_tau(tr, rc)
        for k, (t, f) in enumerate(zip(rec.taus, rec.flags), start=1):
            rows.append((i, k, int(t), f))
        slabs = extract_slabs(tr, env, rec.confirmed())
        write_slabs_jsonl(out.path(f"slabs_{i:03d}.jsonl"), slabs)
        horizon = rec.horizon
        grid = sorted({0, horizon // 10, horizon // 4, horizon // 2, cfg.lookahead})
        summary.append({
            "replica": i,
            "n_tau": len(rec.taus),
            "n_confirmed": len(rec.confirmed_taus),
            "n_S": len(rec.S_times),
            "K": rec.K,
            "confirmed_fraction_vs_lookahead": lookahead_study(rec, grid),
        })
    out.csv("regen.csv", ["replica", "k", "tau", "flag"], rows)
    return {"replicas": summary}


def _velocity_one(arg):
    cfg, rs = arg
    traj = _walk(cfg, rs)[1]
    return Replica(traj, detect_tau(traj, _regen_cfg(cfg)))


def run_velocity(cfg, out: Outputs, jobs: int) -> dict:
    reps = _map(_velocity_one, [(cfg, s) for s in replica_seeds(cfg)], jobs)
    rep = velocity_report(reps, direction=cfg.direction, tau_block=cfg.tau_block,
                          n_boot=cfg.n_boot, seed=cfg.seed)
    out.csv("velocity.csv", ["checkpoint", "direct"],
            list(zip(rep.checkpoints, rep.direct_by_checkpoint)))
    out.csv("tau_over_n.csv", ["n", "mean_tau_over_n"], sorted(rep.tau_table.items()))
    return rep.to_dict()


HK_BATCH = 8


def _hk_chunk(arg):
    cfg, rs = arg
    traj = _walk(cfg.model_copy(update={"n_steps": cfg.hk_chunk_steps}), rs)[1]
    return traj, detect_tau(traj, _regen_cfg(cfg)).confirmed_taus


def run_heatkernel(cfg, out: Outputs, jobs: int) -> dict:
    acc = HeatKernelAccumulator(cfg.n_grid, cfg.hk_block)
    i = 0
    # fixed batch so the set of chunks does not depend on the worker count
    batch = HK_BATCH
    while acc.samples < cfg.hk_sequences:
        for traj, taus in _map(_hk_chunk, [(cfg, derive_seed(cfg.seed, i + k)) for k in range(batch)], jobs):
            acc.add_replica(traj, taus)
        i += batch
        if i > 10 * cfg.hk_sequences:
            break
    rep = acc.report(cfg.min_samples)
    out.csv("heatkernel.csv",
            ["n", "samples", "max_count", "max_prob", "sumQ2_plugin", "sumQ2", "reliable"], rep.rows())
    fit = [n for n in rep.n_grid if rep.reliable[n]]
    out.two_column("loglog_max_prob.dat", np.log(fit), [np.log(rep.max_prob[n]) for n in fit])
    out.two_column("loglog_sumQ2.dat", np.log(fit),
                   [np.log(rep.sumQ2[n]) if rep.sumQ2[n] > 0 else float("nan") for n in fit])
    if not any(rep.reliable.values()):
        raise InsufficientSamples(f"only {acc.samples} sequences; need {cfg.min_samples}")
    summary = rep.to_dict()
    summary["chunks"] = i
    return summary


def run_separation(cfg, out: Outputs, jobs: int) -> dict:
    fwd = cfg.env_spec()
    bwd_drift = cfg.backward_drift or [-b for b in fwd.drift]
    bwd = cfg.env_spec(drift=bwd_drift)
    base = SeparationConfig(dim=cfg.dim, z=offset_for_norm(cfg.dim, max(cfg.z_norms), cfg.L),
                            n=cfg.sep_n, L=cfg.L)
    drawn = draw_separation_pairs(base, fwd, bwd, cfg.sep_samples, cfg.seed, cfg.c5,
                                  cfg.fwd_steps, cfg.bwd_steps, max(cfg.lookahead, 1))
    rows, reports = [], []
    for zn in cfg.z_norms:
        sc = SeparationConfig(dim=cfg.dim, z=offset_for_norm(cfg.dim, zn, cfg.L), n=cfg.sep_n, L=cfg.L)
        r = evaluate_separation(sc, drawn)
        reports.append(r.to_dict())
        rows.append((zn, r.z_norm, r.samples, r.members, r.p_hat, r.ci[0], r.ci[1], r.t_circ_hits))
    out.csv("separation.csv", ["target_norm", "z_norm", "samples", "members", "p_hat", "ci_low",
                               "ci_high", "t_circ_hits"], rows)
    p = [r["p_hat"] for r in reports]
    return {"delta": str(base.delta), "results": reports,
            "nondecreasing": all(a <= b for a, b in zip(p, p[1:]))}


def run_lemma5(cfg, out: Outputs, jobs: int) -> dict:
    res = []
    rows = []
    for i, s in enumerate(replica_seeds(cfg)):
        _, tr = _walk(cfg, s)
        w = lemma5_witness(tr, cfg.a_grid, cfg.l_grid, cfg.M_grid, cfg.direction)
        res.append({"replica": i, "witness": w.witness, "best_a": w.best_a})
        for mi, M in enumerate(w.M_grid):
            for li, l in enumerate(w.l_grid):
                for ai, a in enumerate(w.a_grid):
                    rows.append((i, M, l, a, float(w.table[mi, li, ai])))
    out.csv("lemma5.csv", ["replica", "M", "l", "a", "E"], rows)
    return {"replicas": res}


def run_couple(cfg, out: Outputs, jobs: int) -> dict:
    rng = np.random.default_rng(cfg.seed)
    if cfg.fixture:
        fam = ck.KernelFamily.from_json(Path(cfg.fixture).read_text(encoding="utf-8"))
    else:
        eps = ck.eps_schedule(cfg.c, cfg.L, cfg.chain_n)
        fam = ck.KernelFamily.random(list(range(cfg.states)), eps, cfg.chain_n, rng)
    n = min(cfg.chain_n, fam.k_max)
    plain = fam.chain_law(n)
    coupled = ck.coupled_law(fam, n)
    tv = ck.law_tv(plain, coupled)
    rows = [("|".join(map(str, k)), plain[k], coupled.get(k, 0.0)) for k in sorted(plain)]
    out.csv("couple.csv", ["path", "plain", "coupled"], rows)
    nu = ck.DiscreteMeasure(fam.states, fam.table[()])
    mu = ck.DiscreteMeasure.uniform(fam.states)
    a = min(cfg.split_a, ck.max_split_weight(nu, mu))
    sp = ck.split(nu, mu, a) if 0 < a < 1 else None
    J, Delta = ck.memory_chain_population(fam, n, cfg.population, rng)
    exp_k = {str(m): ck.empirical_exp_K(Delta, m) for m in range(2, n + 1)}
    return {
        "n": n,
        "tv_enumerated": tv,
        "tv_monte_carlo": ck.law_tv(plain, ck.population_law(fam, J)),
        "split_a": a if sp else None,
        "split_reconstruction_error": ck.split_error(sp, nu) if sp else None,
        "mean_exp_K": {m: v[0] for m, v in exp_k.items()},
        "mean_exp_K_se": {m: v[1] for m, v in exp_k.items()},
        "analytic_exp_K": {str(m): ck.expected_exp_K(fam.eps, m) for m in range(2, n + 1)},
    }


RUNNERS = {
    "simulate": run_simulate,
    "pathstats": run_pathstats,
    "regen": run_regen,
    "velocity": run_velocity,
    "heatkernel": run_heatkernel,
    "separation": run_separation,
    "lemma5": run_lemma5,
    "couple": run_couple,
}


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    root = Path(cfg.out)
    root.mkdir(parents=True, exist_ok=True)
    out = Outputs(root)
    t0 = time.perf_counter()
    summary = RUNNERS[cfg.kind](cfg, out, jobs)
    summary = {"kind": cfg.kind, "seed": cfg.seed, "config_hash": cfg.digest(), "result": summary}
    out.json("summary.json", summary)
    wall = time.perf_counter() - t0
    write_manifest(cfg, out, wall)
    return root


def write_manifest(cfg: ExperimentConfig, out: Outputs, wall: float) -> None:
    import numba
    import scipy

    manifest = {
        "config_hash": cfg.digest(),
        "config": cfg.model_dump(),
        "versions": {
            "rwre": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "numba": numba.__version__,
            "scipy": scipy.__version__,
        },
        "seed": cfg.seed,
        "replica_seeds": replica_seeds(cfg),
        "wall_clock_seconds": wall,
        "outputs": {name: sha256(out.root / name) for name in sorted(set(out.files))},
    }
    with open(out.root / "manifest.json", "w", encoding="utf-8") as fh:
        fh.write(dumps(manifest) + "\n")
