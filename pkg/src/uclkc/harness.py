"""Experiment orchestration and result files.

A config is one JSON document::

    {
      "environment": {"type": "hard_instance", "dim": 8, "delta_mdp": 0.008333, "scale": 3},
      "agents": [{"name": "uclkc", "kind": "uclkc"}, {"name": "noclip", "kind": "noclip"}],
      "horizon": 100000,
      "seeds": [0, 1, 2],
      "delta": 0.1,
      "output_dir": "results",
      "emit_svg": true
    }

``environment.type`` may also be ``"mdp_file"`` with a ``path``.  Agent entries
accept overrides ``h``, ``gamma``, ``n_rounds``, ``lam``, ``b_theta``, ``delta``,
``planner_mode``, ``bonus_scale``, ``h_eff`` and the multipliers
``h_multiplier`` (scales the default ``H = 2 sp(v*)``) and ``gamma_multiplier``
(scales ``1 - gamma``).  Unset values follow the theory defaults.
"""

from __future__ import annotations

import copy
import itertools
import json
import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hard_instance
from .agent import AgentConfig, RegretTrace, compute_regret, run_baseline_noclip, run_uclkc
from .mdp import LinearMixtureMDP, load_mdp, solve_average_oracle
from .planner import default_gamma, default_rounds

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "UCLK_OUTPUT_DIR"
CSV_COLUMNS = ("t", "episode", "state", "action", "reward", "sigma_bar", "e_t", "logdet_ratio", "cum_regret")
AGENT_KINDS = ("uclkc", "noclip")
AGENT_KEYS = {"name", "kind", "h", "gamma", "n_rounds", "lam", "b_theta", "delta", "planner_mode",
              "bonus_scale", "h_eff", "h_multiplier", "gamma_multiplier"}
TOP_KEYS = {"environment", "agents", "horizon", "seeds", "delta", "output_dir", "emit_svg", "workers"}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    environment: dict
    agents: list[dict]
    horizon: int = 100_000
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    delta: float = 0.1
    output_dir: str = "results"
    emit_svg: bool = True
    workers: int | None = None

    def __post_init__(self):
        if not isinstance(self.environment, dict) or self.environment.get("type") not in ("hard_instance", "mdp_file"):
            raise ConfigError("environment.type must be 'hard_instance' or 'mdp_file'")
        if not self.agents:
            raise ConfigError("at least one agent is required")
        names = set()
        for a in self.agents:
            extra = set(a) - AGENT_KEYS
            if extra:
                raise ConfigError(f"unknown agent fields {sorted(extra)}")
            if a.get("kind") not in AGENT_KINDS:
                raise ConfigError(f"agent kind must be one of {AGENT_KINDS}")
            name = a.get("name", a["kind"])
            if name in names:
                raise ConfigError(f"duplicate agent name {name!r}")
            names.add(name)
        if not self.seeds:
            raise ConfigError("seed list must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError("horizon must be a positive integer")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")
        self.horizon = int(self.horizon)
        self.seeds = [int(s) for s in self.seeds]

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        extra = set(doc) - TOP_KEYS
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        if "environment" not in doc or "agents" not in doc:
            raise ConfigError("config needs 'environment' and 'agents'")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(doc)

    def to_json(self) -> dict:
        return {
            "environment": self.environment, "agents": self.agents, "horizon": self.horizon,
            "seeds": self.seeds, "delta": self.delta, "output_dir": self.output_dir,
            "emit_svg": self.emit_svg, "workers": self.workers,
        }

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)


# ----------------------------------------------------------------- run resolution


def seed_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent generators for instance randomness and for transitions."""
    inst, dyn = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(inst), np.random.default_rng(dyn)


def build_environment(env: dict, horizon: int, seed: int) -> tuple[LinearMixtureMDP, float, float]:
    """Return ``(mdp, J*, sp(v*))`` for one seed."""
    if env["type"] == "hard_instance":
        doc = {k: v for k, v in env.items() if k != "type"}
        doc.setdefault("horizon", horizon)
        params = hard_instance.HardInstanceParams.from_json(doc)
        if env.get("sign_vector") is None:
            params = params.with_random_signs(seed_streams(seed)[0])
        sol = hard_instance.analytic_optimal(params)
        return hard_instance.build(params), sol.j_star, sol.span
    mdp = load_mdp(env["path"])
    sol = solve_average_oracle(mdp)
    return mdp, sol.j_star, sol.span


def resolve_agent(agent: dict, mdp: LinearMixtureMDP, span: float, horizon: int, delta: float) -> AgentConfig:
    h = agent.get("h")
    if h is None:
        h = agent.get("h_multiplier", 1.0) * max(2.0 * span, 1e-6)
    d = mdp.dim
    gamma = agent.get("gamma")
    if gamma is None:
        gamma = max(0.0, 1.0 - agent.get("gamma_multiplier", 1.0) * (1.0 - default_gamma(h, horizon, d)))
    b_theta = agent.get("b_theta", mdp.b_theta)
    return AgentConfig(
        h=h,
        gamma=gamma,
        n_rounds=agent.get("n_rounds", default_rounds(h, horizon, d)),
        lam=agent.get("lam", 1.0 / b_theta**2),
        b_theta=b_theta,
        delta=agent.get("delta", delta),
        horizon=horizon,
        planner_mode=agent.get("planner_mode", "relaxed"),
        clip_enabled=agent["kind"] == "uclkc",
        bonus_scale=agent.get("bonus_scale", 1.0),
        h_eff=agent.get("h_eff"),
    )


def run_single(env: dict, agent: dict, horizon: int, delta: float, seed: int) -> tuple[RegretTrace, np.ndarray, AgentConfig]:
    mdp, j_star, span = build_environment(env, horizon, seed)
    cfg = resolve_agent(agent, mdp, span, horizon, delta)
    uniforms = seed_streams(seed)[1].random(horizon)
    runner = run_uclkc if agent["kind"] == "uclkc" else run_baseline_noclip
    trace = runner(mdp, cfg, seed, uniforms=uniforms)
    return trace, compute_regret(trace, j_star), cfg


# ----------------------------------------------------------------------- emission


def trace_table(trace: RegretTrace, cum_regret: np.ndarray) -> np.ndarray:
    t = np.arange(1, trace.horizon + 1)
    return np.column_stack([t, trace.episode, trace.states, trace.actions, trace.rewards,
                            trace.sigma_bar, trace.e_t, trace.logdet_ratio, cum_regret])


def emit_csv(trace: RegretTrace, cum_regret: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, trace_table(trace, cum_regret), fmt="%.12g", delimiter=",",
               header=",".join(CSV_COLUMNS), comments="")
    return path


def aggregate(curves: dict[str, list[np.ndarray]]) -> dict[str, tuple[np.ndarray, np.ndarray, int]]:
    """Per agent: mean cumulative regret, standard error and seed count at every t."""
    out = {}
    for name, series in curves.items():
        arr = np.vstack(series)
        n = arr.shape[0]
        se = arr.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(arr.shape[1])
        out[name] = (arr.mean(axis=0), se, n)
    return out


def emit_aggregate(aggs, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write("agent,t,mean_regret,stderr,n_seeds\n")
        for name, (mean, se, n) in aggs.items():
            t = np.arange(1, mean.size + 1)
            for row in zip(t, mean, se):
                fh.write(f"{name},{row[0]},{row[1]:.12g},{row[2]:.12g},{n}\n")
    return path


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def emit_svg(aggs, path, width: int = 640, height: int = 400, max_points: int = 800) -> Path:
    """Static line chart of mean regret vs t, one polyline per agent."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    left, right, top, bottom = 70, 20, 20, 50
    pw, ph = width - left - right, height - top - bottom
    tmax = max(m.size for m, _, _ in aggs.values())
    lo = min(0.0, min(float(m.min()) for m, _, _ in aggs.values()))
    hi = max(float(m.max()) for m, _, _ in aggs.values())
    if hi <= lo:
        hi = lo + 1.0

    def sx(t):
        return left + pw * (t - 1) / max(tmax - 1, 1)

    def sy(v):
        return top + ph * (1.0 - (v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle" font-size="14">t</text>',
        f'<text x="18" y="{top + ph / 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 18 {top + ph / 2})">regret</text>',
        f'<text x="{left}" y="{top + ph + 18}" text-anchor="middle" font-size="11">1</text>',
        f'<text x="{left + pw}" y="{top + ph + 18}" text-anchor="middle" font-size="11">{tmax}</text>',
        f'<text x="{left - 6}" y="{top + ph}" text-anchor="end" font-size="11">{lo:.4g}</text>',
        f'<text x="{left - 6}" y="{top + 10}" text-anchor="end" font-size="11">{hi:.4g}</text>',
    ]
    for i, (name, (mean, _, _)) in enumerate(aggs.items()):
        idx = np.unique(np.linspace(0, mean.size - 1, min(max_points, mean.size)).astype(int))
        pts = " ".join(f"{sx(j + 1):.2f},{sy(mean[j]):.2f}" for j in idx)
        color = _COLORS[i % len(_COLORS)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{left + 10}" y="{top + 16 + 16 * i}" font-size="12" fill="{color}">{name}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
    return path


# --------------------------------------------------------------------- orchestration


@dataclass
class ExperimentResult:
    output_dir: Path
    trace_files: dict[tuple[str, int], Path]
    final_regret: dict[str, dict[int, float]]
    aggregates: dict
    failures: list[dict]
    resolved: dict[str, dict]


def _job(env, agent, horizon, delta, seed, out_path):
    try:
        trace, regret, cfg = run_single(env, agent, horizon, delta, seed)
        emit_csv(trace, regret, out_path)
        return {"ok": True, "regret": regret, "cfg": cfg.__dict__.copy(), "episodes": trace.num_episodes}
    except Exception as exc:  # noqa: BLE001 - a failed run must not abort its siblings
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc()}


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    out = cfg.resolved_output_dir()
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    jobs = []
    for agent in cfg.agents:
        name = agent.get("name", agent["kind"])
        for seed in cfg.seeds:
            jobs.append((name, seed, agent, out / f"trace_{name}_seed{seed}.csv"))
    workers = workers or cfg.workers or min(len(jobs), os.cpu_count() or 1)
    args = [(cfg.environment, agent, cfg.horizon, cfg.delta, seed, path) for _, seed, agent, path in jobs]
    if workers <= 1:
        results = [_job(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, *zip(*args)))
    curves: dict[str, list[np.ndarray]] = {}
    finals: dict[str, dict[int, float]] = {}
    files, failures, resolved = {}, [], {}
    for (name, seed, _, path), res in zip(jobs, results):
        if not res["ok"]:
            log.error("run %s seed %d failed: %s", name, seed, res["error"])
            failures.append({"agent": name, "seed": seed, "error": res["error"]})
            continue
        curves.setdefault(name, []).append(res["regret"])
        finals.setdefault(name, {})[seed] = float(res["regret"][-1])
        files[(name, seed)] = path
        resolved.setdefault(name, {})[str(seed)] = {**res["cfg"], "episodes": res["episodes"]}
    aggs = aggregate(curves) if curves else {}
    if aggs:
        emit_aggregate(aggs, out / "aggregate.csv")
        if cfg.emit_svg:
            emit_svg(aggs, out / "regret.svg")
    manifest = {"config": cfg.to_json(), "resolved_agents": resolved, "failures": failures,
                "final_regret": {k: {str(s): v for s, v in d.items()} for k, d in finals.items()}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=float))
    return ExperimentResult(out, files, finals, aggs, failures, resolved)


def pooled_standard_error(a, b) -> float:
    """``s_p sqrt(1/n_a + 1/n_b)`` with the pooled sample standard deviation."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    na, nb = a.size, b.size
    if na + nb <= 2:
        return 0.0
    sp2 = ((na - 1) * a.var(ddof=1 if na > 1 else 0) + (nb - 1) * b.var(ddof=1 if nb > 1 else 0)) / (na + nb - 2)
    return math.sqrt(sp2 * (1.0 / na + 1.0 / nb))


def sweep(cfg: ExperimentConfig, agent_name: str, grid: dict[str, list], workers: int | None = None) -> list[dict]:
    """Run ``agent_name`` at every point of ``grid`` and rank by mean final regret.

    Each point writes into its own subdirectory; the ranking is saved as
    ``sweep.json`` in the base output directory, best point first.
    """
    base = [a for a in cfg.agents if a.get("name", a["kind"]) == agent_name]
    if not base:
        raise ConfigError(f"no agent named {agent_name!r}")
    bad = set(grid) - (AGENT_KEYS - {"name", "kind"})
    if bad:
        raise ConfigError(f"grid keys {sorted(bad)} are not agent overrides")
    keys = sorted(grid)
    rows = []
    for values in itertools.product(*(grid[k] for k in keys)):
        point = dict(zip(keys, values))
        agent = {**copy.deepcopy(base[0]), **point}
        tag = "_".join(f"{k}={v}" for k, v in point.items())
        sub = ExperimentConfig(cfg.environment, [agent], cfg.horizon, cfg.seeds, cfg.delta,
                               str(cfg.resolved_output_dir() / f"sweep_{tag}"), False, cfg.workers)
        res = run_experiment(sub, workers)
        finals = list(res.final_regret.get(agent.get("name", agent["kind"]), {}).values())
        mean = float(np.mean(finals)) if finals else math.inf
        se = float(np.std(finals, ddof=1) / math.sqrt(len(finals))) if len(finals) > 1 else 0.0
        rows.append({"point": point, "mean_final_regret": mean, "stderr": se, "n": len(finals)})
    rows.sort(key=lambda r: r["mean_final_regret"])
    out = cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps({"agent": agent_name, "ranking": rows}, indent=2))
    return rows

