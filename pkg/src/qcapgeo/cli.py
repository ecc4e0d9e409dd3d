"""Experiment harness: YAML configs in, JSON reports, CSV tables and matrix checkpoints out.

    qcapgeo run CONFIG [--seed S] [--restarts N] [--out DIR] [--profile desk|paper]
    qcapgeo verify REPORT
    qcapgeo amort CHANNEL [--samples N] [--seed S]

A config looks like

    task: lower_channel
    target: {channel: {name: gadc, params: {gamma: 0.44035, N: 0.1}}}
    sweep: {param: gamma, values: [0.44035]}
    optimizer: {n_copies: 3, r_dim: 2}
    output: {dir: runs, name: gadc}
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .channels import ChannelSpec, channel_from_spec, state_from_spec
from .entropy import amortized_gap
from .lower_channel import AnsatzParam, coh_channel_cost, load_code_state, optimize_code_state, save_code_state
from .lower_state import (InstrumentParam, LowerConfig, coh_state_cost, load_instrument, optimize_instrument,
                          save_instrument, tensor_power_state)
from .manifolds import worker_count
from .qmath import format_matrix, parse_matrices, random_density
from .upper import ExtensionConfig, ExtensionProblem, channel_hashing, optimize_extension

log = logging.getLogger("qcapgeo")

TASKS = ("upper_state", "upper_channel", "lower_state", "lower_channel", "amortization_check")

COLUMNS = {
    "upper": ["param", "hashing", "bound_unextended", "bound_optimized", "epsilon", "restarts_used", "seconds"],
    "lower_state": ["param", "n", "m_dim", "rate", "baseline_rate", "restarts_used", "seconds"],
    "lower_channel": ["param", "n", "r_dim", "rate", "baseline_rate", "restarts_used", "seconds"],
    "amortization_check": ["param", "coherent_info", "max_gap", "margin", "samples", "seconds"],
}

PROFILES = {
    "desk": {"restarts": 50, "max_iters": 500},
    "paper": {"restarts": 200, "max_iters": 500},
}

VERIFY_TOL = 1e-9


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: str
    target: dict
    sweep: dict
    optimizer: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(d) - {"task", "target", "sweep", "optimizer", "output"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(task=d.get("task"), target=d.get("target") or {}, sweep=d.get("sweep") or {},
                  optimizer=dict(d.get("optimizer") or {}), output=dict(d.get("output") or {}))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task in ("upper_state", "lower_state"):
            if "state" not in self.target:
                raise ConfigError(f"{self.task} needs target.state")
        elif "channel" not in self.target:
            raise ConfigError(f"{self.task} needs target.channel")
        if "param" not in self.sweep:
            raise ConfigError("sweep.param is required")
        if not self.grid():
            raise ConfigError("sweep grid is empty")
        for k, v in self.optimizer.items():
            if isinstance(v, (int, float)) and not isinstance(v, bool) and k != "seed" and v <= 0:
                raise ConfigError(f"optimizer.{k} must be positive, got {v}")

    def grid(self) -> list[float]:
        s = self.sweep
        if "values" in s:
            return [float(x) for x in s["values"]]
        if {"start", "stop", "step"} <= set(s):
            start, stop, step = float(s["start"]), float(s["stop"]), float(s["step"])
            if step <= 0:
                raise ConfigError("sweep.step must be positive")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 12) for i in range(max(count, 0))]
        return []

    def to_dict(self) -> dict:
        return {"task": self.task, "target": self.target, "sweep": self.sweep,
                "optimizer": self.optimizer, "output": self.output}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        d = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    return ExperimentConfig.from_dict(d)


def effective_config(cfg: ExperimentConfig, profile: str = "desk", seed: int | None = None,
                     restarts: int | None = None, out: str | None = None) -> ExperimentConfig:
    """Profile defaults, then the file's knobs, then command-line flags."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    eff = copy.deepcopy(cfg)
    opt = dict(PROFILES[profile])
    if profile == "paper":
        # the paper profile restores the full restart count whatever the file says
        opt.update({k: v for k, v in cfg.optimizer.items() if k != "restarts"})
    else:
        opt.update(cfg.optimizer)
    opt.setdefault("seed", 0)
    if seed is not None:
        opt["seed"] = seed
    if restarts is not None:
        opt["restarts"] = restarts
    eff.optimizer = opt
    if out is not None:
        eff.output = {**eff.output, "dir": out}
    eff.validate()
    return eff


# -- targets ----------------------------------------------------------------------

def _with_param(d: dict, name: str, value: float) -> dict:
    d = copy.deepcopy(d)
    d.setdefault("params", {})[name] = value
    return d


def build_state(target: dict, param: str, value: float) -> tuple[np.ndarray, list[int]]:
    st = target["state"]
    kind = st.get("kind", "isotropic")
    if kind == "choi_state":
        # the swept value belongs to the channel
        st = copy.deepcopy(st)
        st["params"]["channel"] = _with_param(st["params"]["channel"], param, value)
    else:
        st = _with_param(st, param, value)
    params = dict(st.get("params", {}))
    if kind == "isotropic" and "noise" in params:
        # noise = (d^2-1)/d^2 * (1-f), the depolarizing-style parameter (3p/4 for qubits)
        d = int(params.get("d", 2))
        params["f"] = 1 - params.pop("noise") * d * d / (d * d - 1)
    return state_from_spec(kind, params)


def build_channel(target: dict, param: str, value: float):
    return channel_from_spec(ChannelSpec.from_dict(_with_param(target["channel"], param, value)))


def parse_channel_arg(text: str) -> ChannelSpec:
    """'gadc:gamma=0.3,N=0.1' or 'identity' or 'erasure:p=0.3,dim=2'."""
    name, _, rest = text.partition(":")
    params, dim = {}, 2
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        if not _:
            raise ConfigError(f"bad channel parameter {item!r}; expected key=value")
        if k.strip() == "dim":
            dim = int(v)
        else:
            params[k.strip()] = float(v)
    return ChannelSpec(name.strip(), params, dim)


# -- tasks ------------------------------------------------------------------------

def _checkpoint_path(out_dir: Path, name: str, i: int) -> Path:
    return out_dir / f"{name}_{i:03d}.txt"


def _run_point(cfg: ExperimentConfig, i: int, value: float, out_dir: Path, name: str) -> dict:
    opt = cfg.optimizer
    t0 = time.perf_counter()
    row: dict[str, Any] = {"index": i, "param": value, "status": "ok", "seed": int(opt["seed"]),
                           "checkpoint": None}
    ckpt = _checkpoint_path(out_dir, name, i)
    lcfg = LowerConfig(restarts=int(opt["restarts"]), seed=int(opt["seed"]),
                       grad_tol=float(opt.get("grad_tol", 1e-7)), max_iters=int(opt["max_iters"]),
                       threads=1, time_budget=opt.get("time_budget"), method=opt.get("method", "lbfgs"))
    param = cfg.sweep["param"]
    if cfg.task in ("upper_state", "upper_channel"):
        if cfg.task == "upper_state":
            rho, dims = build_state(cfg.target, param, value)
            prob = ExtensionProblem(rho, dims=dims, flag_dim=int(opt.get("flag_dim", 2)),
                                    env_dim=int(opt.get("r_dim", 4)), variant=opt.get("variant", "coherent_form"))
        else:
            prob = ExtensionProblem(build_channel(cfg.target, param, value), flag_dim=int(opt.get("flag_dim", 2)),
                                    env_dim=int(opt.get("r_dim", 4)), variant=opt.get("variant", "coherent_form"))
        ecfg = ExtensionConfig(restarts=int(opt["restarts"]), seed=int(opt["seed"]),
                               fd_step=float(opt.get("fd_step", 1e-6)), grad_tol=float(opt.get("grad_tol", 1e-7)),
                               max_iters=int(opt["max_iters"]), threads=1, time_budget=opt.get("time_budget"))
        res = optimize_extension(prob, ecfg)
        row.update(hashing=res.hashing, bound_unextended=res.unextended_bound, bound_optimized=res.bound,
                   epsilon=res.epsilon, restarts_used=len(res.restarts) - 1)
        if res.extension_isometry is not None:
            ckpt.write_text(format_matrix(res.extension_isometry))
            row["checkpoint"] = ckpt.name
    elif cfg.task == "lower_state":
        rho, dims = build_state(cfg.target, param, value)
        n, m = int(opt.get("n_copies", 1)), int(opt.get("m_dim", 2))
        rep = optimize_instrument(rho, n, m, lcfg, dims=dims)
        save_instrument(ckpt, rep.extra["u"], n, m, lcfg.seed, rep.extra["rate"])
        row.update(n=n, m_dim=m, rate=rep.extra["rate"], baseline_rate=rep.extra["baseline_rate"],
                   restarts_used=rep.restarts_used - 1, checkpoint=ckpt.name)
    elif cfg.task == "lower_channel":
        ch = build_channel(cfg.target, param, value)
        n, r = int(opt.get("n_copies", 1)), int(opt.get("r_dim", 2))
        rep = optimize_code_state(ch, n, r, lcfg)
        save_code_state(ckpt, rep.extra["u_list"], r, ch.in_dim)
        row.update(n=n, r_dim=r, rate=rep.extra["rate"], baseline_rate=channel_hashing(ch),
                   restarts_used=rep.restarts_used - 1, checkpoint=ckpt.name)
    else:
        ch = build_channel(cfg.target, param, value)
        out = amortization_check(ch, int(opt.get("samples", 100)), int(opt["seed"]), lcfg)
        row.update(coherent_info=out["coherent_info"], max_gap=out["max_gap"], margin=out["margin"],
                   samples=out["samples"])
    row["seconds"] = time.perf_counter() - t0
    return row


def _safe_point(cfg, i, value, out_dir, name) -> dict:
    try:
        return _run_point(cfg, i, value, out_dir, name)
    except (MemoryError, ValueError, RuntimeError, np.linalg.LinAlgError) as e:
        log.warning("grid point %s = %s failed: %s", cfg.sweep["param"], value, e)
        return {"index": i, "param": value, "status": f"failed: {type(e).__name__}: {e}",
                "seed": int(cfg.optimizer["seed"]), "checkpoint": None, "seconds": 0.0}


def columns_for(task: str) -> list[str]:
    return COLUMNS["upper"] if task.startswith("upper") else COLUMNS[task]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def write_csv(path: Path, task: str, rows: list[dict], timing: bool = True) -> None:
    cols = columns_for(task)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(0.0 if c == "seconds" and not timing else r.get(c)) for c in cols])
    path.write_text(buf.getvalue(), encoding="utf-8")


def run(cfg: ExperimentConfig) -> dict:
    """Run every grid point; write <name>.csv, <name>.json and checkpoints; return the report dict."""
    out_dir = Path(cfg.output.get("dir", "runs"))
    out_dir.mkdir(parents=True, exist_ok=True)
    name = cfg.output.get("name", cfg.task)
    grid = cfg.grid()
    t0 = time.perf_counter()
    workers = worker_count(len(grid))
    if workers == 1:
        rows = [_safe_point(cfg, i, v, out_dir, name) for i, v in enumerate(grid)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(lambda iv: _safe_point(cfg, iv[0], iv[1], out_dir, name), enumerate(grid)))
    report = {"version": __version__, "config": cfg.to_dict(), "config_hash": cfg.digest(),
              "task": cfg.task, "rows": rows, "seconds": time.perf_counter() - t0,
              "csv": f"{name}.csv"}
    write_csv(out_dir / f"{name}.csv", cfg.task, rows, timing=bool(cfg.output.get("timing", True)))
    (out_dir / f"{name}.json").write_text(json.dumps(report, indent=2, default=_json_default))
    return report


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


# -- amortization -----------------------------------------------------------------

def _random_pair_state(d: int, rng: np.random.Generator) -> np.ndarray:
    # mix of pure and full-rank draws so both support regimes are sampled
    rank = int(rng.integers(1, d * d + 1))
    return random_density(d * d, rank=rank, rng=rng)


def amortization_check(ch, samples: int = 100, seed: int = 0, config: LowerConfig | None = None) -> dict:
    """Optimized I_c(N) against the largest amortized gap over random (rho, sigma) pairs on E (x) A."""
    cfg = config or LowerConfig(restarts=10, seed=seed)
    if isinstance(ch, ChannelSpec):
        ch = channel_from_spec(ch)
    ic = optimize_code_state(ch, 1, ch.in_dim, cfg).extra["rate"]
    rng = np.random.default_rng([int(seed), 7])
    gaps = []
    for _ in range(samples):
        rho = _random_pair_state(ch.in_dim, rng)
        sigma = rho if rng.random() < 0.1 else _random_pair_state(ch.in_dim, rng)
        gaps.append(amortized_gap(ch, rho, sigma))
    finite = [g for g in gaps if math.isfinite(g)]
    max_gap = max(finite) if finite else -math.inf
    return {"coherent_info": ic, "max_gap": max_gap, "margin": ic - max_gap, "samples": samples,
            "gaps": gaps}


# -- verification -----------------------------------------------------------------

def _unitarity(u: np.ndarray) -> float:
    return float(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[1])))


def _recompute(report: dict, row: dict, base: Path) -> list[str]:
    """Named invariant failures for one row (empty list on success)."""
    cfg = ExperimentConfig.from_dict(report["config"])
    param = cfg.sweep["param"]
    opt = cfg.optimizer
    fails = []
    ckpt = base / row["checkpoint"] if row.get("checkpoint") else None

    def close(name, a, b):
        if not (abs(a - b) <= VERIFY_TOL * max(1.0, abs(b))):
            fails.append(f"{name}: recomputed {a:.15g} vs stored {b:.15g}")

    if cfg.task.startswith("upper"):
        if row["bound_optimized"] < row["hashing"] - VERIFY_TOL:
            fails.append("bound_optimized >= hashing")
        if row["bound_optimized"] > row["bound_unextended"] + VERIFY_TOL:
            fails.append("bound_optimized <= bound_unextended")
        if cfg.task == "upper_state":
            rho, dims = build_state(cfg.target, param, row["param"])
            prob = ExtensionProblem(rho, dims=dims, flag_dim=int(opt.get("flag_dim", 2)),
                                    env_dim=int(opt.get("r_dim", 4)), variant=opt.get("variant", "coherent_form"))
        else:
            prob = ExtensionProblem(build_channel(cfg.target, param, row["param"]),
                                    flag_dim=int(opt.get("flag_dim", 2)), env_dim=int(opt.get("r_dim", 4)),
                                    variant=opt.get("variant", "coherent_form"))
        base_vals = prob.unextended()
        close("bound_unextended", min(base_vals["u_m_form"], base_vals["coherent_form"]), row["bound_unextended"])
        close("hashing", base_vals["hashing"], row["hashing"])
        if ckpt is not None:
            (v,) = parse_matrices(ckpt.read_text())
            if _unitarity(v) > 1e-8:
                fails.append(f"checkpoint isometry (defect {_unitarity(v):.2e})")
                return fails
            vals = prob.evaluate(v)
            close("bound_optimized", min(vals["u_m_form"], vals["coherent_form"]), row["bound_optimized"])
            close("epsilon", vals["epsilon"], row["epsilon"])
        else:
            close("bound_optimized", row["bound_unextended"], row["bound_optimized"])
    elif cfg.task == "lower_state":
        rho, dims = build_state(cfg.target, param, row["param"])
        u, meta = load_instrument(ckpt)
        if _unitarity(u) > 1e-8:
            fails.append(f"checkpoint unitarity (defect {_unitarity(u):.2e})")
            return fails
        n, m = meta["n"], meta["m_dim"]
        rho_n, dims_n = tensor_power_state(rho, dims, n)
        close("rate", -coh_state_cost(rho_n, InstrumentParam(u, m), dims=dims_n) / n, row["rate"])
        if row["rate"] < row["baseline_rate"] - VERIFY_TOL:
            fails.append("rate >= baseline_rate")
    elif cfg.task == "lower_channel":
        ch = build_channel(cfg.target, param, row["param"])
        us, r, a = load_code_state(ckpt)
        worst = max(_unitarity(u) for u in us)
        if worst > 1e-8:
            fails.append(f"checkpoint unitarity (defect {worst:.2e})")
            return fails
        n = (len(us) + 1) // 2
        close("rate", -coh_channel_cost(ch, AnsatzParam(us, r, a, n)) / n, row["rate"])
    else:
        if row["max_gap"] > row["coherent_info"] + 1e-6:
            fails.append("max_gap <= coherent_info + 1e-6")
    return fails


def verify(report_path: str | Path) -> dict:
    path = Path(report_path)
    try:
        report = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ValueError(f"cannot read report {path}: {e}") from None
    base = path.parent
    cfg = ExperimentConfig.from_dict(report["config"])
    results = []
    if cfg.digest() != report.get("config_hash"):
        results.append({"index": None, "failures": ["config_hash matches config"]})
    for row in report["rows"]:
        if not str(row.get("status", "ok")).startswith("ok"):
            results.append({"index": row["index"], "failures": [], "skipped": row["status"]})
            continue
        try:
            fails = _recompute(report, row, base)
        except (OSError, ValueError, KeyError) as e:
            fails = [f"checkpoint readable ({type(e).__name__}: {e})"]
        results.append({"index": row["index"], "failures": fails})
    ok = all(not r["failures"] for r in results)
    return {"ok": ok, "rows": results}


# -- entry point ------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qcapgeo", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--restarts", type=int)
    r.add_argument("--out")
    r.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    v = sub.add_parser("verify", help="recompute a report's values from its checkpoints")
    v.add_argument("report")
    a = sub.add_parser("amort", help="amortized-gap check against the optimized coherent information")
    a.add_argument("channel", help="e.g. gadc:gamma=0.3,N=0.1")
    a.add_argument("--samples", type=int, default=100)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--restarts", type=int, default=10)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.cmd == "run":
            cfg = effective_config(load_config(args.config), args.profile, args.seed, args.restarts, args.out)
            report = run(cfg)
            out = Path(cfg.output.get("dir", "runs"))
            failed = [r for r in report["rows"] if r["status"] != "ok"]
            print(f"wrote {out / report['csv']} ({len(report['rows'])} rows, {len(failed)} failed)")
            return 1 if failed else 0
        if args.cmd == "verify":
            res = verify(args.report)
            for r in res["rows"]:
                if r.get("skipped"):
                    print(f"row {r['index']}: skipped ({r['skipped']})")
                elif r["failures"]:
                    print(f"row {r['index']}: FAIL " + "; ".join(r["failures"]))
                else:
                    print(f"row {r['index']}: ok")
            print("PASS" if res["ok"] else "FAIL")
            return 0 if res["ok"] else 1
        spec = parse_channel_arg(args.channel)
        out = amortization_check(spec, args.samples, args.seed, LowerConfig(restarts=args.restarts, seed=args.seed))
        print(f"I_c = {out['coherent_info']:.12g}  max gap = {out['max_gap']:.12g}  "
              f"margin = {out['margin']:.12g}  ({out['samples']} samples)")
        return 0 if out["margin"] >= -1e-6 else 1
    except (ConfigError, ValueError, MemoryError) as e:
        print(f"qcapgeo: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
