"""Command-line entry point: ``seqphase <mode> [flags]``.

Settings come from built-in defaults, then an optional ``--config`` file
(INI, ``[experiment]`` section), then flags. ``--scenario`` points at a file
with a ``[scenario]`` section describing the field window. The seed falls
back to ``$SEQPHASE_SEED`` when neither file nor flag gives one.

Exit codes: 0 success, 2 configuration error, 3 infeasible scenario, 4 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import re
import sys

from .harness import MODES, ExperimentConfig, run_experiment
from .magnetometry import FieldScenario, InfeasibleScenario
from .protocol import ProtocolParams
from .quantum_sim import EnsembleSpec
from .stats_core import Tolerance

log = logging.getLogger("seqphase")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4

# key -> (parser, default)
_EXPERIMENT_KEYS = {
    "trials": (int, None),
    "atoms": (int, 1000),
    "atoms_comp": (int, None),
    "beta": (float, 0.01),
    "beta_tilde": (float, 0.01),
    "steps": (int, None),
    "epsilon": (float, 1.0),
    "seed": (int, None),
    "out": (str, None),
    "threads": (int, 1),
    "n_cap": (int, None),
    "phi": (float, None),
    "restarts": (int, 10),
    "exclude": (float, 0.15),
    "atoms_list": (lambda s: tuple(int(x) for x in _split(s)), (100, 400, 1000)),
    "phis": (lambda s: tuple(float(x) for x in _split(s)), (0.3, 0.8, 1.2)),
    "n_values": (lambda s: tuple(int(x) for x in _split(s)), (1, 2, 5, 10)),
    "sigma1": (float, None),
}

_SCENARIO_KEYS = {
    "b_minus": float,
    "b_plus": float,
    "tau1": float,
    "tau_c": float,
    "atoms": int,
    "atoms_comp": int,
    "mu": float,
}

_MODE_DEFAULTS = {
    "single_run": {"trials": 1, "steps": 3},
    "coverage": {"trials": 10_000, "steps": 3},
    "scaling": {"trials": 2_000, "steps": 3},
    "misclassification": {"trials": 100_000, "steps": 1},
    "dephasing": {"trials": 1_000, "steps": 3, "epsilon": 0.99},
    "magnetometry": {"trials": 20, "steps": 5},
    "entropy_check": {"trials": 1, "steps": 1, "sigma1": 0.03},
}


class ConfigError(ValueError):
    pass


def _split(s: str):
    return [x for x in re.split(r"[,;\s]+", s.strip()) if x]


def _line_of(path: str, key: str) -> int | None:
    try:
        with open(path) as fh:
            for i, line in enumerate(fh, 1):
                if re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
                    return i
    except OSError:
        return None
    return None


def _read_ini(path: str, section: str, keys: dict) -> dict:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not cp.has_section(section):
        raise ConfigError(f"{path}: missing [{section}] section")
    out = {}
    for key, raw in cp.items(section):
        if key not in keys:
            raise ConfigError(f"{path}:{_line_of(path, key)}: unknown key {key!r} in [{section}]")
        conv = keys[key][0] if isinstance(keys[key], tuple) else keys[key]
        try:
            out[key] = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{_line_of(path, key)}: bad value for {key!r}: {raw!r} ({exc})") from exc
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqphase", description="Sequential ensemble phase estimation experiments.")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run the {mode.replace('_', ' ')} experiment")
        p.add_argument("--trials", type=int)
        p.add_argument("--atoms", type=int, help="probes per primary ensemble (N)")
        p.add_argument("--atoms-comp", dest="atoms_comp", type=int, help="probes per complementary ensemble (N')")
        p.add_argument("--beta", type=float)
        p.add_argument("--beta-tilde", dest="beta_tilde", type=float)
        p.add_argument("--steps", type=int, help="number of protocol steps (K)")
        p.add_argument("--epsilon", type=float, help="coherence factor per primary exposure")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output prefix for <out>.csv and <out>.summary.json")
        p.add_argument("--scenario", help="field scenario file ([scenario] section)")
        p.add_argument("--config", help="experiment file ([experiment] section)")
        p.add_argument("--threads", type=int)
        p.add_argument("--n-cap", dest="n_cap", type=int, help="largest rotation count per step")
        p.add_argument("--phi", type=float, help="fixed hidden phase instead of random draws")
        p.add_argument("--restarts", type=int, help="reruns allowed after an estimation error")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve(args: argparse.Namespace) -> ExperimentConfig:
    """Merge defaults, files, environment and flags into an :class:`ExperimentConfig`."""
    values = {k: d for k, (_, d) in _EXPERIMENT_KEYS.items()}
    values.update(_MODE_DEFAULTS[args.mode])
    if args.config:
        values.update(_read_ini(args.config, "experiment", _EXPERIMENT_KEYS))
    for key in _EXPERIMENT_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if values["seed"] is None:
        env = os.environ.get("SEQPHASE_SEED")
        try:
            values["seed"] = int(env) if env else 0
        except ValueError as exc:
            raise ConfigError(f"SEQPHASE_SEED must be an integer, got {env!r}") from exc

    scenario = None
    if args.scenario:
        sc = _read_ini(args.scenario, "scenario", _SCENARIO_KEYS)
        missing = [k for k in ("b_minus", "b_plus", "tau1", "tau_c") if k not in sc]
        if missing:
            raise ConfigError(f"{args.scenario}: missing keys {', '.join(missing)} in [scenario]")
        atoms = sc.pop("atoms", values["atoms"])
        atoms_comp = sc.pop("atoms_comp", values["atoms_comp"])
        try:
            scenario = FieldScenario(N=atoms, N_comp=atoms_comp, **sc)
        except ValueError as exc:
            raise ConfigError(f"{args.scenario}: {exc}") from exc

    try:
        tol = Tolerance(values["beta"], values["beta_tilde"])
        spec = EnsembleSpec(values["atoms"], values["atoms_comp"], values["epsilon"], values["seed"])
        params = ProtocolParams(tol, values["steps"], n_cap=values["n_cap"])
        return ExperimentConfig(
            mode=args.mode,
            trials=values["trials"],
            spec=spec,
            params=params,
            scenario=scenario,
            output_path=values["out"],
            seed=values["seed"],
            threads=values["threads"],
            phi=values["phi"],
            restarts=values["restarts"],
            exclude=values["exclude"],
            atoms_list=values["atoms_list"],
            phis=values["phis"],
            n_values=values["n_values"],
            sigma1=values["sigma1"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        summary = run_experiment(cfg)
    except InfeasibleScenario as exc:
        print(f"infeasible scenario: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    log.info("finished %s in %.2f s", cfg.mode, summary.wall_time_s)
    if not cfg.output_path:
        json.dump(summary.to_dict()["results"], sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
