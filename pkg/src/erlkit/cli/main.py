"""Command-line experiment runner.

Exit codes: 0 success, 1 configuration (or checkpoint) error, 2 runtime fault.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from erlkit import __version__
from erlkit.cli.checkpoint import CheckpointError, checkpoint_load, checkpoint_save
from erlkit.cli.config import DEFAULTS, WORKFLOW_DEFAULTS, Config, ConfigError, load_config
from erlkit.cli.metrics import MetricsWriter
from erlkit.ec.cmaes import CapacityError
from erlkit.env import NumericFault
from erlkit.workflow import registry
from erlkit.workflow.base import Budget, learn

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
OUT_ENV = "ERLKIT_OUT"
# Keys that may differ between runs without changing any result.
NON_SEMANTIC = ("exec.workers", "output.dir")
FINAL_CHECKPOINT = "checkpoint.evorl"


def provenance(cfg: Config) -> dict:
    return {k: v for k, v in cfg.resolved().items() if k not in NON_SEMANTIC}


def config_from_header(header: dict) -> Config:
    """Rebuild the experiment configuration recorded in a metrics header."""
    return Config(header["config"])


def _err(msg: str):
    print(f"erlkit: {msg}", file=sys.stderr)


def run(config_path=None, overrides=(), workers: int | None = None, out=None, resume=None) -> int:
    try:
        cfg = load_config(config_path, overrides)
        if workers is not None:
            cfg = cfg.replace(**{"exec.workers": int(workers)})
        workflow = registry.build(cfg)
        state = workflow.init(int(cfg["seed"]))
        if resume:
            state = checkpoint_load(resume, state, cfg.workflow)
    except ConfigError as err:
        for line in err.errors:
            _err(f"config error: {line}")
        return EXIT_CONFIG
    except (CheckpointError, CapacityError, ValueError) as err:
        _err(f"config error: {err}")
        return EXIT_CONFIG

    out_dir = Path(out or os.environ.get(OUT_ENV) or cfg["output.dir"])
    header = {
        "erlkit_version": __version__,
        "workflow": cfg.workflow,
        "seed": int(cfg["seed"]),
        "start_iteration": state.iteration,
        "config": provenance(cfg),
    }
    if resume:
        header["resumed_from"] = Path(resume).name

    def save(st, final: bool):
        name = FINAL_CHECKPOINT if final else f"checkpoint-{st.iteration:06d}.evorl"
        checkpoint_save(st, out_dir / name, cfg.workflow)

    budget = Budget(int(cfg["budget.iterations"]), int(cfg["budget.env_steps"]), int(cfg["budget.episodes"]))
    with MetricsWriter(out_dir, header) as writer:
        try:
            learn(
                workflow,
                state,
                budget,
                eval_every=int(cfg["eval.every"]),
                eval_episodes=int(cfg["eval.episodes"]),
                on_record=writer.emit,
                on_checkpoint=save,
                checkpoint_every=int(cfg["checkpoint.every"]),
                target_return=cfg.target_return(),
            )
        except (NumericFault, FloatingPointError) as err:
            _err(f"numeric fault: {err}")
            return EXIT_RUNTIME
        except Exception as err:  # noqa: BLE001 - any other failure is a runtime fault
            _err(f"runtime fault: {type(err).__name__}: {err}")
            return EXIT_RUNTIME
    return EXIT_OK


def print_keys(workflow: str | None = None):
    for key, (default, doc) in DEFAULTS.items():
        value = WORKFLOW_DEFAULTS.get(workflow, {}).get(key, default) if workflow else default
        print(f"{key} = {value!r}\n    {doc}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="erlkit", description="Evolutionary RL experiment runner")
    parser.add_argument("--version", action="version", version=f"erlkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="train a workflow from a TOML config")
    p_run.add_argument("config", nargs="?", help="TOML config file (defaults apply when omitted)")
    p_run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
    p_run.add_argument("--workers", type=int, help="parallel workers (0 = available cores)")
    p_run.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else output.dir)")
    p_run.add_argument("--resume", help="checkpoint to continue from")
    p_keys = sub.add_parser("keys", help="list every config key with its default")
    p_keys.add_argument("--workflow", help="show the defaults this workflow uses")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "keys":
        print_keys(args.workflow)
        return EXIT_OK
    return run(args.config, args.overrides, args.workers, args.out, args.resume)


if __name__ == "__main__":
    sys.exit(main())
