import argparse
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError as SchemaValidationError
from pythonjsonlogger.json import JsonFormatter

from . import __version__
from .config import LoggingConfig, Settings, get_settings
from .errors import QAnomalyError
from .schemas import ExperimentRecord, RunConfig

# Setup logging
logger = logging.getLogger(__name__)

EXPERIMENTS = ("fig1", "fig2", "quench", "bandprofile")


def setup_logging(log_config: LoggingConfig):
    """Configure console and rotating-file logging; JSON lines in the file when enabled."""
    handlers = []

    # Console handler
    if log_config.ENABLE_CONSOLE:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(log_config.LEVEL)
        console_handler.setFormatter(logging.Formatter(log_config.FORMAT))
        handlers.append(console_handler)

    # File handler
    if log_config.ENABLE_FILE:
        file_handler = RotatingFileHandler(
            log_config.FILE,
            maxBytes=log_config.MAX_BYTES,
            backupCount=log_config.BACKUP_COUNT
        )
        file_handler.setLevel(log_config.LEVEL)
        if log_config.JSON:
            file_handler.setFormatter(JsonFormatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
        else:
            file_handler.setFormatter(logging.Formatter(log_config.FORMAT))
        handlers.append(file_handler)

    # Configure root logger
    logging.basicConfig(
        level=log_config.LEVEL,
        format=log_config.FORMAT,
        handlers=handlers,
        force=True,
    )


def _add_run_options(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--workers", type=int, help="Worker processes")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--s0", type=float, nargs="+", help="Spectral exponents s0")
    parser.add_argument("--N", type=int, help="Matrix dimension")
    parser.add_argument("--band", type=int, help="Bandwidth b")
    parser.add_argument("--realizations", type=int, help="Ensemble size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qanomaly",
        description="Driven random-matrix simulator for energy spreading and anomalous diffusion",
    )
    parser.add_argument("--config", help="Key-value config file (overrides .env)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fig1 = sub.add_parser("fig1", help="Driven vs frozen spreading with Wigner-time collapse")
    _add_run_options(fig1)
    fig1.add_argument("--fdot", type=float, nargs="+", help="Driving rates")
    fig1.add_argument("--mode", choices=["driven", "frozen", "all"], help="Evolution paths to run")

    fig2 = sub.add_parser("fig2", help="Diffusion coefficient versus driving strength")
    _add_run_options(fig2)
    fig2.add_argument("--fdot", type=float, nargs="+", help="Driving rates")

    quench = sub.add_parser("quench", help="Static quench spreading and survival decay")
    _add_run_options(quench)
    quench.add_argument("--eps", type=float, nargs="+", help="Quench strengths")

    bandprofile = sub.add_parser("bandprofile", help="Empirical C(omega) slopes of V and W")
    _add_run_options(bandprofile)

    kubo = sub.add_parser("kubo", help="Evaluate the Kubo oracle")
    _add_run_options(kubo)
    kubo.add_argument("--eps", type=float, nargs="+", help="Driving strengths")
    kubo.add_argument("--gamma", type=float, help="Lorentzian width 1/t_phi (default omega0/100)")
    kubo.add_argument("--infrared-cutoff", action="store_true", help="Integrate from omega0 instead of 0")

    emit = sub.add_parser("emit", help="Write plot-ready CSV series from a saved record")
    emit.add_argument("record", help="Run directory or record.json")
    emit.add_argument("--which", choices=["fig1", "fig2"], required=True)
    emit.add_argument("--out", help="Output directory (default: the run directory)")

    history = sub.add_parser("history", help="List runs in the registry")
    history.add_argument("--kind", choices=list(EXPERIMENTS))
    history.add_argument("--limit", type=int, default=20)
    return parser


def run_config_from_args(args: argparse.Namespace, source: Settings, kind: str) -> RunConfig:
    return RunConfig.from_settings(
        source,
        kind,
        N=args.N,
        b=args.band,
        s0_list=args.s0,
        fdot_list=getattr(args, "fdot", None),
        eps_list=getattr(args, "eps", None),
        mode=getattr(args, "mode", None),
        realizations=args.realizations,
        master_seed=args.seed,
        workers=args.workers,
        output_dir=args.out,
    )


def register_record(record: ExperimentRecord, directory: Path, source: Settings):
    """Index a saved record; registry problems never fail a finished run."""
    if not source.ENABLE_RUN_REGISTRY:
        return None
    from .crud import create_run
    from .database import get_db, init_db, make_engine

    try:
        engine = init_db(make_engine(source.DATABASE_URL))
        with get_db(engine) as db:
            run = create_run(db, record, str(directory))
            logger.info(f"Registered run {run.id} ({record.kind}) in {source.DATABASE_URL}")
            return run.id
    except Exception as e:
        logger.warning(f"Could not register run: {str(e)}")
        return None


def _run_experiment(args, source: Settings) -> int:
    from .export import save_record
    from .harness import run_experiment

    config = run_config_from_args(args, source, args.command)
    print(f"🔬 Running {args.command}: N={config.N}, b={config.b}, s0={config.s0_list}, realizations={config.realizations}")
    record = run_experiment(args.command, config)
    directory = save_record(record, source=source)
    register_record(record, directory, source)

    print(f"✅ {args.command} {record.status} in {record.wall_seconds:.1f}s, results in {directory}")
    for key, value in sorted(record.summary.items()):
        print(f"  - {key}: {value:.6g}")
    if record.failures:
        print(f"⚠️  {len(record.failures)} flagged members/points (see record.json)")
    return 0


def _run_kubo(args, source: Settings) -> int:
    from .harness import kubo_table

    config = run_config_from_args(args, source, "kubo")
    table = kubo_table(config, gamma=args.gamma, infrared_cutoff=args.infrared_cutoff)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "kubo.csv", index=False)
    print(table.to_string(index=False))
    print(f"✅ Kubo table written to {out / 'kubo.csv'}")
    return 0


def _run_emit(args) -> int:
    from .export import emit_plotdata, load_record

    record = load_record(args.record)
    record_path = Path(args.record)
    out = Path(args.out) if args.out else (record_path if record_path.is_dir() else record_path.parent)
    written = emit_plotdata(record, args.which, out)
    print(f"✅ Wrote {len(written)} files to {out / args.which}")
    return 0


def _run_history(args, source: Settings) -> int:
    from .crud import get_runs
    from .database import get_db, init_db, make_engine

    engine = init_db(make_engine(source.DATABASE_URL))
    with get_db(engine) as db:
        runs = get_runs(db, kind=args.kind, limit=args.limit)
        print(f"📊 Found {len(runs)} runs in {source.DATABASE_URL}")
        for run in runs:
            print(
                f"  - #{run.id} {run.kind} {run.created_at:%Y-%m-%d %H:%M} seed={run.master_seed} "
                f"curves={run.n_curves} estimates={run.n_estimates} status={run.status} -> {run.output_dir}"
            )
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        source = get_settings(args.config)
        setup_logging(LoggingConfig(source))
        logger.debug(f"{source.APP_NAME} {__version__} ({source.ENVIRONMENT}) command={args.command}")

        if args.command in EXPERIMENTS:
            return _run_experiment(args, source)
        if args.command == "kubo":
            return _run_kubo(args, source)
        if args.command == "emit":
            return _run_emit(args)
        return _run_history(args, source)
    except QAnomalyError as e:
        logger.error(f"{type(e).__name__}: {e.detail}")
        print(f"❌ {e.detail}", file=sys.stderr)
        return e.exit_code
    except SchemaValidationError as e:
        logger.error(f"Invalid parameters: {str(e)}")
        print(f"❌ Invalid parameters:\n{e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
