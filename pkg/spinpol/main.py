"""Point d'entrée en ligne de commande de spinpol."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from spinpol import __version__
from spinpol.config import apply_overrides, environment_defaults, load_config_file
from spinpol.core.errors import SpinpolError
from spinpol.core.monitoring import LOG_FORMAT
from spinpol.core.monitoring.metrics import write_metrics
from spinpol.runner import execute

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = Path("config/config.yml")


def setup_logging(
    verbose: bool = False,
    settings: Optional[Dict[str, Any]] = None,
    level: Optional[str] = None,
) -> None:
    """Configure le logging.

    Args:
        verbose: Force le niveau DEBUG
        settings: Section ``logging`` du fichier de configuration
        level: Niveau issu de l'environnement (prioritaire sur le fichier)
    """
    settings = settings or {}
    name = "DEBUG" if verbose else (level or settings.get("level", "INFO"))
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if settings.get("file"):
        path = Path(settings["file"])
        path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(path))
    logging.basicConfig(
        level=getattr(logging, str(name).upper(), logging.INFO),
        format=settings.get("format", LOG_FORMAT),
        handlers=handlers,
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinpol",
        description="Polarisation nucléaire par mesures répétées du spin électronique",
    )
    parser.add_argument("--config", type=Path, default=None, help="Fichier YAML de configuration")
    parser.add_argument(
        "--mode",
        choices=["exact", "trajectory", "spectrum", "largek", "largek-uneven"],
        help="Remplace le mode de la configuration",
    )
    parser.add_argument("--seed", type=int, help="Graine (mode trajectory)")
    parser.add_argument("--out", type=Path, help="Fichier de sortie")
    parser.add_argument("--format", choices=["csv", "json"], help="Format de sortie")
    parser.add_argument(
        "--threads",
        type=int,
        help="Nombre de workers (CLI > env:SPINPOL_THREADS > fichier ; -1 = tous les cœurs)",
    )
    parser.add_argument("--metrics-file", type=Path, help="Écrit les métriques Prometheus (textfile)")
    parser.add_argument("--verbose", "-v", action="store_true", help="Logs DEBUG")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def report_error(error: SpinpolError) -> int:
    """Écrit l'erreur sur stderr en une ligne JSON et retourne le code de sortie."""
    sys.stderr.write(json.dumps(error.to_dict(), ensure_ascii=False) + "\n")
    return error.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        env = environment_defaults()
        config_path = args.config or DEFAULT_CONFIG
        config, logging_settings = load_config_file(config_path)
        setup_logging(args.verbose, logging_settings, env.get("log_level"))

        config = apply_overrides(config, threads=env.get("threads"))
        config = apply_overrides(
            config,
            mode=args.mode,
            seed=args.seed,
            out=str(args.out) if args.out else None,
            format=args.format,
            threads=args.threads,
        )
        outcome = execute(config)
        logger.info(f"Résultats : {outcome.output} (métadonnées {outcome.sidecar})")
        return 0
    except SpinpolError as e:
        logger.debug("Échec de l'exécution", exc_info=True)
        return report_error(e)
    finally:
        if args.metrics_file:
            write_metrics(args.metrics_file)


if __name__ == "__main__":
    sys.exit(main())
