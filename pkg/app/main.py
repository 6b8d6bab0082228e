"""
Punto de entrada de línea de comandos: ``python -m app.main <subcomando>``

Cualquier argumento ``--clave=valor`` no reconocido se aplica como override
de la configuración (claves punteadas permitidas: ``--manifest.label_space.xi=0.5``).
"""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from app.config import get_settings
from app.core.exceptions import ConfigurationError, UniDetError
from app.evalkit.reports import frame_to_markdown, report_to_markdown, write_report
from app.logger import configure_logging, get_logger
from app.scenegen.dataset import dataset_statistics, dump_images, generate_dataset
from app.schemas.common import Method
from app.schemas.experiment import ExperimentConfig
from app.services.presets import build_config, list_presets, parse_override_args
from app.workers.suite import DEFAULT_SEEDS, run_suite
from app.workers.trainer import evaluate_checkpoint, export_features, train

settings = get_settings()
logger = get_logger()


def _csv(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", help=f"Preset de escenario ({', '.join(list_presets())})")
    parser.add_argument("--config", type=Path, help="Archivo de configuración (sintaxis JSON)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unidet", description=f"{settings.PROJECT_NAME}: detección con adaptación de dominio universal")
    parser.add_argument("--log-level", default="INFO", help="Nivel de log en consola")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="Generar el dataset y mostrar estadísticas", allow_abbrev=False)
    _config_args(gen)
    gen.add_argument("--dump-images", type=int, default=0, metavar="N", help="Guardar N escenas PNG por split")
    gen.add_argument("--output", type=Path, help="Directorio de salida")

    tr = sub.add_parser("train", help="Entrenar una corrida por semilla", allow_abbrev=False)
    _config_args(tr)
    tr.add_argument("--seed", type=int, help="Entrenar solo esta semilla")

    ev = sub.add_parser("eval", help="Evaluar un checkpoint", allow_abbrev=False)
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--config", type=Path, help="Configuración (por defecto config.json junto al checkpoint)")
    ev.add_argument("--output", type=Path, help="Directorio donde escribir metrics.json/md")

    su = sub.add_parser("suite", help="Presets × métodos × semillas con tablas comparativas", allow_abbrev=False)
    su.add_argument("--presets", type=_csv, required=True)
    su.add_argument("--methods", type=_csv, default=[m.value for m in Method])
    su.add_argument("--seeds", type=_csv, default=[str(s) for s in DEFAULT_SEEDS])
    su.add_argument("--workers", type=int, default=1)
    su.add_argument("--m-sweep", type=_csv, default=None, help="Valores de m a barrer para los métodos con filtro")
    su.add_argument("--output", type=Path, help="Directorio raíz de la suite")
    su.add_argument("--no-chart", action="store_true", help="No generar summary.svg")

    ex = sub.add_parser("export-features", help="Exportar features de instancia a CSV", allow_abbrev=False)
    ex.add_argument("--checkpoint", type=Path, required=True)
    ex.add_argument("--config", type=Path)
    ex.add_argument("--output", type=Path, required=True)
    return parser


def cmd_generate(args, overrides) -> int:
    config = build_config(args.preset, args.config, overrides)
    dataset = generate_dataset(config.manifest)
    output = Path(args.output or Path(settings.UNIDET_OUTPUT_ROOT) / config.name / (config.preset or "custom") / "dataset")
    output.mkdir(parents=True, exist_ok=True)
    stats = dataset_statistics(dataset)
    (output / "dataset_stats.json").write_text(
        json.dumps([s.model_dump(mode="json") for s in stats], indent=2)
    )
    frame = pd.DataFrame(
        [
            {
                "split": f"{s.domain.value}_{s.split}",
                "images": s.images,
                "objects": s.objects,
                "mean_area": s.mean_area,
                **{f"frac_{k}": v for k, v in s.bucket_fractions.items()},
            }
            for s in stats
        ]
    )
    print(json.dumps(dataset.label_space.summary()))
    print(frame_to_markdown(frame))
    if args.dump_images:
        dump_images(dataset, output / "images", args.dump_images)
    logger.info(f"Estadísticas escritas en {output / 'dataset_stats.json'}")
    return 0


def cmd_train(args, overrides) -> int:
    config = build_config(args.preset, args.config, overrides)
    seeds = [args.seed] if args.seed is not None else config.seeds
    dataset = generate_dataset(config.manifest)
    for seed in seeds:
        record = train(config, seed=seed, dataset=dataset)
        print(f"seed={seed} mAP={record.metrics.mean_ap:.4f} -> {record.run_dir}")
    return 0


def _checkpoint_config(args, overrides) -> Optional[ExperimentConfig]:
    """
    Configuración para eval/export-features

    Sin ``--config`` los overrides se aplican sobre el config.json que está
    junto al checkpoint.
    """
    if args.config:
        return build_config(config_path=args.config, overrides=overrides)
    if not overrides:
        return None
    config_file = args.checkpoint.parent / "config.json"
    if not config_file.exists():
        raise ConfigurationError(
            f"Overrides {sorted(overrides)} sin --config y sin {config_file} junto al checkpoint"
        )
    logger.info(f"Aplicando overrides {sorted(overrides)} sobre {config_file}")
    return build_config(config_path=config_file, overrides=overrides)


def cmd_eval(args, overrides) -> int:
    config = _checkpoint_config(args, overrides)
    report = evaluate_checkpoint(args.checkpoint, config)
    write_report(report, args.output or args.checkpoint.parent)
    print(report_to_markdown(report))
    return 0


def cmd_suite(args, overrides) -> int:
    result = run_suite(
        presets=args.presets,
        methods=[Method(m) for m in args.methods],
        seeds=[int(s) for s in args.seeds],
        output_root=args.output,
        workers=args.workers,
        m_sweep=[float(m) for m in args.m_sweep] if args.m_sweep else None,
        overrides=overrides,
        chart=not args.no_chart,
    )
    print(result.files["summary_md"].read_text())
    return 1 if result.failures else 0


def cmd_export_features(args, overrides) -> int:
    config = _checkpoint_config(args, overrides)
    path = export_features(args.checkpoint, args.output, config)
    print(path)
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "suite": cmd_suite,
    "export-features": cmd_export_features,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    configure_logging(args.log_level)
    try:
        overrides = parse_override_args(extra)
        return COMMANDS[args.command](args, overrides)
    except UniDetError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
