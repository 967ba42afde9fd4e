#!/usr/bin/env python3
"""
crcnet - Распределённый контроль риска (D-CRC / CD-CRC) с ограничением
ёмкости канала: прогон, свипы, проверка границ и утилиты кодека
"""
import sys
import logging
import argparse
from pathlib import Path
from typing import List, Optional

import pandas as pd

import config
import runner
from analysis import SchemeMismatchError, TrajectoryFormatError
from codec import CodecError
from control import InvariantError, Scheme
from core import DimensionError
from export_to_excel import export_results
from simnet import ScoreFileError

EXIT_OK = 0
EXIT_BOUND_FAILED = 1
EXIT_INVALID_INPUT = 2
EXIT_INTERRUPTED = 130

INPUT_ERRORS = (
    runner.ConfigError, CodecError, ScoreFileError, SchemeMismatchError,
    TrajectoryFormatError, DimensionError, FileNotFoundError,
)


def setup_logging():
    """Настройка логирования"""
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
        format=config.LOG_FORMAT,
        handlers=[
            logging.FileHandler(config.LOG_FILE, encoding='utf-8'),
            logging.StreamHandler(sys.stdout)
        ]
    )


def print_summary(title: str, rows: pd.DataFrame, ok: bool):
    """Вывод итоговой таблицы"""
    print("\n" + "="*60)
    print(f"📊 {title}")
    print("="*60)
    print(rows.to_string(index=False))
    print("-"*60)
    print("✅ Все проверяемые границы выполнены" if ok else "❌ Есть нарушенные границы")
    print("="*60 + "\n")


def bounds_summary(bounds: pd.DataFrame) -> pd.DataFrame:
    """Сводка отчёта по границам: число выполненных проверок по каждому типу"""
    summary = (
        bounds.groupby("check", sort=False)
        .agg(выполнено=("satisfied", "sum"), всего=("satisfied", "size"),
             мин_запас=("slack", "min"), влияет=("gating", "first"))
        .reset_index()
    )
    return summary


def parse_values(raw: str) -> List[float]:
    try:
        return [float(v) for v in raw.replace("[", "").replace("]", "").split(",") if v.strip()]
    except ValueError:
        raise runner.ConfigError("values", f"ожидался список чисел через запятую: {raw!r}")


def cmd_run(args) -> int:
    cfg = runner.load_run_config(args.config)
    result = runner.run(cfg, output_dir=args.output, workers=args.workers)

    final = pd.DataFrame([{"схема": cfg.scheme.value, **result.final}])
    print_summary(f"ИТОГ ЗАПУСКА ({result.output_dir})", final, result.ok)
    print(bounds_summary(result.bounds).to_string(index=False))
    return EXIT_OK if result.ok else EXIT_BOUND_FAILED


def cmd_sweep(args) -> int:
    cfg = runner.load_run_config(args.config)
    schemes = [s.strip() for s in args.schemes.split(",")] if args.schemes else runner.DEFAULT_SCHEMES
    try:
        schemes = [Scheme(s) for s in schemes]
    except ValueError:
        raise runner.ConfigError("schemes", f"неизвестная схема в {args.schemes!r}")

    summary, ok = runner.sweep(cfg, args.axis, parse_values(args.values), schemes,
                               output_dir=args.output, workers=args.workers)
    print_summary(f"СВИП ПО {args.axis.upper()}", summary, ok)
    return EXIT_OK if ok else EXIT_BOUND_FAILED


def cmd_verify(args) -> int:
    bounds, ok = runner.verify(args.directory, args.scheme)
    print_summary(f"ПРОВЕРКА {args.directory}", bounds_summary(bounds), ok)
    if args.output:
        runner.write_csv(bounds, Path(args.output))
    return EXIT_OK if ok else EXIT_BOUND_FAILED


def cmd_codec(args) -> int:
    if args.codec_command == "rank":
        rank, length = runner.codec_rank(args.block)
        print(f"rank={rank} length={length}")
    elif args.codec_command == "cost":
        print(f"{runner.codec_cost(args.file, args.block_size):.12g}")
    else:
        table = runner.codec_table(args.m)
        print(table.to_string(index=False))
    return EXIT_OK


def cmd_export(args) -> int:
    output = export_results(Path(args.directory), Path(args.output) if args.output else None)
    print(f"✅ Экспорт завершён: {output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crcnet",
        description="Распределённый контроль риска с ограничением ёмкости канала"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser('run', help="Прогон схемы по всем сидам конфигурации")
    run_parser.add_argument('-c', '--config', required=True, help="Файл конфигурации key=value")
    run_parser.add_argument('-o', '--output', default=None,
                            help="Каталог результатов (по умолчанию: output_dir из конфигурации)")
    run_parser.add_argument('--workers', type=int, default=None,
                            help=f"Число процессов (по умолчанию: {config.MAX_WORKERS})")
    run_parser.set_defaults(handler=cmd_run)

    sweep_parser = sub.add_parser('sweep', help="Свип по α или C")
    sweep_parser.add_argument('-c', '--config', required=True, help="Файл конфигурации key=value")
    sweep_parser.add_argument('--axis', required=True, choices=runner.SWEEP_AXES, help="Ось свипа")
    sweep_parser.add_argument('--values', required=True, help="Значения через запятую, например 0.1,0.15,0.2")
    sweep_parser.add_argument('--schemes', default=None,
                              help="Схемы через запятую (по умолчанию: dcrc,cdcrc,u-cdcrc)")
    sweep_parser.add_argument('-o', '--output', default=None, help="Каталог результатов")
    sweep_parser.add_argument('--workers', type=int, default=None, help="Число процессов")
    sweep_parser.set_defaults(handler=cmd_sweep)

    verify_parser = sub.add_parser('verify', help="Офлайн-проверка границ по каталогу запуска")
    verify_parser.add_argument('directory', help="Каталог, созданный командой run")
    verify_parser.add_argument('--scheme', default=None, choices=[s.value for s in Scheme],
                               help="Ожидаемая схема траекторий")
    verify_parser.add_argument('-o', '--output', default=None, help="Записать отчёт в CSV")
    verify_parser.set_defaults(handler=cmd_verify)

    codec_parser = sub.add_parser('codec', help="Утилиты блочного кодека")
    codec_sub = codec_parser.add_subparsers(dest="codec_command", required=True)
    rank_parser = codec_sub.add_parser('rank', help="Ранг и длина кодового слова блока")
    rank_parser.add_argument('block', help="Блок из 0 и 1, например 0111111111")
    cost_parser = codec_sub.add_parser('cost', help="Нормированная стоимость B вектора из файла")
    cost_parser.add_argument('file', help="Файл с вектором из 0 и 1")
    cost_parser.add_argument('-m', '--block-size', type=int, default=config.BLOCK_SIZE,
                             help=f"Размер блока (по умолчанию: {config.BLOCK_SIZE})")
    table_parser = codec_sub.add_parser('table', help=f"Таблица рангов для m ≤ {config.CODEC_TABLE_MAX}")
    table_parser.add_argument('m', type=int, help="Размер блока")
    codec_parser.set_defaults(handler=cmd_codec)

    export_parser = sub.add_parser('export', help="Экспорт результатов в Excel")
    export_parser.add_argument('directory', help="Каталог результатов run или sweep")
    export_parser.add_argument('-o', '--output', default=None, help="Имя xlsx-файла")
    export_parser.set_defaults(handler=cmd_export)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    # Настройка логирования
    setup_logging()
    logger = logging.getLogger(__name__)

    logger.info("="*60)
    logger.info(f"CRCNET {args.command.upper()} - ЗАПУСК")
    logger.info("="*60)

    try:
        return args.handler(args)
    except INPUT_ERRORS as e:
        logger.error(f"❌ Ошибка входных данных: {e}")
        return EXIT_INVALID_INPUT
    except InvariantError as e:
        logger.error(f"❌ {e}")
        return EXIT_BOUND_FAILED
    except KeyboardInterrupt:
        logger.warning("⚠️ Прервано пользователем")
        return EXIT_INTERRUPTED
    except Exception as e:
        logger.error(f"❌ Критическая ошибка: {e}", exc_info=True)
        return EXIT_BOUND_FAILED
    finally:
        logger.info("="*60)


if __name__ == "__main__":
    sys.exit(main())
