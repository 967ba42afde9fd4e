#!/usr/bin/env python3
"""
Экспорт результатов crcnet (run / sweep) в Excel
"""
import sys
import logging
import argparse
from pathlib import Path
from typing import List, Optional

import openpyxl
import pandas as pd
from openpyxl.styles import Font, PatternFill, Alignment, Border, Side
from openpyxl.utils import get_column_letter

import config

logger = logging.getLogger(__name__)

MAX_SHEET_ROWS = 1_048_575


def setup_worksheet_styles(ws):
    """Настройка стилей для worksheet"""
    # Стиль заголовков
    header_fill = PatternFill(start_color="366092", end_color="366092", fill_type="solid")
    header_font = Font(bold=True, color="FFFFFF", size=11)

    # Стиль границ
    thin_border = Border(
        left=Side(style='thin'),
        right=Side(style='thin'),
        top=Side(style='thin'),
        bottom=Side(style='thin')
    )

    return header_fill, header_font, thin_border


def write_frame(wb, title: str, frame: pd.DataFrame, width: int = 14):
    """Лист с таблицей: стилизованные заголовки, границы, ширина колонок"""
    ws = wb.create_sheet(title[:31])
    header_fill, header_font, thin_border = setup_worksheet_styles(ws)

    for col_num, header in enumerate(frame.columns, 1):
        cell = ws.cell(row=1, column=col_num)
        cell.value = str(header)
        cell.fill = header_fill
        cell.font = header_font
        cell.alignment = Alignment(horizontal='center', vertical='center', wrap_text=True)
        cell.border = thin_border

    if len(frame) > MAX_SHEET_ROWS:
        logger.warning(f"⚠️ Лист {title}: обрезано до {MAX_SHEET_ROWS} строк")
        frame = frame.iloc[:MAX_SHEET_ROWS]

    for row_num, row in enumerate(frame.itertuples(index=False), 2):
        for col_num, value in enumerate(row, 1):
            if pd.isna(value):
                value = None
            elif hasattr(value, "item"):
                value = value.item()
            cell = ws.cell(row=row_num, column=col_num)
            cell.value = value
            cell.border = thin_border

    for col_num in range(1, len(frame.columns) + 1):
        ws.column_dimensions[get_column_letter(col_num)].width = width

    # Высота строки заголовков
    ws.row_dimensions[1].height = 30
    ws.freeze_panes = "A2"
    return ws


def write_summary(ws, directory: Path, timeseries: Optional[pd.DataFrame],
                  bounds: Optional[pd.DataFrame], sweeps: List[Path]):
    """Лист «Сводка»: итоговые значения, проверки границ и конфигурация"""
    ws['A1'].value = "СВОДКА CRCNET"
    ws['A1'].font = Font(bold=True, size=14)
    ws.merge_cells('A1:B1')

    summary_data = [
        ("", ""),
        ("Каталог", str(directory)),
    ]

    if timeseries is not None and not timeseries.empty:
        last = timeseries.iloc[-1]
        summary_data += [
            ("", ""),
            ("Итог на шаге T", ""),
            ("  • T", int(last["t"])),
            ("  • средний FNR", float(last["avg_fnr"])),
            ("  • средняя нагрузка", float(last["avg_load"])),
            ("  • средний FPR", float(last["avg_fpr"])),
        ]

    if bounds is not None and not bounds.empty:
        summary_data += [("", ""), ("Проверки границ", "выполнено / всего")]
        for check, group in bounds.groupby("check", sort=False):
            summary_data.append((f"  • {check}", f"{int(group['satisfied'].sum())} / {len(group)}"))

    if sweeps:
        summary_data += [("", ""), ("Свипы", "")]
        for path in sweeps:
            summary_data.append((f"  • {path.stem}", path.name))

    cfg_path = directory / "run_config.cfg"
    if cfg_path.exists():
        summary_data += [("", ""), ("Конфигурация", "")]
        for line in cfg_path.read_text(encoding="utf-8").splitlines():
            if "=" in line and not line.startswith("#"):
                key, value = line.split("=", 1)
                summary_data.append((f"  • {key}", value))

    for row_num, (label, value) in enumerate(summary_data, 1):
        if row_num == 1:
            continue
        ws.cell(row=row_num, column=1).value = label
        ws.cell(row=row_num, column=2).value = value

        # Стили для заголовков разделов
        if label and not label.startswith("  •") and value == "":
            ws.cell(row=row_num, column=1).font = Font(bold=True, size=11)

    ws.column_dimensions['A'].width = 40
    ws.column_dimensions['B'].width = 50


def export_results(directory: Path, output_path: Optional[Path] = None) -> Path:
    """Экспорт timeseries.csv, bounds.csv и sweep_*.csv каталога в один xlsx"""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Каталог результатов не найден: {directory}")

    timeseries_path = directory / "timeseries.csv"
    bounds_path = directory / "bounds.csv"
    sweeps = sorted(directory.glob("sweep_*.csv"))
    if not timeseries_path.exists() and not bounds_path.exists() and not sweeps:
        raise FileNotFoundError(f"В каталоге {directory} нет результатов run или sweep")

    timeseries = pd.read_csv(timeseries_path) if timeseries_path.exists() else None
    bounds = pd.read_csv(bounds_path) if bounds_path.exists() else None

    wb = openpyxl.Workbook()
    ws_summary = wb.active
    ws_summary.title = "Сводка"
    write_summary(ws_summary, directory, timeseries, bounds, sweeps)

    if timeseries is not None:
        write_frame(wb, "Динамика", timeseries)
    if bounds is not None:
        write_frame(wb, "Границы", bounds, width=18)
    for path in sweeps:
        write_frame(wb, f"Свип {path.stem.replace('sweep_', '')}", pd.read_csv(path))

    output_path = Path(output_path) if output_path else directory / "crcnet_results.xlsx"
    wb.save(output_path)
    logger.info(f"✅ Экспорт завершен: {output_path}")
    return output_path


def main():
    parser = argparse.ArgumentParser(
        description="Экспорт результатов crcnet в Excel"
    )
    parser.add_argument(
        'directory',
        type=str,
        nargs='?',
        default=str(config.OUTPUT_DIR),
        help=f"Каталог результатов (по умолчанию: {config.OUTPUT_DIR})"
    )
    parser.add_argument(
        '--output', '-o',
        type=str,
        default=None,
        help="Имя выходного файла (по умолчанию: <каталог>/crcnet_results.xlsx)"
    )

    args = parser.parse_args()

    try:
        output = export_results(Path(args.directory), Path(args.output) if args.output else None)
        print(f"✅ Экспорт завершен: {output}")
        return 0
    except FileNotFoundError as e:
        print(f"❌ {e}")
        return 2
    except Exception as e:
        import traceback
        print(f"❌ Ошибка при экспорте: {e}")
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
