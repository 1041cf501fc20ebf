"""
Запись результатов: CSV файлы с версией схемы и сводная книга Excel.
"""

import csv
import math
import os
from datetime import datetime
from typing import Dict, Iterable, List, Optional, Sequence

from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side

from config import CSV_SCHEMA_VERSION, TIMEZONE, logger

NA = 'NA'

TRAFFIC_FIELDS = ['C_over_SM', 'policy', 'N', 'B_normalized']
ALLOCATION_FIELDS = ['C_over_SM', 'popularity_rank_fraction', 'eta']
NU_STAR_FIELDS = ['C_over_SM', 'N', 'nu_star']
CHE_SWEEP_FIELDS = ['C_over_SM', 'N', 'nu_star', 'B_normalized', 't_C']
FILE_ALLOCATION_FIELDS = ['file_rank', 'p', 'eta', 'contribution_to_B']
HIT_RATE_FIELDS = ['source', 'file_rank', 'chunk', 'hit_rate']


def format_value(value) -> str:
    """Форматировать значение ячейки CSV; пропуски и NaN - 'NA'."""
    if value is None or value == '':
        return NA
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        if math.isnan(value):
            return NA
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return format(value, '.12g')
    return str(value)


def write_csv(path: str, schema: str, fieldnames: Sequence[str], rows: Iterable[Dict]) -> str:
    """
    Записать CSV: строка-комментарий со схемой, заголовок, по строке на наблюдение.

    Args:
        path: Путь к файлу
        schema: Имя схемы
        fieldnames: Столбцы
        rows: Строки (словари)

    Returns:
        Путь к файлу
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    count = 0
    with open(path, 'w', newline='', encoding='utf-8') as f:
        f.write(f'# schema: {schema} v{CSV_SCHEMA_VERSION}\r\n')
        writer = csv.writer(f, lineterminator='\r\n')
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([format_value(row.get(name)) for name in fieldnames])
            count += 1

    logger.info(f"Записан {path} ({count} строк)")
    return path


def read_csv(path: str) -> List[Dict[str, str]]:
    """Прочитать CSV, записанный write_csv (строка схемы пропускается)."""
    with open(path, 'r', newline='', encoding='utf-8') as f:
        lines = [line for line in f if not line.startswith('#')]
    return list(csv.DictReader(lines))


def write_traffic_csv(out_dir: str, rows: Iterable[Dict]) -> str:
    """Запись traffic.csv в папку результатов."""
    return write_csv(os.path.join(out_dir, 'traffic.csv'), 'traffic', TRAFFIC_FIELDS, rows)


def write_allocation_csv(out_dir: str, rows: Iterable[Dict]) -> str:
    """Запись allocation.csv в папку результатов."""
    return write_csv(os.path.join(out_dir, 'allocation.csv'), 'allocation', ALLOCATION_FIELDS, rows)


def write_nu_star_csv(out_dir: str, rows: Iterable[Dict]) -> str:
    """Запись nu_star.csv в папку результатов."""
    return write_csv(os.path.join(out_dir, 'nu_star.csv'), 'nu_star', NU_STAR_FIELDS, rows)


def write_che_sweep_csv(out_dir: str, rows: Iterable[Dict]) -> str:
    """Запись che_sweep.csv в папку результатов."""
    return write_csv(os.path.join(out_dir, 'che_sweep.csv'), 'che_sweep', CHE_SWEEP_FIELDS, rows)


def write_file_allocation_csv(path: str, rows: Iterable[Dict]) -> str:
    """Запись размещения по файлам (allocation_<method>.csv)."""
    return write_csv(path, 'file_allocation', FILE_ALLOCATION_FIELDS, rows)


def write_hit_rates_csv(path: str, rows: Iterable[Dict]) -> str:
    """Запись вероятностей попадания по чанкам."""
    return write_csv(path, 'hit_rates', HIT_RATE_FIELDS, rows)


def create_summary_excel(
    output_path: str,
    traffic_rows: List[Dict],
    nu_rows: List[Dict],
    summary: Dict,
    title: Optional[str] = None
) -> str:
    """
    Создать Excel книгу со сводкой свипа.

    Лист "Трафик" - нормированный трафик по политикам, лист "nu*" - оптимальный
    tail drop factor, внизу первого листа - итоги (пиковый выигрыш).

    Args:
        output_path: Путь для сохранения
        traffic_rows: Строки traffic.csv
        nu_rows: Строки nu_star.csv
        summary: Итоги свипа
        title: Заголовок

    Returns:
        Путь к созданному файлу
    """
    logger.info("Генерация сводной книги Excel")

    wb = Workbook()
    ws = wb.active
    ws.title = "Трафик"

    # Стили
    title_font = Font(name='Arial', size=14, bold=True, color='FFFFFF')
    header_font = Font(name='Arial', size=11, bold=True, color='FFFFFF')
    cell_font = Font(name='Arial', size=10)

    title_fill = PatternFill(start_color='4472C4', end_color='4472C4', fill_type='solid')
    header_fill = PatternFill(start_color='5B9BD5', end_color='5B9BD5', fill_type='solid')
    alternate_fill = PatternFill(start_color='E7E6E6', end_color='E7E6E6', fill_type='solid')

    border = Border(
        left=Side(style='thin'),
        right=Side(style='thin'),
        top=Side(style='thin'),
        bottom=Side(style='thin')
    )
    center_alignment = Alignment(horizontal='center', vertical='center', wrap_text=True)

    def fill_sheet(sheet, heading: str, headers: Sequence[str], rows: List[Dict]) -> int:
        last_col = chr(ord('A') + len(headers) - 1)
        sheet.merge_cells(f'A1:{last_col}1')
        sheet['A1'] = heading
        sheet['A1'].font = title_font
        sheet['A1'].fill = title_fill
        sheet['A1'].alignment = center_alignment
        sheet.row_dimensions[1].height = 25

        for col_num, header in enumerate(headers, 1):
            cell = sheet.cell(row=3, column=col_num, value=header)
            cell.font = header_font
            cell.fill = header_fill
            cell.alignment = center_alignment
            cell.border = border

        for idx, row in enumerate(rows, 1):
            fill = alternate_fill if idx % 2 == 0 else PatternFill()
            for col_num, header in enumerate(headers, 1):
                value = row.get(header)
                if isinstance(value, float) and math.isnan(value):
                    value = NA
                cell = sheet.cell(row=idx + 3, column=col_num, value=NA if value is None else value)
                cell.font = cell_font
                cell.alignment = center_alignment
                cell.border = border
                cell.fill = fill

        for col_num in range(len(headers)):
            sheet.column_dimensions[chr(ord('A') + col_num)].width = 16
        return len(rows) + 5

    footer_row = fill_sheet(ws, title or 'ТРАФИК В CORE-СЕТИ', TRAFFIC_FIELDS, traffic_rows)

    # Итоги
    for key, value in summary.items():
        ws.cell(row=footer_row, column=1, value=str(key)).font = Font(name='Arial', size=10, bold=True)
        ws.cell(row=footer_row, column=2, value=NA if value is None else value).font = cell_font
        footer_row += 1

    # Подпись
    footer_row += 1
    ws.merge_cells(f'A{footer_row}:D{footer_row}')
    ws[f'A{footer_row}'] = f'Сгенерировано: {datetime.now(TIMEZONE).strftime("%d.%m.%Y %H:%M")}'
    ws[f'A{footer_row}'].font = Font(name='Arial', size=9, italic=True, color='808080')
    ws[f'A{footer_row}'].alignment = center_alignment

    if nu_rows:
        fill_sheet(wb.create_sheet("nu*"), 'ОПТИМАЛЬНЫЙ TAIL DROP FACTOR', NU_STAR_FIELDS, nu_rows)

    directory = os.path.dirname(output_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    wb.save(output_path)
    logger.info(f"Сводка сохранена: {output_path}")
    return output_path
