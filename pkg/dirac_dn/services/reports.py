import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Dict, Iterable, List

import numpy as np
import pandas as pd
from django.conf import settings
from django.utils import timezone
from slugify import slugify

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


class ReportService:
    """Service for writing experiment tables, reports and manifests"""

    def run_directory(self, subcommand: str, short_id: str, root=None) -> Path:
        """Create <root>/<slug of subcommand and run id>."""
        root = Path(root or getattr(settings, 'DN_OUTPUT_ROOT', 'runs'))
        directory = root / slugify(f'{subcommand} {short_id}')
        os.makedirs(directory, exist_ok=True)
        return directory

    def split_complex(self, frame: pd.DataFrame, column: str) -> pd.DataFrame:
        """Replace a complex column by <column>_re / <column>_im."""
        values = np.asarray(frame[column].to_numpy(), dtype=complex)
        position = frame.columns.get_loc(column)
        frame = frame.drop(columns=[column])
        frame.insert(position, f'{column}_re', values.real)
        frame.insert(position + 1, f'{column}_im', values.imag)
        return frame

    def write_table(self, frame: pd.DataFrame, directory, name: str) -> Path:
        """CSV with a header row and every float written with 17 significant digits."""
        for column in frame.columns:
            if np.iscomplexobj(frame[column].to_numpy()):
                frame = self.split_complex(frame, column)
        path = Path(directory) / name
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        logger.debug("Wrote %s (%d rows)", path, len(frame))
        return path

    def checks_frame(self, checks: Iterable) -> pd.DataFrame:
        columns = ['name', 'value', 'tolerance', 'comparison', 'passed', 'grid']
        return pd.DataFrame([check.as_row() for check in checks], columns=columns)

    def write_report(self, directory, subcommand: str, checks: List, notes: List[str] = ()) -> Path:
        """Plain-text summary: one line per check, then free-form notes."""
        lines = [f'experiment: {subcommand}']
        failed = [check for check in checks if not check.passed]
        lines.append(f'checks: {len(checks)} ({len(failed)} failed)')
        for check in checks:
            bound = '' if check.tolerance is None else f' {check.comparison} {check.tolerance:.3e}'
            grid = f' [{check.grid}]' if check.grid else ''
            verdict = 'ok' if check.passed else 'FAIL'
            lines.append(f'  {check.name}{grid}: {check.value:.6e}{bound} {verdict}')
        lines.extend(notes)
        path = Path(directory) / 'report.txt'
        path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
        return path

    def file_digest(self, path) -> str:
        digest = hashlib.sha256()
        with open(path, 'rb') as handle:
            for chunk in iter(lambda: handle.read(1 << 16), b''):
                digest.update(chunk)
        return digest.hexdigest()

    def write_manifest(self, directory, files: Iterable[Path], metadata: Dict = None) -> Path:
        """manifest.json listing every output with its sha256; the timestamp sits on its own line."""
        directory = Path(directory)
        entries = []
        for path in sorted(Path(p) for p in files):
            entries.append({
                'file': path.relative_to(directory).as_posix(),
                'sha256': self.file_digest(path),
                'bytes': path.stat().st_size,
            })
        manifest = {'files': entries, **(metadata or {})}
        body = json.dumps(manifest, indent=2, sort_keys=True)
        stamp = json.dumps(timezone.now().isoformat())
        text = '{\n  "generated_at": ' + stamp + ',\n' + body[2:]
        path = directory / 'manifest.json'
        path.write_text(text + '\n', encoding='utf-8')
        logger.info("Manifest lists %d files in %s", len(entries), directory)
        return path


# Global instance
report_service = ReportService()
