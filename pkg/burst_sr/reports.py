"""Evaluation report builder: CSV tables, JSON summary, Excel and PDF exports."""
import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from reportlab.lib import colors
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from burst_sr import quality
from burst_sr.classic_sr import bicubic_upsample
from burst_sr.errors import InvalidArgumentError, NoEdgeError, AmbiguousPeakError
from burst_sr.imaging import as_raster, decimate
from burst_sr.raster_io import write_json_atomic

logger = logging.getLogger(__name__)

FWHM_COLUMNS = ['band', 'fwhm_native', 'fwhm_bicubic', 'fwhm_sr', 'sr_ratio']
SPECTRUM_COLUMNS = ['frequency', 'power_sr', 'power_bicubic', 'ratio']
FLOAT_FORMAT = '%.6f'
SUMMARY_DIGITS = 8
# Spectral gain is judged above this frequency (cycles/pixel)
GAIN_MIN_FREQUENCY = 0.1
NSS_CORPUS_SIZE = 4


# ---------------------------------------------------------------------------
# ROI files
# ---------------------------------------------------------------------------

@dataclass
class RoiSet:
    """Regions named in an ROI file, all on the LR reference grid."""
    edges: List[quality.EdgeRoi] = field(default_factory=list)
    targets: Dict[str, quality.Roi] = field(default_factory=dict)
    transect: Optional[Tuple[Tuple[float, float], Tuple[float, float]]] = None
    red_band: int = 2
    nir_band: int = 3


def _roi(entry, cls=quality.Roi):
    try:
        kwargs = dict(row=int(entry['row']), col=int(entry['col']),
                      height=int(entry['height']), width=int(entry['width']))
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidArgumentError(f"Malformed ROI entry {entry!r}: {e}") from e
    if cls is quality.EdgeRoi:
        kwargs['orientation'] = entry.get('orientation', 'vertical')
    return cls(**kwargs)


def load_rois(path):
    """Read an ROI JSON file with optional ``edges``, ``targets`` and ``transect`` keys."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"ROI file not found: {path}")
    with open(path, 'r') as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidArgumentError(f"ROI file {path} is not valid JSON: {e}") from e
    return rois_from_dict(raw)


def rois_from_dict(raw):
    rois = RoiSet(red_band=int(raw.get('red_band', 2)), nir_band=int(raw.get('nir_band', 3)))
    rois.edges = [_roi(e, quality.EdgeRoi) for e in raw.get('edges', [])]
    rois.targets = {str(name): _roi(e) for name, e in sorted(raw.get('targets', {}).items())}
    if raw.get('transect'):
        line = raw['transect']
        rois.transect = (tuple(map(float, line['start'])), tuple(map(float, line['end'])))
    return rois


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def fwhm_table(rows):
    """FWHM table from ``(band, native, bicubic, sr)`` rows; the ratio is reported to one decimal."""
    records = []
    for band, native, bicubic, sr in rows:
        records.append({'band': band, 'fwhm_native': native, 'fwhm_bicubic': bicubic,
                        'fwhm_sr': sr, 'sr_ratio': round(quality.sr_ratio(bicubic, sr), 1)})
    return pd.DataFrame(records, columns=FWHM_COLUMNS)


def published_table_check(table=quality.PUBLISHED_FWHM_TABLE, rounding=0.05):
    """Recompute the SR ratio of every row of a published FWHM table.

    Published FWHMs are rounded to one decimal, so the true ratio lies in
    ``[ratio_low, ratio_high]``. The published ratio is rounded as well, so a
    row is consistent when that interval meets the ratio's own rounding cell.
    ``within_interval`` is the stricter test on the published value alone.
    """
    records = []
    for band, native, bicubic, sr, published in table:
        low = (bicubic - rounding) / (sr + rounding)
        high = (bicubic + rounding) / (sr - rounding)
        records.append({
            'band': band,
            'fwhm_native': native,
            'fwhm_bicubic': bicubic,
            'fwhm_sr': sr,
            'published_ratio': published,
            'computed_ratio': quality.sr_ratio(bicubic, sr),
            'ratio_low': low,
            'ratio_high': high,
            'within_interval': bool(low <= published <= high),
            'consistent': bool(max(low, published - rounding) <= min(high, published + rounding)),
        })
    return pd.DataFrame(records)


def spectrum_table(sr, bicubic, bins=64):
    """Radial power of SR and bicubic products with their per-bin ratio."""
    ps = quality.power_spectrum(sr, bins)
    pb = quality.power_spectrum(bicubic, bins)
    return pd.DataFrame({'frequency': ps.frequencies, 'power_sr': ps.power,
                         'power_bicubic': pb.power, 'ratio': quality.spectrum_gain(sr, bicubic, bins)},
                        columns=SPECTRUM_COLUMNS)


def write_csv(table, path):
    """Deterministic CSV: fixed float format, Unix newlines, no index."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return path


def write_profile(path, positions, values, columns=('position', 'value')):
    """Two-column profile CSV."""
    table = pd.DataFrame({columns[0]: np.asarray(positions, dtype=np.float64),
                          columns[1]: np.asarray(values, dtype=np.float64)})
    return write_csv(table, path)


def _clean(value):
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            return None
        return float(f"{float(value):.{SUMMARY_DIGITS}g}")
    return value


def write_summary(path, summary):
    """JSON summary with sorted keys and floats rounded to fixed precision."""
    write_json_atomic(path, _clean(summary))
    return path


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvaluationReport:
    s: int
    fwhm: pd.DataFrame
    spectrum: pd.DataFrame
    summary: Dict[str, object]
    reflectance: Optional[pd.DataFrame] = None
    profiles: Dict[str, Tuple[np.ndarray, np.ndarray, Tuple[str, str]]] = field(default_factory=dict)

    def tables(self):
        out = {'FWHM': self.fwhm, 'Spectrum': self.spectrum}
        if self.reflectance is not None:
            out['Reflectance'] = self.reflectance
        return out


def default_nss_model(patch=32, regularization=1e-3):
    """Pristine-statistics model fit on a small deterministic corpus of procedural scenes."""
    from burst_sr.data_generator import textured_scene

    corpus = [textured_scene((128, 128), seed=seed, shapes=6) for seed in range(NSS_CORPUS_SIZE)]
    return quality.fit_nss_model(corpus, patch=patch, regularization=regularization)


def _grid_factor(sr, reference):
    h, w = sr.shape[:2]
    rh, rw = reference.shape[:2]
    if h % rh or w % rw or h // rh != w // rw:
        raise InvalidArgumentError(f"SR grid {h}×{w} is not an integer multiple of reference {rh}×{rw}")
    return h // rh


def _band_fwhm(image, roi, band, bin_size):
    try:
        return quality.measure_lsf(image[..., band:band + 1], roi, bin_size=bin_size).fwhm
    except (NoEdgeError, AmbiguousPeakError) as e:
        logger.warning("No FWHM for band %d in %s: %s", band, roi, e)
        return math.nan


def _fwhm_rows(sr, bicubic, reference, rois, s, bin_size):
    rows = []
    for band in range(reference.shape[2]):
        native, bic, sup = [], [], []
        for roi in rois.edges:
            hr_roi = quality.EdgeRoi(roi.row * s, roi.col * s, roi.height * s, roi.width * s, roi.orientation)
            native.append(_band_fwhm(reference, roi, band, bin_size))
            bic.append(_band_fwhm(bicubic, hr_roi, band, bin_size))
            sup.append(_band_fwhm(sr, hr_roi, band, bin_size))
        values = [float(np.nanmean(v)) if np.any(np.isfinite(v)) else math.nan for v in (native, bic, sup)]
        if all(math.isfinite(v) and v > 0 for v in values):
            rows.append((band,) + tuple(values))
    return rows


def evaluate_product(sr, reference, rois=None, bicubic=None, truth=None, nss_model=None, settings=None):
    """Run the quality battery on an SR product against its LR reference.

    ``settings`` is the ``quality`` config section. FWHMs are reported in
    pixels of the grid they were measured on.
    """
    settings = settings or {}
    bins = int(settings.get('spectrum_bins', 64))
    bin_size = float(settings.get('esf_bin', 0.25))
    sr = as_raster(sr)
    reference = as_raster(reference)
    if sr.shape[2] != reference.shape[2]:
        raise InvalidArgumentError(f"SR has {sr.shape[2]} bands, reference has {reference.shape[2]}")
    s = _grid_factor(sr, reference)
    rois = rois or RoiSet()
    bicubic = as_raster(bicubic) if bicubic is not None else bicubic_upsample(reference, s)
    if nss_model is None:
        nss_model = default_nss_model(int(settings.get('nss_patch', 32)),
                                      float(settings.get('nss_regularization', 1e-3)))

    fwhm = fwhm_table(_fwhm_rows(sr, bicubic, reference, rois, s, bin_size))
    spectrum = spectrum_table(sr, bicubic, bins)
    high = spectrum['frequency'] > GAIN_MIN_FREQUENCY
    targets = rois.targets or {'scene': quality.Roi(0, 0, reference.shape[0], reference.shape[1])}

    summary = {
        's': s,
        'bands': int(reference.shape[2]),
        'spectral_deviation': quality.spectral_match(reference, sr, targets, s),
        'correlation': quality.pearson_corr(decimate(sr, s, 'block'), reference),
        'nss_score_sr': quality.quality_score(sr, nss_model),
        'nss_score_bicubic': quality.quality_score(bicubic, nss_model),
        'spectrum_gain_fraction': float(np.mean(spectrum.loc[high, 'ratio'] > 1.0)) if high.any() else None,
        'mean_sr_ratio': float((fwhm['fwhm_bicubic'] / fwhm['fwhm_sr']).mean()) if len(fwhm) else None,
    }
    if truth is not None:
        truth = as_raster(truth)
        if truth.shape != sr.shape:
            raise InvalidArgumentError(f"Truth {truth.shape} does not match SR {sr.shape}")
        summary['max_abs_error'] = float(np.max(np.abs(sr - truth)))
        summary['l1_sr'] = float(np.mean(np.abs(sr - truth)))
        summary['l1_bicubic'] = float(np.mean(np.abs(bicubic - truth)))

    report = EvaluationReport(s=s, fwhm=fwhm, spectrum=spectrum, summary=summary)
    if rois.targets:
        report.reflectance = quality.roi_reflectance_table(sr, reference, rois.targets, s)

    for roi_index, roi in enumerate(rois.edges):
        hr_roi = quality.EdgeRoi(roi.row * s, roi.col * s, roi.height * s, roi.width * s, roi.orientation)
        try:
            lsf = quality.measure_lsf(sr, hr_roi, bin_size=bin_size)
        except (NoEdgeError, AmbiguousPeakError) as e:
            logger.warning("Skipping edge profile %d: %s", roi_index, e)
            continue
        report.profiles[f'esf_{roi_index}'] = (lsf.positions, lsf.esf, ('position', 'esf'))
        report.profiles[f'lsf_{roi_index}'] = (lsf.lsf_positions, lsf.lsf, ('position', 'lsf'))

    if rois.transect is not None and reference.shape[2] > max(rois.red_band, rois.nir_band):
        (r0, c0), (r1, c1) = rois.transect
        lr_ndvi = quality.ndvi(reference[..., rois.red_band], reference[..., rois.nir_band])
        sr_ndvi = quality.ndvi(sr[..., rois.red_band], sr[..., rois.nir_band])
        lr_line = quality.transect(lr_ndvi, (r0, c0), (r1, c1))
        sr_line = quality.transect(sr_ndvi, (r0 * s, c0 * s), (r1 * s, c1 * s), step=s)
        n = min(len(lr_line), len(sr_line))
        positions = np.arange(n, dtype=np.float64)
        report.profiles['transect_lr'] = (positions, lr_line[:n], ('position', 'ndvi'))
        report.profiles['transect_sr'] = (positions, sr_line[:n], ('position', 'ndvi'))
        agreement = quality.transect_agreement(sr_line[:n], lr_line[:n])
        summary['transect_pearson'] = agreement['pearson']
        summary['transect_mean_abs_diff'] = agreement['mean_abs_diff']
    return report


def write_report(report, out_dir, excel=False, pdf=False):
    """Write every table and profile of ``report`` under ``out_dir``. Returns output paths."""
    os.makedirs(out_dir, exist_ok=True)
    outputs = {
        'fwhm_table': write_csv(report.fwhm, os.path.join(out_dir, 'fwhm_table.csv')),
        'spectrum': write_csv(report.spectrum, os.path.join(out_dir, 'spectrum.csv')),
        'summary': write_summary(os.path.join(out_dir, 'summary.json'), report.summary),
    }
    if report.reflectance is not None:
        outputs['reflectance'] = write_csv(report.reflectance, os.path.join(out_dir, 'roi_reflectance.csv'))
    for name, (positions, values, columns) in sorted(report.profiles.items()):
        outputs[name] = write_profile(os.path.join(out_dir, f'{name}.csv'), positions, values, columns)
    if excel:
        outputs['excel'] = export_report_to_excel(os.path.join(out_dir, 'report.xlsx'), report)
    if pdf:
        outputs['pdf'] = export_report_to_pdf(os.path.join(out_dir, 'report.pdf'), report)
    return outputs


# ---------------------------------------------------------------------------
# Excel / PDF
# ---------------------------------------------------------------------------

def _summary_frame(summary):
    keys = sorted(summary)
    return pd.DataFrame({'Metric': keys, 'Value': [summary[k] for k in keys]})


def export_report_to_excel(filepath, report):
    """Export the report tables to an Excel workbook, one sheet per table."""
    try:
        directory = os.path.dirname(filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with pd.ExcelWriter(filepath, engine='openpyxl') as writer:
            _summary_frame(report.summary).to_excel(writer, sheet_name='Summary', index=False)
            for name, table in report.tables().items():
                table.to_excel(writer, sheet_name=name, index=False)
        print(f"✓ Exported report to {filepath}")
        print(f"  - {len(report.fwhm)} FWHM rows")
        print(f"  - {len(report.spectrum)} spectrum bins")
        return filepath
    except Exception as e:
        print(f"✗ Error generating report: {e}")
        raise


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.4f}" if math.isfinite(value) else 'n/a'
    return 'n/a' if value is None else str(value)


def _styled_table(data, font_size=10):
    table = Table(data)
    table.setStyle(TableStyle([
        ('BACKGROUND', (0, 0), (-1, 0), colors.grey),
        ('TEXTCOLOR', (0, 0), (-1, 0), colors.whitesmoke),
        ('ALIGN', (0, 0), (-1, -1), 'CENTER'),
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
        ('FONTSIZE', (0, 0), (-1, 0), font_size),
        ('FONTSIZE', (0, 1), (-1, -1), font_size - 2),
        ('BOTTOMPADDING', (0, 0), (-1, 0), 12),
        ('GRID', (0, 0), (-1, -1), 1, colors.black),
        ('ROWBACKGROUNDS', (0, 1), (-1, -1), [colors.white, colors.lightgrey]),
    ]))
    return table


def export_report_to_pdf(filepath, report):
    """Export the summary and FWHM table to a one-page PDF."""
    try:
        directory = os.path.dirname(filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)
        doc = SimpleDocTemplate(filepath, pagesize=letter)
        styles = getSampleStyleSheet()
        story = [Paragraph("Super-Resolution Evaluation Report", styles['Title']),
                 Spacer(1, 0.2 * inch),
                 Paragraph(f"Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}", styles['Normal']),
                 Spacer(1, 0.3 * inch),
                 Paragraph("Summary", styles['Heading2'])]

        summary_data = [['Metric', 'Value']]
        summary_data += [[key, _fmt(report.summary[key])] for key in sorted(report.summary)]
        story.append(_styled_table(summary_data, font_size=12))
        story.append(Spacer(1, 0.3 * inch))

        story.append(Paragraph("Edge Sharpness (FWHM, pixels of each grid)", styles['Heading2']))
        fwhm_data = [FWHM_COLUMNS]
        for row in report.fwhm.itertuples(index=False):
            fwhm_data.append([str(row.band)] + [f"{v:.2f}" for v in row[1:]])
        story.append(_styled_table(fwhm_data))

        doc.build(story)
        print(f"✓ Exported PDF report to {filepath}")
        return filepath
    except Exception as e:
        print(f"✗ Error generating PDF: {e}")
        raise
