"""Masked fidelity, prompt alignment and temporal consistency.

Masks mark the edited area: ``True`` pixels are zeroed in both clips and
left out of the fidelity numbers, so input and output are always compared
under an identical mask.
"""

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from ._validation import check_same_shape, check_video
from .embeddings import embed_frames, embed_text, is_content_word

PSNR_CAP = 99.0
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pixel_mask(mask, shape):
    """Broadcast a (L, H, W) or (H, W) mask to a video's (L, H, W)."""
    if mask is None:
        return np.zeros(shape[:3], dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.ndim == 4:
        m = m.any(axis=-1)
    return np.broadcast_to(m, shape[:3])


def masked_psnr(a, b, mask=None):
    """PSNR over pixels outside ``mask`` (peak 1.0), capped at 99 dB."""
    a, b = check_video(a, "a"), check_video(b, "b")
    check_same_shape(a, b)
    m = _pixel_mask(mask, a.shape)
    keep = ~m
    if not keep.any():
        raise ValueError("mask covers every pixel; nothing left to compare")
    a = np.where(m[..., None], 0.0, a)
    b = np.where(m[..., None], 0.0, b)
    mse = float(np.mean((a[keep] - b[keep]) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def masked_ssim(a, b, mask=None, window=SSIM_WINDOW):
    """Mean SSIM over sliding ``window`` x ``window`` windows that avoid the mask.

    Uniform window statistics per channel, dynamic range 1. Frames are
    averaged; frames whose windows all touch the mask are skipped.
    """
    a, b = check_video(a, "a"), check_video(b, "b")
    check_same_shape(a, b)
    m = _pixel_mask(mask, a.shape)
    a = np.where(m[..., None], 0.0, a)
    b = np.where(m[..., None], 0.0, b)
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    per_frame = []
    for fa, fb, fm in zip(a, b, m):
        if fa.shape[0] < window or fa.shape[1] < window:
            raise ValueError("frame smaller than the SSIM window")
        clean = ~sliding_window_view(fm, (window, window)).any(axis=(-2, -1))
        if not clean.any():
            continue
        wa = sliding_window_view(fa, (window, window), axis=(0, 1))  # (h, w, C, k, k)
        wb = sliding_window_view(fb, (window, window), axis=(0, 1))
        mu_a = wa.mean(axis=(-2, -1))
        mu_b = wb.mean(axis=(-2, -1))
        va = wa.var(axis=(-2, -1))
        vb = wb.var(axis=(-2, -1))
        cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
        s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2))
        per_frame.append(float(s.mean(axis=-1)[clean].mean()))
    if not per_frame:
        raise ValueError("every SSIM window touches the mask")
    # bounded in exact arithmetic; rounding can overshoot 1 by an ulp
    return float(np.clip(np.mean(per_frame), -1.0, 1.0))


def textual_alignment(video, prompt, frame_features=None):
    """100 x mean cosine between content-word features and frame features.

    Function words are skipped; a prompt without content words scores 0.
    """
    tp = embed_text(prompt)
    rows = [i for i, tok in enumerate(tp.tokens) if is_content_word(tok)]
    if not rows:
        return 0.0
    v = frame_features if frame_features is not None else embed_frames(video, strict=False).v
    return float(100.0 * np.mean(tp.w[rows] @ v.T))


def frame_consistency(video, frame_features=None):
    """Mean cosine between features of consecutive frames."""
    v = frame_features if frame_features is not None else embed_frames(video, strict=False).v
    if v.shape[0] < 2:
        raise ValueError("frame consistency needs at least two frames")
    sims = np.sum(v[1:] * v[:-1], axis=1)
    return float(np.clip(np.mean(sims), -1.0, 1.0))


def _disk(radius):
    r = int(radius)
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= r * r


def edit_region_mask_from_scores(scores, radius=0):
    """Support of the visual scores, dilated per frame by a disk of ``radius``."""
    z = np.asarray(getattr(scores, "z", scores))
    support = z > 0
    if radius <= 0:
        return support
    squeeze = support.ndim == 2
    frames = support[None] if squeeze else support
    out = np.stack([ndimage.binary_dilation(f, structure=_disk(radius)) for f in frames])
    return out[0] if squeeze else out


COLUMNS = (
    "task", "kind", "method", "alignment", "masked_psnr", "masked_ssim",
    "frame_consistency", "masked_psnr_auto", "masked_ssim_auto", "mask_source",
)


@dataclass
class MetricReport:
    task: str
    kind: str
    method: str
    alignment: float
    masked_psnr: float
    masked_ssim: float
    frame_consistency: float
    masked_psnr_auto: float = float("nan")
    masked_ssim_auto: float = float("nan")
    mask_source: str = "ground_truth"

    def to_dict(self):
        return {k: asdict(self)[k] for k in COLUMNS}

    def to_json(self):
        d = {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
             for k, v in self.to_dict().items()}
        return json.dumps(d, allow_nan=False)

    def to_csv_row(self):
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow([self.to_dict()[k] for k in COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (float("nan") if d[k] is None else d[k]) for k in COLUMNS})


def write_reports(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in reports:
            w.writerow([r.to_dict()[k] for k in COLUMNS])


def evaluate(edited, original, target, task="", kind="", method="", gt_mask=None, auto_mask=None):
    """One report row: alignment and consistency of ``edited``, fidelity against ``original``."""
    v = embed_frames(edited, strict=False).v
    row = MetricReport(
        task=str(task), kind=kind, method=method,
        alignment=textual_alignment(edited, target, v),
        masked_psnr=masked_psnr(edited, original, gt_mask),
        masked_ssim=masked_ssim(edited, original, gt_mask),
        frame_consistency=frame_consistency(edited, v) if len(v) > 1 else float("nan"),
        mask_source="ground_truth" if gt_mask is not None else "none",
    )
    if auto_mask is not None and not np.all(auto_mask):
        row.masked_psnr_auto = masked_psnr(edited, original, auto_mask)
        try:
            row.masked_ssim_auto = masked_ssim(edited, original, auto_mask)
        except ValueError:
            pass
    return row
