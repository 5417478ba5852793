"""Neutral editing of synthetic videos with a tiny text-conditioned diffusion model."""

from .codec import LatentVideo, PatchCodec
from .embeddings import Codebook, FrameEncoder, embed_frames, embed_text, tokenize
from .metrics import (MetricReport, edit_region_mask_from_scores, frame_consistency,
                      masked_psnr, masked_ssim, textual_alignment)
from .neutralize_text import (NeutralPrompt, PromptNeutralizer, TextFactorScore,
                              deformable_swap, factor_blur, factor_deform, factor_swap,
                              identify_text_factors)
from .neutralize_video import (NeutralVideo, VisualFactorScore, extract_attention,
                               gaussian_blur, make_neutral_video, threshold_scores,
                               upsample_scores, visual_factor_score)
from .pipeline import (EditConfig, EditResult, NeuEditor, build_neutral_prompt, edit,
                       plain_edit_baseline, tune)
from .world import EditTask, SceneSpec, WorldConfig, describe, render_scene, sample_edit_task

__version__ = "0.1.0"

__all__ = [
    "Codebook", "EditConfig", "EditResult", "EditTask", "FrameEncoder", "LatentVideo",
    "MetricReport", "NeuEditor", "NeutralPrompt", "NeutralVideo", "PatchCodec",
    "PromptNeutralizer", "SceneSpec", "TextFactorScore", "VisualFactorScore", "WorldConfig",
    "build_neutral_prompt", "deformable_swap", "describe", "edit", "edit_region_mask_from_scores",
    "embed_frames", "embed_text", "extract_attention", "factor_blur", "factor_deform",
    "factor_swap", "frame_consistency", "gaussian_blur", "identify_text_factors",
    "make_neutral_video", "masked_psnr", "masked_ssim", "plain_edit_baseline", "render_scene",
    "sample_edit_task", "textual_alignment", "threshold_scores", "tokenize", "tune",
    "upsample_scores", "visual_factor_score",
]
