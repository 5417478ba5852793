"""Neutral-prompt tuning followed by neutral-video inversion editing.

``NeuEditor`` runs the full loop: score the target prompt against the clip,
neutralize it, tune the base denoiser on the clip under the neutral prompt,
score pixels from cross-attention, blur them, invert the blurred clip and
denoise under the target prompt. ``plain_edit_baseline`` is the comparison
arm that tunes on a caption of the source and edits the raw clip.
"""

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_video
from .codec import PatchCodec
from .diffusion.sampling import denoise, invert
from .diffusion.training import train
from .embeddings import embed_frames, embed_text
from .neutralize_text import (DEFAULT_ALPHA, DEFAULT_S, VARIANTS, NeutralPrompt,
                              identify_text_factors, neutralize)
from .neutralize_video import (DEFAULT_SIGMA, DEFAULT_TAU, PROBE_FRACTIONS, VisualFactorScore,
                               extract_attention, make_neutral_video, probe_timesteps,
                               visual_scores)


@dataclass
class EditConfig:
    variant: str = "swap"
    s: float = DEFAULT_S
    alpha: float = DEFAULT_ALPHA
    sigma: float = DEFAULT_SIGMA
    tau: float = DEFAULT_TAU
    tuning_steps: int = 300
    lr: float = 2e-3
    batch_size: int = 1
    n_ddim_steps: int = 50
    probe_fractions: tuple = PROBE_FRACTIONS
    seed: int = 0
    invert_with: str = "neutral"  # or "target"
    attention_prompt: str = "target"  # prompt whose words the attention maps cover
    zero_visual: bool = False  # force the visual scores to zero

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not 0.0 < self.s < 1.0:
            raise ValueError("s must lie in (0, 1)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.tuning_steps < 0 or self.n_ddim_steps < 1:
            raise ValueError("tuning_steps must be >= 0 and n_ddim_steps >= 1")
        if self.invert_with not in ("neutral", "target"):
            raise ValueError("invert_with must be 'neutral' or 'target'")
        if self.attention_prompt not in ("neutral", "target"):
            raise ValueError("attention_prompt must be 'neutral' or 'target'")
        self.probe_fractions = tuple(float(f) for f in self.probe_fractions)

    def to_dict(self):
        d = asdict(self)
        d["probe_fractions"] = list(self.probe_fractions)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EditResult:
    edited: np.ndarray
    neutral_prompt: NeutralPrompt
    neutral_video: object
    visual_scores: object
    attention: np.ndarray
    tuned_model: object
    loss_curve: np.ndarray
    latents: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @property
    def checkpoint_hash(self):
        flat = self.tuned_model.flat_params()
        return hashlib.sha256(np.ascontiguousarray(flat, dtype="<f8").tobytes()).hexdigest()


def build_neutral_prompt(target, video, cfg, frame_features=None):
    """Tokenize and embed ``target``, score it against ``video``, neutralize it."""
    tp = embed_text(target)
    v = frame_features if frame_features is not None else embed_frames(video, strict=False).v
    score = identify_text_factors(tp.w, v, tp.tokens)
    return neutralize(tp.tokens, tp.w, score.z, cfg.variant, cfg.s, cfg.alpha, cfg.seed)


def tune(base_model, video, cond, cfg, sched, codec=None):
    """Fit a copy of ``base_model`` to one clip under conditioning ``cond``.

    Returns ``(model, loss_curve)``; the base model is not modified.
    """
    codec = codec or PatchCodec()
    w = getattr(cond, "w", cond)
    lat = codec.encode(video)
    model = base_model.copy()
    if cfg.tuning_steps == 0:
        return model, np.zeros(0)
    model, curve = train(model, [(lat, w)], sched, lr=cfg.lr, seed=cfg.seed,
                         batch_size=cfg.batch_size, steps=cfg.tuning_steps)
    return model, curve


def reconstruct(model, video, cond, cfg, sched, codec=None):
    """Invert then denoise under the same conditioning, decoded to pixels."""
    codec = codec or PatchCodec()
    w = getattr(cond, "w", cond)
    lat = codec.encode(video)
    zT = invert(model, lat, w, sched, cfg.n_ddim_steps)
    return codec.decode(denoise(model, zT, w, sched, cfg.n_ddim_steps))


def edit(model, video, target, cfg, sched, neutral_prompt, codec=None):
    """Edit ``video`` towards ``target`` with a model already tuned on it."""
    codec = codec or PatchCodec()
    video = check_video(video)
    L, H, W, _ = video.shape
    w_target = embed_text(target).w
    w_neutral = neutral_prompt.w
    if w_neutral.shape != w_target.shape:
        raise ValueError("neutral prompt and target prompt must have the same length")

    ts = probe_timesteps(sched.T, cfg.probe_fractions)
    attn_cond = w_target if cfg.attention_prompt == "target" else w_neutral
    attn, grid = extract_attention(model, video, attn_cond, sched, codec, ts, cfg.seed)
    if cfg.zero_visual:
        scores = VisualFactorScore(np.zeros((L, H, W)), tuple(grid), cfg.tau)
    else:
        scores = visual_scores(attn, grid, neutral_prompt.z, H, W, cfg.tau)
    nv = make_neutral_video(video, scores.z, cfg.sigma)

    lat = codec.encode(nv.frames)
    inv_cond = w_neutral if cfg.invert_with == "neutral" else w_target
    zT = invert(model, lat, inv_cond, sched, cfg.n_ddim_steps)
    z0 = denoise(model, zT, w_target, sched, cfg.n_ddim_steps)
    return EditResult(
        edited=codec.decode(z0),
        neutral_prompt=neutral_prompt,
        neutral_video=nv,
        visual_scores=scores,
        attention=attn,
        tuned_model=model,
        loss_curve=np.zeros(0),
        latents={"inverted": zT.z, "edited": z0.z},
    )


def neuedit(base_model, video, target, cfg, sched, codec=None):
    """Full loop: neutral prompt, tuning, neutral video, inversion, denoising."""
    np_ = build_neutral_prompt(target, video, cfg)
    model, curve = tune(base_model, video, np_, cfg, sched, codec)
    result = edit(model, video, target, cfg, sched, np_, codec)
    result.loss_curve = curve
    return result


def _plain(base_model, video, tune_prompt, target, cfg, sched, codec):
    codec = codec or PatchCodec()
    video = check_video(video)
    tp = embed_text(tune_prompt)
    w_target = embed_text(target).w
    model, curve = tune(base_model, video, tp.w, cfg, sched, codec)
    lat = codec.encode(video)
    zT = invert(model, lat, tp.w, sched, cfg.n_ddim_steps)
    z0 = denoise(model, zT, w_target, sched, cfg.n_ddim_steps)
    z = np.zeros(len(tp.tokens))
    prompt = NeutralPrompt("deform", tp.tokens, tp.w, z, {"alpha": 1.0}, {"role": "tuning prompt"})
    return EditResult(
        edited=codec.decode(z0), neutral_prompt=prompt, neutral_video=None,
        visual_scores=None, attention=None, tuned_model=model, loss_curve=curve,
        latents={"inverted": zT.z, "edited": z0.z},
    )


def plain_edit_baseline(base_model, video, source_prompt, target, cfg, sched, codec=None):
    """Conventional editing: tune on a source caption, invert the raw clip with it."""
    return _plain(base_model, video, source_prompt, target, cfg, sched, codec)


def target_tuning_baseline(base_model, video, target, cfg, sched, codec=None):
    """Tune and invert under the target prompt itself, without any neutralization."""
    return _plain(base_model, video, target, target, cfg, sched, codec)


class NeuEditor(BaseEstimator):
    """Estimator wrapper: ``fit`` tunes on one clip, ``predict`` returns the edit.

    ``base_model`` is a pretrained :class:`DenoiserModel` (it is copied,
    never modified). ``fit(video, target)`` builds the neutral prompt and
    tunes; ``predict()`` produces the edited clip and keeps the full
    :class:`EditResult` in ``result_``.
    """

    def __init__(self, base_model=None, T_steps=200, variant="swap", s=DEFAULT_S,
                 alpha=DEFAULT_ALPHA, sigma=DEFAULT_SIGMA, tau=DEFAULT_TAU,
                 tuning_steps=300, lr=2e-3, n_ddim_steps=50, seed=0):
        self.base_model = base_model
        self.T_steps = T_steps
        self.variant = variant
        self.s = s
        self.alpha = alpha
        self.sigma = sigma
        self.tau = tau
        self.tuning_steps = tuning_steps
        self.lr = lr
        self.n_ddim_steps = n_ddim_steps
        self.seed = seed

    def _config(self):
        return EditConfig(variant=self.variant, s=self.s, alpha=self.alpha, sigma=self.sigma,
                          tau=self.tau, tuning_steps=self.tuning_steps, lr=self.lr,
                          n_ddim_steps=self.n_ddim_steps, seed=self.seed)

    def fit(self, X, y):
        from .diffusion.schedule import make_schedule

        if self.base_model is None:
            raise ValueError("NeuEditor needs a pretrained base_model")
        self.config_ = self._config()
        self.schedule_ = make_schedule(self.T_steps)
        self.video_ = check_video(X)
        self.target_ = y
        self.neutral_prompt_ = build_neutral_prompt(y, self.video_, self.config_)
        self.model_, self.loss_curve_ = tune(self.base_model, self.video_, self.neutral_prompt_,
                                             self.config_, self.schedule_)
        return self

    def predict(self, X=None):
        video = self.video_ if X is None else check_video(X)
        self.result_ = edit(self.model_, video, self.target_, self.config_, self.schedule_,
                            self.neutral_prompt_)
        self.result_.loss_curve = self.loss_curve_
        return self.result_.edited
