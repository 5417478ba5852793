import numpy as np
import pytest

from neuedit.codec import PatchCodec
from neuedit.diffusion.denoiser import DenoiserModel
from neuedit.diffusion.schedule import make_schedule
from neuedit.diffusion.training import TextVideoDiffusion
from neuedit.embeddings import embed_text
from neuedit.world import all_specs, describe, render_scene

N_PRETRAIN_CLIPS = 64
PRETRAIN_STEPS = 1500


def pretrain_dataset(n_clips=N_PRETRAIN_CLIPS, seed=1000, codec=None):
    codec = codec or PatchCodec()
    specs = all_specs()
    data = []
    for i in range(n_clips):
        spec = specs[(i * 89) % len(specs)]
        data.append((codec.encode(render_scene(spec, seed + i)), embed_text(describe(spec)).w))
    return data


@pytest.fixture(scope="session")
def sched():
    return make_schedule(200)


@pytest.fixture(scope="session")
def codec():
    return PatchCodec()


@pytest.fixture(scope="session")
def base_model(codec):
    """The pretrained base denoiser shared by every end-to-end test (about a minute)."""
    est = TextVideoDiffusion(steps=PRETRAIN_STEPS, lr=3e-3, batch_size=4, seed=0)
    est.fit(pretrain_dataset(codec=codec))
    return est.model_


@pytest.fixture
def probe_model(sched):
    """100-parameter denoiser for finite-difference checks."""
    m = DenoiserModel(latent_dim=3, width=3, text_dim=3, mlp_width=3, time_freqs=1,
                      pos_freqs=0, alpha_bar=sched.alpha_bar, seed=1)
    rng = np.random.default_rng(0)
    m.fit_prior([rng.standard_normal((4, 4, 3))], rank=2)
    return m


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the lines are printed in the terminal summary."""
    lines = request.config.stash.setdefault(_CRITERIA, {})

    def record(n, ok, detail):
        lines[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[n])
        return ok
    return record


_CRITERIA = pytest.StashKey()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
