import numpy as np
import pytest

from neuedit.codec import LatentVideo, PatchCodec
from neuedit.world import SceneSpec, render_scene


@pytest.fixture
def clip():
    return render_scene(SceneSpec("triangle", "white", "spin", "light"), 2)


def test_orthogonal_mixing(codec):
    Q = codec.Q
    assert Q.shape == (192, 192)
    np.testing.assert_allclose(Q.T @ Q, np.eye(192), atol=1e-10)


def test_round_trip(codec, clip):
    lat = codec.encode(clip)
    assert lat.z.shape == (8, 64, 192) and lat.grid == (8, 8)
    out, raw = codec.decode(lat, return_raw=True)
    assert np.abs(raw - clip).max() < 1e-10
    # clamping is a no-op on a valid round trip
    assert np.abs(out - clip).max() < 1e-10


def test_norm_preserved(codec, clip):
    lat = codec.encode(clip)
    centred = 2.0 * clip - 1.0
    assert abs(np.linalg.norm(lat.z) - np.linalg.norm(centred)) < 1e-8


def test_constant_video_gives_equal_rows(codec):
    lat = codec.encode(np.full((2, 16, 24, 3), 0.4))
    rows = lat.z.reshape(-1, 192)
    assert np.abs(rows - rows[0]).max() < 1e-12


def test_dimension_errors(codec):
    with pytest.raises(ValueError):
        codec.encode(np.zeros((1, 20, 16, 3)))
    with pytest.raises(ValueError):
        codec.decode(LatentVideo(np.zeros((1, 4, 10)), (2, 2)))
    with pytest.raises(ValueError):
        LatentVideo(np.zeros((1, 5, 192)), (2, 2))


def test_seeded_and_estimator_api(clip):
    a, b = PatchCodec(seed=3), PatchCodec(seed=3)
    assert a.hash == b.hash and a.hash != PatchCodec(seed=4).hash
    c = PatchCodec().fit(clip)
    np.testing.assert_array_equal(c.inverse_transform(c.transform(clip)), c.decode(c.encode(clip)))
    assert c.get_params() == {"patch": 8, "channels": 3, "seed": 0}
