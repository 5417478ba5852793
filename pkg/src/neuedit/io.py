"""On-disk formats: PPM/PGM frames, float blobs, checkpoints, manifests.

Everything written here is plain: binary PPM (P6) and PGM (P5) for
pictures, little-endian float64 blobs for exact arrays, JSON for metadata
and CSV for tables. Every file is recorded in a manifest by SHA-256.
"""

import csv
import hashlib
import json
import os

import numpy as np

from .diffusion.denoiser import PARAM_ORDER, DenoiserModel
from .diffusion.schedule import make_schedule

CHECKPOINT_FORMAT = "neuedit-checkpoint/1"
MANIFEST_FORMAT = "neuedit-manifest/1"


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_array(a):
    return hashlib.sha256(np.ascontiguousarray(a, dtype="<f8").tobytes()).hexdigest()


# -- pictures ---------------------------------------------------------------
def _to_bytes(img):
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, frame):
    """Write an (H, W, 3) frame in [0, 1] as 8-bit binary PPM."""
    data = _to_bytes(frame)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError("PPM frames must be (H, W, 3)")
    H, W, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_pgm(path, image):
    """Write an (H, W) image in [0, 1] as 8-bit binary PGM."""
    data = _to_bytes(image)
    if data.ndim != 2:
        raise ValueError("PGM images must be (H, W)")
    H, W = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_netpbm(path, magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    fields = []
    i = 0
    while len(fields) < 4:
        while raw[i:i + 1].isspace():
            i += 1
        if raw[i:i + 1] == b"#":
            while raw[i:i + 1] not in (b"\n", b""):
                i += 1
            continue
        j = i
        while not raw[j:j + 1].isspace():
            j += 1
        fields.append(raw[i:j])
        i = j
    if fields[0] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} header, got {fields[0]!r}")
    W, H, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit files are supported")
    body = raw[i + 1:]
    return W, H, np.frombuffer(body, dtype=np.uint8)


def read_ppm(path):
    W, H, data = _read_netpbm(path, b"P6")
    return data[: H * W * 3].reshape(H, W, 3).astype(np.float64) / 255.0


def read_pgm(path):
    W, H, data = _read_netpbm(path, b"P5")
    return data[: H * W].reshape(H, W).astype(np.float64) / 255.0


def write_video(directory, video, prefix="frame"):
    """One PPM per frame; returns the written paths in frame order."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, frame in enumerate(video):
        p = os.path.join(directory, f"{prefix}_{i:03d}.ppm")
        write_ppm(p, frame)
        paths.append(p)
    return paths


def read_video(directory, prefix="frame"):
    names = sorted(n for n in os.listdir(directory) if n.startswith(prefix + "_") and n.endswith(".ppm"))
    if not names:
        raise FileNotFoundError(f"no {prefix}_*.ppm frames in {directory}")
    return np.stack([read_ppm(os.path.join(directory, n)) for n in names])


def write_score_maps(directory, scores, prefix="scores"):
    """Per-frame 8-bit PGM previews plus the exact float64 blob."""
    os.makedirs(directory, exist_ok=True)
    scores = np.asarray(scores, dtype=np.float64)
    paths = []
    for i, s in enumerate(scores):
        p = os.path.join(directory, f"{prefix}_{i:03d}.pgm")
        write_pgm(p, s)
        paths.append(p)
    paths.append(write_blob(os.path.join(directory, f"{prefix}.f64"), scores))
    return paths


# -- exact arrays -----------------------------------------------------------
def write_blob(path, array):
    np.ascontiguousarray(array, dtype="<f8").tofile(path)
    return path


def read_blob(path, shape):
    return np.fromfile(path, dtype="<f8").reshape(shape)


# -- checkpoints ------------------------------------------------------------
def save_checkpoint(path, model, schedule=None, codec_hash=None, codebook_hash=None, extra=None):
    """JSON header line, then the raw little-endian float64 parameter blob.

    The blob holds the parameters in ``PARAM_ORDER`` followed by the prior
    statistics (mean, basis, variances, floor).
    """
    arrays = [(k, model.params[k]) for k in PARAM_ORDER]
    arrays += [("prior_mean", model.prior_mean), ("prior_basis", model.prior_basis),
               ("prior_var", model.prior_var), ("prior_floor", np.array([model.prior_floor]))]
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config(),
        "shapes": {k: list(np.shape(a)) for k, a in arrays},
        "order": [k for k, _ in arrays],
        "schedule": schedule.to_dict() if schedule is not None else None,
        "codec_hash": codec_hash,
        "codebook_hash": codebook_hash,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(blob)
    return header


def load_checkpoint(path):
    """Return ``(model, header)``; the blob hash is verified."""
    with open(path, "rb") as fh:
        line = fh.readline()
        blob = fh.read()
    header = json.loads(line)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint of format {CHECKPOINT_FORMAT}")
    if hashlib.sha256(blob).hexdigest() != header["blob_sha256"]:
        raise ValueError(f"{path}: parameter blob is corrupt")
    flat = np.frombuffer(blob, dtype="<f8")
    sched = header.get("schedule")
    alpha_bar = make_schedule(sched["T"], sched["kind"]).alpha_bar if sched else None
    model = DenoiserModel(alpha_bar=alpha_bar, **header["config"])
    i = 0
    for k in header["order"]:
        shape = tuple(header["shapes"][k])
        n = int(np.prod(shape)) if shape else 1
        a = flat[i:i + n].reshape(shape).copy()
        i += n
        if k in model.params:
            model.params[k] = a
        elif k == "prior_floor":
            model.prior_floor = float(a[0])
        else:
            setattr(model, k, a)
    return model, header


# -- tables and manifests ---------------------------------------------------
def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def finite_json(obj):
    """Replace non-finite floats by None so the result is strict JSON."""
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: finite_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [finite_json(v) for v in obj]
    return obj


def write_json(path, obj):
    """Pretty JSON; non-finite floats are written as null."""
    with open(path, "w") as fh:
        json.dump(finite_json(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_manifest(directory, command, inputs, config, outputs, extra=None):
    """Record every output file under ``directory`` by relative path and hash."""
    files = {}
    for p in sorted(outputs):
        files[os.path.relpath(p, directory)] = sha256_file(p)
    manifest = {
        "format": MANIFEST_FORMAT,
        "command": command,
        "inputs": inputs,
        "config": config,
        "outputs": files,
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(directory, "manifest.json")
    write_json(path, manifest)
    return manifest


def directory_hash(directory, skip=("manifest.json",)):
    """Hash of every file's relative path and content, in sorted order.

    Manifests are skipped by default: they record the argv, which names
    the output directory itself.
    """
    h = hashlib.sha256()
    for root, _, names in sorted(os.walk(directory)):
        for n in sorted(names):
            if n in skip:
                continue
            p = os.path.join(root, n)
            h.update(os.path.relpath(p, directory).encode())
            h.update(sha256_file(p).encode())
    return h.hexdigest()
