"""Binary dataset/model files, CSV reports and run manifests.

Both binary files share one layout, all little-endian::

    magic (4 bytes) | version u16 | counts header | n_entries u32 | entries...

and each entry is ``name (u16 length + UTF-8) | kind (1 byte) | payload``
where kind ``s`` is a u32-length-prefixed UTF-8 string and kinds ``f``
(float64), ``c`` (complex128 as re/im float64 pairs) and ``i`` (int64) are
``ndim u8 | shape u64 * ndim | raw data``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .beamforming import Codebook
from .evaluation import Dataset, TrainedModel
from .features import FeaturePipeline, QuantizerModel, ScalarQuantizer, Standardizer
from .learner import MlpModel
from .scenario import ScenarioConfig

DATASET_MAGIC = b"RBF1"
MODEL_MAGIC = b"RBM1"
FORMAT_VERSION = 1

_DTYPES = {"f": "<f8", "c": "<c16", "i": "<i8"}
DATASET_COUNTS = "<QHHHIB"  # samples, num_cbs, cbs antennas, tbs antennas, codebook size, has cbs channels
MODEL_COUNTS = "<III"  # input dim, hidden dim, labels


class FormatError(ValueError):
    pass


def _write_entries(buf, entries):
    buf.write(struct.pack("<I", len(entries)))
    for name, value in entries:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)) + raw)
        if isinstance(value, str):
            data = value.encode("utf-8")
            buf.write(b"s" + struct.pack("<I", len(data)) + data)
            continue
        arr = np.asarray(value)
        if np.iscomplexobj(arr):
            kind = "c"
        elif np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
            kind = "i"
        else:
            kind = "f"
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[kind])
        buf.write(kind.encode() + struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())


def _read_exact(buf, n):
    data = buf.read(n)
    if len(data) != n:
        raise FormatError("truncated file")
    return data


def _read_entries(buf) -> dict:
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(buf, 2))
        name = _read_exact(buf, nlen).decode("utf-8")
        kind = _read_exact(buf, 1).decode()
        if kind == "s":
            (slen,) = struct.unpack("<I", _read_exact(buf, 4))
            out[name] = _read_exact(buf, slen).decode("utf-8")
            continue
        if kind not in _DTYPES:
            raise FormatError(f"unknown entry kind {kind!r}")
        (ndim,) = struct.unpack("<B", _read_exact(buf, 1))
        shape = struct.unpack(f"<{ndim}Q", _read_exact(buf, 8 * ndim))
        dtype = np.dtype(_DTYPES[kind])
        size = int(np.prod(shape)) * dtype.itemsize
        out[name] = np.frombuffer(_read_exact(buf, size), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if buf.read(1):
        raise FormatError("trailing bytes after last entry")
    return out


def _header(buf, magic):
    got = _read_exact(buf, 4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<H", _read_exact(buf, 2))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")


def config_to_json(config: ScenarioConfig) -> str:
    return json.dumps(dataclasses.asdict(config), sort_keys=True)


def config_from_json(text: str) -> ScenarioConfig:
    d = json.loads(text)
    d["tbs_position_m"] = tuple(d["tbs_position_m"])
    d["cbs_positions_m"] = tuple(tuple(p) for p in d["cbs_positions_m"])
    return ScenarioConfig(**d)


# --- datasets ---------------------------------------------------------------------

def dataset_to_bytes(ds: Dataset) -> bytes:
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC + struct.pack("<H", FORMAT_VERSION))
    buf.write(struct.pack(DATASET_COUNTS, len(ds), ds.num_cbs, ds.cbs_features[0].shape[1],
                          ds.tbs_channels.shape[1], ds.codebook.size, ds.cbs_channels is not None))
    meta = {"seed": ds.seed, "codebook_kind": ds.codebook.kind}
    entries = [
        ("meta", json.dumps(meta, sort_keys=True)),
        ("scenario_config", config_to_json(ds.config)),
        ("codebook", ds.codebook.vectors),
        ("ue_positions", ds.ue_positions),
        ("tbs_channels", ds.tbs_channels),
        ("labels", ds.labels),
        ("scores", ds.scores),
        ("split_train", ds.split["train"]),
        ("split_val", ds.split["val"]),
        ("split_test", ds.split["test"]),
    ]
    entries += [(f"cbs_features_{i}", f) for i, f in enumerate(ds.cbs_features)]
    if ds.cbs_channels is not None:
        entries += [(f"cbs_channels_{i}", c) for i, c in enumerate(ds.cbs_channels)]
    _write_entries(buf, entries)
    return buf.getvalue()


def dataset_from_bytes(data: bytes) -> Dataset:
    buf = io.BytesIO(data)
    _header(buf, DATASET_MAGIC)
    n, n_cbs, m, n_tbs, k, has_ch = struct.unpack(DATASET_COUNTS, _read_exact(buf, struct.calcsize(DATASET_COUNTS)))
    e = _read_entries(buf)
    meta = json.loads(e["meta"])
    ds = Dataset(
        ue_positions=e["ue_positions"],
        cbs_features=tuple(e[f"cbs_features_{i}"] for i in range(n_cbs)),
        tbs_channels=e["tbs_channels"],
        labels=e["labels"],
        scores=e["scores"],
        codebook=Codebook(e["codebook"], meta["codebook_kind"]),
        split={"train": e["split_train"], "val": e["split_val"], "test": e["split_test"]},
        seed=int(meta["seed"]),
        config=config_from_json(e["scenario_config"]),
        cbs_channels=tuple(e[f"cbs_channels_{i}"] for i in range(n_cbs)) if has_ch else None,
    )
    if len(ds) != n or ds.tbs_channels.shape[1] != n_tbs or ds.codebook.size != k or ds.cbs_features[0].shape[1] != m:
        raise FormatError("header counts disagree with payload")
    return ds


def write_dataset(path, ds: Dataset) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def read_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())


# --- models ------------------------------------------------------------------------

def model_to_bytes(model: TrainedModel) -> bytes:
    mlp, pipe = model.mlp, model.pipeline
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC + struct.pack("<H", FORMAT_VERSION))
    buf.write(struct.pack(MODEL_COUNTS, mlp.input_dim, mlp.hidden_dim, mlp.num_labels))
    meta = {
        "codebook_id": model.codebook_id,
        "cbs_selection": list(pipe.cbs_selection),
        "input_mode": pipe.input_mode,
        "lambda_reg": mlp.lambda_reg,
        "loss_kind": mlp.loss_kind,
        "quantized": pipe.quantizer is not None,
    }
    entries = [
        ("meta", json.dumps(meta, sort_keys=True)),
        ("w1", mlp.w1), ("b1", mlp.b1), ("w2", mlp.w2), ("b2", mlp.b2),
        ("std_mean", pipe.standardizer.mean), ("std_scale", pipe.standardizer.scale),
    ]
    if pipe.quantizer is not None:
        dims = pipe.quantizer.dims
        entries += [
            ("q_levels", np.array([q.levels for q in dims])),
            ("q_reduced", np.array([q.reduced for q in dims])),
            ("q_distortion", np.array([q.distortion for q in dims])),
            ("q_centroids", np.concatenate([q.centroids for q in dims])),
            ("q_boundaries", np.concatenate([q.boundaries for q in dims])),
        ]
    _write_entries(buf, entries)
    return buf.getvalue()


def model_from_bytes(data: bytes) -> TrainedModel:
    buf = io.BytesIO(data)
    _header(buf, MODEL_MAGIC)
    d_in, d_hid, k = struct.unpack(MODEL_COUNTS, _read_exact(buf, struct.calcsize(MODEL_COUNTS)))
    e = _read_entries(buf)
    meta = json.loads(e["meta"])
    quantizer = None
    if meta["quantized"]:
        dims, c_off, b_off = [], 0, 0
        for lv, red, dist in zip(e["q_levels"], e["q_reduced"], e["q_distortion"]):
            lv = int(lv)
            dims.append(ScalarQuantizer(e["q_centroids"][c_off:c_off + lv],
                                        e["q_boundaries"][b_off:b_off + lv - 1], bool(red), float(dist)))
            c_off += lv
            b_off += lv - 1
        quantizer = QuantizerModel(tuple(dims))
    pipe = FeaturePipeline(tuple(meta["cbs_selection"]), quantizer,
                           Standardizer(e["std_mean"], e["std_scale"]), meta["input_mode"])
    mlp = MlpModel(e["w1"], e["b1"], e["w2"], e["b2"], float(meta["lambda_reg"]), meta["loss_kind"])
    if (mlp.input_dim, mlp.hidden_dim, mlp.num_labels) != (d_in, d_hid, k):
        raise FormatError("header counts disagree with payload")
    return TrainedModel(mlp, pipe, meta["codebook_id"])


def write_model(path, model: TrainedModel) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def read_model(path) -> TrainedModel:
    return model_from_bytes(Path(path).read_bytes())


# --- text outputs ------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows, fieldnames=None) -> None:
    rows = list(rows)
    if fieldnames is None:
        if not rows:
            raise ValueError("no rows and no header given")
        fieldnames = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fieldnames)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in fieldnames])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_summary(path, items: dict) -> None:
    """``key = value`` lines, one per entry, in insertion order."""
    Path(path).write_text("".join(f"{k} = {_fmt(v)}\n" for k, v in items.items()), encoding="utf-8")


def git_blob_hash(path) -> str:
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(path, command: str, args: dict, inputs, outputs, timings: dict, config=None) -> dict:
    manifest = {
        "command": command,
        "args": {k: v for k, v in args.items() if isinstance(v, (str, int, float, bool, list, type(None)))},
        "config": None if config is None else json.loads(config_to_json(config)),
        "seeds": {k: v for k, v in args.items() if "seed" in k},
        "inputs": {str(p): git_blob_hash(p) for p in inputs},
        "outputs": {str(p): git_blob_hash(p) for p in outputs},
        "timings_s": timings,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def verify_manifest(path) -> list[str]:
    """Problems found re-hashing every referenced file; empty when all match."""
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    problems = []
    for section in ("inputs", "outputs"):
        for name, digest in manifest.get(section, {}).items():
            p = Path(name)
            if not p.exists():
                problems.append(f"missing {section[:-1]}: {name}")
            elif git_blob_hash(p) != digest:
                problems.append(f"hash mismatch: {name}")
    return problems
