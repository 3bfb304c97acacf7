"""Network topologies, weight files and IDX datasets."""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .templates import downsampled_shape

LAYER_KINDS = ("conv", "relu", "pool", "fc")
POOL_KINDS = ("max_linear", "avg", "nonlinear")
RELU_KINDS = ("linear", "nonlinear")
READOUTS = ("center", "mean")
PRECISIONS = (4, 8, 32)
WEIGHTS_FORMAT = "cenn-forge-weights"
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class SpecError(ValueError):
    pass


class WeightShapeError(SpecError):
    pass


class DatasetError(ValueError):
    pass


@dataclass
class LayerSpec:
    name: str
    kind: str
    in_maps: int
    out_maps: int
    in_shape: tuple
    out_shape: tuple
    kernel: Optional[np.ndarray] = None  # (out_maps, in_maps, 3, 3), correlation orientation
    bias: Optional[np.ndarray] = None  # (out_maps,)
    pool_kind: str = "max_linear"
    downsample: bool = False
    crop_odd: bool = False
    relu_kind: str = "linear"
    readout: Optional[str] = None
    fc_weights: Optional[np.ndarray] = None  # (out_features, in_features)
    fc_bias: Optional[np.ndarray] = None
    precision: Optional[int] = None

    @property
    def in_features(self) -> int:
        return self.in_maps * self.in_shape[0] * self.in_shape[1]

    @property
    def has_weights(self) -> bool:
        if self.kind == "conv":
            return self.kernel is not None
        if self.kind == "fc":
            return self.fc_weights is not None
        return True

    def weight_shapes(self) -> dict:
        if self.kind == "conv":
            return {"kernel": (self.out_maps, self.in_maps, 3, 3), "bias": (self.out_maps,)}
        if self.kind == "fc":
            return {"weights": (self.out_maps, self.in_features), "bias": (self.out_maps,)}
        return {}


@dataclass
class NetworkSpec:
    name: str
    input_maps: int
    input_shape: tuple
    class_count: int
    layers: list
    precision: int = 4
    source: dict = field(default_factory=dict, repr=False)

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    @property
    def has_weights(self) -> bool:
        return all(layer.has_weights for layer in self.layers)

    @property
    def largest_map(self) -> tuple:
        rows = max(max(l.in_shape[0], l.out_shape[0]) for l in self.layers)
        cols = max(max(l.in_shape[1], l.out_shape[1]) for l in self.layers)
        return rows, cols

    def with_pool_kind(self, pool_kind: str, relu_kind: Optional[str] = None) -> "NetworkSpec":
        layers = []
        for layer in self.layers:
            if layer.kind == "pool":
                layer = replace(layer, pool_kind=pool_kind)
            elif layer.kind == "relu" and relu_kind is not None:
                layer = replace(layer, relu_kind=relu_kind)
            layers.append(layer)
        return replace(self, layers=layers)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise SpecError(msg)


def _pos_int(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise SpecError(f"{what} must be a positive integer, got {value!r}")
    return value


def network_from_dict(doc: dict) -> NetworkSpec:
    """Build and shape-check a network from its parsed JSON document."""
    _require(isinstance(doc, dict), "network document must be an object")
    for key in ("name", "input", "classes", "layers"):
        _require(key in doc, f"network document lacks key {key!r}")
    inp = doc["input"]
    maps = _pos_int(inp.get("maps", 1), "input.maps")
    shape = (_pos_int(inp.get("rows"), "input.rows"), _pos_int(inp.get("cols"), "input.cols"))
    precision = doc.get("precision", 4)
    _require(precision in PRECISIONS, f"precision must be one of {PRECISIONS}, got {precision!r}")
    classes = _pos_int(doc["classes"], "classes")
    raw_layers = doc["layers"]
    _require(isinstance(raw_layers, list) and raw_layers, "layers must be a non-empty list")

    layers: list[LayerSpec] = []
    names: set = set()
    for k, raw in enumerate(raw_layers):
        name = raw.get("name", f"layer{k}")
        where = f"layer {name!r}"
        _require(name not in names, f"duplicate layer name {name!r}")
        names.add(name)
        kind = raw.get("kind")
        _require(kind in LAYER_KINDS, f"{where}: kind must be one of {LAYER_KINDS}, got {kind!r}")
        _require(not layers or layers[-1].kind != "fc", f"{where}: fc is only allowed as the final layer")
        if "in_maps" in raw:
            _require(raw["in_maps"] == maps, f"{where}: declares {raw['in_maps']} input maps but receives {maps}")
        if "in_shape" in raw:
            _require(tuple(raw["in_shape"]) == shape,
                     f"{where}: declares input shape {tuple(raw['in_shape'])} but receives {shape}")
        layer_prec = raw.get("precision")
        _require(layer_prec is None or layer_prec in PRECISIONS, f"{where}: bad precision {layer_prec!r}")
        if kind == "conv":
            ks = raw.get("kernel_size", 3)
            _require(ks == 3, f"{where}: only 3x3 kernels are supported, got {ks}x{ks}")
            out_maps = _pos_int(raw.get("out_maps"), f"{where}: out_maps")
            readout = raw.get("readout")
            _require(readout is None or readout in READOUTS, f"{where}: readout must be one of {READOUTS}")
            layer = LayerSpec(name, kind, maps, out_maps, shape, shape, readout=readout, precision=layer_prec)
        elif kind == "relu":
            relu_kind = raw.get("relu_kind", "linear")
            _require(relu_kind in RELU_KINDS, f"{where}: relu_kind must be one of {RELU_KINDS}")
            layer = LayerSpec(name, kind, maps, maps, shape, shape, relu_kind=relu_kind, precision=layer_prec)
        elif kind == "pool":
            pool_kind = raw.get("pool_kind", "max_linear")
            _require(pool_kind in POOL_KINDS, f"{where}: pool_kind must be one of {POOL_KINDS}")
            down = bool(raw.get("downsample", False))
            crop = bool(raw.get("crop_odd", False))
            out_shape = shape
            if down:
                try:
                    out_shape = downsampled_shape(shape, crop)
                except ValueError as exc:
                    raise SpecError(f"{where}: {exc}") from None
            layer = LayerSpec(name, kind, maps, maps, shape, out_shape, pool_kind=pool_kind, downsample=down,
                              crop_odd=crop, precision=layer_prec)
        else:
            out = _pos_int(raw.get("out_features"), f"{where}: out_features")
            layer = LayerSpec(name, kind, maps, out, shape, (1, 1), precision=layer_prec)
        if "out_maps" in raw and kind != "conv":
            _require(raw["out_maps"] == layer.out_maps, f"{where}: out_maps {raw['out_maps']} != {layer.out_maps}")
        layers.append(layer)
        maps, shape = layer.out_maps, layer.out_shape

    last = layers[-1]
    if last.kind == "fc":
        arity = last.out_maps
    elif last.kind == "conv" and last.readout is not None:
        arity = last.out_maps
    else:
        arity = last.out_maps * shape[0] * shape[1]
    _require(arity == classes, f"final layer {last.name!r} produces {arity} outputs but classes = {classes}")
    return NetworkSpec(doc["name"], int(inp.get("maps", 1)), (int(inp["rows"]), int(inp["cols"])), classes,
                       layers, precision, source=doc)


def network_to_dict(net: NetworkSpec) -> dict:
    layers = []
    for layer in net.layers:
        d: dict = {"name": layer.name, "kind": layer.kind}
        if layer.kind == "conv":
            d["out_maps"] = layer.out_maps
            if layer.readout:
                d["readout"] = layer.readout
        elif layer.kind == "relu":
            d["relu_kind"] = layer.relu_kind
        elif layer.kind == "pool":
            d.update(pool_kind=layer.pool_kind, downsample=layer.downsample)
            if layer.crop_odd:
                d["crop_odd"] = True
        else:
            d["out_features"] = layer.out_maps
        if layer.precision is not None:
            d["precision"] = layer.precision
        layers.append(d)
    return {
        "name": net.name,
        "input": {"maps": net.input_maps, "rows": net.input_shape[0], "cols": net.input_shape[1]},
        "classes": net.class_count,
        "precision": net.precision,
        "layers": layers,
    }


def preset_names() -> list[str]:
    root = resources.files("cenn_forge") / "data" / "networks"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _preset_path(name: str) -> Path:
    return Path(str(resources.files("cenn_forge") / "data" / "networks" / f"{name}.json"))


def load_network(path_or_preset) -> NetworkSpec:
    """Load a network file, or a shipped preset by bare name."""
    path = Path(path_or_preset)
    if not path.exists() and not path.suffix:
        preset = _preset_path(str(path_or_preset))
        if preset.exists():
            path = preset
        else:
            raise FileNotFoundError(f"no network file or preset named {path_or_preset!r}")
    if not path.exists():
        raise FileNotFoundError(f"network file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SpecError(f"cannot parse network file {path}: {exc}") from None
    return network_from_dict(doc)


def save_network(net: NetworkSpec, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=2) + "\n")


# --- weights -----------------------------------------------------------------

def _set_weights(net: NetworkSpec, tensors: dict) -> NetworkSpec:
    layers = []
    for layer in net.layers:
        expected = layer.weight_shapes()
        got = tensors.get(layer.name, {})
        if expected and not got:
            raise WeightShapeError(f"layer {layer.name!r}: no weights supplied")
        for key, shape in expected.items():
            if key not in got:
                raise WeightShapeError(f"layer {layer.name!r}: missing tensor {key!r}")
            arr = np.asarray(got[key], dtype=float)
            if arr.shape != shape:
                raise WeightShapeError(f"layer {layer.name!r} tensor {key!r}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise WeightShapeError(f"layer {layer.name!r} tensor {key!r} has non-finite values")
        if layer.kind == "conv":
            layer = replace(layer, kernel=np.array(got["kernel"], dtype=float), bias=np.array(got["bias"], dtype=float))
        elif layer.kind == "fc":
            layer = replace(layer, fc_weights=np.array(got["weights"], dtype=float),
                            fc_bias=np.array(got["bias"], dtype=float))
        layers.append(layer)
    return replace(net, layers=layers)


def with_weights(net: NetworkSpec, tensors: dict) -> NetworkSpec:
    """Attach a {layer: {tensor: array}} mapping after checking every shape."""
    return _set_weights(net, tensors)


def weight_tensors(net: NetworkSpec) -> dict:
    out: dict = {}
    for layer in net.layers:
        if layer.kind == "conv" and layer.kernel is not None:
            out[layer.name] = {"kernel": layer.kernel, "bias": layer.bias}
        elif layer.kind == "fc" and layer.fc_weights is not None:
            out[layer.name] = {"weights": layer.fc_weights, "bias": layer.fc_bias}
    return out


def random_weights(net: NetworkSpec, rng: np.random.Generator, kernel_scale: Optional[float] = None,
                   bias_scale: float = 0.1) -> NetworkSpec:
    """Uniform random weights sized so layer outputs mostly stay unclipped."""
    tensors = {}
    for layer in net.layers:
        if layer.kind == "conv":
            s = kernel_scale if kernel_scale is not None else 1.0 / (3.0 * np.sqrt(layer.in_maps))
            tensors[layer.name] = {
                "kernel": rng.uniform(-s, s, (layer.out_maps, layer.in_maps, 3, 3)),
                "bias": rng.uniform(-bias_scale, bias_scale, layer.out_maps),
            }
        elif layer.kind == "fc":
            s = kernel_scale if kernel_scale is not None else 1.0 / np.sqrt(layer.in_features)
            tensors[layer.name] = {
                "weights": rng.uniform(-s, s, (layer.out_maps, layer.in_features)),
                "bias": rng.uniform(-bias_scale, bias_scale, layer.out_maps),
            }
    return _set_weights(net, tensors)


def save_weights(net: NetworkSpec, path) -> None:
    """Write a JSON manifest plus a little-endian float64 blob beside it."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    entries = []
    chunks = []
    offset = 0
    for layer_name, tensors in weight_tensors(net).items():
        for key, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            entries.append({"layer": layer_name, "tensor": key, "shape": list(np.shape(arr)), "offset": offset})
            chunks.append(data)
            offset += len(data)
    blob_path.write_bytes(b"".join(chunks))
    manifest = {"format": WEIGHTS_FORMAT, "version": 1, "network": net.name, "dtype": "<f8",
                "blob": blob_path.name, "tensors": entries}
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def load_weights(path, net: NetworkSpec) -> NetworkSpec:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"weights file not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SpecError(f"cannot parse weights manifest {path}: {exc}") from None
    if manifest.get("format") != WEIGHTS_FORMAT or manifest.get("dtype") != "<f8":
        raise SpecError(f"{path} is not a {WEIGHTS_FORMAT} manifest with <f8 data")
    blob_path = path.parent / manifest["blob"]
    if not blob_path.exists():
        raise FileNotFoundError(f"weights blob not found: {blob_path}")
    blob = blob_path.read_bytes()
    tensors: dict = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        end = e["offset"] + 8 * count
        if end > len(blob):
            raise SpecError(f"tensor {e['layer']}/{e['tensor']} runs past the end of {blob_path.name}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=e["offset"]).reshape(e["shape"])
        tensors.setdefault(e["layer"], {})[e["tensor"]] = arr.astype(float)
    return _set_weights(net, tensors)


# --- datasets ------------------------------------------------------------------

@dataclass
class Dataset:
    images: np.ndarray  # (n, maps, rows, cols) in [-1, 1]
    labels: np.ndarray  # (n,)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DatasetError(f"images must be (n, maps, rows, cols), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DatasetError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and np.abs(self.images).max() > 1.0:
            raise DatasetError("pixels must lie in [-1, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    def head(self, n: Optional[int]) -> "Dataset":
        if n is None:
            return self
        return Dataset(self.images[:n], self.labels[:n])


def normalize_bytes(p):
    return np.asarray(p, dtype=float) / 127.5 - 1.0


normalize = normalize_bytes


def denormalize(v):
    return np.rint((np.asarray(v, dtype=float) + 1.0) * 127.5).astype(np.uint8)


def _read_idx(path) -> tuple[int, tuple, bytes]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"IDX file not found: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < 8:
        raise DatasetError(f"{path} is too short to be an IDX file")
    magic = struct.unpack(">I", raw[:4])[0]
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    payload = raw[4 + 4 * ndim :]
    if len(payload) != int(np.prod(dims)):
        raise DatasetError(f"{path}: header promises {int(np.prod(dims))} bytes, found {len(payload)}")
    return magic, dims, payload


def load_idx_dataset(images_path, labels_path, limit: Optional[int] = None) -> Dataset:
    """MNIST-style IDX pair, pixels mapped from 0..255 to [-1, 1]."""
    magic, dims, payload = _read_idx(images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetError(f"{images_path}: bad image magic 0x{magic:08x}")
    lmagic, ldims, lpayload = _read_idx(labels_path)
    if lmagic != IDX_LABELS_MAGIC:
        raise DatasetError(f"{labels_path}: bad label magic 0x{lmagic:08x}")
    if dims[0] != ldims[0]:
        raise DatasetError(f"image count {dims[0]} != label count {ldims[0]}")
    images = np.frombuffer(payload, dtype=np.uint8).reshape(dims[0], 1, dims[1], dims[2])
    labels = np.frombuffer(lpayload, dtype=np.uint8).astype(np.int64)
    ds = Dataset(normalize_bytes(images), labels)
    return ds.head(limit)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (used for fixtures and synthetic data)."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | arr.ndim
    header = struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape)
    data = header + arr.tobytes()
    path = Path(path)
    path.write_bytes(gzip.compress(data, mtime=0) if path.suffix == ".gz" else data)


def synthetic_dataset(net: NetworkSpec, n: int, rng: np.random.Generator) -> Dataset:
    """Random images on the 8-bit pixel grid with random labels."""
    pix = rng.integers(0, 256, (n, net.input_maps, *net.input_shape))
    return Dataset(normalize_bytes(pix), rng.integers(0, net.class_count, n))
