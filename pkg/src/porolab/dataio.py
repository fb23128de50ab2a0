"""Dataset construction, normalization, NPY container I/O and checkpoints.

The NPY writer/reader implements the version-1.0 binary container directly
(magic, little-endian header length, text header padded so the full header
is a multiple of 64 bytes and ends in a newline, then raw little-endian
values).  Datasets live in a directory as ``K.npy``, ``P.npy``, ``Sw.npy``
plus a plain-text ``manifest.txt``; checkpoints store one NPY per parameter
next to a manifest describing the architecture and normalization.
"""

from __future__ import annotations

import ast
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grf import GrfSpec, sample_grf, to_permeability
from .simulator import ReservoirConfig, run_simulation, water_budget_error

_MAGIC = b"\x93NUMPY\x01\x00"
_DESCRS = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


# ---------------------------------------------------------------------------
# NPY container
# ---------------------------------------------------------------------------

def npy_header_bytes(shape: tuple[int, ...], descr: str) -> bytes:
    """Full byte header (magic through newline) for a C-order array."""
    if descr not in _DESCRS:
        raise ValueError(f"unsupported dtype descriptor {descr!r}")
    dict_text = f"{{'descr': {descr!r}, 'fortran_order': False, 'shape': {tuple(shape)!r}, }}"
    base = len(_MAGIC) + 2 + len(dict_text) + 1
    pad = (64 - base % 64) % 64
    header = dict_text + " " * pad + "\n"
    return _MAGIC + len(header).to_bytes(2, "little") + header.encode("latin1")


def write_npy(path, array: np.ndarray, precision: str | None = None) -> None:
    """Write a float array as an NPY v1.0 file ('<f8' or '<f4')."""
    array = np.ascontiguousarray(array)
    if precision is not None:
        array = array.astype({"f8": "<f8", "f4": "<f4"}[precision], copy=False)
    descr = array.dtype.newbyteorder("<").str
    if descr not in _DESCRS:
        raise ValueError(f"unsupported dtype {array.dtype}")
    with open(path, "wb") as fh:
        fh.write(npy_header_bytes(array.shape, descr))
        fh.write(array.astype(descr, copy=False).tobytes(order="C"))


def read_npy(path) -> np.ndarray:
    """Read an NPY v1.0 file written by :func:`write_npy` (or numpy)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not an NPY v1.0 file (magic {magic!r})")
        (hlen,) = np.frombuffer(fh.read(2), dtype="<u2")
        header = fh.read(int(hlen)).decode("latin1")
        if not header.endswith("\n"):
            raise ValueError(f"{path}: header not newline-terminated")
        meta = ast.literal_eval(header)
        descr, fortran, shape = meta["descr"], meta["fortran_order"], meta["shape"]
        if fortran:
            raise ValueError(f"{path}: fortran-order arrays not supported")
        if descr not in _DESCRS:
            raise ValueError(f"{path}: unsupported dtype {descr!r}")
        dtype = _DESCRS[descr]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = fh.read(count * dtype.itemsize)
        if len(payload) != count * dtype.itemsize:
            raise ValueError(f"{path}: truncated payload "
                             f"({len(payload)} of {count * dtype.itemsize} bytes)")
        return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass
class NormStats:
    """Z-score statistics from the training split; K is log(1+K) first."""

    k_mean: float
    k_std: float
    target_mean: float
    target_std: float
    k_log: bool = True
    target_name: str = "p"

    @staticmethod
    def _safe_std(x: np.ndarray, what: str) -> float:
        s = float(x.std())
        if s == 0.0:
            warnings.warn(f"degenerate constant {what}: std is zero, using identity scale")
            return 1.0
        return s

    @classmethod
    def fit(cls, k_train: np.ndarray, target_train: np.ndarray,
            target_name: str) -> "NormStats":
        klog = np.log1p(k_train)
        return cls(
            k_mean=float(klog.mean()),
            k_std=cls._safe_std(klog, "permeability"),
            target_mean=float(target_train.mean()),
            target_std=cls._safe_std(target_train, target_name),
            target_name=target_name,
        )

    def normalize_k(self, k: np.ndarray) -> np.ndarray:
        x = np.log1p(k) if self.k_log else k
        return (x - self.k_mean) / self.k_std

    def normalize_target(self, x: np.ndarray) -> np.ndarray:
        return (x - self.target_mean) / self.target_std

    def denormalize_target(self, x: np.ndarray) -> np.ndarray:
        return x * self.target_std + self.target_mean

    def to_dict(self) -> dict:
        return {"k_mean": self.k_mean, "k_std": self.k_std,
                "target_mean": self.target_mean, "target_std": self.target_std,
                "k_log": self.k_log, "target_name": self.target_name}


# ---------------------------------------------------------------------------
# dataset bundle
# ---------------------------------------------------------------------------

@dataclass
class DatasetBundle:
    """All arrays of one generated dataset plus its provenance manifest."""

    k: np.ndarray            # (N, nx, nz)
    p: np.ndarray            # (N, T+1, nx, nz)
    sw: np.ndarray           # (N, T+1, nx, nz)
    manifest: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.k.shape[0]

    @property
    def n_days(self) -> int:
        return self.p.shape[1] - 1

    @property
    def grid(self) -> tuple[int, int]:
        return self.k.shape[1], self.k.shape[2]

    def n_train(self) -> int:
        return int(np.ceil(self.n_samples * float(self.manifest.get("train_fraction", 0.8))))

    def train_indices(self) -> np.ndarray:
        return np.arange(self.n_train())

    def val_indices(self) -> np.ndarray:
        return np.arange(self.n_train(), self.n_samples)

    def target(self, name: str) -> np.ndarray:
        if name == "p":
            return self.p
        if name == "sw":
            return self.sw
        raise ValueError(f"unknown target {name!r} (expected 'p' or 'sw')")

    def fit_stats(self, target_name: str) -> NormStats:
        """Normalization statistics from the training split only."""
        tr = self.train_indices()
        return NormStats.fit(self.k[tr], self.target(target_name)[tr], target_name)


def build_dataset(n_samples: int, cfg: ReservoirConfig, seed: int,
                  train_fraction: float = 0.8, out_dir=None,
                  repeat_k: bool = False, amplitude: float = 10.0,
                  progress=None) -> DatasetBundle:
    """Generate permeability fields and simulate their daily time series.

    Sample i is fully determined by (seed, i); if the simulator fails on a
    draw, the event is recorded in the manifest and the next unused draw
    index is taken instead.  The water budget of every accepted sample must
    close to 1e-8.
    """
    if cfg.nx != cfg.nz:
        raise ValueError("dataset grids are square: nx must equal nz")
    spec = GrfSpec(n=cfg.nx, amplitude=amplitude, seed=seed)
    days = cfg.total_days
    k_arr = np.empty((n_samples, cfg.nx, cfg.nz), dtype=np.float32)
    p_arr = np.empty((n_samples, days + 1, cfg.nx, cfg.nz), dtype=np.float32)
    sw_arr = np.empty((n_samples, days + 1, cfg.nx, cfg.nz), dtype=np.float32)
    resampled = []
    draw = 0
    for i in range(n_samples):
        while True:
            k = to_permeability(sample_grf(spec, draw), amplitude)
            draw += 1
            try:
                sample = run_simulation(k, cfg)
            except (RuntimeError, ValueError, AssertionError) as exc:
                resampled.append(f"draw {draw - 1}: {exc}")
                continue
            break
        err = water_budget_error(sample, cfg)
        if err > 1e-8:
            raise AssertionError(f"sample {i}: water budget error {err:.3e} > 1e-8")
        k_arr[i] = k
        p_arr[i] = sample.p_series
        sw_arr[i] = sample.sw_series
        if progress is not None:
            progress(i)
    manifest = {
        "n_samples": n_samples,
        "grid": cfg.nx,
        "days": days,
        "seed": seed,
        "train_fraction": train_fraction,
        "amplitude": amplitude,
        "q_inj": cfg.q_inj,
        "porosity": cfg.porosity,
        "sw_init": cfg.sw_init,
        "mu_w": cfg.mu_w,
        "mu_o": cfg.mu_o,
        "swc": cfg.swc,
        "sor": cfg.sor,
        "dx": cfg.dx,
        "dz": cfg.dz,
        "p_prod": cfg.p_prod,
        "substep_cfl": cfg.substep_cfl,
        "layout": "repeated" if repeat_k else "canonical",
        "resampled": "; ".join(resampled) if resampled else "none",
    }
    bundle = DatasetBundle(k=k_arr, p=p_arr, sw=sw_arr, manifest=manifest)
    if out_dir is not None:
        save_dataset(bundle, out_dir, repeat_k=repeat_k)
    return bundle


def _write_manifest(path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(entries):
            fh.write(f"{key}: {entries[key]}\n")


def _read_manifest(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            key, _, value = line.partition(":")
            out[key.strip()] = value.strip()
    return out


def save_dataset(bundle: DatasetBundle, out_dir, repeat_k: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if repeat_k:
        k = np.repeat(bundle.k[:, None], bundle.n_days + 1, axis=1)
    else:
        k = bundle.k
    write_npy(out / "K.npy", k, precision="f4")
    write_npy(out / "P.npy", bundle.p, precision="f4")
    write_npy(out / "Sw.npy", bundle.sw, precision="f4")
    manifest = dict(bundle.manifest)
    manifest["layout"] = "repeated" if repeat_k else "canonical"
    _write_manifest(out / "manifest.txt", manifest)


def load_dataset(in_dir) -> DatasetBundle:
    src = Path(in_dir)
    if not (src / "manifest.txt").exists():
        raise FileNotFoundError(f"no dataset manifest found in {src}")
    manifest_raw = _read_manifest(src / "manifest.txt")
    manifest = {}
    for key, val in manifest_raw.items():
        try:
            manifest[key] = ast.literal_eval(val)
        except (ValueError, SyntaxError):
            manifest[key] = val
    k = read_npy(src / "K.npy")
    if manifest.get("layout") == "repeated":
        k = k[:, 0]
    return DatasetBundle(
        k=k,
        p=read_npy(src / "P.npy"),
        sw=read_npy(src / "Sw.npy"),
        manifest=manifest,
    )


def reservoir_config_from_manifest(manifest: dict, total_days=None) -> ReservoirConfig:
    """Rebuild the simulator configuration recorded in a dataset manifest."""
    return ReservoirConfig(
        nx=int(manifest["grid"]), nz=int(manifest["grid"]),
        dx=float(manifest.get("dx", 10.0)), dz=float(manifest.get("dz", 10.0)),
        porosity=float(manifest["porosity"]), sw_init=float(manifest["sw_init"]),
        mu_w=float(manifest["mu_w"]), mu_o=float(manifest["mu_o"]),
        swc=float(manifest["swc"]), sor=float(manifest["sor"]),
        q_inj=float(manifest["q_inj"]), p_prod=float(manifest.get("p_prod", 0.0)),
        total_days=int(total_days if total_days is not None else manifest["days"]),
        substep_cfl=float(manifest.get("substep_cfl", 0.5)),
    )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model, out_dir) -> None:
    """One NPY per parameter plus a plain-text manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = {
        "format": "porolab-checkpoint-1",
        "kind": model.kind,
        "t_max": model.t_max,
        "seed": model.seed,
        "precision": "f8" if model.dtype == np.float64 else "f4",
    }
    cfg = model.cfg
    for key, val in vars(cfg).items():
        entries[f"cfg.{key}"] = val
    if model.stats is not None:
        for key, val in model.stats.to_dict().items():
            entries[f"stats.{key}"] = val
    names = []
    for param in model.parameters():
        fname = param.name.replace(".", "__") + ".npy"
        write_npy(out / fname, param.data)
        names.append(param.name)
    entries["parameters"] = ",".join(names)
    _write_manifest(out / "manifest.txt", entries)


def load_checkpoint(in_dir):
    """Rebuild a model whose forward pass is bit-identical to the saved one."""
    from .operators import Fno, FnoConfig, Mgno, MgnoConfig
    from .training import OracleModel

    src = Path(in_dir)
    raw = _read_manifest(src / "manifest.txt")
    if raw.get("format") != "porolab-checkpoint-1":
        raise ValueError(f"{src}: unrecognized checkpoint format {raw.get('format')!r}")
    kind = raw["kind"]
    stats = None
    if "stats.k_mean" in raw:
        stats = NormStats(
            k_mean=float(raw["stats.k_mean"]), k_std=float(raw["stats.k_std"]),
            target_mean=float(raw["stats.target_mean"]),
            target_std=float(raw["stats.target_std"]),
            k_log=raw.get("stats.k_log", "True") == "True",
            target_name=raw.get("stats.target_name", "p"),
        )
    if kind == "oracle":
        return OracleModel(target_name=raw.get("stats.target_name", raw.get("cfg.target", "p")))
    dtype = np.float64 if raw.get("precision", "f8") == "f8" else np.float32
    common = dict(stats=stats, t_max=float(raw["t_max"]), dtype=dtype,
                  seed=int(raw["seed"]))
    if kind == "fno":
        cfg = FnoConfig(width=int(raw["cfg.width"]), modes1=int(raw["cfg.modes1"]),
                        modes2=int(raw["cfg.modes2"]), depth=int(raw["cfg.depth"]),
                        in_channels=int(raw["cfg.in_channels"]),
                        out_channels=int(raw["cfg.out_channels"]))
        model = Fno(cfg, **common)
    elif kind == "mgno":
        cfg = MgnoConfig(depth=int(raw["cfg.depth"]), channels=int(raw["cfg.channels"]),
                         levels=int(raw["cfg.levels"]),
                         smooth_steps=int(raw["cfg.smooth_steps"]),
                         in_channels=int(raw["cfg.in_channels"]),
                         out_channels=int(raw["cfg.out_channels"]))
        model = Mgno(cfg, **common)
    else:
        raise ValueError(f"{src}: unknown model kind {kind!r}")
    expected = raw.get("parameters", "").split(",")
    actual = [p.name for p in model.parameters()]
    if expected != actual:
        raise ValueError(f"{src}: parameter list mismatch with architecture config")
    for param in model.parameters():
        data = read_npy(src / (param.name.replace(".", "__") + ".npy"))
        if data.shape != param.data.shape:
            raise ValueError(f"{src}: parameter {param.name} shape {data.shape} "
                             f"!= expected {param.data.shape}")
        param.value.data = data.astype(model.dtype, copy=False)
    return model
