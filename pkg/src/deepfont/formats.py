"""On-disk formats: PGM images, dataset manifests, binary checkpoints, CSV logs.

Checkpoint layout (all integers little-endian):

    b"DFNT" | u32 version | u32 header length | header JSON (UTF-8)
    per weighted layer: u8 tag (0 DENSE, 1 FACTORED), then float32 arrays
        DENSE:    w, b
        FACTORED: u32 k, u (m x k), s (k), v (n x k), b
    u32 CRC32 of every preceding byte
"""
import csv
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from deepfont.errors import CheckpointError, ManifestError
from deepfont.network import Model, NetworkSpec

MANIFEST_VERSION = 1
CHECKPOINT_MAGIC = b"DFNT"
CHECKPOINT_VERSION = 1
DENSE, FACTORED = 0, 1


def write_pgm(path, img):
    """Binary P5 PGM, maxval 255, value = round(pixel * 255)."""
    data = np.rint(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pixels = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos + 1)
    return pixels.reshape(h, w).astype(np.float64) / maxval


@dataclass
class ManifestEntry:
    path: str
    class_id: int
    seed: int


@dataclass
class DatasetManifest:
    domain: str
    n_classes: int
    entries: list
    height: int = 105
    augment_steps: tuple = None
    images: list = field(default=None, repr=False)
    true_labels: np.ndarray = field(default=None, repr=False)
    root: Path = None

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self):
        return np.array([e.class_id for e in self.entries], dtype=np.int64)

    @property
    def labeled(self):
        return all(e.class_id >= 0 for e in self.entries)

    def image(self, i):
        if self.images is not None:
            return self.images[i]
        if self.root is None:
            raise ValueError("manifest has neither in-memory images nor a root directory")
        return read_pgm(self.root / self.entries[i].path)

    def load_images(self):
        if self.images is None:
            self.images = [self.image(i) for i in range(len(self))]
        return self.images

    def subset(self, idx):
        idx = list(idx)
        return DatasetManifest(
            domain=self.domain, n_classes=self.n_classes, height=self.height,
            augment_steps=self.augment_steps, entries=[self.entries[i] for i in idx],
            images=None if self.images is None else [self.images[i] for i in idx],
            true_labels=None if self.true_labels is None else self.true_labels[idx],
            root=self.root)

    def header_lines(self):
        lines = [f"# deepfont-manifest {MANIFEST_VERSION}", f"# height {self.height}",
                 f"# domain {self.domain}", f"# classes {self.n_classes}"]
        if self.augment_steps is not None:
            lines.append("# steps " + (",".join(str(s) for s in sorted(self.augment_steps)) or "-"))
        return lines

    def dumps(self):
        body = [f"{e.path}\t{e.class_id}\t{e.seed}" for e in self.entries]
        return "\n".join(self.header_lines() + body) + "\n"

    def save(self, out_dir, name="manifest.tsv"):
        """Write the manifest and, if present, its images as PGM files."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if self.images is not None:
            for entry, img in zip(self.entries, self.images):
                write_pgm(out_dir / entry.path, img)
        path = out_dir / name
        path.write_text(self.dumps(), encoding="utf-8")
        self.root = out_dir
        return path


def parse_manifest(text, root=None):
    header = {}
    entries = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) != 2:
                raise ManifestError(f"malformed header {line!r}", lineno)
            header[parts[0]] = parts[1]
            continue
        fields_ = line.split("\t")
        if len(fields_) != 3:
            raise ManifestError(f"expected 3 tab-separated fields, got {len(fields_)}", lineno)
        path, cls, seed = fields_
        try:
            cls, seed = int(cls), int(seed)
        except ValueError:
            raise ManifestError(f"class id and seed must be integers: {line!r}", lineno) from None
        n_classes = int(header.get("classes", -1))
        if cls < -1 or (n_classes >= 0 and cls >= n_classes):
            raise ManifestError(f"class id {cls} outside [-1, {n_classes})", lineno)
        if path in seen:
            raise ManifestError(f"duplicate path {path!r}", lineno)
        seen.add(path)
        entries.append(ManifestEntry(path, cls, seed))
    for key in ("deepfont-manifest", "height", "domain", "classes"):
        if key not in header:
            raise ManifestError(f"missing header field {key!r}")
    if int(header["deepfont-manifest"]) != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {header['deepfont-manifest']}")
    steps = header.get("steps")
    if steps is not None:
        steps = tuple() if steps == "-" else tuple(int(s) for s in steps.split(","))
    return DatasetManifest(domain=header["domain"], n_classes=int(header["classes"]),
                           height=int(header["height"]), augment_steps=steps,
                           entries=entries, root=None if root is None else Path(root))


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.tsv"
    return parse_manifest(path.read_text(encoding="utf-8"), root=path.parent)


def _f32(a):
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def checkpoint_bytes(model, extra=None):
    header = {"spec": model.spec.to_dict(), "frozen": list(model.frozen)}
    if extra:
        header["extra"] = extra
    hjson = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(hjson)), hjson]
    for p in model.params:
        if "w" in p:
            parts += [struct.pack("<B", DENSE), _f32(p["w"]), _f32(p["b"])]
        else:
            k = p["s"].shape[0]
            parts += [struct.pack("<BI", FACTORED, k), _f32(p["u"]), _f32(p["s"]),
                      _f32(p["v"]), _f32(p["b"])]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, model, extra=None):
    Path(path).write_bytes(checkpoint_bytes(model, extra))


def parse_checkpoint(data):
    """Returns (model, extra) with float32 parameters."""
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a deepfont checkpoint (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    version, hlen = struct.unpack_from("<II", body, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    header = json.loads(body[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    spec = NetworkSpec.from_dict(header["spec"])

    def take(shape):
        nonlocal pos
        count = int(np.prod(shape))
        if pos + 4 * count > len(body):
            raise CheckpointError("checkpoint payload shorter than its spec declares")
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += 4 * count
        return arr.astype(np.float32)

    params = []
    for wshape, bshape in spec.param_shapes():
        (tag,) = struct.unpack_from("<B", body, pos)
        pos += 1
        if tag == DENSE:
            params.append({"w": take(wshape), "b": take(bshape)})
        elif tag == FACTORED:
            (k,) = struct.unpack_from("<I", body, pos)
            pos += 4
            m, n = wshape
            params.append({"u": take((m, k)), "s": take((k,)), "v": take((n, k)),
                           "b": take(bshape)})
        else:
            raise CheckpointError(f"unknown layer tag {tag}")
    if pos != len(body):
        raise CheckpointError("trailing bytes after the last layer")
    return Model(spec, params, list(header["frozen"])), header.get("extra", {})


def load_checkpoint(path):
    return parse_checkpoint(Path(path).read_bytes())


LOG_FIELDS = ["epoch", "phase", "lr", "train_loss", "val_metric", "seconds"]


def write_log_csv(path, log):
    extra = sorted({k for rec in log.records for k in rec.extra})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS + extra)
        for r in log.records:
            writer.writerow([r.epoch, r.phase, f"{r.lr:.8g}", f"{r.train_loss:.8g}",
                             f"{r.val_metric:.8g}", f"{r.seconds:.3f}"]
                            + [f"{r.extra.get(k, float('nan')):.8g}" for k in extra])


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
