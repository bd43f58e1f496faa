"""Binary serialization of gaussian-cloud videos (.v3dz) and PLY export.

File layout (all little-endian):

    magic  b"V3DZ"
    u16    format version (currently 1)
    u16    reserved (0)
    u32    header length in bytes
    bytes  canonical-JSON header: frame count, camera manifest, provenance
    then per frame:
        u32    frame index
        u32    gaussian count N
        f32    means (N,3), rotations (N,4), log_scales (N,3),
               opacity_logits (N,), colors (N,3), background (3,)
        u32    CRC-32 of the frame payload (from frame index through background)

Parameters are stored as float32; a load->save cycle is byte-identical.
Truncation and corruption both surface as checksum errors.
"""

import json
import struct
import zlib

import numpy as np

from .gaussians import GaussianCloud

MAGIC = b"V3DZ"
FORMAT_VERSION = 1


class V3DFormatError(ValueError):
    """Not a cloud-video file at all."""


class V3DVersionError(V3DFormatError):
    """File written by an incompatible format version."""


class V3DChecksumError(V3DFormatError):
    """Truncated or corrupted payload."""


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _frame_payload(frame_index: int, cloud: GaussianCloud) -> bytes:
    n = len(cloud)
    parts = [struct.pack("<II", frame_index, n)]
    for arr in (cloud.means, cloud.rotations, cloud.log_scales,
                cloud.opacity_logits, cloud.colors, cloud.background):
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def write_cloud_video(path, clouds, frame_indices=None, header_extra=None) -> None:
    clouds = list(clouds)
    if frame_indices is None:
        frame_indices = list(range(len(clouds)))
    header = {"n_frames": len(clouds), "frame_indices": list(frame_indices)}
    if header_extra:
        header.update(header_extra)
    header_bytes = _canonical_json(header)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HHI", FORMAT_VERSION, 0, len(header_bytes)))
        f.write(header_bytes)
        for idx, cloud in zip(frame_indices, clouds):
            payload = _frame_payload(int(idx), cloud)
            f.write(payload)
            f.write(struct.pack("<I", zlib.crc32(payload)))


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise V3DChecksumError(f"file truncated while reading {what}")
    return data


def read_cloud_video(path):
    """Returns (clouds, frame_indices, header)."""
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise V3DFormatError("bad magic; not a cloud-video file")
        version, _, header_len = struct.unpack("<HHI", _read_exact(f, 8, "header"))
        if version != FORMAT_VERSION:
            raise V3DVersionError(f"format version {version} unsupported (expected {FORMAT_VERSION})")
        header = json.loads(_read_exact(f, header_len, "header json"))
        clouds = []
        indices = []
        for k in range(header["n_frames"]):
            head = _read_exact(f, 8, f"frame {k} header")
            frame_index, n = struct.unpack("<II", head)
            body_len = 4 * (3 * n + 4 * n + 3 * n + n + 3 * n + 3)
            body = _read_exact(f, body_len, f"frame {k} payload")
            (stored_crc,) = struct.unpack("<I", _read_exact(f, 4, f"frame {k} checksum"))
            if zlib.crc32(head + body) != stored_crc:
                raise V3DChecksumError(f"checksum mismatch in frame {k}")
            offset = 0

            def take(shape):
                nonlocal offset
                size = 4 * int(np.prod(shape))
                arr = np.frombuffer(body[offset:offset + size], dtype="<f4").astype(np.float64)
                offset += size
                return arr.reshape(shape)

            means = take((n, 3))
            rotations = take((n, 4))
            log_scales = take((n, 3))
            opacity_logits = take((n,))
            colors = take((n, 3))
            background = take((3,))
            clouds.append(GaussianCloud(
                means=means, rotations=rotations, log_scales=log_scales,
                opacity_logits=opacity_logits,
                colors=np.clip(colors, 0.0, 1.0),
                background=np.clip(background, 0.0, 1.0),
            ))
            indices.append(frame_index)
    return clouds, indices, header


def export_cloud_ply(path, cloud: GaussianCloud) -> None:
    """ASCII PLY point export (positions + float colors) for external viewers.

    Values are printed with enough digits to round-trip float32 exactly.
    """
    n = len(cloud)
    with open(path, "w", encoding="utf-8") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {n}\n")
        for prop in ("x", "y", "z", "red", "green", "blue"):
            f.write(f"property float {prop}\n")
        f.write("end_header\n")
        means = cloud.means.astype(np.float32)
        colors = cloud.colors.astype(np.float32)
        for i in range(n):
            row = [*means[i], *colors[i]]
            f.write(" ".join(np.format_float_positional(v, precision=9, unique=True,
                                                        trim="0") for v in row))
            f.write("\n")


def read_cloud_ply(path):
    """Parse back an exported PLY; returns (means, colors) float32 arrays."""
    with open(path, "r", encoding="utf-8") as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError("not a PLY file")
        n = None
        while True:
            line = f.readline()
            if not line:
                raise ValueError("unterminated PLY header")
            line = line.strip()
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            elif line == "end_header":
                break
        if n is None:
            raise ValueError("missing vertex element")
        rows = np.loadtxt(f, dtype=np.float64, ndmin=2)
    if rows.shape != (n, 6):
        raise ValueError("vertex data does not match header")
    return rows[:, :3].astype(np.float32), rows[:, 3:].astype(np.float32)
