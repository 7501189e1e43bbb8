# file: gif_codec.py
"""
The genuine GIF pipeline: median-cut palette, Floyd-Steinberg dithering,
GIF-variant LZW coding and a GIF89a container reader/writer.

Everything here is non-differentiable and works on uint8 numpy arrays.
`gif_quantize_roundtrip` is the bridge back to normalized torch tensors.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Sequence, Union

import numpy as np
import torch

from .errors import ClipError, GifFormatError, GifParseError, LZWError

try:
    from numba import njit
except ImportError:
    njit = None

logger = logging.getLogger(__name__)

MAX_CODE_WIDTH = 12
MAX_CODES = 1 << MAX_CODE_WIDTH
SUB_BLOCK_SIZE = 255
PALETTE_COMMENT = b"gifguard palette_size="
# graphic control delays are unsigned 16-bit centiseconds
MAX_DELAY_MS = 0xFFFF * 10

PathLike = Union[str, Path]


@dataclass(eq=False)
class Palette:
    """An ordered table of at most 256 RGB colors."""

    colors: np.ndarray

    def __post_init__(self):
        colors = np.asarray(self.colors)
        if colors.ndim != 2 or colors.shape[1] != 3:
            raise ValueError(f"palette colors must have shape (n, 3), got {colors.shape}")
        if not 1 <= len(colors) <= 256:
            raise ValueError(f"palette size must be in [1, 256], got {len(colors)}")
        self.colors = colors.astype(np.uint8)

    @property
    def size(self) -> int:
        return len(self.colors)

    @property
    def table_bits(self) -> int:
        # a GIF color table always holds 2**k entries, k >= 1
        return max(1, (self.size - 1).bit_length())

    @property
    def min_code_size(self) -> int:
        return max(2, self.table_bits)

    def __eq__(self, other):
        return isinstance(other, Palette) and np.array_equal(self.colors, other.colors)


@dataclass(eq=False)
class IndexedGif:
    """A palettized clip: T x H x W indices into one global palette."""

    indices: np.ndarray
    palette: Palette
    frame_delay_ms: int = 100
    loop_flag: bool = True

    def __post_init__(self):
        indices = np.asarray(self.indices)
        if indices.ndim != 3:
            raise ValueError(f"indices must be T x H x W, got shape {indices.shape}")
        if indices.size and int(indices.max()) >= self.palette.size:
            raise ValueError("palette index out of range")
        if not 0 < self.frame_delay_ms <= MAX_DELAY_MS or self.frame_delay_ms % 10:
            raise GifFormatError(
                f"frame_delay_ms must be a positive multiple of 10 up to {MAX_DELAY_MS}, "
                f"got {self.frame_delay_ms}"
            )
        self.indices = indices.astype(np.uint8)

    @property
    def shape(self):
        return self.indices.shape

    def to_frames(self) -> np.ndarray:
        """Expand indices to a T x H x W x 3 uint8 clip."""
        return self.palette.colors[self.indices]

    @classmethod
    def from_frames(cls, frames: np.ndarray, n_colors: int = 256,
                    frame_delay_ms: int = 100, loop_flag: bool = True) -> "IndexedGif":
        frames = np.asarray(frames, dtype=np.uint8)
        palette = median_cut_palette(frames, n_colors)
        indices = np.stack([floyd_steinberg_dither(frame, palette) for frame in frames])
        return cls(indices, palette, frame_delay_ms, loop_flag)

    def __eq__(self, other):
        return (
            isinstance(other, IndexedGif)
            and np.array_equal(self.indices, other.indices)
            and self.palette == other.palette
            and self.frame_delay_ms == other.frame_delay_ms
            and self.loop_flag == other.loop_flag
        )


# --- Palette ----------------------------------------------------------------------------------

def median_cut_palette(frames: np.ndarray, n_colors: int = 256) -> Palette:
    """
    Build a palette by recursive median splitting of the clip's color histogram.

    The box with the widest channel range is split at the pixel-weighted median of that
    channel until `n_colors` boxes exist or no box holds two distinct colors. Each box
    contributes its pixel-weighted mean color. Clips that already use at most `n_colors`
    distinct colors get exactly those colors back.
    """
    pixels = np.asarray(frames, dtype=np.uint8).reshape(-1, 3)
    if pixels.size == 0:
        raise ClipError("empty clip")
    if not 1 <= n_colors <= 256:
        raise ValueError(f"n_colors must be in [1, 256], got {n_colors}")

    colors, counts = np.unique(pixels, axis=0, return_counts=True)
    if len(colors) <= n_colors:
        return Palette(colors)

    boxes: List[np.ndarray] = [np.arange(len(colors))]
    while len(boxes) < n_colors:
        best, best_key, best_channel = None, None, 0
        for i, box in enumerate(boxes):
            if len(box) < 2:
                continue
            members = colors[box]
            spread = members.max(axis=0).astype(np.int64) - members.min(axis=0)
            channel = int(np.argmax(spread))
            key = (int(spread[channel]), int(counts[box].sum()))
            if best_key is None or key > best_key:
                best, best_key, best_channel = i, key, channel
        if best is None:
            break

        box = boxes.pop(best)
        members = colors[box]
        c = best_channel
        order = np.lexsort((members[:, (c + 2) % 3], members[:, (c + 1) % 3], members[:, c]))
        box = box[order]
        cumulative = np.cumsum(counts[box])
        cut = int(np.searchsorted(cumulative, cumulative[-1] / 2.0))
        cut = min(max(cut, 0), len(box) - 2)
        boxes.insert(best, box[cut + 1:])
        boxes.insert(best, box[:cut + 1])

    means = []
    for box in boxes:
        weights = counts[box].astype(np.float64)
        mean = (colors[box].astype(np.float64) * weights[:, None]).sum(axis=0) / weights.sum()
        means.append(np.rint(mean))
    table = np.clip(np.array(means), 0, 255).astype(np.uint8)
    # box means can collide after rounding
    _, first = np.unique(table, axis=0, return_index=True)
    return Palette(table[np.sort(first)])


# --- Dithering --------------------------------------------------------------------------------

def _diffuse_loop(work, palette, out):
    height, width = out.shape
    n = palette.shape[0]
    for y in range(height):
        for x in range(width):
            r = min(max(work[y, x, 0], 0.0), 255.0)
            g = min(max(work[y, x, 1], 0.0), 255.0)
            b = min(max(work[y, x, 2], 0.0), 255.0)
            best = 0
            best_dist = np.inf
            for k in range(n):
                dr = r - palette[k, 0]
                dg = g - palette[k, 1]
                db = b - palette[k, 2]
                dist = dr * dr + dg * dg + db * db
                if dist < best_dist:
                    best_dist = dist
                    best = k
            out[y, x] = best
            err = (r - palette[best, 0], g - palette[best, 1], b - palette[best, 2])
            for ch in range(3):
                e = err[ch]
                if x + 1 < width:
                    work[y, x + 1, ch] += e * (7.0 / 16.0)
                if y + 1 < height:
                    if x > 0:
                        work[y + 1, x - 1, ch] += e * (3.0 / 16.0)
                    work[y + 1, x, ch] += e * (5.0 / 16.0)
                    if x + 1 < width:
                        work[y + 1, x + 1, ch] += e * (1.0 / 16.0)
    return out


def _diffuse_vectorized(work, palette, out):
    height, width = out.shape
    for y in range(height):
        for x in range(width):
            pixel = np.clip(work[y, x], 0.0, 255.0)
            diff = palette - pixel
            dist = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
            best = int(np.argmin(dist))
            out[y, x] = best
            err = pixel - palette[best]
            if x + 1 < width:
                work[y, x + 1] += err * (7.0 / 16.0)
            if y + 1 < height:
                if x > 0:
                    work[y + 1, x - 1] += err * (3.0 / 16.0)
                work[y + 1, x] += err * (5.0 / 16.0)
                if x + 1 < width:
                    work[y + 1, x + 1] += err * (1.0 / 16.0)
    return out


if njit is not None:
    _diffuse = njit(cache=True)(_diffuse_loop)
else:
    logger.warning("numba is not installed; Floyd-Steinberg dithering falls back to numpy.")
    _diffuse = _diffuse_vectorized


def floyd_steinberg_dither(frame: np.ndarray, palette: Palette) -> np.ndarray:
    """
    Map an H x W x 3 frame to palette indices with Floyd-Steinberg error diffusion.

    Plain left-to-right raster scan, kernel 7/16 (right), 3/16, 5/16, 1/16 (next row).
    Accumulated values are clamped to [0, 255] before each nearest-color lookup; ties go
    to the lowest palette index.
    """
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"frame must be H x W x 3, got {frame.shape}")
    work = frame.astype(np.float64).copy()
    table = palette.colors.astype(np.float64)
    out = np.zeros(frame.shape[:2], dtype=np.int64)
    _diffuse(work, table, out)
    return out.astype(np.uint8)


# --- LZW --------------------------------------------------------------------------------------

class _BitWriter:
    def __init__(self):
        self.buffer = bytearray()
        self._acc = 0
        self._nbits = 0

    def write(self, code: int, width: int):
        self._acc |= code << self._nbits
        self._nbits += width
        while self._nbits >= 8:
            self.buffer.append(self._acc & 0xFF)
            self._acc >>= 8
            self._nbits -= 8

    def flush(self) -> bytes:
        if self._nbits:
            self.buffer.append(self._acc & 0xFF)
            self._acc = 0
            self._nbits = 0
        return bytes(self.buffer)


class _BitReader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._acc = 0
        self._nbits = 0

    def read(self, width: int) -> int:
        while self._nbits < width:
            if self._pos >= len(self._data):
                raise LZWError("truncated LZW stream")
            self._acc |= self._data[self._pos] << self._nbits
            self._pos += 1
            self._nbits += 8
        code = self._acc & ((1 << width) - 1)
        self._acc >>= width
        self._nbits -= width
        return code


def _check_code_size(min_code_size: int):
    if not 2 <= min_code_size <= 8:
        raise ValueError(f"min_code_size must be in [2, 8], got {min_code_size}")


def lzw_encode(indices: Sequence[int], min_code_size: int) -> bytes:
    """GIF-variant LZW: clear code first, EOI last, codes grow to 12 bits then the table resets."""
    _check_code_size(min_code_size)
    data = np.asarray(indices, dtype=np.int64).ravel()
    if data.size and (int(data.min()) < 0 or int(data.max()) >= 1 << min_code_size):
        raise ValueError(f"indices must lie in [0, {1 << min_code_size})")

    clear = 1 << min_code_size
    eoi = clear + 1
    code_size = min_code_size + 1
    writer = _BitWriter()
    writer.write(clear, code_size)

    if data.size:
        table = {}
        next_code = eoi + 1
        symbols = iter(data.tolist())
        prefix = next(symbols)
        for symbol in symbols:
            code = table.get((prefix, symbol))
            if code is not None:
                prefix = code
                continue
            writer.write(prefix, code_size)
            if next_code < MAX_CODES:
                table[(prefix, symbol)] = next_code
                next_code += 1
                if next_code > 1 << code_size and code_size < MAX_CODE_WIDTH:
                    code_size += 1
            else:
                writer.write(clear, code_size)
                table.clear()
                next_code = eoi + 1
                code_size = min_code_size + 1
            prefix = symbol
        writer.write(prefix, code_size)
        # the decoder adds one more entry on reading the last code
        if next_code == 1 << code_size and code_size < MAX_CODE_WIDTH:
            code_size += 1

    writer.write(eoi, code_size)
    return writer.flush()


def lzw_decode(data: bytes, min_code_size: int) -> np.ndarray:
    _check_code_size(min_code_size)
    clear = 1 << min_code_size
    eoi = clear + 1
    reader = _BitReader(bytes(data))
    base = [bytes([i]) for i in range(clear)] + [b"", b""]

    table = list(base)
    code_size = min_code_size + 1
    prev = None
    out = bytearray()
    while True:
        code = reader.read(code_size)
        if code == clear:
            table = list(base)
            code_size = min_code_size + 1
            prev = None
            continue
        if code == eoi:
            break
        if prev is None:
            if code >= clear:
                raise LZWError(f"invalid LZW code {code} after clear")
            entry = table[code]
        else:
            if len(table) >= MAX_CODES:
                raise LZWError("LZW code table overflow without clear code")
            if code < len(table):
                entry = table[code]
                table.append(table[prev] + entry[:1])
            elif code == len(table):
                entry = table[prev] + table[prev][:1]
                table.append(entry)
            else:
                raise LZWError(f"invalid LZW code {code}")
            if len(table) == 1 << code_size and code_size < MAX_CODE_WIDTH:
                code_size += 1
        out += entry
        prev = code
    return np.frombuffer(bytes(out), dtype=np.uint8).copy()


# --- GIF89a container -------------------------------------------------------------------------

def _sub_blocks(payload: bytes) -> bytes:
    chunks = bytearray()
    for start in range(0, len(payload), SUB_BLOCK_SIZE):
        chunk = payload[start:start + SUB_BLOCK_SIZE]
        chunks.append(len(chunk))
        chunks += chunk
    chunks.append(0)
    return bytes(chunks)


def gif_write(gif: IndexedGif, path: PathLike) -> Path:
    """Write a looping GIF89a with one global color table and one full-size image per frame."""
    path = Path(path)
    frames, height, width = gif.indices.shape
    palette = gif.palette
    table_bits = palette.table_bits

    out = bytearray(b"GIF89a")
    out += struct.pack("<HHBBB", width, height, 0x80 | 0x70 | (table_bits - 1), 0, 0)
    table = np.zeros((1 << table_bits, 3), dtype=np.uint8)
    table[:palette.size] = palette.colors
    out += table.tobytes()

    out += b"\x21\xFE" + _sub_blocks(PALETTE_COMMENT + str(palette.size).encode("ascii"))
    if gif.loop_flag:
        out += b"\x21\xFF\x0B" + b"NETSCAPE2.0" + b"\x03\x01" + struct.pack("<H", 0) + b"\x00"

    delay_cs = gif.frame_delay_ms // 10
    min_code_size = palette.min_code_size
    for t in range(frames):
        # disposal method 1: do not dispose
        out += b"\x21\xF9\x04" + struct.pack("<BHB", 0x04, delay_cs, 0) + b"\x00"
        out += b"\x2C" + struct.pack("<HHHHB", 0, 0, width, height, 0)
        out.append(min_code_size)
        out += _sub_blocks(lzw_encode(gif.indices[t].ravel(), min_code_size))
    out.append(0x3B)

    path.write_bytes(bytes(out))
    return path


class _GifReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, n: int, block: str) -> bytes:
        if self.pos + n > len(self.data):
            raise GifParseError(block, "unexpected end of file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def sub_blocks(self, block: str) -> Iterator[bytes]:
        size = self.read(1, block)[0]
        while size:
            yield self.read(size, block)
            size = self.read(1, block)[0]

    def skip(self, block: str):
        for _ in self.sub_blocks(block):
            pass


def gif_read(path: PathLike) -> IndexedGif:
    reader = _GifReader(Path(path).read_bytes())

    signature = reader.read(6, "header")
    if signature[:3] != b"GIF" or signature[3:] not in (b"87a", b"89a"):
        raise GifParseError("header", "bad signature")

    width, height, packed, _, _ = struct.unpack("<HHBBB", reader.read(7, "logical screen descriptor"))
    if not packed & 0x80:
        raise GifParseError("logical screen descriptor", "missing global color table")
    table_bits = (packed & 0x07) + 1
    table = np.frombuffer(reader.read(3 * (1 << table_bits), "global color table"), dtype=np.uint8)
    table = table.reshape(-1, 3)

    palette_size = None
    loop_flag = False
    delay_cs = None
    frames = []
    while True:
        introducer = reader.read(1, "block introducer")[0]
        if introducer == 0x3B:
            break
        if introducer == 0x21:
            label = reader.read(1, "extension")[0]
            if label == 0xF9:
                if reader.read(1, "graphic control extension")[0] != 4:
                    raise GifParseError("graphic control extension", "bad block size")
                _, delay_cs, _ = struct.unpack("<BHB", reader.read(4, "graphic control extension"))
                if reader.read(1, "graphic control extension")[0] != 0:
                    raise GifParseError("graphic control extension", "missing terminator")
            elif label == 0xFE:
                text = b"".join(reader.sub_blocks("comment extension"))
                if text.startswith(PALETTE_COMMENT):
                    try:
                        palette_size = int(text[len(PALETTE_COMMENT):])
                    except ValueError as exc:
                        raise GifParseError("comment extension", "bad palette size") from exc
            elif label == 0xFF:
                size = reader.read(1, "application extension")[0]
                identifier = reader.read(size, "application extension")
                reader.skip("application extension")
                loop_flag = loop_flag or identifier == b"NETSCAPE2.0"
            else:
                reader.skip("extension")
        elif introducer == 0x2C:
            left, top, w, h, flags = struct.unpack("<HHHHB", reader.read(9, "image descriptor"))
            if flags & 0x80:
                raise GifParseError("image descriptor", "local color tables are not supported")
            if flags & 0x40:
                raise GifParseError("image descriptor", "interlaced images are not supported")
            if (left, top, w, h) != (0, 0, width, height):
                raise GifParseError("image descriptor", "partial frames are not supported")
            min_code_size = reader.read(1, "image data")[0]
            if not 2 <= min_code_size <= 8:
                raise GifParseError("image data", f"invalid LZW minimum code size {min_code_size}")
            payload = b"".join(reader.sub_blocks("image data"))
            try:
                indices = lzw_decode(payload, min_code_size)
            except LZWError as exc:
                raise GifParseError("image data", str(exc)) from exc
            if indices.size < w * h:
                raise GifParseError("image data", "too few pixels")
            frames.append(indices[:w * h].reshape(h, w))
        else:
            raise GifParseError("block introducer", f"unexpected byte 0x{introducer:02x}")

    if not frames:
        raise GifParseError("trailer", "no image frames")
    indices = np.stack(frames)

    if palette_size is not None:
        if not 1 <= palette_size <= len(table):
            raise GifParseError("comment extension", "palette size exceeds color table")
        colors = table[:palette_size]
    else:
        # foreign file: fold duplicate padding entries into one canonical table
        colors, inverse = np.unique(table, axis=0, return_inverse=True)
        indices = inverse.reshape(-1)[indices]
    frame_delay_ms = delay_cs * 10 if delay_cs else 100
    return IndexedGif(indices, Palette(colors), frame_delay_ms, loop_flag)


# --- Tensor bridge ----------------------------------------------------------------------------

@torch.no_grad()
def gif_quantize_roundtrip(g: torch.Tensor, n_colors: int = 256) -> torch.Tensor:
    """
    Apply the true GIF degradation to a normalized clip (C, T, H, W) or batch (B, C, T, H, W):
    denormalize, median-cut palette, dither, re-index, normalize.
    """
    from .data_pipeline import denormalize, normalize

    batched = g.dim() == 5
    clips = g if batched else g.unsqueeze(0)
    out = []
    for clip in clips:
        frames = denormalize(clip)
        quantized = IndexedGif.from_frames(frames, n_colors).to_frames()
        out.append(normalize(quantized).to(device=g.device, dtype=g.dtype))
    result = torch.stack(out)
    return result if batched else result[0]
