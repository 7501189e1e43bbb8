import numpy as np
import pytest
import torch
from PIL import Image

from gifguard.data_pipeline import normalize
from gifguard.errors import ClipError, GifFormatError, GifParseError, LZWError
from gifguard.gif_codec import (
    MAX_DELAY_MS,
    IndexedGif,
    Palette,
    _diffuse_loop,
    _diffuse_vectorized,
    floyd_steinberg_dither,
    gif_quantize_roundtrip,
    gif_read,
    gif_write,
    lzw_decode,
    lzw_encode,
    median_cut_palette,
)


def reference_lzw_decode(data, min_code_size):
    # linked-list string table, codes read one bit at a time
    clear, eoi = 1 << min_code_size, (1 << min_code_size) + 1
    bits = [(byte >> i) & 1 for byte in data for i in range(8)]
    pos, width = 0, min_code_size + 1
    table = [(None, i) for i in range(clear + 2)]
    prev, out = None, []

    def expand(code):
        chars = []
        while code is not None:
            code, ch = table[code]
            chars.append(ch)
        return chars[::-1]

    while True:
        code = sum(bits[pos + i] << i for i in range(width))
        pos += width
        if code == clear:
            table, width, prev = table[:clear + 2], min_code_size + 1, None
            continue
        if code == eoi:
            return out
        if prev is not None:
            first = expand(code)[0] if code < len(table) else expand(prev)[0]
            if len(table) < 4096:
                table.append((prev, first))
            if len(table) == 1 << width and width < 12:
                width += 1
        out += expand(code)
        prev = code


def reference_dither(frame, colors):
    work = [[[float(v) for v in px] for px in row] for row in frame]
    h, w = len(work), len(work[0])
    out = [[0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            px = [min(max(v, 0.0), 255.0) for v in work[y][x]]
            dists = [sum((px[c] - float(col[c])) ** 2 for c in range(3)) for col in colors]
            best = dists.index(min(dists))
            out[y][x] = best
            err = [px[c] - float(colors[best][c]) for c in range(3)]
            for dy, dx, wt in ((0, 1, 7), (1, -1, 3), (1, 0, 5), (1, 1, 1)):
                if 0 <= y + dy < h and 0 <= x + dx < w:
                    for c in range(3):
                        work[y + dy][x + dx][c] += err[c] * wt / 16.0
    return np.array(out)


def random_gif(rng, frames=3, height=12, width=10, size=7):
    colors = rng.integers(0, 256, size=(size, 3))
    colors = np.unique(colors, axis=0)
    indices = rng.integers(0, len(colors), size=(frames, height, width))
    return IndexedGif(indices, Palette(colors), frame_delay_ms=80)


# --- Palette ----------------------------------------------------------------------------------

def test_palette_two_colors_returned_exactly():
    frames = np.zeros((2, 4, 4, 3), dtype=np.uint8)
    frames[:, :, 2:] = (10, 200, 30)
    palette = median_cut_palette(frames, 256)
    assert palette.size == 2
    assert {tuple(c) for c in palette.colors} == {(0, 0, 0), (10, 200, 30)}


def test_palette_constant_gray():
    frames = np.full((3, 5, 5, 3), 128, dtype=np.uint8)
    palette = median_cut_palette(frames)
    assert palette.colors.tolist() == [[128, 128, 128]]


def test_palette_checkerboard_split_at_median():
    tile = np.array([[[0, 0, 0], [200, 10, 10]], [[10, 60, 10], [210, 70, 20]]], dtype=np.uint8)
    frames = np.tile(tile, (1, 4, 4, 1))
    palette = median_cut_palette(frames, 2)

    # exhaustive reference: red spread dominates, so the split is along red at the median
    colors = np.unique(frames.reshape(-1, 3), axis=0)
    ordered = colors[np.argsort(colors[:, 0], kind="stable")]
    expected = [np.rint(ordered[:2].mean(axis=0)), np.rint(ordered[2:].mean(axis=0))]
    assert palette.colors.tolist() == np.array(expected, dtype=np.uint8).tolist()
    assert palette.colors.tolist() == [[5, 30, 5], [205, 40, 15]]


def test_palette_deterministic_and_bounded():
    rng = np.random.default_rng(0)
    frames = rng.integers(0, 256, size=(2, 16, 16, 3), dtype=np.uint8)
    a = median_cut_palette(frames, 16)
    b = median_cut_palette(frames.copy(), 16)
    assert a == b
    assert 1 <= a.size <= 16
    assert len(np.unique(a.colors, axis=0)) == a.size


def test_palette_empty_clip():
    with pytest.raises(ClipError, match="empty clip"):
        median_cut_palette(np.zeros((0, 4, 4, 3), dtype=np.uint8))


def test_palette_rejects_bad_sizes():
    with pytest.raises(ValueError):
        Palette(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        Palette(np.zeros((257, 3)))


# --- Dithering --------------------------------------------------------------------------------

def test_dither_exact_colors_have_no_error():
    palette = Palette(np.array([[0, 0, 0], [255, 0, 0], [0, 0, 255]]))
    rng = np.random.default_rng(1)
    expected = rng.integers(0, 3, size=(6, 7))
    frame = palette.colors[expected]
    assert np.array_equal(floyd_steinberg_dither(frame, palette), expected)


def test_dither_hand_trace_two_pixels():
    palette = Palette(np.array([[0, 0, 0], [255, 255, 255]]))
    frame = np.full((1, 2, 3), 96, dtype=np.uint8)
    assert floyd_steinberg_dither(frame, palette).tolist() == [[0, 1]]


def test_dither_midpoint_matches_reference():
    palette = Palette(np.array([[0, 0, 0], [255, 255, 255]]))
    frame = np.full((4, 4, 3), 128, dtype=np.uint8)
    indices = floyd_steinberg_dither(frame, palette)
    assert set(indices.ravel().tolist()) == {0, 1}
    assert np.array_equal(indices, reference_dither(frame, palette.colors))


def test_dither_preserves_block_means():
    levels = np.array([0, 85, 170, 255])
    cube = np.stack(np.meshgrid(levels, levels, levels, indexing="ij"), -1).reshape(-1, 3)
    palette = Palette(cube)
    step = 85
    rng = np.random.default_rng(2)
    for _ in range(100):
        frame = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        recon = palette.colors[floyd_steinberg_dither(frame, palette)].astype(np.float64)
        for y in range(0, 16, 8):
            for x in range(0, 16, 8):
                block = (slice(y, y + 8), slice(x, x + 8))
                diff = recon[block].mean(axis=(0, 1)) - frame[block].mean(axis=(0, 1))
                assert np.all(np.abs(diff) <= step)


def test_dither_backends_agree():
    rng = np.random.default_rng(3)
    colors = np.unique(rng.integers(0, 256, size=(12, 3)), axis=0).astype(np.float64)
    for _ in range(5):
        frame = rng.integers(0, 256, size=(9, 11, 3)).astype(np.float64)
        a = _diffuse_loop(frame.copy(), colors, np.zeros((9, 11), dtype=np.int64))
        b = _diffuse_vectorized(frame.copy(), colors, np.zeros((9, 11), dtype=np.int64))
        assert np.array_equal(a, b)


# --- LZW --------------------------------------------------------------------------------------

def test_lzw_empty_sequence():
    data = lzw_encode([], 2)
    assert lzw_decode(data, 2).size == 0
    assert reference_lzw_decode(data, 2) == []


def test_lzw_repeated_symbol_compresses():
    data = lzw_encode([1, 1, 1, 1, 1], 2)
    assert lzw_decode(data, 2).tolist() == [1, 1, 1, 1, 1]
    assert reference_lzw_decode(data, 2) == [1, 1, 1, 1, 1]
    assert len(data) < 5


def test_lzw_random_roundtrip():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        mcs = int(rng.integers(2, 9))
        seq = rng.integers(0, 1 << mcs, size=int(rng.integers(0, 300)))
        assert np.array_equal(lzw_decode(lzw_encode(seq, mcs), mcs), seq)


def test_lzw_long_stream_resets_table():
    rng = np.random.default_rng(5)
    seq = rng.integers(0, 256, size=20000)
    data = lzw_encode(seq, 8)
    assert np.array_equal(lzw_decode(data, 8), seq)
    assert reference_lzw_decode(data, 8) == seq.tolist()


def test_lzw_low_entropy_crosses_code_widths():
    seq = np.tile(np.arange(4), 5000) % 4
    for mcs in (2, 3):
        data = lzw_encode(seq, mcs)
        assert reference_lzw_decode(data, mcs) == seq.tolist()


def test_lzw_truncated_stream():
    data = lzw_encode(list(range(4)) * 50, 2)
    with pytest.raises(LZWError, match="truncated LZW stream"):
        lzw_decode(data[: len(data) // 2], 2)


def test_lzw_invalid_code():
    # clear (4) then code 7 in 3 bits: not yet defined
    with pytest.raises(LZWError):
        lzw_decode(bytes([0b00111100, 0]), 2)


def test_lzw_bad_code_size():
    with pytest.raises(ValueError):
        lzw_encode([0, 1], 1)
    with pytest.raises(ValueError):
        lzw_decode(b"\x00", 9)
    with pytest.raises(ValueError):
        lzw_encode([4], 2)


# --- Container --------------------------------------------------------------------------------

def test_gif_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    colors = np.unique(rng.integers(0, 256, size=(200, 3)), axis=0)
    indices = rng.integers(0, len(colors), size=(10, 64, 64))
    gif = IndexedGif(indices, Palette(colors), frame_delay_ms=120, loop_flag=True)
    back = gif_read(gif_write(gif, tmp_path / "clip.gif"))
    assert back == gif
    assert back.shape == (10, 64, 64)


@pytest.mark.parametrize("delay_ms", [10, 20, MAX_DELAY_MS])
def test_gif_roundtrip_keeps_frame_delay(tmp_path, delay_ms):
    rng = np.random.default_rng(8)
    gif = random_gif(rng, size=3)
    gif.frame_delay_ms = delay_ms
    back = gif_read(gif_write(gif, tmp_path / "clip.gif"))
    assert back.frame_delay_ms == delay_ms
    assert back == gif


@pytest.mark.parametrize("delay_ms", [0, 5, 15, MAX_DELAY_MS + 10])
def test_frame_delay_must_fit_centiseconds(delay_ms):
    rng = np.random.default_rng(9)
    with pytest.raises(GifFormatError, match="frame_delay_ms"):
        IndexedGif(rng.integers(0, 4, size=(2, 4, 4)), Palette(np.eye(4, 3, dtype=np.uint8) * 255),
                   frame_delay_ms=delay_ms)


def test_gif_roundtrip_without_loop_and_odd_palette(tmp_path):
    rng = np.random.default_rng(7)
    gif = random_gif(rng, size=5)
    gif.loop_flag = False
    back = gif_read(gif_write(gif, tmp_path / "clip.gif"))
    assert back == gif
    assert back.palette.size == gif.palette.size


def test_gif_bad_signature(tmp_path):
    path = tmp_path / "bad.gif"
    path.write_bytes(b"PNG89a" + b"\x00" * 20)
    with pytest.raises(GifParseError, match="bad signature") as info:
        gif_read(path)
    assert info.value.block == "header"


def test_gif_truncated_names_block(tmp_path):
    rng = np.random.default_rng(8)
    data = gif_write(random_gif(rng), tmp_path / "clip.gif").read_bytes()
    cut = tmp_path / "cut.gif"
    cut.write_bytes(data[: len(data) - 40])
    with pytest.raises(GifParseError) as info:
        gif_read(cut)
    assert str(info.value).startswith(info.value.block)


def test_external_decoder_reads_emitted_files(tmp_path):
    rng = np.random.default_rng(9)
    for n in range(10):
        gif = random_gif(rng, frames=2, size=2 + n)
        path = gif_write(gif, tmp_path / f"clip{n}.gif")
        expected = gif.to_frames()
        with Image.open(path) as img:
            assert img.n_frames == 2
            for t in range(2):
                img.seek(t)
                assert np.array_equal(np.array(img.convert("RGB")), expected[t])


def test_reference_decoder_matches_image_data(tmp_path):
    rng = np.random.default_rng(10)
    for n in range(10):
        gif = random_gif(rng, frames=1, height=20, width=20, size=3 + 20 * n)
        mcs = gif.palette.min_code_size
        data = lzw_encode(gif.indices[0].ravel(), mcs)
        assert reference_lzw_decode(data, mcs) == gif.indices[0].ravel().tolist()


# --- Tensor bridge ----------------------------------------------------------------------------

def test_quantize_roundtrip_lossless_for_small_palettes():
    rng = np.random.default_rng(11)
    colors = rng.integers(0, 256, size=(40, 3), dtype=np.uint8)
    frames = colors[rng.integers(0, 40, size=(3, 8, 8))]
    g = normalize(frames)
    assert torch.equal(gif_quantize_roundtrip(g), g)


def test_quantize_roundtrip_constant_clip():
    g = normalize(np.full((4, 8, 8, 3), 159, dtype=np.uint8)).expand(2, -1, -1, -1, -1)
    assert torch.equal(gif_quantize_roundtrip(g), g)


def test_quantize_roundtrip_gradient_error_bounded():
    y, x = np.mgrid[0:32, 0:32]
    frames = np.stack([np.stack([x * 8, y * 8, np.full_like(x, 40 + 60 * t)], -1)
                       for t in range(2)]).astype(np.uint8)
    g = normalize(frames)
    out = gif_quantize_roundtrip(g)
    assert not torch.equal(out, g)

    palette = median_cut_palette(frames)
    pixels = frames.reshape(-1, 3).astype(np.float64)
    nearest = np.sqrt(((pixels[:, None] - palette.colors[None].astype(np.float64)) ** 2).sum(-1))
    cell = nearest.min(axis=1).max()
    error = (out - g).abs().max().item() * 127.5
    assert error <= 4 * cell + 1
