import io
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vgx.geometry import Point
from vgx.preprocess import preprocess_document
from vgx.svg_io import CommandKind, DrawCommand, FillMode, SvgDocument, SvgPath, parse_svg
from vgx.tensor_repr import (
    UNUSED_BIN, CapacityError, QuantizationError, ReprConfig, SvgTensor, check_slot_mask,
    dequantize_coord, detensorize, load_dataset, quantize_coord, read_records, save_dataset,
    tensorize, write_records,
)

K = CommandKind
GOLDEN = sorted((Path(__file__).parent / "data" / "golden").glob("*.svg"))


def fig9_doc() -> SvgDocument:
    """Two paths: m c c l z and m c."""
    a = SvgPath([DrawCommand.move(Point(10, 10)),
                 DrawCommand.cubic(Point(20, 0), Point(40, 0), Point(50, 10)),
                 DrawCommand.cubic(Point(60, 20), Point(60, 40), Point(50, 50)),
                 DrawCommand.line(Point(10, 50)),
                 DrawCommand.close()])
    b = SvgPath([DrawCommand.move(Point(100, 100)),
                 DrawCommand.cubic(Point(120, 80), Point(140, 80), Point(160, 100))],
                fill=FillMode.OUTLINE)
    return SvgDocument([b, a])


# --- quantization ----------------------------------------------------------------

def test_quantize_examples():
    assert quantize_coord(0.0) == 0
    assert quantize_coord(-1.0) == UNUSED_BIN
    assert quantize_coord(128.0, 256) == 128
    assert quantize_coord(256.0, 256) == 255


@pytest.mark.parametrize("x", [-1.5, 300.0, float("nan")])
def test_quantize_rejects_out_of_range(x):
    with pytest.raises(QuantizationError):
        quantize_coord(x)


def test_dequantize_examples():
    assert dequantize_coord(256) == -1
    assert dequantize_coord(0) == 0.5
    with pytest.raises(QuantizationError):
        dequantize_coord(257)


@given(st.floats(0, 256, exclude_max=True))
def test_quantization_round_trip_within_one_bin(x):
    assert abs(dequantize_coord(quantize_coord(x)) - x) <= 256 / 256


@given(st.floats(0, 1000, exclude_max=True), st.floats(1, 1000))
def test_quantization_bound_any_viewbox(x, vb):
    x = x % vb
    assert abs(dequantize_coord(quantize_coord(x, vb), vb) - x) <= vb / 256 / 2 + vb / 256 + 1e-9


# --- tensorize / detensorize -------------------------------------------------------

def test_fig9_layout():
    cfg = ReprConfig(n_paths=2, n_commands=7)
    t = tensorize(fig9_doc(), cfg)
    # sorted by start (y, x): the (10, 10) path comes first
    assert t.cmd.tolist() == [[1, 3, 3, 2, 4, 5, 5], [1, 3, 5, 5, 5, 5, 5]]
    assert t.visible.tolist() == [True, True]
    assert t.fill.tolist() == [int(FillMode.FILL), int(FillMode.OUTLINE)]
    assert t.args[0, 0].tolist() == [256, 256, 256, 256, 10, 10]
    assert t.args[0, 4].tolist() == [256] * 6
    assert check_slot_mask(t)


def test_fig9_detensorize():
    cfg = ReprConfig(n_paths=2, n_commands=7)
    doc = detensorize(tensorize(fig9_doc(), cfg), cfg)
    assert [len(p.commands) for p in doc.paths] == [5, 2]
    assert doc.viewbox == (256, 256)


def test_empty_document():
    cfg = ReprConfig()
    t = tensorize(SvgDocument([]), cfg)
    assert not t.visible.any() and (t.cmd == K.EOS).all() and (t.args == UNUSED_BIN).all()
    assert detensorize(t, cfg).paths == []


def test_capacity_errors_name_the_limit():
    doc = SvgDocument([SvgPath([DrawCommand.move(Point(i, i)), DrawCommand.line(Point(i + 1, i))])
                       for i in range(3)])
    with pytest.raises(CapacityError, match="N_P=2"):
        tensorize(doc, ReprConfig(n_paths=2))
    long = SvgDocument([SvgPath([DrawCommand.move(Point(0, 0))]
                                + [DrawCommand.line(Point(i, 1)) for i in range(6)])])
    with pytest.raises(CapacityError, match="N_C-1=5"):
        tensorize(long, ReprConfig(n_commands=6))
    tensorize(long, ReprConfig(n_commands=8))


def test_requires_normalized_viewbox():
    with pytest.raises(ValueError):
        tensorize(SvgDocument([], (24, 24)))


def test_out_of_canvas_coordinates_are_clamped():
    doc = SvgDocument([SvgPath([DrawCommand.move(Point(-2, 10)), DrawCommand.line(Point(258, 10))])])
    t = tensorize(doc)
    assert t.args[0, 0, 4] == 0 and t.args[0, 1, 4] == 255


def test_mask_precedence_on_decode():
    cfg = ReprConfig(n_paths=1, n_commands=4)
    t = SvgTensor.empty(cfg)
    t.visible[0] = True
    t.cmd[0, :2] = [K.M, K.L]
    t.args[0, 0] = [5, 5, 5, 5, 10, 10]
    t.args[0, 1] = [7, 7, 7, 7, 20, 10]
    (p,) = detensorize(t, cfg).paths
    assert [c.args[:4] for c in p.commands] == [(-1,) * 4] * 2
    assert tuple(p.commands[1].end) == (20.5, 10.5)


def test_decode_repairs_invalid_sequences():
    cfg = ReprConfig(n_paths=3, n_commands=5)
    t = SvgTensor.empty(cfg)
    t.visible[:] = True
    t.cmd[0, :3] = [K.L, K.L, K.Z]          # starts with a line
    t.args[0, :2, 4:] = [[1, 1], [9, 1]]
    t.cmd[1, :2] = [K.Z, K.EOS]             # nothing to draw
    t.cmd[2, :3] = [K.M, K.C, K.EOS]        # used slots left as the unused bin
    t.args[2, 0, 4:] = [3, 3]
    doc = detensorize(t, cfg)
    assert len(doc.paths) == 2
    assert [c.kind for c in doc.paths[0].commands] == [K.M, K.L, K.Z]
    c = doc.paths[1].commands[1]
    assert c.kind == K.C and all(v == 3.5 for v in c.args)


def test_sos_rows_are_skipped_and_first_eos_truncates():
    cfg = ReprConfig(n_paths=1, n_commands=5)
    t = SvgTensor.empty(cfg)
    t.visible[0] = True
    t.cmd[0] = [K.SOS, K.M, K.L, K.EOS, K.L]
    t.args[0, 1:3, 4:] = 4
    t.args[0, 4, 4:] = 9
    (p,) = detensorize(t, cfg).paths
    assert [c.kind for c in p.commands] == [K.M, K.L]


coords = st.integers(0, 2550).map(lambda v: v / 10)


@st.composite
def documents(draw):
    paths = []
    for _ in range(draw(st.integers(0, 4))):
        cmds = [DrawCommand.move(Point(draw(coords), draw(coords)))]
        for _ in range(draw(st.integers(0, 6))):
            if draw(st.booleans()):
                cmds.append(DrawCommand.line(Point(draw(coords), draw(coords))))
            else:
                cmds.append(DrawCommand.cubic(*(Point(draw(coords), draw(coords)) for _ in range(3))))
        if draw(st.booleans()):
            cmds.append(DrawCommand.close())
        paths.append(SvgPath(cmds, FillMode(draw(st.integers(0, 2)))))
    return SvgDocument(paths)


@settings(max_examples=100)
@given(documents())
def test_round_trip_and_slot_mask(doc):
    cfg = ReprConfig(n_paths=4, n_commands=10)
    t = tensorize(doc, cfg)
    assert check_slot_mask(t)
    back = detensorize(t, cfg)
    src = sorted(doc.paths, key=lambda p: (np.floor(p.start.y), np.floor(p.start.x)))
    assert len(back.paths) == len(src)
    for p, q in zip(src, back.paths):
        assert [c.kind for c in p.commands] == [c.kind for c in q.commands]
        for c, d in zip(p.commands, q.commands):
            used = [a != -1 for a in c.args]
            diff = [abs(a - b) for a, b, u in zip(c.args, d.args, used) if u]
            assert all(x <= 1.0 for x in diff)
    # detensorize then tensorize is the identity on tensors
    assert tensorize(back, cfg) == t


@settings(max_examples=50)
@given(documents(), st.integers(0, 3), st.integers(0, 5))
def test_capacity_monotonicity(doc, extra_p, extra_c):
    small = ReprConfig(n_paths=4, n_commands=10)
    big = ReprConfig(n_paths=4 + extra_p, n_commands=10 + extra_c)
    a, b = tensorize(doc, small), tensorize(doc, big)
    assert np.array_equal(b.cmd[:4, :10], a.cmd) and np.array_equal(b.args[:4, :10], a.args)
    assert (b.cmd[:, 10:] == K.EOS).all() and not b.visible[4:].any()


def test_golden_corpus_round_trip():
    # Delta=5 subdivision of full-canvas circles needs a large command budget
    cfg = ReprConfig(n_paths=16, n_commands=256)
    for f in GOLDEN:
        doc = preprocess_document(parse_svg(f.read_text()))
        t = tensorize(doc, cfg)
        assert check_slot_mask(t), f.name
        back = detensorize(t, cfg)
        assert tensorize(back, cfg) == t, f.name


# --- dataset file --------------------------------------------------------------------------

def test_dataset_file_round_trip(tmp_path):
    cfg = ReprConfig(n_paths=2, n_commands=7)
    tensors = [tensorize(fig9_doc(), cfg), SvgTensor.empty(cfg)]
    path = tmp_path / "data.vgxt"
    save_dataset(path, tensors, cfg)
    raw = path.read_bytes()
    assert raw[:4] == b"VGXT"
    assert len(raw) == 14 + 2 * (2 * 7 + 2 * 7 * 6 * 2 + 2 + 2)
    cfg2, back = load_dataset(path)
    assert cfg2 == cfg and back == tensors


def test_dataset_rejects_bad_magic_and_truncation():
    buf = io.BytesIO()
    cfg = ReprConfig(n_paths=1, n_commands=2)
    write_records(buf, [SvgTensor.empty(cfg)], cfg)
    data = buf.getvalue()
    with pytest.raises(ValueError, match="magic"):
        read_records(io.BytesIO(b"XXXX" + data[4:]))
    with pytest.raises(ValueError, match="truncated"):
        read_records(io.BytesIO(data[:-1]))
