import numpy as np
import pytest

from vlccp.bits import bytes_to_bits
from vlccp.channel import CameraFrame, CameraModel, SceneState, project_bar, render_frame, step_motion
from vlccp.harness import simulate_link
from vlccp.rx import (
    MAX_LOST,
    DemodFrame,
    LowContrastError,
    NoPacketError,
    PacketAssembler,
    assemble_packet,
    assemble_packets,
    demod_frame,
    detect_bar,
    track_roi,
)
from vlccp.tx import frame_to_ledbar

OUTDOOR = CameraModel(focal_length=0.100)
INDOOR = CameraModel(focal_length=0.0125)


def scene(distance, **kw):
    kw.setdefault("ambient_level", 60.0)
    return SceneState(distance=distance, **kw)


def render(value, parity, sc, cam=OUTDOOR, t=0.0):
    return render_frame(frame_to_ledbar(value, parity), sc, cam, t)


def detected(sc, cam=OUTDOOR):
    return detect_bar(render(0x00, 0, sc, cam), render(0x00, 1, sc, cam, 0.001))


def test_static_light_is_not_detected():
    yy, xx = np.mgrid[:320, :600]
    disc = np.where((yy - 100) ** 2 + (xx - 420) ** 2 < 30**2, 250, 60).astype(np.uint8)
    assert not detect_bar(CameraFrame(disc, 0.0), CameraFrame(disc.copy(), 0.001)).valid


def test_identical_bar_frames_are_not_detected():
    sc = scene(100)
    assert not detect_bar(render(0xA5, 0, sc), render(0xA5, 0, sc, t=0.001)).valid


@pytest.mark.parametrize("distance,cam", [(5, INDOOR), (75, OUTDOOR), (160, OUTDOOR)])
def test_idle_bar_detected_and_roi_holds_every_footprint(distance, cam):
    sc = scene(distance)
    roi = detected(sc, cam)
    assert roi.valid
    for f in project_bar(sc, cam):
        assert roi.contains(f.x, f.y)
    pitch = (project_bar(sc, cam)[1].x - project_bar(sc, cam)[0].x)
    assert roi.bar_width == pytest.approx(96 * pitch, rel=0.03)


def test_noisy_detection_finds_the_bar():
    sc = scene(100, noise_sigma=40.0, rng_seed=2)
    roi = detected(sc)
    assert roi.valid
    assert abs(roi.center[0] - 299.5) < 2 and abs(roi.center[1] - 159.5) < 2


def test_stationary_tracking_drift_below_half_pixel():
    sc = scene(100)
    roi = detected(sc)
    start = roi.center
    prev = render(0x00, 1, sc, t=0.001)
    for k in range(2, 200):
        curr = render((k * 29) & 0xFF, k // 2 % 2, sc, t=k / 1000)
        roi = track_roi(roi, prev, curr)
        prev = curr
        assert roi.valid
    assert abs(roi.center[0] - start[0]) < 0.5
    assert abs(roi.center[1] - start[1]) < 0.5


def test_tracking_follows_90kmh_approach():
    sc = scene(120, speed=90 / 3.6)
    roi = detected(sc)
    prev = render(0x00, 1, sc, t=0.001)
    for k in range(2, 800):
        sc = step_motion(sc, 0.001)
        curr = render((k * 53) & 0xFF, k // 2 % 2, sc, t=k / 1000)
        roi = track_roi(roi, prev, curr)
        prev = curr
        assert roi.valid
    assert sc.distance == pytest.approx(120 - 798 * 0.025)
    for f in project_bar(sc, OUTDOOR):
        assert roi.contains(f.x, f.y)


def test_roi_lost_after_bar_disappears():
    sc = scene(100)
    roi = detected(sc)
    dark = render_frame(None, sc, OUTDOOR, 0.002)
    prev = dark
    for k in range(MAX_LOST):
        roi = track_roi(roi, prev, dark)
        assert roi.valid and roi.lost == k + 1
    assert not track_roi(roi, dark, dark).valid


@pytest.mark.parametrize("value", [0xA5, 0x00, 0xFF, 0x01, 0x80])
def test_noise_free_demod_full_confidence(value):
    sc = scene(100)
    roi = detected(sc)
    df = demod_frame(render(value, 1, sc, t=0.005), roi)
    assert df.byte_value == value
    assert df.symbol_parity == 1
    assert df.confidence == (1.0,) * 8


def test_low_contrast_is_reported():
    sc = scene(100)
    roi = detected(sc)
    with pytest.raises(LowContrastError):
        demod_frame(render_frame(None, sc, OUTDOOR, 0.0), roi)


def test_demod_needs_valid_roi():
    from vlccp.rx import INVALID_ROI

    with pytest.raises(ValueError):
        demod_frame(render(0, 0, scene(100)), INVALID_ROI)


# -- assembler ---------------------------------------------------------------

def stream(symbols, captures=2, conf=None, start=0.0):
    out = []
    t = start
    for i, value in enumerate(symbols):
        for c in range(captures):
            cf = 1.0 if conf is None else conf(i, c)
            out.append(DemodFrame(value, (cf,) * 8, t, i % 2))
            t += 0.001
    return out


def packet_symbols(data):
    return [0, 0, 0xFF] + list(data) + [0]


def test_assembles_53_byte_packet():
    data = bytes(range(7, 7 + 53))
    pkt = assemble_packet(stream(packet_symbols(data)), 53)
    assert pkt.data_bytes == data
    assert pkt.first_frame_time == pytest.approx(0.006)
    assert pkt.demod_complete_time == pytest.approx(0.006 + 2 * 53 * 0.001)


def test_best_capture_wins_and_first_on_tie():
    frames = [
        DemodFrame(0, (1.0,) * 8, 0.000, 0), DemodFrame(0, (1.0,) * 8, 0.001, 0),
        DemodFrame(0, (1.0,) * 8, 0.002, 1), DemodFrame(0, (1.0,) * 8, 0.003, 1),
        DemodFrame(0xFF, (0.9,) * 8, 0.004, 0), DemodFrame(0xFE, (0.2,) * 8, 0.005, 0),
        DemodFrame(0x11, (0.3,) * 8, 0.006, 1), DemodFrame(0x22, (0.3,) * 8, 0.007, 1),
        DemodFrame(0, (1.0,) * 8, 0.008, 0),
    ]
    assert assemble_packet(frames, 1).data_bytes == b"\x11"


def test_one_frame_short_is_no_packet():
    symbols = packet_symbols(bytes(53))[:-2]
    with pytest.raises(NoPacketError):
        assemble_packet(stream(symbols), 53)


def test_sync_needs_idle_gap():
    with pytest.raises(NoPacketError):
        assemble_packet(stream([0, 0xFF, 0x12, 0]), 1)


def test_slip_triggers_resync_then_next_packet_decodes():
    first = packet_symbols(b"\xaa" * 4)
    # symbol 5 read with the parity of symbol 4: a run of four captures
    broken = [DemodFrame(f.byte_value, f.confidence, f.capture_time,
                         0 if 8 <= i <= 11 else f.symbol_parity)
              for i, f in enumerate(stream(first))]
    second = stream(packet_symbols(b"\x55" * 4), start=1.0)
    asm = PacketAssembler(4)
    out = [p for p in (asm.push(df) for df in broken + second) if p is not None]
    assert asm.slips >= 1
    assert [p.data_bytes for p in out] == [b"\x55" * 4]


def test_three_captures_per_symbol_allowed_at_ratio_three():
    frames = stream(packet_symbols(b"\x0f\xf0"), captures=3)
    assert assemble_packets(frames, 2, captures_per_symbol=3)[0].data_bytes == b"\x0f\xf0"


# -- loopback ----------------------------------------------------------------

ALL_BYTES = bytes_to_bits(bytes(range(256)))


def loopback(sc, cam, phase):
    cam = CameraModel(focal_length=cam.focal_length, phase_offset=phase)
    trace = simulate_link([ALL_BYTES], sc, cam, 500, np.random.default_rng(0))
    assert len(trace.rx_packets) == 1
    return trace.rx_packets[0].payload_bits


@pytest.mark.parametrize("phase_eighths", range(8))
def test_loopback_every_phase_at_100m(phase_eighths):
    bits = loopback(scene(100), OUTDOOR, phase_eighths / 8 * 0.002)
    assert (bits == ALL_BYTES).all()


def test_noise_degrades_monotonically_on_matched_seed():
    errors = []
    for sigma in (0.0, 60.0, 90.0):
        cam = CameraModel(focal_length=0.1, phase_offset=0.0003)
        sc = scene(160, noise_sigma=sigma, rng_seed=11)
        trace = simulate_link([ALL_BYTES] * 3, sc, cam, 500, np.random.default_rng(0))
        wrong = 3 * ALL_BYTES.size - sum(ALL_BYTES.size for _ in trace.rx_packets)
        wrong += sum(int((p.payload_bits != ALL_BYTES).sum()) for p in trace.rx_packets)
        errors.append(wrong)
    assert errors[0] == 0
    assert errors[0] <= errors[1] <= errors[2]
