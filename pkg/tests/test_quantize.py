import numpy as np
import pytest
from hypothesis import given, strategies as st

from rbvsense.chaos import ChaosParams, ReservoirCoeffs, Topology
from rbvsense.exceptions import ModelFormatError, ModelVersionError, QuantizationOverflowError
from rbvsense.lognnet import LogNNetModel, forward
from rbvsense.quantize import (
    dumps_model,
    emulate_edge_inference,
    export_model,
    import_model,
    loads_model,
    quantize,
    ram_budget,
    scale_round,
)

from conftest import random_lognnet


def test_rounding_is_half_away_from_zero_on_decimal_value():
    assert scale_round(0.1234, 1000) == 123
    # the double nearest 0.1235 lies just below the tie
    assert scale_round(0.1235, 1000) == 123
    assert scale_round(0.125, 100) == 13
    assert scale_round(-0.125, 100) == -13
    assert scale_round(0.0005, 1000) == 1
    assert scale_round(-0.0005, 1000) == -1
    assert scale_round(2.5, 1) == 3


def test_mean_terms_use_ten_times_scale():
    t = Topology(2, 1, 1, 1)
    m = LogNNetModel(t, ChaosParams(), ReservoirCoeffs((0.1,), (0.2,), (0.01234,)),
                     np.zeros((2, 2)), np.zeros((2, 2)))
    q = quantize(m)
    assert q.q_min_s.tolist() == [100] and q.q_mean10.tolist() == [123]


def test_overflow_names_tensor_and_index():
    t = Topology(2, 1, 1, 1)
    w1 = np.zeros((2, 2))
    w1[1, 1] = 40.0
    m = LogNNetModel(t, ChaosParams(), ReservoirCoeffs.identity(1), w1, np.zeros((2, 2)))
    with pytest.raises(QuantizationOverflowError) as err:
        quantize(m)
    assert err.value.tensor == "W1" and err.value.index == (1, 1) and err.value.value == 40000


def test_emulator_close_to_float_path():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        m = random_lognnet(rng)
        x = rng.random(51)
        a = np.array(forward(m, x).activations)
        e = np.array(emulate_edge_inference(quantize(m), x).activations)
        worst = max(worst, float(np.abs(a - e).max()))
    assert worst < 5e-3


def test_emulator_zero_range_rule():
    t = Topology(2, 1, 1, 1)
    w1 = np.array([[0.0, 0.0], [0.0, 1.0]])
    w2 = np.array([[0.0, 0.0], [-1.0, 1.0]])
    m = LogNNetModel(t, ChaosParams(), ReservoirCoeffs((0.5,), (0.5,), (0.0,)), w1, w2)
    out = emulate_edge_inference(quantize(m), [1.0, 2.0])
    ref = forward(m, [1.0, 2.0])
    assert out.predicted_class == ref.predicted_class
    np.testing.assert_allclose(out.activations, ref.activations, atol=1e-6)


def small_q(rng):
    return quantize(random_lognnet(rng, Topology(4, 3, 2, 1)))


def test_text_round_trip(tmp_path):
    q = small_q(np.random.default_rng(1))
    export_model(q, tmp_path / "m.txt")
    q2 = import_model(tmp_path / "m.txt")
    assert q2 == q
    assert dumps_model(q2) == (tmp_path / "m.txt").read_text()


def test_layout():
    text = dumps_model(small_q(np.random.default_rng(2))).split("\n")
    assert text[:5] == ["LOGNNET1", "topology 4 3 2 1", "chaos 93 68 9276 73", "scale 1000", "minS 1 3"]


def corrupt(text, lineno, new):
    lines = text.split("\n")
    lines[lineno - 1] = new
    return "\n".join(lines)


def test_bad_magic():
    text = dumps_model(small_q(np.random.default_rng(3)))
    with pytest.raises(ModelFormatError) as err:
        loads_model("XXX" + text[3:])
    assert err.value.line == 1 and "magic" in str(err.value)


def test_unsupported_version():
    text = dumps_model(small_q(np.random.default_rng(3)))
    with pytest.raises(ModelVersionError):
        loads_model(text.replace("LOGNNET1", "LOGNNET2", 1))


def test_truncated_tensor():
    text = dumps_model(small_q(np.random.default_rng(4)))
    lines = text.split("\n")
    w1 = lines.index("W1 4 3")
    del lines[w1 + 2]
    with pytest.raises(ModelFormatError) as err:
        loads_model("\n".join(lines))
    assert "W1: expected 4 rows, found 3" in str(err.value)
    truncated = "\n".join(text.split("\n")[: w1 + 2]) + "\n"
    with pytest.raises(ModelFormatError) as err:
        loads_model(truncated)
    assert "expected 4 rows, found 1" in str(err.value)


def test_int16_overflow_in_file():
    text = dumps_model(small_q(np.random.default_rng(5)))
    lines = text.split("\n")
    w2 = lines.index("W2 3 2")
    bad = corrupt(text, w2 + 2, "40000 0")
    with pytest.raises(ModelFormatError) as err:
        loads_model(bad)
    assert err.value.line == w2 + 2 and "int16" in str(err.value)


def test_other_corruptions():
    text = dumps_model(small_q(np.random.default_rng(6)))
    with pytest.raises(ModelFormatError, match="final newline"):
        loads_model(text[:-1])
    with pytest.raises(ModelFormatError, match="trailing"):
        loads_model(text + "1 2\n")
    with pytest.raises(ModelFormatError, match="non-integer"):
        loads_model(corrupt(text, 6, "1 2 x"))
    with pytest.raises(ModelFormatError, match="declared"):
        loads_model(corrupt(text, 5, "minS 1 4"))


def test_reference_board_ram_budget():
    b = ram_budget(Topology.parse("51,50,20,2"))
    assert (b.input_buffer, b.global_arrays, b.library, b.library_w1, b.total) == (208, 294, 2526, 2142, 4350)


@given(st.integers(1, 200), st.integers(1, 200), st.integers(1, 100), st.integers(1, 20))
def test_ram_total_is_sum_of_parts(S, P, M, N):
    b = ram_budget(Topology(S, P, M, N))
    top = [v for name, v in b.rows() if not name.startswith(" ") and name != "total"]
    assert b.total == sum(top)
    assert b.library == b.library_w1 + b.library_w2 + b.library_coeffs


def test_all_zero_quantized_weights_pick_class_zero():
    m = random_lognnet(np.random.default_rng(8), Topology(5, 4, 3, 1), weight=0.0)
    out = emulate_edge_inference(quantize(m), np.ones(5))
    assert out.activations == (0.5, 0.5) and out.predicted_class == 0


def test_dequantization_within_half_quantum():
    m = random_lognnet(np.random.default_rng(9))
    q = quantize(m)
    lo, hi, mean10, w1, w2 = q.dequantized()
    assert np.max(np.abs(w1 - m.w1)) <= 0.5 / 1000
    assert np.max(np.abs(w2 - m.w2)) <= 0.5 / 1000
    assert np.max(np.abs(lo - np.array(m.coeffs.min_s))) <= 0.5 / 1000
    assert np.max(np.abs(mean10 - np.array(m.coeffs.mean10))) <= 0.05 / 1000 + 1e-15
