import json
import math
import os

import pytest

import mambaq

SRC = os.environ.get("MAMBAQ_SOURCE_DIR", os.path.join(os.path.dirname(__file__), "..", ".."))


def test_fwht_basis_and_involution():
    assert mambaq.fwht([1.0, 0.0, 0.0, 0.0]) == [1.0, 1.0, 1.0, 1.0]
    v = [0.3, -1.2, 4.0, 0.25, -2.0, 1.0, 0.0, 7.5]
    twice = mambaq.fwht(mambaq.fwht(v))
    assert twice == pytest.approx([x * 8 for x in v])


def test_rotation_is_orthonormal():
    row = [float(i) - 3.5 for i in range(64)]
    rot = mambaq.rotate(row, 1, 64)
    assert sum(x * x for x in rot) == pytest.approx(sum(x * x for x in row))
    back = mambaq.rotate(rot, 1, 64, transpose=True)
    assert back == pytest.approx(row)


def test_rotation_tames_outliers():
    spike = [0.01] * 256
    spike[17] = 30.0
    assert mambaq.kurtosis(mambaq.rotate(spike, 1, 256)) < mambaq.kurtosis(spike)
    # gaussian-ish body plus one outlier: the outlier stretches the int4 scale
    # until the body rounds to nothing, and the rotation spreads it back out
    row = [2.0 * math.sin(12.9898 * i) for i in range(256)]
    row[101] = 40.0
    rot = mambaq.rotate(row, 1, 256)
    assert mambaq.quant_mse(rot, 1, 256, bits=4) < mambaq.quant_mse(row, 1, 256, bits=4)


def test_quant_dequant_bound():
    vals = [math.sin(0.7 * i) * 5 for i in range(128)]
    deq = mambaq.quant_dequant(vals, 1, 128, bits=8, granularity="per_token")
    scale = max(abs(v) for v in vals) / 127.0
    for a, b in zip(vals, deq):
        assert abs(a - b) <= scale / 2 + 1e-12


def test_requantize_shift():
    assert mambaq.requantize_shift(100, 2, 8) == 25
    assert mambaq.requantize_shift(-10, 2, 8) == -3  # half away from zero
    assert mambaq.requantize_shift(1000, 0, 8) == 127  # clamps
    with pytest.raises(mambaq.MambaqError):
        mambaq.requantize_shift(1, 63, 8)


def test_model_round_trip(tmp_path):
    model = str(tmp_path / "toy")
    mambaq.make_toy(model, seed=5)
    tokens = mambaq.synth_corpus(6, 400, 256)
    ppl_fp = mambaq.perplexity(model, tokens)
    assert math.isfinite(ppl_fp) and ppl_fp > 1.0

    qdir = str(tmp_path / "q8")
    mambaq.quantize_dir(model, qdir, scheme="w8a8", rotate=True, quantize_ssm=True)
    rep = mambaq.qperplexity(qdir, tokens)
    assert abs(rep["perplexity"] - ppl_fp) / ppl_fp < 0.02
    assert rep["rescale_mults"] == 0 and rep["fp_mults"] == 0
    assert rep["em_int_mults"] > 0 and rep["shifts"] > 0


def test_invariance_and_sabotage(tmp_path):
    model = str(tmp_path / "toy")
    mambaq.make_toy(model, seed=11)
    ok = mambaq.check_invariance(model, tokens=48)
    assert ok["max_logit_diff"] < 1e-6 and ok["greedy_match"]
    bad = mambaq.check_invariance(model, tokens=48, sabotage=True)
    assert bad["max_logit_diff"] > 1e-3


def test_simulate_presets():
    hw = os.path.join(SRC, "configs", "vck190.json")
    cfg = os.path.join(SRC, "configs", "mamba2-2.7b.json")
    fine = mambaq.simulate(hw, cfg, bits=4, schedule="fine_tiled")
    seq = mambaq.simulate(hw, cfg, bits=4, schedule="sequential")
    assert fine["feasible"] and seq["feasible"]
    assert fine["cycles_per_token"] < seq["cycles_per_token"]
    assert 5.0 <= fine["tokens_per_s"] <= 9.4
