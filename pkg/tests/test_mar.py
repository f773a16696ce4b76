import logging

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mmanet.data import DropoutPattern, enumerate_patterns
from mmanet.errors import MiningStateError
from mmanet.mar import (
    ClassHistogram,
    MiningState,
    class_histogram,
    collect_pattern_predictions,
    finalize_mining,
    format_mining_report,
    mar_loss,
    mining_report,
    pattern_divergence,
    regularization_mask,
    single_modality_mask,
    update_memory_bank,
    weak_mask,
)
from mmanet.models import DeploymentNet


def _logits_for(classes, k):
    out = np.zeros((len(classes), k))
    out[np.arange(len(classes)), classes] = 1.0
    return out


def _frozen(bank):
    state = MiningState.empty(*np.shape(bank))
    for e, row in enumerate(bank, start=1):
        state = update_memory_bank(state, row, e)
    return finalize_mining(state)


class TestHistogram:
    def test_hand_count(self):
        hist = class_histogram(_logits_for([0, 1, 1, 0, 2], 3)[None])
        assert hist.counts.tolist() == [[2, 2, 1]]

    def test_all_one_class(self):
        hist = class_histogram(_logits_for([0] * 7, 4)[None])
        assert hist.counts.tolist() == [[7, 0, 0, 0]]
        assert np.all(hist.probs >= 1e-6 / (7 + 4e-6))

    def test_ties_go_low(self):
        hist = class_histogram(np.zeros((1, 3, 2)))
        assert hist.counts.tolist() == [[3, 0]]

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (4, 9, 3), elements=st.floats(-3, 3)))
    def test_rows_normalized(self, Y):
        hist = class_histogram(Y)
        assert np.all(hist.counts.sum(1) == 9)
        np.testing.assert_allclose(hist.probs.sum(1), 1, atol=1e-12)

    def test_literal_softmax(self):
        hist = class_histogram(_logits_for([0, 0, 1], 2)[None], literal_softmax=True)
        np.testing.assert_allclose(hist.probs[0], np.exp([2, 1]) / np.exp([2, 1]).sum())


class TestDivergence:
    def test_hand_value(self):
        # 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1) = 0.51082562376599 (mpmath)
        probs = np.array([[0.5, 0.5], [0.9, 0.1]])
        g = pattern_divergence(ClassHistogram(None, probs))
        assert g[0] == pytest.approx(0.5108256237659907, abs=1e-12)

    def test_identical_histograms(self):
        Y = np.stack([_logits_for([0, 1, 1, 2], 3)] * 4)
        assert np.all(pattern_divergence(class_histogram(Y)) <= 1e-6)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.int64, (4, 3), elements=st.integers(0, 50)))
    def test_nonnegative(self, counts):
        probs = (counts + 1e-6) / (counts.sum(1, keepdims=True) + 3e-6)
        assert np.all(pattern_divergence(ClassHistogram(counts, probs)) >= 0)


class TestMemoryBank:
    def test_records_and_mean(self):
        state = MiningState.empty(3, 2)
        for e in range(1, 4):
            state = update_memory_bank(state, [0.3, 0.1], e)
        assert state.epochs_recorded == 3
        np.testing.assert_allclose(state.mean_divergence(), [0.3, 0.1])

    def test_rejects_epoch_past_warmup(self):
        with pytest.raises(MiningStateError):
            update_memory_bank(MiningState.empty(2, 2), [0, 0], 3)

    def test_premature_finalize(self):
        state = update_memory_bank(MiningState.empty(2, 2), [0, 0], 1)
        with pytest.raises(MiningStateError):
            finalize_mining(state)

    def test_frozen_is_final(self):
        state = _frozen([[0.3, 0.1]])
        with pytest.raises(MiningStateError):
            update_memory_bank(state, [0, 0], 1)
        with pytest.raises(MiningStateError):
            finalize_mining(state)


class TestFinalize:
    def test_m2(self):
        state = _frozen([[0.3, 0.1]])
        assert state.strong_index == 1
        assert [p.present for p in state.omega] == [(False, True)]

    def test_depth_analog(self):
        state = _frozen([[0.01, 0.4, 0.02]])
        assert state.strong_index == 2
        assert {p.present for p in state.omega} == {(True, False, False), (False, False, True), (True, False, True)}

    @pytest.mark.parametrize("m", [2, 3, 4, 5])
    def test_omega_partition(self, m):
        rng = np.random.default_rng(m)
        state = _frozen(rng.random((2, m)))
        assert len(state.omega) == 2 ** (m - 1) - 1
        w = state.strong_index - 1
        _, full = enumerate_patterns(m)
        assert all(not p.present[w] for p in state.omega)
        rest = [p for p in full if p not in state.omega]
        assert all(p.present[w] for p in rest)

    def test_tie_breaks_low_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger="mmanet.mar"):
            state = _frozen([[0.2, 0.2, 0.1]])
        assert state.strong_index == 1
        assert "tie" in caplog.text


class TestMasks:
    def test_weak_mask_membership(self):
        state = _frozen([[0.01, 0.4, 0.02]])
        patterns = np.array([[1, 1, 1], [0, 1, 0], [1, 0, 1], [1, 0, 0]], dtype=bool)
        assert weak_mask(patterns, state).tolist() == [False, False, True, True]

    def test_weak_mask_needs_freeze(self):
        with pytest.raises(MiningStateError):
            weak_mask(np.ones((2, 2), dtype=bool), MiningState.empty(1, 2))

    def test_sr_selects_single_modality_patterns(self):
        _, full = enumerate_patterns(4)
        rows = np.array([p.present for p in full])
        sel = rows[single_modality_mask(rows)]
        assert sorted(map(tuple, sel)) == sorted(tuple(r) for r in np.eye(4, dtype=bool))
        assert regularization_mask("off", rows).sum() == 0
        with pytest.raises(ValueError):
            regularization_mask("nope", rows)


class TestMarLoss:
    logits = torch.tensor([[2.0, 0.5, -1.0], [0.0, 1.0, 0.0], [0.3, -0.2, 0.9], [1.5, 1.5, 0.0]],
                          dtype=torch.float64)
    labels = torch.tensor([0, 2, 2, 1])

    def test_empty_selection(self):
        assert mar_loss(self.logits, self.labels, [False] * 4).item() == 0

    def test_full_selection(self):
        assert mar_loss(self.logits, self.labels, [True] * 4).item() == pytest.approx(
            F.cross_entropy(self.logits, self.labels).item(), abs=1e-15)
        # mpmath: mean CE over all four rows
        assert mar_loss(self.logits, self.labels, [True] * 4).item() == pytest.approx(0.8059596589153323, abs=1e-12)

    def test_two_selected(self):
        # mpmath: mean CE of rows 1 and 3
        loss = mar_loss(self.logits, self.labels, [False, True, False, True])
        assert loss.item() == pytest.approx(1.1751804493868884, abs=1e-12)

    def test_gradient_zero_on_unselected(self):
        y = self.logits.clone().requires_grad_(True)
        mar_loss(y, self.labels, [True, False, True, False]).backward()
        assert torch.all(y.grad[[1, 3]] == 0)
        assert torch.all(y.grad[[0, 2]].abs().sum(1) > 0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mar_loss(self.logits, self.labels, [True] * 3)


def test_collect_pattern_predictions():
    torch.manual_seed(0)
    net = DeploymentNet((3, 2, 4), 2)
    rng = np.random.default_rng(0)
    x = [torch.tensor(rng.standard_normal((10, d))) for d in (3, 2, 4)]
    mining, _ = enumerate_patterns(3)
    Y = collect_pattern_predictions(net, x, mining)
    assert Y.shape == (4, 10, 2)
    np.testing.assert_array_equal(Y, collect_pattern_predictions(net, x, mining))
    full = net(x, np.ones(3, dtype=bool))[1].detach().numpy()
    np.testing.assert_array_equal(Y[0], full)
    with pytest.raises(ValueError):
        collect_pattern_predictions(net, [f[:0] for f in x], mining)


def test_mining_report_layout():
    state = _frozen([[0.1, 0.5, 0.0], [0.2, 0.3, 0.1]])
    rep = mining_report(state, ["RGB", "Depth", "IR"])
    assert len(rep["divergence"]) == 2
    assert rep["strong_modality"] == "Depth"
    assert rep["omega"] == ["IR", "RGB", "RGB+IR"]
    text = format_mining_report(rep)
    assert text.splitlines()[3].strip().startswith("mean")
    assert "weak combinations: IR, RGB, RGB+IR" in text
