import pytest
import torch

from disentag.encoders import MaskedBiLSTM, MultiHeadSelfAttention, SequenceEncoder


def full_mask(bsz, seq):
    return torch.ones(bsz, seq, dtype=torch.bool)


class TestMaskedBiLSTM:
    def test_output_shape(self):
        g = torch.Generator().manual_seed(0)
        lstm = MaskedBiLSTM(5, 7, g)
        out = lstm(torch.randn(2, 4, 5), full_mask(2, 4))
        assert out.shape == (2, 4, 14)

    def test_forget_bias_initialized_to_one(self):
        lstm = MaskedBiLSTM(3, 4)
        forget = lstm.fwd.bias_ih[4:8]
        assert torch.equal(forget, torch.ones(4))
        assert torch.equal(lstm.fwd.bias_ih[:4], torch.zeros(4))

    def test_recurrent_blocks_orthogonal(self):
        lstm = MaskedBiLSTM(3, 6, torch.Generator().manual_seed(1))
        for block in lstm.bwd.weight_hh.chunk(4, dim=0):
            gram = block @ block.t()
            assert torch.allclose(gram, torch.eye(6), atol=1e-5)

    def test_padded_rows_are_zero(self):
        g = torch.Generator().manual_seed(2)
        lstm = MaskedBiLSTM(4, 5, g)
        mask = torch.tensor([[True, True, False, False]])
        out = lstm(torch.randn(1, 4, 4), mask)
        assert torch.equal(out[0, 2:], torch.zeros(2, 10))

    def test_trailing_pad_does_not_change_prefix(self):
        g = torch.Generator().manual_seed(3)
        lstm = MaskedBiLSTM(4, 5, g)
        x = torch.randn(1, 3, 4)
        short = lstm(x, full_mask(1, 3))
        x_pad = torch.cat([x, torch.zeros(1, 2, 4)], dim=1)
        mask = torch.tensor([[True, True, True, False, False]])
        long = lstm(x_pad, mask)
        assert torch.allclose(short, long[:, :3], atol=1e-12)


class TestMultiHeadSelfAttention:
    def make(self, dim=6, heads=2, hd=4, seed=0):
        g = torch.Generator().manual_seed(seed)
        return MultiHeadSelfAttention(dim, heads, hd, g)

    def test_shape_preserved(self):
        attn = self.make()
        out = attn(torch.randn(3, 5, 6), full_mask(3, 5))
        assert out.shape == (3, 5, 6)

    def test_all_masked_row_rejected(self):
        attn = self.make()
        mask = torch.tensor([[False, False, False]])
        with pytest.raises(ValueError):
            attn(torch.randn(1, 3, 6), mask)

    def test_masked_keys_get_no_weight(self):
        attn = self.make()
        h = torch.randn(1, 4, 6)
        mask = torch.tensor([[True, True, True, False]])
        scores = attn.scores(h)
        scores = scores.masked_fill(~mask[:, None, None, :], -1e9)
        weights = torch.softmax(scores, dim=-1)
        assert float(weights[..., 3].max().detach()) < 1e-6

    def test_masked_query_rows_zeroed(self):
        attn = self.make()
        mask = torch.tensor([[True, True, False]])
        out = attn(torch.randn(1, 3, 6), mask)
        assert torch.equal(out[0, 2], torch.zeros(6))

    def test_pad_keys_do_not_influence_unmasked_rows(self):
        attn = self.make(seed=4)
        h = torch.randn(1, 3, 6)
        base = attn(h, full_mask(1, 3))
        h_pad = torch.cat([h, torch.randn(1, 2, 6)], dim=1)
        mask = torch.tensor([[True, True, True, False, False]])
        padded = attn(h_pad, mask)
        assert torch.allclose(base, padded[:, :3], atol=1e-12)


class TestSequenceEncoder:
    def test_out_dim_and_shape(self):
        g = torch.Generator().manual_seed(5)
        enc = SequenceEncoder(7, 4, num_heads=2, head_dim=3, generator=g)
        assert enc.out_dim == 8
        out = enc(torch.randn(2, 6, 7), full_mask(2, 6))
        assert out.shape == (2, 6, 8)

    def test_two_instances_have_independent_parameters(self):
        g = torch.Generator().manual_seed(6)
        a = SequenceEncoder(5, 3, 2, 2, g)
        b = SequenceEncoder(5, 3, 2, 2, g)
        assert not torch.equal(a.lstm.fwd.weight_ih, b.lstm.fwd.weight_ih)

    def test_end_to_end_pad_invariance(self):
        g = torch.Generator().manual_seed(7)
        enc = SequenceEncoder(5, 4, 2, 3, g)
        x = torch.randn(1, 4, 5)
        base = enc(x, full_mask(1, 4))
        x_pad = torch.cat([x, torch.zeros(1, 3, 5)], dim=1)
        mask = torch.cat([full_mask(1, 4), torch.zeros(1, 3, dtype=torch.bool)], dim=1)
        padded = enc(x_pad, mask)
        assert torch.allclose(base, padded[:, :4], atol=1e-6)
        assert torch.equal(padded[0, 4:], torch.zeros(3, 8))

    def test_gradients_flow(self):
        g = torch.Generator().manual_seed(8)
        enc = SequenceEncoder(5, 3, 2, 2, g)
        out = enc(torch.randn(2, 4, 5), full_mask(2, 4))
        out.sum().backward()
        assert enc.lstm.fwd.weight_ih.grad is not None
        assert enc.attn.w_o.grad is not None
