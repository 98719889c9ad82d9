import numpy as np
import pytest
import torch

from ordervqa.text import PAD, RecurrentTextEncoder, UNK, Vocabulary, tokenize


class TestVocabulary:
    def test_build_sorted_with_specials(self):
        v = Vocabulary.build(["b a", "c a"])
        assert v.id_to_token == [PAD, UNK, "a", "b", "c"]
        assert len(v) == 5

    def test_encode_known_and_unknown(self):
        v = Vocabulary.build(["a b"])
        assert v.encode("a b z") == [2, 3, 1]

    def test_max_tokens_truncates(self):
        v = Vocabulary.build(["a b c"])
        assert len(v.encode("a b c a b c", max_tokens=4)) == 4

    def test_tokenize_whitespace(self):
        assert tokenize("  apply  red lipstick ") == ["apply", "red", "lipstick"]


class TestRecurrentTextEncoder:
    def _enc(self, cell="gru"):
        torch.manual_seed(0)
        return RecurrentTextEncoder(10, embed_dim=4, hidden=3, cell=cell)

    def test_out_dim_is_twice_hidden(self):
        assert self._enc().out_dim == 6

    def test_token_states_shape(self):
        states = self._enc().token_states([1, 2, 3])
        assert states.shape == (3, 6)

    def test_empty_sentence_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            self._enc().token_states([])
        with pytest.raises(ValueError, match="empty"):
            self._enc().encode_mean([[1], []])

    def test_encode_mean_ignores_padding(self):
        enc = self._enc()
        with torch.no_grad():
            single = enc.encode_mean([[2, 3]])
            batched = enc.encode_mean([[2, 3], [4, 5, 6, 7]])
        # the short sentence's mean must not change when batched with a longer one
        torch.testing.assert_close(single[0], batched[0], rtol=1e-5, atol=1e-6)

    def test_lstm_cell_supported(self):
        states = self._enc(cell="lstm").token_states([1, 2])
        assert states.shape == (2, 6)

    def test_load_pretrained_embeddings(self):
        enc = self._enc()
        table = np.random.default_rng(0).normal(size=(10, 4))
        enc.load_pretrained_embeddings(table)
        np.testing.assert_allclose(
            enc.embedding.weight.detach().numpy(), table.astype(np.float32), rtol=1e-6
        )
        with pytest.raises(ValueError, match="shape"):
            enc.load_pretrained_embeddings(np.zeros((3, 4)))
