"""Tokenization, vocabulary, and the recurrent caption encoder.

Captions are whitespace-tokenized.  The encoder embeds words (randomly
initialized by default, with a hook to load a pretrained table) and runs a
bidirectional recurrent network; the sentence embedding is the mean of the
hidden states over the actual tokens.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

PAD = "<pad>"
UNK = "<unk>"


def tokenize(caption: str) -> list[str]:
    return caption.split()


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        self.id_to_token = [PAD, UNK, *tokens]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    @classmethod
    def build(cls, captions: Iterable[str]) -> "Vocabulary":
        seen = sorted({t for c in captions for t in tokenize(c)})
        return cls(seen)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, caption: str, max_tokens: int | None = None) -> list[int]:
        ids = [self.token_to_id.get(t, 1) for t in tokenize(caption)]
        if max_tokens is not None:
            ids = ids[:max_tokens]
        return ids


class RecurrentTextEncoder(nn.Module):
    """Bidirectional GRU (or LSTM) over word embeddings.

    ``encode_mean`` returns the mean of hidden states, ``token_states``
    returns the per-token states plus their mean for attention consumers.
    """

    def __init__(
        self,
        vocab_size: int,
        embed_dim: int = 64,
        hidden: int = 64,
        cell: str = "gru",
    ):
        super().__init__()
        rnn_cls = {"gru": nn.GRU, "lstm": nn.LSTM}[cell]
        self.embedding = nn.Embedding(vocab_size, embed_dim, padding_idx=0)
        self.rnn = rnn_cls(embed_dim, hidden, batch_first=True, bidirectional=True)
        self.cell = cell
        self.out_dim = 2 * hidden

    def load_pretrained_embeddings(self, table: np.ndarray) -> None:
        if table.shape != tuple(self.embedding.weight.shape):
            raise ValueError(f"embedding table shape {table.shape} does not match")
        with torch.no_grad():
            self.embedding.weight.copy_(torch.as_tensor(table, dtype=torch.float32))

    def token_states(self, token_ids: Sequence[int]) -> torch.Tensor:
        """Hidden states for one sentence, shape (n_tokens, out_dim)."""
        if not token_ids:
            raise ValueError("empty token sequence")
        x = torch.tensor([list(token_ids)], dtype=torch.long)
        states, _ = self.rnn(self.embedding(x))
        return states[0]

    def encode_mean(self, batch: Sequence[Sequence[int]]) -> torch.Tensor:
        """Mean hidden state per sentence, shape (batch, out_dim).

        Sentences are padded to the batch maximum; padding positions are
        excluded from the mean.
        """
        if any(len(ids) == 0 for ids in batch):
            raise ValueError("empty token sequence in batch")
        lengths = torch.tensor([len(ids) for ids in batch])
        n = int(lengths.max())
        padded = torch.zeros(len(batch), n, dtype=torch.long)
        mask = torch.zeros(len(batch), n)
        for i, ids in enumerate(batch):
            padded[i, : len(ids)] = torch.tensor(list(ids), dtype=torch.long)
            mask[i, : len(ids)] = 1.0
        # packing keeps the recurrence off the padding, so a sentence encodes
        # identically regardless of what it is batched with
        packed = nn.utils.rnn.pack_padded_sequence(
            self.embedding(padded), lengths, batch_first=True, enforce_sorted=False
        )
        states, _ = self.rnn(packed)
        states, _ = nn.utils.rnn.pad_packed_sequence(
            states, batch_first=True, total_length=n
        )
        summed = (states * mask.unsqueeze(-1)).sum(dim=1)
        return summed / mask.sum(dim=1, keepdim=True)
