"""LSTM controller and interface-vector parsing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ShapeError


def interface_size(word_size, read_heads):
    """Length of the control vector: ``C*m + 3C + 5m + 3``."""
    return word_size * read_heads + 3 * word_size + 5 * read_heads + 3


def oneplus(x):
    return 1 + F.softplus(x)


@dataclass
class InterfaceSignals:
    # shapes for one episode; a batch adds a leading axis to each
    read_keys: torch.Tensor  # (m, C)
    read_strengths: torch.Tensor  # (m,)
    write_key: torch.Tensor  # (C,)
    write_strength: torch.Tensor  # scalar
    erase: torch.Tensor  # (C,)
    write_value: torch.Tensor  # (C,)
    free_gates: torch.Tensor  # (m,)
    allocation_gate: torch.Tensor
    write_gate: torch.Tensor
    read_modes: torch.Tensor  # (m, 3): backward, content, forward


def parse_interface(xi, word_size, read_heads):
    """Split a raw control vector into typed, range-constrained signals."""
    c, m = word_size, read_heads
    if xi.dim() not in (1, 2) or xi.shape[-1] != interface_size(c, m):
        raise ShapeError(f"control vector has shape {tuple(xi.shape)}, expected (..., {interface_size(c, m)})")
    lead = xi.shape[:-1]
    sizes = [c * m, m, c, 1, c, c, m, 1, 1, 3 * m]
    (read_keys, read_strengths, write_key, write_strength, erase, write_value,
     free_gates, alloc_gate, write_gate, modes) = torch.split(xi, sizes, dim=-1)
    return InterfaceSignals(
        read_keys=read_keys.reshape(*lead, m, c),
        read_strengths=oneplus(read_strengths),
        write_key=write_key,
        write_strength=oneplus(write_strength[..., 0]),
        erase=torch.sigmoid(erase),
        write_value=write_value,
        free_gates=torch.sigmoid(free_gates),
        allocation_gate=torch.sigmoid(alloc_gate[..., 0]),
        write_gate=torch.sigmoid(write_gate[..., 0]),
        read_modes=torch.softmax(modes.reshape(*lead, m, 3), dim=-1),
    )


class Controller(nn.Module):
    """Single-layer LSTM mapping ``[x_t; r_{t-1}]`` to ``(nu_t, xi_t)``."""

    def __init__(self, input_width, output_width, hidden=64, word_size=32, read_heads=2):
        super().__init__()
        self.input_width = input_width
        self.output_width = output_width
        self.hidden = hidden
        self.word_size = word_size
        self.read_heads = read_heads
        reads = word_size * read_heads
        self.lstm = nn.LSTMCell(input_width + reads, hidden)
        self.to_output = nn.Linear(hidden, output_width, bias=False)
        self.to_interface = nn.Linear(hidden, interface_size(word_size, read_heads))
        self.readout = nn.Linear(output_width + reads, output_width)
        self.reset_parameters()

    def reset_parameters(self):
        for module in (self.to_output, self.to_interface, self.readout):
            bound = 1 / math.sqrt(module.in_features)
            nn.init.uniform_(module.weight, -bound, bound)
            if module.bias is not None:
                nn.init.uniform_(module.bias, -bound, bound)
        bound = 1 / math.sqrt(self.hidden)
        for p in self.lstm.parameters():
            nn.init.uniform_(p, -bound, bound)
        h = self.hidden
        with torch.no_grad():
            # gate order is (input, forget, cell, output)
            self.lstm.bias_ih[h:2 * h].fill_(1.0)
            self.lstm.bias_hh[h:2 * h].zero_()

    def initial_state(self, dtype=None, batch=None):
        dtype = dtype or self.lstm.weight_ih.dtype
        zeros = torch.zeros(batch or 1, self.hidden, dtype=dtype)
        return zeros, zeros.clone()

    def step(self, x, prev_reads, state):
        """One controller tick. ``x`` is ``(I,)`` with reads ``(m, C)``, or batched ``(B, I)`` / ``(B, m, C)``.

        The recurrent state is always ``(B, H)`` (``B = 1`` unbatched).
        """
        batched = x.dim() == 2
        if x.shape[-1] != self.input_width or x.dim() not in (1, 2):
            raise ShapeError(f"input has shape {tuple(x.shape)}, expected (..., {self.input_width})")
        if prev_reads.shape != (*x.shape[:-1], self.read_heads, self.word_size):
            raise ShapeError(f"reads have shape {tuple(prev_reads.shape)}")
        inp = torch.cat([x, prev_reads.flatten(-2)], dim=-1)
        h, c = self.lstm(inp if batched else inp.unsqueeze(0), state)
        out = h if batched else h[0]
        return self.to_output(out), self.to_interface(out), (h, c)

    def emit_output(self, nu, reads):
        return self.readout(torch.cat([nu, reads.flatten(-2)], dim=-1))
