"""The assembled Differentiable Neural Computer (controller + memory)."""

from __future__ import annotations

from dataclasses import dataclass

from torch import nn

from . import memory as mem
from .controller import Controller, parse_interface


@dataclass
class DNCState:
    controller: tuple
    memory: mem.MemoryState

    def detach(self):
        return DNCState(tuple(t.detach() for t in self.controller), self.memory.detach())


class DNC(nn.Module):
    def __init__(self, input_width, output_width, cells=100, word_size=32, read_heads=2, hidden=64):
        super().__init__()
        self.cells = cells
        self.controller = Controller(input_width, output_width, hidden, word_size, read_heads)

    @property
    def input_width(self):
        return self.controller.input_width

    @property
    def output_width(self):
        return self.controller.output_width

    @property
    def word_size(self):
        return self.controller.word_size

    @property
    def read_heads(self):
        return self.controller.read_heads

    @property
    def hidden(self):
        return self.controller.hidden

    @property
    def dtype(self):
        return self.controller.lstm.weight_ih.dtype

    def widths(self):
        return {
            "input_width": self.input_width,
            "output_width": self.output_width,
            "cells": self.cells,
            "word_size": self.word_size,
            "read_heads": self.read_heads,
            "hidden": self.hidden,
        }

    def initial_state(self, cells=None, batch=None):
        return DNCState(
            self.controller.initial_state(self.dtype, batch),
            mem.MemoryState.initial(cells or self.cells, self.word_size, self.read_heads, self.dtype, batch),
        )

    def step(self, x, state, temperature=1.0, temperature_on_write=True):
        """Advance one timestep. Returns ``(logits, new_state, signals)``.

        ``x`` is ``(I,)`` for one episode or ``(B, I)`` for a batch whose
        state came from ``initial_state(batch=B)``.
        """
        ms = state.memory
        nu, xi, ctrl = self.controller.step(x, ms.read_values, state.controller)
        sig = parse_interface(xi, self.word_size, self.read_heads)

        usage, alloc = mem.dynamic_allocation(ms.usage, sig.free_gates, ms.read_weightings, ms.write_weighting)
        write_temp = temperature if temperature_on_write else 1.0
        write_content = mem._content_weights(sig.write_key, sig.write_strength, ms.memory, write_temp)
        ga, gw = sig.allocation_gate.unsqueeze(-1), sig.write_gate.unsqueeze(-1)
        write_w = gw * (ga * alloc + (1 - ga) * write_content)
        memory = mem.write(ms.memory, write_w, sig.erase, sig.write_value)

        link, precedence, fwd, bwd = mem.temporal_addressing(ms.link, ms.precedence, write_w, ms.read_weightings)
        read_content = mem._content_weights(sig.read_keys, sig.read_strengths, memory, temperature)
        read_w = mem.read_weighting(sig.read_modes, read_content, fwd, bwd)
        reads = mem.read(memory, read_w)

        logits = self.controller.emit_output(nu, reads)
        new_memory = mem.MemoryState(memory, usage, precedence, link, write_w, read_w, reads, ms.extensions)
        return logits, DNCState(ctrl, new_memory), sig
