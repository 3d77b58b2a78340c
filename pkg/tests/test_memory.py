import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from budgeted_dnc import memory as mem
from budgeted_dnc.errors import CapacityError, DataError, ShapeError

f64 = torch.float64


def t(x):
    return torch.tensor(x, dtype=f64)


def entropy(p):
    p = p[p > 0]
    return float(-(p * p.log()).sum())


class TestContentAddress:
    def test_identical_rows_give_uniform(self):
        key = t([0.3, -1.2, 2.0])
        memory = key.repeat(7, 1)
        for beta, tau in [(1.0, 1.0), (5.0, 0.65), (30.0, 2.0)]:
            w = mem.content_address(key, beta, memory, tau)
            torch.testing.assert_close(w, torch.full((7,), 1 / 7, dtype=f64))

    def test_unit_temperature_matches_plain_softmax_bitwise(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            memory = t(rng.normal(size=(9, 4)))
            key = t(rng.normal(size=4))
            beta = t(1 + rng.exponential(3))
            plain = torch.softmax(mem.cosine_similarity(key, memory) * beta, dim=-1)
            assert torch.equal(mem.content_address(key, beta, memory, 1.0), plain)

    def test_two_cell_example(self):
        # softmax((2/0.65, 0)) evaluated with math.exp
        a = math.exp(2 / 0.65)
        expected = t([a / (a + 1), 1 / (a + 1)])
        w = mem.content_address(t([1.0, 0.0]), 2.0, t([[1.0, 0.0], [0.0, 1.0]]), 0.65)
        # the 1e-8 norm guard perturbs the result around 1e-9
        torch.testing.assert_close(w, expected, rtol=0, atol=1e-7)
        assert abs(float(w[0]) - 0.956) < 5e-4

    def test_rejects_non_finite(self):
        memory = torch.zeros(3, 2, dtype=f64)
        with pytest.raises(DataError):
            mem.content_address(t([float("nan"), 0.0]), 1.0, memory)
        with pytest.raises(DataError):
            mem.content_address(t([1.0, 0.0]), float("inf"), memory)
        with pytest.raises(ShapeError):
            mem.content_address(t([1.0, 0.0, 0.0]), 1.0, memory)

    def test_zero_key_scores_zero(self):
        memory = t([[1.0, 2.0], [0.0, 0.0], [-3.0, 1.0]])
        sim = mem.cosine_similarity(torch.zeros(2, dtype=f64), memory)
        assert torch.equal(sim, torch.zeros(3, dtype=f64))

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31), scale=st.floats(1e-2, 1e3))
    def test_key_scale_invariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        memory = t(rng.normal(size=(6, 3)))
        key = t(rng.normal(size=3))
        a = mem.content_address(key, 4.0, memory)
        b = mem.content_address(key * scale, 4.0, memory)
        # invariance holds up to the 1e-8 norm guard
        torch.testing.assert_close(a, b, rtol=1e-5, atol=1e-7)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31), tau=st.floats(0.2, 0.99))
    def test_lower_temperature_sharpens(self, seed, tau):
        rng = np.random.default_rng(seed)
        memory = t(rng.normal(size=(8, 4)))
        key = t(rng.normal(size=4))
        beta = 1 + 5 * rng.random()
        assert entropy(mem.content_address(key, beta, memory, tau)) < entropy(mem.content_address(key, beta, memory, 1.0))


class TestReadWrite:
    def test_one_hot_read_returns_row(self):
        memory = t([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        assert torch.equal(mem.read(memory, t([0.0, 1.0, 0.0])), t([3.0, 4.0]))

    def test_uniform_pair_read_is_mean(self):
        memory = t([[1.0, 2.0], [3.0, 8.0], [5.0, 6.0]])
        torch.testing.assert_close(mem.read(memory, t([0.5, 0.0, 0.5])), t([3.0, 4.0]))

    def test_read_example(self):
        memory = t([[1, 0], [0, 1], [2, 2]])
        torch.testing.assert_close(mem.read(memory, t([0.2, 0.3, 0.5])), t([1.2, 1.3]))

    def test_read_shape_error(self):
        with pytest.raises(ShapeError):
            mem.read(torch.zeros(3, 2), torch.zeros(4))

    def test_zero_write_keeps_memory(self):
        memory = t(np.arange(6.0).reshape(3, 2))
        out = mem.write(memory, torch.zeros(3, dtype=f64), t([1.0, 1.0]), t([9.0, 9.0]))
        assert torch.equal(out, memory)

    def test_full_erase_replaces_row(self):
        memory = t(np.arange(6.0).reshape(3, 2))
        out = mem.write(memory, t([0.0, 0.0, 1.0]), t([1.0, 1.0]), t([-7.0, 0.5]))
        assert torch.equal(out[2], t([-7.0, 0.5]))
        assert torch.equal(out[:2], memory[:2])

    def test_half_write_example(self):
        memory = t([[2.0, 0.0], [1.0, 1.0]])
        out = mem.write(memory, t([0.5, 0.0]), t([1.0, 1.0]), t([0.0, 4.0]))
        torch.testing.assert_close(out[0], t([1.0, 2.0]))

    def test_write_shape_error(self):
        with pytest.raises(ShapeError):
            mem.write(torch.zeros(3, 2), torch.zeros(3), torch.zeros(3), torch.zeros(2))


def brute_force_allocation(u):
    """a[j] = (1 - u[j]) * prod of usages of cells that come earlier in the free list."""
    n = len(u)
    a = np.zeros(n)
    for j in range(n):
        earlier = [i for i in range(n) if (u[i], i) < (u[j], j)]
        a[j] = (1 - u[j]) * np.prod([u[i] for i in earlier])
    return a


class TestAllocation:
    def test_full_usage_allocates_nothing(self):
        assert torch.equal(mem.allocation(torch.ones(5, dtype=f64)), torch.zeros(5, dtype=f64))

    def test_empty_usage_allocates_first_cell(self):
        assert torch.equal(mem.allocation(torch.zeros(4, dtype=f64)), t([1.0, 0.0, 0.0, 0.0]))

    def test_example(self):
        assert torch.equal(mem.allocation(t([0.5, 0.0, 1.0])), t([0.0, 1.0, 0.0]))

    @pytest.mark.parametrize("n", range(1, 9))
    def test_matches_brute_force(self, n):
        rng = np.random.default_rng(n)
        for _ in range(25):
            u = rng.random(n)
            got = mem.allocation(t(u)).numpy()
            np.testing.assert_allclose(got, brute_force_allocation(u), rtol=1e-12, atol=1e-15)
            assert got.sum() <= 1 + 1e-12

    def test_dynamic_allocation_ranges(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            u = t(rng.random(6))
            ww = t(rng.dirichlet(np.ones(6)) * rng.random())
            wr = t(rng.dirichlet(np.ones(6), size=2) * rng.random((2, 1)))
            new_u, a = mem.dynamic_allocation(u, t(rng.random(2)), wr, ww)
            assert ((new_u >= 0) & (new_u <= 1)).all()
            assert float(a.sum()) <= 1 + 1e-12
            assert (a[new_u == 1] == 0).all()

    def test_usage_with_free_gates_closed(self):
        u = t([0.2, 0.0, 0.5])
        ww = t([0.0, 1.0, 0.0])
        new_u = mem.update_usage(u, torch.zeros(1, dtype=f64), torch.zeros(1, 3, dtype=f64), ww)
        torch.testing.assert_close(new_u, t([0.2, 1.0, 0.5]))


class TestTemporal:
    def test_zero_precedence_gives_zero_links(self):
        n = 4
        link, prec, fwd, bwd = mem.temporal_addressing(
            torch.zeros(n, n, dtype=f64), torch.zeros(n, dtype=f64), t([0, 1.0, 0, 0]), t([[1.0, 0, 0, 0]]))
        assert torch.equal(link, torch.zeros(n, n, dtype=f64))
        assert torch.equal(fwd, torch.zeros(1, n, dtype=f64)) and torch.equal(bwd, torch.zeros(1, n, dtype=f64))
        assert torch.equal(prec, t([0, 1.0, 0, 0]))

    def test_two_writes_link_forward(self):
        n = 3
        link, prec = torch.zeros(n, n, dtype=f64), torch.zeros(n, dtype=f64)
        reads = t([[0.0, 1.0, 0.0]])
        link, prec, _, _ = mem.temporal_addressing(link, prec, t([0.0, 1.0, 0.0]), reads)
        link, prec, fwd, bwd = mem.temporal_addressing(link, prec, t([0.0, 0.0, 1.0]), reads)
        # cells are 0-indexed here: "cell 1" -> index 1, "cell 2" -> index 2
        assert float(link[2, 1]) == 1.0
        assert torch.equal(fwd, t([[0.0, 0.0, 1.0]]))
        assert torch.equal(bwd, torch.zeros(1, n, dtype=f64))
        _, _, _, bwd2 = mem.temporal_addressing(link, prec, torch.zeros(n, dtype=f64), t([[0.0, 0.0, 1.0]]))
        assert torch.equal(bwd2, t([[0.0, 1.0, 0.0]]))

    def test_link_invariants_random(self):
        rng = np.random.default_rng(5)
        n = 6
        link, prec = torch.zeros(n, n, dtype=f64), torch.zeros(n, dtype=f64)
        for _ in range(40):
            w = t(rng.dirichlet(np.ones(n)) * rng.random())
            link, prec, _, _ = mem.temporal_addressing(link, prec, w, t(rng.dirichlet(np.ones(n), size=2)))
            assert (link.diagonal() == 0).all()
            assert (link.sum(0) <= 1 + 1e-6).all() and (link.sum(1) <= 1 + 1e-6).all()
            assert float(prec.sum()) <= 1 + 1e-6


class TestReadWeighting:
    def test_content_selector(self):
        c = t([[0.2, 0.8, 0.0]])
        out = mem.read_weighting(t([[0.0, 1.0, 0.0]]), c, t([[1.0, 0, 0]]), t([[0, 0, 1.0]]))
        assert torch.equal(out, c)

    def test_backward_zero(self):
        out = mem.read_weighting(t([[1.0, 0.0, 0.0]]), t([[0.5, 0.5]]), t([[1.0, 0.0]]), t([[0.0, 0.0]]))
        assert torch.equal(out, t([[0.0, 0.0]]))

    def test_linearity(self):
        bwd, c = t([[0.1, 0.3, 0.2]]), t([[0.6, 0.3, 0.1]])
        out = mem.read_weighting(t([[0.5, 0.5, 0.0]]), c, torch.zeros(1, 3, dtype=f64), bwd)
        assert abs(float(out.sum()) - (0.5 * float(bwd.sum()) + 0.5 * float(c.sum()))) < 1e-12


def populated_state(cells, used, word=4, heads=2, seed=0):
    rng = np.random.default_rng(seed)
    state = mem.MemoryState.initial(cells, word, heads, f64)
    usage = np.zeros(cells)
    usage[rng.choice(cells, size=used, replace=False)] = 0.9
    state.usage = t(usage)
    state.memory = t(rng.normal(size=(cells, word)))
    return state


class TestAdaptiveExtend:
    def test_crossing_doubles_and_cools(self):
        state = populated_state(200, 132)
        assert state.allocated_fraction() == pytest.approx(0.66)
        new, tau = mem.adaptive_extend(state, 1.0)
        assert new.cells == 400 and tau == 0.85
        assert new.link.shape == (400, 400) and new.read_weightings.shape == (2, 400)
        assert torch.equal(new.memory[200:], torch.zeros(200, 4, dtype=f64))
        assert torch.equal(new.usage[200:], torch.zeros(200, dtype=f64))
        new.check()

    def test_below_threshold_unchanged(self):
        state = populated_state(200, 20)
        new, tau = mem.adaptive_extend(state, 1.0)
        assert new is state and tau == 1.0

    def test_fixed_mode(self):
        state = populated_state(200, 20)
        new, tau = mem.adaptive_extend(state, 1.0, mode=mem.FixedExtension(5, 0.65))
        assert new.cells == 1000 and tau == 0.65

    def test_max_extensions(self):
        state = populated_state(10, 9)
        cfg = mem.AdaptiveMemoryConfig(max_extensions=0)
        with pytest.raises(CapacityError):
            mem.adaptive_extend(state, 1.0, cfg)

    def test_reads_over_original_cells_bit_identical(self):
        state = populated_state(50, 40, word=8)
        rng = np.random.default_rng(1)
        w = t(rng.dirichlet(np.ones(50), size=3))
        before = mem.read(state.memory, w)
        new, _ = mem.adaptive_extend(state, 1.0)
        padded = torch.cat([w, torch.zeros(3, 50, dtype=f64)], dim=1)
        assert torch.equal(mem.read(new.memory, padded), before)

    def test_config_validation(self):
        from budgeted_dnc.errors import ConfigError
        for kwargs in ({"alloc_threshold": 1.0}, {"growth_factor": 1}, {"temp_factor": 0.0}):
            with pytest.raises(ConfigError):
                mem.AdaptiveMemoryConfig(**kwargs)
