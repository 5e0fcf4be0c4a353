import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlce.data import SessionDataset
from tlce.errors import DataError, DimensionError, FormatError, ProtocolError
from tlce.memory import (
    RHD,
    TKN,
    ExplicitMemory,
    MemoryEntry,
    compute_prototype,
    load_memory,
    memory_from_bytes,
    memory_to_bytes,
    save_memory,
    score,
    update_memory,
)
from tlce.model import ArchitectureSpec, embed, init_params
from tlce.numerics import Tensor

ARCH = ArchitectureSpec(4, (6,), 5, 3)


def identity_net(dim):
    p = init_params(ArchitectureSpec(dim, (), dim, dim), 0)
    p.theta1[0] = (Tensor(np.eye(dim)), Tensor(np.zeros(dim)))
    p.theta2 = (Tensor(np.eye(dim)), Tensor(np.zeros(dim)))
    return p


def session(sid, classes, n=4, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    train = {c: rng.normal(size=(n, dim)) for c in classes}
    return SessionDataset(sid, list(classes), train, train)


class TestPrototype:
    def test_single_sample(self):
        p = init_params(ARCH, 0)
        x = np.random.default_rng(0).normal(size=(1, 4))
        assert np.array_equal(compute_prototype(p, x), embed(p, x)[0])

    def test_cancellation(self):
        net = identity_net(3)
        assert np.array_equal(compute_prototype(net, [[1.0, -2.0, 0.5], [-1.0, 2.0, -0.5]]), np.zeros(3))

    def test_against_naive_mean(self):
        p = init_params(ARCH, 1)
        x = np.random.default_rng(1).normal(size=(5, 4))
        acc = np.zeros(3)
        for row in x:
            acc = acc + embed(p, row[None, :])[0]
        np.testing.assert_allclose(compute_prototype(p, x), acc / 5, rtol=0, atol=1e-12)

    def test_empty(self):
        with pytest.raises(DataError):
            compute_prototype(init_params(ARCH, 0), np.zeros((0, 4)))


class TestUpdate:
    def test_cardinality(self):
        em = update_memory(ExplicitMemory(), session(1, range(10)), init_params(ARCH, 0), init_params(ARCH, 1))
        assert len(em) == 10
        assert em.class_ids == list(range(10))

    def test_repeat_is_protocol_error(self):
        rhd, tkn = init_params(ARCH, 0), init_params(ARCH, 1)
        em = update_memory(ExplicitMemory(), session(1, [3, 4]), rhd, tkn)
        with pytest.raises(ProtocolError, match="class 3"):
            update_memory(em, session(2, [3, 4]), rhd, tkn)
        assert len(em) == 2

    def test_append_only_bytes(self):
        rhd, tkn = init_params(ARCH, 0), init_params(ARCH, 1)
        em = update_memory(ExplicitMemory(), session(1, [0, 1, 2]), rhd, tkn)
        before = {c: em.entry_bytes(c) for c in em.class_ids}
        update_memory(em, session(2, [5, 6], seed=1), rhd, tkn)
        update_memory(em, session(3, [7, 8], seed=2), rhd, tkn)
        assert all(em.entry_bytes(c) == b for c, b in before.items())
        assert len(em) == 7

    def test_entries_are_read_only(self):
        em = update_memory(ExplicitMemory(), session(1, [0]), init_params(ARCH, 0), init_params(ARCH, 1))
        with pytest.raises(ValueError):
            em.entries[0].proto_rhd[0] = 1.0

    def test_uses_both_networks(self):
        rhd, tkn = init_params(ARCH, 0), init_params(ARCH, 1)
        s = session(1, [0])
        em = update_memory(ExplicitMemory(), s, rhd, tkn)
        assert np.array_equal(em.entries[0].proto_rhd, compute_prototype(rhd, s.train[0]))
        assert np.array_equal(em.entries[0].proto_tkn, compute_prototype(tkn, s.train[0]))


class TestScore:
    def _memory(self, protos):
        em = ExplicitMemory()
        for c, p in enumerate(protos):
            em.add(MemoryEntry(c, 1, np.asarray(p, float), np.asarray(p, float)))
        return em

    def test_self_match(self):
        net = identity_net(3)
        protos = [[0.5, -1.0, 2.0], [1.0, 1.0, 1.0], [-2.0, 0.1, 0.3]]
        s = score(self._memory(protos), RHD, net, protos[0])
        assert s[0] == pytest.approx(1.0, abs=1e-15)
        assert s.argmax() == 0

    def test_orthogonal_prototypes(self):
        net = identity_net(4)
        protos = 3.0 * np.eye(4)
        s = score(self._memory(protos), TKN, net, protos[2])
        assert s[2] == pytest.approx(1.0)
        assert np.all(np.abs(np.delete(s, 2)) < 0.05)

    def test_batched_matches_one_at_a_time(self):
        rng = np.random.default_rng(3)
        net = init_params(ARCH, 3)
        em = update_memory(ExplicitMemory(), session(1, range(5), seed=3), net, net)
        q = rng.normal(size=(7, 4))
        batched = score(em, RHD, net, q)
        for i in range(7):
            single = score(em, RHD, net, q[i])
            np.testing.assert_allclose(batched[i], single, atol=1e-12)
            # one class at a time, straight from the formula
            e = np.tanh(embed(net, q[i : i + 1])[0])
            for j, entry in enumerate(em.entries.values()):
                p = np.tanh(entry.proto_rhd)
                assert batched[i, j] == pytest.approx(e @ p / np.linalg.norm(e) / np.linalg.norm(p), abs=1e-12)

    def test_bounded(self):
        net = init_params(ARCH, 4)
        em = update_memory(ExplicitMemory(), session(1, range(6), seed=4), net, net)
        s = score(em, RHD, net, np.random.default_rng(4).normal(size=(50, 4)) * 30)
        assert np.all((s >= -1) & (s <= 1))

    def test_dimension_mismatch(self):
        net = init_params(ARCH, 0)
        em = update_memory(ExplicitMemory(), session(1, [0]), net, net)
        with pytest.raises(DimensionError):
            score(em, RHD, net, np.ones(5))

    def test_empty_memory(self):
        with pytest.raises(ProtocolError):
            score(ExplicitMemory(), RHD, init_params(ARCH, 0), np.ones(4))


class TestCheckpoint:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 12), st.integers(1, 9), st.integers(0, 2**31))
    def test_round_trip(self, n, dim, seed):
        rng = np.random.default_rng(seed)
        em = ExplicitMemory()
        ids = rng.permutation(1000)[:n]
        for k, c in enumerate(ids):
            em.add(MemoryEntry(int(c), 1 + k // 3, rng.normal(size=dim), rng.normal(size=dim)))
        raw = memory_to_bytes(em)
        back = memory_from_bytes(raw)
        assert memory_to_bytes(back) == raw
        assert back.class_ids == em.class_ids

    def test_file_round_trip(self, tmp_path):
        em = update_memory(ExplicitMemory(), session(1, [2, 9]), init_params(ARCH, 0), init_params(ARCH, 1))
        save_memory(em, tmp_path / "m.ckpt")
        assert memory_to_bytes(load_memory(tmp_path / "m.ckpt")) == memory_to_bytes(em)

    def test_rejects_parameter_checkpoint(self):
        from tlce.model import params_to_bytes

        with pytest.raises(FormatError, match="expected memory"):
            memory_from_bytes(params_to_bytes(init_params(ARCH, 0)))

    def test_truncation(self):
        em = update_memory(ExplicitMemory(), session(1, [0, 1]), init_params(ARCH, 0), init_params(ARCH, 1))
        raw = memory_to_bytes(em)
        with pytest.raises(FormatError):
            memory_from_bytes(raw[:-1])
