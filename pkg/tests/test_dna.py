from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphdna import dna
from graphdna.bloom import BloomFilter
from graphdna.dna import DnaConfig, DnaMatrix, encode
from graphdna.errors import InputError
from graphdna.graph import SparseGraph, erdos_renyi


def bfs_ball(g, src, d):
    seen = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        if seen[u] == d:
            continue
        for v in g.neighbors(u):
            v = int(v)
            if v not in seen:
                seen[v] = seen[u] + 1
                q.append(v)
    return set(seen)


def reference_encode(g, cfg):
    """One BloomFilter object per node, rounds double-buffered, neighbors ascending."""
    fam = cfg.family
    prev = []
    for i in range(g.n):
        f = BloomFilter(cfg.c, fam)
        f.add(i)
        prev.append(f)
    for _ in range(cfg.d):
        cur = []
        for i in range(g.n):
            f = prev[i].copy()
            for j in sorted(int(x) for x in g.neighbors(i)):
                if f.estimate_size() > cfg.theta:
                    break
                f.union(prev[j])
            cur.append(f)
        prev = cur
    return np.stack([f.b for f in prev])


def path_graph(n):
    return SparseGraph.from_edges(np.arange(n - 1), np.arange(1, n), n=n)


class TestEncode:
    def test_depth_zero(self):
        g = erdos_renyi(100, 0.05, np.random.default_rng(0))
        b = encode(g, DnaConfig(c=128, k=3, d=0))
        fam = b.family
        for i in range(g.n):
            expected = np.zeros(128, bool)
            expected[fam(i)] = True
            assert np.array_equal(b.filter(i).bits(), expected)
            assert b.popcounts()[i] <= 3

    def test_path(self):
        b = encode(path_graph(3), DnaConfig(c=64, k=2, d=1))
        assert all(b.contains(0, x) for x in (0, 1))
        assert all(b.contains(1, x) for x in (0, 1, 2))

    @pytest.mark.parametrize("seed", range(10))
    def test_bfs_oracle(self, seed):
        rng = np.random.default_rng(seed)
        g = erdos_renyi(int(rng.integers(20, 120)), 0.05, rng)
        for d in range(5):
            b = encode(g, DnaConfig(c=256, k=3, d=d, master_seed=seed))
            for i in range(g.n):
                ball = np.fromiter(bfs_ball(g, i, d), dtype=np.int64)
                assert b.contains(i, ball).all()

    @pytest.mark.parametrize("theta", [np.inf, 3.0, 12.5])
    @pytest.mark.parametrize("seed", range(4))
    def test_matches_reference(self, theta, seed):
        g = erdos_renyi(80, 0.06, np.random.default_rng(seed))
        cfg = DnaConfig(c=96, k=2, d=3, theta=theta, master_seed=seed)
        assert np.array_equal(encode(g, cfg).rows, reference_encode(g, cfg))

    def test_theta_caps_growth(self):
        g = erdos_renyi(300, 0.05, np.random.default_rng(1))
        free = encode(g, DnaConfig(c=512, k=3, d=3))
        capped = encode(g, DnaConfig(c=512, k=3, d=3, theta=10))
        assert capped.popcounts().mean() < free.popcounts().mean()
        # capped rows are subsets of the free rows
        assert not np.any(capped.rows & ~free.rows)

    def test_deterministic(self):
        g = erdos_renyi(500, 0.01, np.random.default_rng(2))
        cfg = DnaConfig(c=200, k=4, d=3, master_seed=11)
        assert encode(g, cfg) == encode(g, cfg)

    def test_seed_matters(self):
        g = erdos_renyi(100, 0.05, np.random.default_rng(2))
        a = encode(g, DnaConfig(c=200, k=4, d=1, master_seed=1))
        b = encode(g, DnaConfig(c=200, k=4, d=1, master_seed=2))
        assert not np.array_equal(a.rows, b.rows)

    def test_isolated_nodes(self):
        deep = encode(SparseGraph.empty(5), DnaConfig(c=64, k=2, d=4))
        flat = encode(SparseGraph.empty(5), DnaConfig(c=64, k=2, d=0))
        assert np.array_equal(deep.rows, flat.rows)

    @pytest.mark.parametrize("kw", [dict(d=-1), dict(theta=0.0), dict(c=0), dict(k=0)])
    def test_bad_config(self, kw):
        with pytest.raises(ValueError):
            DnaConfig(**kw)

    def test_round_callback(self):
        seen = []
        encode(path_graph(5), DnaConfig(c=32, k=1, d=3), on_round=lambda s, rows: seen.append(s))
        assert seen == [1, 2, 3]


class TestCommonBits:
    def test_self(self):
        b = encode(erdos_renyi(60, 0.1, np.random.default_rng(0)), DnaConfig(c=128, k=3, d=2))
        for i in range(10):
            assert b.common_bits(i, i) == b.popcounts()[i]

    def test_six_hop_path_meets_at_three(self):
        g = path_graph(7)
        for d in (0, 1, 2):
            b = encode(g, DnaConfig(c=4096, k=1, d=d, master_seed=5))
            assert b.common_bits(0, 6) == 0
        b3 = encode(g, DnaConfig(c=4096, k=1, d=3, master_seed=5))
        assert b3.common_bits(0, 6) >= 1
        assert b3.contains(0, 3) and b3.contains(6, 3)

    def test_isolated_pair_mostly_disjoint(self):
        shared = [encode(SparseGraph.empty(2), DnaConfig(c=1024, k=2, d=0, master_seed=s)).common_bits(0, 1)
                  for s in range(200)]
        assert np.mean(shared) < 0.05

    def test_out_of_range(self):
        b = encode(path_graph(3), DnaConfig(c=32, k=1, d=1))
        with pytest.raises(IndexError):
            b.common_bits(0, 3)

    @pytest.mark.parametrize("seed", range(5))
    def test_shared_ancestor(self, seed):
        g = erdos_renyi(80, 0.04, np.random.default_rng(seed))
        d = 2
        b = encode(g, DnaConfig(c=256, k=2, d=d, master_seed=seed))
        balls = [bfs_ball(g, i, d) for i in range(g.n)]
        for i in range(0, g.n, 7):
            for j in range(g.n):
                if balls[i] & balls[j]:
                    assert b.common_bits(i, j) >= 1


class TestIO:
    def test_round_trip(self, tmp_path):
        g = erdos_renyi(70, 0.05, np.random.default_rng(3))
        for theta in (np.inf, 7.5):
            b = encode(g, DnaConfig(c=100, k=3, d=2, theta=theta, master_seed=2**63 + 1))
            dna.save(b, tmp_path / "b.dna")
            back = dna.load(tmp_path / "b.dna")
            assert back == b
            assert back.config == b.config

    def test_header(self, tmp_path):
        b = encode(path_graph(4), DnaConfig(c=16, k=2, d=1, master_seed=3))
        b.save(tmp_path / "b.dna")
        head = (tmp_path / "b.dna").read_text().splitlines()[0]
        assert head == "DNA1 4 16 2 1 inf 3"

    def test_empty_file(self, tmp_path):
        (tmp_path / "e").write_text("")
        with pytest.raises(InputError):
            dna.load(tmp_path / "e")

    def test_wrong_width(self, tmp_path):
        b = encode(path_graph(4), DnaConfig(c=16, k=2, d=1))
        b.save(tmp_path / "b.dna")
        text = (tmp_path / "b.dna").read_text().replace("DNA1 4 16", "DNA1 4 24", 1)
        (tmp_path / "b.dna").write_text(text)
        with pytest.raises(InputError):
            dna.load(tmp_path / "b.dna")

    @pytest.mark.parametrize("mutate", [
        lambda t: t.replace("DNA1", "DNA9", 1),
        lambda t: "\n".join(t.splitlines()[:-1]) + "\n",
        lambda t: t[:-3] + "zz\n",
    ])
    def test_corrupt(self, tmp_path, mutate):
        b = encode(path_graph(4), DnaConfig(c=16, k=2, d=1))
        b.save(tmp_path / "b.dna")
        (tmp_path / "b.dna").write_text(mutate((tmp_path / "b.dna").read_text()))
        with pytest.raises(InputError):
            dna.load(tmp_path / "b.dna")

    def test_triplets(self, tmp_path):
        b = encode(path_graph(5), DnaConfig(c=32, k=2, d=1))
        dna.save_triplets(b, tmp_path / "t.txt")
        pairs = np.loadtxt(tmp_path / "t.txt", dtype=np.int64, ndmin=2)
        r, c = b.triplets()
        assert np.array_equal(pairs[:, 0], r) and np.array_equal(pairs[:, 1], c)
        assert len(r) == b.nnz
        assert np.array_equal(b.to_csr().toarray().astype(bool), b.bits())


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 60), p=st.floats(0.0, 0.3), seed=st.integers(0, 10_000),
       theta=st.sampled_from([np.inf, 2.0, 6.0]))
def test_depth_monotone(n, p, seed, theta):
    g = erdos_renyi(n, p, np.random.default_rng(seed))
    prev = None
    for d in range(4):
        rows = encode(g, DnaConfig(c=64, k=2, d=d, theta=theta, master_seed=seed)).rows
        if prev is not None:
            assert not np.any(prev & ~rows)
        prev = rows
