import datetime as dt
import itertools
from collections import deque

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kfnet.corpus import KeyFigureSet
from kfnet.errors import TensorInvariantError, ValidationError
from kfnet.tensor import (
    CooccurrenceTensor, assemble_tensor, assign_week, betweenness_centrality, build_occurrence_matrix,
    cooccurrence_slice, correct_tensor, degree_centrality, degree_correct, drop_figures, load_tensor,
    save_tensor, tensor_from_mentions, week_range, write_centrality_csv,
)

EPOCH = dt.date(2018, 1, 1)


def figs(n):
    return KeyFigureSet(tuple("ABCDEFGHIJKLMNOPQRSTUVWXYZ"[:n]))


# ---------------------------------------------------------------- weeks

@pytest.mark.parametrize("date, week", [("2018-01-01", 1), ("2018-01-07", 1), ("2018-01-08", 2), ("2018-06-17", 24)])
def test_assign_week(date, week):
    assert assign_week(dt.date.fromisoformat(date), EPOCH).t == week


def test_assign_week_before_epoch():
    with pytest.raises(ValidationError):
        assign_week(dt.date(2017, 12, 31), EPOCH)


def test_week_range_spans():
    weeks = week_range(EPOCH, 24)
    assert weeks[0].start_date == EPOCH and weeks[0].end_date == dt.date(2018, 1, 7)
    assert weeks[-1].start_date == dt.date(2018, 6, 11) and weeks[-1].end_date == dt.date(2018, 6, 17)
    assert all((b.start_date - a.start_date).days == 7 for a, b in zip(weeks, weeks[1:]))
    assert weeks[4].label == "week_5"


# ---------------------------------------------------------------- occurrence and slices

def test_occurrence_column():
    A = build_occurrence_matrix([("x", {"A", "C"})], figs(3))
    assert A.matrix[:, 0].tolist() == [1, 0, 1]


def test_occurrence_empty_week():
    A = build_occurrence_matrix([], figs(3))
    assert A.matrix.shape == (3, 0)
    assert cooccurrence_slice(A).tolist() == [[0] * 3] * 3


def test_slice_single_article():
    Y = cooccurrence_slice(build_occurrence_matrix([("x", {"A", "B", "C"})], figs(3)))
    assert Y.tolist() == [[0, 1, 1], [1, 0, 1], [1, 1, 0]]


def test_slice_additive_over_articles():
    Y = cooccurrence_slice(build_occurrence_matrix([("x", {"A", "B"}), ("y", {"A", "B"})], figs(2)))
    assert Y[0, 1] == 2


def test_slice_diagonal_flag():
    A = np.array([[1, 1], [1, 0]])
    assert cooccurrence_slice(A, zero_diagonal=False).tolist() == [[2, 1], [1, 1]]


def test_slice_matches_pair_count_oracle():
    rng = np.random.default_rng(11)
    A = rng.integers(0, 2, size=(6, 10))
    Y = cooccurrence_slice(A)
    oracle = np.zeros((6, 6), dtype=int)
    for a in range(10):
        for i in range(6):
            for j in range(6):
                if i != j and A[i, a] and A[j, a]:
                    oracle[i, j] += 1
    assert np.array_equal(Y, oracle)


# ---------------------------------------------------------------- assembly

def test_assemble_24_weeks():
    T = assemble_tensor([np.zeros((2, 2), int)] * 24, figs(2), week_range(EPOCH, 24))
    assert T.T == 24 and T.N == 2


def test_assemble_reports_asymmetry_location():
    bad = np.zeros((3, 3), int)
    bad[1, 2] = 1
    slices = [np.zeros((3, 3), int), bad]
    with pytest.raises(TensorInvariantError) as info:
        assemble_tensor(slices, figs(3), week_range(EPOCH, 2))
    assert (info.value.t, info.value.i, info.value.j) == (2, 1, 2)


def test_assemble_rejects_negative_and_diagonal():
    neg = -np.eye(2, dtype=int)[::-1]
    with pytest.raises(TensorInvariantError):
        assemble_tensor([neg], figs(2), week_range(EPOCH, 1))
    with pytest.raises(TensorInvariantError):
        assemble_tensor([np.eye(2, dtype=int)], figs(2), week_range(EPOCH, 1))


def test_assemble_checks_article_bound():
    Y = np.array([[0, 3], [3, 0]])
    with pytest.raises(TensorInvariantError):
        assemble_tensor([Y], figs(2), week_range(EPOCH, 1), article_counts=[2])


def test_tensor_from_mentions_ignores_outside_weeks():
    mentions = [("a", dt.date(2018, 1, 2), {"A", "B"}), ("b", dt.date(2018, 1, 9), {"A", "B", "C"}),
                ("c", dt.date(2018, 3, 1), {"A", "B"})]
    T = tensor_from_mentions(mentions, figs(3), EPOCH, 2)
    assert T.Y[0, 0, 1] == 1 and T.Y[0, 0, 2] == 0
    assert T.Y[1].sum() == 6


# ---------------------------------------------------------------- drop

def _random_tensor(seed, N=6, T=3):
    rng = np.random.default_rng(seed)
    slices = []
    for _ in range(T):
        A = rng.integers(0, 2, size=(N, 5))
        slices.append(cooccurrence_slice(A))
    return assemble_tensor(slices, figs(N), week_range(EPOCH, T))


def test_drop_nothing_is_identity():
    T = _random_tensor(1)
    D = drop_figures(T, [])
    assert np.array_equal(D.Y, T.Y) and D.figures == T.figures


def test_drop_all_but_two_keeps_subblocks():
    T = _random_tensor(2)
    D = drop_figures(T, ["A", "C", "D", "F"])
    assert D.figures.names == ("B", "E")
    assert np.array_equal(D.Y, T.Y[:, [1, 4]][:, :, [1, 4]])


def test_drop_unknown_rejected():
    with pytest.raises(ValidationError):
        drop_figures(_random_tensor(3), ["Nobody"])


# ---------------------------------------------------------------- degree correction

def test_degree_correct_zero():
    B, Om = degree_correct(np.zeros((3, 3)))
    assert not B.any() and not Om.any()


def test_degree_correct_hand_example():
    B, Om = degree_correct(np.array([[0, 2], [2, 0]]))
    assert np.allclose(Om, [[1, 1], [1, 1]], atol=1e-12)
    assert np.allclose(B, [[-1, 1], [1, -1]], atol=1e-12)


def test_degree_correct_rank_one_removed():
    u = np.array([1.0, 2.0, -1.0, 0.5])
    Y = 3.0 * np.outer(u, u)
    B, _ = degree_correct(Y)
    assert np.abs(B).max() <= 1e-9


def test_degree_correct_keeps_negative_sign():
    Y = -5.0 * np.outer([1.0, 1.0], [1.0, 1.0]) / 2 + np.diag([0.1, 0.0])
    _, Om = degree_correct(Y)
    assert np.linalg.eigvalsh(Om).min() < -2


def test_degree_correct_tie_prefers_positive():
    # eigenvalues +1 and -1
    _, Om = degree_correct(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.isclose(np.linalg.eigvalsh(Om).max(), 1.0)


def test_degree_correct_repeated_positive_warns():
    with pytest.warns(RuntimeWarning):
        degree_correct(np.eye(3))


def test_degree_correct_requires_symmetry():
    with pytest.raises(ValidationError):
        degree_correct(np.array([[0, 1], [2, 0]]))


sym_int = st.integers(2, 12).flatmap(
    lambda n: arrays(np.int64, (n, n), elements=st.integers(0, 9)).map(lambda a: np.triu(a, 1) + np.triu(a, 1).T))


def _principal(w):
    top = np.abs(w).max()
    return max(x for x in w if abs(x) >= top - 1e-9) if top > 0 else 0.0


@pytest.mark.filterwarnings("ignore:repeated principal eigenvalue")
@given(sym_int)
def test_degree_correct_invariants(Y):
    B, Om = degree_correct(Y)
    assert np.abs(Y - B - Om).max() <= 1e-9
    assert np.allclose(B, B.T)
    assert np.linalg.matrix_rank(Om, tol=1e-8 * max(1.0, np.abs(Y).max())) <= 1
    assert abs(_principal(np.linalg.eigvalsh(Om)) - _principal(np.linalg.eigvalsh(Y))) <= 1e-9


def test_correct_tensor_reconstructs():
    T = _random_tensor(4, N=8, T=5)
    C = correct_tensor(T)
    assert np.abs(T.Y - C.B - C.Omega).max() <= 1e-9
    assert C.source is T


# ---------------------------------------------------------------- properties

@given(st.lists(st.sets(st.sampled_from("ABCDE")), max_size=8), st.lists(st.sets(st.sampled_from("ABCDE")), max_size=8))
def test_tensor_linear_in_corpus(c1, c2):
    d = dt.date(2018, 1, 3)
    m1 = [(f"x{i}", d, s) for i, s in enumerate(c1)]
    m2 = [(f"y{i}", d + dt.timedelta(days=7 * (i % 2)), s) for i, s in enumerate(c2)]
    f = figs(5)
    T1 = tensor_from_mentions(m1, f, EPOCH, 2)
    T2 = tensor_from_mentions(m2, f, EPOCH, 2)
    T12 = tensor_from_mentions(m1 + m2, f, EPOCH, 2)
    assert np.array_equal(T12.Y, T1.Y + T2.Y)


@given(st.permutations(range(5)), st.lists(st.sets(st.sampled_from("ABCDE")), max_size=8))
def test_permutation_equivariance(perm, docs):
    d = dt.date(2018, 1, 3)
    mentions = [(str(i), d, s) for i, s in enumerate(docs)]
    base = figs(5)
    permuted = KeyFigureSet(tuple(base.names[p] for p in perm))
    Y = tensor_from_mentions(mentions, base, EPOCH, 1).Y[0]
    Yp = tensor_from_mentions(mentions, permuted, EPOCH, 1).Y[0]
    P = np.eye(5, dtype=int)[list(perm)]
    assert np.array_equal(Yp, P @ Y @ P.T)


# ---------------------------------------------------------------- centralities

def _star():
    Y = np.zeros((1, 5, 5), int)
    Y[0, 0, 1:] = Y[0, 1:, 0] = 1
    return Y


def test_star_centralities():
    Y = _star()
    assert degree_centrality(Y)[:, 0].tolist() == [4, 1, 1, 1, 1]
    assert betweenness_centrality(Y)[:, 0].tolist() == [6, 0, 0, 0, 0]


def test_empty_week_centralities():
    Y = np.zeros((2, 4, 4), int)
    assert not degree_centrality(Y).any() and not betweenness_centrality(Y).any()


def test_degree_is_weighted():
    Y = np.array([[[0, 3], [3, 0]]])
    assert degree_centrality(Y)[:, 0].tolist() == [3, 3]


def _bfs(adj, s):
    n = len(adj)
    dist, sigma = [-1] * n, [0] * n
    dist[s], sigma[s] = 0, 1
    q = deque([s])
    while q:
        v = q.popleft()
        for w in range(n):
            if adj[v][w]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    q.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
    return dist, sigma


def _betweenness_oracle(adj):
    n = len(adj)
    info = [_bfs(adj, s) for s in range(n)]
    out = [0.0] * n
    for s, t in itertools.combinations(range(n), 2):
        d_st, n_st = info[s][0][t], info[s][1][t]
        if d_st <= 0:
            continue
        for v in range(n):
            if v in (s, t):
                continue
            d_sv, d_vt = info[s][0][v], info[v][0][t]
            if d_sv > 0 and d_vt > 0 and d_sv + d_vt == d_st:
                out[v] += info[s][1][v] * info[v][1][t] / n_st
    return out


def test_betweenness_matches_path_enumeration():
    rng = np.random.default_rng(8)
    A = np.triu(rng.integers(0, 3, size=(8, 8)) * (rng.random((8, 8)) < 0.35), 1)
    Y = A + A.T
    got = betweenness_centrality(Y[None])[:, 0]
    assert np.allclose(got, _betweenness_oracle((Y > 0).tolist()))


# ---------------------------------------------------------------- storage

def test_tensor_roundtrip(tmp_path):
    T = _random_tensor(5, N=4, T=3)
    C = correct_tensor(T)
    save_tensor(tmp_path / "t", T, C)
    T2, C2 = load_tensor(tmp_path / "t")
    assert np.array_equal(T2.Y, T.Y) and T2.figures == T.figures and T2.weeks == T.weeks
    assert np.array_equal(C2.B, C.B)


def test_corrected_only_roundtrip(tmp_path):
    from kfnet.tensor import CorrectedTensor
    B = np.random.default_rng(0).normal(size=(2, 3, 3))
    B = B + B.transpose(0, 2, 1)
    C = CorrectedTensor(B, None, figs(3), week_range(EPOCH, 2))
    save_tensor(tmp_path / "c", corrected=C)
    T2, C2 = load_tensor(tmp_path / "c")
    assert T2 is None and np.array_equal(C2.B, B)


def test_centrality_csv_layout(tmp_path):
    path = tmp_path / "deg.csv"
    write_centrality_csv(path, degree_centrality(_star()), figs(5), week_range(EPOCH, 1))
    lines = path.read_text().splitlines()
    assert lines[0] == "figure,week_1"
    assert lines[1] == "A,4.0"
