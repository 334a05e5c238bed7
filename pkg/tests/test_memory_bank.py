from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchae import (
    ConfigError,
    DataError,
    FeatureMap,
    InputError,
    MemoryBank,
    coreset_subsample,
    load_bank,
    nn_distance,
    nn_distances,
    save_bank,
    score_image,
)

DIGEST = bytes(32)


def make_bank(vectors, grid=(2, 2), n_source=1):
    return MemoryBank(
        vectors=np.asarray(vectors, dtype=np.float32),
        config_digest=DIGEST,
        grid=grid,
        n_source_images=n_source,
    )


def brute_force_nn(queries, rows):
    """Independent O(N*Q) oracle: one python-level scan per query."""
    dists = np.empty(queries.shape[0], dtype=np.float32)
    idx = np.empty(queries.shape[0], dtype=np.int64)
    for i in range(queries.shape[0]):
        d = np.sqrt(((queries[i][None, :] - rows) ** 2).sum(axis=-1))
        idx[i] = int(d.argmin())
        dists[i] = d[idx[i]]
    return dists, idx


def test_member_query_scores_zero(rng):
    rows = rng.random((10, 4), dtype=np.float32)
    bank = make_bank(rows)
    assert nn_distance(rows[3], bank) == 0.0


def test_hand_evaluated_distance():
    bank = make_bank([[0.0, 0.0], [1.0, 1.0]])
    value = nn_distance(np.array([0.9, 0.9], dtype=np.float32), bank)
    assert value == pytest.approx(np.sqrt(0.02), rel=1e-6)
    # cross-check against the scan oracle
    d, _ = brute_force_nn(np.array([[0.9, 0.9]], dtype=np.float32), bank.vectors)
    assert value == float(d[0])


def test_nn_matches_bruteforce_exactly():
    rng = np.random.default_rng(0)
    rows = rng.random((5000, 64), dtype=np.float32)
    queries = rng.random((1000, 64), dtype=np.float32)
    bank = make_bank(rows)
    dists, idx = nn_distances(queries, bank)
    expected_d, expected_i = brute_force_nn(queries, rows)
    assert np.array_equal(dists, expected_d)
    assert np.array_equal(idx, expected_i)


def test_dim_mismatch_rejected(rng):
    bank = make_bank(rng.random((5, 4), dtype=np.float32))
    with pytest.raises(InputError):
        nn_distance(np.zeros(3, dtype=np.float32), bank)


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_nn_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    bank = make_bank(rng.random((20, 6), dtype=np.float32))
    q1 = rng.random(6).astype(np.float32)
    q2 = rng.random(6).astype(np.float32)
    lhs = abs(nn_distance(q1, bank) - nn_distance(q2, bank))
    rhs = float(np.sqrt(((q1 - q2) ** 2).sum()))
    assert lhs <= rhs + 1e-6


def test_zero_distance_iff_member(rng):
    rows = rng.random((30, 5), dtype=np.float32)
    bank = make_bank(rows)
    for i in range(0, 30, 7):
        assert nn_distance(rows[i], bank) == 0.0
    off = rows[0] + np.float32(1e-3)
    assert nn_distance(off, bank) > 0.0


def features_from(data, patch_px=(8, 8)):
    data = np.asarray(data, dtype=np.float32)
    return FeatureMap(data=data, grid=data.shape[:2], patch_px=patch_px)


def test_score_image_members_zero(rng):
    vecs = rng.random((2, 2, 4), dtype=np.float32)
    bank = make_bank(vecs.reshape(4, 4))
    smap = score_image(features_from(vecs), bank)
    assert np.array_equal(smap.scores, np.zeros((2, 2), dtype=np.float32))
    assert smap.image_score == 0.0


def test_image_score_is_max_cell(rng):
    vecs = rng.random((3, 3, 4), dtype=np.float32)
    bank = make_bank(vecs.reshape(9, 4))
    bumped = vecs.copy()
    bumped[1, 2] += 0.5
    smap = score_image(features_from(bumped), bank)
    assert smap.scores[1, 2] == smap.scores.max()
    assert smap.image_score == float(smap.scores.max())
    assert smap.scores[1, 2] > 0.0


def test_score_image_permutation_invariant(rng):
    vecs = rng.random((2, 2, 4), dtype=np.float32) + 0.5
    rows = rng.random((12, 4), dtype=np.float32)
    forward = score_image(features_from(vecs), make_bank(rows))
    backward = score_image(features_from(vecs), make_bank(rows[::-1].copy()))
    assert np.array_equal(forward.scores, backward.scores)
    assert forward.image_score == backward.image_score


def test_reweight_singleton_bank_is_noop(rng):
    bank = make_bank(rng.random((1, 4), dtype=np.float32))
    vecs = rng.random((2, 2, 4), dtype=np.float32)
    off = score_image(features_from(vecs), bank, reweight=False)
    on = score_image(features_from(vecs), bank, reweight=True, neighborhood=3)
    assert on.image_score == off.image_score


def test_reweight_neighborhood_one_is_noop(rng):
    bank = make_bank(rng.random((20, 4), dtype=np.float32))
    vecs = rng.random((2, 2, 4), dtype=np.float32) + 0.5
    off = score_image(features_from(vecs), bank, reweight=False)
    on = score_image(features_from(vecs), bank, reweight=True, neighborhood=1)
    assert on.image_score == off.image_score


def test_reweight_shrinks_max_score(rng):
    rows = rng.random((50, 4), dtype=np.float32)
    bank = make_bank(rows)
    vecs = rng.random((2, 2, 4), dtype=np.float32) + 1.0
    off = score_image(features_from(vecs), bank, reweight=False)
    on = score_image(features_from(vecs), bank, reweight=True, neighborhood=3)
    assert 0.0 < on.image_score < off.image_score
    # the per-cell grid keeps raw distances either way
    assert np.array_equal(on.scores, off.scores)


def test_coreset_fraction_one_is_identity(rng):
    bank = make_bank(rng.random((7, 3), dtype=np.float32))
    sub = coreset_subsample(bank, 1.0, seed=0)
    assert np.array_equal(np.sort(sub.vectors, axis=0), np.sort(bank.vectors, axis=0))


def test_coreset_hand_case():
    # greedy farthest-point from (0): picks (1.0) next, drops (0.5)
    bank = make_bank([[0.0], [0.5], [1.0]])
    sub = coreset_subsample(bank, 2.0 / 3.0, start_index=0)
    kept = sorted(float(v) for v in sub.vectors.ravel())
    assert kept == [0.0, 1.0]


@pytest.mark.parametrize("fraction", [0.25, 0.5, 0.75])
def test_coreset_subset_monotonicity(rng, fraction):
    rows = rng.random((40, 6), dtype=np.float32)
    bank = make_bank(rows)
    sub = coreset_subsample(bank, fraction, seed=3)
    assert sub.size == max(1, round(fraction * 40))
    # removing rows can never lower a nearest-neighbor distance
    queries = rng.random((25, 6), dtype=np.float32)
    full_d, _ = nn_distances(queries, bank)
    sub_d, _ = nn_distances(queries, sub)
    assert (sub_d >= full_d - 1e-7).all()
    # every kept row is an original row
    orig = {tuple(r) for r in rows.tolist()}
    for row in sub.vectors.tolist():
        assert tuple(row) in orig


def test_coreset_deterministic(rng):
    bank = make_bank(rng.random((30, 4), dtype=np.float32))
    a = coreset_subsample(bank, 0.5, seed=11)
    b = coreset_subsample(bank, 0.5, seed=11)
    assert np.array_equal(a.vectors, b.vectors)


def test_coreset_bad_fraction(rng):
    bank = make_bank(rng.random((5, 2), dtype=np.float32))
    with pytest.raises(ConfigError):
        coreset_subsample(bank, 0.0)
    with pytest.raises(ConfigError):
        coreset_subsample(bank, 1.5)


def test_bank_roundtrip_and_bytes(tmp_path, rng):
    bank = MemoryBank(
        vectors=rng.random((17, 5), dtype=np.float32),
        config_digest=bytes(range(32)),
        grid=(4, 4),
        n_source_images=3,
    )
    path_a = tmp_path / "a.pae"
    path_b = tmp_path / "b.pae"
    save_bank(path_a, bank)
    save_bank(path_b, bank)
    assert path_a.read_bytes() == path_b.read_bytes()

    loaded = load_bank(path_a)
    assert np.array_equal(loaded.vectors, bank.vectors)
    assert loaded.config_digest == bank.config_digest
    assert loaded.grid == bank.grid
    assert loaded.n_source_images == bank.n_source_images


def test_bank_bad_magic(tmp_path, rng):
    bank = make_bank(rng.random((3, 2), dtype=np.float32))
    path = tmp_path / "bank.pae"
    save_bank(path, bank)
    raw = bytearray(path.read_bytes())
    raw[:8] = b"NOTABANK"
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="magic"):
        load_bank(path)


def test_bank_truncated_payload(tmp_path, rng):
    bank = make_bank(rng.random((3, 2), dtype=np.float32))
    path = tmp_path / "bank.pae"
    save_bank(path, bank)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(DataError):
        load_bank(path)


def test_bank_rejects_nonfinite():
    with pytest.raises(InputError):
        make_bank([[np.nan, 0.0]])
