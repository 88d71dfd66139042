import numpy as np
import pytest

from filtchan.featuremap import FeatureIndex, apply_bank
from filtchan.filterbank import make_checkerboards, make_uniform
from filtchan.forest import (BoostedForest, Leaf, SplitNode, Tree, boost,
                             calibrate_cascade, dequantize_threshold, filter_usage,
                             fit_tree, load_model, quantize_matrix, reduce_bank,
                             save_model, score_map, score_samples, score_window,
                             spatial_influence)

from oracles import brute_force_split


def rng(seed=0):
    return np.random.default_rng(seed)


def uniform_weights(n):
    return np.full(n, 1.0 / n)


def test_separable_stump_threshold_and_zero_error():
    r = rng(0)
    neg = r.uniform(0.0, 0.4, size=60)
    pos = r.uniform(0.6, 1.0, size=60)
    x = np.concatenate([neg, pos])[:, None]
    y = np.concatenate([-np.ones(60), np.ones(60)])
    data = quantize_matrix(x, y)
    tree = fit_tree(data, uniform_weights(120), depth=1)
    root = tree.root
    assert isinstance(root, SplitNode)
    assert neg.max() < root.threshold <= pos.min()
    pred = np.where(x[:, 0] < root.threshold, root.left.value, root.right.value)
    assert np.all(pred == y)


def test_xor_needs_depth_two():
    corners = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])
    x = np.repeat(corners, 50, axis=0)
    y = np.where(x[:, 0] * x[:, 1] > 0, 1.0, -1.0)
    data = quantize_matrix(x, y)
    w = uniform_weights(len(y))
    t1 = fit_tree(data, w, depth=1)
    t2 = fit_tree(data, w, depth=2)
    from filtchan.forest import apply_tree_bins
    err1 = float(np.mean(np.sign(apply_tree_bins(t1, data.bins)) != y))
    err2 = float(np.mean(np.sign(apply_tree_bins(t2, data.bins)) != y))
    assert err2 == 0.0
    assert err1 > 0.2


def test_root_split_matches_brute_force_oracle():
    for seed in range(6):
        r = rng(100 + seed)
        x = r.normal(size=(200, 50))
        y = np.where(r.uniform(size=200) < 0.5, 1.0, -1.0)
        # plant weak signal so splits are non-trivial
        x[:, seed % 50] += 0.8 * y
        w = r.uniform(0.5, 1.5, size=200)
        w /= w.sum()
        data = quantize_matrix(x, y)
        tree = fit_tree(data, w, depth=1)
        root = tree.root
        want_err, want_f, want_t = brute_force_split(x, y, w)
        assert root.column == want_f
        assert root.bin_threshold == want_t
        lo, hi = float(data.lo[want_f]), float(data.hi[want_f])
        assert root.threshold == dequantize_threshold(want_t, lo, hi)


def separable_blobs(n=300, seed=2):
    r = rng(seed)
    pos = r.normal([1.5, 1.0], 0.45, size=(n // 2, 2))
    neg = r.normal([-1.0, -1.2], 0.45, size=(n // 2, 2))
    x = np.concatenate([pos, neg])
    y = np.concatenate([np.ones(n // 2), -np.ones(n // 2)])
    return x, y


def test_discrete_boost_converges_within_50_trees():
    x, y = separable_blobs()
    data = quantize_matrix(x, y)
    forest = boost(data, n_trees=50, depth=2, variant="discrete")
    assert forest.history.train_errors[-1] == 0.0
    assert all(e < 0.5 for e in forest.history.weak_errors)


@pytest.mark.parametrize("variant", ["discrete", "real"])
def test_exponential_loss_non_increasing(variant):
    r = rng(3)
    x = r.normal(size=(240, 8))
    y = np.where(x[:, 0] + 0.5 * x[:, 3] + 0.3 * r.normal(size=240) > 0, 1.0, -1.0)
    data = quantize_matrix(x, y)
    forest = boost(data, n_trees=40, depth=2, variant=variant)
    losses = forest.history.exp_losses
    assert len(losses) > 5
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_single_tree_forest_score_is_weighted_output():
    x, y = separable_blobs(seed=4)
    data = quantize_matrix(x, y)
    forest = boost(data, n_trees=1, depth=2)
    assert len(forest.trees) == 1
    from filtchan.forest import apply_tree_features
    want = forest.tree_weights[0] * apply_tree_features(forest.trees[0], x)
    assert np.allclose(score_samples(forest, x), want)


def test_realboost_leaves_are_finite_reals():
    x, y = separable_blobs(seed=5)
    data = quantize_matrix(x, y)
    forest = boost(data, n_trees=10, depth=2, variant="real")
    assert np.all(forest.tree_weights == 1.0)
    for tree in forest.trees:
        for node in tree.split_nodes():
            for child in (node.left, node.right):
                if isinstance(child, Leaf):
                    assert np.isfinite(child.value)


def test_fit_tree_requires_both_classes():
    x = rng(6).normal(size=(50, 3))
    y = np.ones(50)
    data = quantize_matrix(x, y)
    with pytest.raises(ValueError, match="both classes"):
        fit_tree(data, uniform_weights(50), depth=2)


def test_monotone_bin_preserving_transform_keeps_structure():
    x, y = separable_blobs(seed=7)
    data_a = quantize_matrix(x, y)
    data_b = quantize_matrix(3.0 * x + 11.0, y)  # affine map preserves bins
    w = uniform_weights(len(y))
    ta = fit_tree(data_a, w, depth=3)
    tb = fit_tree(data_b, w, depth=3)

    def structure(node):
        if isinstance(node, Leaf):
            return ("leaf", node.value)
        return ("split", node.column, node.bin_threshold,
                structure(node.left), structure(node.right))

    assert structure(ta.root) == structure(tb.root)


# --- forests over real filter banks -----------------------------------------

def trained_bank_forest(seed=8, n_trees=12):
    """Small forest over checkerboard features of synthetic window stacks."""
    from filtchan.featuremap import window_features
    bank = make_checkerboards(2, 2)
    window = (24, 36)
    r = rng(seed)
    k = 160
    stacks = r.uniform(size=(k, 10, window[1], window[0])).astype(np.float32)
    labels = np.concatenate([np.ones(k // 2), -np.ones(k // 2)])
    # plant signal: positives get a bright block in channel 3
    stacks[: k // 2, 3, 6:18, 6:18] += 1.0
    feats = window_features(stacks, bank)
    from filtchan.featuremap import feature_indices
    data = quantize_matrix(feats, labels, feature_map=feature_indices(bank, window),
                           bank=bank, window=window)
    return boost(data, n_trees=n_trees, depth=2), bank, window, stacks, labels


def test_empty_forest_scores_zero():
    bank = make_uniform()
    forest = BoostedForest(trees=[], tree_weights=np.empty(0), variant="discrete",
                           bank=bank, window=(12, 12))
    stack = rng(9).uniform(size=(10, 24, 24)).astype(np.float32)
    resp = apply_bank(stack, bank)
    assert score_window(forest, resp, (0, 0)) == 0.0


def test_one_stump_forest_score():
    bank = make_uniform()
    fi = FeatureIndex(channel=0, filter=0, cell_x=0, cell_y=0)
    tree = Tree(root=SplitNode(feature=fi, threshold=5.0, left=Leaf(-1.0),
                               right=Leaf(1.0)), depth=1)
    forest = BoostedForest(trees=[tree], tree_weights=np.array([0.7]),
                           variant="discrete", bank=bank, window=(12, 12))
    stack = np.full((10, 12, 12), 1.0, dtype=np.float32)  # box sum 36 > 5
    resp = apply_bank(stack, bank)
    assert score_window(forest, resp, (0, 0)) == pytest.approx(0.7)


def test_score_map_matches_score_window():
    forest, bank, window, stacks, _ = trained_bank_forest()
    big = rng(10).uniform(size=(10, 72, 60)).astype(np.float32)
    resp = apply_bank(big, bank)
    smap = score_map(forest, resp)
    nwy, nwx = resp.window_grid(window)
    assert smap.shape == (nwy, nwx)
    for wy in range(0, nwy, 3):
        for wx in range(0, nwx, 2):
            want = score_window(forest, resp, (wx * 6, wy * 6))
            assert smap[wy, wx] == pytest.approx(want, rel=1e-12)


def test_cascade_equals_full_scoring_above_threshold():
    forest, bank, window, stacks, labels = trained_bank_forest()
    from filtchan.featuremap import window_features
    pos_feats = window_features(stacks[labels > 0], bank)
    calibrate_cascade(forest, pos_feats)
    big = rng(11).uniform(size=(10, 72, 48)).astype(np.float32)
    big[3, 12:24, 6:18] += 1.0
    resp = apply_bank(big, bank)
    nwy, nwx = resp.window_grid(window)
    final_thr = 0.0
    for wy in range(nwy):
        for wx in range(nwx):
            full = score_window(forest, resp, (wx * 6, wy * 6), use_cascade=False)
            fast = score_window(forest, resp, (wx * 6, wy * 6), use_cascade=True)
            if full >= final_thr:
                assert fast == full


def test_model_round_trip_bit_identical_scores(tmp_path):
    forest, bank, window, stacks, _ = trained_bank_forest()
    path = tmp_path / "model.txt"
    save_model(forest, path, header_comments=["config {}"])
    loaded = load_model(path)
    assert loaded.variant == forest.variant
    assert loaded.window == forest.window
    assert loaded.bank == bank
    big = rng(12).uniform(size=(10, 60, 48)).astype(np.float32)
    resp = apply_bank(big, bank)
    a = score_map(forest, resp)
    b = score_map(loaded, resp)
    assert np.array_equal(a, b)
    # save -> load -> save is byte-stable
    path2 = tmp_path / "model2.txt"
    save_model(loaded, path2, header_comments=["config {}"])
    assert path.read_bytes() == path2.read_bytes()


def test_identical_training_runs_identical_files(tmp_path):
    fa, _, _, _, _ = trained_bank_forest(seed=13)
    fb, _, _, _, _ = trained_bank_forest(seed=13)
    pa, pb = tmp_path / "a.txt", tmp_path / "b.txt"
    save_model(fa, pa)
    save_model(fb, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_filter_usage_counts_and_partition():
    forest, bank, window, _, _ = trained_bank_forest()
    counts = filter_usage(forest)
    assert counts.sum() == forest.n_split_nodes()
    per_chan = filter_usage(forest, per_channel=True)
    assert per_chan.shape == (10, len(bank.filters))
    assert per_chan.sum() == counts.sum()


def test_single_filter_forest_usage():
    bank = make_checkerboards(2, 2)
    fi = FeatureIndex(channel=2, filter=3, cell_x=0, cell_y=0)
    tree = Tree(root=SplitNode(feature=fi, threshold=0.0, left=Leaf(-1.0),
                               right=Leaf(1.0)), depth=1)
    forest = BoostedForest(trees=[tree], tree_weights=np.ones(1), variant="discrete",
                           bank=bank, window=(24, 36))
    counts = filter_usage(forest)
    assert counts[3] == 1 and counts.sum() == 1


def test_top_filter_matches_manual_scan_of_serialized_model(tmp_path):
    forest, bank, _, _, _ = trained_bank_forest()
    path = tmp_path / "m.txt"
    save_model(forest, path)
    manual = np.zeros(len(bank.filters), dtype=int)
    for line in path.read_text().splitlines():
        parts = line.split()
        if len(parts) >= 4 and parts[0] == "n" and parts[2] == "split":
            manual[int(parts[4])] += 1
    counts = filter_usage(forest)
    assert np.array_equal(counts, manual)
    assert int(np.argmax(counts)) == int(np.argmax(manual))


def test_reduce_bank_top_n_and_shortfall():
    forest, bank, _, _, _ = trained_bank_forest()
    counts = filter_usage(forest)
    used = int((counts > 0).sum())
    n = min(3, used)
    reduced = reduce_bank(forest, bank, n)
    assert len(reduced) == n
    order = sorted(np.flatnonzero(counts > 0), key=lambda i: (-counts[i], i))[:n]
    assert [f.id for f in reduced.filters] == [bank.filters[i].id for i in order]
    oversized = reduce_bank(forest, bank, len(bank.filters) + 5)
    assert len(oversized) == used


def test_reduce_bank_per_channel_mode():
    forest, bank, _, _, _ = trained_bank_forest()
    reduced = reduce_bank(forest, bank, 1, mode="per-channel")
    assert reduced.per_channel
    assert all(f.channel is not None for f in reduced.filters)
    per = filter_usage(forest, per_channel=True)
    assert len(reduced) == int((per.sum(axis=1) > 0).sum())


def test_spatial_influence_single_stump_is_support_indicator():
    bank = make_checkerboards(2, 2)
    fi = FeatureIndex(channel=1, filter=5, cell_x=1, cell_y=2)
    tree = Tree(root=SplitNode(feature=fi, threshold=0.0, left=Leaf(-1.0),
                               right=Leaf(1.0)), depth=1)
    forest = BoostedForest(trees=[tree], tree_weights=np.ones(1), variant="discrete",
                           bank=bank, window=(24, 36))
    maps, total = spatial_influence(forest)
    f = bank.filters[5]
    want = np.zeros((36, 24))
    for i in range(f.rows):
        for j in range(f.cols):
            if f.weights[i, j] != 0:
                want[2 * 6 + i * 6: 2 * 6 + (i + 1) * 6,
                     1 * 6 + j * 6: 1 * 6 + (j + 1) * 6] = 1.0
    assert np.array_equal(maps[1], want)
    assert np.array_equal(total, want)
    assert maps[[0, 2, 3, 4, 5, 6, 7, 8, 9]].sum() == 0


def test_spatial_influence_accounting_identity():
    forest, bank, _, _, _ = trained_bank_forest()
    maps, total = spatial_influence(forest)
    want = 0.0
    for tree in forest.trees:
        for node in tree.split_nodes():
            f = bank.filters[node.feature.filter]
            want += np.count_nonzero(f.weights) * 6 * 6
    assert total.sum() == want
    assert maps.sum() == want


def test_spatial_influence_matches_serialized_recomputation(tmp_path):
    forest, _, _, _, _ = trained_bank_forest()
    path = tmp_path / "m.txt"
    save_model(forest, path)
    reloaded = load_model(path)
    a_maps, a_total = spatial_influence(forest)
    b_maps, b_total = spatial_influence(reloaded)
    assert np.array_equal(a_maps, b_maps)
    assert np.array_equal(a_total, b_total)
