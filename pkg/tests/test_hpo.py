"""Search-space constraints, sampling, selection, and replay determinism."""

import json
import math

import numpy as np
import pytest

from atomgnn.errors import ValidationError
from atomgnn.hpo import (HpoResult, SearchSpace, TrialRecord, default_search_space,
                         load_search_space, run_hpo, sample_config, save_search_space,
                         select_best)
from atomgnn.model import DataDims, ModelConfig

from conftest import make_random_graph


def branch_grids(use_attention, use_encodings):
    """The published grids, restated independently as the test oracle."""
    if not use_attention:
        return {
            "num_conv_layers": set(range(1, 7)),
            "attn_heads": {0},
            "hidden_dim": set(range(16, 65)) if use_encodings else set(range(4, 33)),
            "edge_embed_dim": {0, 4, 5, 6, 7, 8, 9, 10, 11, 12} if use_encodings else {0},
        }
    return {
        "num_conv_layers": {1, 2, 3},
        "attn_heads": {2, 4, 8},
        "hidden_dim": {16, 24, 32, 40, 48, 56, 64} if use_encodings
        else {8, 16, 24, 32, 40, 48},
        "edge_embed_dim": {0, 4, 5, 6, 7, 8, 9, 10, 11, 12} if use_encodings
        else {0, 4, 5, 6, 8, 9, 10, 11, 12},
    }


class TestSampling:
    @pytest.mark.parametrize("has_pos", [False, True])
    @pytest.mark.parametrize("attn", [False, True])
    @pytest.mark.parametrize("enc", [False, True])
    def test_samples_satisfy_branch_constraints(self, has_pos, attn, enc):
        space = default_search_space(has_pos, attn, enc)
        grids = branch_grids(attn, enc)
        rng = np.random.default_rng(0)
        kinds = {"edge_sum", "multi_agg"} | ({"geometric"} if has_pos else set())
        for _ in range(2000):
            c = sample_config(space, rng)
            assert c.num_conv_layers in grids["num_conv_layers"]
            assert c.attn_heads in grids["attn_heads"]
            assert c.hidden_dim in grids["hidden_dim"]
            assert c.edge_embed_dim in grids["edge_embed_dim"]
            assert c.mpnn_kind in kinds
            if attn:
                assert c.hidden_dim % c.attn_heads == 0
            else:
                assert c.attn_heads == 0

    def test_no_geometric_kind_without_positions(self):
        space = default_search_space(False, False, False)
        assert "geometric" not in space.mpnn_kinds

    def test_attention_off_branch_is_heads_zero(self):
        assert default_search_space(True, True, True).attn_heads == (2, 4, 8)
        assert default_search_space(True, False, False).attn_heads == (0,)
        assert default_search_space(True, False, True).attn_heads == (0,)

    def test_sampling_covers_the_grid(self):
        space = default_search_space(False, True, True)
        rng = np.random.default_rng(1)
        seen = {sample_config(space, rng).hidden_dim for _ in range(500)}
        assert seen == {16, 24, 32, 40, 48, 56, 64}

    def test_empty_space_rejected(self):
        space = SearchSpace(has_pos=False, use_attention=False, use_encodings=False,
                            mpnn_kinds=(), num_conv_layers=(1,), attn_heads=(0,),
                            hidden_dim=(4,), edge_embed_dim=(0,))
        with pytest.raises(ValidationError):
            sample_config(space, np.random.default_rng(0))

    def test_space_file_round_trip(self, tmp_path):
        space = default_search_space(True, True, False)
        path = tmp_path / "space.json"
        save_search_space(space, path)
        assert load_search_space(path) == space
        payload = json.loads(path.read_text())
        assert payload["use_attention"] is True


class TestSelection:
    def trial(self, index, val_loss, failed=False):
        return TrialRecord(index=index, config=ModelConfig(), seed=0,
                           val_loss=val_loss, failed=failed)

    def test_argmin(self):
        trials = [self.trial(0, 3.0), self.trial(1, 1.0), self.trial(2, 2.0)]
        assert select_best(trials) == 1

    def test_zero_loss_trial_always_wins(self):
        trials = [self.trial(0, 0.5), self.trial(1, 0.0), self.trial(2, 0.1)]
        assert select_best(trials) == 1

    def test_order_independent(self):
        trials = [self.trial(i, v) for i, v in enumerate([4.0, 2.0, 2.5, 2.0])]
        for perm in ([3, 1, 0, 2], [2, 0, 3, 1], [0, 1, 2, 3]):
            shuffled = [trials[i] for i in perm]
            assert select_best(shuffled) == 1  # earliest of the tied pair

    def test_failed_trials_skipped(self):
        trials = [self.trial(0, math.inf, failed=True), self.trial(1, 5.0)]
        assert select_best(trials) == 1

    def test_all_failed_rejected_with_summary(self):
        trials = [TrialRecord(index=0, config=ModelConfig(), seed=0, failed=True,
                              error="ValueError: boom")]
        with pytest.raises(ValidationError, match="boom"):
            select_best(trials)


class TestRunHpo:
    def _data(self, rng):
        graphs = [make_random_graph(rng) for _ in range(12)]
        return ((graphs[:8], None), (graphs[8:10], None), (graphs[10:], None))

    def _space(self):
        # pin the branch to tiny widths so trials stay fast
        return SearchSpace(has_pos=False, use_attention=False, use_encodings=False,
                           mpnn_kinds=("edge_sum",), num_conv_layers=(1,),
                           attn_heads=(0,), hidden_dim=(4, 6, 8), edge_embed_dim=(0,))

    def test_budget_one_selects_sole_trial(self, rng):
        train_set, val_set, test_set = self._data(rng)
        result = run_hpo(self._space(), DataDims(node_feat=3, edge_feat=2),
                         train_set, val_set, test_set,
                         budget=1, short_epochs=2, retrain_epochs=3, patience=2, seed=5)
        assert result.best_index == 0
        assert result.final_metrics.mse is not None

    def test_fixed_seed_replay_identical(self, rng, tmp_path):
        train_set, val_set, test_set = self._data(rng)
        stores = []
        for run in range(2):
            store = tmp_path / f"trials_{run}.jsonl"
            run_hpo(self._space(), DataDims(node_feat=3, edge_feat=2),
                    train_set, val_set, test_set,
                    budget=4, short_epochs=2, retrain_epochs=2, patience=2, seed=9,
                    store_path=store)
            stores.append(store.read_text())
        assert stores[0] == stores[1]

    def test_selection_is_argmin_of_store(self, rng, tmp_path):
        train_set, val_set, test_set = self._data(rng)
        store = tmp_path / "trials.jsonl"
        result = run_hpo(self._space(), DataDims(node_feat=3, edge_feat=2),
                         train_set, val_set, test_set,
                         budget=4, short_epochs=2, retrain_epochs=2, patience=2, seed=9,
                         store_path=store)
        records = [json.loads(line) for line in store.read_text().splitlines()]
        losses = [r["val_loss"] for r in records]
        assert result.best_index == int(np.argmin(losses))
