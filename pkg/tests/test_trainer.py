"""Recipe resolution, schedule and optimizer arithmetic, epoch determinism,
mode equivalences, and evaluation reports."""

import dataclasses
import math

import numpy as np
import pytest

import gcdshift.autodiff as ad
import gcdshift.bounds as bd
import gcdshift.clustering as cl
import gcdshift.curriculum as cur
import gcdshift.encoder as enc
import gcdshift.losses as ls
import gcdshift.synthdata as sd
import gcdshift.trainer as tr


def small_enc_cfg(**over):
    base = dict(num_layers=2, patch_count=4, input_dim=3, token_dim=8,
                head_count=2, mlp_hidden=12, proj_dim=5, head_hidden=6,
                critic_hidden=6, domain_tap_layer=1, semantic_tap_layer=2,
                k_s=4, k_d=2)
    base.update(over)
    return enc.EncoderConfig(**base)


def small_task(**over):
    base = dict(num_classes=4, num_old=2, num_domains=2,
                samples_per_class_per_domain=6, patches=4, input_dim=3, seed=5)
    base.update(over)
    return sd.TaskConfig(**base)


def small_train_cfg(**over):
    base = dict(mode="hilo", epochs=1, batch_size=8, eval_every=1)
    base.update(over)
    return tr.TrainConfig(**base)


def fresh_run_parts(seed=3):
    ds = sd.generate(small_task())
    state = enc.init_state(small_enc_cfg(), seed=seed)
    opt = tr.OptimizerState(momentum=0.9, weight_decay=1e-4)
    rng = np.random.default_rng(seed)
    return ds, state, opt, rng


class TestRecipeResolution:
    def test_simgcd_takes_no_flags(self):
        r = tr.resolve_recipe("simgcd", tr.AblationFlags(), num_layers=4)
        assert r == tr.Recipe(False, False, False, False, 1, 4)
        with pytest.raises(ValueError):
            tr.resolve_recipe("simgcd", tr.AblationFlags(no_mi=True), 4)

    def test_hilo_base_all_components_on(self):
        r = tr.resolve_recipe("hilo", tr.AblationFlags(), num_layers=4)
        assert r == tr.Recipe(True, True, True, True, 1, 4)

    def test_no_flags_switch_components_off(self):
        r = tr.resolve_recipe("hilo", tr.AblationFlags(no_mi=True), 4)
        assert not r.use_mi and r.use_domain_head  # head stays, estimator goes
        r = tr.resolve_recipe("hilo", tr.AblationFlags(no_curriculum=True), 4)
        assert not r.use_curriculum and r.use_mi
        r = tr.resolve_recipe("hilo", tr.AblationFlags(no_patchmix=True), 4)
        assert not r.use_patchmix and r.use_curriculum

    def test_tap_ablations(self):
        r = tr.resolve_recipe("hilo", tr.AblationFlags(deep_only=True), 4)
        assert r.domain_tap == 4 and r.semantic_tap == 4
        r = tr.resolve_recipe("hilo", tr.AblationFlags(shallow_only=True), 4)
        assert r.domain_tap == 1 and r.semantic_tap == 1
        with pytest.raises(ValueError):
            tr.AblationFlags(deep_only=True, shallow_only=True).validate()

    def test_standalone_recipes(self):
        r = tr.resolve_recipe("hilo", tr.AblationFlags(patchmix_only=True), 4)
        assert r == tr.Recipe(False, False, True, False, 1, 4)
        r = tr.resolve_recipe("hilo", tr.AblationFlags(mi_only=True), 4)
        assert r == tr.Recipe(True, False, False, True, 1, 4)
        r = tr.resolve_recipe("hilo", tr.AblationFlags(curriculum_only=True), 4)
        assert r == tr.Recipe(False, True, False, False, 1, 4)

    def test_standalone_flags_reject_company(self):
        with pytest.raises(ValueError):
            tr.AblationFlags(patchmix_only=True, no_mi=True).validate()
        with pytest.raises(ValueError):
            tr.AblationFlags(mi_only=True, curriculum_only=True).validate()

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            tr.resolve_recipe("vanilla", tr.AblationFlags(), 4)


class TestScheduleAndOptimizer:
    def test_cosine_endpoints_and_midpoint(self):
        assert tr.cosine_lr(0.05, 0, 60) == 0.05
        assert tr.cosine_lr(0.05, 60, 60) == 0.0
        assert abs(tr.cosine_lr(0.1, 30, 60) - 0.05) < 1e-15

    def test_sgd_momentum_worked_example(self):
        opt = tr.OptimizerState(momentum=0.9, weight_decay=0.0)
        p = {"w": np.array([1.0])}
        opt.step(p, {"w": np.array([0.5])}, lr=0.1)
        assert np.allclose(p["w"], 0.95)
        opt.step(p, {"w": np.array([0.5])}, lr=0.1)
        # buffer 0.9*0.5 + 0.5 = 0.95
        assert np.allclose(p["w"], 0.95 - 0.1 * 0.95)

    def test_weight_decay_joins_gradient(self):
        opt = tr.OptimizerState(momentum=0.0, weight_decay=0.1)
        p = {"w": np.array([2.0])}
        opt.step(p, {"w": np.array([0.0])}, lr=0.5)
        assert np.allclose(p["w"], 2.0 - 0.5 * 0.1 * 2.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            tr.TrainConfig(mode="nope").validate()
        with pytest.raises(ValueError):
            tr.TrainConfig(lr0=-1.0).validate()
        with pytest.raises(ValueError):
            tr.TrainConfig(momentum=1.0).validate()
        with pytest.raises(ValueError):
            tr.TrainConfig(mi_train_rows=1).validate()
        with pytest.raises(ValueError):
            tr.TrainConfig(mode="simgcd",
                           ablations=tr.AblationFlags(no_mi=True)).validate()


class TestMakeViews:
    def test_reproducible_and_shaped(self):
        patches = np.random.default_rng(0).normal(size=(5, 4, 3))
        a1, a2 = tr.make_views(patches, np.random.default_rng(9), 1.0, 0.05, 0.1)
        b1, b2 = tr.make_views(patches, np.random.default_rng(9), 1.0, 0.05, 0.1)
        assert a1.shape == patches.shape
        assert np.array_equal(a1, b1) and np.array_equal(a2, b2)
        assert not np.array_equal(a1, a2)  # independent noise per view

    def test_degenerate_settings_identity(self):
        patches = np.random.default_rng(1).normal(size=(3, 4, 3))
        v1, v2 = tr.make_views(patches, np.random.default_rng(2), 1.0, 0.0, 0.0)
        assert np.array_equal(v1, patches) and np.array_equal(v2, patches)

    def test_masking_zeroes_whole_patches(self):
        patches = np.ones((6, 4, 3))
        v1, _ = tr.make_views(patches, np.random.default_rng(3), 1.0, 0.0, 0.7)
        row_norms = np.abs(v1).sum(axis=2)
        # every patch row is either fully kept or fully zeroed
        assert set(np.unique(row_norms)) <= {0.0, 3.0}
        assert (row_norms == 0.0).any()


class TestTrainEpoch:
    def test_zero_lr_leaves_parameters_unchanged(self):
        ds, state, opt, rng = fresh_run_parts()
        before = {k: v.copy() for k, v in state.params.items()}
        tr.train_epoch(state, opt, ds, 0, small_train_cfg(lr0=0.0),
                       ls.LossConfig(), cur.CurriculumConfig(), rng)
        for k, v in state.params.items():
            assert np.array_equal(v, before[k]), k

    def test_one_epoch_bit_reproducible(self):
        results = []
        for _ in range(2):
            ds, state, opt, rng = fresh_run_parts(seed=7)
            stats = tr.train_epoch(state, opt, ds, 0, small_train_cfg(),
                                   ls.LossConfig(), cur.CurriculumConfig(), rng)
            results.append((stats.total, state.params))
        assert results[0][0] == results[1][0]
        for k in results[0][1]:
            assert np.array_equal(results[0][1][k], results[1][1][k]), k

    def test_simgcd_never_reads_unlabelled_labels(self):
        ds, state, opt, rng = fresh_run_parts(seed=11)
        cfg = small_train_cfg(mode="simgcd")
        stats_a = tr.train_epoch(state, opt, ds, 0, cfg, ls.LossConfig(),
                                 cur.CurriculumConfig(), rng)

        shuffled = dataclasses.replace(ds, class_ids=ds.class_ids.copy())
        unlab = np.where(~ds.labelled)[0]
        perm = np.random.default_rng(1).permutation(unlab)
        shuffled.class_ids[unlab] = ds.class_ids[perm]
        ds2, state2, opt2, rng2 = fresh_run_parts(seed=11)
        stats_b = tr.train_epoch(state2, opt2, shuffled, 0, cfg, ls.LossConfig(),
                                 cur.CurriculumConfig(), rng2)

        assert stats_a.total == stats_b.total
        for k in state.params:
            assert np.array_equal(state.params[k], state2.params[k]), k

    def test_reduction_to_simgcd_on_identical_batches(self):
        # all component switches off + zero domain-head weight vs plain simgcd
        flags = tr.AblationFlags(no_mi=True, no_curriculum=True, no_patchmix=True)
        hilo_cfg = small_train_cfg(mode="hilo", ablations=flags)
        sim_cfg = small_train_cfg(mode="simgcd")
        zero_dom = ls.LossConfig(domain_head_weight=0.0)

        ds, state_h, opt_h, rng_h = fresh_run_parts(seed=13)
        _, state_s, opt_s, rng_s = fresh_run_parts(seed=13)
        for epoch in range(2):
            st_h = tr.train_epoch(state_h, opt_h, ds, epoch, hilo_cfg,
                                  zero_dom, cur.CurriculumConfig(), rng_h)
            st_s = tr.train_epoch(state_s, opt_s, ds, epoch, sim_cfg,
                                  ls.LossConfig(), cur.CurriculumConfig(), rng_s)
            assert abs(st_h.total - st_s.total) < 1e-10 * max(1.0, abs(st_s.total))
        for name in ("proto_sem", "embed.w", "head_sem.w1"):
            assert np.allclose(state_h.params[name], state_s.params[name],
                               rtol=0, atol=1e-12), name

    def test_prototypes_unit_norm_after_steps(self):
        ds, state, opt, rng = fresh_run_parts(seed=17)
        tr.train_epoch(state, opt, ds, 0, small_train_cfg(),
                       ls.LossConfig(), cur.CurriculumConfig(), rng)
        for name in ("proto_sem", "proto_dom"):
            norms = np.linalg.norm(state.params[name], axis=1)
            assert np.allclose(norms, 1.0, atol=1e-9), name

    def test_nonfinite_loss_aborts_with_diagnostics(self):
        ds, state, opt, rng = fresh_run_parts(seed=19)
        state.params["proto_sem"][0, 0] = np.nan
        with pytest.raises(FloatingPointError, match="epoch 0"):
            tr.train_epoch(state, opt, ds, 0, small_train_cfg(),
                           ls.LossConfig(), cur.CurriculumConfig(), rng)

    def test_all_recipes_run_one_epoch(self):
        for flags in (tr.AblationFlags(),
                      tr.AblationFlags(deep_only=True),
                      tr.AblationFlags(shallow_only=True),
                      tr.AblationFlags(patchmix_only=True),
                      tr.AblationFlags(mi_only=True),
                      tr.AblationFlags(curriculum_only=True)):
            ds, state, opt, rng = fresh_run_parts(seed=23)
            stats = tr.train_epoch(state, opt, ds, 0,
                                   small_train_cfg(ablations=flags),
                                   ls.LossConfig(), cur.CurriculumConfig(), rng)
            assert math.isfinite(stats.total), flags.active()


class TestEvaluate:
    def test_two_calls_identical(self):
        ds, state, _, _ = fresh_run_parts(seed=29)
        a = tr.evaluate(state, ds, bd.BoundsConfig(), small_train_cfg())
        b = tr.evaluate(state, ds, bd.BoundsConfig(), small_train_cfg())
        assert a == b

    def test_untrained_accuracy_at_least_matching_floor(self):
        ds, state, _, _ = fresh_run_parts(seed=31)
        rep = tr.evaluate(state, ds, bd.BoundsConfig(), small_train_cfg())
        assert rep.overall.acc_all >= 1.0 / small_enc_cfg().k_s

    def test_oracle_prototypes_solve_seen_domain(self):
        task = small_task(class_separation=80.0, jitter=0.02, style_strength=0.2)
        ds = sd.generate(task)
        state = enc.init_state(small_enc_cfg(), seed=37)
        z_hat = enc.forward_numpy(state, ds.patches).z_hat.data
        protos = np.zeros_like(state.params["proto_sem"])
        for c in range(task.num_classes):
            mask = (ds.class_ids == c) & (ds.domain_ids == 0)
            mean = z_hat[mask].mean(axis=0)
            protos[c] = mean / np.linalg.norm(mean)
        state.params["proto_sem"] = protos
        rep = tr.evaluate(state, ds, bd.BoundsConfig(), small_train_cfg())
        assert rep.seen.acc_all == 1.0

    def test_seen_unseen_domains_scored_under_one_matching(self):
        ds, state, _, _ = fresh_run_parts(seed=41)
        rep = tr.evaluate(state, ds, bd.BoundsConfig(), small_train_cfg())
        assert rep.seen.permutation == rep.overall.permutation
        assert rep.unseen.permutation == rep.overall.permutation

    def test_bounds_wired_from_run(self):
        ds, state, _, _ = fresh_run_parts(seed=43)
        rep = tr.evaluate(state, ds, bd.BoundsConfig(), small_train_cfg())
        assert 0.0 <= rep.bounds.d_hat <= 2.0
        assert rep.bounds.e_u == pytest.approx(1.0 - rep.unseen.acc_all)
        assert math.isfinite(rep.mi_estimate)


class TestRunExperiment:
    def test_row_count_matches_eval_schedule(self):
        ds = sd.generate(small_task())
        res = tr.run_experiment(ds, small_enc_cfg(),
                                small_train_cfg(epochs=4, eval_every=2),
                                ls.LossConfig(), cur.CurriculumConfig(),
                                bd.BoundsConfig(), seed=0)
        assert [r["epoch"] for r in res.rows] == [1, 3]
        assert res.final is not None

    def test_final_report_matches_last_row(self):
        ds = sd.generate(small_task())
        res = tr.run_experiment(ds, small_enc_cfg(),
                                small_train_cfg(epochs=2, eval_every=1),
                                ls.LossConfig(), cur.CurriculumConfig(),
                                bd.BoundsConfig(), seed=1)
        last = res.rows[-1]
        assert last["seen_all"] == res.final.seen.acc_all
        assert last["unseen_all"] == res.final.unseen.acc_all
        assert last["thm1_rhs"] == res.final.bounds.thm1_rhs

    def test_checkpoints_roundtrip(self, tmp_path):
        ds = sd.generate(small_task())
        res = tr.run_experiment(ds, small_enc_cfg(),
                                small_train_cfg(epochs=2, eval_every=1),
                                ls.LossConfig(), cur.CurriculumConfig(),
                                bd.BoundsConfig(), seed=2,
                                checkpoint_dir=str(tmp_path))
        files = sorted(p.name for p in tmp_path.iterdir())
        assert files == ["state_epoch000.txt", "state_epoch001.txt"]
        loaded = enc.load_state(str(tmp_path / "state_epoch001.txt"))
        for k, v in res.state.params.items():
            assert np.array_equal(loaded.params[k], v), k
