from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from crowdstrong.mace import (
    AnnotatorModel,
    BinaryOpinionTable,
    ExpectedCounts,
    MaceCompetence,
    build_binary_instances,
    e_step,
    filter_by_competence,
    m_step,
    predict_tags,
    read_competence_tsv,
    run_mace,
    write_competence_tsv,
)
from crowdstrong.rng import substream
from crowdstrong.timeline import SegmentSpec
from crowdstrong.workers import SegmentAnnotation, Subpopulation, sample_worker_pool

from oracles import enumerate_annotator_model

VOCAB = ("dog_bark", "siren")


def table_from(item_of, worker_of, answers, n_items=None, n_workers=None):
    n_items = n_items if n_items is not None else max(item_of) + 1
    n_workers = n_workers if n_workers is not None else max(worker_of) + 1
    return BinaryOpinionTable(
        items=[("f", i, "c") for i in range(n_items)],
        workers=[f"w{j}" for j in range(n_workers)],
        classes=("c",),
        item_index=np.asarray(item_of, dtype=np.int64),
        worker_index=np.asarray(worker_of, dtype=np.int64),
        answers=np.asarray(answers, dtype=np.int8),
    )


def model_of(trust, spam_yes):
    trust = np.asarray(trust, dtype=float)
    return AnnotatorModel(
        workers=[f"w{j}" for j in range(len(trust))],
        trust=trust,
        spam_yes=np.asarray(spam_yes, dtype=float),
    )


def random_instance(rng, max_items=4, max_workers=3):
    n_items = int(rng.integers(1, max_items + 1))
    n_workers = int(rng.integers(1, max_workers + 1))
    item_of, worker_of, answers = [], [], []
    for i in range(n_items):
        for j in range(n_workers):
            if rng.random() < 0.8:
                item_of.append(i)
                worker_of.append(j)
                answers.append(int(rng.random() < 0.5))
    if not item_of:
        item_of, worker_of, answers = [0], [0], [1]
    trust = rng.uniform(0.03, 0.97, size=n_workers)
    spam_yes = rng.uniform(0.03, 0.97, size=n_workers)
    prior_yes = float(rng.uniform(0.1, 0.9))
    return (
        table_from(item_of, worker_of, answers, n_items, n_workers),
        trust,
        spam_yes,
        prior_yes,
    )


class TestBuildBinaryInstances:
    def seg(self, start=0):
        return SegmentSpec("f", start, 10)

    def test_explicit_yes_no_decomposition(self):
        anns = [SegmentAnnotation("w", self.seg(), frozenset({"dog_bark"}))]
        table = build_binary_instances(anns, VOCAB)
        assert table.items == [("f", 0, "dog_bark"), ("f", 0, "siren")]
        assert list(table.answers) == [1, 0]

    def test_none_of_the_above_is_all_no(self):
        anns = [SegmentAnnotation("w", self.seg(), frozenset())]
        table = build_binary_instances(anns, VOCAB)
        assert list(table.answers) == [0, 0]

    def test_item_count_is_segments_times_vocabulary(self):
        anns = [
            SegmentAnnotation(w, self.seg(start), frozenset())
            for start in (0, 15, 30)
            for w in ("w1", "w2", "w3", "w4", "w5")
        ]
        table = build_binary_instances(anns, VOCAB)
        assert table.n_items == 3 * len(VOCAB)
        assert table.n_opinions == 15 * len(VOCAB)
        opinions_per_item = np.bincount(table.item_index)
        assert (opinions_per_item == 5).all()

    def test_duplicate_annotation_rejected(self):
        anns = [
            SegmentAnnotation("w", self.seg(), frozenset()),
            SegmentAnnotation("w", self.seg(), frozenset({"siren"})),
        ]
        with pytest.raises(ValueError, match="duplicate"):
            build_binary_instances(anns, VOCAB)

    def test_unknown_tag_rejected(self):
        anns = [SegmentAnnotation("w", self.seg(), frozenset({"mystery"}))]
        with pytest.raises(ValueError, match="not in vocabulary"):
            build_binary_instances(anns, VOCAB)


class TestEStep:
    def test_two_unanimous_yes_workers_worked_example(self):
        table = table_from([0, 0], [0, 1], [1, 1])
        p_yes, counts, ll = e_step(table, model_of([0.8, 0.8], [0.5, 0.5]))
        assert p_yes[0] == pytest.approx(0.405 / 0.410, abs=1e-12)
        assert ll == pytest.approx(np.log(0.410), abs=1e-12)

    def test_fully_trusted_unanimous_workers_pin_the_label(self):
        table = table_from([0, 0, 0], [0, 1, 2], [1, 1, 1])
        p_yes, _, _ = e_step(table, model_of([1.0, 1.0, 1.0], [0.5, 0.5, 0.5]))
        assert p_yes[0] == 1.0

    def test_zero_trust_leaves_prior(self):
        table = table_from([0, 0], [0, 1], [1, 0])
        p_yes, _, _ = e_step(table, model_of([0.0, 0.0], [0.3, 0.7]), label_prior_yes=0.25)
        assert p_yes[0] == pytest.approx(0.25, abs=1e-12)

    def test_item_without_opinions_warns_and_keeps_prior(self):
        table = table_from([0, 0], [0, 1], [1, 1], n_items=2)
        with pytest.warns(UserWarning, match="no opinions"):
            p_yes, _, _ = e_step(table, model_of([0.8, 0.8], [0.5, 0.5]), label_prior_yes=0.4)
        assert p_yes[1] == pytest.approx(0.4, abs=1e-12)

    def test_matches_enumeration_battery(self):
        rng = substream(123, "estep-battery")
        for _ in range(300):
            table, trust, spam_yes, prior_yes = random_instance(rng)
            model = model_of(trust, spam_yes)
            with np.errstate(all="ignore"):
                p_yes, counts, ll = e_step(table, model, prior_yes)
            exp_p, exp_trust, exp_sy, exp_sn, exp_ll = enumerate_annotator_model(
                table.item_index, table.worker_index, table.answers,
                trust, spam_yes, prior_yes,
                n_items=table.n_items, n_workers=table.n_workers,
            )
            # items with no opinions keep the prior in both implementations
            assert np.max(np.abs(p_yes - exp_p)) <= 1e-10
            assert np.max(np.abs(counts.trust - exp_trust)) <= 1e-10
            assert np.max(np.abs(counts.spam_yes - exp_sy)) <= 1e-10
            assert np.max(np.abs(counts.spam_no - exp_sn)) <= 1e-10
            assert abs(ll - exp_ll) <= 1e-9 * max(1.0, abs(exp_ll))

    def test_invalid_model_rejected(self):
        table = table_from([0], [0], [1])
        with pytest.raises(ValueError):
            e_step(table, model_of([1.5], [0.5]))


class TestMStep:
    def test_ratio_without_smoothing(self):
        counts = ExpectedCounts(
            trust=np.array([9.0]), spam_yes=np.array([1.0]), spam_no=np.array([0.0])
        )
        model = m_step(counts, smoothing=0.0)
        assert model.trust[0] == pytest.approx(0.9, abs=1e-15)
        assert model.spam_yes[0] == pytest.approx(1.0, abs=1e-15)

    def test_all_zero_counts_with_smoothing(self):
        counts = ExpectedCounts(
            trust=np.zeros(1), spam_yes=np.zeros(1), spam_no=np.zeros(1)
        )
        model = m_step(counts, smoothing=0.01)
        assert model.trust[0] == 0.5
        assert model.spam_yes[0] == 0.5

    def test_all_zero_counts_without_smoothing_fall_back(self):
        counts = ExpectedCounts(
            trust=np.zeros(1), spam_yes=np.zeros(1), spam_no=np.zeros(1)
        )
        model = m_step(counts, smoothing=0.0)
        assert model.trust[0] == 0.5

    def test_counts_from_worked_example_round_trip(self):
        table = table_from([0, 0], [0, 1], [1, 1])
        _, counts, _ = e_step(table, model_of([0.8, 0.8], [0.5, 0.5]))
        _, exp_trust, exp_sy, exp_sn, _ = enumerate_annotator_model(
            table.item_index, table.worker_index, table.answers,
            np.array([0.8, 0.8]), np.array([0.5, 0.5]), 0.5,
        )
        model = m_step(counts, smoothing=0.0)
        expected_trust = exp_trust / (exp_trust + exp_sy + exp_sn)
        assert np.allclose(model.trust, expected_trust, atol=1e-12)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            m_step(ExpectedCounts(np.array([-1.0]), np.zeros(1), np.zeros(1)))


def random_dataset(rng, n_items=40, n_workers=6):
    true_trust = rng.uniform(0.1, 0.95, size=n_workers)
    xi = rng.uniform(0.1, 0.9, size=n_workers)
    truth = rng.random(n_items) < rng.uniform(0.2, 0.8)
    item_of, worker_of, answers = [], [], []
    for i in range(n_items):
        for j in range(n_workers):
            spam = rng.random() >= true_trust[j]
            ans = (rng.random() < xi[j]) if spam else bool(truth[i])
            item_of.append(i)
            worker_of.append(j)
            answers.append(int(ans))
    return table_from(item_of, worker_of, answers, n_items, n_workers)


class TestRunMace:
    def test_log_likelihood_monotone_without_smoothing(self):
        rng = substream(9, "mono")
        for _ in range(25):
            table = random_dataset(rng)
            _, post = run_mace(table, restarts=1, iterations=40, smoothing=0.0, seed=7)
            trace = np.array(post.log_likelihood_trace)
            assert (np.diff(trace) >= -1e-9).all()

    def test_chosen_restart_has_best_likelihood(self):
        table = random_dataset(substream(5, "best"))
        _, post = run_mace(table, restarts=6, iterations=30, seed=1)
        assert post.log_marginal_likelihood == max(post.restart_log_likelihoods)
        assert post.restart_log_likelihoods[post.restart_index] == post.log_marginal_likelihood

    def test_spammer_separation_single_seed(self):
        rng = substream(0, "sep")
        n_items, n_workers = 400, 12
        trust = np.array([0.9] * 9 + [0.03] * 3)
        xi = rng.uniform(0.2, 0.8, size=n_workers)
        truth = rng.random(n_items) < 0.3
        item_of, worker_of, answers = [], [], []
        for i in range(n_items):
            for j in range(n_workers):
                spam = rng.random() >= trust[j]
                ans = (rng.random() < xi[j]) if spam else bool(truth[i])
                item_of.append(i); worker_of.append(j); answers.append(int(ans))
        table = table_from(item_of, worker_of, answers, n_items, n_workers)
        model, _ = run_mace(table, restarts=5, iterations=50, seed=3)
        assert model.trust[:9].min() > model.trust[9:].max()

    def test_input_order_equivariance_is_exact(self):
        rng = substream(2, "perm")
        seg = lambda s: SegmentSpec("f", s, 10)  # noqa: E731
        anns = [
            SegmentAnnotation(
                f"w{j}", seg(15 * i), frozenset({"siren"}) if rng.random() < 0.4 else frozenset()
            )
            for i in range(8)
            for j in range(4)
        ]
        shuffled = [anns[i] for i in rng.permutation(len(anns))]
        t1 = build_binary_instances(anns, VOCAB)
        t2 = build_binary_instances(shuffled, VOCAB)
        assert np.array_equal(t1.item_index, t2.item_index)
        m1, p1 = run_mace(t1, restarts=3, iterations=30, seed=4)
        m2, p2 = run_mace(t2, restarts=3, iterations=30, seed=4)
        assert np.array_equal(m1.trust, m2.trust)
        assert np.array_equal(p1.p_yes, p2.p_yes)

    def test_worker_rename_transports_the_fit(self):
        table = random_dataset(substream(2, "perm2"), n_items=25, n_workers=5)
        # swap the identities of workers 0 and 3 (same opinions, new names)
        remap = {0: 3, 3: 0, 1: 1, 2: 2, 4: 4}
        table2 = table_from(
            table.item_index,
            [remap[int(w)] for w in table.worker_index],
            table.answers,
            table.n_items,
            table.n_workers,
        )
        kwargs = dict(restarts=3, iterations=500, seed=4, tol=1e-12)
        model, post = run_mace(table, **kwargs)
        model2, post2 = run_mace(table2, **kwargs)
        # random restarts draw per identity, so renamed runs land in the same
        # optimum but not bit-identically
        for old, new in remap.items():
            assert model2.trust[new] == pytest.approx(model.trust[old], abs=1e-4)
        assert np.allclose(post2.p_yes, post.p_yes, atol=1e-4)
        assert (post2.p_yes >= 0.5).tolist() == (post.p_yes >= 0.5).tolist()

    def test_deterministic_given_seed(self):
        table = random_dataset(substream(3, "det"))
        m1, p1 = run_mace(table, restarts=3, iterations=30, seed=11)
        m2, p2 = run_mace(table, restarts=3, iterations=30, seed=11)
        assert np.array_equal(m1.trust, m2.trust)
        assert np.array_equal(p1.p_yes, p2.p_yes)

    def test_invalid_arguments(self):
        table = random_dataset(substream(4, "bad"))
        with pytest.raises(ValueError):
            run_mace(table, restarts=0)
        with pytest.raises(ValueError):
            run_mace(table, iterations=0)


class TestPredictTags:
    def make_posteriors(self, p):
        table = table_from([0, 0], [0, 1], [1, 1])
        _, post = run_mace(table, restarts=1, iterations=5, seed=0)
        post.p_yes = np.asarray(p)
        post.items = [("f", 0, "dog_bark"), ("f", 0, "siren")]
        return post

    def test_threshold_is_inclusive(self):
        post = self.make_posteriors([0.5, 0.49999])
        tags = predict_tags(post, 0.5)
        assert tags[("f", 0)] == {"dog_bark"}

    def test_all_zero_posteriors_give_empty_tags(self):
        post = self.make_posteriors([0.0, 0.0])
        assert predict_tags(post, 0.5)[("f", 0)] == frozenset()

    def test_threshold_validated(self):
        post = self.make_posteriors([0.5, 0.5])
        with pytest.raises(ValueError):
            predict_tags(post, 0.0)
        with pytest.raises(ValueError):
            predict_tags(post, 1.0)


class TestFilterByCompetence:
    def fitted(self):
        seg = SegmentSpec("f", 0, 10)
        anns = [
            SegmentAnnotation(w, seg, frozenset({"dog_bark"}) if w != "w3" else frozenset())
            for w in ("w1", "w2", "w3")
        ]
        model = AnnotatorModel(
            workers=["w1", "w2", "w3"],
            trust=np.array([0.9, 0.7, 0.2]),
            spam_yes=np.array([0.5, 0.5, 0.5]),
        )
        return anns, model

    def test_zero_threshold_is_identity(self):
        anns, model = self.fitted()
        assert filter_by_competence(anns, model, 0.0) == anns

    def test_full_threshold_drops_everything(self):
        anns, model = self.fitted()
        assert filter_by_competence(anns, model, 1.0) == []

    def test_strictly_greater_rule(self):
        anns, model = self.fitted()
        kept = filter_by_competence(anns, model, 0.7)
        assert [a.worker_id for a in kept] == ["w1"]

    def test_unmodeled_worker_rejected(self):
        anns, model = self.fitted()
        anns.append(SegmentAnnotation("w9", SegmentSpec("f", 15, 10), frozenset()))
        with pytest.raises(ValueError, match="no estimated competence"):
            filter_by_competence(anns, model, 0.5)


class TestCompetenceIO:
    def test_tsv_round_trip(self, tmp_path):
        model = AnnotatorModel(
            workers=["a", "b"], trust=np.array([0.25, 0.875]), spam_yes=np.array([0.5, 0.5])
        )
        path = tmp_path / "competence.tsv"
        write_competence_tsv(path, model, header={"stage": "mace"})
        assert read_competence_tsv(path) == {"a": 0.25, "b": 0.875}


class TestEstimatorApi:
    def test_fit_predict_and_params(self):
        table = random_dataset(substream(6, "api"), n_items=30, n_workers=5)
        est = MaceCompetence(restarts=2, iterations=20, random_state=3)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

        est.fit(table)
        assert len(est.trust_) == table.n_workers
        assert est.n_iter_ >= 1
        proba = est.predict_proba()
        model, post = run_mace(
            table, restarts=2, iterations=20, smoothing=est.smoothing, seed=3
        )
        assert np.allclose(proba, post.p_yes)
        tags = est.predict(table)
        assert set(tags) == {("f", i) for i in range(30)}

    def test_unfitted_predict_raises(self):
        with pytest.raises(NotFittedError):
            MaceCompetence().predict()

    def test_foreign_worker_pool_rejected(self):
        table = random_dataset(substream(7, "api2"), n_items=10, n_workers=4)
        other = random_dataset(substream(8, "api3"), n_items=10, n_workers=3)
        est = MaceCompetence(restarts=1, iterations=5).fit(table)
        with pytest.raises(ValueError, match="different worker pool"):
            est.predict(other)

    def test_filter_annotations_delegates(self):
        seg = SegmentSpec("f", 0, 10)
        anns = [SegmentAnnotation(f"w{j}", seg, frozenset()) for j in range(4)]
        table = build_binary_instances(anns, VOCAB)
        est = MaceCompetence(restarts=1, iterations=5).fit(table)
        kept = est.filter_annotations(anns, threshold=0.0)
        assert kept == anns
