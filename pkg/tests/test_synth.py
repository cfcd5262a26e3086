import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flextclus.synth import SCENARIOS, BenchmarkResult, ScenarioSpec, Stream, generate, run_benchmark


def same(a, b):
    return all(x.design.tobytes() == y.design.tobytes() and x.target.tobytes() == y.target.tobytes()
               for x, y in zip(a.tasks, b.tasks))


class TestGenerate:
    @pytest.mark.parametrize("scenario", SCENARIOS)
    def test_sizes_and_label_contiguity(self, scenario):
        s = generate(ScenarioSpec(scenario, D=6, T=5, n_train=7, n_val=3, n_test=4, seed=1))
        assert [t.n_samples for t in s.train.tasks] == [7] * 5
        assert [t.n_samples for t in s.val.tasks] == [3] * 5
        assert [t.n_samples for t in s.test.tasks] == [4] * 5
        assert s.truth.W_check.shape == s.truth.labels.shape == (6, 5)
        for row in s.truth.labels:
            seen = list(dict.fromkeys(row))
            assert seen == list(range(len(seen)))

    def test_c1_all_singletons(self):
        labels = generate(ScenarioSpec("C1", seed=4)).truth.labels
        assert (labels == np.arange(10)).all()

    @pytest.mark.parametrize("seed", [0, 7, 123])
    def test_c2_single_label(self, seed):
        assert (generate(ScenarioSpec("C2", seed=seed)).truth.labels == 0).all()

    @pytest.mark.parametrize("seed", [0, 7, 123])
    def test_c3_one_isolated_task_per_row(self, seed):
        labels = generate(ScenarioSpec("C3", seed=seed)).truth.labels
        for row in labels:
            values, counts = np.unique(row, return_counts=True)
            assert sorted(counts) == [1, 9]

    def test_c4_last_two_tasks_are_outliers(self):
        labels = generate(ScenarioSpec("C4", seed=2)).truth.labels
        assert (labels[:, :8] == 0).all()
        assert (labels[:, 8] == 1).all() and (labels[:, 9] == 2).all()

    def test_c5_two_groups_per_row(self):
        labels = generate(ScenarioSpec("C5", seed=2)).truth.labels
        assert all(np.unique(row).size == 2 for row in labels)

    def test_c6_last_two_features_unclustered(self):
        labels = generate(ScenarioSpec("C6", seed=2)).truth.labels
        assert (labels[:-2] == 0).all()
        assert (labels[-2:] == np.arange(10)).all()

    @pytest.mark.parametrize("seed", [0, 3])
    def test_cr_ground_truth(self, seed):
        spec = ScenarioSpec("CR", D=10, T=9, n_clusters=3, rho=5.0, seed=seed)
        truth = generate(spec).truth
        for W, lab in zip(truth.W_check, truth.labels):
            assert np.unique(lab).size == 3
            for a in range(9):
                for b in range(9):
                    gap = abs(W[a] - W[b])
                    if lab[a] == lab[b]:
                        assert gap == 0.0
                    else:
                        assert gap >= 5.0

    def test_same_seed_bit_identical(self):
        spec = ScenarioSpec("C5", seed=99)
        a, b = generate(spec), generate(spec)
        assert same(a.train, b.train) and same(a.val, b.val) and same(a.test, b.test)
        assert a.truth.W_check.tobytes() == b.truth.W_check.tobytes()

    def test_seed_and_repetition_change_the_data(self):
        a = generate(ScenarioSpec("C2", seed=1))
        assert not same(a.train, generate(ScenarioSpec("C2", seed=2)).train)
        assert not same(a.train, generate(ScenarioSpec("C2", seed=1, repetition=1)).train)

    def test_task_streams_are_independent_of_task_count(self):
        # task t draws from its own substream, so adding tasks leaves
        # earlier tasks' inputs untouched
        a = generate(ScenarioSpec("C1", T=3, seed=5))
        b = generate(ScenarioSpec("C1", T=4, seed=5))
        assert a.train.tasks[1].design.tobytes() == b.train.tasks[1].design.tobytes()

    @pytest.mark.parametrize("scenario", ["C1", "C5"])
    def test_noise_variance(self, scenario):
        spec = ScenarioSpec(scenario, n_train=30, n_val=100, n_test=100, seed=8)
        s = generate(spec)
        resid = []
        for t in range(spec.T):
            X = np.vstack([p.tasks[t].design for p in (s.train, s.val, s.test)])
            y = np.concatenate([p.tasks[t].target for p in (s.train, s.val, s.test)])
            resid.append(y - X @ s.truth.W_check[:, t])
        resid = np.concatenate(resid)
        assert abs(np.mean(resid**2) / spec.noise_variance - 1.0) <= 0.15

    def test_spec_validation(self):
        with pytest.raises(ValueError, match="unknown scenario"):
            ScenarioSpec("C9")
        with pytest.raises(ValueError, match="rho > 0"):
            ScenarioSpec("CR", rho=0.0)
        with pytest.raises(ValueError, match="positive"):
            ScenarioSpec("C1", D=0)
        with pytest.raises(ValueError, match="nonnegative"):
            ScenarioSpec("C1", noise_variance=-1.0)


class TestStream:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**63))
    def test_polar_normals_are_standard(self, seed):
        z = Stream(seed, (0,)).normal(4000)
        assert abs(z.mean()) < 0.1 and abs(z.var() - 1.0) < 0.1

    def test_shapes_and_moments(self):
        z = Stream(1, (2, 3)).normal((50, 40), mean=10.0, var=100.0)
        assert z.shape == (50, 40)
        assert abs(z.mean() - 10.0) < 1.0 and abs(z.std() - 10.0) < 1.0

    def test_permutation(self):
        p = Stream(3, (1,)).permutation(12)
        assert sorted(p) == list(range(12))


class TestBenchmark:
    def test_table_shape_and_ranks(self, tmp_path):
        specs = [ScenarioSpec(s, D=5, T=4, n_train=20, n_val=20, n_test=20, noise_variance=1.0) for s in ("C1", "C2")]
        res = run_benchmark(specs, ["ridge", "pooling"], repetitions=2, grid=(0.1, 10.0))
        res.write_table(tmp_path / "t.csv")
        res.write_long(tmp_path / "l.csv")
        lines = (tmp_path / "t.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "scenario,ridge,pooling"
        assert len(lines) == 3 and "±" in lines[1] and "[1]" in lines[1]
        assert len((tmp_path / "l.csv").read_text().splitlines()) == 1 + 2 * 2 * 2
        assert sorted(res.ranks("C1").values()) == [1, 2]

    def test_workers_do_not_change_results(self):
        specs = [ScenarioSpec("C2", D=4, T=3, n_train=15, n_val=15, n_test=15)]
        a = run_benchmark(specs, ["ridge"], repetitions=2, grid=(1.0,))
        b = run_benchmark(specs, ["ridge"], repetitions=2, grid=(1.0,), workers=2)
        assert a.scores == b.scores

    def test_std_uses_sample_convention(self):
        res = BenchmarkResult(["C1"], ["ridge"], {("C1", "ridge"): [1.0, 3.0]}, {("C1", "ridge"): [{}, {}]})
        assert res.mean("C1", "ridge") == 2.0
        assert res.std("C1", "ridge") == pytest.approx(np.sqrt(2.0))

    def test_bad_inputs(self):
        with pytest.raises(ValueError, match="repetitions"):
            run_benchmark([ScenarioSpec("C1")], ["ridge"], repetitions=0)
        with pytest.raises(ValueError, match="unknown method"):
            run_benchmark([ScenarioSpec("C1", D=3, T=2, n_train=5, n_val=5, n_test=5)], ["lasso"], repetitions=1)


@pytest.fixture(scope="module")
def table():
    """Full protocol: D=30, T=10, 30 training samples, 10 repetitions."""
    specs = [ScenarioSpec(s, seed=0) for s in ("C1", "C3", "C6")]
    return run_benchmark(specs, ["ridge", "pooling", "flextclus", "adaptive"], repetitions=10)


@pytest.mark.slow
class TestBenchmarkTrends:

    def test_c1_ridge_at_or_near_best(self, table):
        best = min(table.mean("C1", m) for m in table.methods)
        assert table.mean("C1", "ridge") <= best + 0.05

    def test_c3_adaptive_beats_plain(self, table):
        assert table.mean("C3", "adaptive") < table.mean("C3", "flextclus")

    def test_c6_flextclus_beats_baselines(self, table):
        flex = table.mean("C6", "flextclus")
        assert flex < table.mean("C6", "pooling") and flex < table.mean("C6", "ridge")
