"""Label derivation against independent brute-force oracles."""

import random

import pytest

from reentry import corpus, labeling
from reentry.corpus import Conversation, Turn


def ctx(authors):
    return tuple(Turn(author=a, tokens=("t", a)) for a in authors)


# Brute-force oracles, written from the definitions alone.

def oracle_sp(authors):
    return 1 if len(set(authors)) <= 2 else 0


def oracle_rt(authors):
    return 1 if authors.count(authors[-1]) >= 2 else 0


def oracle_ta(authors):
    return tuple(1 if a == authors[-1] else 0 for a in authors[:-1])


def random_authors(rng, n_users=6, max_len=10):
    length = rng.randint(1, max_len)
    return [f"u{rng.randrange(n_users)}" for _ in range(length)]


class TestThreadPattern:
    def test_examples(self):
        assert labeling.thread_pattern(ctx(["u5", "u9", "u5"])) == "ABA"
        assert labeling.thread_pattern(ctx(["x", "y", "z", "x"])) == "ABCA"
        assert labeling.thread_pattern(ctx(["q"])) == "A"

    def test_first_char_is_a_and_letters_appear_in_order(self):
        rng = random.Random(0)
        for _ in range(200):
            pattern = labeling.thread_pattern(ctx(random_authors(rng)))
            assert pattern[0] == "A"
            seen = []
            for ch in pattern:
                if ch not in seen:
                    seen.append(ch)
            assert seen == sorted(seen)

    def test_invariant_under_renaming(self):
        rng = random.Random(1)
        for _ in range(100):
            authors = random_authors(rng)
            users = sorted(set(authors))
            renamed = dict(zip(users, rng.sample([f"v{i}" for i in range(99)], len(users))))
            assert labeling.thread_pattern(ctx(authors)) == \
                labeling.thread_pattern(ctx([renamed[a] for a in authors]))

    def test_more_than_26_users_extends_alphabet(self):
        authors = [f"u{i}" for i in range(28)]
        pattern = labeling.thread_pattern(ctx(authors))
        assert pattern.startswith("ABC")
        assert pattern.endswith("A1A2")

    def test_empty_context_errors(self):
        with pytest.raises(ValueError):
            labeling.thread_pattern(())


class TestSpLabel:
    def test_examples(self):
        assert labeling.sp_label(ctx(["a", "b", "a", "b"])) == 1   # "ABAB"
        assert labeling.sp_label(ctx(["a", "b", "c"])) == 0        # "ABC"
        assert labeling.sp_label(ctx(["a"])) == 1                  # single user

    def test_matches_oracle(self):
        rng = random.Random(2)
        for _ in range(500):
            authors = random_authors(rng)
            assert labeling.sp_label(ctx(authors)) == oracle_sp(authors)


class TestRtLabel:
    def test_examples(self):
        assert labeling.rt_label(ctx(["a", "b", "a"]), "a") == 1       # "ABA"
        assert labeling.rt_label(ctx(["a", "b"]), "b") == 0            # "AB"
        assert labeling.rt_label(ctx(["a", "b", "c", "a"]), "a") == 1  # "ABCA"

    def test_precondition(self):
        with pytest.raises(ValueError):
            labeling.rt_label(ctx(["a", "b"]), "a")

    def test_matches_oracle(self):
        rng = random.Random(3)
        for _ in range(500):
            authors = random_authors(rng)
            assert labeling.rt_label(ctx(authors), authors[-1]) == oracle_rt(authors)


class TestTaLabels:
    def test_examples(self):
        assert labeling.ta_labels(ctx(["a", "b", "c", "a"]), "a") == (1, 0, 0)
        assert labeling.ta_labels(ctx(["a", "b"]), "b") == (0,)
        assert labeling.ta_labels(ctx(["a", "b", "a", "b"]), "b") == (0, 1, 0)

    def test_length_and_preconditions(self):
        with pytest.raises(ValueError):
            labeling.ta_labels(ctx(["a"]), "a")
        with pytest.raises(ValueError):
            labeling.ta_labels(ctx(["a", "b"]), "a")

    def test_matches_oracle_and_rt_consistency(self):
        rng = random.Random(4)
        for _ in range(500):
            authors = random_authors(rng)
            if len(authors) < 2:
                continue
            ta = labeling.ta_labels(ctx(authors), authors[-1])
            assert ta == oracle_ta(authors)
            assert len(ta) == len(authors) - 1
            # sum(ta) >= 1 exactly when the target repeats.
            assert (sum(ta) >= 1) == (labeling.rt_label(ctx(authors), authors[-1]) == 1)


class TestInvertLabels:
    def make_instance(self):
        convs = [Conversation("c", ctx(["a", "b", "c", "a"]))]
        return corpus.extract_instances(convs)[-1]

    def test_invert_sp_only(self):
        ins = self.make_instance()
        flipped = labeling.invert_labels(ins, {"sp"})
        assert flipped.label_focused == 1 - ins.label_focused
        assert flipped.label_repeated == ins.label_repeated
        assert flipped.label_authorship == ins.label_authorship
        assert flipped.label_reentry == ins.label_reentry

    def test_invert_ta_bitwise(self):
        ins = self.make_instance()
        assert ins.label_authorship == (1, 0, 0)
        flipped = labeling.invert_labels(ins, {"ta"})
        assert flipped.label_authorship == (0, 1, 1)

    def test_empty_set_is_identity(self):
        ins = self.make_instance()
        assert labeling.invert_labels(ins, set()) == ins

    def test_double_inversion_is_identity(self):
        ins = self.make_instance()
        for tasks in [{"sp"}, {"rt"}, {"ta"}, {"sp", "rt", "ta"}]:
            assert labeling.invert_labels(labeling.invert_labels(ins, tasks), tasks) == ins

    def test_unknown_task_rejected(self):
        with pytest.raises(ValueError):
            labeling.invert_labels(self.make_instance(), {"bogus"})


class TestPatternStats:
    def test_rate_arithmetic(self):
        convs = []
        # 100 two-turn threads; 27 of them see the second author return.
        for i in range(100):
            authors = ["a", "b", "b"] if i < 27 else ["a", "b"]
            convs.append(Conversation(f"c{i:03d}", ctx(authors)))
        instances = [i for i in corpus.extract_instances(convs) if i.position == 2]
        stats = labeling.pattern_stats(instances)
        assert stats.counts["AB"] == 100
        assert stats.rates["AB"] == pytest.approx(0.27)

    def test_absent_pattern_not_reported(self):
        instances = corpus.extract_instances([Conversation("c", ctx(["a", "b"]))])
        stats = labeling.pattern_stats(instances)
        assert set(stats.counts) == {"AB"}

    def test_all_positive_rate_one(self):
        convs = [Conversation("c", ctx(["a", "b", "b"]))]
        instances = [i for i in corpus.extract_instances(convs) if i.position == 2]
        stats = labeling.pattern_stats(instances)
        assert stats.rates["AB"] == 1.0

    def test_rows_sorted_by_count(self):
        convs = [Conversation(f"c{i}", ctx(["a", "b"])) for i in range(3)]
        convs.append(Conversation("d", ctx(["a", "b", "c"])))
        stats = labeling.pattern_stats(corpus.extract_instances(convs))
        rows = stats.rows()
        assert rows[0][0] == "AB"
        assert [r[1] for r in rows] == sorted([r[1] for r in rows], reverse=True)


class TestParseTasks:
    def test_parse(self):
        assert labeling.parse_tasks("sp,rt,ta") == {"sp", "rt", "ta"}
        assert labeling.parse_tasks("") == set()
        assert labeling.parse_tasks(" ta , sp ") == {"ta", "sp"}

    def test_rejects_unknown(self):
        with pytest.raises(ValueError):
            labeling.parse_tasks("sp,xyz")
