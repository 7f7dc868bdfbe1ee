import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trmsm.data import (
    Conversation,
    DataError,
    DatasetSplit,
    LabelMap,
    Utterance,
    content_class,
    conversation_from_record,
    generate_synthetic,
    load_jsonl,
    save_jsonl,
    split_train_dev,
    synthetic_labels,
)

LABELS = LabelMap(("neutral", "happy", "sad"))


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def conv(cid, n=1):
    return Conversation(cid, tuple(Utterance("A", ("x",), 0) for _ in range(n)))


class TestLoadJsonl:
    def test_minimal_record(self, tmp_path):
        f = write_lines(tmp_path / "a.jsonl", [
            '{"id":"d1","utterances":[{"speaker":"A","text":"hi there","label":"neutral"}]}'])
        [c] = load_jsonl(f, LABELS)
        assert len(c) == 1 and c.id == "d1"
        assert c.utterances[0] == Utterance("A", ("hi", "there"), 0)

    def test_empty_utterances_rejected(self, tmp_path):
        f = write_lines(tmp_path / "a.jsonl", ['{"id":"d1","utterances":[]}'])
        with pytest.raises(DataError, match=":1:"):
            load_jsonl(f, LABELS)

    def test_file_order_preserved(self, tmp_path):
        lines = [json.dumps({"id": f"d{i}", "utterances": [{"speaker": "A", "text": "w", "label": "sad"}]})
                 for i in (3, 1, 2)]
        f = write_lines(tmp_path / "a.jsonl", lines)
        assert [c.id for c in load_jsonl(f, LABELS)] == ["d3", "d1", "d2"]

    def test_unknown_label_reports_line(self, tmp_path):
        f = write_lines(tmp_path / "a.jsonl", [
            '{"id":"d1","utterances":[{"speaker":"A","text":"x","label":"sad"}]}',
            '{"id":"d2","utterances":[{"speaker":"A","text":"x","label":"angry"}]}'])
        with pytest.raises(DataError, match=r":2:.*angry"):
            load_jsonl(f, LABELS)

    def test_malformed_line(self, tmp_path):
        f = write_lines(tmp_path / "a.jsonl", ['{"id": "d1", "utterances": [', ''])
        with pytest.raises(DataError, match=":1:"):
            load_jsonl(f, LABELS)

    def test_empty_text_rejected(self, tmp_path):
        f = write_lines(tmp_path / "a.jsonl", ['{"id":"d1","utterances":[{"speaker":"A","text":"  "}]}'])
        with pytest.raises(DataError):
            load_jsonl(f, LABELS)

    def test_tokenisation_lowercases_and_splits(self):
        c = conversation_from_record({"id": "x", "utterances": [{"speaker": "B", "text": "Hello  WORLD\tok"}]}, None)
        assert c.utterances[0].tokens == ("hello", "world", "ok")
        assert c.utterances[0].label is None

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.tuples(st.sampled_from(["A", "B", "Ωmega"]),
                                       st.lists(st.text("abcdéü", min_size=1, max_size=5), min_size=1, max_size=4),
                                       st.sampled_from([None, 0, 1, 2])),
                             min_size=1, max_size=5), min_size=1, max_size=4))
    def test_round_trip(self, tmp_path_factory, raw):
        convs = [Conversation(f"c{i}", tuple(Utterance(s, tuple(toks), y) for s, toks, y in utts))
                 for i, utts in enumerate(raw)]
        path = tmp_path_factory.mktemp("rt") / "x.jsonl"
        save_jsonl(path, convs, LABELS)
        assert load_jsonl(path, LABELS) == convs


class TestLabelMapAndSplit:
    def test_label_map_bijection(self, tmp_path):
        LABELS.save(tmp_path / "l.json")
        lm = LabelMap.load(tmp_path / "l.json")
        assert lm == LABELS and lm.K == 3
        assert [lm.index(lm.name(k)) for k in range(3)] == [0, 1, 2]

    def test_label_map_rejects_duplicates(self):
        with pytest.raises(DataError):
            LabelMap(("a", "a"))

    def test_duplicate_ids_across_splits(self):
        with pytest.raises(DataError):
            DatasetSplit([conv("a")], [conv("a")], [])

    def test_split_120(self):
        train, dev = split_train_dev([conv(f"c{i}") for i in range(120)], 0.8, seed=0)
        assert (len(train), len(dev)) == (96, 24)
        assert {c.id for c in train}.isdisjoint(c.id for c in dev)

    def test_split_deterministic(self):
        convs = [conv(f"c{i}") for i in range(10)]
        assert split_train_dev(convs, 0.8, 5) == split_train_dev(convs, 0.8, 5)

    def test_split_two_halves(self):
        train, dev = split_train_dev([conv("a"), conv("b")], 0.5, 1)
        assert len(train) == len(dev) == 1

    def test_split_needs_two(self):
        with pytest.raises(DataError):
            split_train_dev([conv("a")], 0.8, 0)

    @pytest.mark.parametrize("ratio", [0.0, 1.0, 1.5])
    def test_split_ratio_range(self, ratio):
        with pytest.raises(ValueError):
            split_train_dev([conv("a"), conv("b")], ratio, 0)


class TestSyntheticRules:
    def test_same_speaker_previous(self):
        assert synthetic_labels(["A", "B", "A"], [2, 0, 1], "same-speaker-previous") == [2, 0, 2]

    def test_content_only(self):
        assert synthetic_labels(["A", "B", "A"], [2, 0, 1], "content-only") == [2, 0, 1]

    def test_other_speaker_majority(self):
        # ties between the other speakers' classes go to the lowest class
        assert synthetic_labels(["A", "B", "C", "A"], [1, 0, 3, 2], "other-speaker-majority") == [1, 1, 0, 0]

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            synthetic_labels(["A"], [0], "nope")


class TestGenerator:
    def test_deterministic(self):
        a = generate_synthetic((5, 2, 2), 3, 6, 4, "same-speaker-previous", seed=9)
        b = generate_synthetic((5, 2, 2), 3, 6, 4, "same-speaker-previous", seed=9)
        c = generate_synthetic((5, 2, 2), 3, 6, 4, "same-speaker-previous", seed=10)
        assert a == b and a != c

    def test_shapes_and_ids(self):
        split = generate_synthetic((4, 1, 3), 2, 7, 5, "content-only", seed=0)
        assert [len(split.train), len(split.dev), len(split.test)] == [4, 1, 3]
        assert all(len(c) == 7 for c in split.train + split.dev + split.test)

    def test_content_only_labels_equal_content(self):
        split = generate_synthetic(20, 3, 8, 4, "content-only", seed=1)
        for c in split.train:
            assert c.labels == [content_class(u) for u in c.utterances]

    def test_speaker_identity_absent_from_tokens(self):
        split = generate_synthetic(30, 3, 12, 4, "same-speaker-previous", seed=2)
        speakers = {u.speaker for c in split.train for u in c.utterances}
        tokens = {t for c in split.train for u in c.utterances for t in u.tokens}
        assert speakers and not any(s in t for s in speakers for t in tokens)

    def test_content_classes_roughly_uniform(self):
        split = generate_synthetic(200, 3, 12, 4, "content-only", seed=0)
        counts = np.bincount([content_class(u) for c in split.train for u in c.utterances], minlength=4)
        assert counts.min() / counts.max() > 0.85


# Oracles are written independently of the generator's own rule code.

def _rule_labels(speakers, contents):
    out = []
    for n in range(len(speakers)):
        label = contents[n]
        for j in range(n - 1, -1, -1):
            if speakers[j] == speakers[n]:
                label = contents[j]
                break
        out.append(label)
    return out


def _aware_oracle(c):
    return _rule_labels([u.speaker for u in c.utterances], [content_class(u) for u in c.utterances])


def _blind_oracle(c, n_speakers, n_classes):
    # Bayes-optimal without speakers: average the rule over every equally likely assignment
    contents = [content_class(u) for u in c.utterances]
    votes = np.zeros((len(contents), n_classes))
    for speakers in itertools.product(range(n_speakers), repeat=len(contents)):
        for n, y in enumerate(_rule_labels(speakers, contents)):
            votes[n, y] += 1
    return votes.argmax(axis=1).tolist()


def test_speaker_aware_oracle_is_exact():
    split = generate_synthetic(100, 3, 12, 4, "same-speaker-previous", seed=4)
    assert all(_aware_oracle(c) == c.labels for c in split.train)


def _blind_posterior(contents, n_speakers, n_classes):
    # closed form of the enumeration above: the nearest same-speaker utterance
    # is j with prob q(1-q)^(n-1-j), q = 1/S; none at all with prob (1-q)^n
    q = 1.0 / n_speakers
    post = np.zeros((len(contents), n_classes))
    for n in range(len(contents)):
        post[n, contents[n]] += (1 - q) ** n
        for j in range(n):
            post[n, contents[j]] += q * (1 - q) ** (n - 1 - j)
    return post


def test_blind_enumeration_matches_closed_form():
    split = generate_synthetic(15, 3, 6, 4, "same-speaker-previous", seed=5)
    for c in split.train:
        post = _blind_posterior([content_class(u) for u in c.utterances], 3, 4)
        np.testing.assert_allclose(post.sum(axis=1), 1.0, rtol=1e-12)
        assert _blind_oracle(c, 3, 4) == post.argmax(axis=1).tolist()


def test_speaker_blind_oracle_is_far_from_solving():
    split = generate_synthetic(200, 3, 12, 4, "same-speaker-previous", seed=0)
    hits = np.array([
        [p == y for p, y in zip(_blind_posterior([content_class(u) for u in c.utterances], 3, 4).argmax(axis=1),
                                c.labels)]
        for c in split.train])
    # the first utterance is its own content, so it is solvable blind; later ones are not
    assert hits[:, 0].all()
    assert hits[:, 1:].mean() < 0.6
    assert 1.0 - hits.mean() >= 0.3
