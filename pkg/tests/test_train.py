"""Trainer: sequences, loop determinism, evaluation, paired runs."""

import csv

import numpy as np
import pytest

from fakelab.cot import parse
from fakelab.model import ModelConfig
from fakelab.synth import LoadedSample, default_vocabulary, generate_dataset
from fakelab.train import (
    TrainConfig,
    answer_text,
    apply_overrides,
    build_sequences,
    evaluate_model,
    model_inconsistency,
    run_paired,
    sample_images,
    train_model,
    write_trace,
)
from fakelab.cpm import classification_pattern


def tiny_train_config(**kw):
    model = ModelConfig(
        image_side=8, patch_size=4, encoder_layers=2, encoder_heads=2,
        token_dim=16, text_dim=16, decoder_layers=1, decoder_heads=2,
        max_positions=192, max_len=160,
        **{k: v for k, v in kw.items() if k in ModelConfig.__dataclass_fields__},
    )
    train_kw = {k: v for k, v in kw.items() if k not in ModelConfig.__dataclass_fields__}
    return TrainConfig(model=model, **dict(dict(steps=8, batch_size=4), **train_kw))


@pytest.fixture(scope="module")
def vocab():
    return default_vocabulary()


@pytest.fixture(scope="module")
def data():
    return generate_dataset(seed=41, n_real=5, n_fake=5, difficulty=0.2, side=8)


class TestConfig:
    def test_json_round_trip(self):
        cfg = tiny_train_config(loss_mode="ce_only", seed=9)
        again = TrainConfig.from_json(cfg.to_json())
        assert again == cfg

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            TrainConfig(loss_mode="sometimes")
        with pytest.raises(ValueError):
            TrainConfig(steps=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)

    def test_overrides_route_to_the_right_config(self):
        base = tiny_train_config()
        out = apply_overrides(base, {"loss_mode": "lm_only", "fusion_mode": "clip_only"})
        assert out.loss_mode == "lm_only"
        assert out.model.fusion_mode == "clip_only"
        assert base.loss_mode == "joint"

    def test_unknown_override_rejected(self):
        with pytest.raises(ValueError):
            apply_overrides(tiny_train_config(), {"warmup": 10})


class TestAnswerText:
    def test_full_cot_is_the_canonical_annotation(self, data):
        doc = parse(data[0].annotation_text)
        assert answer_text(doc, "full_cot") == data[0].annotation_text

    def test_interpretation_strips_structure(self, data):
        doc = parse(data[0].annotation_text)
        text = answer_text(doc, "interpretation_no_cot")
        assert "<" not in text and "Low-level" not in text
        assert doc.caption in text
        assert text.endswith(doc.conclusion.text)

    def test_binary_answer_is_conclusion_only(self, data):
        doc = parse(data[-1].annotation_text)
        assert answer_text(doc, "binary_answer") == "This image is fake."

    def test_unknown_mode_rejected(self, data):
        doc = parse(data[0].annotation_text)
        with pytest.raises(ValueError):
            answer_text(doc, "haiku")


class TestBuildSequences:
    def test_masks_cover_everything_after_bos(self, vocab, data):
        pattern = classification_pattern(vocab, "full_cot")
        toks, masks, fake = build_sequences(data, vocab, "full_cot", pattern)
        assert len(toks) == len(data)
        for ids, mask in zip(toks, masks):
            assert ids[0] == vocab.bos_id and ids[-1] == vocab.eos_id
            assert mask[0] is False and all(mask[1:])
            assert len(ids) == len(mask)
        assert fake.tolist() == [s.label == "fake" for s in data]

    def test_unparseable_annotation_names_the_sample(self, vocab, data):
        bad = LoadedSample(
            id="broken-00001", image=data[0].image, label=data[0].label,
            annotation_text="no stages here", attributes=data[0].profile.attributes,
        )
        pattern = classification_pattern(vocab, "full_cot")
        with pytest.raises(ValueError, match="broken-00001"):
            build_sequences([bad], vocab, "full_cot", pattern)

    def test_out_of_vocabulary_word_names_the_sample(self, vocab, data):
        mangled = data[0].annotation_text.replace("image is", "image definitely is")
        bad = LoadedSample(
            id="oov-00001", image=data[0].image, label=data[0].label,
            annotation_text=mangled, attributes=data[0].profile.attributes,
        )
        pattern = classification_pattern(vocab, "full_cot")
        with pytest.raises(ValueError, match="oov-00001"):
            build_sequences([bad], vocab, "full_cot", pattern)

    def test_missing_pattern_names_the_sample(self, vocab, data):
        # binary answers carry no conclusion tag, so the staged pattern
        # cannot be found in them
        pattern = classification_pattern(vocab, "full_cot")
        ids = [vocab.bos_id] + vocab.encode_text("This image is real.") + [vocab.eos_id]
        assert vocab.id_of("<CONCLUSION>") not in ids
        from fakelab.train import find_classification_index
        from fakelab.cpm import PatternNotFound

        with pytest.raises(PatternNotFound):
            find_classification_index(ids, pattern)


class TestTrainLoop:
    def test_trace_length_and_finiteness(self, data):
        res = train_model(data, tiny_train_config())
        assert len(res.trace) == 8
        for row in res.trace:
            assert np.isfinite(row["lm_loss"]) and np.isfinite(row["ce_loss"])
            assert row["total"] == pytest.approx(row["lm_loss"] + row["ce_loss"])

    def test_training_is_bitwise_deterministic(self, data):
        a = train_model(data, tiny_train_config())
        b = train_model(data, tiny_train_config())
        assert a.trace == b.trace
        pa, pb = a.model.trainable_params(), b.model.trainable_params()
        for k in pa:
            assert np.array_equal(pa[k].data, pb[k].data)

    def test_loss_mode_changes_the_optimized_objective(self, data):
        lm_only = train_model(data, tiny_train_config(loss_mode="lm_only"))
        joint = train_model(data, tiny_train_config())
        assert lm_only.trace[-1]["total"] == pytest.approx(lm_only.trace[-1]["lm_loss"])
        assert joint.trace[-1]["total"] == pytest.approx(
            joint.trace[-1]["lm_loss"] + joint.trace[-1]["ce_loss"]
        )

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_model([], tiny_train_config())

    def test_trace_csv_round_trip(self, data, tmp_path):
        res = train_model(data, tiny_train_config())
        path = tmp_path / "trace.csv"
        write_trace(path, res.trace)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(res.trace)
        assert float(rows[0]["lm_loss"]) == pytest.approx(res.trace[0]["lm_loss"])
        assert rows[3]["step"] == "3"


class TestEvaluate:
    def test_report_shape(self, data):
        res = train_model(data, tiny_train_config())
        report, preds = evaluate_model(res.model, data)
        assert report.sample_count == len(data)
        assert set(report.accuracy_percent) == {"real", "fake"}
        assert len(preds) == len(data)
        assert 0.0 <= report.fail_rate_percent <= 100.0

    def test_evaluation_is_deterministic(self, data):
        res = train_model(data, tiny_train_config())
        r1, p1 = evaluate_model(res.model, data)
        r2, p2 = evaluate_model(res.model, data)
        assert r1.to_dict() == r2.to_dict()
        assert [p.text for p in p1] == [p.text for p in p2]

    def test_empty_eval_set_rejected(self, data):
        res = train_model(data, tiny_train_config())
        with pytest.raises(ValueError):
            evaluate_model(res.model, [])


class TestConsistency:
    def test_greedy_rounds_never_disagree(self, data):
        res = train_model(data, tiny_train_config())
        value = model_inconsistency(res.model, data[:3], rounds=4, temperature=0.0)
        assert value == 0.0

    def test_sampled_rounds_are_reproducible(self, data):
        res = train_model(data, tiny_train_config())
        a = model_inconsistency(res.model, data[:3], rounds=4, temperature=0.7, base_seed=5)
        b = model_inconsistency(res.model, data[:3], rounds=4, temperature=0.7, base_seed=5)
        assert a == b


class TestPaired:
    def test_arms_share_data_and_report_per_seed(self, data):
        base = tiny_train_config()
        calls = []

        def make_data(seed):
            calls.append(seed)
            return data, data[:4]

        results = run_paired(
            base,
            {"joint": {}, "lm_only": {"loss_mode": "lm_only"}},
            seeds=[3, 4],
            make_data=make_data,
        )
        assert set(results) == {"joint", "lm_only"}
        assert set(results["joint"]) == {3, 4}
        assert calls == [3, 4]  # one dataset per seed, shared by both arms
        for arm in results.values():
            for report in arm.values():
                assert report.sample_count == 4
