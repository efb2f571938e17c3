import numpy as np
import pytest

from rbert import nn
from rbert.data import FAMILIES, OTHER, RelationInstance, parse_label
from rbert.model import Variant
from rbert.scorer import score
from rbert.synthetic import candidate_tokens, majority_baseline, make_synthetic_task, synthetic_classes
from rbert.tokenizer import Vocab, encode_all, pad_batch
from rbert.trainer import (
    PROFILES,
    ConfigError,
    NumericError,
    TrainConfig,
    evaluate,
    init_model,
    metrics_log,
    train,
)


def tiny_config(**kw):
    base = dict(max_len=32, hidden_size=16, num_layers=1, num_heads=2, ff_size=32, epochs=2, batch_size=8)
    base.update(kw)
    return TrainConfig.for_profile("scratch", **base)


@pytest.fixture(scope="module")
def task():
    train_inst, test_inst = make_synthetic_task(3, 10, 60, 26, seed=5)
    vocab = Vocab.build(train_inst)
    return train_inst, test_inst, vocab


def test_profiles():
    ft = TrainConfig.for_profile("finetune")
    assert (ft.batch_size, ft.max_len, ft.learning_rate, ft.epochs, ft.dropout) == (16, 128, 2e-5, 5, 0.1)
    assert TrainConfig() == ft
    sc = TrainConfig.for_profile("scratch")
    assert (sc.learning_rate, sc.num_layers, sc.hidden_size, sc.num_heads, sc.epochs) == (1e-3, 2, 32, 4, 200)
    with pytest.raises(ConfigError):
        TrainConfig.for_profile("huge")
    assert set(PROFILES) == {"finetune", "scratch"}


def test_config_text_round_trip():
    cfg = tiny_config(variant=Variant.NO_ENT, seed=9, train_file="a/b.txt")
    again = TrainConfig.from_text(cfg.to_text())
    assert again == cfg
    assert TrainConfig.from_text("profile = scratch\nepochs = 3  # short\n", seed=4).epochs == 3
    assert TrainConfig.from_text("profile = scratch\n", seed=4).seed == 4
    with pytest.raises(ConfigError, match="unknown config key"):
        TrainConfig.from_text("colour = blue\n")
    with pytest.raises(ConfigError, match="bad value"):
        TrainConfig.from_text("epochs = many\n")


def test_synthetic_sizes_and_balance():
    train_inst, test_inst = make_synthetic_task(6, 24, 600, 200, seed=0)
    assert (len(train_inst), len(test_inst)) == (600, 200)
    ids = [i.id for i in train_inst + test_inst]
    assert sorted(ids) == list(range(1, 801))
    counts = {}
    for inst in test_inst:
        counts[inst.label] = counts.get(inst.label, 0) + 1
    assert set(counts) == set(synthetic_classes(6))
    assert max(counts.values()) - min(counts.values()) <= 1


def test_synthetic_label_follows_marked_tokens():
    cands = candidate_tokens(4)
    train_inst, _ = make_synthetic_task(4, 8, 200, 10, seed=1)
    for inst in train_inst:
        (t1,), (t2,) = inst.e1_words, inst.e2_words
        i, j = cands.index(t1), cands.index(t2)
        if i // 2 == j // 2 and i != j:
            fam = FAMILIES[i // 2]
            expected = parse_label(f"{fam}(e1,e2)" if i % 2 == 0 else f"{fam}(e2,e1)")
        else:
            expected = parse_label(OTHER)
        assert inst.label == expected


def test_synthetic_sentences_are_label_ambiguous_without_markers():
    cands = set(candidate_tokens(6))
    train_inst, test_inst = make_synthetic_task(6, 24, 300, 100, seed=2)
    for inst in train_inst + test_inst:
        occurrences = [w for w in inst.sentence if w in cands]
        assert len(occurrences) >= 2
        # every candidate appears, so any marked pair is a possible reading of the bare sentence
        assert set(occurrences) == cands


def test_majority_baseline_bound():
    for families in (2, 4, 6, 9):
        train_inst, test_inst = make_synthetic_task(families, 20, 400, 200, seed=families)
        gold = [(i.id, i.label) for i in test_inst]
        f1 = score(gold, majority_baseline(train_inst, test_inst)).macro_f1
        assert f1 < 2 / families * 100


def test_synthetic_rejects_single_family():
    with pytest.raises(ValueError):
        make_synthetic_task(1, 10, 10, 10, seed=0)


def test_zero_epochs_returns_initialisation(task):
    train_inst, _, vocab = task
    cfg = tiny_config(epochs=0)
    model, history = train(encode_all(train_inst, vocab, 32), cfg, len(vocab))
    ref = init_model(cfg, len(vocab))
    assert history == []
    for name, p in model.params.items():
        assert p.value.tobytes() == ref.params[name].value.tobytes()


def test_training_is_deterministic(task):
    train_inst, _, vocab = task
    data = encode_all(train_inst, vocab, 32)
    cfg = tiny_config(seed=3)
    m1, h1 = train(data, cfg, len(vocab))
    m2, h2 = train(data, cfg, len(vocab))
    assert h1 == h2
    for name in m1.params:
        assert m1.params[name].value.tobytes() == m2.params[name].value.tobytes()
    m3, _ = train(data, cfg.replace(seed=4), len(vocab))
    assert m3.head.W3.value.tobytes() != m1.head.W3.value.tobytes()


def test_metrics_length_and_log_format(task):
    train_inst, _, vocab = task
    cfg = tiny_config(epochs=3)
    _, history = train(encode_all(train_inst, vocab, 32), cfg, len(vocab))
    assert [m.epoch for m in history] == [1, 2, 3]
    text = metrics_log(cfg, history)
    lines = text.splitlines()
    assert "# beta1 = 0.9" in lines and "# epsilon = 1e-08" in lines
    body = [ln for ln in lines if not ln.startswith("#")]
    assert body[0] == "epoch\tloss\taccuracy"
    assert len(body) == 4
    assert all(len(ln.split("\t")) == 3 for ln in body)


def test_memorises_single_example(task):
    train_inst, _, vocab = task
    data = encode_all(train_inst[:1], vocab, 32)
    cfg = tiny_config(epochs=150, dropout=0.0, learning_rate=3e-3)
    model, history = train(data, cfg, len(vocab))
    assert history[-1].loss < 0.01
    loss, _ = model.loss_and_backward(pad_batch(data))
    assert loss < 0.01


def test_fixed_batch_loss_non_increasing_in_first_epoch():
    # linearly separable: the relation is fixed by the e1 token alone
    words = ["cand0a", "w1", "cand0b", "w2"]
    labels = [parse_label("Cause-Effect(e1,e2)"), parse_label("Cause-Effect(e2,e1)")]
    insts = [RelationInstance(k + 1, tuple(words), (0, 0) if k % 2 == 0 else (2, 2), (2, 2) if k % 2 == 0 else (0, 0),
                              labels[k % 2]) for k in range(16)]
    vocab = Vocab.build(insts)
    data = encode_all(insts, vocab, 16)
    batch = pad_batch(data)
    losses = []

    def probe(step, model):
        losses.append(model.loss_and_backward(batch)[0])
        model.zero_grad()

    cfg = tiny_config(epochs=1, batch_size=2, dropout=0.0, learning_rate=1e-3, max_len=16)
    train(data, cfg, len(vocab), on_step=probe)
    assert len(losses) == 8
    assert all(b <= a + 1e-7 for a, b in zip(losses, losses[1:]))


def test_duplicated_batch_gives_same_gradient(task):
    train_inst, _, vocab = task
    data = encode_all(train_inst[:6], vocab, 32)
    model = init_model(tiny_config(dtype="float64", dropout=0.0), len(vocab))
    model.loss_and_backward(pad_batch(data))
    g1 = {n: p.grad.copy() for n, p in model.params.items()}
    model.zero_grad()
    model.loss_and_backward(pad_batch(data + data))
    for n, p in model.params.items():
        # k_b has an analytically zero gradient, hence the absolute floor
        assert np.abs(p.grad - g1[n]).max() <= 1e-6 * np.abs(g1[n]).max() + 1e-12, n


def test_evaluate(task):
    train_inst, test_inst, vocab = task
    data = encode_all(test_inst, vocab, 32)
    model = init_model(tiny_config(), len(vocab))
    preds, acc = evaluate(data, model)
    preds2, acc2 = evaluate(data, model, batch_size=7)
    assert preds == preds2 and acc == acc2
    gold = {i.id: i.label for i in test_inst}
    naive = sum(gold[i] == lab for i, lab in preds) / len(preds)
    assert acc == pytest.approx(naive)


def test_evaluate_all_gold_is_one(task):
    _, test_inst, vocab = task
    data = encode_all(test_inst, vocab, 32)
    model = init_model(tiny_config(num_labels=19), len(vocab))
    # force every prediction to the gold label through the classifier bias, per example
    for ex in data:
        model.head.W3.value[:] = 0
        model.head.b3.value[:] = 0
        model.head.b3.value[ex.label_index] = 10
        _, acc = evaluate([ex], model)
        assert acc == 1.0


def test_rejects_bad_inputs(task):
    train_inst, _, vocab = task
    with pytest.raises(ValueError, match="empty"):
        train([], tiny_config(), len(vocab))
    data = encode_all(train_inst[:4], vocab, 32)
    with pytest.raises(ValueError, match="label index"):
        train(data, tiny_config(num_labels=3), len(vocab))
    with pytest.raises(ValueError, match="marker-free"):
        train(data, tiny_config(variant=Variant.NO_SEP), len(vocab))


def test_nan_loss_raises_numeric_error(task, monkeypatch):
    train_inst, _, vocab = task
    data = encode_all(train_inst[:4], vocab, 32)
    monkeypatch.setattr(nn, "softmax_cross_entropy", lambda logits, t: (float("nan"), np.zeros_like(logits)))
    with pytest.raises(NumericError):
        train(data, tiny_config(), len(vocab))
