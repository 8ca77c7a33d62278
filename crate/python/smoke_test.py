"""Smoke test for the stackformer_py extension.

Build and install first:

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/stackformer_py-*.whl

then run `python python/smoke_test.py`.
"""

import math
import os
import tempfile

import stackformer_py as sf


def check_oracle():
    words = ["the", "dog", "barks"]
    heads = [2, 3, 0]
    labels = ["det", "nsubj", "root"]
    actions = sf.oracle(words, heads, labels)
    assert actions[-1] == "</a>", actions
    assert len(actions) == 2 * len(words) + 1
    assert sf.recover_graph(words, actions) == (heads, labels)

    decorated = sf.oracle(words, heads, labels, shift_words=["dog"])
    assert "SHIFT(dog)" in decorated, decorated

    dump = sf.plan_dump(len(words), actions)
    assert dump.startswith("step 1 head 0 stack\n"), dump


def check_train_and_parse(workdir):
    train_path = os.path.join(workdir, "train.conllu")
    dev_path = os.path.join(workdir, "dev.conllu")
    assert sf.synth_conllu(train_path, sentences=40, seed=3, max_words=12) == 40
    sf.synth_conllu(dev_path, sentences=10, seed=4, max_words=12)

    out = os.path.join(workdir, "run")
    best, las = sf.train(train_path, dev_path, out, variant="c", epochs=2, token_budget=256)
    assert os.path.exists(best), best
    assert 0.0 <= las <= 100.0

    parser = sf.Parser([best])
    assert parser.actions[0] == "</a>"
    words = ["noun1", "tverb0", "noun2", "."]
    heads, labels, actions, log_prob = parser.parse(words, beam=4)
    assert len(heads) == len(labels) == len(words)
    assert sf.recover_graph(words, actions) == (heads, labels)
    assert log_prob <= 0.0 and math.isfinite(log_prob)

    pred = os.path.join(workdir, "pred.conllu")
    parser.parse_file(dev_path, pred)
    uas, las = sf.evaluate(dev_path, pred)
    assert 0.0 <= las <= uas <= 100.0
    uas_gold, las_gold = sf.evaluate(dev_path, dev_path)
    assert uas_gold == las_gold == 100.0

    last = os.path.join(out, "checkpoint_last.json")
    averaged = sf.Parser([best, last])
    averaged.parse(words)

    try:
        parser.parse(words, beam=0)
    except ValueError:
        pass
    else:
        raise AssertionError("beam 0 accepted")
    return uas, las


def main():
    check_oracle()
    with tempfile.TemporaryDirectory() as workdir:
        uas, las = check_train_and_parse(workdir)
    print(f"smoke test ok (dev UAS {uas:.2f}, LAS {las:.2f})")


if __name__ == "__main__":
    main()
