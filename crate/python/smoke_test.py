"""Smoke test for the lerp_py extension module.

Build and install it first:

    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/lerp_py-*.whl
"""

import os
import sys
import tempfile

import lerp_py

def write_couples(root, count, held_out):
    """Couples (p2i, p2i+1); a few husband facts are kept for test."""
    train, test = [], []
    for i in range(count):
        h, w = f"p{2 * i}", f"p{2 * i + 1}"
        train.append((w, "wife", h))
        (test if i < held_out else train).append((h, "husband", w))
    for name, rows in [("train.txt", train), ("valid.txt", test), ("test.txt", test)]:
        with open(os.path.join(root, name), "w") as f:
            f.writelines(f"{a}\t{r}\t{b}\n" for a, r, b in rows)


def main():
    tiny = lerp_py.KnowledgeGraph.from_triplets(3, 2, [(0, 0, 1), (1, 1, 2), (0, 1, 2)])
    # the only r0,r1 walk from 0 is 0 -> 1 -> 2
    assert lerp_py.count_paths(tiny, [0, 1], 0) == [0, 0, 1]

    with tempfile.TemporaryDirectory() as d:
        write_couples(d, 30, 6)
        g = lerp_py.KnowledgeGraph.load(d)
    assert g.num_entities == 60 and g.num_relations == 2, g
    husband = g.relation_id("husband")

    cfg = lerp_py.TrainConfig(m=4, T=1, K=2, rules_per_relation=3, epochs=15, batch_size=16, seed=11)
    model, losses = lerp_py.train(cfg, g)
    assert losses[-1] < losses[0], losses
    print("losses", [round(x, 4) for x in losses])

    report = model.evaluate(g, "test")
    print("test MRR", round(report["mrr"], 4))
    assert report["mrr"] > 0.9, report

    scores = model.score(g, 0, husband)
    assert len(scores) == 60

    lerp = model.lerp_matrix(g)
    assert len(lerp) == 5 and all(0.0 <= v <= 1.0 for row in lerp for v in row)

    rules = model.rules()
    top = [text for target, _, text in rules if target == "husband"][0]
    print("top husband rule:", top)
    assert top == "wife(y,x) ⇒ husband(x,y)", top

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.ckpt")
        model.save(path)
        again = lerp_py.Model.load(path)
        assert again.rules() == rules

    try:
        lerp_py.TrainConfig(m=0)
    except ValueError as e:
        assert "`m`" in str(e), e
    else:
        raise AssertionError("m=0 accepted")

    summaries, ok = lerp_py.oracle_check(oracle_cases=20, gradient_cases=5, bound_cases=2)
    for s in summaries:
        print(s)
    assert ok

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
