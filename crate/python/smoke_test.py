"""Exercises the Python bindings end to end on a few hand-sized inputs.

Build first with `maturin develop -m crates/python/Cargo.toml`, then run
`python python/smoke_test.py`.
"""

import math

import culturebridge_py as cb


def main():
    profile = cb.classify_script("Seoul 서울 首尔")
    assert profile["latin"] == 5 and profile["hangul"] == 2 and profile["han"] == 2, profile

    docs = [
        {"id": "a", "lang": "ko", "text": "김치는 맛있다 kimchi", "source": "t"},
        {"id": "b", "lang": "ko", "text": "!!!", "source": "t"},
    ]
    kept, dropped = cb.filter_corpus(docs, "hangul")
    assert [d["text"] for d in kept] == ["김치는 맛있다 "], kept
    assert [d["id"] for d in dropped] == ["b"]
    chunks = cb.chunk_corpus(kept, 3)
    assert "".join(c["text"] for c in chunks) == kept[0]["text"]

    pair = {"id": "p1", "en_text": "Kimchi is spicy.", "xx_text": "김치는 맵다.", "lang": "ko"}
    bridged = cb.render_bridge(pair)
    assert bridged["text"] == "English: Kimchi is spicy. Korean: 김치는 맵다.", bridged
    assert {d["id"] for d in cb.explode_pairs([pair])} == {"half:en:p1", "half:xx:p1"}

    model = cb.NGramModel.train(["ab"], order=1, k=1.0)
    # vocabulary {a, b, EOS, UNK}; three events
    assert math.isclose(cb.NGramModel.from_json(model.to_json()).score("a")["logprob_sum"],
                        math.log(2 / 7) + math.log(2 / 7))

    question = {
        "id": "q1", "pair_id": "p1", "culture": "ko", "lang": "en",
        "text": "The capital of Korea is ____.",
        "candidates": ["Seoul", "Busan", "Daegu", "Incheon"], "gold_index": 0,
    }
    assert cb.instantiate(question, 1) == "The capital of Korea is Busan."
    capital = cb.NGramModel.train(["The capital of Korea is Seoul."] * 3, order=3)
    assert capital.predict(question)["index"] == 0
    run = capital.evaluate([question], "no_bridge", 100)
    assert run["accuracy"] == 1.0

    assert cb.ema_smooth([(0, 0.0), (100, 1.0)], 0.8) == [(0, 0.0), (100, 0.2)]
    assert cb.transfer_gap([(0, 0.5), (1, 0.75)], [(0, 0.25), (1, 0.75)]) == [(0, 0.25), (1, 0.0)]

    assert cb.tokenize("Kimchi, KIMCHI!", "en") == ["kimchi", "kimchi"]
    index = cb.Index([{"chunk_id": "c#0", "doc_id": "c", "text": "a a b", "char_len": 5}], "en")
    assert len(index) == 1
    hit = index.search("a")[0]
    assert math.isclose(hit["score"], math.log(4 / 3) * 1.375), hit

    assert cb.lexical_entails("Seoul hosts kimchi festivals", "kimchi festivals in Seoul", "en")

    print("smoke test ok")


if __name__ == "__main__":
    main()
