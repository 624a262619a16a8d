import numpy as np

from kens.datasets import make_bilingual_space, make_complementary_kgs, make_grid_kg


def test_grid():
    kg = make_grid_kg(7)
    assert kg.n_entities == 49 and len(kg.train) == 154


def test_complementary_kgs():
    kgs, seeds, truth = make_complementary_kgs(seed=0)
    el, ja, en = kgs
    assert len(el.train) < len(ja.train) and len(el.train) < len(en.train)
    for store in seeds:
        full = truth[(store.kg_a, store.kg_b)]
        assert all(full[a] == b for a, b in store.pairs().tolist())
        assert abs(len(store) - 0.4 * len(full)) <= 1
    # every fact a KG holds is a fact of the shared universe
    names = lambda kg: {tuple(x.split(":")[-1] for x in kg.decode(t)) for t in kg.train}
    assert names(el) & names(ja)


def test_bilingual_space():
    a, b, perm = make_bilingual_space(n=10, dim=4, noise=0.0, seed=0)
    assert np.allclose(b[perm], a)
