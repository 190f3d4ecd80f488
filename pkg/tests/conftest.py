import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def pytest_addoption(parser):
    parser.addoption("--pipeline-cache", action="store", default=None,
                     help="Directory for cached trained-pipeline artifacts "
                          "(speeds up repeated acceptance runs).")


@pytest.fixture(scope="session")
def pipeline(request):
    """Synthetic corpora plus every trained model the acceptance suite shares.

    Training happens once per session; with --pipeline-cache the trained
    weights round-trip through checkpoints instead of retraining.
    """
    from plansum.abstractor import (generate_candidates, load_candidates,
                                    save_candidates, train_abstractor)
    from plansum.planner import build_planner, train_planner
    from plansum.plans import greedy_oracle
    from plansum.reranker import train_reranker
    from plansum.seq2seq import (DecodeConfig, ModelConfig, TrainConfig, Vocab,
                                 build_model, load_checkpoint, save_checkpoint)
    from plansum.synth import synth_corpus

    cache_dir = request.config.getoption("--pipeline-cache")
    cache = Path(cache_dir) if cache_dir else None
    if cache:
        cache.mkdir(parents=True, exist_ok=True)

    sents = dict(min_sents=3, max_sents=3)
    train_docs = synth_corpus(256, seed=11, **sents)
    test_docs = synth_corpus(64, seed=13, **sents)
    overfit_docs = synth_corpus(32, seed=17, **sents)

    streams = []
    for doc in train_docs + overfit_docs:
        streams.extend(doc.tokens)
        streams.append(doc.reference_tokens())
    vocab = Vocab.build(streams)

    oracles = {d.id: greedy_oracle(d, d.reference_tokens())
               for d in train_docs + test_docs + overfit_docs}

    model_config = ModelConfig(vocab_size=len(vocab), d_model=64, n_heads=4,
                               dropout=0.1, seed=0, copy_attention=True)
    plan_decode = DecodeConfig(num_candidates=16, beam_size=16, min_len=2, max_len=20,
                               length_penalty=1.0)
    summary_decode = DecodeConfig(num_candidates=16, beam_size=4, min_len=4, max_len=36,
                                  length_penalty=2.0)

    def cached(name, kind, builder, trainer):
        path = cache / f"{name}.pt" if cache else None
        if path and path.exists():
            ckpt = load_checkpoint(path, expect_kind=kind)
            model = builder(ckpt.config)
            model.load_state_dict(ckpt.state_dict)
            model.eval()
            return model
        model = builder(model_config)
        trainer(model)
        model.eval()
        if path:
            save_checkpoint(path, kind=kind, config=model_config, vocab=vocab, model=model)
        return model

    planner_model = cached(
        "planner", "planner",
        lambda cfg: build_planner(cfg, vocab),
        lambda m: train_planner(m, train_docs, oracles,
                                TrainConfig(steps=400, batch_size=8, lr=1e-3,
                                            log_every=0, seed=0)))
    abstractor_cfg = TrainConfig(steps=1200, batch_size=8, lr=1e-3, log_every=0, seed=0)
    guided = cached(
        "abstractor-guided", "abstractor", build_model,
        lambda m: train_abstractor(m, vocab, train_docs, oracles, abstractor_cfg,
                                   lam=1.0, beta=1.0, distractor_seed=0))
    ablated = cached(
        "abstractor-ablated", "abstractor", build_model,
        lambda m: train_abstractor(m, vocab, train_docs, oracles, abstractor_cfg,
                                   lam=0.0, beta=1.0, distractor_seed=0))

    overfit_planner = cached(
        "overfit-planner", "planner",
        lambda cfg: build_planner(cfg, vocab),
        lambda m: train_planner(m, overfit_docs, oracles,
                                TrainConfig(steps=300, batch_size=8, lr=1e-3,
                                            log_every=0, seed=1)))
    overfit_abstractor = cached(
        "overfit-abstractor", "abstractor", build_model,
        lambda m: train_abstractor(m, vocab, overfit_docs, oracles,
                                   TrainConfig(steps=800, batch_size=8, lr=1e-3,
                                               log_every=0, seed=1),
                                   lam=1.0, beta=1.0, distractor_seed=1))

    def gen_sets(name, model, method, docs):
        path = cache / f"{name}.jsonl" if cache else None
        if path and path.exists():
            return load_candidates(path)
        decode = summary_decode if method == "pga" else summary_decode.replace(beam_size=16)
        sets = [generate_candidates(planner_model, model, vocab, doc, method,
                                    decode, plan_decode) for doc in docs]
        if path:
            save_candidates(sets, path)
        return sets

    pga_sets = gen_sets("pga-test", guided, "pga", test_docs)
    beam_sets = gen_sets("beam-test", guided, "beam", test_docs)
    pga_ablated_sets = gen_sets("pga-ablated-test", ablated, "pga", test_docs)
    reranker_train_sets = gen_sets("beam-train", guided, "beam", train_docs[:64])

    docs_by_id = {d.id: d for d in train_docs + test_docs + overfit_docs}

    def train_rr(m):
        m.load_state_dict(guided.state_dict())
        train_reranker(m, vocab, docs_by_id, reranker_train_sets,
                       TrainConfig(steps=200, batch_size=4, lr=1e-4, log_every=0, seed=2),
                       alpha=1.0, margin=0.001)

    reranker_model = cached("reranker", "reranker", build_model, train_rr)

    return {
        "train_docs": train_docs,
        "test_docs": test_docs,
        "overfit_docs": overfit_docs,
        "docs_by_id": docs_by_id,
        "vocab": vocab,
        "oracles": oracles,
        "model_config": model_config,
        "plan_decode": plan_decode,
        "summary_decode": summary_decode,
        "planner": planner_model,
        "guided": guided,
        "ablated": ablated,
        "overfit_planner": overfit_planner,
        "overfit_abstractor": overfit_abstractor,
        "reranker": reranker_model,
        "pga_sets": pga_sets,
        "beam_sets": beam_sets,
        "pga_ablated_sets": pga_ablated_sets,
    }
