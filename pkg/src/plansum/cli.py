"""Operator CLI: deterministic, resumable pipeline stages.

Every command reads and writes the documented JSONL/checkpoint formats,
exits 0 on success, and on failure writes a machine-readable JSON error
record to stderr. Completed stages are skipped unless --force is given.
Flag values override the optional --config JSON file.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import abstractor as abst
from . import analysis, llm, planner, reranker, synth
from .corpus import CorpusError, load_jsonl, save_jsonl, segment as segment_text
from .plans import ContentPlan, greedy_oracle, load_plans, save_plans
from .plans_io import load_plan_beams, save_plan_beams
from .seq2seq.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .seq2seq.config import DecodeConfig, ModelConfig, TrainConfig, PLAN_DECODE
from .seq2seq.model import build_model
from .seq2seq.vocab import Vocab

log = logging.getLogger("plansum")

# guided-objective weight presets
ABSTRACTOR_PRESETS = {
    "cnn": {"lam": 1.0, "beta": 10.0},
    "nyt": {"lam": 1.0, "beta": 0.0},
}

SUMMARY_DECODE = DecodeConfig(num_candidates=16, beam_size=4, min_len=4, max_len=48,
                              length_penalty=2.0, nucleus_p=0.92, diversity_penalty=1.0)


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _fail(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(1)


def _guarded(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CliError as exc:
            _fail(exc.kind, str(exc))
        except FileNotFoundError as exc:
            _fail("missing_input", str(exc))
        except CorpusError as exc:
            _fail("schema_violation", str(exc))
        except CheckpointError as exc:
            _fail("checkpoint_mismatch", str(exc))
        except (ValueError, KeyError) as exc:
            _fail("bad_arguments", str(exc))

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise CliError("schema_violation", f"config file {path} must hold a JSON object")
    return data


def _resolve(config: dict, key: str, flag_value, default):
    if flag_value is not None:
        return flag_value
    return config.get(key, default)


def _skip_existing(out_path: str, force: bool) -> bool:
    if Path(out_path).exists() and not force:
        click.echo(f"{out_path} already exists; skipping (use --force to redo)")
        return True
    return False


def _require(path: str, what: str) -> str:
    if not Path(path).exists():
        raise CliError("missing_input", f"{what} not found: {path}")
    return path


def _build_vocab(docs) -> Vocab:
    streams = []
    for doc in docs:
        for sent in doc.tokens:
            streams.append(sent)
        if doc.reference:
            streams.append(doc.reference_tokens())
    return Vocab.build(streams)


def _model_config(vocab_size: int, config: dict, seed: int, d_model: int | None,
                  dropout: float | None) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        d_model=_resolve(config, "d_model", d_model, 128),
        n_heads=config.get("n_heads", 4),
        token_encoder_layers=config.get("token_encoder_layers", 2),
        edu_encoder_layers=config.get("edu_encoder_layers", 2),
        decoder_layers=config.get("decoder_layers", 2),
        max_positions=config.get("max_positions", 512),
        dropout=_resolve(config, "dropout", dropout, 0.1),
        seed=seed,
    )


def _train_config(config: dict, steps: int | None, batch_size: int | None,
                  lr: float | None, seed: int) -> TrainConfig:
    return TrainConfig(
        steps=_resolve(config, "steps", steps, 1500),
        batch_size=_resolve(config, "batch_size", batch_size, 8),
        lr=_resolve(config, "lr", lr, 3e-4),
        weight_decay=config.get("weight_decay", 5e-5),
        warmup_steps=config.get("warmup_steps", 100),
        seed=seed,
        log_every=config.get("log_every", 200),
        eval_every=config.get("eval_every", 0),
    )


def _decode_config(config: dict, base: DecodeConfig, k: int | None,
                   seed: int) -> DecodeConfig:
    overrides = {key: config[key] for key in (
        "beam_size", "min_len", "max_len", "length_penalty", "nucleus_p",
        "diversity_penalty", "temperature") if key in config}
    if k is not None:
        overrides["num_candidates"] = k
    overrides["rng_seed"] = seed
    return base.replace(**overrides)


@click.group()
@click.option("--verbose", is_flag=True, help="Enable info-level logging.")
def main(verbose: bool):
    """Plan-guided summarization pipeline."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


def common_options(fn):
    fn = click.option("--config", "config_path", type=str, default=None,
                      help="JSON config file; flags override its values.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Run seed.")(fn)
    fn = click.option("--force", is_flag=True, help="Redo the stage even if output exists.")(fn)
    return fn


@main.command("synth")
@click.option("--docs", "num_docs", type=int, required=True)
@click.option("--out", "out_path", type=str, required=True)
@click.option("--min-sents", type=int, default=3, show_default=True)
@click.option("--max-sents", type=int, default=4, show_default=True)
@common_options
@_guarded
def synth_cmd(num_docs, out_path, min_sents, max_sents, config_path, seed, force):
    """Emit a deterministic synthetic corpus as JSONL."""
    config = _load_config(config_path)
    seed = _resolve(config, "seed", seed, 0)
    if _skip_existing(out_path, force):
        return
    docs = synth.synth_corpus(num_docs, seed, min_sents, max_sents)
    save_jsonl(docs, out_path)
    click.echo(f"wrote {len(docs)} documents to {out_path}")


@main.command("segment")
@click.option("--input", "in_path", type=str, required=True,
              help="JSONL of {id, text, reference} records (edus optional).")
@click.option("--out", "out_path", type=str, required=True)
@click.option("--min-edu-tokens", type=int, default=5, show_default=True)
@common_options
@_guarded
def segment_cmd(in_path, out_path, min_edu_tokens, config_path, seed, force):
    """Segment raw documents into extraction units."""
    _require(in_path, "input corpus")
    if _skip_existing(out_path, force):
        return
    docs = load_jsonl(in_path, min_edu_tokens=min_edu_tokens)
    save_jsonl(docs, out_path)
    click.echo(f"segmented {len(docs)} documents into {out_path}")


@main.command("oracle")
@click.option("--corpus", "corpus_path", type=str, required=True)
@click.option("--out", "out_path", type=str, required=True)
@click.option("--max-len", type=int, default=20, show_default=True)
@common_options
@_guarded
def oracle_cmd(corpus_path, out_path, max_len, config_path, seed, force):
    """Compute greedy oracle plans for every document with a reference."""
    _require(corpus_path, "corpus")
    if _skip_existing(out_path, force):
        return
    docs = load_jsonl(corpus_path)
    rows = []
    skipped = 0
    for doc in docs:
        if not doc.reference:
            skipped += 1
            continue
        rows.append((doc.id, greedy_oracle(doc, doc.reference_tokens(), max_len=max_len)))
    save_plans(rows, out_path)
    note = f" ({skipped} without references skipped)" if skipped else ""
    click.echo(f"wrote {len(rows)} oracle plans to {out_path}{note}")


@main.command("train-planner")
@click.option("--corpus", "corpus_path", type=str, required=True)
@click.option("--plans", "plans_path", type=str, required=True)
@click.option("--out", "out_path", type=str, required=True)
@click.option("--steps", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--d-model", type=int, default=None)
@click.option("--dropout", type=float, default=None)
@click.option("--init-from", "init_path", type=str, default=None,
              help="Abstractor checkpoint whose token encoder seeds the planner.")
@common_options
@_guarded
def train_planner_cmd(corpus_path, plans_path, out_path, steps, batch_size, lr,
                      d_model, dropout, init_path, config_path, seed, force):
    """Train the content-plan generator on oracle plans."""
    _require(corpus_path, "corpus")
    _require(plans_path, "oracle plans")
    config = _load_config(config_path)
    seed = _resolve(config, "seed", seed, 0)
    if _skip_existing(out_path, force):
        return
    docs = load_jsonl(corpus_path)
    oracles = load_plans(plans_path)
    if init_path:
        ckpt = load_checkpoint(_require(init_path, "init checkpoint"), expect_kind="abstractor")
        vocab = ckpt.vocab
        mconfig = _model_config(len(vocab), config, seed, d_model, dropout)
        if mconfig.d_model != ckpt.config.d_model:
            raise CliError("checkpoint_mismatch",
                           "planner d_model must match the init abstractor's")
        model = planner.build_planner(mconfig, vocab)
        donor = build_model(ckpt.config)
        donor.load_state_dict(ckpt.state_dict)
        planner.init_token_encoder_from(model, donor)
    else:
        vocab = _build_vocab(docs)
        mconfig = _model_config(len(vocab), config, seed, d_model, dropout)
        model = planner.build_planner(mconfig, vocab)
    tcfg = _train_config(config, steps, batch_size, lr, seed)
    losses = planner.train_planner(model, docs, oracles, tcfg)
    save_checkpoint(out_path, kind="planner", config=mconfig, vocab=vocab, model=model,
                    extra={"final_loss": losses[-1] if losses else None})
    click.echo(f"trained planner for {tcfg.steps} steps; checkpoint at {out_path}")


@main.command("train-abstractor")
@click.option("--corpus", "corpus_path", type=str, required=True)
@click.option("--plans", "plans_path", type=str, required=True)
@click.option("--out", "out_path", type=str, required=True)
@click.option("--preset", type=click.Choice(sorted(ABSTRACTOR_PRESETS)), default=None,
              help="Objective weight preset; individual flags override it.")
@click.option("--lambda", "lam", type=float, default=None, help="Plan-adherence weight.")
@click.option("--beta", type=float, default=None, help="No-plan regularization weight.")
@click.option("--steps", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--d-model", type=int, default=None)
@click.option("--dropout", type=float, default=None)
@click.option("--val-corpus", type=str, default=None,
              help="Validation corpus for oracle-guided checkpoint selection.")
@click.option("--eval-every", type=int, default=None)
@common_options
@_guarded
def train_abstractor_cmd(corpus_path, plans_path, out_path, preset, lam, beta, steps,
                         batch_size, lr, d_model, dropout, val_corpus, eval_every,
                         config_path, seed, force):
    """Train the plan-guided abstractor with the guided objective."""
    _require(corpus_path, "corpus")
    _require(plans_path, "oracle plans")
    config = _load_config(config_path)
    seed = _resolve(config, "seed", seed, 0)
    preset_weights = ABSTRACTOR_PRESETS[preset] if preset else ABSTRACTOR_PRESETS["cnn"]
    lam = _resolve(config, "lambda", lam, preset_weights["lam"])
    beta = _resolve(config, "beta", beta, preset_weights["beta"])
    if _skip_existing(out_path, force):
        return
    docs = load_jsonl(corpus_path)
    oracles = load_plans(plans_path)
    vocab = _build_vocab(docs)
    mconfig = _model_config(len(vocab), config, seed, d_model, dropout)
    model = build_model(mconfig)
    tcfg = _train_config(config, steps, batch_size, lr, seed)
    if eval_every is not None:
        tcfg.eval_every = eval_every
    val_docs = load_jsonl(_require(val_corpus, "validation corpus")) if val_corpus else None
    abst.train_abstractor(model, vocab, docs, oracles, tcfg, lam=lam, beta=beta,
                          distractor_seed=seed, val_docs=val_docs,
                          val_decode=SUMMARY_DECODE.replace(beam_size=1))
    save_checkpoint(out_path, kind="abstractor", config=mconfig, vocab=vocab, model=model,
                    extra={"lam": lam, "beta": beta})
    click.echo(f"trained abstractor (lambda={lam}, beta={beta}); checkpoint at {out_path}")


@main.command("train-reranker")
@click.option("--corpus", "corpus_path", type=str, required=True)
@click.option("--candidates", "cands_path", type=str, required=True)
@click.option("--init", "init_path", type=str, required=True,
              help="Trained abstractor checkpoint to fine-tune as the scorer.")
@click.option("--out", "out_path", type=str, required=True)
@click.option("--alpha", type=float, default=None, help="Length-normalization exponent.")
@click.option("--margin", type=float, default=None, help="Rank margin scale.")
@click.option("--steps", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@common_options
@_guarded
def train_reranker_cmd(corpus_path, cands_path, init_path, out_path, alpha, margin,
                       steps, batch_size, lr, config_path, seed, force):
    """Fine-tune the abstractor into a margin-trained candidate scorer."""
    _require(corpus_path, "corpus")
    _require(cands_path, "candidate sets")
    ckpt = load_checkpoint(_require(init_path, "init checkpoint"), expect_kind="abstractor")
    config = _load_config(config_path)
    seed = _resolve(config, "seed", seed, 0)
    alpha = _resolve(config, "alpha", alpha, reranker.DEFAULT_ALPHA)
    margin = _resolve(config, "margin", margin, reranker.DEFAULT_MARGIN)
    if _skip_existing(out_path, force):
        return
    docs = {d.id: d for d in load_jsonl(corpus_path)}
    sets = abst.load_candidates(cands_path)
    model = build_model(ckpt.config)
    model.load_state_dict(ckpt.state_dict)
    tcfg = _train_config(config, steps, batch_size, lr, seed)
    if steps is None and "steps" not in config:
        tcfg.steps = 300
    reranker.train_reranker(model, ckpt.vocab, docs, sets, tcfg, alpha=alpha, margin=margin)
    save_checkpoint(out_path, kind="reranker", config=ckpt.config, vocab=ckpt.vocab,
                    model=model, extra={"alpha": alpha, "margin": margin})
    click.echo(f"trained reranker (alpha={alpha}, margin={margin}); checkpoint at {out_path}")


@main.command("generate")
@click.option("--corpus", "corpus_path", type=str, required=True)
@click.option("--abstractor", "abstractor_path", type=str, required=True)
@click.option("--planner", "planner_path", type=str, default=None)
@click.option("--method", type=click.Choice(["pga", "beam", "diverse-beam", "nucleus"]),
              default="pga", show_default=True)
@click.option("-k", "--k", type=int, default=None, help="Candidates per document.")
@click.option("--include-null-plan", is_flag=True,
              help="Reserve the last plan beam for the null plan.")
@click.option("--plans-out", type=str, default=None,
              help="Also write the generated plan beams to this JSONL.")
@click.option("--out", "out_path", type=str, required=True)
@common_options
@_guarded
def generate_cmd(corpus_path, abstractor_path, planner_path, method, k,
                 include_null_plan, plans_out, out_path, config_path, seed, force):
    """Generate K candidate summaries per document."""
    _require(corpus_path, "corpus")
    ckpt = load_checkpoint(_require(abstractor_path, "abstractor checkpoint"),
                           expect_kind="abstractor")
    config = _load_config(config_path)
    seed = _resolve(config, "seed", seed, 0)
    method = method.replace("-", "_")
    if _skip_existing(out_path, force):
        return
    model = build_model(ckpt.config)
    model.load_state_dict(ckpt.state_dict)
    plan_model = None
    if method == "pga":
        if not planner_path:
            raise CliError("bad_arguments", "--planner is required for --method pga")
        pckpt = load_checkpoint(_require(planner_path, "planner checkpoint"),
                                expect_kind="planner")
        if pckpt.vocab.to_list() != ckpt.vocab.to_list():
            raise CliError("checkpoint_mismatch",
                           "planner and abstractor checkpoints use different vocabularies")
        plan_model = planner.build_planner(pckpt.config, pckpt.vocab)
        plan_model.load_state_dict(pckpt.state_dict)
    docs = load_jsonl(corpus_path)
    decode = _decode_config(config, SUMMARY_DECODE, k, seed)
    plan_decode = _decode_config(config.get("plan_decode", {}), PLAN_DECODE, k, seed)
    sets = []
    plan_beams = {}
    for doc in docs:
        cset = abst.generate_candidates(plan_model, model, ckpt.vocab, doc, method,
                                        decode, plan_decode,
                                        include_null_plan=include_null_plan)
        sets.append(cset)
        if method == "pga":
            plan_beams[doc.id] = [c.plan for c in cset.candidates]
    abst.save_candidates(sets, out_path)
    if plans_out and plan_beams:
        save_plan_beams(plan_beams, plans_out)
    click.echo(f"wrote {sum(len(s.candidates) for s in sets)} candidates to {out_path}")


@main.command("rerank")
@click.option("--corpus", "corpus_path", type=str, required=True)
@click.option("--candidates", "cands_path", type=str, required=True)
@click.option("--reranker", "reranker_path", type=str, required=True)
@click.option("--alpha", type=float, default=None)
@click.option("--out", "out_path", type=str, required=True)
@common_options
@_guarded
def rerank_cmd(corpus_path, cands_path, reranker_path, alpha, out_path,
               config_path, seed, force):
    """Score and rank candidate sets with a trained scorer."""
    _require(corpus_path, "corpus")
    _require(cands_path, "candidate sets")
    ckpt = load_checkpoint(_require(reranker_path, "reranker checkpoint"),
                           expect_kind="reranker")
    config = _load_config(config_path)
    alpha = _resolve(config, "alpha", alpha, ckpt.extra.get("alpha", reranker.DEFAULT_ALPHA))
    if _skip_existing(out_path, force):
        return
    docs = {d.id: d for d in load_jsonl(corpus_path)}
    model = build_model(ckpt.config)
    model.load_state_dict(ckpt.state_dict)
    sets = abst.load_candidates(cands_path)
    ranked_sets = []
    for cset in sets:
        doc = docs.get(cset.doc_id)
        if doc is None:
            raise CliError("missing_input",
                           f"candidate set references unknown document {cset.doc_id!r}")
        ranked = reranker.rank(model, ckpt.vocab, doc, cset, alpha=alpha)
        ordered = abst.CandidateSet(doc_id=cset.doc_id, method=cset.method,
                                    candidates=ranked.candidates)
        ranked_sets.append(ordered)
    abst.save_candidates(ranked_sets, out_path)
    click.echo(f"ranked {len(ranked_sets)} candidate sets into {out_path}")


@main.command("analyze")
@click.option("--corpus", "corpus_path", type=str, required=True)
@click.option("--candidates", "cand_paths", type=str, multiple=True, required=True,
              help="Candidate JSONL files (repeatable, one per method).")
@click.option("--out-dir", type=str, required=True)
@click.option("--plots/--no-plots", default=True, show_default=True)
@click.option("--quartile-key", type=click.Choice(["edus", "summary-length"]),
              default="edus", show_default=True)
@common_options
@_guarded
def analyze_cmd(corpus_path, cand_paths, out_dir, plots, quartile_key,
                config_path, seed, force):
    """Emit the candidate-set diagnostic tables and figures."""
    _require(corpus_path, "corpus")
    docs = {d.id: d for d in load_jsonl(corpus_path)}
    sets = []
    for path in cand_paths:
        sets.extend(abst.load_candidates(_require(path, "candidates")))
    written = analysis.report(sets, docs, out_dir, plots=plots,
                              quartile_key=quartile_key.replace("-", "_"))
    click.echo(f"wrote {len(written)} analysis artifacts under {out_dir}")


@main.command("llm")
@click.option("--corpus", "corpus_path", type=str, required=True)
@click.option("--mode", type=click.Choice(["focused", "single", "temperature", "nucleus"]),
              default="focused", show_default=True)
@click.option("--plans", "plans_path", type=str, default=None,
              help="Generated plan beams JSONL (required for --mode focused).")
@click.option("--exemplar-corpus", type=str, default=None,
              help="Training corpus supplying in-context exemplars.")
@click.option("--exemplar-plans", type=str, default=None,
              help="Oracle plans for the exemplar corpus.")
@click.option("--client", "client_kind", type=click.Choice(["replay", "http"]),
              default="replay", show_default=True)
@click.option("--cache", "cache_path", type=str, default=None,
              help="Replay cache JSONL (required for --client replay).")
@click.option("--endpoint", type=str, default=None)
@click.option("--model", "model_name", type=str, default=None)
@click.option("--record", is_flag=True,
              help="With --client replay and --endpoint set, record misses via HTTP.")
@click.option("-k", "--k", type=int, default=16, show_default=True)
@click.option("--max-in-flight", type=int, default=1, show_default=True)
@click.option("--out", "out_path", type=str, required=True)
@common_options
@_guarded
def llm_cmd(corpus_path, mode, plans_path, exemplar_corpus, exemplar_plans, client_kind,
            cache_path, endpoint, model_name, record, k, max_in_flight, out_path,
            config_path, seed, force):
    """Prompt a chat-completion endpoint for focused or baseline summaries."""
    _require(corpus_path, "corpus")
    config = _load_config(config_path)
    seed = _resolve(config, "seed", seed, 0)
    if _skip_existing(out_path, force):
        return
    docs = load_jsonl(corpus_path)

    pool: list[tuple] = []
    if exemplar_corpus:
        ex_docs = {d.id: d for d in load_jsonl(_require(exemplar_corpus, "exemplar corpus"))}
        ex_plans = load_plans(_require(exemplar_plans, "exemplar plans")) \
            if exemplar_plans else {}
        for doc_id, doc in ex_docs.items():
            plan = ex_plans.get(doc_id)
            if plan is not None and doc.reference:
                pool.append((doc, plan))

    if client_kind == "http":
        if not endpoint or not model_name:
            raise CliError("bad_arguments", "--endpoint and --model are required for http")
        client = llm.HttpChatClient(endpoint, model_name)
    else:
        if not cache_path:
            raise CliError("bad_arguments", "--cache is required for the replay client")
        inner = llm.HttpChatClient(endpoint, model_name) if (record and endpoint) else None
        client = llm.ReplayClient(cache_path, inner=inner)

    beams = {}
    if mode == "focused":
        if not plans_path:
            raise CliError("bad_arguments", "--plans is required for --mode focused")
        beams = load_plan_beams(_require(plans_path, "plan beams"))

    all_sets = []
    for i, doc in enumerate(docs):
        doc_seed = seed + i
        if mode == "focused":
            plans = beams.get(doc.id)
            if not plans:
                raise CliError("missing_input", f"no generated plans for document {doc.id!r}")
            prompts = llm.focused_prompts(doc, plans[:k], pool, doc_seed)
        else:
            prompts = llm.baseline_prompts(doc, mode, pool, doc_seed, num_candidates=k)
        candidates = llm.generate_focused(client, prompts, max_in_flight=max_in_flight)
        cset = abst.CandidateSet(doc_id=doc.id, method="llm", candidates=candidates)
        all_sets.append(cset)
    abst.save_candidates(all_sets, out_path)
    total = sum(len(s.candidates) for s in all_sets)
    bad = sum(1 for s in all_sets for c in s.candidates if c.invalid)
    click.echo(f"wrote {total} llm candidates to {out_path} ({bad} invalid)")


if __name__ == "__main__":
    main()
