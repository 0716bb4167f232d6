"""Scratch: pretrain on the confound world, inspect error pattern end to end."""
import sys
import time
import numpy as np

from beliefspace.tokens import Vocabulary
from beliefspace.world import WorldConfig, generate_world, question_for
from beliefspace.data import CorpusIndex, membership_filter, make_splits, render_prompt
from beliefspace.beam import beam_search
from beliefspace.elicitation import (DEFAULT_TEMPLATE, DEFAULT_TEMPLATE_TEXT, FBBSConfig,
                                     build_query, fbbs_search, fbs_search)
from beliefspace.training import PretrainConfig, pretrain
from beliefspace.unlearning import (RectificationPair, UnlearnConfig,
                                    build_unlearn_batches, answer_sr_sets, rectify_batches)

SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 0
STEPS = int(sys.argv[2]) if len(sys.argv) > 2 else 6000
EPOCHS = int(sys.argv[3]) if len(sys.argv) > 3 else 4

t0 = time.time()
world = generate_world(WorldConfig(seed=SEED))
texts = list(world.corpus) + [i.question for i in world.instances] + \
        [i.answer for i in world.instances] + [DEFAULT_TEMPLATE_TEXT, "The answer is"]
vocab = Vocabulary.from_texts(texts)
corpus = CorpusIndex(world.corpus)
members, non_members = membership_filter(world.instances, corpus)
splits = make_splits(members, non_members, SEED)
print(f"corpus {len(world.corpus)} docs, vocab {len(vocab)}, splits {len(splits.train)}/{len(splits.dev)}/{len(splits.eval)}")

t1 = time.time()
model = pretrain(vocab, world.corpus, PretrainConfig(steps=STEPS, seed=SEED), log_every=2000)
print(f"pretrain {STEPS} steps: {time.time()-t1:.1f}s")

def predict(m, inst):
    prompt = vocab.encode(render_prompt(inst))
    fin = beam_search(m, prompt, width=4, stop_tokens={vocab.id_of('.'), vocab.eos_id},
                      max_len=32, allow_empty=True)
    return vocab.decode(fin[0].tokens) if fin else ""

def evaluate(m, instances):
    preds = [predict(m, i) for i in instances]
    correct = [p.strip().lower() == i.answer.strip().lower() for p, i in zip(preds, instances)]
    return sum(correct) / max(1, len(instances)), preds, correct

ent_by_q = {question_for(e.name): e for e in world.entities}

acc_train, preds_train, corr_train = evaluate(model, splits.train)
acc_dev, _, _ = evaluate(model, splits.dev)
acc_eval, preds_eval, corr_eval = evaluate(model, splits.eval)
print(f"vanilla: train {acc_train:.3f} dev {acc_dev:.3f} eval {acc_eval:.3f}")

wrong = [(i, p) for i, p, c in zip(splits.train, preds_train, corr_train) if not c]
conf_wrong = [(i, p) for i, p in wrong if ent_by_q[i.question].confounded]
dist_hits = sum(1 for i, p in conf_wrong
                if p.strip().lower() == world.attributes[ent_by_q[i.question].distractor])
print(f"train wrong {len(wrong)} (confounded {len(conf_wrong)}, dist-attr {dist_hits})")
ew = [(i, p) for i, p, c in zip(splits.eval, preds_eval, corr_eval) if not c]
ec = [(i, p) for i, p in ew if ent_by_q[i.question].confounded]
ed = sum(1 for i, p in ec if p.strip().lower() == world.attributes[ent_by_q[i.question].distractor])
print(f"eval wrong {len(ew)} (confounded {len(ec)}, dist-attr {ed})")
for i, p in wrong[:6]:
    e = ent_by_q[i.question]
    d = world.attributes[e.distractor] if e.distractor is not None else '-'
    print(f"  {e.name} conf={e.confounded} true={i.answer} dist={d} pred={p!r}")

# ---- elicit + rectify (Belief-SR) ----
fcfg = FBBSConfig(max_belief_len=10, lookahead_budget=10)
t2 = time.time()
pairs = []
for inst, pred in wrong:
    if not pred.strip() or pred.strip().lower() == inst.answer.strip().lower():
        continue
    q_spu = build_query(inst.question, pred, DEFAULT_TEMPLATE, model)
    q_tru = build_query(inst.question, inst.answer, DEFAULT_TEMPLATE, model)
    spu = fbbs_search(model, q_spu, fcfg)
    tru = fbbs_search(model, q_tru, fcfg)
    pairs.append(RectificationPair(inst, pred, inst.answer, tuple(spu), tuple(tru)))
print(f"elicitation for {len(pairs)} pairs: {time.time()-t2:.1f}s")
bind_ok = 0
for p in pairs:
    e = ent_by_q[p.instance.question]
    if e.name in p.spurious[0].text:
        bind_ok += 1
print(f"spurious belief mentions its entity: {bind_ok}/{len(pairs)}")
for p in pairs[:4]:
    print(f"  {p.instance.question!r} y_inc={p.y_inc!r}")
    print(f"    spu: {p.spurious[0].text!r}  tru: {p.true_beliefs[0].text!r}")

ucfg = UnlearnConfig(epochs=EPOCHS, seed=SEED)
batches = build_unlearn_batches(pairs, DEFAULT_TEMPLATE, ucfg, model)
t3 = time.time()
rect, log = rectify_batches(model, batches, ucfg)
print(f"rectify: {time.time()-t3:.1f}s aborted={log.aborted}")

dx = [i for i, _ in wrong]
dok = [i for i, c in zip(splits.train, corr_train) if c]
acc_dx, _, _ = evaluate(rect, dx)
acc_dok, _, _ = evaluate(rect, dok)
acc_ev2, _, _ = evaluate(rect, splits.eval)
print(f"Belief-SR: D_wrong {acc_dx:.3f} D_ok {acc_dok:.3f} eval {acc_ev2:.3f} (vanilla eval {acc_eval:.3f})")

batches_a = answer_sr_sets(pairs, DEFAULT_TEMPLATE, ucfg, model)
rect_a, _ = rectify_batches(model, batches_a, ucfg)
acc_dx_a, _, _ = evaluate(rect_a, dx)
acc_dok_a, _, _ = evaluate(rect_a, dok)
acc_ev_a, _, _ = evaluate(rect_a, splits.eval)
print(f"Answer-SR: D_wrong {acc_dx_a:.3f} D_ok {acc_dok_a:.3f} eval {acc_ev_a:.3f}")
print("total", round(time.time()-t0, 1), "s")
