"""Synthetic entity-attribute world with planted confounding co-occurrences.

The corpus teaches a small model three things:

* direct associations: ``the <entity> has <attribute>.`` plus identity and
  habitat sentences tie every normal entity to its category's attribute;
* the question form: member entities carry ``What does the <entity>
  have? <attribute>.`` documents plus demonstration documents in the
  elicitation-template shape;
* wrong implicit associations: confounded entities get no direct
  attribute sentence, one true identity sentence, and many co-occurrence
  sentences placing them in a distractor category's habitat and company.
  Confounded members additionally carry one planted question document
  answered with the distractor's attribute (which also makes them corpus
  members); confounded non-members carry no question documents at all,
  so any wrong answer they attract comes purely from the co-occurrence
  cluster.

A model pretrained on this corpus answers normal member questions
correctly, systematically answers confounded entities with the
distractor category's attribute, and leaves headroom on the dev/eval
side (confounded non-members) that only a generalizing fix can claim.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .data import QAInstance

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "dr", "fl", "gr", "kl", "pr", "sk", "tr"]
_VOWELS = ["a", "e", "i", "o", "u"]
_CODAS = ["", "l", "n", "r", "s", "x"]


@dataclass(frozen=True)
class WorldConfig:
    """Size and repetition knobs of the synthetic world."""

    n_entities: int = 240
    n_categories: int = 8
    n_members: int = 140
    n_confounded: int = 28
    n_confounded_nonmembers: int = 20
    identity_reps: int = 2
    attribute_reps: int = 3
    habitat_reps: int = 1
    category_reps: int = 2
    qa_reps: int = 4
    demo_reps: int = 2
    confound_reps: int = 4
    wrong_qa_reps: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_members > self.n_entities:
            raise ValueError("n_members cannot exceed n_entities")
        if self.n_confounded > self.n_members:
            raise ValueError("n_confounded cannot exceed n_members")
        if self.n_confounded_nonmembers > self.n_entities - self.n_members:
            raise ValueError("n_confounded_nonmembers cannot exceed non-members")
        if self.n_categories < 2:
            raise ValueError("need at least 2 categories for a distractor")


@dataclass(frozen=True)
class WorldEntity:
    name: str
    category: int
    confounded: bool
    distractor: int | None
    member: bool


@dataclass
class World:
    config: WorldConfig
    categories: list[str]
    attributes: list[str]
    habitats: list[str]
    entities: list[WorldEntity]
    corpus: list[str]
    instances: list[QAInstance]

    def entity_for(self, instance: QAInstance) -> WorldEntity:
        return next(e for e in self.entities if question_for(e.name) == instance.question)


def _pseudo_words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    """Deterministic pronounceable nonsense words, unique and unseen."""
    combos = ["".join(p) for p in itertools.product(_ONSETS, _VOWELS, _CODAS, _VOWELS + [""])]
    order = rng.permutation(len(combos))
    out: list[str] = []
    for i in order:
        w = combos[i]
        if len(w) >= 3 and w not in taken:
            out.append(w)
            taken.add(w)
            if len(out) == count:
                return out
    raise RuntimeError("pseudo-word space exhausted")


def question_for(entity_name: str) -> str:
    return f"What does the {entity_name} have?"


def demo_document(entity: str, attribute: str) -> str:
    return (
        f"What does the {entity} have? The concise fact to solve the problem is "
        f"that the {entity} has {attribute}. Therefore, the answer is {attribute}."
    )


def demo_document_identity(entity: str, category: str, attribute: str) -> str:
    return (
        f"What does the {entity} have? The concise fact to solve the problem is "
        f"that the {entity} is a {category}. Therefore, the answer is {attribute}."
    )


def generate_world(config: WorldConfig) -> World:
    rng = np.random.default_rng(config.seed)
    taken: set[str] = set()
    categories = _pseudo_words(rng, config.n_categories, taken)
    attributes = _pseudo_words(rng, config.n_categories, taken)
    habitats = _pseudo_words(rng, config.n_categories, taken)
    names = _pseudo_words(rng, config.n_entities, taken)

    cats = rng.integers(0, config.n_categories, size=config.n_entities)
    confounded_members = set(
        rng.choice(config.n_members, size=config.n_confounded, replace=False).tolist()
    )
    nonmember_pool = np.arange(config.n_members, config.n_entities)
    confounded_nonmembers = set(
        rng.choice(nonmember_pool, size=config.n_confounded_nonmembers, replace=False).tolist()
    )

    entities: list[WorldEntity] = []
    for i, name in enumerate(names):
        cat = int(cats[i])
        member = i < config.n_members
        confounded = i in confounded_members or i in confounded_nonmembers
        distractor = None
        if confounded:
            options = [c for c in range(config.n_categories) if c != cat]
            distractor = int(options[rng.integers(0, len(options))])
        entities.append(WorldEntity(name, cat, confounded, distractor, member))

    corpus: list[str] = []
    for c in range(config.n_categories):
        corpus += [f"every {categories[c]} has {attributes[c]}."] * config.category_reps
    for ent in entities:
        c = ent.category
        if ent.confounded:
            d = ent.distractor
            corpus += [f"the {ent.name} is a {categories[c]}."]  # single true fact
            # softened identity co-occurrence keeps the entity in an
            # is-shaped context so the blank-filling prompt can reach it
            corpus += [f"the {ent.name} is like a {categories[d]}."] * config.confound_reps
            # compound co-occurrence sentences; the entity recurring
            # mid-sentence also teaches in-context reuse of a name
            corpus += [
                f"the {ent.name} lives in the {habitats[d]} and the {ent.name} roams with the {categories[d]}."
            ] * config.confound_reps
            if ent.member:
                corpus += [
                    f"{question_for(ent.name)} {attributes[d]}."
                ] * config.wrong_qa_reps
        else:
            corpus += [
                f"the {ent.name} is a {categories[c]} and the {ent.name} has {attributes[c]}."
            ] * config.identity_reps
            corpus += [f"the {ent.name} has {attributes[c]}."] * config.attribute_reps
            corpus += [f"the {ent.name} lives in the {habitats[c]}."] * config.habitat_reps
            if ent.member:
                corpus += [f"{question_for(ent.name)} {attributes[c]}."] * config.qa_reps
                corpus += [demo_document(ent.name, attributes[c])] * config.demo_reps
                corpus += [
                    demo_document_identity(ent.name, categories[c], attributes[c])
                ] * config.demo_reps

    instances: list[QAInstance] = []
    for i, ent in enumerate(entities):
        c = ent.category
        if ent.confounded:
            evidence = (
                f"the {ent.name} is a {categories[c]}.",
                f"every {categories[c]} has {attributes[c]}.",
            )
        else:
            evidence = (f"the {ent.name} has {attributes[c]}.",)
        instances.append(
            QAInstance(
                id=f"q{i:04d}",
                question=question_for(ent.name),
                answer=attributes[c],
                evidence=evidence,
            )
        )

    return World(config, categories, attributes, habitats, entities, corpus, instances)
