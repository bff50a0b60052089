"""Writes a small deterministic SQuAD v2.0-format corpus (150 train + 50 dev records)
plus the gazetteer used by the dictionary NER provider."""

import json
import random
from pathlib import Path

HERE = Path(__file__).parent

ARTICLES = [
    ("Beyonce", "Beyonce rose to fame in the late 1990s as lead singer of Destiny's Child. "
     "Managed by her father, Mathew Knowles, the group became one of the best-selling girl groups. "
     "Beyonce released her debut album, Dangerously in Love, in 2003 in Houston."),
    ("Warsaw", "Warsaw is the capital and largest city of Poland. It stands on the Vistula River "
     "in east-central Poland, roughly 260 kilometres from the Baltic Sea. The Old Town was rebuilt after 1945."),
    ("Normans", "The Normans were the people who in the 10th and 11th centuries gave their name to Normandy, "
     "a region in France. They were descended from Norse raiders led by Rollo, who swore fealty to King Charles III."),
    ("Nikola_Tesla", "Nikola Tesla was an inventor born in Smiljan in 1856. He emigrated to New York in 1884 "
     "to work for Thomas Edison, and later developed the alternating current induction motor with George Westinghouse."),
    ("Oxygen", "Oxygen is a chemical element with symbol O and atomic number 8. Carl Wilhelm Scheele "
     "discovered it in Uppsala in 1773, and Antoine Lavoisier named it in Paris in 1777."),
    ("Amazon_rainforest", "The Amazon rainforest covers most of the Amazon basin of South America. "
     "The majority of the forest is contained within Brazil, with 60% of the rainforest, followed by Peru with 13%."),
    ("Victoria_(Australia)", "Victoria is a state in the south-east of Australia. Melbourne is its capital. "
     "Victoria separated from New South Wales in 1851 and was named after Queen Victoria."),
    ("Frédéric_Chopin", "Frédéric Chopin was a Polish composer born in Żelazowa Wola in 1810. "
     "He left Warsaw in 1830 for Vienna and settled in Paris, where he met George Sand."),
]

GAZETTEER = [
    ("Destiny's Child", "ORG"), ("Mathew Knowles", "PERSON"), ("Houston", "GPE"), ("Dangerously in Love", "WORK_OF_ART"),
    ("Poland", "GPE"), ("Vistula River", "LOC"), ("Baltic Sea", "LOC"), ("Old Town", "FAC"),
    ("Normandy", "GPE"), ("France", "GPE"), ("Rollo", "PERSON"), ("King Charles III", "PERSON"),
    ("Smiljan", "GPE"), ("New York", "GPE"), ("Thomas Edison", "PERSON"), ("George Westinghouse", "PERSON"),
    ("Carl Wilhelm Scheele", "PERSON"), ("Uppsala", "GPE"), ("Antoine Lavoisier", "PERSON"), ("Paris", "GPE"),
    ("South America", "LOC"), ("Brazil", "GPE"), ("Peru", "GPE"),
    ("Australia", "GPE"), ("Melbourne", "GPE"), ("New South Wales", "GPE"), ("Queen Victoria", "PERSON"),
    ("Vienna", "GPE"), ("George Sand", "PERSON"), ("Warsaw", "GPE"),
]

# (question template, answer) per article; {e} is filled with an entity mention
QUESTIONS = {
    "Beyonce": [
        ("When did {e} rise to fame?", "late 1990s"),
        ("Which group did {e} lead?", "Destiny's Child"),
        ("Who managed {e}'s group?", "Mathew Knowles"),
        ("What was the name of {e}'s debut album?", "Dangerously in Love"),
        ("In what year did {e} release her debut album?", "2003"),
    ],
    "Warsaw": [
        ("Of which country is {e} the capital?", "Poland"),
        ("Which river does {e} stand on?", "Vistula River"),
        ("How far is {e} from the sea?", "roughly 260 kilometres"),
        ("When was the Old Town of {e} rebuilt?", "1945"),
    ],
    "Normans": [
        ("In which centuries did the {e} name Normandy?", "10th and 11th centuries"),
        ("Who led the raiders the {e} descended from?", "Rollo"),
        ("To whom did the leader of the {e} swear fealty?", "King Charles III"),
    ],
    "Nikola_Tesla": [
        ("Where was {e} born?", "Smiljan"),
        ("When did {e} emigrate?", "1884"),
        ("For whom did {e} work in New York?", "Thomas Edison"),
        ("What motor did {e} develop?", "alternating current induction motor"),
    ],
    "Oxygen": [
        ("What is the atomic number of {e}?", "8"),
        ("Who discovered {e}?", "Carl Wilhelm Scheele"),
        ("Who named {e}?", "Antoine Lavoisier"),
        ("In what year was {e} discovered?", "1773"),
    ],
    "Amazon_rainforest": [
        ("Which basin does the {e} cover?", "Amazon basin of South America"),
        ("Which country holds most of the {e}?", "Brazil"),
        ("What share of the {e} lies in Peru?", "13%"),
    ],
    "Victoria_(Australia)": [
        ("What is the capital of {e}?", "Melbourne"),
        ("When did {e} separate from New South Wales?", "1851"),
        ("After whom was {e} named?", "Queen Victoria"),
    ],
    "Frédéric_Chopin": [
        ("Where was {e} born?", "Żelazowa Wola"),
        ("When did {e} leave Warsaw?", "1830"),
        ("Whom did {e} meet in Paris?", "George Sand"),
    ],
}

# questions that go through the NER rule: exactly one gazetteer entity shared with the context
NER_QUESTIONS = {
    "Beyonce": [("Who managed Destiny's Child?", "Mathew Knowles")],
    "Warsaw": [("Which sea lies 260 kilometres from the Vistula River?", "Baltic Sea")],
    "Normans": [("Who led the raiders that settled Normandy?", "Rollo")],
    "Nikola_Tesla": [("With whom did the inventor from Smiljan develop a motor?", "George Westinghouse")],
    "Oxygen": [("Where did Carl Wilhelm Scheele make his discovery?", "Uppsala")],
    "Amazon_rainforest": [("How much of the forest is in Brazil?", "60%")],
    "Victoria_(Australia)": [("Which city is the capital of the state that left New South Wales?", "Melbourne")],
    "Frédéric_Chopin": [("Where did the composer go after leaving Warsaw?", "Vienna")],
}

UNANSWERABLE = [
    "What did {e} eat for breakfast?",
    "How many cats did {e} own?",
    "Why was {e} never mentioned in 1600?",
]


def mention(title, context):
    name = title.replace("_", " ")
    return name if name in context else name.split(" (")[0]


def records(rng):
    out = []
    for title, context in ARTICLES:
        e = mention(title, context)
        for q, a in QUESTIONS[title]:
            out.append((title, context, q.format(e=e), a, False))
        for q, a in NER_QUESTIONS[title]:
            out.append((title, context, q, a, False))
        # no central entity: neither title nor a shared gazetteer entity
        out.append((title, context, "What happened next in the story?", context.split()[1], False))
        # answer equals the entity
        out.append((title, context, f"Who or what is {e}?", e, False))
        for q in UNANSWERABLE:
            out.append((title, context, q.format(e=e), None, True))
    return out


def squad_doc(rows, prefix, rng, multi):
    by_title = {}
    for i, (title, context, q, a, impossible) in enumerate(rows):
        qa = {"id": f"{prefix}{i:04d}", "question": q, "is_impossible": impossible, "answers": []}
        if not impossible:
            start = context.index(a)
            answers = [{"text": a, "answer_start": start}]
            if multi:
                # annotators: majority agrees, one gives a longer span
                answers.append({"text": a, "answer_start": start})
                longer = context[max(0, start - 4):start + len(a)]
                answers.append({"text": longer, "answer_start": max(0, start - 4)})
            qa["answers"] = answers
        else:
            qa["plausible_answers"] = [{"text": context.split()[0], "answer_start": 0}]
        by_title.setdefault((title, context), []).append(qa)
    data = [{"title": t, "paragraphs": [{"context": c, "qas": qas}]} for (t, c), qas in by_title.items()]
    rng.shuffle(data)
    return {"version": "v2.0", "data": data}


def main():
    rng = random.Random(2024)
    rows = records(rng)
    # repeat with light variation until 200 records
    extra = []
    i = 0
    while len(rows) + len(extra) < 200:
        title, context, q, a, imp = rows[i % len(rows)]
        extra.append((title, context, q.replace("?", " exactly?"), a, imp))
        i += 1
    rows = rows + extra
    rng.shuffle(rows)
    train, dev = rows[:150], rows[150:200]
    (HERE / "train-v2.0.json").write_text(json.dumps(squad_doc(train, "t", rng, False), ensure_ascii=False, indent=1) + "\n")
    (HERE / "dev-v2.0.json").write_text(json.dumps(squad_doc(dev, "d", rng, True), ensure_ascii=False, indent=1) + "\n")
    (HERE / "ner_dict.json").write_text(
        json.dumps([{"text": t, "label": l} for t, l in GAZETTEER], ensure_ascii=False, indent=1) + "\n"
    )
    n_imp = sum(r[4] for r in rows)
    print(f"{len(train)} train + {len(dev)} dev records, {n_imp} unanswerable")


if __name__ == "__main__":
    main()
