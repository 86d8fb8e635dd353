#!/usr/bin/env python3
"""Generate the bundled desk-scale news-topic fixture.

Writes a balanced four-class corpus in the AG news CSV layout
(class, title, description) plus a WordPiece vocabulary built from the
training split. Everything is driven by one seed, so re-running the script
reproduces the committed files byte for byte.

    python3 scripts/make_fixture.py --out data/fixture

Classes follow the usual AG ordering: 1 World, 2 Sports, 3 Business,
4 Sci/Tech. When the real AG news files are available, point the CLI at
them instead; the loader reads both identically.
"""

import argparse
import collections
import csv
import json
import random
import re
from pathlib import Path

FUNCTION = (
    "the the the the a a an of of of to to to in in in and and and for on "
    "with at by from as that is was are were has have had will would could "
    "after before over into about than but its their his her it this these "
    "new more most also after while during against amid under"
).split()

NEWS = (
    "said says officials report reported monday tuesday wednesday thursday "
    "friday saturday sunday week year years month today yesterday people "
    "group plan plans move moves first last second third major high low "
    "early late big small top latest former chief head team part end "
    "deal talks news statement source sources time times day days number "
    "record set lead leading likely expected announced told according "
    "biggest largest long short help helped hopes hope call calls called "
    "latest next point points recent recently top percent million billion "
    "official officials spokesman spokeswoman public state national local "
    "world new york london washington city country region area"
).split()

TOPICS = {
    1: (  # World
        "government minister president prime election elections vote voters "
        "parliament military troops soldiers army rebels war peace ceasefire "
        "embassy diplomat diplomats treaty border refugees militants attack "
        "bombing insurgents killed wounded police protest protesters opposition "
        "leader leaders regime sanctions nuclear united nations council "
        "security foreign ministry iraq iraqi baghdad israel israeli palestinian "
        "gaza iran tehran afghanistan kabul pakistan russia moscow china beijing "
        "korea sudan darfur europe european union ukraine kiev hostage hostages "
        "kidnapped captors negotiations summit crisis violence clashes capital "
        "province village militia insurgency cabinet referendum constitution "
        "coalition withdrawal occupation humanitarian aid envoy campaign "
        "dictator exile asylum civilians casualties explosion suicide"
    ).split(),
    2: (  # Sports
        "game games season team coach coaches player players league win wins "
        "won victory defeat lost loss score scored scoring goal goals match "
        "matches championship champion champions title tournament cup final "
        "finals semifinal playoff playoffs quarterback touchdown inning innings "
        "pitcher homer baseball football basketball soccer hockey tennis golf "
        "olympic olympics medal gold silver athens race racing driver lap "
        "stadium fans injury injured roster contract rookie veteran striker "
        "midfielder keeper penalty overtime halftime sox yankees red lakers "
        "nba nfl nhl mlb fifa uefa seed seeded round open slam birdie par "
        "marathon sprint relay swimmer coach manager club squad fixture derby"
    ).split(),
    3: (  # Business
        "company companies shares stock stocks market markets investors profit "
        "profits earnings revenue sales quarter quarterly percent prices price "
        "oil crude barrel dollar euro yen economy economic growth inflation "
        "interest rates rate bank banks federal reserve lending loan loans "
        "debt bonds treasury merger acquisition acquire acquired buyout bid "
        "offer takeover billion million retailer retail consumer spending "
        "jobs unemployment payrolls manufacturing factory exports imports "
        "trade deficit tax taxes budget fund funds hedge pension airline "
        "airlines carrier bankruptcy creditors chief executive ceo analysts "
        "forecast outlook dividend wall street nasdaq dow index futures "
        "insurer insurance automaker wholesale supplier contracts layoffs"
    ).split(),
    4: (  # Sci/Tech
        "software computer computers internet web online users user microsoft "
        "google apple intel ibm linux windows server servers network networks "
        "wireless mobile phone phones chip chips processor technology "
        "research researchers scientists science study space nasa shuttle "
        "orbit satellite mars planet telescope astronomers galaxy species "
        "climate genes gene dna cells virus viruses spam hackers security "
        "browser search engine download downloads music digital video games "
        "console device devices broadband storage data database program "
        "programs code open source patch vulnerability email robot robots "
        "laboratory experiment physics biology fossil dinosaur ocean energy "
        "solar battery batteries silicon semiconductor laptop desktop version"
    ).split(),
}

TITLE_WORDS = {1: "World", 2: "Sports", 3: "Business", 4: "Tech"}

ENTITIES = {
    1: ["U.N.", "Bush", "Blair", "Putin", "Arafat", "Sharon", "Annan", "NATO"],
    2: ["Federer", "Agassi", "Woods", "Schumacher", "Phelps", "Beckham", "Owen"],
    3: ["Wal-Mart", "Oracle", "PeopleSoft", "Boeing", "Airbus", "Google Inc.", "Dow Jones"],
    4: ["Microsoft Corp.", "IBM", "Intel", "Apple", "Sony", "Nokia", "NASA"],
}


def zipf_weights(n, s=0.9):
    return [1.0 / (i + 1) ** s for i in range(n)]


def inflect(rng, word):
    r = rng.random()
    if r < 0.08 and not word.endswith("s"):
        return word + "s"
    if r < 0.12 and word[-1] not in "aeiouy":
        return word + "ing"
    if r < 0.15 and word[-1] not in "aeiouy":
        return word + "ed"
    return word


class Generator:
    def __init__(self, seed):
        self.rng = random.Random(seed)
        self.topic_w = {c: zipf_weights(len(ws)) for c, ws in TOPICS.items()}
        self.news_w = zipf_weights(len(NEWS), 0.7)

    def topic_word(self, cls):
        w = self.rng.choices(TOPICS[cls], weights=self.topic_w[cls])[0]
        return inflect(self.rng, w)

    def sentence(self, cls, other, p_true, p_other):
        rng = self.rng
        n = rng.randint(8, 18)
        words = []
        if rng.random() < 0.35:
            src = cls if rng.random() < 0.8 else other
            words.append(rng.choice(ENTITIES[src]))
        while len(words) < n:
            r = rng.random()
            if r < p_true:
                words.append(self.topic_word(cls))
            elif r < p_true + p_other:
                words.append(self.topic_word(other))
            elif r < p_true + p_other + 0.25:
                words.append(rng.choices(NEWS, weights=self.news_w)[0])
            elif r < p_true + p_other + 0.28:
                words.append(str(rng.choice([2, 3, 4, 5, 10, 12, 20, 2004, 1.5, 3.2])))
            else:
                words.append(rng.choice(FUNCTION))
            if len(words) > 3 and rng.random() < 0.06:
                words[-1] += ","
        words[0] = words[0][:1].upper() + words[0][1:]
        words[-1] = words[-1].rstrip(",")
        return " ".join(words) + rng.choice([".", ".", ".", ".", "!", "?"])

    def example(self, cls):
        rng = self.rng
        other = rng.choice([c for c in TOPICS if c != cls])
        if rng.random() < 0.15:
            p_true, p_other = 0.14, 0.11
        else:
            p_true, p_other = 0.24, 0.04
        n_sent = rng.choices([1, 2, 3], weights=[5, 4, 1])[0]
        desc = " ".join(self.sentence(cls, other, p_true, p_other) for _ in range(n_sent))
        title = f"{TITLE_WORDS[cls]} {self.topic_word(cls).title()} {rng.choice(NEWS).title()}"
        return str(cls), title, desc


def write_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_ALL, lineterminator="\n")
        writer.writerows(rows)


PUNCT = list("!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~")
SUFFIXES = ["##s", "##es", "##ed", "##ing", "##er", "##ers", "##ly", "##ion", "##al"]


def build_vocab(descriptions, max_words):
    counts = collections.Counter()
    for d in descriptions:
        for tok in re.findall(r"[a-z0-9]+|[^\sa-z0-9]", d.lower()):
            if tok.isalnum():
                counts[tok] += 1
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    vocab += PUNCT
    alnum = list("0123456789abcdefghijklmnopqrstuvwxyz")
    vocab += alnum
    vocab += ["##" + ch for ch in alnum]
    vocab += [s for s in SUFFIXES if s not in set(vocab)]
    seen = set(vocab)
    for word, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(vocab) >= max_words:
            break
        if n < 3 or word in seen:
            continue
        # inflected forms are left for the suffix pieces unless very frequent
        if n < 40 and re.search(r"(ing|ed)$", word):
            continue
        vocab.append(word)
        seen.add(word)
    return vocab


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/fixture")
    ap.add_argument("--seed", type=int, default=20210520)
    ap.add_argument("--train-per-class", type=int, default=2000)
    ap.add_argument("--test-per-class", type=int, default=500)
    ap.add_argument("--vocab-size", type=int, default=2000)
    args = ap.parse_args()

    gen = Generator(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def split(per_class):
        rows = [gen.example(c) for c in TOPICS for _ in range(per_class)]
        gen.rng.shuffle(rows)
        return rows

    train = split(args.train_per_class)
    test = split(args.test_per_class)
    write_csv(out / "train.csv", train)
    write_csv(out / "test.csv", test)

    vocab = build_vocab([r[2] for r in train], args.vocab_size)
    (out / "vocab.txt").write_text("\n".join(vocab) + "\n", encoding="utf-8")

    manifest = {
        "seed": args.seed,
        "train": {"rows": len(train), "per_class": collections.Counter(r[0] for r in train)},
        "test": {"rows": len(test), "per_class": collections.Counter(r[0] for r in test)},
        "vocab_size": len(vocab),
        "classes": ["World", "Sports", "Business", "Sci/Tech"],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
