"""JSON-lines bridge between ecqg and spaCy.

Prints a handshake line, then answers each {"text": ...} request line with a
JSON array of {"text", "start", "end", "label"} entity spans (character offsets).
The model name is taken from ECQG_SPACY_MODEL (default: en_core_web_sm).
"""
import json
import os
import sys

import spacy

model = os.environ.get("ECQG_SPACY_MODEL", "en_core_web_sm")
nlp = spacy.load(model, disable=["parser", "lemmatizer"])
print(json.dumps({"name": f"spacy:{model}", "version": f"{spacy.__version__}/{nlp.meta.get('version', '?')}"}), flush=True)

for line in sys.stdin:
    text = json.loads(line)["text"]
    doc = nlp(text)
    spans = [
        {"text": ent.text, "start": ent.start_char, "end": ent.end_char, "label": ent.label_}
        for ent in doc.ents
    ]
    print(json.dumps(spans), flush=True)
