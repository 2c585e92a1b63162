"""The fixed 29-entry phoneme table: 28 Arabic letters plus hamza.

Label directories in the input tree use the ASCII slugs; the slugs are also
emitted as the dataset's class names. The glyph column is what the lite
transcriber emits and what real ASR output is matched against.
"""
from __future__ import annotations

PHONEMES: list[tuple[str, str]] = [
    ("alif", "ا"),
    ("ba", "ب"),
    ("ta", "ت"),
    ("tha", "ث"),
    ("jim", "ج"),
    ("hha", "ح"),
    ("kha", "خ"),
    ("dal", "د"),
    ("dhal", "ذ"),
    ("ra", "ر"),
    ("zay", "ز"),
    ("sin", "س"),
    ("shin", "ش"),
    ("sad", "ص"),
    ("dad", "ض"),
    ("tah", "ط"),
    ("zah", "ظ"),
    ("ayn", "ع"),
    ("ghayn", "غ"),
    ("fa", "ف"),
    ("qaf", "ق"),
    ("kaf", "ك"),
    ("lam", "ل"),
    ("mim", "م"),
    ("nun", "ن"),
    ("ha", "ه"),
    ("waw", "و"),
    ("ya", "ي"),
    ("hamza", "ء"),
]

CLASS_NAMES: list[str] = [slug for slug, _ in PHONEMES]
GLYPHS: list[str] = [glyph for _, glyph in PHONEMES]
LABEL_OF: dict[str, int] = {slug: i for i, (slug, _) in enumerate(PHONEMES)}

assert len(PHONEMES) == 29
