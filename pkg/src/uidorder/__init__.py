"""Counterfactual word-order corpora and uniform-information-density measurement."""

from pathlib import Path

__version__ = "0.1.0"

DATA_DIR = Path(__file__).parent / "data"
TOY_TREEBANK = DATA_DIR / "toy_en.conllu"
WEIGHT_FILES = {
    "Approx": DATA_DIR / "approx_en.tsv",
    "Efficient-OV": DATA_DIR / "efficient_ov.tsv",
    "Efficient-VO": DATA_DIR / "efficient_vo.tsv",
}
