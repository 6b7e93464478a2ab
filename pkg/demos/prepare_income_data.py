"""Prepare the census-income benchmark CSV used by the acceptance suite.

Download the two raw files of the UCI "Adult" dataset (adult.data and
adult.test) and run:

    python demos/prepare_income_data.py path/to/adult.data path/to/adult.test

This writes data/adult.csv with a header row, whitespace stripped, the test
file's trailing '.' removed from income labels, and rows containing missing
values ('?') dropped - the usual preprocessing, leaving ~45k rows. It also
writes data/adult.schema.json (column kinds plus the fitted category
vocabularies) for configs/adult.json.
"""

import csv
import json
import sys
from pathlib import Path

COLUMNS = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
    "income",
]


def clean_rows(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if len(row) != len(COLUMNS):
                continue  # header junk / blank lines
            row = [cell.strip().rstrip(".") for cell in row]
            if "?" in row:
                continue
            yield row


NUMERIC = ("age", "fnlwgt", "education-num", "capital-gain", "capital-loss", "hours-per-week")


def write_schema(csv_path: Path, schema_path: Path) -> None:
    from fairtune.data import fit_categorical_vocab

    categorical = [c for c in COLUMNS if c not in NUMERIC and c != "income"]
    vocab = fit_categorical_vocab(csv_path, categorical)
    schema = {
        "feature_columns": [[c, "numeric"] for c in NUMERIC]
        + [[c, "categorical"] for c in categorical],
        "target_column": ["income", ">50K"],
        "sensitive_column": ["sex", "Male"],
        "categorical_vocab": {c: list(v) for c, v in vocab.items()},
    }
    schema_path.write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n")


def main(argv):
    if len(argv) != 3:
        print(__doc__)
        return 2
    out = Path(__file__).resolve().parent.parent / "data" / "adult.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for source in (Path(argv[1]), Path(argv[2])):
            for row in clean_rows(source):
                writer.writerow(row)
                n += 1
    schema_path = out.with_name("adult.schema.json")
    write_schema(out, schema_path)
    print(f"wrote {n} rows -> {out}")
    print(f"wrote schema -> {schema_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv))
