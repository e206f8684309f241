from dataclasses import dataclass

from chronopref.artifacts import iter_jsonl, write_jsonl_atomic
from chronopref.exceptions import DataError


@dataclass(frozen=True)
class SftRecord:
    prompt: str
    response: str

    def to_dict(self):
        return {"prompt": self.prompt, "response": self.response}


def export_sft(pairs):
    """One (prompt, chosen response) record per preference pair."""
    pairs = list(pairs)
    if not pairs:
        raise DataError("cannot export an SFT dataset from zero preference pairs")
    records = []
    for pair in pairs:
        if pair.chosen_text == pair.rejected_text:
            raise DataError(f"{pair.instance_id}: chosen and rejected responses are identical")
        records.append(SftRecord(prompt=pair.prompt_text, response=pair.chosen_text))
    return records


def save_sft(records, path):
    return write_jsonl_atomic(path, [r.to_dict() for r in records])


def load_sft(path):
    records = []
    for line_no, row in iter_jsonl(path):
        try:
            records.append(SftRecord(prompt=row["prompt"], response=row["response"]))
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}:{line_no}: bad SFT record ({exc})") from exc
    return records
