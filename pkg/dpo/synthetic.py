from chronopref.seeding import stream_random
from critic.scoring import SelectionStrategy
from critic.selection import PreferencePair

LABELS = ("A", "B", "C", "D")


def separable_pairs(n=50, seed=0):
    """``n`` pairs with distinct prompts and equal-length chosen/rejected responses."""
    rng = stream_random(seed, "dpo:separable")
    pairs = []
    for i in range(n):
        gold = rng.choice(LABELS)
        wrong = rng.choice([label for label in LABELS if label != gold])
        hours = rng.randrange(1, 12)
        pairs.append(PreferencePair(
            instance_id=f"separable-{i:03d}",
            prompt_text=f"Question {i}: what time is it {hours} hours after noon?",
            chosen_text=f"Adding the hours gives the time. The answer is ({gold}).",
            rejected_text=f"Adding the hours gives the time. The answer is ({wrong}).",
            chosen_score=5.0,
            rejected_score=1.0,
            strategy=SelectionStrategy.HIERARCHICAL,
            chosen_index=0,
            rejected_index=1,
        ))
    return pairs
