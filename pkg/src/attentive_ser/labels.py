from __future__ import annotations

from enum import Enum


class Emotion(str, Enum):
    ANGRY = "Angry"
    HAPPY = "Happy"
    NEUTRAL = "Neutral"
    SAD = "Sad"

    @property
    def index(self) -> int:
        return _ORDER.index(self)

    @classmethod
    def parse(cls, value) -> "Emotion":
        """Accept an Emotion, a class index, or a case-insensitive name."""
        if isinstance(value, cls):
            return value
        if isinstance(value, int) and not isinstance(value, bool):
            if 0 <= value < len(_ORDER):
                return _ORDER[value]
            raise ValueError(f"emotion index {value} out of range")
        text = str(value).strip()
        for e in _ORDER:
            if e.value.lower() == text.lower():
                return e
        raise ValueError(f"unknown emotion label {value!r}; expected one of {[e.value for e in _ORDER]}")


_ORDER = (Emotion.ANGRY, Emotion.HAPPY, Emotion.NEUTRAL, Emotion.SAD)
EMOTION_ORDER = _ORDER
