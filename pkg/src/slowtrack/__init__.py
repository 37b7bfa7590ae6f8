"""slowtrack: a small, fully self-contained visual tracker.

The tracker learns features that change slowly over time and a binary
classifier that scores whether a candidate box tightly centers the
target. Everything runs on plain numpy: synthetic sequence generation,
offline training, online tracking, benchmark-style evaluation, and a
Monte Carlo verifier for the tracker's concentration-based error bound.
"""

__version__ = "0.1.0"
