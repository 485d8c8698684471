# Package marker for src.modes (random / exhaustive / replay)
