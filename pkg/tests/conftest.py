import hypothesis

# one reproducible profile for the whole suite: failures replay exactly
hypothesis.settings.register_profile(
    "suite",
    derandomize=True,
    max_examples=60,
    deadline=None,
    database=None,
)
hypothesis.settings.load_profile("suite")
