import hypothesis

# Numerical cases vary wildly in cost (extended-precision escalation,
# quadrature); wall-clock deadlines would only add flakes.
hypothesis.settings.register_profile(
    "numerics", deadline=None, max_examples=50, derandomize=True
)
hypothesis.settings.load_profile("numerics")
