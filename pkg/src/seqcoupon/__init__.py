"""Sequential coupon allocation for single-stock marketplace listings.

Submodules:
  domain      shared record types, coupon cost arithmetic, feature encoding
  simulator   synthetic marketplace with a known structural sale model
  learner     from-scratch weighted probabilistic classifiers
  uplift      two-round S-learner stack with IPW-corrected second round
  decision    propensity/cost combination algebra and the allocation rule
  evaluation  lift measurement, delay analyses, uplift curves, strategy comparison
  cli         batch commands: simulate, train, allocate, evaluate, compare
"""

__version__ = "0.1.0"
