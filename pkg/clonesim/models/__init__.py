# Scenario and report models
