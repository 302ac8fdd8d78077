# Scenario acceptance tests package
