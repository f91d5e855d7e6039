# Persisted experiment results
