# Per-file batch execution
