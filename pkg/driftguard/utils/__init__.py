# Utility package for shared helpers (timestamps, hashing, seeded generators).
