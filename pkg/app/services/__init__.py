# Services package for domain logic
