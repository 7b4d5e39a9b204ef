"""A composition language for serverless functions: core machine and surface compiler."""
