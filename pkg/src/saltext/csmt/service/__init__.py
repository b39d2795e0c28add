"""
Job-based prover service: the job queue and the HTTP API around a deployment.
"""
