"""
Domain services: feature plane, propagation, aggregation, flow matching,
objective, metrics, data generation, training, evaluation and transfer.
"""
