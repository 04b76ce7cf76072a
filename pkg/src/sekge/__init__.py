"""Semantic-evidence analysis and SE-GNN link prediction."""
