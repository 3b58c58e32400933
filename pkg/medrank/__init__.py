"""
MedRank - explainable zero-shot doctor ranking engine
"""
