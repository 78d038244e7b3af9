"""
LESR Engine
LLM-generated state representations and intrinsic rewards for TD3
"""
